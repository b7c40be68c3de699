import dataclasses
import itertools

import numpy as np
import pytest

from rock_classifier import neural
from rock_classifier.exceptions import (DataError, DegenerateSplit,
                                        ShapeMismatch)
from rock_classifier.spectra import LabeledDataset, normalize
from rock_classifier.synthgen import make_synthetic_corpus


GRAD_CNN = neural.CnnConfig(conv_channels=(2, 3), kernel_size=3, pool_size=2,
                            hidden_units=5, num_classes=3, dropout_rate=0.25,
                            input_length=16)
GRAD_MLP = neural.MlpConfig(hidden_layers=(6, 4), num_classes=3,
                            dropout_rate=0.25, input_length=10)


def _loss(model, x, y, dropout, mask_seed):
    rng = np.random.default_rng(mask_seed)
    logits = neural.forward(model, x, dropout, rng)
    return neural.batch_cross_entropy(logits, y)[0]


def _relative_gradient_error(model, x, y, dropout=False, mask_seed=0,
                             eps=1e-6):
    _, grads = neural.backward(model, x, y, dropout,
                               np.random.default_rng(mask_seed))
    analytic, numeric = [], []
    for name, tensor in model.params.items():
        flat = tensor.reshape(-1)
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + eps
            plus = _loss(model, x, y, dropout, mask_seed)
            flat[i] = saved - eps
            minus = _loss(model, x, y, dropout, mask_seed)
            flat[i] = saved
            numeric.append((plus - minus) / (2 * eps))
            analytic.append(grads[name].reshape(-1)[i])

    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    return np.linalg.norm(analytic - numeric) / max(
        np.linalg.norm(analytic) + np.linalg.norm(numeric), 1e-12)


#### FORWARD ####
def test_zero_parameters_give_zero_logits(tiny_corpus, tiny_cnn_config):
    model = neural.new_model('cnn', tiny_cnn_config,
                             tiny_corpus.class_names, 0)
    model.params = {k: np.zeros_like(v) for k, v in model.params.items()}

    logits = neural.forward(model, tiny_corpus.vectors[:4])

    np.testing.assert_array_equal(logits, np.zeros((4, 3)))


def test_zero_dropout_rate_ignores_dropout_flag(tiny_corpus,
                                                tiny_cnn_config):
    config = dataclasses.replace(tiny_cnn_config, dropout_rate=0.0)
    model = neural.new_model('cnn', config, tiny_corpus.class_names, 0)
    x = tiny_corpus.vectors[:4]

    np.testing.assert_array_equal(
        neural.forward(model, x, True, np.random.default_rng(0)),
        neural.forward(model, x))


def test_active_dropout_needs_rng(tiny_corpus, tiny_cnn_config):
    model = neural.new_model('cnn', tiny_cnn_config,
                             tiny_corpus.class_names, 0)

    with pytest.raises(DataError, match='seeded rng'):
        neural.forward(model, tiny_corpus.vectors[0], dropout_active=True)


#### GRADIENTS ####
@pytest.mark.parametrize('seed', range(10))
def test_cnn_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    model = neural.new_model('cnn', GRAD_CNN, ['a', 'b', 'c'], seed)
    x = rng.random((3, 16))
    y = rng.integers(0, 3, size=3)

    assert _relative_gradient_error(model, x, y) <= 1e-4


@pytest.mark.parametrize('seed', range(10))
def test_cnn_gradients_with_dropout_masks(seed):
    rng = np.random.default_rng(seed)
    model = neural.new_model('cnn', GRAD_CNN, ['a', 'b', 'c'], seed)
    x = rng.random((3, 16))
    y = rng.integers(0, 3, size=3)

    error = _relative_gradient_error(model, x, y, dropout=True,
                                     mask_seed=seed + 100)

    assert error <= 1e-4


@pytest.mark.parametrize('seed', range(10))
def test_mlp_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    model = neural.new_model('mlp', GRAD_MLP, ['a', 'b', 'c'], seed)
    x = rng.random((4, 10))
    y = rng.integers(0, 3, size=4)

    assert _relative_gradient_error(model, x, y) <= 1e-4
    assert _relative_gradient_error(model, x, y, dropout=True,
                                    mask_seed=seed) <= 1e-4


def test_gradients_cover_every_parameter():
    model = neural.new_model('cnn', GRAD_CNN, ['a', 'b', 'c'], 0)

    _, grads = neural.backward(model, np.ones((2, 16)), [0, 1])

    assert list(grads) == list(model.params)
    assert all(grads[k].shape == v.shape for k, v in model.params.items())


def test_zero_input_gives_zero_conv_weight_gradient():
    model = neural.new_model('cnn', GRAD_CNN, ['a', 'b', 'c'], 0)
    # Positive parameters keep every ReLU open
    model.params = {k: np.abs(v) + 0.01 for k, v in model.params.items()}

    _, grads = neural.backward(model, np.zeros((2, 16)), [0, 1])

    np.testing.assert_array_equal(grads['conv1_w'], 0.0)
    assert np.any(grads['conv1_b'] != 0)


#### LOSS ####
def test_cross_entropy_uniform_logits():
    loss, grad = neural.cross_entropy(np.zeros(4), 2)

    assert loss == pytest.approx(np.log(4))
    np.testing.assert_allclose(grad, [0.25, 0.25, -0.75, 0.25])


def test_cross_entropy_is_stable_for_large_logits():
    loss, grad = neural.cross_entropy(np.array([1000.0, 0.0]), 1)

    assert loss == pytest.approx(1000.0)
    assert np.all(np.isfinite(grad))


def test_softmax_rows_sum_to_one(rng):
    probs = neural.softmax(rng.normal(size=(5, 7)) * 50)

    np.testing.assert_allclose(probs.sum(axis=1), np.ones(5))


#### OPTIMISER ####
def test_first_adam_step_moves_by_learning_rate():
    config = neural.TrainConfig(learning_rate=0.1)
    params = {'w': np.array([1.0, -2.0])}
    grads = {'w': np.array([0.5, -3.0])}

    new, state = neural.adam_step(params, grads, neural.adam_init(params), 1,
                                  config)

    np.testing.assert_allclose(new['w'], [0.9, -1.9], atol=1e-6)
    np.testing.assert_allclose(state['m']['w'], [0.05, -0.3])
    np.testing.assert_array_equal(params['w'], [1.0, -2.0])


def test_zero_gradient_leaves_parameters(rng):
    params = {'w': rng.normal(size=4)}
    grads = {'w': np.zeros(4)}

    new, _ = neural.adam_step(params, grads, neural.adam_init(params), 1,
                              neural.TrainConfig())

    np.testing.assert_array_equal(new['w'], params['w'])


def test_constant_gradient_moves_by_learning_rate():
    config = neural.TrainConfig(learning_rate=0.001)
    params = {'w': np.array([0.0, 1.0])}
    grads = {'w': np.array([2.0, -0.5])}
    state = neural.adam_init(params)

    for t in range(1, 6):
        new, state = neural.adam_step(params, grads, state, t, config)
        np.testing.assert_allclose(params['w'] - new['w'],
                                   [0.001, -0.001], rtol=1e-6)
        params = new


def test_adam_rejects_mismatched_gradient():
    params = {'w': np.zeros(3)}

    with pytest.raises(ShapeMismatch):
        neural.adam_step(params, {'w': np.zeros(2)},
                         neural.adam_init(params), 1, neural.TrainConfig())


#### EARLY STOPPING ####
def test_early_stopping_requires_strict_improvement():
    stopper = neural.EarlyStopping(patience=2)
    params = {'w': np.zeros(1)}

    assert not stopper.update(1, 1.0, params)
    assert not stopper.update(2, 1.0, params)
    assert stopper.update(3, 1.0, params)
    assert stopper.best_epoch == 1


def test_zero_learning_rate_stops_after_patience(tiny_corpus,
                                                 tiny_cnn_config):
    config = neural.TrainConfig(learning_rate=0.0, batch_size=16,
                                patience=20, seed=4)
    initial = neural.new_model('cnn', tiny_cnn_config,
                               tiny_corpus.class_names, 4).params

    model = neural.train(tiny_corpus, tiny_cnn_config, config)

    assert len(model.history) == 21
    assert model.best_epoch == 1
    for name, tensor in initial.items():
        np.testing.assert_array_equal(model.params[name], tensor)


def test_worsening_validation_stops_with_first_epoch(tiny_corpus,
                                                     tiny_cnn_config,
                                                     monkeypatch):
    config = neural.TrainConfig(learning_rate=0.01, batch_size=16,
                                patience=20, seed=4)
    first_epoch = neural.train(tiny_corpus, tiny_cnn_config,
                               dataclasses.replace(config, max_epochs=1))

    losses = itertools.count()
    monkeypatch.setattr(neural, 'evaluate_loss',
                        lambda *args, **kwargs: (1.0 + next(losses), 0.0))
    model = neural.train(tiny_corpus, tiny_cnn_config, config)

    assert len(model.history) == 21
    assert [h['val_loss'] for h in model.history[:3]] == [1.0, 2.0, 3.0]
    assert model.best_epoch == 1
    for name, tensor in first_epoch.params.items():
        np.testing.assert_array_equal(model.params[name], tensor)


#### TRAINING ####
def test_trained_cnn_separates_tiny_corpus(trained_model, tiny_corpus):
    assert neural.accuracy(trained_model, tiny_corpus) >= 0.9
    assert 1 <= trained_model.best_epoch <= len(trained_model.history)


def test_training_is_deterministic(tiny_corpus, tiny_cnn_config):
    config = neural.TrainConfig(learning_rate=0.01, batch_size=8,
                                max_epochs=5, seed=2)

    first = neural.train(tiny_corpus, tiny_cnn_config, config)
    second = neural.train(tiny_corpus, tiny_cnn_config, config)

    for name in first.params:
        np.testing.assert_array_equal(first.params[name],
                                      second.params[name])


def test_mlp_baseline_trains(tiny_corpus, tiny_train_config):
    model = neural.train_mlp(tiny_corpus, (16,), tiny_train_config)

    assert model.kind == 'mlp'
    assert neural.accuracy(model, tiny_corpus) >= 0.9


def test_small_corpus_is_memorised(tiny_specs, tiny_grid, tiny_cnn_config):
    corpus = make_synthetic_corpus(tiny_specs, 4, tiny_grid, 0.0, seed=0)
    config = neural.TrainConfig(learning_rate=0.01, batch_size=4,
                                max_epochs=300, patience=300, seed=0)

    model = neural.train(corpus, tiny_cnn_config, config,
                         validation=(corpus.vectors, corpus.labels))
    loss, accuracy = neural.evaluate_loss(model, corpus.vectors,
                                          corpus.labels)

    assert loss < 0.01
    assert accuracy == 1.0


def test_single_class_dataset_is_degenerate(
tiny_grid, tiny_cnn_config):
    dataset = LabeledDataset(np.zeros((10, 64)), [0] * 10,
                             ['a', 'b', 'c'], tiny_grid)

    with pytest.raises(DegenerateSplit):
        neural.train(dataset, tiny_cnn_config, neural.TrainConfig())


def test_class_count_must_match_outputs(tiny_corpus, tiny_cnn_config):
    config = dataclasses.replace(tiny_cnn_config, num_classes=4)

    with pytest.raises(ShapeMismatch):
        neural.train(tiny_corpus, config, neural.TrainConfig(max_epochs=1))


def test_cnn_config_rejects_short_input():
    with pytest.raises(DataError):
        neural.CnnConfig(input_length=8)


#### INFERENCE ####
def test_predict_single_and_batch(trained_model, tiny_corpus):
    single = neural.predict(trained_model, tiny_corpus.vectors[0])
    batch = neural.predict(trained_model, tiny_corpus.vectors[:1])

    assert isinstance(single, neural.Prediction)
    assert isinstance(batch, list) and len(batch) == 1
    assert single.label == batch[0].label
    np.testing.assert_array_equal(single.variance, np.zeros(3))


def test_predict_rejects_wrong_length(trained_model):
    with pytest.raises(ShapeMismatch):
        neural.predict(trained_model, np.zeros(63))


def test_mc_predict_is_reproducible(trained_model, tiny_corpus):
    config = neural.TrainConfig(mc_passes=10, seed=3)
    x = tiny_corpus.vectors[5]

    first = neural.mc_predict(trained_model, x, config, stream=2)
    second = neural.mc_predict(trained_model, x, config, stream=2)

    np.testing.assert_array_equal(first.mean_probs, second.mean_probs)
    assert first.mean_probs.sum() == pytest.approx(1.0)
    assert np.all(first.variance >= 0)


def test_mc_predict_without_dropout_has_zero_variance(tiny_corpus,
                                                      tiny_cnn_config):
    config = dataclasses.replace(tiny_cnn_config, dropout_rate=0.0)
    model = neural.new_model('cnn', config, tiny_corpus.class_names, 0)

    prediction = neural.mc_predict(model, tiny_corpus.vectors[0],
                                   neural.TrainConfig(unknown_threshold=0.0))

    np.testing.assert_array_equal(prediction.variance, np.zeros(3))
    assert prediction.label == \
        neural.predict(model, tiny_corpus.vectors[0]).label


def test_low_confidence_is_unknown(tiny_corpus, tiny_cnn_config):
    model = neural.new_model('cnn', tiny_cnn_config,
                             tiny_corpus.class_names, 0)
    config = neural.TrainConfig(mc_passes=5, unknown_threshold=0.99)

    prediction = neural.mc_predict(model, tiny_corpus.vectors[0], config)

    assert prediction.label == neural.UNKNOWN
    assert neural.label_name(model, prediction.label) == 'UNKNOWN'


def test_flat_spectrum_is_less_certain(trained_model, tiny_corpus):
    config = neural.TrainConfig(mc_passes=30, seed=0)
    flat = normalize(np.ones(tiny_corpus.vectors.shape[1]))

    seen = neural.mc_predict_batch(trained_model, tiny_corpus.vectors,
                                   config)
    unseen = neural.mc_predict(trained_model, flat, config)

    assert unseen.max_mean_prob < np.mean([p.max_mean_prob for p in seen])


def test_standard_error_shrinks_with_passes(trained_model, tiny_corpus):
    x = tiny_corpus.vectors[0]

    def standard_error(passes):
        config = neural.TrainConfig(mc_passes=passes, seed=5)
        prediction = neural.mc_predict(trained_model, x, config)
        assert prediction.mean_probs.sum() == pytest.approx(1.0, abs=1e-6)
        return np.sqrt(prediction.variance.sum() / passes)

    assert standard_error(400) < standard_error(4)


def test_mc_batch_uses_one_stream_per_row(
trained_model, tiny_corpus):
    config = neural.TrainConfig(mc_passes=4, seed=1)
    rows = tiny_corpus.vectors[:3]

    batch = neural.mc_predict_batch(trained_model, rows, config)

    for i, row in enumerate(rows):
        alone = neural.mc_predict(trained_model, row, config, stream=i)
        np.testing.assert_array_equal(batch[i].mean_probs, alone.mean_probs)
