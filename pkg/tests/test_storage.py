import numpy as np
import pytest

from rock_classifier import neural, storage
from rock_classifier.exceptions import CheckpointError


#### DATASETS ####
def test_dataset_file_is_exact(tiny_corpus, tmp_path):
    path = tmp_path / 'corpus.rds'

    storage.save_dataset(tiny_corpus, path, config_hash='abc', seed=3,
                         extra={'skipped': {'jadeite': 2}})
    dataset, header = storage.load_dataset_file(path)

    np.testing.assert_array_equal(dataset.vectors, tiny_corpus.vectors)
    np.testing.assert_array_equal(dataset.labels, tiny_corpus.labels)
    assert dataset.class_names == tiny_corpus.class_names
    assert dataset.grid == tiny_corpus.grid
    assert header['config_hash'] == 'abc'
    assert header['extra'] == {'skipped': {'jadeite': 2}}


def test_saving_twice_gives_identical_bytes(tiny_corpus, tmp_path):
    first = tmp_path / 'a.rds'
    second = tmp_path / 'b.rds'

    storage.save_dataset(tiny_corpus, first, seed=1)
    storage.save_dataset(tiny_corpus, second, seed=1)

    assert first.read_bytes() == second.read_bytes()


#### CHECKPOINTS ####
def test_checkpoint_keeps_parameters_bit_exact(trained_model, tiny_grid,
                                               tiny_corpus, tmp_path):
    path = tmp_path / 'model.rnn'

    storage.save_checkpoint(trained_model, path, tiny_grid, seed=0)
    model, header = storage.load_checkpoint(path)

    assert list(model.params) == list(trained_model.params)
    for name, tensor in trained_model.params.items():
        np.testing.assert_array_equal(model.params[name], tensor)
    assert model.config == trained_model.config
    assert model.history == trained_model.history
    assert model.best_epoch == trained_model.best_epoch
    assert header['grid'] == tiny_grid.to_dict()
    np.testing.assert_array_equal(
        neural.forward(model, tiny_corpus.vectors),
        neural.forward(trained_model, tiny_corpus.vectors))


def test_mlp_checkpoint(tiny_corpus, tiny_grid, tmp_path):
    config = neural.MlpConfig(hidden_layers=(8,), num_classes=3,
                              input_length=64)
    model = neural.new_model('mlp', config, tiny_corpus.class_names, 5)
    path = tmp_path / 'mlp.rnn'

    storage.save_checkpoint(model, path, tiny_grid)
    again, header = storage.load_checkpoint(path)

    assert again.kind == 'mlp'
    assert again.config == config
    assert header['uncertainty'] is False


def test_checkpoint_bytes_are_reproducible(trained_model, tiny_grid,
                                           tmp_path):
    storage.save_checkpoint(trained_model, tmp_path / 'a', tiny_grid)
    storage.save_checkpoint(trained_model, tmp_path / 'b', tiny_grid)

    assert (tmp_path / 'a').read_bytes() == (tmp_path / 'b').read_bytes()


#### CORRUPT FILES ####
def test_wrong_magic(tiny_corpus, tmp_path):
    path = tmp_path / 'corpus.rds'
    storage.save_dataset(tiny_corpus, path)

    with pytest.raises(CheckpointError, match='not a ROCKNN file'):
        storage.load_checkpoint(path)


def test_truncated_file(tiny_corpus, tmp_path):
    path = tmp_path / 'corpus.rds'
    storage.save_dataset(tiny_corpus, path)
    path.write_bytes(path.read_bytes()[:-8])

    with pytest.raises(CheckpointError, match='truncated'):
        storage.load_dataset_file(path)


def test_trailing_bytes(tiny_corpus, tmp_path):
    path = tmp_path / 'corpus.rds'
    storage.save_dataset(tiny_corpus, path)
    path.write_bytes(path.read_bytes() + b'\x00')

    with pytest.raises(CheckpointError, match='trailing'):
        storage.load_dataset_file(path)


def test_unsupported_version(tiny_corpus, tmp_path):
    path = tmp_path / 'corpus.rds'
    storage.save_dataset(tiny_corpus, path)
    path.write_bytes(path.read_bytes().replace(b'ROCKDS\n1\n',
                                               b'ROCKDS\n9\n', 1))

    with pytest.raises(CheckpointError, match='format version 9'):
        storage.load_dataset_file(path)


def test_missing_file(tmp_path):
    with pytest.raises(CheckpointError, match='cannot read'):
        storage.load_checkpoint(tmp_path / 'nothing')
