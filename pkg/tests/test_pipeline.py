import logging

import numpy as np
import pytest

from rock_classifier import neural, pipeline
from rock_classifier.exceptions import DataError, GridMismatch, TooFewPoints
from rock_classifier.spectra import GridSpec, Spectrum


def _calcite_sample(tiny_specs, tiny_grid, count=10, sample_id='lime'):
    return pipeline.synthesize_sample(['Calcite'] * count, tiny_specs,
                                      tiny_grid, 0.0, seed=0,
                                      sample_id=sample_id)


#### ORACLE LABELS ####
def test_classify_labels_pure_calcite(kb):
    result = pipeline.classify_labels(['Calcite'] * 10, kb, 'ex25')

    assert result.label == 'Limestone'
    assert result.mode == 'oracle-labels'
    assert result.predictions == [None] * 10


def test_classify_labels_glaucophane_sample_is_other(kb):
    labels = ['Orthoclase', 'Glaucophane', 'Anorthite', 'Albite',
              'Glaucophane', 'Phlogopite', 'Quartz', 'Quartz', 'Glaucophane',
              'Glaucophane']

    assert pipeline.classify_labels(labels, kb).label == 'other'


def test_oracle_batch_matches_direct_classification(kb):
    labels = ['Jadeite', 'Quartz', 'Quartz', 'Jadeite', 'Orthoclase',
              'Jadeite', 'Anorthite', 'Quartz', 'Annite', 'Quartz']

    results, errors = pipeline.classify_batch(
        [pipeline.SampleLabels(labels, 's3')], kb, mode='oracle-labels')

    assert errors == []
    direct = pipeline.classify_labels(labels, kb)
    assert results[0].classification.weights == \
        direct.classification.weights
    assert results[0].label == direct.label


#### SPECTRAL CLASSIFICATION ####
def test_clean_calcite_spectra_classify_as_limestone(trained_model, kb,
                                                     tiny_specs, tiny_grid):
    sample = _calcite_sample(tiny_specs, tiny_grid)

    result = pipeline.classify_sample(sample, trained_model, kb, 'base',
                                      tiny_grid, neural.TrainConfig())

    assert result.mineral_labels == ['calcite'] * 10
    assert result.label == 'Limestone'


def test_uncertainty_mode_uses_point_streams(trained_model, kb, tiny_specs,
                                             tiny_grid):
    sample = _calcite_sample(tiny_specs, tiny_grid)
    config = neural.TrainConfig(mc_passes=5, seed=2)

    first = pipeline.classify_sample(sample, trained_model, kb,
                                     'uncertainty-aware', tiny_grid, config)
    second = pipeline.classify_sample(sample, trained_model, kb,
                                      'uncertainty-aware', tiny_grid, config)

    assert first.mineral_labels == second.mineral_labels
    for a, b in zip(first.predictions, second.predictions):
        np.testing.assert_array_equal(a.mean_probs, b.mean_probs)


def test_uncertainty_mode_on_base_model_warns(trained_model, kb, tiny_specs,
                                              tiny_grid, caplog):
    sample = _calcite_sample(tiny_specs, tiny_grid)

    with caplog.at_level(logging.WARNING, logger='rock_classifier.pipeline'):
        pipeline.classify_sample(sample, trained_model, kb,
                                 'uncertainty-aware', tiny_grid,
                                 neural.TrainConfig(mc_passes=2))

    assert 'trained without dropout' in caplog.text


def test_too_few_points(trained_model, kb, tiny_specs, tiny_grid):
    sample = _calcite_sample(tiny_specs, tiny_grid, count=9)

    with pytest.raises(TooFewPoints) as info:
        pipeline.classify_sample(sample, trained_model, kb, 'base',
                                 tiny_grid, neural.TrainConfig())

    assert str(info.value) == 'TooFewPoints (9 < 10)'


def test_unreadable_points_count_as_unknown(trained_model, kb, tiny_specs,
                                            tiny_grid):
    sample = _calcite_sample(tiny_specs, tiny_grid, count=11)
    sample.spectra[4] = None

    result = pipeline.classify_sample(sample, trained_model, kb, 'base',
                                      tiny_grid, neural.TrainConfig())

    assert result.mineral_labels[4] == 'UNKNOWN'
    assert result.classification.proportions['calcite'] == \
        pytest.approx(10 / 11)


def test_grid_mismatch(trained_model, kb, tiny_specs):
    grid = GridSpec(150.0, 1500.0, 128)
    sample = pipeline.synthesize_sample(['Calcite'] * 10, tiny_specs, grid,
                                        0.0, seed=0)

    with pytest.raises(GridMismatch):
        pipeline.classify_sample(sample, trained_model, kb, 'base', grid,
                                 neural.TrainConfig())


def test_oracle_mode_needs_labels(trained_model, kb, tiny_specs, tiny_grid):
    with pytest.raises(DataError):
        pipeline.classify_sample(_calcite_sample(tiny_specs, tiny_grid),
                                 trained_model, kb, 'oracle-labels',
                                 tiny_grid, neural.TrainConfig())


#### BATCHES ####
def test_batch_isolates_failing_sample(trained_model, kb, tiny_specs,
                                       tiny_grid):
    samples = [_calcite_sample(tiny_specs, tiny_grid, sample_id='ok'),
               _calcite_sample(tiny_specs, tiny_grid, count=3,
                               sample_id='short')]

    results, errors = pipeline.classify_batch(
        samples, kb, trained_model, 'base', tiny_grid, neural.TrainConfig())

    assert [r.sample_id for r in results] == ['ok']
    assert errors == [{'sample_id': 'short',
                       'error': 'TooFewPoints (3 < 10)'}]
    assert pipeline.predicted_labels(results) == ['Limestone']


def test_batch_rejects_unknown_mode(kb):
    with pytest.raises(DataError):
        pipeline.classify_batch([], kb, mode='fast')


#### SAMPLE FILES ####
def test_load_sample_keeps_failed_points(tmp_path):
    (tmp_path / 'p1.txt').write_text('##NAMES=Calcite\n200, 1\n300, 2\n')
    (tmp_path / 'p2.txt').write_text('##NAMES=Calcite\n200, oops\n')

    sample = pipeline.load_sample(tmp_path)

    assert sample.sample_id == tmp_path.name
    assert len(sample) == 2
    assert sample.valid_count == 1
    assert sample.spectra[1] is None
    assert sample.failures[0][0] == 'p2.txt'


#### RECORDS ####
def test_records_round_trip(kb, tmp_path):
    results = [pipeline.classify_labels(['Calcite'] * 10, kb, 'a')]
    errors = [{'sample_id': 'b', 'error': 'TooFewPoints (2 < 10)'}]
    path = tmp_path / 'records.jsonl'

    pipeline.write_records(results, errors, path, config_hash='abc', seed=7)
    records = pipeline.read_records(path)

    assert [r['sample_id'] for r in records] == ['a', 'b']
    assert records[0]['label'] == 'Limestone'
    assert records[0]['margin'] == pytest.approx(0.8)
    assert records[0]['point_confidence'] == [None] * 10
    assert records[1]['config_hash'] == 'abc' and records[1]['seed'] == 7


def test_bad_record_line(tmp_path):
    path = tmp_path / 'records.jsonl'
    path.write_text('{"sample_id": "a"}\nnot json\n')

    with pytest.raises(DataError, match='line 2'):
        pipeline.read_records(path)


def test_single_point_spectrum_sample(trained_model, kb, tiny_grid):
    sample = pipeline.SampleMeasurements([Spectrum([500.0], [1.0])] * 10)

    result = pipeline.classify_sample(sample, trained_model, kb, 'base',
                                      tiny_grid, neural.TrainConfig())

    assert len(result.mineral_labels) == 10
