#### IMPORTS ####
import json
import logging
import os

from dataclasses import dataclass, field

from joblib import Parallel, delayed

from rock_classifier import knowledge, neural
from rock_classifier.exceptions import (DataError, GridMismatch,
                                        TooFewPoints)
from rock_classifier.spectra import (Spectrum, list_spectrum_files,
                                     preprocess, read_spectrum_file)
from rock_classifier.synthgen import synthesize_spectra


logger = logging.getLogger(__name__)

MODES = ('base', 'uncertainty-aware', 'oracle-labels')
RECORD_VERSION = 1


#### DOMAIN TYPES ####
@dataclass
class SampleMeasurements:
    '''
    Spectra from the measurement points of one rock sample.

    A point whose file could not be read is held as None; it is classified
    as UNKNOWN.
    '''
    spectra: list
    sample_id: str = ''
    failures: list = field(default_factory=list)

    def __len__(self):
        return len(self.spectra)

    @property
    def valid_count(self):
        return sum(s is not None for s in self.spectra)


@dataclass
class SampleLabels:
    '''Species names of a sample whose points were labelled elsewhere.'''
    labels: list
    sample_id: str = ''


@dataclass
class RockResult:
    '''Per-point mineral labels and the rock decision for one sample.'''
    sample_id: str
    predictions: list
    mineral_labels: list
    classification: knowledge.RockClassification
    mode: str

    @property
    def label(self):
        return self.classification.label

    def to_record(self):
        '''JSON-serialisable audit record of the decision.'''
        record = {'format_version': RECORD_VERSION,
                  'sample_id': self.sample_id, 'mode': self.mode,
                  'mineral_labels': list(self.mineral_labels),
                  'label': self.label}
        record.update(self.classification.to_dict())
        record['point_confidence'] = [
            None if p is None else p.max_mean_prob for p in self.predictions]
        record['point_variance'] = [
            None if p is None else float(p.variance.max())
            for p in self.predictions]

        return record


#### SAMPLE INPUT ####
def load_sample(directory, sample_id=None):
    '''Reads every spectrum file of a sample directory in name order.'''
    spectra = []
    failures = []
    for filepath in list_spectrum_files(directory):
        try:
            spectra.append(read_spectrum_file(filepath)[1])
        except (DataError, UnicodeDecodeError) as e:
            logger.warning('Point %s unreadable, counted as UNKNOWN: %s',
                           os.path.basename(filepath), e)
            spectra.append(None)
            failures.append((os.path.basename(filepath), str(e)))

    return SampleMeasurements(spectra,
                              sample_id or os.path.basename(
                                  os.path.normpath(directory)),
                              failures)


def synthesize_sample(labels, specs, grid, noise_sigma, seed, sample_id=''):
    '''
    Builds a sample whose points are synthetic spectra of the given species.

    Species without a peak table give noise-only points.
    '''
    vectors = synthesize_spectra(labels, specs, grid, noise_sigma, seed)
    axis = grid.axis()

    return SampleMeasurements([Spectrum(axis, v) for v in vectors],
                              sample_id)


#### CLASSIFICATION ####
def classify_labels(labels, kb, sample_id=''):
    '''Rock decision straight from per-point species names.'''
    classification = knowledge.classify(labels, kb)

    return RockResult(sample_id, [None] * len(labels), list(labels),
                      classification, 'oracle-labels')


def classify_sample(sample, model, kb, mode, grid, train_config,
                    min_points=10):
    '''
    Classifies a rock sample from its per-point spectra.

    Each spectrum is resampled and normalized, labelled by the network
    (one deterministic pass in base mode, Monte Carlo dropout in
    uncertainty-aware mode) and the species names go to the rule engine.

    Parameters:
    -----------
    sample: SampleMeasurements
    model: NetworkModel
    kb: KnowledgeBase
    mode: str
        'base' or 'uncertainty-aware'.
    grid: GridSpec
        Grid the model was trained on.
    train_config: TrainConfig
        Monte Carlo passes, seed and unknown threshold.
    min_points: int, optional (default=10)

    Returns:
    --------
    RockResult
    '''
    if mode not in ('base', 'uncertainty-aware'):
        raise DataError(f'unknown mode {mode!r} for spectral classification')
    if sample.valid_count < min_points:
        raise TooFewPoints(sample.valid_count, min_points)
    if model.config.input_length != grid.num_points:
        raise GridMismatch(f'model expects {model.config.input_length} '
                           f'points, grid has {grid.num_points}')
    if mode == 'uncertainty-aware' and not model.uncertainty:
        logger.warning('%s: model was trained without dropout; Monte Carlo '
                       'passes still drop units at rate %s', sample.sample_id,
                       model.config.dropout_rate)

    predictions = []
    labels = []
    for index, spectrum in enumerate(sample.spectra):
        if spectrum is None:
            predictions.append(None)
            labels.append(neural.UNKNOWN_NAME)
            continue

        vector = preprocess(spectrum, grid)
        if mode == 'base':
            prediction = neural.predict(model, vector)
        else:
            prediction = neural.mc_predict(model, vector, train_config,
                                           stream=index)
        predictions.append(prediction)
        labels.append(neural.label_name(model, prediction.label))

    classification = knowledge.classify(labels, kb)
    logger.debug('%s: %s', sample.sample_id, classification.label)

    return RockResult(sample.sample_id, predictions, labels, classification,
                      mode)


def _classify_one(sample, kb, model, mode, grid, train_config, min_points):
    sample_id = getattr(sample, 'sample_id', '')
    try:
        if mode == 'oracle-labels':
            return classify_labels(sample.labels, kb, sample_id), None
        return classify_sample(sample, model, kb, mode, grid, train_config,
                               min_points), None
    except DataError as e:
        return None, {'sample_id': sample_id, 'error': str(e)}


def classify_batch(samples, kb, model=None, mode='base', grid=None,
                   train_config=None, min_points=10, n_jobs=1):
    '''
    Classifies many samples, isolating failures.

    A sample that raises a DataError yields an error record instead of a
    result; the rest of the batch carries on.

    Returns:
    --------
    results: list of RockResult
    errors: list of dict
        sample_id and error message per failed sample.
    '''
    if mode not in MODES:
        raise DataError(f'unknown mode {mode!r}')

    outcomes = Parallel(n_jobs=n_jobs)(
        delayed(_classify_one)(sample, kb, model, mode, grid, train_config,
                               min_points) for sample in samples)

    results = [r for r, _ in outcomes if r is not None]
    errors = [e for _, e in outcomes if e is not None]
    for error in errors:
        logger.warning('Sample %s failed: %s', error['sample_id'],
                       error['error'])

    return results, errors


#### RECORDS ####
def write_records(results, errors, filepath, config_hash='', seed=0):
    '''Writes results then errors as JSON lines.'''
    with open(filepath, 'w', encoding='utf-8') as f:
        for result in results:
            record = result.to_record()
            record.update(config_hash=config_hash, seed=seed)
            f.write(json.dumps(record, sort_keys=True) + '\n')
        for error in errors:
            record = dict(error, format_version=RECORD_VERSION,
                          config_hash=config_hash, seed=seed)
            f.write(json.dumps(record, sort_keys=True) + '\n')


def read_records(filepath):
    '''Reads a JSON-lines record stream written by write_records.'''
    records = []
    with open(filepath, encoding='utf-8') as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as e:
                raise DataError(f'{filepath}: invalid record on line '
                                f'{line_no}') from e

    return records


def predicted_labels(results):
    '''Rock labels in result order, for confusion matrices.'''
    return [r.label for r in results]

