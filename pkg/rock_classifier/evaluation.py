#### IMPORTS ####
import dataclasses
import hashlib
import logging
import os

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from joblib import Parallel, delayed
from scipy import stats
from sklearn.metrics import confusion_matrix
from sklearn.model_selection import StratifiedKFold

from rock_classifier import knowledge, neural
from rock_classifier.config import get_filepath
from rock_classifier.exceptions import (ClassTooSmall, DataError,
                                        FixtureCorrupt, FixtureMissing,
                                        LengthMismatch)
from rock_classifier.pipeline import classify_sample, synthesize_sample
from rock_classifier.synthgen import expand_dataset


logger = logging.getLogger(__name__)

GOLDEN_FILE = 'data/golden_cases.csv'
GOLDEN_CHECKSUM_FILE = 'data/golden_cases.sha256'
GOLDEN_LABELS_PER_CASE = 10
MODEL_KINDS = ('cnn', 'cnn-uncertainty', 'mlp')
REJECTION_PREFIX = 'Not a '


#### DOMAIN TYPES ####
@dataclass
class ConfusionMatrix:
    '''Counts of (true class, predicted class); rows are true classes.'''
    class_names: list
    counts: np.ndarray

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        n = len(self.class_names)
        if self.counts.shape != (n, n) or np.any(self.counts < 0):
            raise DataError('confusion counts must be a non-negative '
                            f'{n} x {n} matrix')

    @property
    def total(self):
        return int(self.counts.sum())

    def to_frame(self):
        return pd.DataFrame(self.counts, index=self.class_names,
                            columns=self.class_names)


@dataclass
class MetricsReport:
    '''
    Accuracy plus per-class precision, recall and F1.

    A value that cannot be computed (no predictions, or no true samples,
    of a class) is None rather than 0.
    '''
    accuracy: float
    precision: dict
    recall: dict
    f1: dict
    support: dict
    macro_precision: float = None
    macro_recall: float = None
    macro_f1: float = None

    def to_frame(self):
        '''One row per class: precision, recall, f1, support.'''
        return pd.DataFrame({'precision': self.precision,
                             'recall': self.recall, 'f1': self.f1,
                             'support': self.support})

    def to_dict(self):
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class GoldenCase:
    '''Expert-designed composition with its expected rock decision.'''
    case_id: int
    labels: tuple
    appendix_result: str
    oracle_expected: str


@dataclass
class CrossValidationResult:
    '''Per-fold accuracies of one model kind and their summary.'''
    model_kind: str
    folds: pd.DataFrame
    mean_accuracy: float
    stderr: float
    confusion: ConfusionMatrix = None

    def to_dict(self):
        return {'model_kind': self.model_kind,
                'mean_accuracy': self.mean_accuracy, 'stderr': self.stderr,
                'folds': self.folds.astype(object)
                .where(self.folds.notna(), None).to_dict(orient='records'),
                'confusion': None if self.confusion is None else {
                    'class_names': self.confusion.class_names,
                    'counts': self.confusion.counts.tolist()}}


@dataclass
class GoldenSuiteReport:
    '''Per-case outcomes of the golden suite and their rock confusion.'''
    cases: pd.DataFrame
    oracle_matches: int
    appendix_agreements: int
    confusion: ConfusionMatrix
    metrics: MetricsReport
    divergent: list = field(default_factory=list)

    @property
    def total(self):
        return len(self.cases)

    def summary(self):
        return (f'oracle match {self.oracle_matches}/{self.total}, appendix '
                f'agreement {self.appendix_agreements}/{self.total}')


#### SPLITS ####
def kfold_split(dataset, k, seed):
    '''
    Stratified k-fold partitions of a dataset.

    Returns:
    --------
    list of (train_indices, test_indices)
    '''
    if k < 2:
        raise DataError('k must be >= 2')
    counts = np.bincount(dataset.labels, minlength=len(dataset.class_names))
    for name, count in zip(dataset.class_names, counts):
        if 0 < count < k:
            raise ClassTooSmall(f'class {name} has {count} samples, fewer '
                                f'than k={k}')

    splitter = StratifiedKFold(n_splits=k, shuffle=True, random_state=seed)

    return [(np.sort(train), np.sort(test)) for train, test in
            splitter.split(np.zeros(len(dataset)), dataset.labels)]


#### CONFUSION AND METRICS ####
def confusion(true_labels, predicted_labels, class_names):
    '''
    Confusion matrix over class_names.

    Labels outside class_names (such as ``other`` or ``UNKNOWN``) get their
    own row and column after the named classes.
    '''
    true_labels = [str(t) for t in true_labels]
    predicted_labels = [str(p) for p in predicted_labels]
    if len(true_labels) != len(predicted_labels):
        raise LengthMismatch(f'{len(true_labels)} true labels, '
                             f'{len(predicted_labels)} predicted')

    names = [str(n) for n in class_names]
    extra = sorted(set(true_labels + predicted_labels) - set(names))
    names += extra

    if not true_labels:
        return ConfusionMatrix(names, np.zeros((len(names), len(names))))

    counts = confusion_matrix(true_labels, predicted_labels, labels=names)

    return ConfusionMatrix(names, counts)


def _ratio(numerator, denominator):
    return None if denominator == 0 else numerator / denominator


def f1_from(precision, recall):
    '''Harmonic mean of precision and recall; None if either is None.'''
    if precision is None or recall is None:
        return None
    if precision + recall == 0:
        return 0.0

    return 2 * precision * recall / (precision + recall)


def _mean_defined(values):
    defined = [v for v in values if v is not None]
    return float(np.mean(defined)) if defined else None


def metrics(cm):
    '''
    Accuracy, precision, recall and F1 from a confusion matrix.

    Parameters:
    -----------
    cm: ConfusionMatrix

    Returns:
    --------
    MetricsReport
    '''
    counts = cm.counts
    tp = np.diag(counts)
    predicted = counts.sum(axis=0)
    actual = counts.sum(axis=1)

    precision = {}
    recall = {}
    f1 = {}
    support = {}
    for i, name in enumerate(cm.class_names):
        precision[name] = _ratio(int(tp[i]), int(predicted[i]))
        recall[name] = _ratio(int(tp[i]), int(actual[i]))
        f1[name] = f1_from(precision[name], recall[name])
        support[name] = int(actual[i])

    return MetricsReport(
        accuracy=_ratio(int(tp.sum()), cm.total),
        precision=precision, recall=recall, f1=f1, support=support,
        macro_precision=_mean_defined(precision.values()),
        macro_recall=_mean_defined(recall.values()),
        macro_f1=_mean_defined(f1.values()))


def format_percent(value):
    return 'undefined' if value is None else f'{100 * value:.1f}%'


#### CROSS-VALIDATION ####
def _fit_fold(train_set, model_kind, config, fold_seed):
    train_config = dataclasses.replace(config.train, seed=fold_seed)
    if model_kind == 'mlp':
        model = neural.train_mlp(train_set, config.mlp.hidden_layers,
                                 train_config, config.mlp.dropout_rate)
    else:
        cnn_config = dataclasses.replace(
            config.cnn, uncertainty=model_kind == 'cnn-uncertainty')
        model = neural.train(train_set, cnn_config, train_config)

    return model, train_config


def _run_fold(dataset, fold, train_idx, test_idx, model_kind, config, seed,
              augment):
    record = {'fold': fold, 'train_size': len(train_idx),
              'test_size': len(test_idx), 'accuracy': None,
              'best_epoch': None, 'error': ''}
    try:
        fold_seed = seed * 1000 + fold
        train_set = dataset.subset(train_idx)
        # Synthetic rows only ever join the training side of a fold
        if augment is not None:
            train_set, _ = expand_dataset(
                train_set, dataclasses.replace(augment, seed=fold_seed))
            record['train_size'] = len(train_set)

        model, train_config = _fit_fold(train_set, model_kind, config,
                                        fold_seed)
        test_set = dataset.subset(test_idx)
        # UNKNOWN predictions count as errors
        if model_kind == 'cnn-uncertainty':
            predictions = neural.mc_predict_batch(model, test_set.vectors,
                                                  train_config)
        else:
            predictions = neural.predict(model, test_set.vectors)
        predicted = [neural.label_name(model, p.label) for p in predictions]
        truth = [dataset.class_names[i] for i in test_set.labels]

        record['accuracy'] = float(np.mean(
            np.asarray(predicted) == np.asarray(truth)))
        record['best_epoch'] = model.best_epoch
        logger.info('%s fold %d accuracy %.4f', model_kind, fold,
                    record['accuracy'])
        return record, truth, predicted
    except DataError as e:
        logger.warning('%s fold %d failed: %s', model_kind, fold, e)
        record['error'] = str(e)
        return record, [], []


def cross_validate(dataset, model_kind, config, k=5, seed=None,
                   augment=None, n_jobs=1):
    '''
    Stratified k-fold cross-validation of one model kind.

    Parameters:
    -----------
    dataset: LabeledDataset
    model_kind: str
        'cnn', 'cnn-uncertainty' or 'mlp'.
    config: RunConfig
        Network and training settings.
    k: int, optional (default=5)
    seed: int, optional (default=None)
        Split and training seed; config.seed when not given.
    augment: AugmentConfig, optional (default=None)
        Expands each training fold; test folds stay original.
    n_jobs: int, optional (default=1)
        Folds trained in parallel.

    Returns:
    --------
    CrossValidationResult
    '''
    if model_kind not in MODEL_KINDS:
        raise DataError(f'unknown model kind {model_kind!r}')
    seed = config.seed if seed is None else seed

    splits = kfold_split(dataset, k, seed)
    # Each fold reseeds from seed * 1000 + fold, so n_jobs does not
    # change the result
    outcomes = Parallel(n_jobs=n_jobs)(
        delayed(_run_fold)(dataset, fold, train_idx, test_idx, model_kind,
                           config, seed, augment)
        for fold, (train_idx, test_idx) in enumerate(splits))

    folds = pd.DataFrame([record for record, _, _ in outcomes],
                         columns=['fold', 'train_size', 'test_size',
                                  'accuracy', 'best_epoch', 'error'])
    # Pool predictions of all folds into one confusion matrix
    truth = [t for _, fold_truth, _ in outcomes for t in fold_truth]
    predicted = [p for _, _, fold_pred in outcomes for p in fold_pred]

    # Failed folds are reported but left out of the mean
    accuracies = [a for a in folds['accuracy'] if a is not None
                  and not pd.isna(a)]
    mean = float(np.mean(accuracies)) if accuracies else None
    stderr = float(stats.sem(accuracies)) if len(accuracies) > 1 else None

    return CrossValidationResult(model_kind, folds, mean, stderr,
                                 confusion(truth, predicted,
                                           dataset.class_names))


#### GOLDEN SUITE ####
def file_checksum(filepath):
    with open(filepath, 'rb') as f:
        return hashlib.sha256(f.read()).hexdigest()


def read_golden_cases(filepath=None, checksum_path=None):
    '''
    Reads the expert test compositions, verifying their checksum.

    Returns:
    --------
    list of GoldenCase
    '''
    filepath = filepath or get_filepath(GOLDEN_FILE)
    checksum_path = checksum_path or get_filepath(GOLDEN_CHECKSUM_FILE)

    for path in (filepath, checksum_path):
        if not os.path.isfile(path):
            raise FixtureMissing(f'golden fixture file {path} not found')

    with open(checksum_path, encoding='utf-8') as f:
        expected = f.read().split()
    if not expected or file_checksum(filepath) != expected[0]:
        raise FixtureCorrupt(f'{filepath}: checksum mismatch')

    table = pd.read_csv(filepath, dtype=str)
    missing = {'case_id', 'labels', 'appendix_result',
               'oracle_expected'} - set(table.columns)
    if missing:
        raise FixtureCorrupt(f'{filepath}: missing columns {sorted(missing)}')

    cases = []
    for row in table.itertuples(index=False):
        labels = tuple(row.labels.split(';'))
        if len(labels) != GOLDEN_LABELS_PER_CASE:
            raise FixtureCorrupt(f'case {row.case_id}: {len(labels)} labels, '
                                 f'expected {GOLDEN_LABELS_PER_CASE}')
        cases.append(GoldenCase(int(row.case_id), labels,
                                row.appendix_result, row.oracle_expected))

    return cases


def expected_rock(appendix_result):
    '''Rock a case is meant to be; ``other`` for a rejection.'''
    if appendix_result.startswith(REJECTION_PREFIX):
        return knowledge.OTHER
    return appendix_result


def appendix_agrees(appendix_result, label):
    '''A named result agrees with that label, a rejection with ``other``.'''
    return label == expected_rock(appendix_result)


def run_golden_suite(kb, filepath=None, checksum_path=None):
    '''
    Classifies every golden composition from its species labels.

    Each case is checked against its locked expected label and against
    the expert's result; disagreements with the expert are listed as
    divergences.

    Returns:
    --------
    GoldenSuiteReport
    '''
    cases = read_golden_cases(filepath, checksum_path)

    rows = []
    for case in cases:
        result = knowledge.classify(case.labels, kb)
        rows.append({
            'case_id': case.case_id,
            'labels': ';'.join(case.labels),
            'appendix_result': case.appendix_result,
            'oracle_expected': case.oracle_expected,
            'label': result.label,
            'w_max': result.w_max,
            'margin': result.margin,
            'fired_exclusions': ';'.join(e.species
                                         for e in result.fired_exclusions),
            'oracle_match': result.label == case.oracle_expected,
            'appendix_agreement': appendix_agrees(case.appendix_result,
                                                  result.label)})
    table = pd.DataFrame(rows)

    cm = confusion([expected_rock(r) for r in table['appendix_result']],
                   table['label'], kb.rock_names + [knowledge.OTHER])
    divergent = table.loc[~table['appendix_agreement'], 'case_id'].tolist()

    report = GoldenSuiteReport(table, int(table['oracle_match'].sum()),
                               int(table['appendix_agreement'].sum()), cm,
                               metrics(cm), divergent)
    logger.info('Golden suite: %s', report.summary())

    return report


def evaluate_integrated(model, kb, specs, grid, train_config, mode,
                        noise_sigma, seed, cases=None, min_points=10):
    '''
    Runs the golden compositions end to end through a trained network.

    Every case is rendered as synthetic spectra, labelled by the model in
    the given mode and classified by the rule engine.

    Returns:
    --------
    cases: pd.DataFrame
        Per case: expected rock, network-driven label and locked label.
    cm: ConfusionMatrix
    report: MetricsReport
    '''
    cases = cases or read_golden_cases()

    rows = []
    for case in cases:
        sample = synthesize_sample(case.labels, specs, grid, noise_sigma,
                                   seed * 1000 + case.case_id,
                                   sample_id=f'case_{case.case_id}')
        result = classify_sample(sample, model, kb, mode, grid, train_config,
                                 min_points)
        rows.append({'case_id': case.case_id,
                     'expected': expected_rock(case.appendix_result),
                     'oracle_expected': case.oracle_expected,
                     'label': result.label,
                     'mineral_labels': ';'.join(result.mineral_labels)})
    table = pd.DataFrame(rows)

    cm = confusion(table['expected'], table['label'],
                   kb.rock_names + [knowledge.OTHER])

    return table, cm, metrics(cm)


#### PLOT TABLES ####
def accuracy_bar_table(cv_results):
    '''Mean accuracy and standard error per model, one bar each.'''
    return pd.DataFrame([{'model': r.model_kind,
                          'mean_accuracy': r.mean_accuracy,
                          'stderr': r.stderr,
                          'folds': int(r.folds['accuracy'].notna().sum())}
                         for r in cv_results],
                        columns=['model', 'mean_accuracy', 'stderr', 'folds'])


def confusion_table(cm):
    '''Long-format matrix: one row per (true, predicted) cell.'''
    return pd.DataFrame([{'true': t, 'predicted': p,
                          'count': int(cm.counts[i, j])}
                         for i, t in enumerate(cm.class_names)
                         for j, p in enumerate(cm.class_names)],
                        columns=['true', 'predicted', 'count'])
