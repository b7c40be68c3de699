#### IMPORTS ####
import logging
import os

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from joblib import Parallel, delayed
from scipy.interpolate import interp1d

from rock_classifier.exceptions import (DataError, EmptyDataset,
                                        EmptySpectrum, MalformedLine,
                                        NonFiniteValue)


logger = logging.getLogger(__name__)


#### DOMAIN TYPES ####
@dataclass
class Spectrum:
    '''
    Raman measurement: intensities against wavenumber shift in cm-1.

    Wavenumbers are strictly increasing and every value is finite. A single
    point is allowed because collapsing duplicate wavenumbers can leave one.
    '''
    wavenumbers: np.ndarray
    intensities: np.ndarray

    def __post_init__(self):
        self.wavenumbers = np.asarray(self.wavenumbers, dtype=float)
        self.intensities = np.asarray(self.intensities, dtype=float)

        if self.wavenumbers.ndim != 1 or \
                self.wavenumbers.shape != self.intensities.shape:
            raise DataError('wavenumbers and intensities must be 1-D arrays '
                            'of the same length')
        if len(self.wavenumbers) == 0:
            raise EmptySpectrum('spectrum holds no points')
        if not (np.all(np.isfinite(self.wavenumbers))
                and np.all(np.isfinite(self.intensities))):
            raise NonFiniteValue('spectrum holds non-finite values')
        if np.any(np.diff(self.wavenumbers) <= 0):
            raise DataError('wavenumbers must be strictly increasing')


@dataclass
class SpectrumMetadata:
    '''Header fields of a spectrum file.'''
    mineral_name: str = ''
    source_id: str = ''
    extra: dict = field(default_factory=dict)


@dataclass(frozen=True)
class GridSpec:
    '''Uniform wavenumber grid every spectrum is resampled onto.'''
    min_wavenumber: float = 150.0
    max_wavenumber: float = 1500.0
    num_points: int = 1024

    def __post_init__(self):
        if not self.min_wavenumber < self.max_wavenumber:
            raise DataError('grid min_wavenumber must be below '
                            'max_wavenumber')
        if int(self.num_points) != self.num_points or self.num_points < 2:
            raise DataError('grid num_points must be an integer >= 2')

    def axis(self):
        '''Returns the grid wavenumbers.'''
        return np.linspace(self.min_wavenumber, self.max_wavenumber,
                           int(self.num_points))

    def to_dict(self):
        return {'min_wavenumber': float(self.min_wavenumber),
                'max_wavenumber': float(self.max_wavenumber),
                'num_points': int(self.num_points)}


@dataclass
class LabeledDataset:
    '''
    Fixed-grid spectral vectors with mineral class labels.

    Attributes:
    -----------
    vectors: np.ndarray
        Shape (num_samples, grid.num_points).
    labels: np.ndarray
        Integer index into class_names for every row.
    class_names: list
        Ordered, unique mineral species.
    grid: GridSpec
        Grid the rows are sampled on.
    '''
    vectors: np.ndarray
    labels: np.ndarray
    class_names: list
    grid: GridSpec

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=float)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.class_names = list(self.class_names)

        if self.vectors.ndim != 2 and self.vectors.size == 0:
            self.vectors = self.vectors.reshape(0, self.grid.num_points)
        if self.vectors.ndim != 2 or \
                self.vectors.shape[1] != self.grid.num_points:
            raise DataError(f'dataset rows must have length '
                            f'{self.grid.num_points}')
        if len(self.labels) != len(self.vectors):
            raise DataError('one label is needed per dataset row')
        if len(set(self.class_names)) != len(self.class_names):
            raise DataError('class_names must be unique')
        if len(self.labels) and (self.labels.min() < 0 or
                                 self.labels.max() >= len(self.class_names)):
            raise DataError('label index outside class_names')

    def __len__(self):
        return len(self.labels)

    def subset(self, indices):
        '''Returns the rows at the given indices as a new dataset.'''
        indices = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(self.vectors[indices], self.labels[indices],
                              self.class_names, self.grid)

    def class_counts(self):
        '''Returns a pd.Series of row counts per class name.'''
        counts = np.bincount(self.labels, minlength=len(self.class_names))
        return pd.Series(counts, index=self.class_names, name='count')


@dataclass
class LoadReport:
    '''Files skipped or rejected while loading a directory.'''
    skipped: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)
    loaded: int = 0

    def to_frame(self):
        '''Returns the report as a long pd.DataFrame (one row per entry).'''
        rows = [{'kind': 'skipped', 'name': name, 'count': count,
                 'detail': 'mineral not in class list'}
                for name, count in sorted(self.skipped.items())]
        rows += [{'kind': 'failed', 'name': name, 'count': 1,
                  'detail': error}
                 for name, error in self.failures]
        return pd.DataFrame(rows, columns=['kind', 'name', 'count', 'detail'])


#### PARSING ####
def _parse_float(token, line_no, line, source):
    '''Converts a data token, naming the line if it is not numeric.'''
    try:
        value = float(token)
    except ValueError:
        raise MalformedLine(line_no, line, source) from None
    if not np.isfinite(value):
        where = f'{source}: ' if source else ''
        raise NonFiniteValue(f'{where}non-finite value on line {line_no}')
    return value


def parse_spectrum_file(text, source=None):
    '''
    Parses an RRUFF-style spectrum record.

    Header lines look like ``##KEY=VALUE``; data lines are
    ``wavenumber, intensity`` pairs. Data are sorted ascending and duplicate
    wavenumbers are collapsed to the mean of their intensities.

    Parameters:
    -----------
    text: str
        Full file contents.
    source: str, optional (default=None)
        File name used in error messages and as fallback source id.

    Returns:
    --------
    metadata: SpectrumMetadata
    spectrum: Spectrum
    '''
    headers = {}
    wavenumbers = []
    intensities = []

    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith('##'):
            key, _, value = line[2:].partition('=')
            headers[key.strip()] = value.strip()
            continue
        if line.startswith('#'):  # Comment
            continue

        tokens = [t for t in line.replace(',', ' ').split() if t]
        if len(tokens) != 2:
            raise MalformedLine(line_no, line, source)
        wavenumbers.append(_parse_float(tokens[0], line_no, line, source))
        intensities.append(_parse_float(tokens[1], line_no, line, source))

    if not wavenumbers:
        where = f'{source}: ' if source else ''
        raise EmptySpectrum(f'{where}no data lines')

    # Sorts and averages repeated wavenumbers
    data = pd.DataFrame({'wavenumber': wavenumbers,
                         'intensity': intensities})
    data = data.groupby('wavenumber', sort=True)['intensity'].mean()

    metadata = SpectrumMetadata(
        mineral_name=headers.pop('NAMES', ''),
        source_id=headers.pop('RRUFFID', '') or (source or ''),
        extra=headers)
    spectrum = Spectrum(data.index.to_numpy(), data.to_numpy())

    return metadata, spectrum


def format_spectrum_file(metadata, spectrum):
    '''Writes a spectrum back out in the format parse_spectrum_file reads.'''
    lines = [f'##NAMES={metadata.mineral_name}']
    if metadata.source_id:
        lines.append(f'##RRUFFID={metadata.source_id}')
    lines += [f'##{key}={value}' for key, value in metadata.extra.items()]
    lines += [f'{float(w)!r}, {float(i)!r}'
              for w, i in zip(spectrum.wavenumbers, spectrum.intensities)]

    return '\n'.join(lines) + '\n'


def read_spectrum_file(filepath):
    '''Reads and parses one spectrum file.'''
    with open(filepath, encoding='utf-8') as f:
        text = f.read()

    return parse_spectrum_file(text, source=os.path.basename(filepath))


#### PREPROCESSING ####
def resample(spectrum, grid):
    '''
    Linearly interpolates a spectrum onto a uniform grid.

    Grid points outside the spectrum's wavenumber span are set to 0.

    Parameters:
    -----------
    spectrum: Spectrum
    grid: GridSpec

    Returns:
    --------
    np.ndarray of length grid.num_points
    '''
    axis = grid.axis()

    if len(spectrum.wavenumbers) == 1:
        # A lone point only survives where the grid hits it exactly
        vector = np.zeros(len(axis))
        vector[axis == spectrum.wavenumbers[0]] = spectrum.intensities[0]
        return vector

    f = interp1d(spectrum.wavenumbers, spectrum.intensities, kind='linear',
                 bounds_error=False, fill_value=0.0, assume_sorted=True)

    return np.asarray(f(axis), dtype=float)


def normalize(vector):
    '''Min-max scales a vector to [0, 1]; a constant vector maps to zeros.'''
    vector = np.asarray(vector, dtype=float)
    low = vector.min()
    span = vector.max() - low

    if span == 0:
        return np.zeros_like(vector)

    return (vector - low) / span


def preprocess(spectrum, grid):
    '''Resamples then normalizes a spectrum.'''
    return normalize(resample(spectrum, grid))


#### DATASET LOADING ####
def list_spectrum_files(directory):
    '''Returns the regular, non-hidden files of a directory in name order.'''
    try:
        names = sorted(os.listdir(directory))
    except OSError as e:
        raise DataError(f'cannot read directory {directory}: {e}') from e

    return [os.path.join(directory, name) for name in names
            if not name.startswith('.')
            and os.path.isfile(os.path.join(directory, name))]


def _load_one(filepath, grid):
    '''Parses and preprocesses one file, returning the error instead.'''
    try:
        metadata, spectrum = read_spectrum_file(filepath)
        if not metadata.mineral_name:
            raise DataError(f'{os.path.basename(filepath)}: '
                            f'missing ##NAMES header')
        return metadata, preprocess(spectrum, grid), None
    except (DataError, UnicodeDecodeError) as e:
        return None, None, str(e)


def load_dataset(directory, class_names, grid, n_jobs=1):
    '''
    Loads every spectrum in a directory whose mineral is in class_names.

    Files naming other minerals are skipped and counted; files that fail to
    parse are reported without stopping the load.

    Parameters:
    -----------
    directory: str
        One spectrum per file, any extension.
    class_names: list
        Ordered mineral species to keep (matched case-insensitively).
    grid: GridSpec
        Grid every spectrum is resampled onto.
    n_jobs: int, optional (default=1)
        Parallel workers used for parsing.

    Returns:
    --------
    dataset: LabeledDataset
    report: LoadReport
    '''
    files = list_spectrum_files(directory)
    if not files:
        raise EmptyDataset(f'no spectra found in {directory}')

    lookup = {name.strip().lower(): i for i, name in enumerate(class_names)}

    results = Parallel(n_jobs=n_jobs)(
        delayed(_load_one)(filepath, grid) for filepath in files)

    report = LoadReport()
    vectors = []
    labels = []
    for filepath, (metadata, vector, error) in zip(files, results):
        name = os.path.basename(filepath)
        if error is not None:
            logger.warning('Could not load %s: %s', name, error)
            report.failures.append((name, error))
            continue

        mineral = metadata.mineral_name.strip()
        index = lookup.get(mineral.lower())
        if index is None:
            report.skipped[mineral] = report.skipped.get(mineral, 0) + 1
            continue

        vectors.append(vector)
        labels.append(index)

    report.loaded = len(labels)
    if not labels:
        raise EmptyDataset(f'no spectra of the configured minerals found in '
                           f'{directory}')

    logger.info('Loaded %d spectra, skipped %d, failed %d', report.loaded,
                sum(report.skipped.values()), len(report.failures))

    dataset = LabeledDataset(np.vstack(vectors), np.array(labels),
                             class_names, grid)

    return dataset, report
