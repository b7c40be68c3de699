#### IMPORTS ####
import logging
import math

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from sklearn.decomposition import PCA

from rock_classifier.exceptions import (DataError, PeakOutOfRange,
                                        TooFewSamples)
from rock_classifier.spectra import LabeledDataset, normalize


logger = logging.getLogger(__name__)


#### CONFIGURATION ####
@dataclass(frozen=True)
class AugmentConfig:
    '''
    Settings for expanding small per-mineral spectrum sets.

    Classes with at least ``pca_min_samples`` rows are expanded by
    perturbing principal-component scores; smaller classes by shifting,
    scaling and adding noise to their rows.
    '''
    target_multiplier: float = 4.0
    pca_min_samples: int = 8
    pca_components: int = 5
    coeff_sigma_scale: float = 0.5
    noise_sigma: float = 0.01
    shift_max: int = 3
    scale_range: tuple = (0.9, 1.1)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, 'scale_range',
                           tuple(float(s) for s in self.scale_range))
        if self.target_multiplier < 1:
            raise DataError('target_multiplier must be >= 1')
        if self.shift_max < 0:
            raise DataError('shift_max must be >= 0')
        if len(self.scale_range) != 2 or min(self.scale_range) <= 0 or \
                self.scale_range[0] > self.scale_range[1]:
            raise DataError('scale_range must be [low, high] with '
                            '0 < low <= high')
        if self.pca_min_samples < 2 or self.pca_components < 1:
            raise DataError('pca_min_samples must be >= 2 and '
                            'pca_components >= 1')
        if self.noise_sigma < 0 or self.coeff_sigma_scale < 0:
            raise DataError('noise_sigma and coeff_sigma_scale must be >= 0')


@dataclass(frozen=True)
class SyntheticMineralSpec:
    '''A synthetic mineral: Gaussian peaks of (centre, width, height).'''
    name: str
    peaks: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, 'peaks',
                           tuple(tuple(float(v) for v in p)
                                 for p in self.peaks))
        if not self.name:
            raise DataError('synthetic mineral needs a name')
        if not self.peaks:
            raise DataError(f'{self.name}: at least one peak is needed')
        for centre, width, height in self.peaks:
            if width <= 0 or height <= 0:
                raise DataError(f'{self.name}: peak widths and heights '
                                f'must be > 0')


#### PCA SYNTHESIS ####
def synthetic_count(original, multiplier):
    '''Number of synthetic rows needed to reach multiplier x original.'''
    return int(math.ceil((multiplier - 1) * original - 1e-9))


def pca_augment(class_vectors, config, rng=None):
    '''
    Creates new spectra by perturbing the principal-component scores of a
    class.

    Each synthetic row starts from an original row's scores, adds Gaussian
    noise with std coeff_sigma_scale times that component's score std, and
    is reconstructed as mean + scores @ components, clamped to >= 0.

    Parameters:
    -----------
    class_vectors: np.ndarray
        Rows of one class, shape (n, num_points).
    config: AugmentConfig
    rng: np.random.Generator, optional (default=None)
        Random stream; seeded from config.seed when not given.

    Returns:
    --------
    np.ndarray of shape (ceil((multiplier - 1) * n), num_points)
    '''
    class_vectors = np.asarray(class_vectors, dtype=float)
    n = len(class_vectors)
    if n < config.pca_min_samples:
        raise TooFewSamples(f'PCA needs {config.pca_min_samples} rows, '
                            f'got {n}')

    if rng is None:
        rng = np.random.default_rng(config.seed)

    count = synthetic_count(n, config.target_multiplier)
    if count == 0:
        return np.empty((0, class_vectors.shape[1]))

    n_components = max(1, min(config.pca_components, n - 1,
                              class_vectors.shape[1]))
    pca = PCA(n_components=n_components, svd_solver='full')
    scores = pca.fit_transform(class_vectors)
    score_std = scores.std(axis=0)

    base = scores[np.arange(count) % n]
    noise = rng.normal(size=base.shape) * (config.coeff_sigma_scale
                                           * score_std)
    synthetic = pca.mean_ + (base + noise) @ pca.components_

    return np.clip(synthetic, 0.0, None)


#### DIRECT VARIATION ####
def shift_vector(vector, shift):
    '''Shifts a vector by whole grid points, filling vacated ends with 0.'''
    shifted = np.zeros_like(vector)
    if shift > 0:
        shifted[shift:] = vector[:-shift]
    elif shift < 0:
        shifted[:shift] = vector[-shift:]
    else:
        shifted[:] = vector

    return shifted


def direct_variation(vector, config, rng=None):
    '''
    Varies one spectrum by shift, intensity scale and additive noise.

    Applied in order: an integer shift in [-shift_max, shift_max] with zero
    fill, a scale drawn from scale_range, Gaussian noise with std
    noise_sigma, then clamping to >= 0.
    '''
    vector = np.asarray(vector, dtype=float)
    if rng is None:
        rng = np.random.default_rng(config.seed)

    shift = int(rng.integers(-config.shift_max, config.shift_max + 1))
    low, high = config.scale_range
    scale = rng.uniform(low, high)
    noise = rng.normal(0.0, config.noise_sigma, size=vector.shape)

    varied = shift_vector(vector, shift) * scale + noise

    return np.clip(varied, 0.0, None)


#### DATASET EXPANSION ####
def expand_class(class_vectors, config, rng):
    '''Returns (synthetic rows, path name) for one class.'''
    n = len(class_vectors)
    if n >= config.pca_min_samples:
        return pca_augment(class_vectors, config, rng), 'pca'

    count = synthetic_count(n, config.target_multiplier)
    rows = [direct_variation(class_vectors[j % n], config, rng)
            for j in range(count)]
    if not rows:
        return np.empty((0, class_vectors.shape[1])), 'direct'

    return np.vstack(rows), 'direct'


def expand_dataset(dataset, config):
    '''
    Expands every class of a dataset to target_multiplier times its size.

    Classes with at least pca_min_samples rows take the PCA path, the rest
    the direct-variation path. Original rows come first, unchanged. Each
    class draws from its own stream seeded by (seed, class index).

    Parameters:
    -----------
    dataset: LabeledDataset
    config: AugmentConfig

    Returns:
    --------
    expanded: LabeledDataset
    manifest: pd.DataFrame
        Per class: original, synthetic and total counts, path, seed and any
        error raised while expanding it.
    '''
    if len(dataset) == 0:
        raise DataError('cannot expand an empty dataset')

    vectors = [dataset.vectors]
    labels = [dataset.labels]
    manifest = []

    for index, name in enumerate(dataset.class_names):
        class_vectors = dataset.vectors[dataset.labels == index]
        entry = {'class': name, 'original': len(class_vectors),
                 'synthetic': 0, 'path': '', 'seed': config.seed,
                 'error': ''}

        if len(class_vectors) > 0:
            rng = np.random.default_rng([config.seed, index])
            try:
                synthetic, path = expand_class(class_vectors, config, rng)
                vectors.append(synthetic)
                labels.append(np.full(len(synthetic), index))
                entry['synthetic'] = len(synthetic)
                entry['path'] = path
            except (DataError, ValueError) as e:
                logger.warning('Could not expand %s: %s', name, e)
                entry['error'] = str(e)

        entry['total'] = entry['original'] + entry['synthetic']
        manifest.append(entry)

    expanded = LabeledDataset(np.vstack(vectors), np.concatenate(labels),
                              dataset.class_names, dataset.grid)
    manifest = pd.DataFrame(manifest, columns=['class', 'original',
                                               'synthetic', 'total', 'path',
                                               'seed', 'error'])

    return expanded, manifest


#### SYNTHETIC CORPUS ####
def read_mineral_specs(filepath):
    '''
    Reads synthetic mineral peak tables.

    The file has columns mineral, center, width, height; one row per peak.
    Minerals keep the order they first appear in.
    '''
    table = pd.read_csv(filepath)
    missing = {'mineral', 'center', 'width', 'height'} - set(table.columns)
    if missing:
        raise DataError(f'{filepath}: missing columns {sorted(missing)}')

    specs = []
    for name, rows in table.groupby('mineral', sort=False):
        peaks = rows[['center', 'width', 'height']].to_numpy()
        specs.append(SyntheticMineralSpec(str(name).strip(),
                                          tuple(map(tuple, peaks))))

    return specs


def render_peaks(spec, axis):
    '''Sums the Gaussian peaks of a mineral on a wavenumber axis.'''
    vector = np.zeros(len(axis))
    for centre, width, height in spec.peaks:
        vector += height * np.exp(-0.5 * ((axis - centre) / width) ** 2)

    return vector


def check_peaks(specs, grid):
    '''Raises PeakOutOfRange for any peak centre outside the grid.'''
    for spec in specs:
        for centre, _, _ in spec.peaks:
            if not grid.min_wavenumber <= centre <= grid.max_wavenumber:
                raise PeakOutOfRange(
                    f'{spec.name}: peak at {centre} cm-1 outside '
                    f'{grid.min_wavenumber}-{grid.max_wavenumber} cm-1')


def make_synthetic_corpus(specs, per_class, grid, noise_sigma, seed):
    '''
    Generates a labelled corpus of Gaussian-peak mineral spectra.

    Every sample is the mineral's peak sum plus Gaussian noise, min-max
    normalized. Class order follows specs.

    Parameters:
    -----------
    specs: list of SyntheticMineralSpec
        Distinct mineral names.
    per_class: int
        Samples per mineral.
    grid: GridSpec
    noise_sigma: float
        Noise std relative to a unit peak height.
    seed: int

    Returns:
    --------
    LabeledDataset
    '''
    if not specs:
        raise DataError('at least one synthetic mineral is needed')
    names = [spec.name for spec in specs]
    if len(set(names)) != len(names):
        raise DataError('synthetic mineral names must be distinct')
    check_peaks(specs, grid)

    axis = grid.axis()
    rng = np.random.default_rng(seed)
    vectors = np.empty((len(specs) * per_class, len(axis)))
    labels = np.repeat(np.arange(len(specs)), per_class)

    row = 0
    for spec in specs:
        clean = render_peaks(spec, axis)
        for _ in range(per_class):
            noisy = clean + rng.normal(0.0, noise_sigma, size=len(axis))
            vectors[row] = normalize(noisy)
            row += 1

    return LabeledDataset(vectors, labels, names, grid)


def synthesize_spectra(labels, specs, grid, noise_sigma, seed):
    '''
    Renders one normalized synthetic spectrum per listed species.

    Species without a peak table render as pure noise, standing in for
    minerals the classifier was never trained on.

    Returns:
    --------
    np.ndarray of shape (len(labels), grid.num_points)
    '''
    check_peaks(specs, grid)
    by_name = {spec.name.lower(): spec for spec in specs}
    axis = grid.axis()
    rng = np.random.default_rng(seed)

    rows = []
    for label in labels:
        spec = by_name.get(str(label).strip().lower())
        clean = render_peaks(spec, axis) if spec else np.zeros(len(axis))
        rows.append(normalize(clean + rng.normal(0.0, noise_sigma,
                                                 size=len(axis))))

    return np.vstack(rows)
