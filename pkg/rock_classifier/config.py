#### IMPORTS ####
import dataclasses
import hashlib
import json
import logging

from dataclasses import dataclass, field
from importlib import resources

from rock_classifier.exceptions import ConfigError, DataError
from rock_classifier.neural import CnnConfig, MlpConfig, TrainConfig
from rock_classifier.spectra import GridSpec
from rock_classifier.synthgen import AugmentConfig


logger = logging.getLogger(__name__)

DEFAULT_CLASS_NAMES = ('quartz', 'albite', 'anorthite', 'orthoclase',
                       'annite', 'muscovite', 'phlogopite', 'calcite',
                       'dolomite', 'pyrite', 'rutile', 'tourmaline',
                       'hematite', 'gypsum')

# Fields filled from the top level of RunConfig
DERIVED_FIELDS = {
    'augment': ('seed',),
    'train': ('seed',),
    'cnn': ('num_classes', 'input_length', 'uncertainty'),
    'mlp': ('num_classes', 'input_length', 'uncertainty'),
}


#### PACKAGE DATA ####
def get_filepath(filename):
    '''Returns filepath in package given filename.'''
    return str(resources.files('rock_classifier') / filename)


#### RUN CONFIGURATION ####
@dataclass(frozen=True)
class CorpusConfig:
    '''Synthetic Gaussian-peak corpus settings.'''
    per_class: int = 50
    noise_sigma: float = 0.02
    specs_path: str = None

    def __post_init__(self):
        if self.per_class < 1:
            raise DataError('per_class must be >= 1')
        if self.noise_sigma < 0:
            raise DataError('noise_sigma must be >= 0')


@dataclass(frozen=True)
class RunConfig:
    '''
    Every setting of a run.

    ``seed`` feeds the augmentation and training streams; the network
    output and input sizes follow ``class_names`` and ``grid``.
    '''
    grid: GridSpec = field(default_factory=GridSpec)
    class_names: tuple = DEFAULT_CLASS_NAMES
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    cnn: CnnConfig = None
    mlp: MlpConfig = None
    train: TrainConfig = field(default_factory=TrainConfig)
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    kb_path: str = None
    min_points: int = 10
    seed: int = 0
    n_jobs: int = 1

    def __post_init__(self):
        names = tuple(str(n) for n in self.class_names)
        object.__setattr__(self, 'class_names', names)
        if len(names) < 2 or len(set(names)) != len(names):
            raise DataError('class_names must hold at least two distinct '
                            'names')
        if self.min_points < 1:
            raise DataError('min_points must be >= 1')

        sizes = {'num_classes': len(names),
                 'input_length': int(self.grid.num_points)}
        cnn = self.cnn or CnnConfig(**sizes)
        mlp = self.mlp or MlpConfig(**sizes)
        object.__setattr__(self, 'cnn', dataclasses.replace(cnn, **sizes))
        object.__setattr__(self, 'mlp', dataclasses.replace(mlp, **sizes))
        object.__setattr__(self, 'train', dataclasses.replace(
            self.train, seed=self.seed))
        object.__setattr__(self, 'augment', dataclasses.replace(
            self.augment, seed=self.seed))


SECTIONS = {'grid': GridSpec, 'augment': AugmentConfig, 'cnn': CnnConfig,
            'mlp': MlpConfig, 'train': TrainConfig, 'corpus': CorpusConfig}
TUPLE_FIELDS = {'scale_range', 'conv_channels', 'hidden_layers'}


def _build_section(name, values):
    '''Builds one embedded config, naming the offending key on error.'''
    if not isinstance(values, dict):
        raise ConfigError(f'{name}: expected an object')

    cls = SECTIONS[name]
    known = {f.name for f in dataclasses.fields(cls)}
    for key in values:
        if key not in known:
            raise ConfigError(f'{name}.{key}: unknown key')

    # Derived fields are recomputed by RunConfig
    values = {k: tuple(v) if k in TUPLE_FIELDS else v
              for k, v in values.items()
              if k not in DERIVED_FIELDS.get(name, ())}
    try:
        return cls(**values)
    except (DataError, TypeError) as e:
        raise ConfigError(f'{name}: {e}') from e


def config_from_dict(data):
    '''
    Builds a RunConfig from a dict, the parsed form of a config file.

    Missing keys take their defaults; unknown keys raise ConfigError with
    the dotted path of the key.
    '''
    if not isinstance(data, dict):
        raise ConfigError('config must be a JSON object')

    known = {f.name for f in dataclasses.fields(RunConfig)}
    kwargs = {}
    for key, value in data.items():
        if key == 'format_version':
            continue
        if key not in known:
            raise ConfigError(f'{key}: unknown key')
        if key in SECTIONS:
            value = _build_section(key, value)
        elif key == 'class_names':
            value = tuple(value)
        kwargs[key] = value

    try:
        return RunConfig(**kwargs)
    except (DataError, TypeError) as e:
        raise ConfigError(str(e)) from e


def config_to_dict(config):
    '''Plain-dict form of a resolved RunConfig.'''
    data = dataclasses.asdict(config)
    data['class_names'] = list(config.class_names)
    data['format_version'] = 1

    return json.loads(json.dumps(data))


def apply_overrides(data, overrides):
    '''
    Sets dotted keys such as ``train.max_epochs`` on a config dict.

    None values are ignored so unset command-line flags keep file values.
    '''
    data = json.loads(json.dumps(data))
    for dotted, value in overrides.items():
        if value is None:
            continue
        target = data
        *parents, key = dotted.split('.')
        for parent in parents:
            target = target.setdefault(parent, {})
        target[key] = value

    return data


def load_config(filepath=None, overrides=None):
    '''
    Resolves a RunConfig: defaults, then the JSON file, then overrides.

    Parameters:
    -----------
    filepath: str, optional (default=None)
        JSON config file.
    overrides: dict, optional (default=None)
        Dotted key -> value, typically from command-line flags.

    Returns:
    --------
    RunConfig
    '''
    data = {}
    if filepath is not None:
        try:
            with open(filepath, encoding='utf-8') as f:
                data = json.load(f)
        except OSError as e:
            raise ConfigError(f'cannot read config {filepath}: {e}') from e
        except json.JSONDecodeError as e:
            raise ConfigError(f'{filepath}: invalid JSON: {e}') from e

    config = config_from_dict(apply_overrides(data, overrides or {}))
    logger.debug('Resolved config %s', config_hash(config))

    return config


def canonical_json(data):
    '''Sorted-key, whitespace-free JSON used for hashing and headers.'''
    return json.dumps(data, sort_keys=True, separators=(',', ':'))


def config_hash(config):
    '''SHA-256 of the canonical JSON of a resolved RunConfig.'''
    text = canonical_json(config_to_dict(config))

    return hashlib.sha256(text.encode('utf-8')).hexdigest()
