'''Exceptions raised across the package.

Data problems (bad input files, impossible splits, corrupt fixtures) derive
from ``DataError`` and map to CLI exit code 2; broken internal invariants
raise ``InvariantViolation`` and map to exit code 3.
'''


class RockClassifierError(Exception):
    '''Base class of every error raised by the package.'''
    exit_code = 2


class DataError(RockClassifierError):
    '''Input data cannot be used.'''
    exit_code = 2


class InvariantViolation(RockClassifierError):
    '''An internal invariant does not hold.'''
    exit_code = 3


#### SPECTRA ####
class MalformedLine(DataError):
    '''A data line in a spectrum file is not a numeric pair.'''

    def __init__(self, line_no, line, source=None):
        self.line_no = line_no
        self.line = line
        self.source = source
        where = f'{source}: ' if source else ''
        super().__init__(f'{where}malformed data line {line_no}: {line!r}')


class EmptySpectrum(DataError):
    '''A spectrum file holds no data lines.'''


class NonFiniteValue(DataError):
    '''A spectrum holds NaN or infinite values.'''


class EmptyDataset(DataError):
    '''No usable spectra were found.'''


#### SYNTHESIS ####
class TooFewSamples(DataError):
    '''Not enough rows to fit principal components.'''


class PeakOutOfRange(DataError):
    '''A synthetic peak centre lies outside the wavenumber grid.'''


#### NETWORKS ####
class ShapeMismatch(DataError):
    '''Input length does not match the network.'''


class DegenerateSplit(DataError):
    '''A class is missing from the training split.'''


class CheckpointError(DataError):
    '''A dataset or model file cannot be read.'''


#### KNOWLEDGE ####
class EmptyMeasurements(DataError):
    '''A rock classification was asked for with no measurements.'''


class UnknownFunctionKind(DataError):
    '''A constraint uses an unsupported function kind.'''


class KnowledgeBaseError(DataError):
    '''A knowledge base entry breaks one of its invariants.'''

    def __init__(self, path, message):
        self.path = path
        super().__init__(f'{path}: {message}')


#### PIPELINE ####
class TooFewPoints(DataError):
    '''A sample has fewer measurement points than required.'''

    def __init__(self, count, min_points):
        self.count = count
        self.min_points = min_points
        super().__init__(f'TooFewPoints ({count} < {min_points})')


class GridMismatch(DataError):
    '''The model was trained on a different wavenumber grid.'''


#### EVALUATION ####
class ClassTooSmall(DataError):
    '''A class has fewer samples than folds.'''


class LengthMismatch(DataError):
    '''True and predicted label sequences differ in length.'''


class FixtureMissing(DataError):
    '''The golden fixture file is not present.'''


class FixtureCorrupt(DataError):
    '''The golden fixture does not match its checksum.'''


#### CONFIGURATION ####
class ConfigError(DataError):
    '''A configuration value is invalid.'''
