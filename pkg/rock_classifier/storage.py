'''
Dataset and model files.

Both use one layout: a magic line, a format version line, a canonical
JSON header line, then raw little-endian tensors in the order the header
lists them. Nothing time-dependent is written, so saving the same object
twice gives identical bytes.
'''

#### IMPORTS ####
import dataclasses
import json
import logging

import numpy as np

from rock_classifier.config import canonical_json
from rock_classifier.exceptions import CheckpointError
from rock_classifier.neural import (CnnConfig, MlpConfig, NetworkModel)
from rock_classifier.spectra import GridSpec, LabeledDataset


logger = logging.getLogger(__name__)

DATASET_MAGIC = b'ROCKDS'
MODEL_MAGIC = b'ROCKNN'
FORMAT_VERSION = 1

DTYPES = {'float64': '<f8', 'int64': '<i8'}


#### LOW LEVEL ####
def _write(filepath, magic, header, tensors):
    '''Writes header plus ordered (name, array) tensors.'''
    header = dict(header)
    header['tensors'] = [
        {'name': name, 'dtype': 'int64' if array.dtype.kind in 'iu'
         else 'float64', 'shape': list(array.shape)}
        for name, array in tensors]

    with open(filepath, 'wb') as f:
        f.write(magic + b'\n')
        f.write(f'{FORMAT_VERSION}\n'.encode('ascii'))
        f.write(canonical_json(header).encode('utf-8') + b'\n')
        for (name, array), spec in zip(tensors, header['tensors']):
            f.write(np.ascontiguousarray(
                array, dtype=DTYPES[spec['dtype']]).tobytes())


def _read(filepath, magic):
    '''Returns (header, dict of name -> array) of a file written by _write.'''
    try:
        with open(filepath, 'rb') as f:
            blob = f.read()
    except OSError as e:
        raise CheckpointError(f'cannot read {filepath}: {e}') from e

    parts = blob.split(b'\n', 3)
    if len(parts) < 4 or parts[0] != magic:
        raise CheckpointError(f'{filepath}: not a {magic.decode()} file')
    if parts[1] != str(FORMAT_VERSION).encode('ascii'):
        raise CheckpointError(f'{filepath}: unsupported format version '
                              f'{parts[1].decode(errors="replace")}')
    try:
        header = json.loads(parts[2])
    except ValueError as e:
        raise CheckpointError(f'{filepath}: corrupt header') from e

    payload = parts[3]
    tensors = {}
    offset = 0
    for spec in header.get('tensors', []):
        dtype = np.dtype(DTYPES[spec['dtype']])
        count = int(np.prod(spec['shape'], dtype=np.int64))
        size = count * dtype.itemsize
        if offset + size > len(payload):
            raise CheckpointError(f'{filepath}: truncated tensor '
                                  f'{spec["name"]}')
        array = np.frombuffer(payload, dtype=dtype, count=count,
                              offset=offset)
        tensors[spec['name']] = array.astype(dtype.newbyteorder('='))\
            .reshape(spec['shape'])
        offset += size
    if offset != len(payload):
        raise CheckpointError(f'{filepath}: trailing bytes after tensors')

    return header, tensors


#### DATASETS ####
def save_dataset(dataset, filepath, config_hash='', seed=0, extra=None):
    '''
    Writes a LabeledDataset.

    Parameters:
    -----------
    dataset: LabeledDataset
    filepath: str
    config_hash: str, optional (default='')
        Hash of the config that produced the data.
    seed: int, optional (default=0)
    extra: dict, optional (default=None)
        JSON-serialisable provenance, e.g. the skip report.
    '''
    header = {'kind': 'dataset', 'class_names': list(dataset.class_names),
              'grid': dataset.grid.to_dict(), 'config_hash': config_hash,
              'seed': seed, 'extra': extra or {}}
    _write(filepath, DATASET_MAGIC, header,
           [('vectors', dataset.vectors), ('labels', dataset.labels)])
    logger.info('Wrote %d spectra to %s', len(dataset), filepath)


def load_dataset_file(filepath):
    '''Returns (LabeledDataset, header) from a dataset file.'''
    header, tensors = _read(filepath, DATASET_MAGIC)
    try:
        dataset = LabeledDataset(tensors['vectors'], tensors['labels'],
                                 header['class_names'],
                                 GridSpec(**header['grid']))
    except KeyError as e:
        raise CheckpointError(f'{filepath}: missing {e}') from e

    return dataset, header


#### MODELS ####
def save_checkpoint(model, filepath, grid, config_hash='', seed=0):
    '''Writes a trained NetworkModel with its grid and training history.'''
    header = {'kind': model.kind, 'config': dataclasses.asdict(model.config),
              'class_names': list(model.class_names),
              'grid': grid.to_dict(), 'history': model.history,
              'best_epoch': model.best_epoch,
              'uncertainty': model.uncertainty,
              'config_hash': config_hash, 'seed': seed}
    _write(filepath, MODEL_MAGIC, header, list(model.params.items()))
    logger.info('Wrote %s checkpoint to %s', model.kind, filepath)


def load_checkpoint(filepath):
    '''Returns (NetworkModel, header) from a checkpoint file.'''
    header, tensors = _read(filepath, MODEL_MAGIC)
    try:
        settings = dict(header['config'])
        if header['kind'] == 'cnn':
            settings['conv_channels'] = tuple(settings['conv_channels'])
            config = CnnConfig(**settings)
        elif header['kind'] == 'mlp':
            settings['hidden_layers'] = tuple(settings['hidden_layers'])
            config = MlpConfig(**settings)
        else:
            raise CheckpointError(f'{filepath}: unknown model kind '
                                  f'{header["kind"]!r}')
        params = {spec['name']: tensors[spec['name']]
                  for spec in header['tensors']}
        model = NetworkModel(header['kind'], config, params,
                             header['class_names'], header['history'],
                             header['best_epoch'])
    except (KeyError, TypeError) as e:
        raise CheckpointError(f'{filepath}: incomplete checkpoint ({e})') \
            from e

    return model, header
