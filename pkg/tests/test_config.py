import json

import pytest

from rock_classifier import config as run_config
from rock_classifier.exceptions import ConfigError


#### DEFAULTS ####
def test_defaults():
    config = run_config.load_config()

    assert config.grid.num_points == 1024
    assert len(config.class_names) == 14
    assert config.cnn.num_classes == 14
    assert config.cnn.input_length == 1024
    assert config.train.max_epochs == 200
    assert config.min_points == 10


def test_seed_reaches_every_stream():
    config = run_config.config_from_dict({'seed': 42})

    assert config.train.seed == 42
    assert config.augment.seed == 42


def test_network_sizes_follow_classes_and_grid():
    config = run_config.config_from_dict({
        'class_names': ['quartz', 'calcite', 'dolomite'],
        'grid': {'num_points': 64},
        'cnn': {'conv_channels': [4, 8], 'hidden_units': 16}})

    assert config.cnn.num_classes == 3
    assert config.cnn.input_length == 64
    assert config.cnn.conv_channels == (4, 8)
    assert config.mlp.input_length == 64


#### FILES AND OVERRIDES ####
def test_file_then_overrides(tmp_path):
    path = tmp_path / 'run.json'
    path.write_text(json.dumps({'train': {'max_epochs': 50,
                                          'batch_size': 16}}))

    config = run_config.load_config(path, {'train.max_epochs': 7,
                                           'corpus.per_class': None})

    assert config.train.max_epochs == 7
    assert config.train.batch_size == 16
    assert config.corpus.per_class == 50


def test_unknown_key_names_path():
    with pytest.raises(ConfigError, match=r'train\.learning_rat: unknown'):
        run_config.config_from_dict({'train': {'learning_rat': 0.1}})


def test_unknown_top_level_key():
    with pytest.raises(ConfigError, match='epochs: unknown key'):
        run_config.config_from_dict({'epochs': 3})


def test_invalid_value_is_config_error():
    with pytest.raises(ConfigError, match='train'):
        run_config.config_from_dict({'train': {'patience': 0}})


def test_invalid_json(tmp_path):
    path = tmp_path / 'run.json'
    path.write_text('{"seed": ')

    with pytest.raises(ConfigError, match='invalid JSON'):
        run_config.load_config(path)


#### ROUND TRIP AND HASH ####
def test_resolved_config_reloads_unchanged():
    config = run_config.config_from_dict({'seed': 3,
                                          'corpus': {'per_class': 12}})

    again = run_config.config_from_dict(run_config.config_to_dict(config))

    assert again == config
    assert run_config.config_hash(again) == run_config.config_hash(config)


def test_hash_changes_with_settings():
    first = run_config.config_from_dict({'seed': 1})
    second = run_config.config_from_dict({'seed': 2})

    assert run_config.config_hash(first) != run_config.config_hash(second)
    assert len(run_config.config_hash(first)) == 64


def test_canonical_json_is_sorted_and_compact():
    assert run_config.canonical_json({'b': 1, 'a': [1, 2]}) == \
        '{"a":[1,2],"b":1}'


def test_packaged_files_exist():
    path = run_config.get_filepath('data/knowledge_base.json')

    with open(path, encoding='utf-8') as f:
        assert 'Limestone' in f.read()
