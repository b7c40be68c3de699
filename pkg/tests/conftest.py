import numpy as np
import pytest

from rock_classifier import neural
from rock_classifier.knowledge import default_knowledge_base
from rock_classifier.spectra import GridSpec
from rock_classifier.synthgen import (SyntheticMineralSpec,
                                      make_synthetic_corpus)


#### GRIDS AND CORPORA ####
@pytest.fixture
def tiny_grid():
    return GridSpec(150.0, 1500.0, 64)


@pytest.fixture
def tiny_specs():
    '''Three minerals with peaks far apart on the tiny grid.'''
    return [SyntheticMineralSpec('quartz', ((464.0, 30.0, 1.0),)),
            SyntheticMineralSpec('calcite', ((1086.0, 30.0, 1.0),)),
            SyntheticMineralSpec('dolomite', ((300.0, 30.0, 1.0),
                                              (1300.0, 30.0, 0.8)))]


@pytest.fixture
def tiny_corpus(tiny_specs, tiny_grid):
    return make_synthetic_corpus(tiny_specs, 20, tiny_grid, 0.01, seed=3)


@pytest.fixture
def tiny_train_config():
    return neural.TrainConfig(learning_rate=0.01, batch_size=8,
                              max_epochs=60, patience=15, seed=0)


@pytest.fixture
def tiny_cnn_config(tiny_grid):
    return neural.CnnConfig(conv_channels=(4, 8), kernel_size=5, pool_size=2,
                            hidden_units=16, num_classes=3,
                            dropout_rate=0.2,
                            input_length=tiny_grid.num_points)


@pytest.fixture
def trained_model(tiny_corpus, tiny_cnn_config, tiny_train_config):
    return neural.train(tiny_corpus, tiny_cnn_config, tiny_train_config)


#### KNOWLEDGE ####
@pytest.fixture(scope='session')
def kb():
    return default_knowledge_base()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
