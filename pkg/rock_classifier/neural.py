#### IMPORTS ####
import logging

from dataclasses import dataclass, field

import numpy as np

from numpy.lib.stride_tricks import sliding_window_view
from sklearn.model_selection import StratifiedShuffleSplit

from rock_classifier.exceptions import (DataError, DegenerateSplit,
                                        InvariantViolation, ShapeMismatch)


logger = logging.getLogger(__name__)

UNKNOWN = -1
UNKNOWN_NAME = 'UNKNOWN'


#### CONFIGURATION ####
@dataclass(frozen=True)
class CnnConfig:
    '''
    Architecture of the two-stage 1D convolutional classifier.

    conv -> ReLU -> max pool -> [dropout], twice, then a ReLU dense layer,
    [dropout] and the output layer. ``uncertainty`` marks the Monte Carlo
    dropout variant: it trains with dropout and keeps it for inference.
    '''
    conv_channels: tuple = (16, 32)
    kernel_size: int = 5
    pool_size: int = 2
    hidden_units: int = 128
    num_classes: int = 14
    dropout_rate: float = 0.3
    input_length: int = 1024
    uncertainty: bool = False

    def __post_init__(self):
        object.__setattr__(self, 'conv_channels',
                           tuple(int(c) for c in self.conv_channels))
        if len(self.conv_channels) != 2 or min(self.conv_channels) < 1:
            raise DataError('exactly two positive conv channel counts are '
                            'needed')
        if self.num_classes < 2:
            raise DataError('num_classes must be >= 2')
        if not 0 <= self.dropout_rate < 1:
            raise DataError('dropout_rate must be in [0, 1)')
        if self.kernel_size < 1 or self.pool_size < 1 or \
                self.hidden_units < 1:
            raise DataError('kernel_size, pool_size and hidden_units must '
                            'be positive')
        if self.flat_size() < 1:
            raise DataError(f'input_length {self.input_length} is too short '
                            f'for kernel {self.kernel_size} and pool '
                            f'{self.pool_size}')

    def stage_lengths(self):
        '''Returns lengths after conv1, pool1, conv2 and pool2.'''
        conv1 = self.input_length - self.kernel_size + 1
        pool1 = max(conv1, 0) // self.pool_size
        conv2 = pool1 - self.kernel_size + 1
        pool2 = max(conv2, 0) // self.pool_size

        return conv1, pool1, conv2, pool2

    def flat_size(self):
        '''Length of the flattened second pooling stage.'''
        return self.conv_channels[1] * self.stage_lengths()[3]


@dataclass(frozen=True)
class MlpConfig:
    '''Dense-only baseline; no hidden layers is multinomial regression.'''
    hidden_layers: tuple = (128,)
    num_classes: int = 14
    dropout_rate: float = 0.0
    input_length: int = 1024
    uncertainty: bool = False

    def __post_init__(self):
        object.__setattr__(self, 'hidden_layers',
                           tuple(int(h) for h in self.hidden_layers))
        if self.num_classes < 2:
            raise DataError('num_classes must be >= 2')
        if any(h < 1 for h in self.hidden_layers):
            raise DataError('hidden layer sizes must be positive')
        if not 0 <= self.dropout_rate < 1:
            raise DataError('dropout_rate must be in [0, 1)')


@dataclass(frozen=True)
class TrainConfig:
    '''Optimiser, early stopping and Monte Carlo inference settings.'''
    learning_rate: float = 0.001
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    batch_size: int = 32
    max_epochs: int = 200
    patience: int = 20
    validation_fraction: float = 0.2
    seed: int = 0
    mc_passes: int = 30
    unknown_threshold: float = 0.5

    def __post_init__(self):
        if self.patience < 1:
            raise DataError('patience must be >= 1')
        if self.mc_passes < 1:
            raise DataError('mc_passes must be >= 1')
        if self.batch_size < 1 or self.max_epochs < 1:
            raise DataError('batch_size and max_epochs must be >= 1')
        if not 0 < self.validation_fraction < 1:
            raise DataError('validation_fraction must be in (0, 1)')
        if not 0 <= self.unknown_threshold < 1:
            raise DataError('unknown_threshold must be in [0, 1)')
        if self.learning_rate < 0:
            raise DataError('learning_rate must be >= 0')


#### MODEL TYPES ####
@dataclass
class NetworkModel:
    '''
    Parameters and provenance of a trained classifier.

    Attributes:
    -----------
    kind: str
        'cnn' or 'mlp'.
    config: CnnConfig or MlpConfig
    params: dict
        Parameter tensors in declared order.
    class_names: list
        Mineral species, one per output.
    history: list
        One dict per epoch: epoch, train_loss, val_loss, val_accuracy.
    best_epoch: int
        Epoch whose parameters were kept (0 when untrained).
    '''
    kind: str
    config: object
    params: dict
    class_names: list = field(default_factory=list)
    history: list = field(default_factory=list)
    best_epoch: int = 0

    @property
    def uncertainty(self):
        return bool(self.config.uncertainty)


@dataclass
class Prediction:
    '''Per-point mineral prediction; label is a class index or UNKNOWN.'''
    mean_probs: np.ndarray
    variance: np.ndarray
    label: int
    max_mean_prob: float


def label_name(model, label):
    '''Maps a predicted index (or UNKNOWN) to a species name.'''
    if label == UNKNOWN:
        return UNKNOWN_NAME
    return model.class_names[label]


#### LAYER KERNELS ####
def conv1d_forward(x, w, b):
    '''
    Valid 1D cross-correlation.

    x: (B, C, L), w: (O, C, K), b: (O,) -> out (B, O, L-K+1) and the input
    windows needed by the backward pass.
    '''
    windows = sliding_window_view(x, w.shape[2], axis=2)  # (B, C, L', K)
    out = np.tensordot(windows, w, axes=([1, 3], [1, 2]))  # (B, L', O)

    return out.transpose(0, 2, 1) + b[None, :, None], windows


def conv1d_backward(dout, windows, w):
    '''Returns (dx, dw, db) of conv1d_forward.'''
    k = w.shape[2]
    dw = np.tensordot(dout, windows, axes=([0, 2], [0, 2]))  # (O, C, K)
    db = dout.sum(axis=(0, 2))

    padded = np.pad(dout, ((0, 0), (0, 0), (k - 1, k - 1)))
    padded_windows = sliding_window_view(padded, k, axis=2)  # (B, O, L, K)
    dx = np.tensordot(padded_windows, w[:, :, ::-1], axes=([1, 3], [0, 2]))

    return dx.transpose(0, 2, 1), dw, db


def maxpool_forward(x, size):
    '''Non-overlapping max pool; a trailing remainder is dropped.'''
    batch, channels, length = x.shape
    pooled = length // size
    blocks = x[:, :, :pooled * size].reshape(batch, channels, pooled, size)
    argmax = blocks.argmax(axis=3)
    out = np.take_along_axis(blocks, argmax[..., None], axis=3)[..., 0]

    return out, argmax


def maxpool_backward(dout, argmax, input_shape, size):
    '''Routes gradients to the position that won each pooling window.'''
    batch, channels, length = input_shape
    pooled = dout.shape[2]
    dblocks = np.zeros((batch, channels, pooled, size))
    np.put_along_axis(dblocks, argmax[..., None], dout[..., None], axis=3)

    dx = np.zeros(input_shape)
    dx[:, :, :pooled * size] = dblocks.reshape(batch, channels,
                                               pooled * size)

    return dx


def dropout_mask(shape, rate, rng):
    '''Inverted dropout: kept units are scaled by 1 / (1 - rate).'''
    return (rng.random(shape) >= rate) / (1.0 - rate)


def relu(x):
    return np.maximum(x, 0.0)


#### INITIALISATION ####
def _uniform(rng, fan_in, shape):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_cnn(config, rng):
    '''Fan-in scaled uniform initialisation of every CNN tensor.'''
    c1, c2 = config.conv_channels
    k = config.kernel_size
    flat = config.flat_size()
    hidden = config.hidden_units
    classes = config.num_classes

    params = {}
    params['conv1_w'] = _uniform(rng, k, (c1, 1, k))
    params['conv1_b'] = _uniform(rng, k, (c1,))
    params['conv2_w'] = _uniform(rng, c1 * k, (c2, c1, k))
    params['conv2_b'] = _uniform(rng, c1 * k, (c2,))
    params['dense1_w'] = _uniform(rng, flat, (flat, hidden))
    params['dense1_b'] = _uniform(rng, flat, (hidden,))
    params['dense2_w'] = _uniform(rng, hidden, (hidden, classes))
    params['dense2_b'] = _uniform(rng, hidden, (classes,))

    return params


def init_mlp(config, rng):
    '''Fan-in scaled uniform initialisation of every MLP tensor.'''
    sizes = [config.input_length, *config.hidden_layers, config.num_classes]
    params = {}
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:]),
                                          start=1):
        params[f'dense{i}_w'] = _uniform(rng, fan_in, (fan_in, fan_out))
        params[f'dense{i}_b'] = _uniform(rng, fan_in, (fan_out,))

    return params


def new_model(kind, config, class_names, seed):
    '''Creates an untrained model with seeded initial parameters.'''
    rng = np.random.default_rng([seed, 0])
    if kind == 'cnn':
        params = init_cnn(config, rng)
    elif kind == 'mlp':
        params = init_mlp(config, rng)
    else:
        raise DataError(f'unknown model kind {kind!r}')

    return NetworkModel(kind, config, params, list(class_names))


#### FORWARD / BACKWARD ####
def _cnn_forward(params, config, x, dropout, rng):
    cache = {'dropout': dropout}
    p = config.pool_size
    rate = config.dropout_rate

    z1, cache['win1'] = conv1d_forward(x[:, None, :], params['conv1_w'],
                                       params['conv1_b'])
    a1 = relu(z1)
    pooled1, cache['idx1'] = maxpool_forward(a1, p)
    if dropout:
        cache['mask1'] = dropout_mask(pooled1.shape, rate, rng)
        pooled1 = pooled1 * cache['mask1']

    z2, cache['win2'] = conv1d_forward(pooled1, params['conv2_w'],
                                       params['conv2_b'])
    a2 = relu(z2)
    pooled2, cache['idx2'] = maxpool_forward(a2, p)
    if dropout:
        cache['mask2'] = dropout_mask(pooled2.shape, rate, rng)
        pooled2 = pooled2 * cache['mask2']

    flat = pooled2.reshape(len(x), -1)
    h = flat @ params['dense1_w'] + params['dense1_b']
    ah = relu(h)
    if dropout:
        cache['mask3'] = dropout_mask(ah.shape, rate, rng)
        ah = ah * cache['mask3']
    logits = ah @ params['dense2_w'] + params['dense2_b']

    cache.update(z1=z1, a1_shape=a1.shape, pooled1_shape=pooled1.shape,
                 z2=z2, a2_shape=a2.shape, pooled2_shape=pooled2.shape,
                 flat=flat, h=h, ah=ah)

    return logits, cache


def _cnn_backward(params, config, cache, dlogits):
    p = config.pool_size
    grads = {}

    grads['dense2_w'] = cache['ah'].T @ dlogits
    grads['dense2_b'] = dlogits.sum(axis=0)
    dah = dlogits @ params['dense2_w'].T
    if cache['dropout']:
        dah = dah * cache['mask3']
    dh = dah * (cache['h'] > 0)

    grads['dense1_w'] = cache['flat'].T @ dh
    grads['dense1_b'] = dh.sum(axis=0)
    dpooled2 = (dh @ params['dense1_w'].T).reshape(cache['pooled2_shape'])
    if cache['dropout']:
        dpooled2 = dpooled2 * cache['mask2']

    da2 = maxpool_backward(dpooled2, cache['idx2'], cache['a2_shape'], p)
    dz2 = da2 * (cache['z2'] > 0)
    dpooled1, grads['conv2_w'], grads['conv2_b'] = conv1d_backward(
        dz2, cache['win2'], params['conv2_w'])
    if cache['dropout']:
        dpooled1 = dpooled1 * cache['mask1']

    da1 = maxpool_backward(dpooled1, cache['idx1'], cache['a1_shape'], p)
    dz1 = da1 * (cache['z1'] > 0)
    _, grads['conv1_w'], grads['conv1_b'] = conv1d_backward(
        dz1, cache['win1'], params['conv1_w'])

    return {name: grads[name] for name in params}


def _mlp_forward(params, config, x, dropout, rng):
    layers = len(config.hidden_layers) + 1
    cache = {'dropout': dropout, 'inputs': [], 'pre': [], 'masks': []}
    a = x
    for i in range(1, layers + 1):
        cache['inputs'].append(a)
        z = a @ params[f'dense{i}_w'] + params[f'dense{i}_b']
        if i == layers:
            return z, cache
        cache['pre'].append(z)
        a = relu(z)
        if dropout:
            mask = dropout_mask(a.shape, config.dropout_rate, rng)
            cache['masks'].append(mask)
            a = a * mask


def _mlp_backward(params, config, cache, dlogits):
    layers = len(config.hidden_layers) + 1
    grads = {}
    dz = dlogits
    for i in range(layers, 0, -1):
        grads[f'dense{i}_w'] = cache['inputs'][i - 1].T @ dz
        grads[f'dense{i}_b'] = dz.sum(axis=0)
        if i == 1:
            break
        da = dz @ params[f'dense{i}_w'].T
        if cache['dropout']:
            da = da * cache['masks'][i - 2]
        dz = da * (cache['pre'][i - 2] > 0)

    return {name: grads[name] for name in params}


def _as_batch(model, inputs):
    x = np.asarray(inputs, dtype=float)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != model.config.input_length:
        raise ShapeMismatch(f'expected inputs of length '
                            f'{model.config.input_length}, got shape '
                            f'{np.shape(inputs)}')
    return x, single


def forward(model, inputs, dropout_active=False, rng=None,
            return_cache=False):
    '''
    Computes class logits.

    Parameters:
    -----------
    model: NetworkModel
    inputs: np.ndarray
        One vector of length input_length, or a (B, input_length) batch.
    dropout_active: bool, optional (default=False)
        Applies inverted dropout at the configured rate.
    rng: np.random.Generator, optional (default=None)
        Source of dropout masks; required when dropout is active so every
        mask comes from a seeded stream.
    return_cache: bool, optional (default=False)
        Also return the intermediates the backward pass needs.

    Returns:
    --------
    logits: np.ndarray
        (num_classes,) for a single vector, (B, num_classes) for a batch.
    cache: dict
        Only when return_cache is set.
    '''
    x, single = _as_batch(model, inputs)
    dropout = bool(dropout_active) and model.config.dropout_rate > 0
    if dropout and rng is None:
        raise DataError('active dropout needs a seeded rng')

    if model.kind == 'cnn':
        logits, cache = _cnn_forward(model.params, model.config, x, dropout,
                                     rng)
    else:
        logits, cache = _mlp_forward(model.params, model.config, x, dropout,
                                     rng)

    if single:
        logits = logits[0]
    if return_cache:
        return logits, cache
    return logits


def softmax(logits):
    '''Row-wise softmax with max subtraction.'''
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(logits, true_class):
    '''
    Softmax cross-entropy of one logit vector.

    Returns:
    --------
    loss: float
        -log softmax(logits)[true_class], computed stably.
    grad: np.ndarray
        softmax(logits) - onehot(true_class).
    '''
    logits = np.asarray(logits, dtype=float)
    shifted = logits - logits.max()
    log_norm = np.log(np.exp(shifted).sum())
    loss = log_norm - shifted[true_class]

    grad = np.exp(shifted - log_norm)
    grad[true_class] -= 1.0

    return float(loss), grad


def batch_cross_entropy(logits, targets):
    '''Mean cross-entropy over a batch and its gradient w.r.t. logits.'''
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(len(targets))
    loss = np.mean(log_norm - shifted[rows, targets])

    grad = np.exp(shifted - log_norm[:, None])
    grad[rows, targets] -= 1.0

    return float(loss), grad / len(targets)


def backward(model, inputs, true_classes, dropout_active=False, rng=None):
    '''
    Exact gradients of the mean cross-entropy w.r.t. every parameter.

    Runs the forward pass, recording pooling winners, ReLU masks and
    dropout masks, then backpropagates through them.

    Returns:
    --------
    loss: float
    grads: dict
        Same keys and shapes as model.params.
    '''
    x, _ = _as_batch(model, inputs)
    targets = np.atleast_1d(np.asarray(true_classes, dtype=np.int64))
    # Masks drawn here are reused by the backward pass through the cache
    logits, cache = forward(model, x, dropout_active, rng, return_cache=True)
    # Mean over the batch, so dlogits is already divided by B
    loss, dlogits = batch_cross_entropy(logits, targets)

    if model.kind == 'cnn':
        grads = _cnn_backward(model.params, model.config, cache, dlogits)
    else:
        grads = _mlp_backward(model.params, model.config, cache, dlogits)

    return loss, grads


#### OPTIMISER ####
def adam_init(params):
    '''Zero first and second moment accumulators.'''
    return {'m': {k: np.zeros_like(v) for k, v in params.items()},
            'v': {k: np.zeros_like(v) for k, v in params.items()}}


def adam_step(params, grads, state, t, config):
    '''
    One Adam update with bias correction.

    Parameters:
    -----------
    params, grads: dict
        Matching tensors.
    state: dict
        First ('m') and second ('v') moment accumulators.
    t: int
        1-based step index.
    config: TrainConfig

    Returns:
    --------
    new_params, new_state: dict
    '''
    b1 = config.adam_beta1
    b2 = config.adam_beta2
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t

    new_params = {}
    new_state = {'m': {}, 'v': {}}
    for name, value in params.items():
        g = grads[name]
        if g.shape != value.shape:
            raise ShapeMismatch(f'gradient for {name} has shape {g.shape}, '
                                f'expected {value.shape}')
        m = b1 * state['m'][name] + (1.0 - b1) * g
        v = b2 * state['v'][name] + (1.0 - b2) * (g * g)
        step = config.learning_rate * (m / bc1) / (np.sqrt(v / bc2)
                                                   + config.adam_epsilon)
        new_params[name] = value - step
        new_state['m'][name] = m
        new_state['v'][name] = v

    return new_params, new_state


#### TRAINING ####
class EarlyStopping:
    '''
    Keeps the parameters of the best validation loss seen so far.

    Training stops once ``patience`` epochs pass without a strict
    improvement.
    '''

    def __init__(self, patience):
        self.patience = patience
        self.best_loss = np.inf
        self.best_epoch = 0
        self.best_params = None

    def update(self, epoch, loss, params):
        '''Records an epoch; returns True when training should stop.'''
        if loss < self.best_loss:
            self.best_loss = loss
            self.best_epoch = epoch
            self.best_params = {k: v.copy() for k, v in params.items()}
        return epoch - self.best_epoch >= self.patience


def split_validation(labels, train_config):
    '''Stratified train/validation indices; raises DegenerateSplit.'''
    splitter = StratifiedShuffleSplit(
        n_splits=1, test_size=train_config.validation_fraction,
        random_state=train_config.seed)
    try:
        train_idx, val_idx = next(splitter.split(np.zeros(len(labels)),
                                                 labels))
    except ValueError as e:
        raise DegenerateSplit(f'cannot stratify validation split: {e}') \
            from e

    return np.sort(train_idx), np.sort(val_idx)


def evaluate_loss(model, vectors, labels, batch_size=256):
    '''Mean loss and accuracy without dropout.'''
    total = 0.0
    correct = 0
    for start in range(0, len(labels), batch_size):
        x = vectors[start:start + batch_size]
        y = labels[start:start + batch_size]
        logits = forward(model, x)
        loss, _ = batch_cross_entropy(logits, y)
        total += loss * len(y)
        correct += int(np.sum(logits.argmax(axis=1) == y))

    return total / len(labels), correct / len(labels)


def fit(model, dataset, train_config, validation=None):
    '''
    Trains a model in place with Adam and early stopping.

    Parameters:
    -----------
    model: NetworkModel
        Freshly initialised model.
    dataset: LabeledDataset
    train_config: TrainConfig
    validation: tuple, optional (default=None)
        (vectors, labels) used instead of a stratified split of dataset.

    Returns:
    --------
    NetworkModel with the parameters of its best validation epoch.
    '''
    num_classes = len(dataset.class_names)
    if num_classes < 2 or len(np.unique(dataset.labels)) < 2:
        raise DegenerateSplit('training needs at least two classes')
    if model.config.num_classes != num_classes:
        raise ShapeMismatch(f'model has {model.config.num_classes} outputs, '
                            f'dataset has {num_classes} classes')

    # Hold out a stratified validation split unless one is given
    if validation is None:
        train_idx, val_idx = split_validation(dataset.labels, train_config)
        x_train, y_train = dataset.vectors[train_idx], \
            dataset.labels[train_idx]
        x_val, y_val = dataset.vectors[val_idx], dataset.labels[val_idx]
    else:
        x_train, y_train = dataset.vectors, dataset.labels
        x_val, y_val = (np.asarray(v) for v in validation)

    # Every class must appear in the training split
    missing = set(np.unique(dataset.labels)) - set(np.unique(y_train))
    if missing:
        names = [dataset.class_names[i] for i in sorted(missing)]
        raise DegenerateSplit(f'classes missing from training split: '
                              f'{names}')

    train_dropout = model.uncertainty and model.config.dropout_rate > 0
    # Stream 1 drives shuffling and dropout masks; stream 0 was init
    rng = np.random.default_rng([train_config.seed, 1])
    state = adam_init(model.params)
    stopper = EarlyStopping(train_config.patience)
    step = 0
    model.history = []

    for epoch in range(1, train_config.max_epochs + 1):
        # Fresh shuffle each epoch, then one Adam step per mini-batch
        order = rng.permutation(len(y_train))
        epoch_loss = 0.0
        for start in range(0, len(order), train_config.batch_size):
            batch = order[start:start + train_config.batch_size]
            loss, grads = backward(model, x_train[batch], y_train[batch],
                                   train_dropout, rng)
            step += 1
            model.params, state = adam_step(model.params, grads, state, step,
                                            train_config)
            epoch_loss += loss * len(batch)

        train_loss = epoch_loss / len(order)
        # Validation runs without dropout
        val_loss, val_accuracy = evaluate_loss(model, x_val, y_val)
        if not np.isfinite(train_loss) or not np.isfinite(val_loss):
            raise InvariantViolation(f'non-finite loss at epoch {epoch}')

        model.history.append({'epoch': epoch, 'train_loss': train_loss,
                              'val_loss': val_loss,
                              'val_accuracy': val_accuracy})
        logger.info('epoch %d train_loss %.5f val_loss %.5f val_acc %.4f',
                    epoch, train_loss, val_loss, val_accuracy)

        # Only a strictly lower val_loss resets patience
        if stopper.update(epoch, val_loss, model.params):
            logger.info('Early stopping at epoch %d (best epoch %d)', epoch,
                        stopper.best_epoch)
            break

    # Roll back to the best epoch, not the last
    model.params = stopper.best_params
    model.best_epoch = stopper.best_epoch

    return model


def train(dataset, cnn_config, train_config, validation=None):
    '''Trains the 1D-CNN (or its uncertainty-aware variant).'''
    model = new_model('cnn', cnn_config, dataset.class_names,
                      train_config.seed)
    return fit(model, dataset, train_config, validation)


def train_mlp(dataset, hidden_layers, train_config, dropout_rate=0.0,
              validation=None):
    '''Trains the dense-only baseline with the same kernels as the CNN.'''
    config = MlpConfig(hidden_layers=tuple(hidden_layers),
                       num_classes=len(dataset.class_names),
                       dropout_rate=dropout_rate,
                       input_length=dataset.grid.num_points)
    model = new_model('mlp', config, dataset.class_names, train_config.seed)
    return fit(model, dataset, train_config, validation)


#### INFERENCE ####
def predict(model, inputs):
    '''
    Deterministic prediction: one dropout-free pass, label = argmax.

    Returns a Prediction for one vector or a list for a batch.
    '''
    x, single = _as_batch(model, inputs)
    probs = softmax(forward(model, x))

    predictions = [Prediction(p, np.zeros_like(p), int(p.argmax()),
                              float(p.max())) for p in probs]

    return predictions[0] if single else predictions


def mc_predict(model, inputs, train_config, stream=0):
    '''
    Monte Carlo dropout prediction over mc_passes stochastic passes.

    Pass p of this input draws its masks from the stream
    (seed, stream * mc_passes + p). The label is UNKNOWN when the largest
    mean probability is below unknown_threshold.
    '''
    x, _ = _as_batch(model, inputs)
    if len(x) != 1:
        return [mc_predict(model, row, train_config, stream * len(x) + i)
                for i, row in enumerate(x)]

    if model.config.dropout_rate == 0:
        mean = softmax(forward(model, x))[0]
        variance = np.zeros_like(mean)
    else:
        passes = train_config.mc_passes
        probs = np.empty((passes, model.config.num_classes))
        for p in range(passes):
            rng = np.random.default_rng([train_config.seed,
                                         stream * passes + p])
            probs[p] = softmax(forward(model, x, True, rng))[0]
        mean = probs.mean(axis=0)
        variance = probs.var(axis=0)

    best = float(mean.max())
    label = int(mean.argmax())
    if best < train_config.unknown_threshold:
        label = UNKNOWN

    return Prediction(mean, variance, label, best)


def mc_predict_batch(model, vectors, train_config):
    '''mc_predict for each row, input i using stream i.'''
    return [mc_predict(model, row, train_config, stream=i)
            for i, row in enumerate(np.asarray(vectors, dtype=float))]


def accuracy(model, dataset, train_config=None):
    '''
    Fraction of rows predicted correctly.

    With train_config the Monte Carlo path is used and UNKNOWN counts as a
    miss.
    '''
    if train_config is None:
        labels = [p.label for p in predict(model, dataset.vectors)]
    else:
        labels = [p.label for p in mc_predict_batch(model, dataset.vectors,
                                                    train_config)]

    return float(np.mean(np.asarray(labels) == dataset.labels))
