"""
A small convolutional event-to-image network with analytic backpropagation.

The network is a chain of 3x3 same-padded convolutions, leaky ReLU everywhere except a
sigmoid head, cut by two split points into a frontal, a middle and a rear part. Private
training retrains the network on watermark-infused voxels so that its outputs match
the original network on clean voxels, while the images obtained by running the
original network's later layers on the private activations lose sharpness.

Inference runs in float32 (the precision of the split inference wire format), training
in float64.
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from evpriv import exceptions, seeds
from evpriv._codec import formats
from evpriv.events import FrameImage, VoxelGrid

_logger = logging.getLogger(__name__)

LEAKY_SLOPE = 0.1
DEFAULT_WIDTHS = (8, 16, 64, 16, 8)
DEFAULT_SPLIT = (2, 4)
PARTS = ('F1', 'F2', 'F3')

_SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
_SOBEL_Y = _SOBEL_X.T


class Layer(NamedTuple):
    kernel: np.ndarray
    bias: np.ndarray
    activation: str

    @property
    def c_in(self) -> int:
        return self.kernel.shape[2]

    @property
    def c_out(self) -> int:
        return self.kernel.shape[3]


Layers = Tuple[Layer, ...]


def _frozen_layer(layer: Layer) -> Layer:
    kernel = np.array(layer.kernel, dtype=np.float64, copy=True)
    bias = np.array(layer.bias, dtype=np.float64, copy=True)
    if kernel.ndim != 4 or kernel.shape[:2] != (3, 3) or bias.shape != (kernel.shape[3],):
        raise exceptions.ShapeError(f"layer kernel {kernel.shape} and bias {bias.shape} are not 3x3xCinxCout / Cout")
    if layer.activation not in ('leaky_relu', 'sigmoid'):
        raise exceptions.ConfigError(f"unknown activation '{layer.activation}'")
    kernel.setflags(write=False)
    bias.setflags(write=False)
    return Layer(kernel, bias, layer.activation)


def check_chain(layers: Sequence[Layer]) -> None:
    """
    Raises:
        ShapeError: if consecutive layers disagree in channel count
    """
    for i in range(1, len(layers)):
        if layers[i].c_in != layers[i - 1].c_out:
            raise exceptions.ShapeError(f"layer {i} expects {layers[i].c_in} channels, "
                                        f"layer {i - 1} produces {layers[i - 1].c_out}")


@dataclass(frozen=True)
class ConvNetParams:
    """
    Parameters of a three part network. ``split_points = (a, b)`` puts layers ``[0, a)``
    in the frontal part F1, ``[a, b)`` in the middle part F2 and ``[b, n)`` in the rear F3.
    """
    layers: Layers
    split_points: Tuple[int, int] = DEFAULT_SPLIT

    def __post_init__(self):
        layers = tuple(_frozen_layer(layer) for layer in self.layers)
        object.__setattr__(self, 'layers', layers)
        object.__setattr__(self, 'split_points', (int(self.split_points[0]), int(self.split_points[1])))
        a, b = self.split_points
        if not 0 < a < b < len(layers):
            raise exceptions.ConfigError(f"split points {self.split_points} must be increasing and interior to "
                                         f"{len(layers)} layers")
        check_chain(layers)
        if layers[-1].c_out != 1 or layers[-1].activation != 'sigmoid':
            raise exceptions.ConfigError("the last layer must have one output channel and a sigmoid activation")

    @property
    def bins(self) -> int:
        return self.layers[0].c_in

    @property
    def widths(self) -> Tuple[int, ...]:
        return tuple(layer.c_out for layer in self.layers[:-1])

    @property
    def frontal(self) -> Layers:
        return self.layers[:self.split_points[0]]

    @property
    def middle(self) -> Layers:
        return self.layers[self.split_points[0]:self.split_points[1]]

    @property
    def rear(self) -> Layers:
        return self.layers[self.split_points[1]:]

    def part(self, name: str) -> Layers:
        if name == 'F1':
            return self.frontal
        if name == 'F2':
            return self.middle
        if name == 'F3':
            return self.rear
        raise exceptions.InterfaceError(f"unknown network part '{name}', choose from {', '.join(PARTS)}")

    def with_layers(self, layers: Sequence[Layer]) -> 'ConvNetParams':
        return ConvNetParams(tuple(layers), self.split_points)

    def with_middle(self, middle: Sequence[Layer]) -> 'ConvNetParams':
        """The same network with its middle part replaced."""
        a, b = self.split_points
        if len(middle) != b - a:
            raise exceptions.ShapeError(f"middle part has {len(middle)} layers, expected {b - a}")
        return self.with_layers(self.layers[:a] + tuple(middle) + self.layers[b:])


def init_params(bins: int, widths: Sequence[int] = DEFAULT_WIDTHS, split_points: Tuple[int, int] = DEFAULT_SPLIT,
                seed: int = 0) -> ConvNetParams:
    """
    Randomly initialised network, weights and biases uniform in
    ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]`` with ``fan_in = 9 * Cin``.
    """
    rng = seeds.generator(seed, 'init')
    channels = [bins] + list(widths) + [1]
    layers = []
    for i in range(len(channels) - 1):
        c_in, c_out = channels[i], channels[i + 1]
        bound = 1.0 / np.sqrt(9 * c_in)
        kernel = rng.uniform(-bound, bound, size=(3, 3, c_in, c_out))
        bias = rng.uniform(-bound, bound, size=c_out)
        layers.append(Layer(kernel, bias, 'sigmoid' if i == len(channels) - 2 else 'leaky_relu'))
    return ConvNetParams(tuple(layers), split_points)


def _im2col(x: np.ndarray) -> np.ndarray:
    n, c, h, w = x.shape
    padded = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    windows = sliding_window_view(padded, (3, 3), axis=(2, 3))
    # rows (n, y, x), columns (i, j, c) to match kernel.reshape(9 * Cin, Cout)
    return windows.transpose(0, 2, 3, 4, 5, 1).reshape(n * h * w, 9 * c)


def _col2im(cols: np.ndarray, shape: Tuple[int, int, int, int]) -> np.ndarray:
    n, c, h, w = shape
    blocks = cols.reshape(n, h, w, 3, 3, c)
    padded = np.zeros((n, c, h + 2, w + 2), dtype=cols.dtype)
    for i in range(3):
        for j in range(3):
            padded[:, :, i:i + h, j:j + w] += blocks[:, :, :, i, j, :].transpose(0, 3, 1, 2)
    return padded[:, :, 1:-1, 1:-1]


def _conv(x: np.ndarray, layer: Layer) -> Tuple[np.ndarray, np.ndarray]:
    n, c, h, w = x.shape
    if c != layer.c_in:
        raise exceptions.ShapeError(f"layer expects {layer.c_in} input channels, got {c}")
    cols = _im2col(x)
    kernel = layer.kernel.astype(x.dtype, copy=False).reshape(9 * c, layer.c_out)
    z = cols @ kernel + layer.bias.astype(x.dtype, copy=False)
    return z.reshape(n, h, w, layer.c_out).transpose(0, 3, 1, 2), cols


def _activate(z: np.ndarray, activation: str) -> np.ndarray:
    if activation == 'sigmoid':
        return expit(z)
    return np.where(z > 0, z, z * LEAKY_SLOPE)


def _activation_grad(z: np.ndarray, a: np.ndarray, activation: str) -> np.ndarray:
    if activation == 'sigmoid':
        return a * (1 - a)
    return np.where(z > 0, 1.0, LEAKY_SLOPE)


def run_layers(layers: Sequence[Layer], x: np.ndarray, dtype=np.float32) -> np.ndarray:
    """
    Apply layers to a C x H x W activation or an N x C x H x W batch.
    """
    x = np.asarray(x, dtype=dtype)
    single = x.ndim == 3
    if single:
        x = x[None]
    if x.ndim != 4:
        raise exceptions.ShapeError(f"activations must be CxHxW or NxCxHxW, got shape {x.shape}")
    for layer in layers:
        z, _ = _conv(x, layer)
        x = _activate(z, layer.activation)
    return x[0] if single else x


def forward_split(part: str, params: ConvNetParams, activation: np.ndarray, dtype=np.float32) -> np.ndarray:
    """
    Run one part of the network on a C x H x W activation.

    Args:
        part: ``F1``, ``F2`` or ``F3``
        params: the network
        activation: the part's input, the voxel grid data for F1

    Returns:
        the part's output activation
    """
    return run_layers(params.part(part), activation, dtype)


def forward(params: ConvNetParams, grid: VoxelGrid, dtype=np.float32) -> FrameImage:
    """Reconstruct an image; the composition ``F3(F2(F1(E)))``."""
    if grid.bins != params.bins:
        raise exceptions.ShapeError(f"network expects {params.bins} bins, voxel grid has {grid.bins}")
    x = grid.data
    for part in PARTS:
        x = forward_split(part, params, x, dtype)
    return FrameImage(x[0].astype(np.float64))


def layer_flops(params: ConvNetParams, height: int, width: int) -> List[int]:
    """Floating point operations per layer: a multiply and an add per kernel tap plus the bias."""
    return [(2 * 9 * layer.c_in + 1) * layer.c_out * height * width for layer in params.layers]


def client_flop_fraction(params: ConvNetParams, height: int, width: int) -> float:
    """Share of the operations that run on the client (frontal and rear parts)."""
    flops = layer_flops(params, height, width)
    a, b = params.split_points
    return (sum(flops[:a]) + sum(flops[b:])) / sum(flops)


def _sobel_responses(images: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    h, w = images.shape[-2:]
    gx = np.zeros(images.shape[:-2] + (h - 2, w - 2))
    gy = np.zeros_like(gx)
    for i in range(3):
        for j in range(3):
            patch = images[..., i:i + h - 2, j:j + w - 2]
            gx += _SOBEL_X[i, j] * patch
            gy += _SOBEL_Y[i, j] * patch
    return gx, gy


def _sharpness(images: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Per image mean Sobel magnitude of an ... x H x W stack, its gradient and the
    nonzero-magnitude pattern.
    """
    h, w = images.shape[-2:]
    if h < 3 or w < 3:
        raise exceptions.ShapeError(f"sharpness needs images of at least 3x3 pixels, got {h}x{w}")
    gx, gy = _sobel_responses(images)
    magnitude = np.sqrt(gx ** 2 + gy ** 2)
    count = (h - 2) * (w - 2)
    value = magnitude.sum(axis=(-2, -1)) / count
    nonzero = magnitude > 0
    safe = np.where(nonzero, magnitude, 1.0)
    dgx = np.where(nonzero, gx / safe, 0.0) / count
    dgy = np.where(nonzero, gy / safe, 0.0) / count
    grad = np.zeros(images.shape)
    for i in range(3):
        for j in range(3):
            grad[..., i:i + h - 2, j:j + w - 2] += _SOBEL_X[i, j] * dgx + _SOBEL_Y[i, j] * dgy
    return value, grad, nonzero


def sobel_sharpness(image: Union[FrameImage, np.ndarray]) -> float:
    """
    Mean gradient magnitude ``sqrt(Gx^2 + Gy^2)`` over the interior pixels, with the
    standard 3x3 Sobel responses.

    Raises:
        ShapeError: for images smaller than 3x3
    """
    pixels = image.pixels if isinstance(image, FrameImage) else np.asarray(image, dtype=np.float64)
    value, _, _ = _sharpness(pixels)
    return float(value)


Distance = Callable[[np.ndarray, np.ndarray], Tuple[float, np.ndarray]]


def mae_distance(prediction: np.ndarray, target: np.ndarray) -> Tuple[float, np.ndarray]:
    """
    Mean absolute difference and its (sub)gradient with respect to the prediction.
    Every image in a batch has the same size, so this is also the batch mean of the
    per image distances.
    """
    diff = prediction - target
    return float(np.abs(diff).mean()), np.sign(diff) / diff.size


@dataclass(frozen=True)
class NoiseWatermark:
    """A secret standard normal tensor regenerated from its seed."""
    seed: int
    shape: Tuple[int, int, int]
    values: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, 'shape', tuple(int(s) for s in self.shape))
        values = seeds.generator(self.seed, 'watermark').standard_normal(self.shape)
        values.setflags(write=False)
        object.__setattr__(self, 'values', values)


def make_watermark(seed: int, shape: Tuple[int, int, int]) -> NoiseWatermark:
    return NoiseWatermark(seed, shape)


def infuse(grid: VoxelGrid, watermark: NoiseWatermark) -> VoxelGrid:
    """
    Add the watermark to a voxel grid.

    Raises:
        ShapeError: if the shapes differ
    """
    if tuple(grid.shape) != watermark.shape:
        raise exceptions.ShapeError(f"watermark shape {watermark.shape} does not match voxel grid {grid.shape}")
    return grid.replace(grid.data + watermark.values)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 2
    epochs: int = 10
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise exceptions.ConfigError(f"learning rate must be positive, got {self.learning_rate}")
        if self.batch_size < 1:
            raise exceptions.ConfigError(f"batch size must be at least 1, got {self.batch_size}")
        if self.epochs < 0:
            raise exceptions.ConfigError(f"epoch count must be non-negative, got {self.epochs}")


class TrainResult(NamedTuple):
    params: ConvNetParams
    # history[e] is the full data loss after e epochs
    history: List[float]


Gradients = List[Tuple[np.ndarray, np.ndarray]]


class Adam:
    """
    Adam over a list of (kernel, bias) pairs, updated in place.
    """

    def __init__(self, cfg: TrainConfig, arrays: List[List[np.ndarray]]):
        self.cfg = cfg
        self.arrays = arrays
        self.m = [[np.zeros_like(a) for a in pair] for pair in arrays]
        self.v = [[np.zeros_like(a) for a in pair] for pair in arrays]
        self.steps = 0

    def step(self, grads: Gradients) -> None:
        cfg = self.cfg
        self.steps += 1
        correction1 = 1 - cfg.beta1 ** self.steps
        correction2 = 1 - cfg.beta2 ** self.steps
        for pair, m_pair, v_pair, grad_pair in zip(self.arrays, self.m, self.v, grads):
            for array, m, v, grad in zip(pair, m_pair, v_pair, grad_pair):
                m *= cfg.beta1
                m += (1 - cfg.beta1) * grad
                v *= cfg.beta2
                v += (1 - cfg.beta2) * grad ** 2
                array -= cfg.learning_rate * (m / correction1) / (np.sqrt(v / correction2) + cfg.epsilon)


class _Trace(NamedTuple):
    shape: Tuple[int, int, int, int]
    cols: np.ndarray
    z: np.ndarray
    a: np.ndarray


def _forward_trace(layers: Sequence[Layer], x: np.ndarray) -> Tuple[np.ndarray, List[_Trace]]:
    traces = []
    for layer in layers:
        z, cols = _conv(x, layer)
        a = _activate(z, layer.activation)
        traces.append(_Trace(x.shape, cols, z, a))
        x = a
    return x, traces


def _backward(layers: Sequence[Layer], traces: List[_Trace], grad: np.ndarray, with_params: bool = True
              ) -> Tuple[np.ndarray, Gradients]:
    param_grads: Gradients = []
    for layer, trace in zip(reversed(layers), reversed(traces)):
        dz = grad * _activation_grad(trace.z, trace.a, layer.activation)
        dz_flat = dz.transpose(0, 2, 3, 1).reshape(-1, layer.c_out)
        if with_params:
            param_grads.append(((trace.cols.T @ dz_flat).reshape(layer.kernel.shape), dz_flat.sum(axis=0)))
        grad = _col2im(dz_flat @ layer.kernel.reshape(-1, layer.c_out).T, trace.shape)
    param_grads.reverse()
    return grad, param_grads


def _shapes(layers: Sequence[Layer]) -> List[Tuple[int, ...]]:
    return [layer.kernel.shape for layer in layers]


def _kinks(traces: Sequence[_Trace], layers: Sequence[Layer]) -> List[np.ndarray]:
    return [(t.z > 0).ravel() for t, layer in zip(traces, layers) if layer.activation == 'leaky_relu']


class Evaluation(NamedTuple):
    loss: float
    grads: Gradients
    input_grad: np.ndarray
    # sign pattern of every non-differentiable point the loss passes through
    signature: np.ndarray


def private_objective(private: ConvNetParams, original: ConvNetParams, inputs: np.ndarray, targets: np.ndarray,
                      adv_weight: float = 1.0, distance: Distance = mae_distance) -> Evaluation:
    """
    ``d(F(E), F'(E~)) + w * (s(F3(F2(F1'(E~)))) + s(F3(F2'(F1'(E~)))))`` on a batch, with its
    gradient in the private parameters and in the infused input.

    Args:
        private: the network being trained, F'
        original: the frozen original network F; only its middle and rear parts are used
        inputs: N x B x H x W watermark-infused voxels
        targets: N x 1 x H x W original reconstructions of the clean voxels
        adv_weight: weight w of the sharpness terms, 0 disables them
        distance: reconstruction distance d
    """
    if private.split_points != original.split_points \
            or _shapes(private.middle + private.rear) != _shapes(original.middle + original.rear):
        raise exceptions.ShapeError("private and original networks must share their architecture after the frontal part")
    inputs = np.asarray(inputs, dtype=np.float64)
    front, front_trace = _forward_trace(private.frontal, inputs)
    mid, mid_trace = _forward_trace(private.middle, front)
    out, rear_trace = _forward_trace(private.rear, mid)
    loss, grad_out = distance(out, targets)
    signature = _kinks(front_trace, private.frontal) + _kinks(mid_trace, private.middle) \
        + _kinks(rear_trace, private.rear) + [(out > targets).ravel(), (out < targets).ravel()]

    grad_mid, rear_grads = _backward(private.rear, rear_trace, grad_out)
    grad_front_extra = np.zeros_like(front)
    if adv_weight:
        n = len(inputs)
        # original middle and rear on private frontal activations
        swapped_mid, swapped_mid_trace = _forward_trace(original.middle, front)
        swapped_out, swapped_rear_trace = _forward_trace(original.rear, swapped_mid)
        sharp, sharp_grad, nonzero = _sharpness(swapped_out)
        loss += adv_weight * float(sharp.mean())
        g, _ = _backward(original.rear, swapped_rear_trace, adv_weight * sharp_grad / n, with_params=False)
        grad_front_extra, _ = _backward(original.middle, swapped_mid_trace, g, with_params=False)
        signature += _kinks(swapped_mid_trace, original.middle) + _kinks(swapped_rear_trace, original.rear) \
            + [nonzero.ravel()]

        # original rear on private middle activations
        swapped_out, swapped_rear_trace = _forward_trace(original.rear, mid)
        sharp, sharp_grad, nonzero = _sharpness(swapped_out)
        loss += adv_weight * float(sharp.mean())
        g, _ = _backward(original.rear, swapped_rear_trace, adv_weight * sharp_grad / n, with_params=False)
        grad_mid = grad_mid + g
        signature += _kinks(swapped_rear_trace, original.rear) + [nonzero.ravel()]

    grad_front, mid_grads = _backward(private.middle, mid_trace, grad_mid)
    input_grad, front_grads = _backward(private.frontal, front_trace, grad_front + grad_front_extra)
    return Evaluation(loss, front_grads + mid_grads + rear_grads, input_grad, np.concatenate(signature))


def supervised_objective(params: ConvNetParams, inputs: np.ndarray, targets: np.ndarray,
                         distance: Distance = mae_distance) -> Evaluation:
    """``d(F(E), I)`` on a batch and its gradients."""
    out, traces = _forward_trace(params.layers, np.asarray(inputs, dtype=np.float64))
    loss, grad_out = distance(out, targets)
    input_grad, grads = _backward(params.layers, traces, grad_out)
    signature = _kinks(traces, params.layers) + [(out > targets).ravel(), (out < targets).ravel()]
    return Evaluation(loss, grads, input_grad, np.concatenate(signature))


Objective = Callable[[ConvNetParams, np.ndarray], Evaluation]


def _optimize(initial: ConvNetParams, objective: Objective, size: int, cfg: TrainConfig, label: str
              ) -> TrainResult:
    """
    Mini-batch Adam. ``objective(params, indices)`` evaluates a batch of samples; the
    order of samples is reshuffled every epoch from the config seed.
    """
    arrays = [[np.array(layer.kernel), np.array(layer.bias)] for layer in initial.layers]
    optimizer = Adam(cfg, arrays)

    def current() -> ConvNetParams:
        return initial.with_layers([Layer(k, b, layer.activation) for (k, b), layer in zip(arrays, initial.layers)])

    everything = np.arange(size)
    history = [objective(initial, everything).loss]
    _logger.info("%s: epoch 0 loss %.6f", label, history[0])
    for epoch in range(1, cfg.epochs + 1):
        order = seeds.generator(cfg.seed, 'shuffle', epoch).permutation(size)
        for start in range(0, size, cfg.batch_size):
            optimizer.step(objective(current(), order[start:start + cfg.batch_size]).grads)
        history.append(objective(current(), everything).loss)
        _logger.info("%s: epoch %d loss %.6f", label, epoch, history[-1])
    return TrainResult(current(), history)


def _stack(grids: Sequence[VoxelGrid]) -> np.ndarray:
    if not grids:
        raise exceptions.OperationalError("cannot train on an empty data set")
    shapes = {grid.shape for grid in grids}
    if len(shapes) != 1:
        raise exceptions.ShapeError(f"training voxels differ in shape: {sorted(shapes)}")
    return np.stack([grid.data for grid in grids])


def reconstruct_batch(params: ConvNetParams, inputs: np.ndarray) -> np.ndarray:
    """float64 forward pass of an N x B x H x W batch."""
    return run_layers(params.layers, inputs, dtype=np.float64)


def train_private(original: ConvNetParams, data: Sequence[VoxelGrid], watermark: Optional[NoiseWatermark],
                  cfg: TrainConfig = TrainConfig(), adv_weight: float = 1.0, distance: Distance = mae_distance,
                  initial: Optional[ConvNetParams] = None) -> TrainResult:
    """
    Train a private network F' against the frozen original F.

    Args:
        original: the original network, never modified
        data: clean voxel grids
        watermark: the secret noise added to every input; None trains without it
        cfg: optimiser settings; the initialisation is drawn from ``cfg.seed``
        adv_weight: weight of the two sharpness terms, 0 trains on reconstruction only
        distance: reconstruction distance
        initial: start from these parameters instead of a random initialisation

    Returns:
        the trained parameters and the loss trace

    Raises:
        OperationalError: on an empty data set
    """
    clean = _stack(data)
    targets = reconstruct_batch(original, clean)
    inputs = clean + watermark.values if watermark is not None else clean
    if initial is None:
        initial = init_params(original.bins, original.widths, original.split_points, seed=cfg.seed)

    def objective(params: ConvNetParams, indices: np.ndarray) -> Evaluation:
        return private_objective(params, original, inputs[indices], targets[indices], adv_weight, distance)

    return _optimize(initial, objective, len(clean), cfg, "private training")


def train_supervised(initial: ConvNetParams, inputs: Sequence[VoxelGrid], targets: np.ndarray,
                     cfg: TrainConfig = TrainConfig(), distance: Distance = mae_distance,
                     label: str = "supervised training") -> TrainResult:
    """Fit ``F(E_i)`` to the N x 1 x H x W targets."""
    batch = _stack(inputs)
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape != (len(batch), 1) + batch.shape[2:]:
        raise exceptions.ShapeError(f"targets of shape {targets.shape} do not match {len(batch)} voxel grids")

    def objective(params: ConvNetParams, indices: np.ndarray) -> Evaluation:
        return supervised_objective(params, batch[indices], targets[indices], distance)

    return _optimize(initial, objective, len(batch), cfg, label)


def fit_reconstruction(params: ConvNetParams, voxels: Sequence[VoxelGrid], frames: Sequence[FrameImage],
                       cfg: TrainConfig = TrainConfig()) -> TrainResult:
    """
    Train a network to reconstruct intensity frames from voxel grids; this produces the
    original network F.
    """
    if len(voxels) != len(frames):
        raise exceptions.ShapeError(f"{len(voxels)} voxel grids but {len(frames)} frames")
    targets = np.stack([frame.pixels for frame in frames])[:, None] if frames else np.zeros((0, 1, 1, 1))
    return train_supervised(params, voxels, targets, cfg, label="reconstruction fit")


def read_network(path: Union[str, Path]) -> ConvNetParams:
    layers, split_points = formats.unpack_network(Path(path).read_bytes())
    return ConvNetParams(tuple(Layer(*layer) for layer in layers), split_points)


def write_network(path: Union[str, Path], params: ConvNetParams) -> None:
    Path(path).write_bytes(formats.pack_network(params.layers, params.split_points))


def write_middle(path: Union[str, Path], params: ConvNetParams) -> None:
    """Store only F2, the part shared with the inference provider."""
    Path(path).write_bytes(formats.pack_network(params.middle, (0, len(params.middle))))


def read_middle(path: Union[str, Path]) -> Layers:
    layers, split_points = formats.unpack_network(Path(path).read_bytes())
    if split_points != (0, len(layers)) or not layers:
        raise exceptions.FormatError(f"{path} does not hold a middle network part")
    middle = tuple(_frozen_layer(Layer(*layer)) for layer in layers)
    check_chain(middle)
    return middle


class ClientParts(NamedTuple):
    frontal: Layers
    rear: Layers


def write_ends(path: Union[str, Path], params: ConvNetParams) -> None:
    """Store F1 and F3, the parts that stay with the user."""
    a = params.split_points[0]
    Path(path).write_bytes(formats.pack_network(params.frontal + params.rear, (a, a)))


def read_ends(path: Union[str, Path]) -> ClientParts:
    layers, (a, b) = formats.unpack_network(Path(path).read_bytes())
    if a != b or not 0 < a < len(layers):
        raise exceptions.FormatError(f"{path} does not hold the frontal and rear network parts")
    layers = [_frozen_layer(Layer(*layer)) for layer in layers]
    parts = ClientParts(tuple(layers[:a]), tuple(layers[a:]))
    check_chain(parts.frontal)
    check_chain(parts.rear)
    return parts


def read_watermark(path: Union[str, Path]) -> NoiseWatermark:
    seed, shape = formats.unpack_watermark(Path(path).read_bytes())
    return NoiseWatermark(seed, shape)


def write_watermark(path: Union[str, Path], watermark: NoiseWatermark) -> None:
    Path(path).write_bytes(formats.pack_watermark(watermark.seed, watermark.shape))
