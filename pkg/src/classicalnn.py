"""Minimal 1D-CNN / dense network stack with exact backpropagation.

Activations are plain numpy arrays (``Tensor``): conv blocks take
``[batch, channels, time]``, dense layers take ``[batch, features]``.
Every layer caches what its backward pass needs during `forward`.
Layers whose params are marked non-trainable still return input
gradients but report zero parameter gradients, and their batch norm
always runs on the stored running statistics.
"""
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from pydantic import BaseModel, Field

from src.errors import InvalidArgumentError, StateError
from src.gradopt import relative_error

logger = logging.getLogger(__name__)

Tensor = np.ndarray

BN_EPS = 1e-5
BN_MOMENTUM = 0.1
CLASSICAL_CHECK_EPS = 1e-6

TRAINABLE_FIELDS = ("weights", "bias", "bn_gamma", "bn_beta")
BUFFER_FIELDS = ("bn_running_mean", "bn_running_var")


class Mode(str, Enum):
    TRAIN = "train"
    EVAL = "eval"


class Activation(str, Enum):
    RELU = "relu"
    NONE = "none"


class ConvBlockConfig(BaseModel):
    """Conv1D -> BN -> ReLU -> max-pool."""
    in_channels: int = Field(gt=0)
    out_channels: int = Field(gt=0)
    kernel: int = Field(gt=0)
    stride: int = Field(default=1, gt=0)
    pool: int = Field(default=1, gt=0)

    def conv_length(self, time: int) -> int:
        return (time - self.kernel) // self.stride + 1

    def pool_width(self, conv_length: int) -> int:
        """Pool window; shrinks to the available frames when fewer than `pool` remain."""
        return max(1, min(self.pool, conv_length))

    def output_length(self, time: int) -> int:
        conv = self.conv_length(time)
        return conv // self.pool_width(conv)


DEFAULT_CONV_BLOCKS: List[ConvBlockConfig] = [
    ConvBlockConfig(in_channels=1, out_channels=32, kernel=80, stride=16, pool=4),
    ConvBlockConfig(in_channels=32, out_channels=64, kernel=3, stride=1, pool=4),
    ConvBlockConfig(in_channels=64, out_channels=64, kernel=3, stride=1, pool=4),
    ConvBlockConfig(in_channels=64, out_channels=64, kernel=3, stride=1, pool=4),
]


@dataclass
class LayerParams:
    """Weights of one layer; batch-norm fields are set for conv blocks only."""
    weights: Tensor
    bias: Tensor
    bn_gamma: Optional[Tensor] = None
    bn_beta: Optional[Tensor] = None
    bn_running_mean: Optional[Tensor] = None
    bn_running_var: Optional[Tensor] = None
    trainable: bool = True

    def tensors(self) -> Dict[str, Tensor]:
        names = TRAINABLE_FIELDS + BUFFER_FIELDS
        return {n: getattr(self, n) for n in names if getattr(self, n) is not None}

    def learnable(self) -> Dict[str, Tensor]:
        """Tensors an optimizer may update (running statistics excluded)."""
        return {n: getattr(self, n) for n in TRAINABLE_FIELDS if getattr(self, n) is not None}

    def count(self) -> int:
        return int(sum(t.size for t in self.learnable().values()))


def _fan_in_uniform(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int) -> Tensor:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


def init_conv_params(cfg: ConvBlockConfig, rng: np.random.Generator) -> LayerParams:
    return LayerParams(
        weights=_fan_in_uniform(rng, (cfg.out_channels, cfg.in_channels, cfg.kernel), cfg.in_channels * cfg.kernel),
        bias=np.zeros(cfg.out_channels),
        bn_gamma=np.ones(cfg.out_channels),
        bn_beta=np.zeros(cfg.out_channels),
        bn_running_mean=np.zeros(cfg.out_channels),
        bn_running_var=np.ones(cfg.out_channels),
    )


def init_dense_params(n_in: int, n_out: int, rng: np.random.Generator) -> LayerParams:
    return LayerParams(weights=_fan_in_uniform(rng, (n_out, n_in), n_in), bias=np.zeros(n_out))


def _check_finite(x: Tensor, where: str) -> None:
    if not np.all(np.isfinite(x)):
        raise InvalidArgumentError(f"non-finite values in {where}")


class Layer:
    """Common forward/backward contract."""

    def __init__(self, params: LayerParams):
        self.params = params
        self._cache: Optional[dict] = None

    def forward(self, x: Tensor, mode: Mode = Mode.EVAL) -> Tensor:
        raise NotImplementedError

    def backward(self, upstream: Tensor, need_input_grad: bool = True) -> Tuple[Optional[Tensor], Dict[str, Tensor]]:
        raise NotImplementedError

    def _require_cache(self) -> dict:
        if self._cache is None:
            raise StateError(f"{type(self).__name__}.backward called without a cached forward pass")
        return self._cache

    def _zero_if_frozen(self, grads: Dict[str, Tensor]) -> Dict[str, Tensor]:
        if self.params.trainable:
            return grads
        return {name: np.zeros_like(g) for name, g in grads.items()}


class Conv1DBlock(Layer):
    """Valid, strided 1D cross-correlation with batch norm, ReLU and max-pool."""

    def __init__(self, cfg: ConvBlockConfig, params: LayerParams):
        super().__init__(params)
        self.cfg = cfg

    @property
    def normalized(self) -> Tensor:
        """Batch-normalized activations (before gamma/beta) of the last forward."""
        return self._require_cache()["xhat"]

    def forward(self, x: Tensor, mode: Mode = Mode.EVAL) -> Tensor:
        cfg, p = self.cfg, self.params
        squeeze = x.ndim == 2
        if squeeze:
            x = x[None]
        if x.ndim != 3 or x.shape[1] != cfg.in_channels:
            raise InvalidArgumentError(
                f"expected input [batch, {cfg.in_channels}, time], got {x.shape}"
            )
        if x.shape[2] < cfg.kernel:
            raise InvalidArgumentError(f"time length {x.shape[2]} is shorter than kernel {cfg.kernel}")

        windows = sliding_window_view(x, cfg.kernel, axis=2)[:, :, :: cfg.stride, :]
        conv = np.einsum("bctk,ock->bot", windows, p.weights) + p.bias[None, :, None]

        batch_stats = mode == Mode.TRAIN and p.trainable
        if batch_stats:
            mean = conv.mean(axis=(0, 2))
            var = conv.var(axis=(0, 2))
            count = conv.shape[0] * conv.shape[2]
            unbiased = var * count / (count - 1) if count > 1 else var
            p.bn_running_mean *= 1.0 - BN_MOMENTUM
            p.bn_running_mean += BN_MOMENTUM * mean
            p.bn_running_var *= 1.0 - BN_MOMENTUM
            p.bn_running_var += BN_MOMENTUM * unbiased
        else:
            mean, var = p.bn_running_mean, p.bn_running_var
        inv_std = 1.0 / np.sqrt(var + BN_EPS)
        xhat = (conv - mean[None, :, None]) * inv_std[None, :, None]
        bn = p.bn_gamma[None, :, None] * xhat + p.bn_beta[None, :, None]
        act = np.maximum(bn, 0.0)

        conv_len = conv.shape[2]
        width = cfg.pool_width(conv_len)
        frames = conv_len // width
        trimmed = act[:, :, : frames * width].reshape(act.shape[0], act.shape[1], frames, width)
        out = trimmed.max(axis=-1)

        self._cache = {
            "x_shape": x.shape,
            "windows": windows,
            "xhat": xhat,
            "inv_std": inv_std,
            "batch_stats": batch_stats,
            "active": bn > 0,
            "argmax": trimmed.argmax(axis=-1),
            "width": width,
            "squeeze": squeeze,
        }
        return out[0] if squeeze else out

    def backward(self, upstream: Tensor, need_input_grad: bool = True) -> Tuple[Optional[Tensor], Dict[str, Tensor]]:
        c = self._require_cache()
        p, cfg = self.params, self.cfg
        dy = upstream[None] if c["squeeze"] else upstream
        batch, channels, frames = dy.shape
        width = c["width"]
        conv_len = c["xhat"].shape[2]

        d_pool = np.zeros((batch, channels, frames, width))
        np.put_along_axis(d_pool, c["argmax"][..., None], dy[..., None], axis=-1)
        d_act = np.zeros((batch, channels, conv_len))
        d_act[:, :, : frames * width] = d_pool.reshape(batch, channels, frames * width)
        d_bn = d_act * c["active"]

        xhat = c["xhat"]
        grads = {
            "bn_gamma": np.sum(d_bn * xhat, axis=(0, 2)),
            "bn_beta": np.sum(d_bn, axis=(0, 2)),
        }
        dxhat = d_bn * p.bn_gamma[None, :, None]
        inv_std = c["inv_std"][None, :, None]
        if c["batch_stats"]:
            n = batch * conv_len
            d_conv = (inv_std / n) * (
                n * dxhat
                - dxhat.sum(axis=(0, 2), keepdims=True)
                - xhat * np.sum(dxhat * xhat, axis=(0, 2), keepdims=True)
            )
        else:
            d_conv = dxhat * inv_std

        windows = c["windows"]
        grads["weights"] = np.einsum("bot,bctk->ock", d_conv, windows)
        grads["bias"] = d_conv.sum(axis=(0, 2))

        dx = None
        if need_input_grad:
            d_windows = np.einsum("bot,ock->bctk", d_conv, p.weights)
            dx = np.zeros(c["x_shape"])
            span = cfg.stride * (conv_len - 1) + 1
            for k in range(cfg.kernel):
                dx[:, :, k : k + span : cfg.stride] += d_windows[:, :, :, k]
            if c["squeeze"]:
                dx = dx[0]
        return dx, self._zero_if_frozen(grads)


class Dense(Layer):
    """y = W x + b with an optional ReLU."""

    def __init__(self, params: LayerParams, activation: Activation = Activation.NONE):
        super().__init__(params)
        self.activation = Activation(activation)

    @property
    def n_in(self) -> int:
        return int(self.params.weights.shape[1])

    @property
    def n_out(self) -> int:
        return int(self.params.weights.shape[0])

    def forward(self, x: Tensor, mode: Mode = Mode.EVAL) -> Tensor:
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None]
        if x.shape[-1] != self.n_in:
            raise InvalidArgumentError(f"dense layer expects {self.n_in} inputs, got {x.shape[-1]}")
        pre = x @ self.params.weights.T + self.params.bias
        out = np.maximum(pre, 0.0) if self.activation == Activation.RELU else pre
        self._cache = {"x": x, "pre": pre, "squeeze": squeeze}
        return out[0] if squeeze else out

    def backward(self, upstream: Tensor, need_input_grad: bool = True) -> Tuple[Optional[Tensor], Dict[str, Tensor]]:
        c = self._require_cache()
        dy = upstream[None] if c["squeeze"] else upstream
        if self.activation == Activation.RELU:
            dy = dy * (c["pre"] > 0)
        grads = {"weights": dy.T @ c["x"], "bias": dy.sum(axis=0)}
        dx = None
        if need_input_grad:
            dx = dy @ self.params.weights
            if c["squeeze"]:
                dx = dx[0]
        return dx, self._zero_if_frozen(grads)


class FeatureExtractor:
    """Stack of conv blocks followed by global average pooling over time."""

    def __init__(self, configs: Sequence[ConvBlockConfig], params: Sequence[LayerParams]):
        if len(configs) != len(params):
            raise InvalidArgumentError("one LayerParams per conv block is required")
        for prev, nxt in zip(configs, configs[1:]):
            if prev.out_channels != nxt.in_channels:
                raise InvalidArgumentError("conv block channel counts do not chain")
        self.blocks = [Conv1DBlock(c, p) for c, p in zip(configs, params)]
        self._frames: Optional[int] = None
        self._input_length = 0

    @property
    def out_features(self) -> int:
        return self.blocks[-1].cfg.out_channels

    @property
    def trainable(self) -> bool:
        return any(b.params.trainable for b in self.blocks)

    def set_trainable(self, flag: bool) -> None:
        for b in self.blocks:
            b.params.trainable = flag

    def min_length(self) -> int:
        """Shortest input for which every block emits at least one frame.

        Walks the blocks backwards: a block needs `kernel` samples for one
        conv frame (the pool shrinks to fit), and `n > 1` output frames
        need `n * pool` conv frames.
        """
        need = 1
        for b in reversed(self.blocks):
            conv_frames = need * b.cfg.pool if need > 1 else 1
            need = (conv_frames - 1) * b.cfg.stride + b.cfg.kernel
        return need

    def time_lengths(self, time: int) -> List[int]:
        """Frames after each block; inputs shorter than `min_length` are zero-padded first."""
        time = max(time, self.min_length())
        lengths = []
        for b in self.blocks:
            time = b.cfg.output_length(time)
            lengths.append(time)
        return lengths

    def forward(self, x: Tensor, mode: Mode = Mode.EVAL) -> Tensor:
        if x.ndim == 2:
            x = x[:, None, :]
        self._input_length = x.shape[2]
        short = self.min_length() - x.shape[2]
        if short > 0:
            x = np.pad(x, ((0, 0), (0, 0), (0, short)))
        for block in self.blocks:
            x = block.forward(x, mode)
        self._frames = x.shape[2]
        return x.mean(axis=2)

    def backward(self, upstream: Tensor, need_input_grad: bool = False) -> Tuple[Optional[Tensor], List[Dict[str, Tensor]]]:
        if self._frames is None:
            raise StateError("FeatureExtractor.backward called without a cached forward pass")
        grad = np.repeat(upstream[:, :, None] / self._frames, self._frames, axis=2)
        grads: List[Dict[str, Tensor]] = [dict() for _ in self.blocks]
        for i in reversed(range(len(self.blocks))):
            need = need_input_grad or i > 0
            grad, grads[i] = self.blocks[i].backward(grad, need_input_grad=need)
        if grad is not None:
            grad = grad[:, :, : self._input_length]
        return grad, grads


class DenseStack:
    """Sequential dense layers."""

    def __init__(self, layers: Sequence[Dense]):
        self.layers = list(layers)

    @property
    def widths(self) -> List[int]:
        return [self.layers[0].n_in] + [layer.n_out for layer in self.layers]

    def forward(self, x: Tensor, mode: Mode = Mode.EVAL) -> Tensor:
        for layer in self.layers:
            x = layer.forward(x, mode)
        return x

    def backward(self, upstream: Tensor, need_input_grad: bool = True) -> Tuple[Optional[Tensor], List[Dict[str, Tensor]]]:
        grads: List[Dict[str, Tensor]] = [dict() for _ in self.layers]
        grad = upstream
        for i in reversed(range(len(self.layers))):
            grad, grads[i] = self.layers[i].backward(grad, need_input_grad=need_input_grad or i > 0)
        return grad, grads


def build_dnn_head(widths: Sequence[int], rng: np.random.Generator) -> DenseStack:
    """Dense layers over `widths`; ReLU on hidden layers except the top hidden one, none on the output."""
    n_layers = len(widths) - 1
    layers = []
    for i in range(n_layers):
        is_output = i == n_layers - 1
        is_top_hidden = i == n_layers - 2
        act = Activation.NONE if (is_output or is_top_hidden) else Activation.RELU
        layers.append(Dense(init_dense_params(widths[i], widths[i + 1], rng), act))
    return DenseStack(layers)


# ---------------------------------------------------------------------------
# Functional entry points
# ---------------------------------------------------------------------------

def conv_block_forward(x: Tensor, cfg: ConvBlockConfig, params: LayerParams, mode: Mode = Mode.EVAL) -> Tensor:
    """One block on [channels, time] or [batch, channels, time] input."""
    if x.ndim == 2:
        return Conv1DBlock(cfg, params).forward(x[None], mode)[0]
    return Conv1DBlock(cfg, params).forward(x, mode)


def cnn_extract(
    waveform: Tensor,
    params: Sequence[LayerParams],
    mode: Mode = Mode.EVAL,
    configs: Sequence[ConvBlockConfig] = DEFAULT_CONV_BLOCKS,
) -> Tensor:
    """Waveform(s) ``[1, T]`` or ``[batch, 1, T]`` to features ``[64]`` / ``[batch, 64]``."""
    single = waveform.ndim == 2
    x = waveform[None] if single else waveform
    if x.shape[-1] < configs[0].kernel:
        raise InvalidArgumentError(f"waveform needs at least {configs[0].kernel} samples")
    feats = FeatureExtractor(configs, params).forward(x, mode)
    return feats[0] if single else feats


def dense_forward(x: Tensor, params: LayerParams, activation: Activation = Activation.NONE) -> Tensor:
    return Dense(params, activation).forward(x)


def backward(layer: Layer, upstream: Tensor) -> Tuple[Optional[Tensor], Dict[str, Tensor]]:
    return layer.backward(upstream)


def _log_softmax(logits: Tensor) -> Tensor:
    shifted = logits - np.max(logits, axis=-1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


def softmax_ce(logits: Tensor, label: int) -> Tuple[float, Tensor]:
    """Cross-entropy of one logit vector; gradient is softmax - one_hot."""
    logits = np.asarray(logits, dtype=np.float64)
    if not 0 <= label < logits.shape[-1]:
        raise InvalidArgumentError(f"label {label} out of range for {logits.shape[-1]} classes")
    _check_finite(logits, "logits")
    log_p = _log_softmax(logits)
    grad = np.exp(log_p)
    grad[label] -= 1.0
    return float(-log_p[label]), grad


def softmax_ce_batch(logits: Tensor, labels: np.ndarray) -> Tuple[float, Tensor, Tensor]:
    """Mean cross-entropy over a batch.

    Returns the mean loss, its gradient w.r.t. the logits, and the
    per-sample losses.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if np.any(labels < 0) or np.any(labels >= logits.shape[1]):
        raise InvalidArgumentError(f"labels out of range for {logits.shape[1]} classes")
    log_p = _log_softmax(logits)
    rows = np.arange(labels.shape[0])
    losses = -log_p[rows, labels]
    grad = np.exp(log_p)
    grad[rows, labels] -= 1.0
    return float(losses.mean()), grad / labels.shape[0], losses


def gradient_check(
    layer: Layer,
    x: Tensor,
    rng: np.random.Generator,
    mode: Mode = Mode.TRAIN,
    eps: float = CLASSICAL_CHECK_EPS,
) -> Dict[str, Tuple[float, int]]:
    """Analytic vs central-difference gradients of a random projection of the output.

    Returns ``{tensor name or "input": (relative error, worst index)}``.
    """
    out = layer.forward(x, mode)
    projection = rng.standard_normal(out.shape)
    dx, grads = layer.backward(projection)

    def loss() -> float:
        return float(np.sum(layer.forward(x, mode) * projection))

    def numeric(tensor: Tensor) -> Tensor:
        result = np.zeros_like(tensor)
        for idx in np.ndindex(*tensor.shape):
            original = tensor[idx]
            tensor[idx] = original + eps
            plus = loss()
            tensor[idx] = original - eps
            minus = loss()
            tensor[idx] = original
            result[idx] = (plus - minus) / (2.0 * eps)
        return result

    analytic = {name: grads[name] for name in layer.params.learnable()}
    analytic["input"] = dx
    numerics = {name: numeric(tensor) for name, tensor in layer.params.learnable().items()}
    x = np.array(x, dtype=np.float64)
    numerics["input"] = numeric(x)
    # a bias feeding train-mode batch norm has an exactly zero gradient
    floor = max(float(np.max(np.abs(g))) for g in analytic.values())
    return {name: relative_error(analytic[name], numerics[name], floor) for name in analytic}
