"""CNN-DNN and CNN-QNN models, the transfer workflow, training and evaluation.

A CNN-QNN is CNN features -> dense compressor (64 -> n_wires) -> tanh ->
angle encoding -> VQC -> <Z> per wire -> fixed classification matrix.
Gradients cross the quantum boundary with parameter-shift (or finite
differences) on both the VQC angles and the encoding angles, and are then
chained through tanh, the compressor and the CNN by ordinary backprop.
"""
import logging
import time
from enum import Enum
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field, model_validator
from termcolor import colored
from tqdm import tqdm

from src.audiodata import Dataset, Utterance, make_batches, pad_batch
from src.classicalnn import (
    DEFAULT_CONV_BLOCKS,
    ConvBlockConfig,
    Dense,
    DenseStack,
    FeatureExtractor,
    Mode,
    Tensor,
    build_dnn_head,
    init_conv_params,
    init_dense_params,
    softmax_ce_batch,
)
from src.config_manager import GradMethod, Regime
from src.encoder import ANGLE_SCALE
from src.errors import InvalidArgumentError, NumericError, StateError
from src.gradopt import (
    DEFAULT_EPS,
    GradientVector,
    OptimizerKind,
    OptimizerState,
    finite_diff_jacobian,
    parameter_shift_jacobian,
    relative_error,
    step,
)
from src.noisesim import NoiseSpec, noisy_forward_batch
from src.vqc import DEFAULT_INIT_SCALE, VqcConfig, VqcParams, circuit_expectations, init_params, param_count

logger = logging.getLogger(__name__)

SQUASH_LIMIT = 1.0 - 1e-12
COMPONENTS = ("cnn", "dnn", "compressor", "vqc")
CALIBRATION_SIZE = 256


class ModelKind(str, Enum):
    CNN_DNN = "cnn_dnn"
    CNN_QNN = "cnn_qnn"


class ModelConfig(BaseModel):
    """Shape of a hybrid model."""
    conv_blocks: List[ConvBlockConfig] = Field(default_factory=lambda: [b.model_copy() for b in DEFAULT_CONV_BLOCKS])
    dnn_hidden: List[int] = Field(default_factory=lambda: [128, 256, 512])
    n_wires: int = Field(default=8, gt=0)
    n_layers: int = Field(default=4, gt=0)
    n_classes: int = Field(default=35, ge=2)
    init_scale: float = Field(default=DEFAULT_INIT_SCALE, gt=0)

    @model_validator(mode="after")
    def check_chain(self) -> "ModelConfig":
        if not self.conv_blocks:
            raise ValueError("at least one conv block is required")
        for prev, nxt in zip(self.conv_blocks, self.conv_blocks[1:]):
            if prev.out_channels != nxt.in_channels:
                raise ValueError("conv block channel counts do not chain")
        return self

    @property
    def feature_dim(self) -> int:
        return self.conv_blocks[-1].out_channels

    def vqc_config(self) -> VqcConfig:
        return VqcConfig(n_wires=self.n_wires, n_layers=self.n_layers)

    def dnn_widths(self) -> List[int]:
        return [self.feature_dim, *self.dnn_hidden, self.n_classes]


class EvalReport(BaseModel):
    """Cross-entropy and accuracy over one split."""
    cross_entropy: float = Field(ge=0.0)
    accuracy: float = Field(ge=0.0, le=1.0)
    trainable_param_count: int = Field(ge=0)
    sample_count: int = Field(gt=0)
    noise: Optional[str] = None


class TrainRegime(BaseModel):
    """Training regime and, for the transfer regimes, the pre-trained CNN-DNN."""
    name: Regime
    source_model: Optional[Any] = None

    @model_validator(mode="after")
    def check_source(self) -> "TrainRegime":
        if self.name.needs_source and self.source_model is None:
            raise ValueError(f"regime {self.name.value} requires a source model")
        return self


class OptimizerConfig(BaseModel):
    kind: OptimizerKind = OptimizerKind.ADAM
    lr_classical: float = Field(default=1e-3, gt=0)
    lr_quantum: float = Field(default=1e-2, gt=0)


class QuantumHead:
    """Dense compressor, VQC and the fixed classification matrix."""

    def __init__(self, compressor: Dense, vqc_params: VqcParams, vqc_config: VqcConfig, class_matrix: np.ndarray):
        if compressor.n_out != vqc_config.n_wires:
            raise InvalidArgumentError("compressor width must equal the number of wires")
        if class_matrix.shape[0] != vqc_config.n_wires:
            raise InvalidArgumentError("classification matrix rows must equal the number of wires")
        self.compressor = compressor
        self.vqc_params = vqc_params
        self.vqc_config = vqc_config
        self.class_matrix = class_matrix
        self.vqc_trainable = True
        self._cache: Optional[dict] = None

    def forward(self, features: Tensor, mode: Mode = Mode.EVAL, noise: Optional[NoiseSpec] = None) -> Tensor:
        squashed = np.clip(np.tanh(self.compressor.forward(features, mode)), -SQUASH_LIMIT, SQUASH_LIMIT)
        if noise is None:
            z = circuit_expectations(ANGLE_SCALE * squashed, self.vqc_params.angles, self.vqc_config)
        else:
            z = noisy_forward_batch(squashed, self.vqc_params, self.vqc_config, noise)
        self._cache = {"squashed": squashed, "noise": noise}
        return z @ self.class_matrix

    def _expectations(self, squashed: np.ndarray, angles: np.ndarray) -> np.ndarray:
        return circuit_expectations(ANGLE_SCALE * squashed, angles, self.vqc_config)

    def backward(
        self,
        upstream: Tensor,
        grad_method: GradMethod = GradMethod.PARAMETER_SHIFT,
        eps: float = DEFAULT_EPS,
        need_input_grad: bool = False,
    ) -> Tuple[Optional[Tensor], Dict[str, Any]]:
        if self._cache is None:
            raise StateError("QuantumHead.backward called without a cached forward pass")
        if self._cache["noise"] is not None:
            raise InvalidArgumentError("gradients are only available for the noiseless circuit")
        squashed = self._cache["squashed"]
        angles = self.vqc_params.angles
        dz = upstream @ self.class_matrix.T
        grads: Dict[str, Any] = {}

        if self.vqc_trainable:
            def circuit_at(flat: np.ndarray) -> np.ndarray:
                return self._expectations(squashed, flat.reshape(angles.shape))

            if grad_method == GradMethod.PARAMETER_SHIFT:
                jac = parameter_shift_jacobian(circuit_at, angles.reshape(-1))
            else:
                jac = finite_diff_jacobian(circuit_at, angles.reshape(-1), eps)
            grads["vqc"] = np.einsum("pbw,bw->p", jac, dz).reshape(angles.shape)

        d_features = None
        if self.compressor.params.trainable or need_input_grad:
            n_wires = self.vqc_config.n_wires
            if grad_method == GradMethod.PARAMETER_SHIFT:
                def circuit_at_angle(delta: np.ndarray) -> np.ndarray:
                    return circuit_expectations(ANGLE_SCALE * squashed + delta[None, :], angles, self.vqc_config)

                jac_x = ANGLE_SCALE * parameter_shift_jacobian(circuit_at_angle, np.zeros(n_wires))
            else:
                def circuit_at_feature(delta: np.ndarray) -> np.ndarray:
                    return self._expectations(squashed + delta[None, :], angles)

                jac_x = finite_diff_jacobian(circuit_at_feature, np.zeros(n_wires), eps)
            d_squashed = np.einsum("ibw,bw->bi", jac_x, dz)
            d_pre = d_squashed * (1.0 - squashed ** 2)
            d_features, grads["compressor"] = self.compressor.backward(d_pre, need_input_grad=need_input_grad)
        return d_features, grads


class HybridModel:
    """CNN feature extractor plus either a DNN head or a quantum head."""

    def __init__(self, kind: ModelKind, config: ModelConfig, cnn: FeatureExtractor, head: Union[DenseStack, QuantumHead], seed: int):
        self.kind = ModelKind(kind)
        self.config = config
        self.cnn = cnn
        self.head = head
        self.seed = seed

    # -- components -------------------------------------------------------

    @property
    def freeze_mask(self) -> Dict[str, bool]:
        """Component -> trainable flag."""
        mask = {"cnn": self.cnn.trainable}
        if self.kind == ModelKind.CNN_DNN:
            mask["dnn"] = any(layer.params.trainable for layer in self.head.layers)
        else:
            mask["compressor"] = self.head.compressor.params.trainable
            mask["vqc"] = self.head.vqc_trainable
        return mask

    def set_trainable(self, component: str, flag: bool) -> None:
        if component == "cnn":
            self.cnn.set_trainable(flag)
        elif component == "dnn" and self.kind == ModelKind.CNN_DNN:
            for layer in self.head.layers:
                layer.params.trainable = flag
        elif component == "compressor" and self.kind == ModelKind.CNN_QNN:
            self.head.compressor.params.trainable = flag
        elif component == "vqc" and self.kind == ModelKind.CNN_QNN:
            self.head.vqc_trainable = flag
        else:
            raise InvalidArgumentError(f"model {self.kind.value} has no component '{component}'")

    # -- tensors ----------------------------------------------------------

    def _grouped_tensors(self) -> List[Tuple[str, str, Dict[str, np.ndarray]]]:
        """(component, prefix, learnable tensors) groups in a stable order."""
        groups = [
            ("cnn", f"cnn.block{i + 1}", block.params.learnable())
            for i, block in enumerate(self.cnn.blocks)
        ]
        if self.kind == ModelKind.CNN_DNN:
            groups += [
                ("dnn", f"head.dnn.layer{i + 1}", layer.params.learnable())
                for i, layer in enumerate(self.head.layers)
            ]
        else:
            groups.append(("compressor", "head.compressor", self.head.compressor.params.learnable()))
            groups.append(("vqc", "head.vqc", {"angles": self.head.vqc_params.angles}))
        return groups

    def named_tensors(self) -> Dict[str, np.ndarray]:
        """Every stored tensor (buffers and the fixed matrix included) by dotted path."""
        out: Dict[str, np.ndarray] = {}
        for i, block in enumerate(self.cnn.blocks):
            for name, tensor in block.params.tensors().items():
                out[f"cnn.block{i + 1}.{name}"] = tensor
        for _, prefix, tensors in self._grouped_tensors()[len(self.cnn.blocks):]:
            for name, tensor in tensors.items():
                out[f"{prefix}.{name}"] = tensor
        if self.kind == ModelKind.CNN_QNN:
            out["head.class_matrix"] = self.head.class_matrix
        return out

    def trainable_tensors(self) -> Dict[str, np.ndarray]:
        mask = self.freeze_mask
        return {
            f"{prefix}.{name}": tensor
            for component, prefix, tensors in self._grouped_tensors()
            if mask[component]
            for name, tensor in tensors.items()
        }

    def trainable_count(self) -> int:
        return int(sum(t.size for t in self.trainable_tensors().values()))

    def total_count(self) -> int:
        """Learnable weights of every component plus the fixed classification matrix."""
        total = sum(t.size for _, _, tensors in self._grouped_tensors() for t in tensors.values())
        if self.kind == ModelKind.CNN_QNN:
            total += self.head.class_matrix.size
        return int(total)

    def vqc_count(self) -> int:
        return param_count(self.config.vqc_config()) if self.kind == ModelKind.CNN_QNN else 0

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {path: tensor.copy() for path, tensor in self.named_tensors().items()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        current = self.named_tensors()
        missing = set(current) - set(state)
        if missing:
            raise InvalidArgumentError(f"state is missing tensors: {sorted(missing)}")
        for path, tensor in current.items():
            value = np.asarray(state[path], dtype=np.float64)
            if value.shape != tensor.shape:
                raise InvalidArgumentError(f"shape mismatch for {path}: {value.shape} vs {tensor.shape}")
            tensor[...] = value

    # -- passes -----------------------------------------------------------

    def forward(self, waveforms: Tensor, mode: Mode = Mode.EVAL, noise: Optional[NoiseSpec] = None) -> Tensor:
        if waveforms.shape[0] == 0:
            raise InvalidArgumentError("empty batch")
        if noise is not None and self.kind != ModelKind.CNN_QNN:
            raise InvalidArgumentError("noise can only be applied to a CNN-QNN model")
        features = self.cnn.forward(waveforms, mode)
        if self.kind == ModelKind.CNN_DNN:
            return self.head.forward(features, mode)
        return self.head.forward(features, mode, noise)

    def backward(
        self,
        d_logits: Tensor,
        grad_method: GradMethod = GradMethod.PARAMETER_SHIFT,
        eps: float = DEFAULT_EPS,
    ) -> Dict[str, np.ndarray]:
        """Gradients of every trainable tensor, keyed like `trainable_tensors`."""
        mask = self.freeze_mask
        grads: Dict[str, np.ndarray] = {}
        need_features = mask["cnn"]
        if self.kind == ModelKind.CNN_DNN:
            d_features, layer_grads = self.head.backward(d_logits, need_input_grad=need_features)
            if mask["dnn"]:
                for i, g in enumerate(layer_grads):
                    grads.update({f"head.dnn.layer{i + 1}.{n}": v for n, v in g.items()})
        else:
            d_features, head_grads = self.head.backward(d_logits, grad_method, eps, need_input_grad=need_features)
            if "vqc" in head_grads:
                grads["head.vqc.angles"] = head_grads["vqc"]
            if mask["compressor"] and "compressor" in head_grads:
                grads.update({f"head.compressor.{n}": v for n, v in head_grads["compressor"].items()})
        if need_features:
            _, block_grads = self.cnn.backward(d_features)
            for i, g in enumerate(block_grads):
                grads.update({f"cnn.block{i + 1}.{n}": v for n, v in g.items()})
        return grads


# ---------------------------------------------------------------------------
# Construction and transfer
# ---------------------------------------------------------------------------

def build_model(kind: Union[ModelKind, str], config: Optional[ModelConfig] = None, seed: int = 0) -> HybridModel:
    """Seeded, deterministic initialisation of a CNN-DNN or CNN-QNN."""
    kind = ModelKind(kind)
    config = config or ModelConfig()
    rng = np.random.default_rng(seed)
    block_params = [init_conv_params(cfg, rng) for cfg in config.conv_blocks]
    cnn = FeatureExtractor(config.conv_blocks, block_params)
    if kind == ModelKind.CNN_DNN:
        head: Union[DenseStack, QuantumHead] = build_dnn_head(config.dnn_widths(), rng)
    else:
        vqc_config = config.vqc_config()
        compressor = Dense(init_dense_params(config.feature_dim, config.n_wires, rng))
        vqc_params = init_params(vqc_config, rng, config.init_scale)
        class_matrix = rng.standard_normal((config.n_wires, config.n_classes)) / np.sqrt(config.n_wires)
        head = QuantumHead(compressor, vqc_params, vqc_config, class_matrix)
    logger.info(f"Built {kind.value} model (seed={seed})")
    return HybridModel(kind, config, cnn, head, seed)


def transfer_cnn(
    source: HybridModel,
    regime: Union[Regime, str],
    config: Optional[ModelConfig] = None,
    seed: Optional[int] = None,
    calibration: Optional[Tensor] = None,
) -> HybridModel:
    """Copy a pre-trained CNN-DNN's CNN into a fresh CNN-QNN and set the regime's freeze flags.

    cnn_qnn_2 freezes the CNN and the compressor (only the VQC angles
    train); cnn_qnn_3 leaves everything trainable. With `calibration`
    waveforms the fresh compressor is standardized on the transferred
    CNN's features before the flags are set.
    """
    regime = Regime(regime)
    if source.kind != ModelKind.CNN_DNN:
        raise InvalidArgumentError("the transfer source must be a CNN-DNN model")
    if regime not in (Regime.CNN_QNN_2, Regime.CNN_QNN_3):
        raise InvalidArgumentError(f"regime {regime.value} is not a transfer regime")
    config = config or source.config.model_copy(deep=True)
    if [b.model_dump() for b in config.conv_blocks] != [b.model_dump() for b in source.config.conv_blocks]:
        raise InvalidArgumentError("source and target CNN configurations differ")

    target = build_model(ModelKind.CNN_QNN, config, source.seed + 1 if seed is None else seed)
    for src_block, dst_block in zip(source.cnn.blocks, target.cnn.blocks):
        for name, tensor in src_block.params.tensors().items():
            getattr(dst_block.params, name)[...] = tensor
    if calibration is not None:
        calibrate_compressor(target, calibration)
    if regime == Regime.CNN_QNN_2:
        target.set_trainable("cnn", False)
        target.set_trainable("compressor", False)
    logger.info(f"Transferred CNN into CNN-QNN for regime {regime.value}")
    return target


def calibrate_compressor(model: HybridModel, waveforms: Tensor) -> None:
    """Rescale the compressor so each output has zero mean and unit deviation over `waveforms`.

    Features are taken in eval mode, so the CNN's running statistics are
    untouched. Outputs that are constant over the batch keep their weights
    and are only centred.
    """
    if model.kind != ModelKind.CNN_QNN:
        raise InvalidArgumentError("only a CNN-QNN has a compressor to calibrate")
    waveforms = np.asarray(waveforms, dtype=np.float64)
    if waveforms.ndim == 2:
        waveforms = waveforms[:, None, :]
    if waveforms.shape[0] < 2:
        raise InvalidArgumentError("calibration needs at least two waveforms")
    params = model.head.compressor.params
    projected = model.cnn.forward(waveforms, Mode.EVAL) @ params.weights.T
    mean = projected.mean(axis=0)
    spread = projected.std(axis=0)
    scale = np.where(spread > 1e-8, 1.0 / np.maximum(spread, 1e-8), 1.0)
    params.weights *= scale[:, None]
    params.bias[...] = -mean * scale
    logger.info(f"Calibrated compressor on {waveforms.shape[0]} waveforms")


def prepare_model(
    regime: TrainRegime,
    config: ModelConfig,
    seed: int,
    calibration: Optional[Sequence[Utterance]] = None,
) -> HybridModel:
    """Initial model for a regime: fresh CNN-DNN / CNN-QNN or a transferred CNN.

    For the transfer regimes the first `CALIBRATION_SIZE` of `calibration`
    utterances (usually the training split) standardize the compressor.
    """
    if regime.name == Regime.BASELINE_CNN_DNN:
        return build_model(ModelKind.CNN_DNN, config, seed)
    if regime.name == Regime.CNN_QNN_SCRATCH:
        return build_model(ModelKind.CNN_QNN, config, seed)
    source: HybridModel = regime.source_model
    target_config = source.config.model_copy(
        update={"n_wires": config.n_wires, "n_layers": config.n_layers, "n_classes": source.config.n_classes}
    )
    waveforms = None
    if calibration is not None and len(calibration) >= 2:
        waveforms = pad_batch(list(calibration)[:CALIBRATION_SIZE], source.cnn.min_length())
    return transfer_cnn(source, regime.name, target_config, seed, waveforms)


# ---------------------------------------------------------------------------
# Optimization
# ---------------------------------------------------------------------------

class ModelOptimizer:
    """One OptimizerState per trainable tensor; VQC angles use the quantum learning rate."""

    def __init__(self, model: HybridModel, config: OptimizerConfig):
        self.model = model
        self.states: Dict[str, OptimizerState] = {}
        for path in model.trainable_tensors():
            lr = config.lr_quantum if path.startswith("head.vqc") else config.lr_classical
            self.states[path] = OptimizerState(kind=config.kind, learning_rate=lr)

    def apply(self, grads: Dict[str, np.ndarray]) -> None:
        tensors = self.model.trainable_tensors()
        for path, state in self.states.items():
            if path not in grads:
                continue
            tensor = tensors[path]
            try:
                gradient = GradientVector(values=grads[path])
            except ValueError:
                raise NumericError(f"non-finite gradient for {path}")
            self.states[path], new_values = step(state, tensor, gradient)
            tensor[...] = new_values.reshape(tensor.shape)


def _batches(utterances: Sequence[Utterance], batch_size: int, seed: int, shuffle: bool, min_length: int):
    return make_batches(utterances, batch_size, seed, shuffle=shuffle, min_length=min_length)


def evaluate(
    model: HybridModel,
    utterances: Sequence[Utterance],
    noise: Optional[NoiseSpec] = None,
    batch_size: int = 256,
) -> EvalReport:
    """Mean cross-entropy and top-1 accuracy in eval mode."""
    if len(utterances) == 0:
        raise InvalidArgumentError("cannot evaluate an empty split")
    total_ce, correct = 0.0, 0
    for waveforms, labels in _batches(utterances, batch_size, 0, False, model.cnn.min_length()):
        logits = model.forward(waveforms, Mode.EVAL, noise)
        _, _, losses = softmax_ce_batch(logits, labels)
        total_ce += float(np.sum(losses))
        correct += int(np.sum(np.argmax(logits, axis=1) == labels))
    n = len(utterances)
    return EvalReport(
        cross_entropy=total_ce / n,
        accuracy=correct / n,
        trainable_param_count=model.trainable_count(),
        sample_count=n,
        noise=noise.label() if noise is not None else None,
    )


EpochCallback = Callable[[Dict[str, Any]], None]


def train(
    model: HybridModel,
    dataset: Dataset,
    regime: TrainRegime,
    optimizer: OptimizerConfig,
    epochs: int,
    batch_size: int = 256,
    seed: int = 0,
    grad_method: GradMethod = GradMethod.PARAMETER_SHIFT,
    eps: float = DEFAULT_EPS,
    on_epoch: Optional[EpochCallback] = None,
    progress: bool = False,
) -> Tuple[HybridModel, List[EvalReport]]:
    """Mini-batch training; keeps the checkpoint with the best validation cross-entropy.

    Returns the model (restored to its best checkpoint) and one
    validation report per epoch (a single report when `epochs` is 0).
    """
    train_set = dataset.part("train")
    val_set = dataset.part("validation") or train_set
    if not train_set:
        raise InvalidArgumentError("training split is empty")

    print(colored(f"→ Training {model.kind.value} ({regime.name.value}) for {epochs} epochs, "
                  f"{model.trainable_count()} trainable parameters", "blue"))
    if epochs == 0:
        return model, [evaluate(model, val_set, batch_size=batch_size)]

    opt = ModelOptimizer(model, optimizer)
    reports: List[EvalReport] = []
    best_ce, best_state = np.inf, None
    min_length = model.cnn.min_length()

    for epoch in range(1, epochs + 1):
        started = time.perf_counter()
        batches = list(_batches(train_set, batch_size, seed + epoch, True, min_length))
        train_ce, seen = 0.0, 0
        for batch_index, (waveforms, labels) in enumerate(
            tqdm(batches, desc=f"epoch {epoch}", disable=not progress, leave=False)
        ):
            logits = model.forward(waveforms, Mode.TRAIN)
            loss, d_logits, _ = softmax_ce_batch(logits, labels)
            if not np.isfinite(loss):
                logger.error(f"Non-finite loss at epoch {epoch}, batch {batch_index}")
                raise NumericError(
                    f"non-finite training loss at epoch {epoch}, batch {batch_index}",
                    epoch=epoch,
                    batch=batch_index,
                )
            grads = model.backward(d_logits, grad_method, eps)
            try:
                opt.apply(grads)
            except NumericError as e:
                e.epoch, e.batch = epoch, batch_index
                raise
            train_ce += loss * len(labels)
            seen += len(labels)

        report = evaluate(model, val_set, batch_size=batch_size)
        reports.append(report)
        seconds = time.perf_counter() - started
        record = {
            "epoch": epoch,
            "train_ce": train_ce / seen,
            "val_ce": report.cross_entropy,
            "val_acc": report.accuracy,
            "seconds": seconds,
        }
        logger.info(f"Epoch {epoch}: {record}")
        print(colored(f"✓ epoch {epoch}: train_ce={record['train_ce']:.4f} "
                      f"val_ce={report.cross_entropy:.4f} val_acc={report.accuracy:.4f}", "green"))
        if on_epoch:
            on_epoch(record)
        if report.cross_entropy < best_ce:
            best_ce, best_state = report.cross_entropy, model.state_dict()

    if best_state is not None:
        model.load_state_dict(best_state)
    return model, reports


# ---------------------------------------------------------------------------
# Whole-model gradient check
# ---------------------------------------------------------------------------

def model_gradient_check(
    model: HybridModel,
    waveforms: Tensor,
    labels: np.ndarray,
    eps: float = 1e-6,
    grad_method: GradMethod = GradMethod.PARAMETER_SHIFT,
) -> Tuple[float, str]:
    """Backprop gradient vs central differences of the total training loss.

    Returns the worst relative error over all trainable tensors and its
    ``path[index]`` location.
    """
    logits = model.forward(waveforms, Mode.TRAIN)
    _, d_logits, _ = softmax_ce_batch(logits, labels)
    analytic = model.backward(d_logits, grad_method)

    def loss() -> float:
        return softmax_ce_batch(model.forward(waveforms, Mode.TRAIN), labels)[0]

    worst, where = 0.0, ""
    floor = max((float(np.max(np.abs(g))) for g in analytic.values() if np.size(g)), default=0.0)
    for path, tensor in model.trainable_tensors().items():
        numeric = np.zeros_like(tensor)
        for idx in np.ndindex(*tensor.shape):
            original = tensor[idx]
            tensor[idx] = original + eps
            plus = loss()
            tensor[idx] = original - eps
            minus = loss()
            tensor[idx] = original
            numeric[idx] = (plus - minus) / (2.0 * eps)
        err, index = relative_error(analytic[path], numeric, floor)
        if err >= worst:
            worst, where = err, f"{path}[{index}]"
    return worst, where
