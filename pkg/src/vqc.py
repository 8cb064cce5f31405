"""The trainable variational circuit and the full QNN forward pass.

Each layer applies a ring of CNOTs (i -> i+1 mod n, ascending i) followed
by RX(alpha), RY(beta), RZ(gamma) on every wire. A forward pass encodes the
features, plays every layer and reads <Z> on each wire.
"""
import logging
from enum import Enum
from typing import Callable, Optional

import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator

from src.encoder import FeatureVector, encoding_angles
from src.errors import InvalidArgumentError
from src.simcore import Observation, RegisterBackend, StateVector, StateVectorBackend, check_capacity

logger = logging.getLogger(__name__)

ROTATION_AXES = ("X", "Y", "Z")
DEFAULT_INIT_SCALE = 0.1


class EntanglePattern(str, Enum):
    RING = "ring"


class VqcConfig(BaseModel):
    """Circuit shape."""
    n_wires: int = Field(default=8, gt=0)
    n_layers: int = Field(default=4, gt=0)
    entangle_pattern: EntanglePattern = Field(default=EntanglePattern.RING)


class VqcParams(BaseModel):
    """Rotation angles ``[n_layers, n_wires, 3]`` holding (alpha, beta, gamma)."""
    n_wires: int = Field(gt=0)
    n_layers: int = Field(gt=0)
    angles: np.ndarray

    model_config = {
        "arbitrary_types_allowed": True
    }

    @field_validator("angles", mode="before")
    @classmethod
    def as_float(cls, v):
        arr = np.asarray(v, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise ValueError("VQC angles must be finite")
        return arr

    @model_validator(mode="after")
    def check_shape(self) -> "VqcParams":
        expected = (self.n_layers, self.n_wires, 3)
        if self.angles.size != int(np.prod(expected)):
            raise ValueError(f"angles must have {int(np.prod(expected))} entries, got {self.angles.size}")
        self.angles = self.angles.reshape(expected)
        return self

    def flatten(self) -> np.ndarray:
        """Layer-major, then wire, then alpha/beta/gamma."""
        return self.angles.reshape(-1).copy()

    @classmethod
    def from_flat(cls, flat: np.ndarray, cfg: VqcConfig) -> "VqcParams":
        return cls(n_wires=cfg.n_wires, n_layers=cfg.n_layers, angles=np.asarray(flat).reshape(-1))


def param_count(cfg: VqcConfig) -> int:
    return cfg.n_layers * cfg.n_wires * 3


def init_params(cfg: VqcConfig, rng: np.random.Generator, scale: float = DEFAULT_INIT_SCALE) -> VqcParams:
    """Near-identity start: uniform on (-scale, scale)."""
    angles = rng.uniform(-scale, scale, size=(cfg.n_layers, cfg.n_wires, 3))
    return VqcParams(n_wires=cfg.n_wires, n_layers=cfg.n_layers, angles=angles)


def _check_layer_shape(layer_angles: np.ndarray, cfg: VqcConfig) -> np.ndarray:
    layer_angles = np.asarray(layer_angles, dtype=np.float64)
    if layer_angles.shape != (cfg.n_wires, 3):
        raise InvalidArgumentError(
            f"layer angles must have shape ({cfg.n_wires}, 3), got {layer_angles.shape}"
        )
    return layer_angles


def ring_edges(n_wires: int) -> list:
    """CNOT (control, target) pairs of the ring; two wires share a single edge."""
    if n_wires < 2:
        return []
    if n_wires == 2:
        return [(0, 1)]
    return [(wire, (wire + 1) % n_wires) for wire in range(n_wires)]


def play_layer(backend: RegisterBackend, layer_angles: np.ndarray, cfg: VqcConfig) -> None:
    """One entangle-then-rotate layer on any backend."""
    for control, target in ring_edges(cfg.n_wires):
        backend.cnot(control, target)
    for wire in range(cfg.n_wires):
        for k, axis in enumerate(ROTATION_AXES):
            backend.rotate(axis, layer_angles[wire, k], wire)


def play_circuit(
    backend: RegisterBackend,
    enc_angles: np.ndarray,
    angles: np.ndarray,
    cfg: VqcConfig,
) -> np.ndarray:
    """Encode, run every layer and measure.

    `enc_angles` is ``[batch, n_wires]`` (already scaled by pi), `angles`
    is ``[n_layers, n_wires, 3]``. Returns ``[batch, n_wires]`` <Z> values.
    """
    for wire in range(cfg.n_wires):
        backend.rotate("Y", enc_angles[:, wire], wire)
    for layer in range(cfg.n_layers):
        play_layer(backend, angles[layer], cfg)
    return backend.expect_z()


BackendFactory = Callable[[int, int], RegisterBackend]


def circuit_expectations(
    enc_angles: np.ndarray,
    angles: np.ndarray,
    cfg: VqcConfig,
    backend_factory: Optional[BackendFactory] = None,
) -> np.ndarray:
    """Batched forward pass from encoding angles; noiseless unless a factory is given."""
    enc_angles = np.atleast_2d(np.asarray(enc_angles, dtype=np.float64))
    if enc_angles.shape[1] != cfg.n_wires:
        raise InvalidArgumentError(
            f"expected {cfg.n_wires} features per sample, got {enc_angles.shape[1]}"
        )
    angles = np.asarray(angles, dtype=np.float64).reshape(cfg.n_layers, cfg.n_wires, 3)
    factory = backend_factory or StateVectorBackend
    backend = factory(cfg.n_wires, enc_angles.shape[0])
    return play_circuit(backend, enc_angles, angles, cfg)


def vqc_layer(state: StateVector, layer_angles: np.ndarray, cfg: VqcConfig) -> StateVector:
    """Apply one layer to a single state."""
    if state.n_qubits != cfg.n_wires:
        raise InvalidArgumentError(
            f"state has {state.n_qubits} qubits but the circuit has {cfg.n_wires} wires"
        )
    layer_angles = _check_layer_shape(layer_angles, cfg)
    backend = StateVectorBackend(cfg.n_wires, 1)
    backend.states = state.amplitudes[None, :].copy()
    play_layer(backend, layer_angles, cfg)
    return StateVector(n_qubits=cfg.n_wires, amplitudes=backend.states[0])


def qnn_forward(features: FeatureVector, params: VqcParams, cfg: VqcConfig) -> Observation:
    """Encoding -> layers -> <Z> on every wire for one feature vector."""
    if params.n_wires != cfg.n_wires or params.n_layers != cfg.n_layers:
        raise InvalidArgumentError("VQC params do not match the circuit config")
    check_capacity(cfg.n_wires)
    enc = encoding_angles(features.values)[None, :]
    return Observation(values=circuit_expectations(enc, params.angles, cfg)[0])


def qnn_forward_batch(features: np.ndarray, params: VqcParams, cfg: VqcConfig) -> np.ndarray:
    """`qnn_forward` over a ``[batch, n_wires]`` array of squashed features."""
    return circuit_expectations(encoding_angles(features), params.angles, cfg)
