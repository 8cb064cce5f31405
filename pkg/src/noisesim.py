"""Density-matrix simulation with parameterized single-qubit noise channels.

Gates and channels are both applied as 4-index superoperators
``S[i, j, a, b] = sum_k K_k[i, a] * conj(K_k[j, b])`` acting on the row and
column bit of one wire, so a rotation immediately followed by its noise
channel costs a single contraction.
"""
import logging
from enum import Enum
from functools import partial
from typing import List, Optional

import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator

from src.encoder import FeatureVector, encoding_angles
from src.errors import CapacityError, InvalidArgumentError
from src.simcore import (
    AngleLike,
    Gate1Q,
    Observation,
    RegisterBackend,
    StateVector,
    check_wire,
    cnot_permutation,
    expect_z_from_probs,
    rotation_matrices,
)
from src.vqc import VqcConfig, VqcParams, circuit_expectations

logger = logging.getLogger(__name__)

DENSITY_MAX_QUBITS = 8
DEFAULT_CHUNK = 32
DEFAULT_NOISE_PROBABILITY = 0.01

_I = np.eye(2, dtype=np.complex128)
_X = np.array([[0, 1], [1, 0]], dtype=np.complex128)
_Y = np.array([[0, -1j], [1j, 0]], dtype=np.complex128)
_Z = np.array([[1, 0], [0, -1]], dtype=np.complex128)


class NoiseChannel(str, Enum):
    DEPOLARIZING = "depolarizing"
    BIT_FLIP = "bit_flip"
    PHASE_FLIP = "phase_flip"


class NoisePlacement(str, Enum):
    AFTER_EVERY_GATE = "after_every_gate"
    BEFORE_MEASUREMENT = "before_measurement"


class NoiseSpec(BaseModel):
    """Which channel, how strong, and where it is inserted."""
    channel: NoiseChannel = NoiseChannel.DEPOLARIZING
    probability: float = Field(default=DEFAULT_NOISE_PROBABILITY, ge=0.0, le=1.0)
    placement: NoisePlacement = NoisePlacement.AFTER_EVERY_GATE

    def label(self) -> str:
        return f"{self.channel.value}:{self.probability:g}"


class DensityMatrix(BaseModel):
    """2**n x 2**n density operator."""
    n_qubits: int = Field(gt=0)
    entries: np.ndarray

    model_config = {
        "arbitrary_types_allowed": True
    }

    @field_validator("entries", mode="before")
    @classmethod
    def as_complex(cls, v):
        return np.asarray(v, dtype=np.complex128)

    @model_validator(mode="after")
    def check_shape(self) -> "DensityMatrix":
        dim = 2 ** self.n_qubits
        if self.entries.shape != (dim, dim):
            raise ValueError(f"density matrix must be {dim}x{dim}, got {self.entries.shape}")
        return self

    def trace_error(self) -> float:
        return abs(complex(np.trace(self.entries)) - 1.0)

    def hermiticity_error(self) -> float:
        return float(np.max(np.abs(self.entries - self.entries.conj().T)))

    def min_eigenvalue(self) -> float:
        return float(np.min(np.linalg.eigvalsh(self.entries)))

    def purity(self) -> float:
        return float(np.trace(self.entries @ self.entries).real)


# ---------------------------------------------------------------------------
# Kraus operators and superoperators
# ---------------------------------------------------------------------------

def kraus_operators(spec: NoiseSpec) -> List[np.ndarray]:
    """Kraus set of the channel; depolarizing is (1-p) rho + p/3 (X rho X + Y rho Y + Z rho Z)."""
    p = spec.probability
    if not 0.0 <= p <= 1.0:
        raise InvalidArgumentError(f"noise probability must be in [0, 1], got {p}")
    if spec.channel == NoiseChannel.DEPOLARIZING:
        return [np.sqrt(1 - p) * _I, np.sqrt(p / 3) * _X, np.sqrt(p / 3) * _Y, np.sqrt(p / 3) * _Z]
    if spec.channel == NoiseChannel.BIT_FLIP:
        return [np.sqrt(1 - p) * _I, np.sqrt(p) * _X]
    if spec.channel == NoiseChannel.PHASE_FLIP:
        return [np.sqrt(1 - p) * _I, np.sqrt(p) * _Z]
    raise InvalidArgumentError(f"unknown noise channel: {spec.channel}")


def superoperator(kraus: List[np.ndarray]) -> np.ndarray:
    return sum(np.einsum("ia,jb->ijab", k, k.conj()) for k in kraus)


def unitary_superoperator(matrices: np.ndarray) -> np.ndarray:
    """Superoperator of U (shape ``(2, 2)`` or ``(batch, 2, 2)``)."""
    return np.einsum("...ia,...jb->...ijab", matrices, matrices.conj())


def compose(after: np.ndarray, before: np.ndarray) -> np.ndarray:
    """Superoperator of `before` followed by `after` (`before` may be batched)."""
    return np.einsum("ijcd,...cdab->...ijab", after, before)


def apply_superop_batch(rhos: np.ndarray, sop: np.ndarray, wire: int, n_qubits: int) -> np.ndarray:
    """Apply a one-wire superoperator to a ``[batch, d, d]`` stack."""
    batch = rhos.shape[0]
    dim = 2 ** n_qubits
    outer, inner = 2 ** wire, 2 ** (n_qubits - wire - 1)
    view = rhos.reshape(batch, outer, 2, inner, outer, 2, inner)
    if sop.ndim == 4:
        out = np.tensordot(sop, view, axes=([2, 3], [2, 5]))
        out = out.transpose(2, 3, 0, 4, 5, 1, 6)
    else:
        out = np.einsum("nijab,nxaycbz->nxiycjz", sop, view)
    return np.ascontiguousarray(out).reshape(batch, dim, dim)


class DensityMatrixBackend(RegisterBackend):
    """Noisy backend: a stack of density matrices with a channel after gates or before readout."""

    def __init__(self, n_qubits: int, batch: int, noise: Optional[NoiseSpec] = None):
        if not 1 <= n_qubits <= DENSITY_MAX_QUBITS:
            raise CapacityError(
                f"density simulation supports 1..{DENSITY_MAX_QUBITS} qubits, got {n_qubits}"
            )
        super().__init__(n_qubits, batch)
        dim = 2 ** n_qubits
        self.rhos = np.zeros((batch, dim, dim), dtype=np.complex128)
        self.rhos[:, 0, 0] = 1.0
        self.noise = noise
        self._channel = superoperator(kraus_operators(noise)) if noise is not None else None

    @property
    def _per_gate(self) -> bool:
        return self._channel is not None and self.noise.placement == NoisePlacement.AFTER_EVERY_GATE

    def rotate(self, axis: str, angles: AngleLike, wire: int) -> None:
        sop = unitary_superoperator(rotation_matrices(axis, angles))
        if self._per_gate:
            sop = compose(self._channel, sop)
        self.rhos = apply_superop_batch(self.rhos, sop, wire, self.n_qubits)

    def cnot(self, control: int, target: int) -> None:
        perm = cnot_permutation(self.n_qubits, control, target)
        self.rhos = self.rhos[:, perm][:, :, perm]
        if self._per_gate:
            for wire in (control, target):
                self.rhos = apply_superop_batch(self.rhos, self._channel, wire, self.n_qubits)

    def expect_z(self) -> np.ndarray:
        if self._channel is not None and self.noise.placement == NoisePlacement.BEFORE_MEASUREMENT:
            for wire in range(self.n_qubits):
                self.rhos = apply_superop_batch(self.rhos, self._channel, wire, self.n_qubits)
        probs = np.real(np.diagonal(self.rhos, axis1=1, axis2=2))
        return expect_z_from_probs(probs, self.n_qubits)


# ---------------------------------------------------------------------------
# Single-matrix API
# ---------------------------------------------------------------------------

def to_density(state: StateVector) -> DensityMatrix:
    """|psi><psi|."""
    amps = state.amplitudes
    return DensityMatrix(n_qubits=state.n_qubits, entries=np.outer(amps, amps.conj()))


def apply_channel(rho: DensityMatrix, spec: NoiseSpec, wire: int) -> DensityMatrix:
    """Kraus sum of the channel on one wire."""
    check_wire(wire, rho.n_qubits)
    sop = superoperator(kraus_operators(spec))
    out = apply_superop_batch(rho.entries[None], sop, wire, rho.n_qubits)[0]
    return DensityMatrix(n_qubits=rho.n_qubits, entries=out)


def apply_gate(rho: DensityMatrix, gate: Gate1Q, wire: int) -> DensityMatrix:
    """U rho U^dagger on one wire."""
    check_wire(wire, rho.n_qubits)
    out = apply_superop_batch(rho.entries[None], unitary_superoperator(gate.matrix), wire, rho.n_qubits)[0]
    return DensityMatrix(n_qubits=rho.n_qubits, entries=out)


def apply_cnot_density(rho: DensityMatrix, control: int, target: int) -> DensityMatrix:
    if control == target:
        raise InvalidArgumentError("CNOT control and target must differ")
    check_wire(control, rho.n_qubits)
    check_wire(target, rho.n_qubits)
    perm = cnot_permutation(rho.n_qubits, control, target)
    return DensityMatrix(n_qubits=rho.n_qubits, entries=rho.entries[perm][:, perm])


def pauli_z_operator(wire: int, n_qubits: int) -> np.ndarray:
    """Full 2**n x 2**n Z on `wire`, built by Kronecker products."""
    check_wire(wire, n_qubits)
    op = np.ones((1, 1), dtype=np.complex128)
    for w in range(n_qubits):
        op = np.kron(op, _Z if w == wire else _I)
    return op


def expect_z_density(rho: DensityMatrix, wire: int) -> float:
    """Tr(rho Z_wire)."""
    return float(np.trace(rho.entries @ pauli_z_operator(wire, rho.n_qubits)).real)


# ---------------------------------------------------------------------------
# Noisy QNN forward pass
# ---------------------------------------------------------------------------

def noisy_forward_batch(
    features: np.ndarray,
    params: VqcParams,
    cfg: VqcConfig,
    spec: Optional[NoiseSpec],
    chunk: int = DEFAULT_CHUNK,
) -> np.ndarray:
    """Noisy <Z> for ``[batch, n_wires]`` squashed features, processed in chunks."""
    if cfg.n_wires > DENSITY_MAX_QUBITS:
        raise CapacityError(
            f"density simulation supports at most {DENSITY_MAX_QUBITS} wires, got {cfg.n_wires}"
        )
    enc = encoding_angles(np.atleast_2d(features))
    factory = partial(DensityMatrixBackend, noise=spec)
    outputs = [
        circuit_expectations(enc[start:start + chunk], params.angles, cfg, backend_factory=factory)
        for start in range(0, enc.shape[0], chunk)
    ]
    return np.concatenate(outputs, axis=0)


def noisy_qnn_forward(features: FeatureVector, params: VqcParams, cfg: VqcConfig, spec: NoiseSpec) -> Observation:
    """Same circuit as `qnn_forward`, executed on a density matrix with `spec` inserted."""
    return Observation(values=noisy_forward_batch(features.values[None, :], params, cfg, spec)[0])
