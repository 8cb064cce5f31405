"""Pure-state register simulation.

Gate construction (half-angle Pauli rotations), gate application on a
state vector and Pauli-Z readout. Wire 0 is the most significant bit of
the basis index. Besides the single-state API used by tests and callers,
the module exposes batched kernels that act on a stack of states
(shape ``[batch, 2**n]``); `vqc` and `noisesim` drive those through the
`RegisterBackend` interface.
"""
import logging
from abc import ABC, abstractmethod
from enum import Enum
from functools import lru_cache
from typing import Optional, Union

import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator

from src.errors import CapacityError, InvalidArgumentError

logger = logging.getLogger(__name__)

MAX_QUBITS = 12
BOUND_TOL = 1e-10

AngleLike = Union[float, np.ndarray]


class GateLabel(str, Enum):
    """Single-qubit gates known to the simulator."""
    RX = "RX"
    RY = "RY"
    RZ = "RZ"
    PAULI_Z = "PauliZ"


_AXIS_LABELS = {"X": GateLabel.RX, "Y": GateLabel.RY, "Z": GateLabel.RZ}


class StateVector(BaseModel):
    """Complex amplitudes of an n-qubit pure state."""
    n_qubits: int = Field(gt=0, description="Number of qubits in the register")
    amplitudes: np.ndarray = Field(description="2**n_qubits complex amplitudes")

    model_config = {
        "arbitrary_types_allowed": True
    }

    @field_validator("amplitudes", mode="before")
    @classmethod
    def as_complex(cls, v):
        return np.asarray(v, dtype=np.complex128).reshape(-1)

    @model_validator(mode="after")
    def check_length(self) -> "StateVector":
        if self.amplitudes.shape[0] != 2 ** self.n_qubits:
            raise ValueError(
                f"expected {2 ** self.n_qubits} amplitudes, got {self.amplitudes.shape[0]}"
            )
        return self

    def norm_error(self) -> float:
        """Distance of the squared norm from one."""
        return abs(float(np.vdot(self.amplitudes, self.amplitudes).real) - 1.0)


class Gate1Q(BaseModel):
    """A 2x2 unitary with its label and, for rotations, its angle."""
    matrix: np.ndarray = Field(description="2x2 complex unitary")
    label: GateLabel
    angle: Optional[float] = Field(default=None, description="Rotation angle in radians")

    model_config = {
        "arbitrary_types_allowed": True
    }

    @field_validator("matrix", mode="before")
    @classmethod
    def as_matrix(cls, v):
        m = np.asarray(v, dtype=np.complex128)
        if m.shape != (2, 2):
            raise ValueError(f"gate matrix must be 2x2, got {m.shape}")
        return m


class Observation(BaseModel):
    """Per-wire Pauli-Z expectations."""
    values: np.ndarray

    model_config = {
        "arbitrary_types_allowed": True
    }

    @field_validator("values", mode="before")
    @classmethod
    def check_bounds(cls, v):
        arr = np.asarray(v, dtype=np.float64).reshape(-1)
        if np.any(np.abs(arr) > 1.0 + BOUND_TOL):
            raise ValueError("expectation values must lie in [-1, 1]")
        return arr


# ---------------------------------------------------------------------------
# Gate construction
# ---------------------------------------------------------------------------

def rotation_matrices(axis: str, angles: AngleLike) -> np.ndarray:
    """Half-angle rotation matrices, vectorized over `angles`.

    A scalar angle gives a ``(2, 2)`` matrix, an array of shape ``S``
    gives ``S + (2, 2)``.
    """
    theta = np.asarray(angles, dtype=np.float64)
    if not np.all(np.isfinite(theta)):
        raise InvalidArgumentError("rotation angle must be finite")
    c = np.cos(theta / 2.0)
    s = np.sin(theta / 2.0)
    out = np.zeros(theta.shape + (2, 2), dtype=np.complex128)
    if axis == "X":
        out[..., 0, 0] = c
        out[..., 0, 1] = -1j * s
        out[..., 1, 0] = -1j * s
        out[..., 1, 1] = c
    elif axis == "Y":
        out[..., 0, 0] = c
        out[..., 0, 1] = -s
        out[..., 1, 0] = s
        out[..., 1, 1] = c
    elif axis == "Z":
        out[..., 0, 0] = np.exp(-0.5j * theta)
        out[..., 1, 1] = np.exp(0.5j * theta)
    else:
        raise InvalidArgumentError(f"unknown rotation axis: {axis}")
    return out


def make_rotation(label: str, angle: float) -> Gate1Q:
    """Build RX/RY/RZ(angle); `label` is the axis letter X, Y or Z."""
    axis = str(label).upper()
    if axis not in _AXIS_LABELS:
        raise InvalidArgumentError(f"unknown rotation axis: {label}")
    if not np.isfinite(angle):
        raise InvalidArgumentError(f"rotation angle must be finite, got {angle}")
    return Gate1Q(
        matrix=rotation_matrices(axis, float(angle)),
        label=_AXIS_LABELS[axis],
        angle=float(angle),
    )


def pauli_z() -> Gate1Q:
    return Gate1Q(matrix=np.diag([1.0, -1.0]), label=GateLabel.PAULI_Z)


# ---------------------------------------------------------------------------
# Batched kernels
# ---------------------------------------------------------------------------

def check_capacity(n_qubits: int, limit: int = MAX_QUBITS) -> None:
    if not 1 <= n_qubits <= limit:
        raise CapacityError(f"n_qubits must be in [1, {limit}], got {n_qubits}")


def check_wire(wire: int, n_qubits: int) -> None:
    if not 0 <= wire < n_qubits:
        raise InvalidArgumentError(f"wire {wire} out of range for {n_qubits} qubits")


def ground_states(n_qubits: int, batch: int) -> np.ndarray:
    states = np.zeros((batch, 2 ** n_qubits), dtype=np.complex128)
    states[:, 0] = 1.0
    return states


def apply_1q_batch(states: np.ndarray, matrices: np.ndarray, wire: int, n_qubits: int) -> np.ndarray:
    """Apply one 2x2 matrix (shared or one per state) to `wire` of every state."""
    batch = states.shape[0]
    view = states.reshape(batch, 2 ** wire, 2, 2 ** (n_qubits - wire - 1))
    if matrices.ndim == 2:
        out = np.einsum("ij,bajc->baic", matrices, view)
    else:
        out = np.einsum("bij,bajc->baic", matrices, view)
    return out.reshape(batch, -1)


@lru_cache(maxsize=None)
def cnot_permutation(n_qubits: int, control: int, target: int) -> np.ndarray:
    """Basis permutation of CNOT(control -> target); it is its own inverse."""
    idx = np.arange(2 ** n_qubits)
    control_bit = (idx >> (n_qubits - 1 - control)) & 1
    return idx ^ (control_bit << (n_qubits - 1 - target))


def apply_cnot_batch(states: np.ndarray, control: int, target: int, n_qubits: int) -> np.ndarray:
    return states[:, cnot_permutation(n_qubits, control, target)]


@lru_cache(maxsize=None)
def z_signs(n_qubits: int) -> np.ndarray:
    """``[2**n, n]`` table of +1 (bit 0) / -1 (bit 1) per basis index and wire."""
    idx = np.arange(2 ** n_qubits)[:, None]
    shifts = n_qubits - 1 - np.arange(n_qubits)[None, :]
    return 1.0 - 2.0 * ((idx >> shifts) & 1)


def expect_z_from_probs(probs: np.ndarray, n_qubits: int) -> np.ndarray:
    """Per-wire <Z> from basis probabilities ``[batch, 2**n]``."""
    return np.clip(probs @ z_signs(n_qubits), -1.0, 1.0)


def expect_z_batch(states: np.ndarray, n_qubits: int) -> np.ndarray:
    return expect_z_from_probs(np.abs(states) ** 2, n_qubits)


class RegisterBackend(ABC):
    """A batch of registers that a circuit can be played on."""

    def __init__(self, n_qubits: int, batch: int):
        self.n_qubits = n_qubits
        self.batch = batch

    @abstractmethod
    def rotate(self, axis: str, angles: AngleLike, wire: int) -> None:
        """Apply a rotation; `angles` is a scalar or one angle per register."""

    @abstractmethod
    def cnot(self, control: int, target: int) -> None:
        """Apply CNOT(control -> target) to every register."""

    @abstractmethod
    def expect_z(self) -> np.ndarray:
        """Per-register, per-wire <Z> as a ``[batch, n_qubits]`` array."""


class StateVectorBackend(RegisterBackend):
    """Noiseless backend: a stack of pure states."""

    def __init__(self, n_qubits: int, batch: int):
        check_capacity(n_qubits)
        super().__init__(n_qubits, batch)
        self.states = ground_states(n_qubits, batch)

    def rotate(self, axis: str, angles: AngleLike, wire: int) -> None:
        self.states = apply_1q_batch(self.states, rotation_matrices(axis, angles), wire, self.n_qubits)

    def cnot(self, control: int, target: int) -> None:
        self.states = apply_cnot_batch(self.states, control, target, self.n_qubits)

    def expect_z(self) -> np.ndarray:
        return expect_z_batch(self.states, self.n_qubits)


# ---------------------------------------------------------------------------
# Single-state API
# ---------------------------------------------------------------------------

def ground_state(n_qubits: int) -> StateVector:
    """|0...0> on `n_qubits` wires (1..12)."""
    check_capacity(n_qubits)
    return StateVector(n_qubits=n_qubits, amplitudes=ground_states(n_qubits, 1)[0])


def apply_1q(state: StateVector, gate: Gate1Q, wire: int) -> StateVector:
    check_wire(wire, state.n_qubits)
    out = apply_1q_batch(state.amplitudes[None, :], gate.matrix, wire, state.n_qubits)
    return StateVector(n_qubits=state.n_qubits, amplitudes=out[0])


def apply_cnot(state: StateVector, control: int, target: int) -> StateVector:
    if control == target:
        raise InvalidArgumentError("CNOT control and target must differ")
    check_wire(control, state.n_qubits)
    check_wire(target, state.n_qubits)
    out = apply_cnot_batch(state.amplitudes[None, :], control, target, state.n_qubits)
    return StateVector(n_qubits=state.n_qubits, amplitudes=out[0])


def expect_z(state: StateVector, wire: int) -> float:
    check_wire(wire, state.n_qubits)
    return float(expect_z_batch(state.amplitudes[None, :], state.n_qubits)[0, wire])


def measure_all(state: StateVector) -> Observation:
    """<Z> on every wire."""
    return Observation(values=expect_z_batch(state.amplitudes[None, :], state.n_qubits)[0])
