"""Gradient estimation for circuit parameters and first-order optimizers.

Both estimators are central differences over a flattened parameter
vector: finite differences evaluate at +/-eps and divide by 2*eps, the
parameter-shift rule evaluates at +/-pi/2 and divides by 2 (exact for Pauli
rotation angles). The Jacobian variants accept functions returning arrays
so a whole batch of circuit outputs is differentiated in one sweep.
"""
import logging
from enum import Enum
from typing import Callable, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field, field_validator

from src.errors import InvalidArgumentError, NumericError

logger = logging.getLogger(__name__)

DEFAULT_EPS = 1e-3
SHIFT = np.pi / 2.0

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPSILON = 1e-8


class GradientVector(BaseModel):
    """Gradient aligned index-for-index with a flattened parameter vector."""
    values: np.ndarray

    model_config = {
        "arbitrary_types_allowed": True
    }

    @field_validator("values", mode="before")
    @classmethod
    def check_finite(cls, v):
        arr = np.asarray(v, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(arr)):
            raise ValueError("gradient has non-finite entries")
        return arr

    def __len__(self) -> int:
        return int(self.values.shape[0])


def _shifted_value(fn: Callable[[np.ndarray], np.ndarray], point: np.ndarray, index: int) -> np.ndarray:
    value = np.asarray(fn(point), dtype=np.float64)
    if not np.all(np.isfinite(value)):
        raise NumericError(f"non-finite loss while shifting parameter {index}", index=index)
    return value


def central_jacobian(
    fn: Callable[[np.ndarray], np.ndarray],
    params: np.ndarray,
    shift: float,
    denom: float,
) -> np.ndarray:
    """``[len(params), *out]`` array of (fn(p + shift e_i) - fn(p - shift e_i)) / denom.

    Costs exactly 2 * len(params) evaluations of `fn`.
    """
    params = np.asarray(params, dtype=np.float64).reshape(-1)
    rows = []
    for i in range(params.shape[0]):
        plus = params.copy()
        plus[i] += shift
        minus = params.copy()
        minus[i] -= shift
        rows.append((_shifted_value(fn, plus, i) - _shifted_value(fn, minus, i)) / denom)
    return np.stack(rows) if rows else np.zeros((0,))


def finite_diff_jacobian(fn: Callable[[np.ndarray], np.ndarray], params: np.ndarray, eps: float = DEFAULT_EPS) -> np.ndarray:
    if not eps > 0:
        raise InvalidArgumentError(f"eps must be positive, got {eps}")
    return central_jacobian(fn, params, eps, 2.0 * eps)


def parameter_shift_jacobian(fn: Callable[[np.ndarray], np.ndarray], params: np.ndarray) -> np.ndarray:
    return central_jacobian(fn, params, SHIFT, 2.0)


def finite_diff_grad(loss_at: Callable[[np.ndarray], float], params: np.ndarray, eps: float = DEFAULT_EPS) -> GradientVector:
    """Central finite-difference gradient of a scalar loss."""
    return GradientVector(values=finite_diff_jacobian(loss_at, params, eps).reshape(-1))


def parameter_shift_grad(qnn_loss: Callable[[np.ndarray], float], params: np.ndarray) -> GradientVector:
    """Parameter-shift gradient; exact when every parameter is a Pauli-rotation angle."""
    return GradientVector(values=parameter_shift_jacobian(qnn_loss, params).reshape(-1))


def relative_error(estimate: np.ndarray, reference: np.ndarray, floor: float = 1e-12) -> Tuple[float, int]:
    """Max abs difference scaled by the larger of the two vectors' max magnitudes.

    `floor` bounds the scale from below. Gradient checks pass the largest
    gradient magnitude of the whole layer or model, so a tensor whose true
    gradient is zero is judged in absolute terms against that scale.
    Returns the error and the index of the worst component.
    """
    a = np.asarray(estimate, dtype=np.float64).reshape(-1)
    b = np.asarray(reference, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise InvalidArgumentError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.size == 0:
        return 0.0, -1
    diff = np.abs(a - b)
    scale = max(float(np.max(np.abs(a))), float(np.max(np.abs(b))), floor, 1e-12)
    worst = int(np.argmax(diff))
    return float(diff[worst] / scale), worst


# ---------------------------------------------------------------------------
# Optimizers
# ---------------------------------------------------------------------------

class OptimizerKind(str, Enum):
    SGD = "sgd"
    ADAM = "adam"


class OptimizerState(BaseModel):
    """Per-tensor optimizer state; moments are only used by Adam."""
    kind: OptimizerKind = OptimizerKind.ADAM
    learning_rate: float = Field(gt=0)
    step_count: int = Field(default=0, ge=0)
    first_moment: Optional[np.ndarray] = None
    second_moment: Optional[np.ndarray] = None
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    epsilon_hat: float = ADAM_EPSILON

    model_config = {
        "arbitrary_types_allowed": True
    }


def step(opt: OptimizerState, params: np.ndarray, grad: GradientVector) -> Tuple[OptimizerState, np.ndarray]:
    """One update; returns a new state and new parameters, inputs are left untouched."""
    params = np.asarray(params, dtype=np.float64)
    g = grad.values
    if g.shape[0] != params.size:
        raise InvalidArgumentError(f"gradient length {g.shape[0]} does not match {params.size} parameters")
    g = g.reshape(params.shape)

    if opt.kind == OptimizerKind.SGD:
        new_params = params - opt.learning_rate * g
        return opt.model_copy(update={"step_count": opt.step_count + 1}), new_params

    m = np.zeros_like(params) if opt.first_moment is None else opt.first_moment.reshape(params.shape)
    v = np.zeros_like(params) if opt.second_moment is None else opt.second_moment.reshape(params.shape)
    t = opt.step_count + 1
    m = opt.beta1 * m + (1.0 - opt.beta1) * g
    v = opt.beta2 * v + (1.0 - opt.beta2) * (g * g)
    m_hat = m / (1.0 - opt.beta1 ** t)
    v_hat = v / (1.0 - opt.beta2 ** t)
    new_params = params - opt.learning_rate * m_hat / (np.sqrt(v_hat) + opt.epsilon_hat)
    new_state = opt.model_copy(update={"step_count": t, "first_moment": m, "second_moment": v})
    return new_state, new_params
