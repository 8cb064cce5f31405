"""Angle encoding of real feature vectors into product states.

Each feature x_i in (-1, 1) drives RY(pi * x_i) on wire i, so the wire
amplitudes are [cos(pi*x_i/2), sin(pi*x_i/2)] and <Z_i> = cos(pi*x_i).
"""
import logging

import numpy as np
from pydantic import BaseModel, Field, field_validator

from src.errors import InvalidArgumentError
from src.simcore import StateVector, apply_1q, ground_state, make_rotation

logger = logging.getLogger(__name__)

ANGLE_SCALE = np.pi


class FeatureVector(BaseModel):
    """One real value per wire."""
    values: np.ndarray = Field(description="Finite reals, one per qubit")

    model_config = {
        "arbitrary_types_allowed": True
    }

    @field_validator("values", mode="before")
    @classmethod
    def check_finite(cls, v):
        arr = np.asarray(v, dtype=np.float64).reshape(-1)
        if arr.size == 0:
            raise ValueError("feature vector is empty")
        if not np.all(np.isfinite(arr)):
            raise ValueError("feature vector has non-finite entries")
        return arr


def squash(features: FeatureVector) -> FeatureVector:
    """Bound features into (-1, 1) with tanh."""
    return FeatureVector(values=np.tanh(features.values))


def check_encodable(values: np.ndarray) -> None:
    if np.any(np.abs(values) >= 1.0):
        raise InvalidArgumentError("encoded features must lie strictly inside (-1, 1)")


def encoding_angles(values: np.ndarray) -> np.ndarray:
    """RY angles for squashed features; works on any array shape."""
    values = np.asarray(values, dtype=np.float64)
    check_encodable(values)
    return ANGLE_SCALE * values


def encode(features: FeatureVector) -> StateVector:
    """Product state prod_i RY(pi * x_i)|0>."""
    angles = encoding_angles(features.values)
    state = ground_state(len(angles))
    for wire, angle in enumerate(angles):
        state = apply_1q(state, make_rotation("Y", float(angle)), wire)
    return state
