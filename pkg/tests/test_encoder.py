import numpy as np
import pytest

from src.encoder import FeatureVector, check_encodable, encode, encoding_angles, squash
from src.errors import InvalidArgumentError
from src.simcore import measure_all


def test_encoded_expectations_are_cos_pi_x(rng):
    x = rng.uniform(-0.99, 0.99, 5)
    state = encode(FeatureVector(values=x))
    assert state.n_qubits == 5
    assert np.allclose(measure_all(state).values, np.cos(np.pi * x), atol=1e-12)


def test_zero_features_give_ground_state():
    state = encode(FeatureVector(values=np.zeros(3)))
    assert abs(state.amplitudes[0]) == pytest.approx(1.0)


def test_half_feature_is_equal_superposition():
    state = encode(FeatureVector(values=[0.5]))
    assert np.allclose(np.abs(state.amplitudes) ** 2, [0.5, 0.5])


def test_squash_lands_inside_open_interval():
    squashed = squash(FeatureVector(values=[-3.0, 0.0, 3.0]))
    check_encodable(squashed.values)
    assert np.allclose(squashed.values, np.tanh([-3.0, 0.0, 3.0]))


def test_boundary_features_are_rejected():
    with pytest.raises(InvalidArgumentError):
        encoding_angles(np.array([0.2, 1.0]))
    with pytest.raises(InvalidArgumentError):
        encode(FeatureVector(values=[-1.0]))


def test_non_finite_features_are_rejected():
    with pytest.raises(ValueError):
        FeatureVector(values=[0.1, np.nan])
    with pytest.raises(ValueError):
        FeatureVector(values=[])


def test_expectation_falls_as_feature_grows():
    x = np.linspace(0.0, 0.99, 25)
    z = [measure_all(encode(FeatureVector(values=[v]))).values[0] for v in x]
    assert np.all(np.diff(z) < 0)


def test_encoding_is_a_product_state(rng):
    x = rng.uniform(-0.95, 0.95, 3)
    state = encode(FeatureVector(values=x))
    expected = np.ones(1)
    for v in x:
        expected = np.kron(expected, [np.cos(np.pi * v / 2), np.sin(np.pi * v / 2)])
    assert np.allclose(np.abs(state.amplitudes), np.abs(expected), atol=1e-12)
