import numpy as np
import pytest
from termcolor import colored

from src.errors import CapacityError, InvalidArgumentError
from src.simcore import (
    StateVector,
    apply_1q,
    apply_cnot,
    expect_z,
    ground_state,
    make_rotation,
    measure_all,
    pauli_z,
    rotation_matrices,
)


def test_rotation_matrices_are_unitary(rng):
    angles = rng.uniform(-2 * np.pi, 2 * np.pi, 20)
    for axis in "XYZ":
        mats = rotation_matrices(axis, angles)
        eye = np.einsum("bij,bkj->bik", mats, mats.conj())
        assert np.allclose(eye, np.eye(2)[None], atol=1e-12)


def test_rx_pi_flips_ground_state():
    state = apply_1q(ground_state(1), make_rotation("X", np.pi), 0)
    assert np.allclose(state.amplitudes, [0, -1j], atol=1e-12)
    assert expect_z(state, 0) == pytest.approx(-1.0, abs=1e-12)


def test_ry_half_pi_gives_zero_expectation():
    state = apply_1q(ground_state(1), make_rotation("Y", np.pi / 2), 0)
    assert expect_z(state, 0) == pytest.approx(0.0, abs=1e-12)


def test_wire_zero_is_most_significant_bit():
    state = apply_1q(ground_state(2), make_rotation("X", np.pi), 0)
    # |10> has basis index 2
    assert abs(state.amplitudes[2]) == pytest.approx(1.0)


def test_cnot_copies_control_bit():
    state = apply_1q(ground_state(2), make_rotation("X", np.pi), 0)
    state = apply_cnot(state, 0, 1)
    assert np.allclose(measure_all(state).values, [-1.0, -1.0], atol=1e-12)


def test_cnot_with_control_zero_is_identity(rng):
    state = apply_1q(ground_state(3), make_rotation("Y", 0.7), 2)
    after = apply_cnot(state, 0, 2)
    assert np.allclose(after.amplitudes, state.amplitudes)


def test_norm_preserved_after_100_random_gates(rng):
    """Norm stays 1 through a long random gate sequence"""
    print(colored("\n=== Testing norm conservation ===", "blue"))
    n = 4
    state = ground_state(n)
    for _ in range(100):
        if rng.random() < 0.3:
            c, t = rng.choice(n, size=2, replace=False)
            state = apply_cnot(state, int(c), int(t))
        else:
            state = apply_1q(state, make_rotation(str(rng.choice(list("XYZ"))), rng.uniform(-np.pi, np.pi)), int(rng.integers(n)))
    assert state.norm_error() < 1e-10
    assert np.all(np.abs(measure_all(state).values) <= 1 + 1e-10)
    print(colored(f"✓ Norm error {state.norm_error():.2e}", "green"))


def test_pauli_z_gate_keeps_populations():
    state = apply_1q(ground_state(1), make_rotation("Y", 1.1), 0)
    flipped = apply_1q(state, pauli_z(), 0)
    assert expect_z(flipped, 0) == pytest.approx(expect_z(state, 0))


def test_invalid_arguments():
    with pytest.raises(InvalidArgumentError):
        apply_cnot(ground_state(2), 1, 1)
    with pytest.raises(InvalidArgumentError):
        apply_1q(ground_state(2), make_rotation("X", 0.1), 2)
    with pytest.raises(InvalidArgumentError):
        make_rotation("X", float("nan"))
    with pytest.raises(InvalidArgumentError):
        make_rotation("W", 0.1)


def test_capacity_limit():
    with pytest.raises(CapacityError):
        ground_state(13)
    with pytest.raises(CapacityError):
        ground_state(0)


def test_state_vector_length_is_checked():
    with pytest.raises(ValueError):
        StateVector(n_qubits=2, amplitudes=np.ones(3))


def test_ry_rotations_compose_additively(rng):
    a = rng.uniform(-np.pi, np.pi, 10)
    b = rng.uniform(-np.pi, np.pi, 10)
    product = rotation_matrices("Y", a) @ rotation_matrices("Y", b)
    assert np.allclose(product, rotation_matrices("Y", a + b), atol=1e-12)


def test_cnot_twice_is_identity(rng):
    state = ground_state(3)
    for w in range(3):
        state = apply_1q(state, make_rotation("Y", rng.uniform(-np.pi, np.pi)), w)
        state = apply_1q(state, make_rotation("Z", rng.uniform(-np.pi, np.pi)), w)
    twice = apply_cnot(apply_cnot(state, 2, 0), 2, 0)
    assert np.allclose(twice.amplitudes, state.amplitudes, atol=1e-12)
