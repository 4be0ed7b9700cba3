"""Cost basis tests.

The naive_values oracle below recomputes all five movement costs with plain
Python loops straight from their definitions, so the vectorized assembly is
checked against an independent rendering of the same formulas.
"""

import numpy as np
import pytest

from conftest import central_difference, random_z
from reachioc.arm import JointState, fk_derivatives, inverse_dynamics
from reachioc.cost_basis import (
    BASIS_LABELS,
    N_BASES,
    BehavioralParams,
    as_weights,
    basis_gradient_matrix,
    basis_gradients,
    basis_hessians,
    basis_values,
    weighted_objective,
)
from reachioc.transcription import Horizon, unpack


def naive_values(z, horizon, params) -> np.ndarray:
    traj = unpack(z, horizon)
    n, dt = horizon.samples, horizon.dt
    tau = [
        inverse_dynamics(
            JointState(q=traj.q[k], dq=traj.dq[k], ddq=traj.ddq[k]), params
        )
        for k in range(n - 1)
    ]
    phi1 = sum(float(traj.dq[k] @ traj.dq[k]) for k in range(n - 1))
    phi2 = sum(float(t @ t) for t in tau[: n - 2])
    phi3 = 0.0
    for k in range(n - 1):
        jac, _ = fk_derivatives(traj.q[k], params)
        v = jac @ traj.dq[k]
        phi3 += float(v @ v)
    phi4 = sum(
        float((traj.ddq[k + 1] - traj.ddq[k]) @ (traj.ddq[k + 1] - traj.ddq[k]))
        for k in range(n - 2)
    ) / dt**2
    phi5 = sum(
        float((tau[k + 1] - tau[k]) @ (tau[k + 1] - tau[k])) for k in range(n - 2)
    ) / dt**2
    return np.array([phi1, phi2, phi3, phi4, phi5])


def test_basis_labels_and_count():
    assert N_BASES == 5
    assert len(BASIS_LABELS) == 5


def test_values_match_naive_recomputation(arm, odd_arm, small_horizon):
    rng = np.random.default_rng(21)
    for params in (arm, odd_arm):
        for _ in range(5):
            z = random_z(rng, small_horizon)
            values = basis_values(z, small_horizon, params)
            expected = naive_values(z, small_horizon, params)
            assert np.allclose(values, expected, rtol=1e-12)
            assert np.all(values >= 0.0)


def test_still_trajectory_costs(arm, small_horizon):
    # A motionless arm has zero velocity, jerk, and torque-rate costs; the
    # torque cost reduces to holding against gravity at the fixed pose.
    q = np.array([0.3, -0.7])
    z = np.concatenate(
        [
            np.tile(q, small_horizon.n_q),
            np.zeros(2 * small_horizon.n_dq),
            np.zeros(2 * small_horizon.n_ddq),
        ]
    )
    values = basis_values(z, small_horizon, arm)
    hold = inverse_dynamics(JointState(q=q, dq=np.zeros(2), ddq=np.zeros(2)), arm)
    expected_torque = (small_horizon.samples - 2) * float(hold @ hold)
    assert values[0] == 0.0
    assert values[1] == pytest.approx(expected_torque, rel=1e-12)
    assert values[2] == 0.0
    assert values[3] == 0.0
    assert values[4] == 0.0


def test_gradients_match_finite_differences(arm, small_horizon):
    rng = np.random.default_rng(22)
    for _ in range(4):
        z = random_z(rng, small_horizon)
        grads = basis_gradients(z, small_horizon, arm)
        assert grads.shape == (N_BASES, small_horizon.dim_z)
        fd = central_difference(lambda x: basis_values(x, small_horizon, arm), z)
        scale = np.maximum(1.0, np.abs(fd).max(axis=1, keepdims=True))
        assert np.all(np.abs(grads - fd) / scale < 1e-5)


def test_hessians_match_finite_differences(arm, small_horizon):
    rng = np.random.default_rng(23)
    for _ in range(3):
        z = random_z(rng, small_horizon)
        hessians = basis_hessians(z, small_horizon, arm)
        fd = central_difference(lambda x: basis_gradients(x, small_horizon, arm), z)
        for j, hess in enumerate(hessians):
            dense = hess.toarray()
            assert np.allclose(dense, dense.T, atol=1e-8)
            scale = max(1.0, np.abs(fd[j]).max())
            assert np.abs(dense - fd[j]).max() / scale < 1e-4


def test_weighted_objective_linear_in_weights(arm, small_horizon):
    rng = np.random.default_rng(24)
    z = random_z(rng, small_horizon)
    values = basis_values(z, small_horizon, arm)
    grads = basis_gradients(z, small_horizon, arm)
    hessians = basis_hessians(z, small_horizon, arm)
    for _ in range(5):
        theta = rng.uniform(-1.0, 2.0, N_BASES)
        value, grad, hess = weighted_objective(z, theta, small_horizon, arm)
        assert value == pytest.approx(float(theta @ values), rel=1e-12)
        assert np.allclose(grad, theta @ grads, rtol=1e-12, atol=1e-12)
        expected = sum(t * h.toarray() for t, h in zip(theta, hessians))
        assert np.allclose(hess.toarray(), expected, rtol=1e-12, atol=1e-12)


def test_gradient_matrix_is_transposed_stack(arm, small_horizon):
    rng = np.random.default_rng(25)
    z = random_z(rng, small_horizon)
    mat = basis_gradient_matrix(z, small_horizon, arm)
    assert mat.shape == (small_horizon.dim_z, N_BASES)
    assert np.array_equal(mat, basis_gradients(z, small_horizon, arm).T)


def test_weight_validation():
    with pytest.raises(ValueError):
        BehavioralParams(np.zeros(4))
    with pytest.raises(ValueError):
        as_weights([1.0, 2.0, np.nan, 0.0, 0.0])
    w = as_weights(BehavioralParams(np.full(5, 0.2)))
    assert np.allclose(w, 0.2)
