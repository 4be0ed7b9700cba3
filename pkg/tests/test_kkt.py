"""Optimality-system tests: residual structure, homogeneity, derivatives."""

import numpy as np
import pytest
import scipy.io

from conftest import central_difference, random_z
from reachioc.cost_basis import N_BASES, basis_gradient_matrix, weighted_objective
from reachioc.kkt import (
    KktPoint,
    dump_kkt_system,
    kkt_jacobian_primal_dual,
    kkt_jacobian_theta,
    kkt_residual_norm,
    kkt_vector,
)
from reachioc.transcription import (
    DimensionMismatch,
    constraints,
    constraints_jacobian,
)


def random_point(rng, horizon):
    z = random_z(rng, horizon)
    nu = rng.uniform(-10.0, 10.0, horizon.n_constraints)
    theta = rng.uniform(0.05, 1.0, N_BASES)
    return z, nu, theta


def test_residual_blocks(arm, env, small_horizon):
    rng = np.random.default_rng(31)
    z, nu, theta = random_point(rng, small_horizon)
    vec = kkt_vector(z, nu, theta, env, small_horizon, arm)
    assert vec.shape == (small_horizon.dim_z + small_horizon.n_constraints,)
    # with zero multipliers the stationarity block is the bare objective gradient
    vec0 = kkt_vector(z, np.zeros(small_horizon.n_constraints), theta, env, small_horizon, arm)
    _, grad, _ = weighted_objective(z, theta, small_horizon, arm)
    assert np.allclose(vec0[: small_horizon.dim_z], grad)
    # the feasibility block is the constraint residual for any multipliers
    resid = constraints(z, env, small_horizon, arm)
    assert np.array_equal(vec[small_horizon.dim_z :], resid)
    # multipliers enter through the transposed constraint Jacobian
    jac = constraints_jacobian(z, env, small_horizon, arm)
    assert np.allclose(vec[: small_horizon.dim_z], grad + jac.T @ nu)


def test_scaling_weights_and_multipliers_preserves_roots(arm, env, small_horizon):
    # K is linear in (theta, nu) jointly: scaling both scales the stationarity
    # block exactly and leaves feasibility untouched.
    rng = np.random.default_rng(32)
    for _ in range(10):
        z, nu, theta = random_point(rng, small_horizon)
        c = rng.uniform(0.1, 30.0)
        vec = kkt_vector(z, nu, theta, env, small_horizon, arm)
        scaled = kkt_vector(z, c * nu, c * theta, env, small_horizon, arm)
        top = slice(0, small_horizon.dim_z)
        norm = max(1.0, np.abs(vec[top]).max())
        assert np.abs(scaled[top] - c * vec[top]).max() / norm < 1e-12
        assert np.array_equal(scaled[small_horizon.dim_z :], vec[small_horizon.dim_z :])


def test_primal_dual_jacobian_matches_finite_differences(arm, env, small_horizon):
    rng = np.random.default_rng(33)
    z, nu, theta = random_point(rng, small_horizon)
    jac = kkt_jacobian_primal_dual(z, nu, theta, env, small_horizon, arm)
    dense = jac.toarray()
    assert np.allclose(dense, dense.T, atol=1e-10)

    def residual_of_pair(pair):
        return kkt_vector(
            pair[: small_horizon.dim_z],
            pair[small_horizon.dim_z :],
            theta,
            env,
            small_horizon,
            arm,
        )

    fd = central_difference(residual_of_pair, np.concatenate([z, nu]))
    scale = max(1.0, np.abs(fd).max())
    assert np.abs(dense - fd).max() / scale < 1e-5


def test_theta_jacobian_matches_finite_differences(arm, env, small_horizon):
    rng = np.random.default_rng(34)
    z, nu, theta = random_point(rng, small_horizon)
    jac = kkt_jacobian_theta(z, nu, theta, env, small_horizon, arm).toarray()
    fd = central_difference(
        lambda t: kkt_vector(z, nu, t, env, small_horizon, arm), theta
    )
    scale = max(1.0, np.abs(fd).max())
    assert np.abs(jac - fd).max() / scale < 1e-6
    # the feasibility block never depends on the weights
    assert np.abs(jac[small_horizon.dim_z :]).max() == 0.0
    assert np.allclose(
        jac[: small_horizon.dim_z],
        basis_gradient_matrix(z, small_horizon, arm),
    )


def test_residual_norm_and_point(arm, env, small_horizon):
    rng = np.random.default_rng(35)
    z, nu, theta = random_point(rng, small_horizon)
    vec = kkt_vector(z, nu, theta, env, small_horizon, arm)
    assert kkt_residual_norm(z, nu, theta, env, small_horizon, arm) == pytest.approx(
        np.abs(vec).max()
    )
    point = KktPoint(z=z, nu=nu, residual_norm=1.0)
    assert point.z is z


def test_nu_shape_is_checked(arm, env, small_horizon):
    rng = np.random.default_rng(36)
    z = random_z(rng, small_horizon)
    theta = np.full(N_BASES, 0.2)
    with pytest.raises(DimensionMismatch):
        kkt_vector(z, np.zeros(3), theta, env, small_horizon, arm)


def test_dump_kkt_system_writes_matrix_market(tmp_path, arm, env, small_horizon):
    rng = np.random.default_rng(37)
    z, nu, theta = random_point(rng, small_horizon)
    paths = dump_kkt_system(str(tmp_path / "sys"), z, nu, theta, env, small_horizon, arm)
    assert len(paths) == 3
    vec = scipy.io.mmread(paths[0])
    assert vec.shape == (small_horizon.dim_z + small_horizon.n_constraints, 1)
    jac = scipy.io.mmread(paths[1]).tocsr()
    expected = kkt_jacobian_primal_dual(z, nu, theta, env, small_horizon, arm)
    assert np.allclose(jac.toarray(), expected.toarray())
