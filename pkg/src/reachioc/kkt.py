"""First-order optimality system of the transcribed reaching problem.

For the equality-constrained problem min_z f(z; theta) s.t. h(z; x) = 0 the
stationarity-and-feasibility residual in the primal-dual pair (z, nu) is

    K(z, nu; theta, x) = [ grad_z f + Jh(z)^T nu ]
                         [ h(z)                  ]

A root of K is exactly a KKT point of the reaching problem, which lets the
estimation stage treat optimality itself as a constraint.  Because f is
linear in theta and h does not involve theta, the derivative of K in the
weights is the stacked basis gradient matrix over a zero block, and the
derivative in (z, nu) is the symmetric saddle-point matrix

    [ W      Jh^T ]        W = sum_j theta_j hess phi_j + sum_i nu_i hess h_i.
    [ Jh     0    ]
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.io
import scipy.sparse as sparse

from .arm import ArmParams
from .cost_basis import basis_gradient_matrix, weighted_objective
from .transcription import (
    DimensionMismatch,
    EnvironmentParams,
    Horizon,
    constraints,
    constraints_jacobian,
    constraints_weighted_hessian,
)


@dataclass
class KktPoint:
    """A candidate stationary point with its optimality residual."""

    z: np.ndarray
    nu: np.ndarray
    residual_norm: float


def _check_nu(nu: np.ndarray, horizon: Horizon) -> np.ndarray:
    nu = np.asarray(nu, dtype=float)
    if nu.shape != (horizon.n_constraints,):
        raise DimensionMismatch(
            f"nu has shape {nu.shape}, expected ({horizon.n_constraints},)"
        )
    return nu


def kkt_vector(
    z: np.ndarray,
    nu: np.ndarray,
    theta,
    env: EnvironmentParams,
    horizon: Horizon,
    params: ArmParams,
) -> np.ndarray:
    """Stationarity and feasibility residual, shape ``(6N + 4N + 2,)``."""
    nu = _check_nu(nu, horizon)
    _, grad, _ = weighted_objective(z, theta, horizon, params)
    jac = constraints_jacobian(z, env, horizon, params)
    top = grad + jac.T @ nu
    bottom = constraints(z, env, horizon, params)
    return np.concatenate([top, bottom])


def kkt_jacobian_primal_dual(
    z: np.ndarray,
    nu: np.ndarray,
    theta,
    env: EnvironmentParams,
    horizon: Horizon,
    params: ArmParams,
) -> sparse.csr_matrix:
    """Symmetric derivative of the residual in ``(z, nu)``, sparse square."""
    nu = _check_nu(nu, horizon)
    _, _, hess = weighted_objective(z, theta, horizon, params)
    w = hess + constraints_weighted_hessian(z, env, nu, horizon, params)
    jac = constraints_jacobian(z, env, horizon, params)
    zero = sparse.csr_matrix((horizon.n_constraints,) * 2)
    return sparse.bmat([[w, jac.T], [jac, zero]], format="csr")


def kkt_jacobian_theta(
    z: np.ndarray,
    nu: np.ndarray,
    theta,
    env: EnvironmentParams,
    horizon: Horizon,
    params: ArmParams,
) -> sparse.csr_matrix:
    """Derivative of the residual in the weights: basis gradients over zeros."""
    _check_nu(nu, horizon)
    top = sparse.csr_matrix(basis_gradient_matrix(z, horizon, params))
    bottom = sparse.csr_matrix((horizon.n_constraints, top.shape[1]))
    return sparse.vstack([top, bottom], format="csr")


def kkt_residual_norm(
    z: np.ndarray,
    nu: np.ndarray,
    theta,
    env: EnvironmentParams,
    horizon: Horizon,
    params: ArmParams,
) -> float:
    """Max-norm of the optimality residual."""
    return float(np.abs(kkt_vector(z, nu, theta, env, horizon, params)).max())


def dump_kkt_system(
    path_prefix: str,
    z: np.ndarray,
    nu: np.ndarray,
    theta,
    env: EnvironmentParams,
    horizon: Horizon,
    params: ArmParams,
) -> list[str]:
    """Write the residual and both Jacobians as matrix-market files.

    Produces ``<prefix>_residual.mtx``, ``<prefix>_primal_dual.mtx``, and
    ``<prefix>_theta.mtx``; returns the paths.
    """
    vec = kkt_vector(z, nu, theta, env, horizon, params)
    jac_pd = kkt_jacobian_primal_dual(z, nu, theta, env, horizon, params)
    jac_th = kkt_jacobian_theta(z, nu, theta, env, horizon, params)
    paths = []
    for name, obj in (
        ("residual", vec.reshape(-1, 1)),
        ("primal_dual", jac_pd.tocoo()),
        ("theta", jac_th.tocoo()),
    ):
        path = f"{path_prefix}_{name}.mtx"
        scipy.io.mmwrite(path, obj)
        paths.append(path)
    return paths
