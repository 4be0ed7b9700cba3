"""The five elementary movement costs and their derivatives in z.

Each basis term is a sum over trajectory knots:

    phi_1  sum_{k=0}^{N-2} |dq_k|^2          joint velocity
    phi_2  sum_{k=0}^{N-3} |tau_k|^2         joint torque
    phi_3  sum_{k=0}^{N-2} |J(q_k) dq_k|^2   hand velocity
    phi_4  sum_{k=0}^{N-3} |(ddq_{k+1} - ddq_k) / dt|^2   joint jerk
    phi_5  sum_{k=0}^{N-3} |(tau_{k+1} - tau_k) / dt|^2   torque rate

with ``tau_k = tau(q_k, dq_k, ddq_k)`` defined on knots 0..N-2.  Difference
quotients run over every index pair for which both knots exist.  The total
objective is the weighted sum ``f(z; theta) = sum_j theta_j phi_j(z)``, linear
in the weights, which is what the parameter-derivative structure of the
optimality system relies on.

Gradients and Hessians are assembled per knot from the arm model derivatives;
Hessians are returned sparse.  A knot's own coordinates are ordered
``(q_k, dq_k, ddq_k)`` as in the torque state convention.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sparse

from .arm import (
    ArmParams,
    JointState,
    fk_derivatives,
    fk_third_derivatives,
    inverse_dynamics,
    inverse_dynamics_derivatives,
)
from .transcription import Horizon, unpack

N_BASES = 5
BASIS_LABELS = (
    "joint_velocity",
    "joint_torque",
    "hand_velocity",
    "joint_jerk",
    "torque_rate",
)


@dataclass(frozen=True)
class BehavioralParams:
    """Weights of the five basis costs, in the order of ``BASIS_LABELS``."""

    weights: np.ndarray

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (N_BASES,):
            raise ValueError(f"weights must have shape ({N_BASES},)")
        if not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite")
        object.__setattr__(self, "weights", w)


def as_weights(theta) -> np.ndarray:
    """Coerce ``theta`` (array-like or BehavioralParams) to a ``(5,)`` array."""
    if isinstance(theta, BehavioralParams):
        return theta.weights
    return BehavioralParams(np.asarray(theta, dtype=float)).weights


@dataclass
class _BasisTerm:
    value: float
    grad: np.ndarray
    rows: np.ndarray
    cols: np.ndarray
    vals: np.ndarray


def _scatter(rows, cols, vals, row_idx, col_idx, blocks) -> None:
    k, a = row_idx.shape
    b = col_idx.shape[1]
    rows.append(np.broadcast_to(row_idx[:, :, None], (k, a, b)).ravel())
    cols.append(np.broadcast_to(col_idx[:, None, :], (k, a, b)).ravel())
    vals.append(np.ascontiguousarray(blocks, dtype=float).ravel())


def _collect(value, grad, rows, cols, vals) -> _BasisTerm:
    if rows:
        return _BasisTerm(
            float(value), grad, np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)
        )
    return _BasisTerm(float(value), grad, np.empty(0, int), np.empty(0, int), np.empty(0))


def _basis_terms(z: np.ndarray, horizon: Horizon, params: ArmParams) -> list[_BasisTerm]:
    traj = unpack(z, horizon)
    n = horizon.samples
    dim = horizon.dim_z
    dt = horizon.dt

    # Knots 0..N-2 carry a full (q, dq, ddq) state and hence a torque.
    kt = n - 1
    ks = np.arange(kt)
    idx_q = 2 * ks[:, None] + np.array([0, 1])
    idx_dq = horizon.dq_offset + idx_q
    idx_ddq = horizon.ddq_offset + idx_q
    idx6 = np.concatenate([idx_q, idx_dq, idx_ddq], axis=1)

    qv = traj.q[:kt]
    dqv = traj.dq[:kt]
    state = JointState(q=qv, dq=dqv, ddq=traj.ddq)
    tau = inverse_dynamics(state, params)
    jt, ht = inverse_dynamics_derivatives(state, params)
    jac, hf = fk_derivatives(qv, params)
    t3 = fk_third_derivatives(qv, params)

    terms = []

    # phi_1: joint velocity
    grad = np.zeros(dim)
    grad_dq = 2.0 * dqv
    np.add.at(grad, idx_dq.ravel(), grad_dq.ravel())
    rows, cols, vals = [], [], []
    diag = np.broadcast_to(2.0 * np.eye(2), (kt, 2, 2))
    _scatter(rows, cols, vals, idx_dq, idx_dq, diag)
    terms.append(_collect((dqv**2).sum(), grad, rows, cols, vals))

    # phi_2: joint torque
    t2, j2, h2 = tau[:-1], jt[:-1], ht[:-1]
    grad = np.zeros(dim)
    g6 = 2.0 * np.einsum("kia,ki->ka", j2, t2)
    np.add.at(grad, idx6[:-1].ravel(), g6.ravel())
    h66 = 2.0 * (
        np.einsum("kia,kib->kab", j2, j2) + np.einsum("ki,kiab->kab", t2, h2)
    )
    rows, cols, vals = [], [], []
    _scatter(rows, cols, vals, idx6[:-1], idx6[:-1], h66)
    terms.append(_collect((t2**2).sum(), grad, rows, cols, vals))

    # phi_3: hand velocity
    v = np.einsum("kij,kj->ki", jac, dqv)
    bmat = np.einsum("kilj,kl->kij", hf, dqv)  # d v_i / d q_j
    grad = np.zeros(dim)
    np.add.at(grad, idx_q.ravel(), (2.0 * np.einsum("kij,ki->kj", bmat, v)).ravel())
    np.add.at(grad, idx_dq.ravel(), (2.0 * np.einsum("kij,ki->kj", jac, v)).ravel())
    h_qq = 2.0 * (
        np.einsum("kij,kim->kjm", bmat, bmat)
        + np.einsum("ki,kiljm,kl->kjm", v, t3, dqv)
    )
    h_dqdq = 2.0 * np.einsum("kia,kib->kab", jac, jac)
    h_dqq = 2.0 * (
        np.einsum("ki,kilj->klj", v, hf) + np.einsum("kil,kij->klj", jac, bmat)
    )
    rows, cols, vals = [], [], []
    _scatter(rows, cols, vals, idx_q, idx_q, h_qq)
    _scatter(rows, cols, vals, idx_dq, idx_dq, h_dqdq)
    _scatter(rows, cols, vals, idx_dq, idx_q, h_dqq)
    _scatter(rows, cols, vals, idx_q, idx_dq, np.swapaxes(h_dqq, 1, 2))
    terms.append(_collect((v**2).sum(), grad, rows, cols, vals))

    # phi_4: joint jerk
    c = 2.0 / dt**2
    u = traj.ddq[1:] - traj.ddq[:-1]
    grad = np.zeros(dim)
    gdd = np.zeros((horizon.n_ddq, 2))
    gdd[:-1] -= c * u
    gdd[1:] += c * u
    np.add.at(grad, (horizon.ddq_offset + np.arange(2 * horizon.n_ddq)), gdd.ravel())
    eye = np.broadcast_to(c * np.eye(2), (kt - 1, 2, 2))
    rows, cols, vals = [], [], []
    _scatter(rows, cols, vals, idx_ddq[:-1], idx_ddq[:-1], eye)
    _scatter(rows, cols, vals, idx_ddq[1:], idx_ddq[1:], eye)
    _scatter(rows, cols, vals, idx_ddq[:-1], idx_ddq[1:], -eye)
    _scatter(rows, cols, vals, idx_ddq[1:], idx_ddq[:-1], -eye)
    terms.append(_collect((u**2).sum() / dt**2, grad, rows, cols, vals))

    # phi_5: torque rate
    u = tau[1:] - tau[:-1]
    grad = np.zeros(dim)
    np.add.at(grad, idx6[:-1].ravel(), (-c * np.einsum("kia,ki->ka", jt[:-1], u)).ravel())
    np.add.at(grad, idx6[1:].ravel(), (c * np.einsum("kia,ki->ka", jt[1:], u)).ravel())
    h_lo = c * (
        np.einsum("kia,kib->kab", jt[:-1], jt[:-1])
        - np.einsum("ki,kiab->kab", u, ht[:-1])
    )
    h_hi = c * (
        np.einsum("kia,kib->kab", jt[1:], jt[1:])
        + np.einsum("ki,kiab->kab", u, ht[1:])
    )
    h_cross = -c * np.einsum("kia,kib->kab", jt[:-1], jt[1:])  # rows knot k, cols knot k+1
    rows, cols, vals = [], [], []
    _scatter(rows, cols, vals, idx6[:-1], idx6[:-1], h_lo)
    _scatter(rows, cols, vals, idx6[1:], idx6[1:], h_hi)
    _scatter(rows, cols, vals, idx6[:-1], idx6[1:], h_cross)
    _scatter(rows, cols, vals, idx6[1:], idx6[:-1], np.swapaxes(h_cross, 1, 2))
    terms.append(_collect((u**2).sum() / dt**2, grad, rows, cols, vals))

    return terms


# The solver and the optimality system repeatedly query the same z through
# different accessors; one memo slot removes the duplicated arm-model work.
_memo: tuple | None = None


def _terms(z: np.ndarray, horizon: Horizon, params: ArmParams) -> list[_BasisTerm]:
    global _memo
    z = np.ascontiguousarray(z, dtype=float)
    key = (z.tobytes(), horizon, params)
    if _memo is not None and _memo[0] == key:
        return _memo[1]
    result = _basis_terms(z, horizon, params)
    _memo = (key, result)
    return result


def basis_values(z: np.ndarray, horizon: Horizon, params: ArmParams) -> np.ndarray:
    """Values of the five basis costs, shape ``(5,)``."""
    return np.array([t.value for t in _terms(z, horizon, params)])


def basis_gradients(z: np.ndarray, horizon: Horizon, params: ArmParams) -> np.ndarray:
    """Stacked gradients, shape ``(5, 6N)``."""
    return np.stack([t.grad for t in _terms(z, horizon, params)])


def basis_hessians(
    z: np.ndarray, horizon: Horizon, params: ArmParams
) -> list[sparse.csr_matrix]:
    """Hessian of each basis cost as a sparse ``(6N, 6N)`` matrix."""
    dim = horizon.dim_z
    out = []
    for t in _terms(z, horizon, params):
        mat = sparse.coo_matrix((t.vals, (t.rows, t.cols)), shape=(dim, dim))
        out.append(mat.tocsr())
    return out


def basis_gradient_matrix(
    z: np.ndarray, horizon: Horizon, params: ArmParams
) -> np.ndarray:
    """Derivative of the objective gradient in the weights: column j is grad phi_j."""
    return basis_gradients(z, horizon, params).T


def weighted_objective(
    z: np.ndarray, theta, horizon: Horizon, params: ArmParams
) -> tuple[float, np.ndarray, sparse.csr_matrix]:
    """Value, gradient, and sparse Hessian of ``sum_j theta_j phi_j``."""
    w = as_weights(theta)
    terms = _terms(z, horizon, params)
    value = float(sum(wj * t.value for wj, t in zip(w, terms)))
    grad = np.zeros(horizon.dim_z)
    for wj, t in zip(w, terms):
        if wj != 0.0:
            grad += wj * t.grad
    rows = np.concatenate([t.rows for t in terms])
    cols = np.concatenate([t.cols for t in terms])
    vals = np.concatenate([wj * t.vals for wj, t in zip(w, terms)])
    hess = sparse.coo_matrix((vals, (rows, cols)), shape=(horizon.dim_z,) * 2).tocsr()
    return value, grad, hess
