"""Direct transcription of the reaching problem on a uniform Euler grid.

The decision vector stacks joint positions, velocities, and accelerations:

    z = (q_0..q_N, dq_0..dq_{N-1}, ddq_0..ddq_{N-2}),

so ``dim z = 6 N``.  Positions carry one more knot than velocities, which
carry one more than accelerations; each signal has exactly the knots its
forward-Euler update consumes.

Equality constraints, in this fixed row order:

    position steps   q_{k+1} - q_k - dt dq_k        k = 0..N-1   (2N rows)
    velocity steps   dq_{k+1} - dq_k - dt ddq_k     k = 0..N-2   (2N-2 rows)
    initial state    q_0 - q_init                                (2 rows)
    reach target     fk(q_N) - p_goal                            (2 rows)

for ``4N + 2`` rows total.  All residuals are written as the next knot minus
the propagated current knot.  Only the two target rows are nonlinear.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sparse

from .arm import ArmParams, fk_derivatives, forward_kinematics


class DimensionMismatch(ValueError):
    """Raised when an array does not match the dimensions a horizon implies."""


@dataclass(frozen=True)
class Horizon:
    """Uniform time grid with ``samples`` Euler steps between t0 and tf."""

    t0: float = 0.0
    tf: float = 1.2
    samples: int = 120

    def __post_init__(self) -> None:
        if not (np.isfinite(self.t0) and np.isfinite(self.tf) and self.tf > self.t0):
            raise ValueError("horizon must satisfy tf > t0")
        if int(self.samples) != self.samples or self.samples < 3:
            raise ValueError("samples must be an integer >= 3")
        object.__setattr__(self, "samples", int(self.samples))

    @property
    def dt(self) -> float:
        return (self.tf - self.t0) / self.samples

    @property
    def n_q(self) -> int:
        return self.samples + 1

    @property
    def n_dq(self) -> int:
        return self.samples

    @property
    def n_ddq(self) -> int:
        return self.samples - 1

    @property
    def dim_z(self) -> int:
        return 6 * self.samples

    @property
    def n_constraints(self) -> int:
        return 4 * self.samples + 2

    @property
    def dq_offset(self) -> int:
        return 2 * self.n_q

    @property
    def ddq_offset(self) -> int:
        return 2 * self.n_q + 2 * self.n_dq

    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_q)


@dataclass(frozen=True)
class EnvironmentParams:
    """Task description: initial joint configuration and reach target."""

    q_init: np.ndarray
    p_goal: np.ndarray

    def __post_init__(self) -> None:
        q_init = np.asarray(self.q_init, dtype=float)
        p_goal = np.asarray(self.p_goal, dtype=float)
        if q_init.shape != (2,) or p_goal.shape != (2,):
            raise ValueError("q_init and p_goal must have shape (2,)")
        if not (np.all(np.isfinite(q_init)) and np.all(np.isfinite(p_goal))):
            raise ValueError("q_init and p_goal must be finite")
        object.__setattr__(self, "q_init", q_init)
        object.__setattr__(self, "p_goal", p_goal)


@dataclass
class TrajectoryVariables:
    """Knot arrays of one trajectory: q ``(N+1, 2)``, dq ``(N, 2)``, ddq ``(N-1, 2)``."""

    q: np.ndarray
    dq: np.ndarray
    ddq: np.ndarray

    def check(self, horizon: Horizon) -> None:
        expected = {
            "q": (horizon.n_q, 2),
            "dq": (horizon.n_dq, 2),
            "ddq": (horizon.n_ddq, 2),
        }
        for name, shape in expected.items():
            arr = getattr(self, name)
            if np.shape(arr) != shape:
                raise DimensionMismatch(
                    f"{name} has shape {np.shape(arr)}, expected {shape}"
                )


def pack(traj: TrajectoryVariables, horizon: Horizon) -> np.ndarray:
    """Flatten a trajectory into the decision vector z."""
    traj.check(horizon)
    return np.concatenate(
        [np.ravel(traj.q), np.ravel(traj.dq), np.ravel(traj.ddq)]
    ).astype(float)


def unpack(z: np.ndarray, horizon: Horizon) -> TrajectoryVariables:
    """Split a decision vector into knot arrays (views, no copies)."""
    z = np.asarray(z, dtype=float)
    if z.shape != (horizon.dim_z,):
        raise DimensionMismatch(f"z has shape {z.shape}, expected ({horizon.dim_z},)")
    q = z[: horizon.dq_offset].reshape(horizon.n_q, 2)
    dq = z[horizon.dq_offset : horizon.ddq_offset].reshape(horizon.n_dq, 2)
    ddq = z[horizon.ddq_offset :].reshape(horizon.n_ddq, 2)
    return TrajectoryVariables(q=q, dq=dq, ddq=ddq)


def euler_rollout(
    q_init: np.ndarray, dq_init: np.ndarray, ddq: np.ndarray, horizon: Horizon
) -> TrajectoryVariables:
    """Integrate accelerations forward; satisfies every linear constraint row."""
    ddq = np.asarray(ddq, dtype=float)
    if ddq.shape != (horizon.n_ddq, 2):
        raise DimensionMismatch(f"ddq has shape {ddq.shape}, expected ({horizon.n_ddq}, 2)")
    dt = horizon.dt
    dq = np.empty((horizon.n_dq, 2))
    dq[0] = dq_init
    dq[1:] = dq_init + dt * np.cumsum(ddq, axis=0)
    q = np.empty((horizon.n_q, 2))
    q[0] = q_init
    q[1:] = q_init + dt * np.cumsum(dq, axis=0)
    return TrajectoryVariables(q=q, dq=dq, ddq=ddq)


def constraints(
    z: np.ndarray,
    env: EnvironmentParams,
    horizon: Horizon,
    params: ArmParams,
) -> np.ndarray:
    """Stacked equality residuals ``(4N + 2,)`` in the documented row order."""
    traj = unpack(z, horizon)
    dt = horizon.dt
    pos = traj.q[1:] - traj.q[:-1] - dt * traj.dq
    vel = traj.dq[1:] - traj.dq[:-1] - dt * traj.ddq
    init = traj.q[0] - env.q_init
    goal = forward_kinematics(traj.q[-1], params) - env.p_goal
    return np.concatenate([pos.ravel(), vel.ravel(), init, goal])


@lru_cache(maxsize=16)
def linear_constraint_matrix(horizon: Horizon) -> sparse.csr_matrix:
    """Jacobian of the linear rows (everything except the target), ``(4N, 6N)``."""
    n = horizon.samples
    dt = horizon.dt
    dim = horizon.dim_z
    rows, cols, vals = [], [], []

    def add(r: int, c: int, v: float) -> None:
        rows.append(r)
        cols.append(c)
        vals.append(v)

    r = 0
    for k in range(n):  # q_{k+1} - q_k - dt dq_k
        for j in range(2):
            add(r, 2 * (k + 1) + j, 1.0)
            add(r, 2 * k + j, -1.0)
            add(r, horizon.dq_offset + 2 * k + j, -dt)
            r += 1
    for k in range(n - 1):  # dq_{k+1} - dq_k - dt ddq_k
        for j in range(2):
            add(r, horizon.dq_offset + 2 * (k + 1) + j, 1.0)
            add(r, horizon.dq_offset + 2 * k + j, -1.0)
            add(r, horizon.ddq_offset + 2 * k + j, -dt)
            r += 1
    for j in range(2):  # q_0 - q_init
        add(r, j, 1.0)
        r += 1
    mat = sparse.coo_matrix((vals, (rows, cols)), shape=(4 * n, dim))
    return mat.tocsr()


def constraints_jacobian(
    z: np.ndarray,
    env: EnvironmentParams,
    horizon: Horizon,
    params: ArmParams,
) -> sparse.csr_matrix:
    """Sparse ``(4N + 2, 6N)`` Jacobian of :func:`constraints`."""
    traj = unpack(z, horizon)
    jac_fk, _ = fk_derivatives(traj.q[-1], params)
    cols = np.array([2 * horizon.samples, 2 * horizon.samples + 1])
    goal_rows = sparse.coo_matrix(
        (jac_fk.ravel(), (np.repeat([0, 1], 2), np.tile(cols, 2))),
        shape=(2, horizon.dim_z),
    )
    return sparse.vstack(
        [linear_constraint_matrix(horizon), goal_rows], format="csr"
    )


def constraints_weighted_hessian(
    z: np.ndarray,
    env: EnvironmentParams,
    nu: np.ndarray,
    horizon: Horizon,
    params: ArmParams,
) -> sparse.csr_matrix:
    """Multiplier-weighted constraint curvature ``sum_i nu_i hess h_i(z)``.

    Only the two target rows are nonlinear, so the result has a single 2x2
    block at the final position knot.
    """
    nu = np.asarray(nu, dtype=float)
    if nu.shape != (horizon.n_constraints,):
        raise DimensionMismatch(
            f"nu has shape {nu.shape}, expected ({horizon.n_constraints},)"
        )
    traj = unpack(z, horizon)
    _, hess_fk = fk_derivatives(traj.q[-1], params)
    block = np.einsum("i,ijk->jk", nu[-2:], hess_fk)
    base = 2 * horizon.samples
    idx = np.array([base, base + 1])
    return sparse.coo_matrix(
        (block.ravel(), (np.repeat(idx, 2), np.tile(idx, 2))),
        shape=(horizon.dim_z, horizon.dim_z),
    ).tocsr()


@lru_cache(maxsize=16)
def rollout_null_basis(horizon: Horizon) -> np.ndarray:
    """Orthonormal basis ``(6N, 2(N-1) + 2)`` of the linear rows' null space.

    The linear constraint rows fix q given (dq_0, ddq) through the rollout, so
    the null space is parametrized by the free initial velocity and the
    acceleration knots.  Columns are built by rolling out unit inputs, then
    orthonormalized.
    """
    n_free = 2 + 2 * horizon.n_ddq
    basis = np.empty((horizon.dim_z, n_free))
    zero_ddq = np.zeros((horizon.n_ddq, 2))
    col = 0
    for j in range(2):
        dq0 = np.zeros(2)
        dq0[j] = 1.0
        basis[:, col] = pack(euler_rollout(np.zeros(2), dq0, zero_ddq, horizon), horizon)
        col += 1
    for k in range(horizon.n_ddq):
        for j in range(2):
            ddq = np.zeros((horizon.n_ddq, 2))
            ddq[k, j] = 1.0
            basis[:, col] = pack(euler_rollout(np.zeros(2), np.zeros(2), ddq, horizon), horizon)
            col += 1
    q_mat, _ = np.linalg.qr(basis)
    return q_mat


def write_trajectory_csv(path, traj: TrajectoryVariables, horizon: Horizon) -> None:
    """One row per position knot: ``t, q1, q2, dq1, dq2, ddq1, ddq2``.

    Velocity and acceleration columns are empty on the knots where those
    signals are not defined.
    """
    traj.check(horizon)
    times = horizon.times()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "q1", "q2", "dq1", "dq2", "ddq1", "ddq2"])
        for k in range(horizon.n_q):
            row = [f"{times[k]:.17g}", f"{traj.q[k, 0]:.17g}", f"{traj.q[k, 1]:.17g}"]
            if k < horizon.n_dq:
                row += [f"{traj.dq[k, 0]:.17g}", f"{traj.dq[k, 1]:.17g}"]
            else:
                row += ["", ""]
            if k < horizon.n_ddq:
                row += [f"{traj.ddq[k, 0]:.17g}", f"{traj.ddq[k, 1]:.17g}"]
            else:
                row += ["", ""]
            writer.writerow(row)


def read_trajectory_csv(path, horizon: Horizon) -> TrajectoryVariables:
    """Inverse of :func:`write_trajectory_csv`."""
    q = np.empty((horizon.n_q, 2))
    dq = np.empty((horizon.n_dq, 2))
    ddq = np.empty((horizon.n_ddq, 2))
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:3] != ["t", "q1", "q2"]:
            raise ValueError(f"unexpected trajectory header {header!r}")
        for k, row in enumerate(reader):
            if k >= horizon.n_q:
                raise DimensionMismatch("trajectory file has too many rows")
            q[k] = [float(row[1]), float(row[2])]
            if k < horizon.n_dq:
                dq[k] = [float(row[3]), float(row[4])]
            if k < horizon.n_ddq:
                ddq[k] = [float(row[5]), float(row[6])]
        if k != horizon.samples:
            raise DimensionMismatch("trajectory file has too few rows")
    return TrajectoryVariables(q=q, dq=dq, ddq=ddq)
