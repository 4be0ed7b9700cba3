"""Equality-constrained Newton solver and a derivative-free simplex search.

``solve_equality_nlp`` runs a line-search Newton iteration on the optimality
system of min f(z) s.t. h(z) = 0.  Each step solves the saddle-point system

    [ W + delta I   A^T ] [ p    ]   [ -g ]
    [ A             0   ] [ nu^+ ] = [ -h ]

where W carries the objective and constraint curvature and A = dh/dz.  The
step is accepted only when the factorization certifies inertia (n, m, 0),
i.e. positive curvature on the constraint null space; otherwise the Levenberg
shift delta is raised geometrically.  Steps are globalized by backtracking on
the exact l1 merit f + mu |h|_1 with mu kept above the current multiplier
scale (mu rises immediately when the multipliers grow and decays by at most
half per step when they shrink, so one wild iteration cannot pin the merit
weight high forever), and the multipliers jump to the system's new estimate
nu^+ on every accepted step (the merit does not depend on them, so they are
not damped by the primal step length).  The same shift also guards step quality: when the
realized merit decrease falls far short of the quadratic model's prediction
(or the line search fails), the shift is raised and the step recomputed, and
it decays again after clean full steps, so ill-scaled curvature cannot
launch the iteration into regions the model knows nothing about.

A problem may supply a ``restore`` map that repairs each trial point back
onto the constraint manifold before the merit test.  This keeps long steps
along strongly curved constraint surfaces acceptable: the tangential descent
predicted by the model is preserved to first order while the constraint
violation that would otherwise grow quadratically along the raw step is
removed, so the merit comparison sees the true objective change.

Three interchangeable backends solve the saddle-point system.  The dense one
factors the full matrix with a symmetric-indefinite LDL^T and reads the
inertia off the pivots.  The other two exploit problem structure (a rollout
null-space basis for single trajectories, per-example block elimination for
the joint estimation problem) and certify the same inertia condition through
a Cholesky factorization of the reduced Hessian.  All backends finish with
one iterative-refinement pass, so they agree on the computed step to solver
precision.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg as linalg
import scipy.optimize
import scipy.sparse as sparse
from scipy.linalg import lapack
from scipy.sparse.linalg import splu

from .transcription import Horizon, rollout_null_basis

_EPS = np.finfo(float).eps


@dataclass
class SolverOptions:
    tol_stat: float = 1e-8
    tol_feas: float = 1e-8
    max_iter: int = 100
    armijo: float = 1e-4
    backtrack: float = 0.5
    min_step: float = 1e-12
    reg_init: float = 1e-6
    reg_growth: float = 10.0
    reg_max: float = 1e10
    merit_margin: float = 1.1
    merit_floor: float = 1e-3
    # Accepted steps whose realized merit decrease falls below quality_floor
    # times the model's prediction raise the Levenberg shift and recompute;
    # full steps above quality_good let the carried shift decay again.
    quality_floor: float = 0.1
    quality_good: float = 0.75
    trace_path: str | None = None


@dataclass
class SolveReport:
    status: str  # converged | max_iterations | line_search_failure | singular_system
    iterations: int
    final_stationarity: float
    final_feasibility: float
    wall_time: float

    @property
    def converged(self) -> bool:
        return self.status == "converged"


@dataclass
class NlpProblem:
    """Callbacks of one equality-constrained program.

    ``objective(z) -> (value, gradient)``;
    ``objective_hessian(z) -> sparse (n, n)``;
    ``constraints(z) -> (residual, jacobian sparse (m, n))``;
    ``constraint_hessian(z, nu) -> sparse (n, n)`` multiplier-weighted curvature;
    ``restore(z_trial) -> z_repaired | None`` optional projection of a line
    search trial point back onto the constraint manifold (None rejects the
    trial and backtracking continues).
    """

    n: int
    m: int
    objective: Callable
    objective_hessian: Callable
    constraints: Callable
    constraint_hessian: Callable
    step_solver: "KktStepSolver | None" = None
    restore: Callable | None = None


def _csr(mat) -> sparse.csr_matrix:
    if sparse.issparse(mat):
        return mat.tocsr()
    return sparse.csr_matrix(np.atleast_2d(np.asarray(mat, dtype=float)))


def _sytrf_inertia(ldu: np.ndarray, ipiv: np.ndarray) -> tuple[int, int, int]:
    """Signs of the eigenvalues of the block-diagonal factor D."""
    n = ldu.shape[0]
    pos = neg = zero = 0
    k = 0
    while k < n:
        if ipiv[k] > 0:
            d = ldu[k, k]
            if d > 0.0:
                pos += 1
            elif d < 0.0:
                neg += 1
            else:
                zero += 1
            k += 1
        else:
            a, b, c = ldu[k, k], ldu[k + 1, k], ldu[k + 1, k + 1]
            tr, det = a + c, a * c - b * b
            disc = np.sqrt(max(tr * tr - 4.0 * det, 0.0))
            for lam in ((tr + disc) / 2.0, (tr - disc) / 2.0):
                if lam > 0.0:
                    pos += 1
                elif lam < 0.0:
                    neg += 1
                else:
                    zero += 1
            k += 2
    return pos, neg, zero


class KktStepSolver:
    """Factor the shifted saddle-point system, certify inertia, and solve.

    ``solve`` returns ``(p, nu_plus)`` or None when the inertia test fails at
    the given shift.  Subclasses provide ``_factor`` and ``_apply``; the base
    adds one iterative-refinement pass.
    """

    def solve(self, w, jac, grad, resid, delta):
        w = _csr(w)
        jac = _csr(jac)
        fact = self._factor(w, jac, delta)
        if fact is None:
            return None
        p, nu = self._apply(fact, -grad, -resid)
        r1 = -grad - (w @ p + delta * p) - jac.T @ nu
        r2 = -resid - jac @ p
        dp, dnu = self._apply(fact, r1, r2)
        return p + dp, nu + dnu

    def _factor(self, w, jac, delta):
        raise NotImplementedError

    def _apply(self, fact, b1, b2):
        raise NotImplementedError


class DenseKktStep(KktStepSolver):
    """Full-matrix LDL^T backend; the reference implementation."""

    def _factor(self, w, jac, delta):
        n = w.shape[0]
        m = jac.shape[0]
        kmat = np.zeros((n + m, n + m))
        kmat[:n, :n] = w.toarray()
        kmat[:n, :n][np.diag_indices(n)] += delta
        a_dense = jac.toarray()
        kmat[:n, n:] = a_dense.T
        kmat[n:, :n] = a_dense
        lwork, info = lapack.dsytrf_lwork(n + m)
        if info != 0:
            return None
        ldu, ipiv, info = lapack.dsytrf(kmat, lower=1, lwork=lwork)
        if info != 0:
            return None
        if _sytrf_inertia(ldu, ipiv) != (n, m, 0):
            return None
        return (ldu, ipiv, n)

    def _apply(self, fact, b1, b2):
        ldu, ipiv, n = fact
        rhs = np.concatenate([b1, b2])
        sol, info = lapack.dsytrs(ldu, ipiv, rhs, lower=1)
        if info != 0:
            raise RuntimeError("triangular solve failed after factorization")
        return sol[:n], sol[n:]


class RolloutKktStep(KktStepSolver):
    """Backend for a single transcribed trajectory.

    All constraint rows except the two target rows are constant and define a
    rollout: their null space is spanned by trajectories rolled out from unit
    initial velocities and unit acceleration knots.  Eliminating them reduces
    the saddle-point system to a small dense Hessian on the remaining free
    directions; the target rows are folded in by a thin QR.  Multipliers are
    recovered by a backward recursion through the same rows.
    """

    def __init__(self, horizon: Horizon):
        self.horizon = horizon
        self.z_lin = rollout_null_basis(horizon)

    def _factor(self, w, jac, delta):
        h = self.horizon
        a_fk = jac[4 * h.samples :].toarray()
        g = a_fk @ self.z_lin  # (2, 2N)
        q_full, r_full = linalg.qr(g.T, mode="full")
        r2 = r_full[:2]
        if np.abs(np.diag(r2)).min() <= 1e-12 * max(1.0, np.abs(g).max()):
            return None  # target rows degenerate: no shift can repair rank
        q1, n2 = q_full[:, :2], q_full[:, 2:]
        zfull = self.z_lin @ n2
        hred = zfull.T @ (w @ zfull)
        hred[np.diag_indices_from(hred)] += delta
        hred = 0.5 * (hred + hred.T)
        try:
            chol = linalg.cho_factor(hred)
        except linalg.LinAlgError:
            return None
        return (w, delta, a_fk, q1, r2, zfull, chol)

    def _apply(self, fact, b1, b2):
        w, delta, a_fk, q1, r2, zfull, chol = fact
        h = self.horizon
        n = h.samples
        dt = h.dt

        b2_pos = b2[: 2 * n].reshape(n, 2)
        b2_vel = b2[2 * n : 4 * n - 2].reshape(n - 1, 2)
        b2_init = b2[4 * n - 2 : 4 * n]
        b2_fk = b2[4 * n :]

        # Particular solution of the linear rows with zero free inputs.
        p_dq = np.zeros((h.n_dq, 2))
        p_dq[1:] = np.cumsum(b2_vel, axis=0)
        p_q = np.empty((h.n_q, 2))
        p_q[0] = b2_init
        p_q[1:] = b2_init + np.cumsum(dt * p_dq + b2_pos, axis=0)
        p_part = np.concatenate([p_q.ravel(), p_dq.ravel(), np.zeros(2 * h.n_ddq)])

        # Fold in the target rows along the rollout null space (minimal norm).
        rhs_fk = b2_fk - a_fk @ p_part
        p_part = p_part + self.z_lin @ (q1 @ linalg.solve_triangular(r2, rhs_fk, trans="T"))

        shifted = lambda v: w @ v + delta * v
        y = linalg.cho_solve(chol, zfull.T @ (b1 - shifted(p_part)))
        p = p_part + zfull @ y

        # Multipliers: the target pair from the projected normal equations,
        # the rollout rows by backward recursion.
        c = b1 - shifted(p)
        nu_fk = linalg.solve_triangular(r2, q1.T @ (self.z_lin.T @ c))
        c_lin = c - a_fk.T @ nu_fk
        c_q = c_lin[: 2 * h.n_q].reshape(h.n_q, 2)
        c_ddq = c_lin[h.ddq_offset :].reshape(h.n_ddq, 2)
        nu_vel = -c_ddq / dt
        nu_pos = np.cumsum(c_q[:0:-1], axis=0)[::-1]
        nu_init = c_q[0] + nu_pos[0]
        nu = np.concatenate([nu_pos.ravel(), nu_vel.ravel(), nu_init, nu_fk])
        return p, nu


class BlockArrowKktStep(KktStepSolver):
    """Backend for the joint estimation problem.

    The constraint Jacobian there is block diagonal in the per-example
    primal-dual blocks (each block square and nonsingular at a regular KKT
    point), bordered by the shared parameter columns and closed by a single
    normalization row on the parameters.  Eliminating the blocks with sparse
    LU factors leaves a dense system of parameter-dimension minus one.
    """

    def __init__(self, n_param: int, blocks: list[tuple[slice, slice]]):
        # blocks: per example (variable slice, constraint-row slice); the
        # parameter entries occupy variables [0, n_param) and the last
        # constraint row is the normalization row.
        self.n_param = n_param
        self.blocks = blocks

    def _factor(self, w, jac, delta):
        np_ = self.n_param
        jac = jac.tocsc()
        g_row = jac[-1].toarray().ravel()
        g_par = g_row[:np_]
        if np.abs(g_row[np_:]).max(initial=0.0) > 0.0 or np.abs(g_par).max() == 0.0:
            raise ValueError("last constraint row must involve only the parameters")
        basis = linalg.null_space(g_par[None, :])  # (n_param, n_param-1)

        lus, vs = [], []
        try:
            for var_sl, con_sl in self.blocks:
                s_blk = jac[con_sl, var_sl].tocsc()
                t_blk = jac[con_sl, :np_]
                lu = splu(s_blk)
                lus.append(lu)
                v = lu.solve(np.asarray(t_blk @ basis))
                if not np.all(np.isfinite(v)):
                    return None
                vs.append(v)
        except RuntimeError:
            return None  # singular example block
        n = w.shape[0]
        zmat = np.zeros((n, np_ - 1))
        zmat[:np_] = basis
        for (var_sl, _), v in zip(self.blocks, vs):
            zmat[var_sl] = -v
        # The elimination basis is not orthonormal, so the Levenberg shift
        # projects to delta Z^T Z rather than a diagonal.
        hred = zmat.T @ (w @ zmat) + delta * (zmat.T @ zmat)
        hred = 0.5 * (hred + hred.T)
        try:
            chol = linalg.cho_factor(hred)
        except linalg.LinAlgError:
            return None
        return (w, delta, jac, g_par, basis, lus, zmat, chol)

    def _apply(self, fact, b1, b2):
        w, delta, jac, g_par, basis, lus, zmat, chol = fact
        np_ = self.n_param
        n = w.shape[0]

        p_part = np.zeros(n)
        p_part[:np_] = g_par * (b2[-1] / (g_par @ g_par))
        for (var_sl, con_sl), lu in zip(self.blocks, lus):
            t_blk = jac[con_sl, :np_]
            p_part[var_sl] = lu.solve(b2[con_sl] - t_blk @ p_part[:np_])

        shifted = lambda v: w @ v + delta * v
        y = linalg.cho_solve(chol, zmat.T @ (b1 - shifted(p_part)))
        p = p_part + zmat @ y

        c = b1 - shifted(p)
        nu = np.empty(jac.shape[0])
        acc = c[:np_].copy()
        for (var_sl, con_sl), lu in zip(self.blocks, lus):
            lam = lu.solve(c[var_sl], trans="T")
            nu[con_sl] = lam
            t_blk = jac[con_sl, :np_]
            acc -= t_blk.T @ lam
        nu[-1] = (g_par @ acc) / (g_par @ g_par)
        return p, nu


def solve_equality_nlp(
    problem: NlpProblem,
    z0: np.ndarray,
    nu0: np.ndarray | None = None,
    options: SolverOptions | None = None,
) -> tuple[np.ndarray, np.ndarray, SolveReport]:
    """Newton iteration with inertia-corrected steps and an l1 merit line search."""
    opts = options or SolverOptions()
    step_solver = problem.step_solver or DenseKktStep()
    started = time.perf_counter()

    z = np.asarray(z0, dtype=float).copy()
    nu = np.zeros(problem.m) if nu0 is None else np.asarray(nu0, dtype=float).copy()
    f, grad = problem.objective(z)
    resid, jac = problem.constraints(z)
    jac = _csr(jac)
    stat = float(np.abs(grad + jac.T @ nu).max())
    feas = float(np.abs(resid).max(initial=0.0))

    mu = 1.0
    delta_carry = 0.0
    status = "max_iterations"
    iterations = opts.max_iter
    last_alpha = 0.0
    trace: list[list] = []

    for it in range(opts.max_iter + 1):
        trace.append([it, f, feas, stat, last_alpha])
        if stat <= opts.tol_stat and feas <= opts.tol_feas:
            status = "converged"
            iterations = it
            break
        if it == opts.max_iter:
            break

        w = _csr(problem.objective_hessian(z)) + _csr(problem.constraint_hessian(z, nu))
        delta = delta_carry
        fail_status = None
        while True:
            sol = step_solver.solve(w, jac, grad, resid, delta)
            if sol is None:
                if delta >= opts.reg_max:
                    fail_status = "singular_system"
                    break
                delta = opts.reg_init if delta == 0.0 else delta * opts.reg_growth
                continue
            p, nu_hat = sol

            h1 = float(np.abs(resid).sum())
            # The weight tracks the multiplier estimate from below: it grows
            # immediately but decays by at most half per step, so a single
            # ill-conditioned iteration cannot poison the rest of the solve.
            mu_req = opts.merit_margin * float(np.abs(nu_hat).max(initial=0.0)) + opts.merit_floor
            mu = mu_req if mu_req >= mu else max(mu_req, 0.5 * mu)
            d = float(grad @ p) - mu * h1
            if d >= 0.0 and h1 > 0.0:
                mu = 1.5 * float(grad @ p) / h1 + opts.merit_floor
                d = float(grad @ p) - mu * h1
            if d >= 0.0:
                if delta >= opts.reg_max:
                    fail_status = "line_search_failure"
                    break
                delta = opts.reg_init if delta == 0.0 else delta * opts.reg_growth
                continue

            merit0 = f + mu * h1
            slack = 10.0 * _EPS * (1.0 + abs(merit0))
            alpha = 1.0
            accepted = False
            while alpha >= opts.min_step:
                z_trial = z + alpha * p
                if problem.restore is not None:
                    z_trial = problem.restore(z_trial)
                    if z_trial is None:
                        alpha *= opts.backtrack
                        continue
                f_t, grad_t = problem.objective(z_trial)
                resid_t, jac_t = problem.constraints(z_trial)
                merit_t = f_t + mu * float(np.abs(resid_t).sum())
                if merit_t <= merit0 + opts.armijo * alpha * d + slack:
                    accepted = True
                    break
                alpha *= opts.backtrack
            if not accepted:
                if delta >= opts.reg_max:
                    fail_status = "line_search_failure"
                    break
                delta = opts.reg_init if delta == 0.0 else delta * opts.reg_growth
                continue

            # Realized merit decrease against the step's quadratic model.  A
            # poor ratio means the step overran the model's validity region:
            # raise the shift and recompute instead of drifting on model
            # noise.  High-quality full steps let the carried shift decay.
            curv = float(p @ (w @ p)) + delta * float(p @ p)
            predicted = -alpha * d - 0.5 * alpha * alpha * curv
            actual = merit0 - merit_t
            if (
                predicted > 100.0 * slack
                and actual < opts.quality_floor * predicted
                and delta < opts.reg_max
            ):
                delta = opts.reg_init if delta == 0.0 else delta * opts.reg_growth
                continue
            good = alpha == 1.0 and (
                predicted <= 100.0 * slack or actual >= opts.quality_good * predicted
            )
            delta_carry = delta / opts.reg_growth if good else delta
            if delta_carry < opts.reg_init:
                delta_carry = 0.0
            break

        if fail_status is not None:
            status = fail_status
            iterations = it
            break

        z = z_trial
        nu = nu_hat
        last_alpha = alpha
        f, grad = f_t, grad_t
        resid, jac = resid_t, _csr(jac_t)
        stat = float(np.abs(grad + jac.T @ nu).max())
        feas = float(np.abs(resid).max(initial=0.0))

    if opts.trace_path is not None:
        with open(opts.trace_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "objective", "feasibility", "stationarity", "step_length"])
            writer.writerows(trace)

    report = SolveReport(
        status=status,
        iterations=iterations,
        final_stationarity=stat,
        final_feasibility=feas,
        wall_time=time.perf_counter() - started,
    )
    return z, nu, report


@dataclass
class NelderMeadResult:
    x: np.ndarray
    value: float
    evaluations: int
    converged: bool
    status: str  # converged | max_evaluations


def nelder_mead(
    fn: Callable[[np.ndarray], float],
    x0: np.ndarray,
    tol: float = 1e-6,
    max_evals: int = 2000,
) -> NelderMeadResult:
    """Downhill simplex search, terminating on simplex diameter below ``tol``.

    Stops early after ``max_evals`` objective evaluations and reports the
    best vertex found so far.
    """
    res = scipy.optimize.minimize(
        fn,
        np.asarray(x0, dtype=float),
        method="Nelder-Mead",
        options=dict(
            xatol=tol,
            fatol=np.inf,
            maxfev=max_evals,
            maxiter=np.iinfo(np.int32).max,
            adaptive=False,
        ),
    )
    converged = bool(res.status == 0)
    return NelderMeadResult(
        x=np.asarray(res.x, dtype=float),
        value=float(res.fun),
        evaluations=int(res.nfev),
        converged=converged,
        status="converged" if converged else "max_evaluations",
    )
