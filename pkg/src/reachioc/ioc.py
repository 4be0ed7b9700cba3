"""Estimating cost weights from observed reaching trajectories.

Given observed joint trajectories, both strategies search for weights theta
whose optimal reaching movement reproduces the observations, scored by the
average squared joint-angle deviation

    eps = (1 / 2N) sum_i |q_hat_i - q_obs_i|^2   over all position knots.

The bilevel strategy nests the problems: an outer derivative-free simplex
search over the weights, with every evaluation running the full inner
trajectory optimization.  The simultaneous strategy replaces the inner
argmin by its first-order optimality residual and searches once over
(theta, z_i, nu_i) jointly, with K(z_i, nu_i; theta, x_i) = 0 enforced as a
constraint next to the weight normalization sum(theta) = 1.  A final
reduced-space descent then polishes the weights through the trajectory
sensitivities, because the stacked residual measures the flat directions
of the loss poorly.

Weights are identifiable only up to scale (scaling theta and nu together
preserves the optimality residual), so results are reported in the
normalized gauge sum(theta) = 1.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sparse
from scipy.sparse.linalg import splu

from .arm import ArmParams, inverse_kinematics
from .cost_basis import N_BASES, as_weights, weighted_objective
from .kkt import (
    KktPoint,
    kkt_jacobian_primal_dual,
    kkt_jacobian_theta,
    kkt_vector,
)
from .solvers import (
    BlockArrowKktStep,
    NelderMeadResult,
    NlpProblem,
    RolloutKktStep,
    SolveReport,
    SolverOptions,
    nelder_mead,
    solve_equality_nlp,
)
from .transcription import (
    EnvironmentParams,
    Horizon,
    constraints,
    constraints_jacobian,
    constraints_weighted_hessian,
)


class DegenerateGauge(ValueError):
    """Raised when weights cannot be normalized because they sum to ~zero."""


class InnerSolveFailure(RuntimeError):
    """A trajectory or joint optimization did not reach its tolerances."""

    def __init__(self, example_index: int | None, report: SolveReport, phase: str):
        self.example_index = example_index
        self.report = report
        self.phase = phase  # inner | warm_start | outer
        where = "joint problem" if example_index is None else f"example {example_index}"
        super().__init__(f"{phase} solve failed on {where}: {report.status}")


def theta_gauge(theta) -> np.ndarray:
    """Normalize weights to sum one."""
    w = as_weights(theta)
    total = float(w.sum())
    if abs(total) < 1e-12:
        raise DegenerateGauge(f"weight sum {total} is too close to zero")
    return w / total


def random_simplex_theta(rng: np.random.Generator) -> np.ndarray:
    """Random interior point of the weight simplex (normalized exp of uniforms)."""
    return theta_gauge(np.exp(rng.uniform(0.0, 1.0, N_BASES)))


@dataclass(frozen=True)
class IocExample:
    """One observed reaching movement: the task and the observed trajectory."""

    env: EnvironmentParams
    observed: np.ndarray  # packed decision vector of the observation
    provenance: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        observed = np.asarray(self.observed, dtype=float)
        if observed.ndim != 1:
            raise ValueError("observed must be a packed trajectory vector")
        object.__setattr__(self, "observed", observed)


@dataclass(frozen=True)
class IocDataset:
    examples: tuple[IocExample, ...]
    horizon: Horizon
    arm: ArmParams

    def __post_init__(self) -> None:
        examples = tuple(self.examples)
        if not examples:
            raise ValueError("dataset needs at least one example")
        for i, ex in enumerate(examples):
            if ex.observed.shape != (self.horizon.dim_z,):
                raise ValueError(
                    f"example {i} observation has shape {ex.observed.shape}, "
                    f"expected ({self.horizon.dim_z},)"
                )
        object.__setattr__(self, "examples", examples)

    def __len__(self) -> int:
        return len(self.examples)


@dataclass
class IocResult:
    theta_hat: np.ndarray
    predictions: list[KktPoint]
    loss: float
    report: SolveReport
    method: str  # bilevel | single-level
    warnings: list[str]


@dataclass
class InnerLoopResult:
    points: list[KktPoint]
    loss: float
    reports: list[SolveReport]


def cumulative_loss(predictions, dataset: IocDataset) -> float:
    """Average squared joint-angle deviation over all examples and knots."""
    n_pos = 2 * dataset.horizon.n_q
    total = 0.0
    for pred, ex in zip(predictions, dataset.examples):
        z = pred.z if isinstance(pred, KktPoint) else np.asarray(pred, dtype=float)
        diff = z[:n_pos] - ex.observed[:n_pos]
        total += float(diff @ diff)
    return total / (2.0 * dataset.horizon.samples)


def default_initial_point(
    env: EnvironmentParams, horizon: Horizon, params: ArmParams
) -> tuple[np.ndarray, np.ndarray]:
    """Feasible start: straight joint-space line to an elbow-down IK solution.

    Linear interpolation makes velocities constant and accelerations zero, so
    every Euler row holds, and the endpoint satisfies the target rows exactly.
    """
    q_goal = inverse_kinematics(env.p_goal, "elbow-down", params)
    steps = np.linspace(0.0, 1.0, horizon.n_q)[:, None]
    q = env.q_init + steps * (q_goal - env.q_init)
    dq = np.broadcast_to((q_goal - env.q_init) / (horizon.tf - horizon.t0), (horizon.n_dq, 2))
    z0 = np.concatenate([q.ravel(), np.ravel(dq), np.zeros(2 * horizon.n_ddq)])
    return z0, np.zeros(horizon.n_constraints)


def rest_initial_point(
    env: EnvironmentParams, horizon: Horizon
) -> tuple[np.ndarray, np.ndarray]:
    """Start from the initial configuration at rest.

    With the initial velocity left free by the constraints, the reaching
    problem admits several stationary trajectories; starting the solver from
    the motionless arm selects the ones that swing through gravity instead of
    being thrown straight at the target.
    """
    q = np.tile(np.asarray(env.q_init, dtype=float), (horizon.n_q, 1))
    z0 = np.concatenate(
        [q.ravel(), np.zeros(2 * horizon.n_dq), np.zeros(2 * horizon.n_ddq)]
    )
    return z0, np.zeros(horizon.n_constraints)


def build_ocp_problem(
    theta,
    env: EnvironmentParams,
    horizon: Horizon,
    params: ArmParams,
    step_solver=None,
) -> NlpProblem:
    """Wire the transcribed reaching problem for the Newton solver."""
    w = as_weights(theta)

    def objective(z):
        value, grad, _ = weighted_objective(z, w, horizon, params)
        return value, grad

    def objective_hessian(z):
        _, _, hess = weighted_objective(z, w, horizon, params)
        return hess

    def cons(z):
        return constraints(z, env, horizon, params), constraints_jacobian(
            z, env, horizon, params
        )

    def cons_hessian(z, nu):
        return constraints_weighted_hessian(z, env, nu, horizon, params)

    return NlpProblem(
        n=horizon.dim_z,
        m=horizon.n_constraints,
        objective=objective,
        objective_hessian=objective_hessian,
        constraints=cons,
        constraint_hessian=cons_hessian,
        step_solver=RolloutKktStep(horizon) if step_solver is None else step_solver,
    )


def inner_loop(
    theta,
    dataset: IocDataset,
    warm_starts: list[KktPoint] | None = None,
    options: SolverOptions | None = None,
    step_solver=None,
    phase: str = "inner",
) -> InnerLoopResult:
    """Solve every example's trajectory problem at fixed weights."""
    points: list[KktPoint] = []
    reports: list[SolveReport] = []
    for i, ex in enumerate(dataset.examples):
        problem = build_ocp_problem(theta, ex.env, dataset.horizon, dataset.arm, step_solver)
        if warm_starts is not None:
            z0, nu0 = warm_starts[i].z, warm_starts[i].nu
        else:
            z0, nu0 = default_initial_point(ex.env, dataset.horizon, dataset.arm)
        z, nu, report = solve_equality_nlp(problem, z0, nu0, options)
        if not report.converged:
            raise InnerSolveFailure(i, report, phase)
        points.append(
            KktPoint(
                z=z,
                nu=nu,
                residual_norm=max(report.final_stationarity, report.final_feasibility),
            )
        )
        reports.append(report)
    return InnerLoopResult(points=points, loss=cumulative_loss(points, dataset), reports=reports)


def _softmax_theta(logits: np.ndarray) -> np.ndarray:
    full = np.concatenate([logits, [0.0]])
    full = np.exp(full - full.max())
    return full / full.sum()


FAILED_EVAL_PENALTY = 1e10


def bilevel_ioc(
    dataset: IocDataset,
    theta0,
    inner_options: SolverOptions | None = None,
    simplex_tol: float = 1e-6,
    simplex_max_evals: int = 2000,
) -> IocResult:
    """Nested estimation: simplex search over weights, trajectory solve inside.

    The search runs in four softmax logits, which keeps every candidate
    weight vector positive and normalized and removes the scale direction
    the loss cannot see.  Inner solves are warm-started from the previous
    evaluation; failed evaluations receive a large penalty value.
    """
    w0 = theta_gauge(theta0)
    if np.any(w0 <= 0.0):
        raise ValueError("bilevel search needs strictly positive starting weights")
    logits0 = np.log(w0[:-1] / w0[-1])

    state: dict = {"warm": None, "best": None}

    def loss_of(logits: np.ndarray) -> float:
        theta = _softmax_theta(logits)
        try:
            result = inner_loop(theta, dataset, warm_starts=state["warm"], options=inner_options)
        except InnerSolveFailure:
            return FAILED_EVAL_PENALTY
        state["warm"] = result.points
        if state["best"] is None or result.loss < state["best"][0]:
            state["best"] = (result.loss, theta, result.points)
        return result.loss

    started = time.perf_counter()
    nm = nelder_mead(loss_of, logits0, tol=simplex_tol, max_evals=simplex_max_evals)
    elapsed = time.perf_counter() - started
    if state["best"] is None:
        raise InnerSolveFailure(None, _nm_report(nm, np.inf, np.inf, elapsed), "inner")
    loss, theta_hat, points = state["best"]
    worst = max(p.residual_norm for p in points)
    return IocResult(
        theta_hat=theta_hat,
        predictions=points,
        loss=loss,
        report=_nm_report(nm, worst, worst, elapsed),
        method="bilevel",
        warnings=[],
    )


def _nm_report(nm: NelderMeadResult, stat: float, feas: float, wall_time: float) -> SolveReport:
    return SolveReport(
        status="converged" if nm.converged else "max_evaluations",
        iterations=nm.evaluations,
        final_stationarity=stat,
        final_feasibility=feas,
        wall_time=wall_time,
    )


def build_joint_problem(
    dataset: IocDataset,
    warm_points: list[KktPoint],
    theta0: np.ndarray,
    restore_options: SolverOptions | None = None,
) -> tuple[NlpProblem, np.ndarray]:
    """Assemble the simultaneous program over (theta, z_i, nu_i).

    Variables stack the weights first, then each example's primal-dual pair.
    Constraints stack each example's optimality residual, then one
    normalization row sum(theta) = 1.  The objective keeps only its exact
    Gauss-Newton curvature (the constant diagonal on the position knots);
    constraint curvature is left to the Newton matrix's first-order terms.

    The optimality-residual constraints curve strongly in the multiplier
    directions, so the problem also carries a restoration map: each line
    search trial re-solves every example's trajectory problem at the trial
    weights (warm-started from the trial primal-dual pair), which keeps the
    iterates on the constraint manifold and lets the merit test compare true
    losses instead of linearization error.
    """
    horizon, arm = dataset.horizon, dataset.arm
    m_ex = len(dataset)
    dim_z = horizon.dim_z
    n_con = horizon.n_constraints
    block = dim_z + n_con
    n = N_BASES + m_ex * block
    m = m_ex * block + 1
    n_pos = 2 * horizon.n_q

    var_slices = [slice(N_BASES + i * block, N_BASES + (i + 1) * block) for i in range(m_ex)]
    con_slices = [slice(i * block, (i + 1) * block) for i in range(m_ex)]

    def split(w):
        theta = w[:N_BASES]
        pairs = [(w[sl][:dim_z], w[sl][dim_z:]) for sl in var_slices]
        return theta, pairs

    def objective(w):
        _, pairs = split(w)
        value = 0.0
        grad = np.zeros(n)
        for (z, _), ex, sl in zip(pairs, dataset.examples, var_slices):
            diff = z[:n_pos] - ex.observed[:n_pos]
            value += float(diff @ diff)
            grad[sl.start : sl.start + n_pos] = diff / horizon.samples
        return value / (2.0 * horizon.samples), grad

    gn_diag = np.zeros(n)
    for sl in var_slices:
        gn_diag[sl.start : sl.start + n_pos] = 1.0 / horizon.samples
    gn_hess = sparse.diags(gn_diag, format="csr")

    def objective_hessian(w):
        return gn_hess

    def cons(w):
        theta, pairs = split(w)
        resid = np.empty(m)
        rows = []
        for (z, nu), ex, csl in zip(pairs, dataset.examples, con_slices):
            resid[csl] = kkt_vector(z, nu, theta, ex.env, horizon, arm)
            s_blk = kkt_jacobian_primal_dual(z, nu, theta, ex.env, horizon, arm)
            t_blk = kkt_jacobian_theta(z, nu, theta, ex.env, horizon, arm)
            rows.append((t_blk, s_blk))
        resid[-1] = float(theta.sum()) - 1.0
        grid = []
        for i, (t_blk, s_blk) in enumerate(rows):
            line: list = [t_blk] + [None] * m_ex
            line[1 + i] = s_blk
            grid.append(line)
        gauge = sparse.csr_matrix(
            (np.ones(N_BASES), (np.zeros(N_BASES, dtype=int), np.arange(N_BASES))),
            shape=(1, n),
        )
        jac = sparse.bmat(grid, format="csr")
        return resid, sparse.vstack([jac, gauge], format="csr")

    zero_curvature = sparse.csr_matrix((n, n))

    def cons_hessian(w, lam):
        return zero_curvature

    # A small iteration budget makes restoration fail fast on trial points
    # whose linearization was poor; the line search then simply shortens the
    # step, so the budget doubles as an inexpensive trust region.
    restore_opts = restore_options or SolverOptions(max_iter=8)

    def restore(w):
        theta = w[:N_BASES].copy()
        repaired = w.copy()
        for sl, ex in zip(var_slices, dataset.examples):
            ocp = build_ocp_problem(theta, ex.env, horizon, arm)
            z, nu, rep = solve_equality_nlp(ocp, w[sl][:dim_z], w[sl][dim_z:], restore_opts)
            if not rep.converged:
                return None
            repaired[sl] = np.concatenate([z, nu])
        return repaired

    problem = NlpProblem(
        n=n,
        m=m,
        objective=objective,
        objective_hessian=objective_hessian,
        constraints=cons,
        constraint_hessian=cons_hessian,
        step_solver=BlockArrowKktStep(N_BASES, list(zip(var_slices, con_slices))),
        restore=restore,
    )

    w0 = np.empty(n)
    w0[:N_BASES] = theta0
    for sl, point in zip(var_slices, warm_points):
        w0[sl] = np.concatenate([point.z, point.nu])
    return problem, w0


def default_outer_options() -> SolverOptions:
    # The Gauss-Newton curvature leaves a linear tail in the stationarity
    # residual, so the joint problem gets a looser stationarity tolerance;
    # optimality-residual feasibility stays tight.
    return SolverOptions(tol_stat=1e-6, tol_feas=1e-8, max_iter=300)


def _simplex_tangent_basis(n: int) -> np.ndarray:
    """Orthonormal columns spanning the sum-zero subspace of R^n."""
    basis = np.zeros((n, n - 1))
    for k in range(1, n):
        basis[:k, k - 1] = 1.0
        basis[k, k - 1] = -float(k)
        basis[:, k - 1] /= np.sqrt(k * (k + 1.0))
    return basis


def _reduced_loss_model(theta, points, dataset: IocDataset):
    """Gradient and Gauss-Newton curvature of the loss in the weights alone.

    Each trajectory tracks its optimality system, so differentiating
    K(w_i(theta), theta) = 0 gives the sensitivity dw_i/dtheta =
    -S_i^{-1} T_i; its position rows enter the chain rule for the loss.
    """
    horizon, arm = dataset.horizon, dataset.arm
    n_pos = 2 * horizon.n_q
    grad = np.zeros(N_BASES)
    hess = np.zeros((N_BASES, N_BASES))
    for point, ex in zip(points, dataset.examples):
        s_blk = kkt_jacobian_primal_dual(point.z, point.nu, theta, ex.env, horizon, arm)
        t_blk = kkt_jacobian_theta(point.z, point.nu, theta, ex.env, horizon, arm)
        sens_q = -splu(s_blk.tocsc()).solve(t_blk.toarray())[:n_pos]
        resid = point.z[:n_pos] - ex.observed[:n_pos]
        grad += sens_q.T @ resid
        hess += sens_q.T @ sens_q
    return grad / horizon.samples, hess / horizon.samples


def _polish_weights(
    theta: np.ndarray,
    points: list[KktPoint],
    loss: float,
    dataset: IocDataset,
    inner_options: SolverOptions | None,
    max_steps: int = 20,
    tol_grad: float = 1e-7,
    radius: float = 0.5,
):
    """Descend the loss as a function of the weights along the simplex.

    The joint solver stops once the optimality residual of the stacked
    system is small, but the map from weights to trajectories can amplify
    what remains: a point whose residual passes the tolerance may still sit
    measurably above the valley floor of the loss.  This phase measures the
    loss gradient in the weights exactly through the trajectory
    sensitivities, steps tangent to the normalization, and re-solves the
    trajectory problems at each trial, so it only ever moves between fully
    feasible points.

    The walk stays within ``radius`` of the entry weights: stationarity
    constraints alone do not distinguish minimizing trajectories from other
    critical points, and on noisy data the loss keeps decreasing slowly
    along valleys that trade physically meaningful weights for noise
    chasing.  Returns the possibly improved (theta, points, loss) and the
    number of accepted steps.
    """
    basis = _simplex_tangent_basis(N_BASES)
    eye = np.eye(basis.shape[1])
    step_max = 0.25
    anchor = theta.copy()
    steps = 0
    for _ in range(max_steps):
        grad, hess = _reduced_loss_model(theta, points, dataset)
        g_t = basis.T @ grad
        if float(np.abs(g_t).max()) <= tol_grad:
            break
        h_t = basis.T @ hess @ basis
        delta = 0.0
        while True:
            try:
                xi = np.linalg.solve(h_t + delta * eye, -g_t)
            except np.linalg.LinAlgError:
                xi = None
            # Keep raising the shift until the step both descends and stays
            # short: along a flat valley floor an unshifted step can be huge
            # while promising almost nothing.
            if (
                xi is not None
                and float(g_t @ xi) < 0.0
                and float(np.abs(xi).max()) <= step_max
            ):
                break
            if delta >= 1e10:
                xi = None
                break
            delta = 1e-6 if delta == 0.0 else 10.0 * delta
        if xi is None:
            break
        slope = float(g_t @ xi)
        if -0.5 * slope <= max(1e-4 * loss, 1e-16):
            break
        direction = basis @ xi
        alpha, improved = 1.0, None
        while alpha >= 1e-6:
            trial_theta = theta + alpha * direction
            if float(np.abs(trial_theta - anchor).max()) > radius:
                alpha *= 0.5
                continue
            try:
                trial = inner_loop(
                    trial_theta,
                    dataset,
                    warm_starts=points,
                    options=inner_options,
                )
            except InnerSolveFailure:
                alpha *= 0.5
                continue
            if trial.loss <= loss + 1e-4 * alpha * slope:
                improved = (trial_theta, trial.points, trial.loss)
                break
            alpha *= 0.5
        if improved is None:
            break
        theta, points, loss = improved
        steps += 1
    return theta, points, loss, steps


def single_level_ioc(
    dataset: IocDataset,
    theta0,
    outer_options: SolverOptions | None = None,
    inner_options: SolverOptions | None = None,
) -> IocResult:
    """Simultaneous estimation through the optimality-residual constraints.

    The inner problems are first solved once at the starting weights; the
    resulting primal-dual pairs make the joint start point feasible.  After
    the joint solve converges, a short reduced-space descent polishes the
    weights along the loss valley, which the stacked optimality residual
    resolves poorly.
    """
    theta_start = theta_gauge(theta0)
    warm = inner_loop(theta_start, dataset, options=inner_options, phase="warm_start")
    restore_opts = (
        replace(inner_options, max_iter=8, trace_path=None) if inner_options else None
    )
    problem, w0 = build_joint_problem(dataset, warm.points, theta_start, restore_opts)
    opts = outer_options or default_outer_options()
    w_star, lam, report = solve_equality_nlp(problem, w0, None, opts)
    if not report.converged:
        raise InnerSolveFailure(None, report, "outer")

    horizon = dataset.horizon
    block = horizon.dim_z + horizon.n_constraints
    resid, _ = problem.constraints(w_star)
    points = []
    for i in range(len(dataset)):
        w_sl = w_star[N_BASES + i * block : N_BASES + (i + 1) * block]
        r_sl = resid[i * block : (i + 1) * block]
        points.append(
            KktPoint(
                z=w_sl[: horizon.dim_z].copy(),
                nu=w_sl[horizon.dim_z :].copy(),
                residual_norm=float(np.abs(r_sl).max()),
            )
        )
    theta_hat = theta_gauge(w_star[:N_BASES])
    theta_hat, points, loss, _ = _polish_weights(
        theta_hat, points, cumulative_loss(points, dataset), dataset, inner_options
    )

    warnings = []
    if np.any(theta_hat < 0.0):
        negative = ", ".join(f"{idx}" for idx in np.flatnonzero(theta_hat < 0.0))
        warnings.append(f"recovered weights have negative entries at indices {negative}")

    return IocResult(
        theta_hat=theta_gauge(theta_hat),
        predictions=points,
        loss=loss,
        report=report,
        method="single-level",
        warnings=warnings,
    )
