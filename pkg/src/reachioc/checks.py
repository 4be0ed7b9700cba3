"""Finite-difference verification of every analytic derivative.

Each suite compares an analytic derivative against central differences with
step 1e-6 at randomly drawn states.  The reported error is

    |analytic - numeric|_max / max(1, |analytic|_max),

an absolute measure that switches to relative once entries exceed one, which
suits the mixed scales here (geometry near one, torques in the hundreds).
Trajectory-level suites run on short horizons so the full battery stays fast;
the derivative code is horizon-independent, identical at any length.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .arm import (
    ArmParams,
    JointState,
    fk_derivatives,
    fk_third_derivatives,
    forward_kinematics,
    inverse_dynamics,
    inverse_dynamics_derivatives,
)
from .cost_basis import basis_gradients, basis_hessians, basis_values
from .kkt import kkt_jacobian_primal_dual, kkt_jacobian_theta, kkt_vector
from .transcription import (
    EnvironmentParams,
    Horizon,
    constraints,
    constraints_jacobian,
    constraints_weighted_hessian,
)

STEP = 1e-6
GRADIENT_TOL = 1e-5
CURVATURE_TOL = 1e-4


@dataclass
class CheckResult:
    name: str
    points: int
    max_error: float
    tol: float
    seconds: float

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tol


def _central(fn, x: np.ndarray, step: float = STEP) -> np.ndarray:
    """Jacobian of fn stacked along the last axis: out[..., k] = d fn / d x_k."""
    columns = []
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = step
        columns.append((np.asarray(fn(x + e)) - np.asarray(fn(x - e))) / (2.0 * step))
    return np.stack(columns, axis=-1)


def _error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    analytic = np.asarray(analytic)
    scale = max(1.0, float(np.abs(analytic).max(initial=0.0)))
    return float(np.abs(analytic - numeric).max(initial=0.0)) / scale


def _random_state(rng: np.random.Generator) -> np.ndarray:
    return np.concatenate(
        [rng.uniform(-np.pi, np.pi, 2), rng.uniform(-6.0, 6.0, 2), rng.uniform(-30.0, 30.0, 2)]
    )


def _random_z(rng: np.random.Generator, horizon: Horizon) -> np.ndarray:
    return np.concatenate(
        [
            rng.uniform(-np.pi, np.pi, 2 * horizon.n_q),
            rng.uniform(-6.0, 6.0, 2 * horizon.n_dq),
            rng.uniform(-30.0, 30.0, 2 * horizon.n_ddq),
        ]
    )


def _small_horizons() -> list[Horizon]:
    return [Horizon(0.0, 0.05 * n, n) for n in (4, 6, 8)]


def _random_env(rng: np.random.Generator, params: ArmParams) -> EnvironmentParams:
    radius = rng.uniform(0.3, 0.95) * params.reach
    angle = rng.uniform(-np.pi, np.pi)
    return EnvironmentParams(
        q_init=rng.uniform(-np.pi, np.pi, 2),
        p_goal=radius * np.array([np.cos(angle), np.sin(angle)]),
    )


def run_all_checks(seed: int = 0, points: int = 120) -> list[CheckResult]:
    """Run every suite; ``points`` random draws per derivative."""
    params = ArmParams()
    results = []

    def suite(name: str, tol: float, body) -> None:
        rng = np.random.default_rng(np.random.SeedSequence((seed, len(results))))
        start = time.perf_counter()
        worst = body(rng)
        results.append(
            CheckResult(
                name=name,
                points=points,
                max_error=worst,
                tol=tol,
                seconds=time.perf_counter() - start,
            )
        )

    def fk_jacobian(rng):
        worst = 0.0
        for _ in range(points):
            q = rng.uniform(-np.pi, np.pi, 2)
            jac, _ = fk_derivatives(q, params)
            fd = _central(lambda x: forward_kinematics(x, params), q)
            worst = max(worst, _error(jac, fd))
        return worst

    def fk_hessian(rng):
        worst = 0.0
        for _ in range(points):
            q = rng.uniform(-np.pi, np.pi, 2)
            _, hess = fk_derivatives(q, params)
            fd = _central(lambda x: fk_derivatives(x, params)[0], q)
            worst = max(worst, _error(hess, fd))
        return worst

    def fk_third(rng):
        worst = 0.0
        for _ in range(points):
            q = rng.uniform(-np.pi, np.pi, 2)
            third = fk_third_derivatives(q, params)
            fd = _central(lambda x: fk_derivatives(x, params)[1], q)
            worst = max(worst, _error(third, fd))
        return worst

    def torque_state(x: np.ndarray) -> np.ndarray:
        return inverse_dynamics(JointState(q=x[:2], dq=x[2:4], ddq=x[4:6]), params)

    def dynamics_first(rng):
        worst = 0.0
        for _ in range(points):
            x = _random_state(rng)
            first, _ = inverse_dynamics_derivatives(
                JointState(q=x[:2], dq=x[2:4], ddq=x[4:6]), params
            )
            worst = max(worst, _error(first, _central(torque_state, x)))
        return worst

    def dynamics_second(rng):
        worst = 0.0
        for _ in range(points):
            x = _random_state(rng)
            _, second = inverse_dynamics_derivatives(
                JointState(q=x[:2], dq=x[2:4], ddq=x[4:6]), params
            )
            fd = _central(
                lambda y: inverse_dynamics_derivatives(
                    JointState(q=y[:2], dq=y[2:4], ddq=y[4:6]), params
                )[0],
                x,
            )
            worst = max(worst, _error(second, fd))
        return worst

    def constraint_jacobian(rng):
        worst = 0.0
        horizons = _small_horizons()
        for i in range(points):
            horizon = horizons[i % len(horizons)]
            env = _random_env(rng, params)
            z = _random_z(rng, horizon)
            jac = constraints_jacobian(z, env, horizon, params).toarray()
            fd = _central(lambda x: constraints(x, env, horizon, params), z)
            worst = max(worst, _error(jac, fd))
        return worst

    def constraint_curvature(rng):
        worst = 0.0
        horizons = _small_horizons()
        for i in range(points):
            horizon = horizons[i % len(horizons)]
            env = _random_env(rng, params)
            z = _random_z(rng, horizon)
            nu = rng.uniform(-10.0, 10.0, horizon.n_constraints)
            hess = constraints_weighted_hessian(z, env, nu, horizon, params).toarray()
            fd = _central(
                lambda x: constraints_jacobian(x, env, horizon, params).T @ nu, z
            )
            worst = max(worst, _error(hess, fd))
        return worst

    def cost_gradients(rng):
        worst = 0.0
        horizons = _small_horizons()
        for i in range(points):
            horizon = horizons[i % len(horizons)]
            z = _random_z(rng, horizon)
            grads = basis_gradients(z, horizon, params)
            fd = _central(lambda x: basis_values(x, horizon, params), z)
            worst = max(worst, _error(grads, fd))
        return worst

    def cost_hessians(rng):
        worst = 0.0
        horizons = _small_horizons()
        for i in range(points):
            horizon = horizons[i % len(horizons)]
            z = _random_z(rng, horizon)
            hessians = basis_hessians(z, horizon, params)
            fd = _central(lambda x: basis_gradients(x, horizon, params), z)
            for j, hess in enumerate(hessians):
                worst = max(worst, _error(hess.toarray(), fd[j]))
        return worst

    def optimality_primal_dual(rng):
        worst = 0.0
        horizons = _small_horizons()
        for i in range(points):
            horizon = horizons[i % len(horizons)]
            env = _random_env(rng, params)
            theta = rng.uniform(0.05, 1.0, 5)
            z = _random_z(rng, horizon)
            nu = rng.uniform(-10.0, 10.0, horizon.n_constraints)
            pair = np.concatenate([z, nu])
            jac = kkt_jacobian_primal_dual(z, nu, theta, env, horizon, params).toarray()
            fd = _central(
                lambda x: kkt_vector(
                    x[: horizon.dim_z], x[horizon.dim_z :], theta, env, horizon, params
                ),
                pair,
            )
            worst = max(worst, _error(jac, fd))
        return worst

    def optimality_theta(rng):
        worst = 0.0
        horizons = _small_horizons()
        for i in range(points):
            horizon = horizons[i % len(horizons)]
            env = _random_env(rng, params)
            theta = rng.uniform(0.05, 1.0, 5)
            z = _random_z(rng, horizon)
            nu = rng.uniform(-10.0, 10.0, horizon.n_constraints)
            jac = kkt_jacobian_theta(z, nu, theta, env, horizon, params).toarray()
            fd = _central(
                lambda w: kkt_vector(z, nu, w, env, horizon, params), theta
            )
            worst = max(worst, _error(jac, fd))
        return worst

    suite("fk jacobian", GRADIENT_TOL, fk_jacobian)
    suite("fk hessian", CURVATURE_TOL, fk_hessian)
    suite("fk third derivative", CURVATURE_TOL, fk_third)
    suite("dynamics first derivatives", GRADIENT_TOL, dynamics_first)
    suite("dynamics second derivatives", CURVATURE_TOL, dynamics_second)
    suite("constraint jacobian", GRADIENT_TOL, constraint_jacobian)
    suite("constraint curvature", CURVATURE_TOL, constraint_curvature)
    suite("cost gradients", GRADIENT_TOL, cost_gradients)
    suite("cost hessians", CURVATURE_TOL, cost_hessians)
    suite("optimality system primal-dual jacobian", CURVATURE_TOL, optimality_primal_dual)
    suite("optimality system weight jacobian", GRADIENT_TOL, optimality_theta)
    return results
