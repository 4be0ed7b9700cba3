"""Planar two-link arm: kinematics, inverse dynamics, and their derivatives.

Angle convention: ``q[0]`` is measured counterclockwise from the world +x
axis and ``q[1]`` is the elbow angle relative to the first link, so
``q = (0, 0)`` stretches the arm along +x.  Gravity pulls along world -y.

Joint torque is treated as a function of the motion state,

    tau(q, dq, ddq) = M(q) ddq + c(q, dq) + g(q),

with the closed-form mass matrix, Coriolis/centrifugal vector, and gravity
vector of a planar 2R chain.  Every routine broadcasts over leading axes, so
a whole trajectory of states can be evaluated in one call.

Derivatives below are with respect to the stacked state ``(q1, q2, dq1, dq2,
ddq1, ddq2)`` in that order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class UnreachableTarget(ValueError):
    """Raised when an end-effector target lies outside the reachable annulus."""


@dataclass(frozen=True)
class ArmParams:
    """Geometric and inertial description of the arm.

    ``com_offsets`` are distances from each joint to the link's center of
    mass, along the link.  ``inertias`` are about the centers of mass.
    Defaults describe two unit-length, unit-mass uniform rods.
    """

    lengths: tuple[float, float] = (1.0, 1.0)
    com_offsets: tuple[float, float] = (0.5, 0.5)
    masses: tuple[float, float] = (1.0, 1.0)
    inertias: tuple[float, float] = (1.0 / 12.0, 1.0 / 12.0)
    gravity: float = 9.81

    def __post_init__(self) -> None:
        for name in ("lengths", "com_offsets", "masses", "inertias"):
            value = tuple(float(v) for v in getattr(self, name))
            if len(value) != 2:
                raise ValueError(f"{name} must have exactly two entries")
            if not all(np.isfinite(v) and v > 0.0 for v in value):
                raise ValueError(f"{name} entries must be finite and positive")
            object.__setattr__(self, name, value)
        if not np.isfinite(self.gravity):
            raise ValueError("gravity must be finite")

    @property
    def reach(self) -> float:
        return self.lengths[0] + self.lengths[1]

    # Coefficients of the closed-form dynamics.  With l1 the first link
    # length, r_i the COM offsets, these are the only combinations of the
    # physical parameters the torque expression needs.
    @property
    def _coeffs(self) -> tuple[float, float, float, float, float]:
        l1, _ = self.lengths
        r1, r2 = self.com_offsets
        m1, m2 = self.masses
        i1, i2 = self.inertias
        a = i1 + i2 + m1 * r1 * r1 + m2 * (l1 * l1 + r2 * r2)  # M11 at q2 = 0, minus 2h
        b = i2 + m2 * r2 * r2  # M22
        h = m2 * l1 * r2  # cos-coupling strength
        g1 = (m1 * r1 + m2 * l1) * self.gravity  # shoulder gravity lever
        g2 = m2 * r2 * self.gravity  # elbow gravity lever
        return a, b, h, g1, g2


@dataclass(frozen=True)
class JointState:
    """Joint positions, velocities, and accelerations, shape ``(..., 2)`` each."""

    q: np.ndarray
    dq: np.ndarray
    ddq: np.ndarray

    def __post_init__(self) -> None:
        q = np.asarray(self.q, dtype=float)
        dq = np.asarray(self.dq, dtype=float)
        ddq = np.asarray(self.ddq, dtype=float)
        for name, arr in (("q", q), ("dq", dq), ("ddq", ddq)):
            if arr.shape[-1:] != (2,):
                raise ValueError(f"{name} must have trailing dimension 2")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} must be finite")
        if not (q.shape == dq.shape == ddq.shape):
            raise ValueError("q, dq, ddq must share one shape")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "dq", dq)
        object.__setattr__(self, "ddq", ddq)


def forward_kinematics(q: np.ndarray, params: ArmParams) -> np.ndarray:
    """End-effector position for joint angles ``q`` with shape ``(..., 2)``."""
    q = np.asarray(q, dtype=float)
    l1, l2 = params.lengths
    q1 = q[..., 0]
    q12 = q[..., 0] + q[..., 1]
    return np.stack(
        [l1 * np.cos(q1) + l2 * np.cos(q12), l1 * np.sin(q1) + l2 * np.sin(q12)],
        axis=-1,
    )


def fk_derivatives(q: np.ndarray, params: ArmParams) -> tuple[np.ndarray, np.ndarray]:
    """Jacobian ``(..., 2, 2)`` and second derivatives ``(..., 2, 2, 2)`` of FK.

    Index order: ``jac[..., i, j] = d p_i / d q_j`` and
    ``hess[..., i, j, k] = d^2 p_i / d q_j d q_k``.
    """
    q = np.asarray(q, dtype=float)
    l1, l2 = params.lengths
    q1 = q[..., 0]
    q12 = q[..., 0] + q[..., 1]
    c1, s1 = l1 * np.cos(q1), l1 * np.sin(q1)
    c12, s12 = l2 * np.cos(q12), l2 * np.sin(q12)

    jac = np.empty(q.shape[:-1] + (2, 2))
    jac[..., 0, 0] = -s1 - s12
    jac[..., 0, 1] = -s12
    jac[..., 1, 0] = c1 + c12
    jac[..., 1, 1] = c12

    # Differentiating again only the q1-pure entry keeps the first-link term;
    # every index combination touching q2 sees just the second link.
    hess = np.empty(q.shape[:-1] + (2, 2, 2))
    hess[..., 0, :, :] = (-c12)[..., None, None]
    hess[..., 0, 0, 0] -= c1
    hess[..., 1, :, :] = (-s12)[..., None, None]
    hess[..., 1, 0, 0] -= s1
    return jac, hess


def fk_third_derivatives(q: np.ndarray, params: ArmParams) -> np.ndarray:
    """Third derivative tensor ``(..., 2, 2, 2, 2)`` of the FK map."""
    q = np.asarray(q, dtype=float)
    l1, l2 = params.lengths
    q1 = q[..., 0]
    q12 = q[..., 0] + q[..., 1]
    third = np.empty(q.shape[:-1] + (2, 2, 2, 2))
    third[..., 0, :, :, :] = (l2 * np.sin(q12))[..., None, None, None]
    third[..., 0, 0, 0, 0] += l1 * np.sin(q1)
    third[..., 1, :, :, :] = (-l2 * np.cos(q12))[..., None, None, None]
    third[..., 1, 0, 0, 0] -= l1 * np.cos(q1)
    return third


def inverse_kinematics(p: np.ndarray, branch: str, params: ArmParams) -> np.ndarray:
    """Joint angles reaching point ``p``, on the requested elbow branch.

    ``branch`` is ``"elbow-up"`` (q2 >= 0) or ``"elbow-down"`` (q2 <= 0).
    Raises :class:`UnreachableTarget` outside the annulus ``|l1 - l2| <=
    |p| <= l1 + l2``.
    """
    if branch not in ("elbow-up", "elbow-down"):
        raise ValueError(f"unknown branch {branch!r}")
    p = np.asarray(p, dtype=float)
    if p.shape != (2,):
        raise ValueError("p must have shape (2,)")
    l1, l2 = params.lengths
    r2 = float(p @ p)
    cos_q2 = (r2 - l1 * l1 - l2 * l2) / (2.0 * l1 * l2)
    if abs(cos_q2) > 1.0 + 1e-12:
        raise UnreachableTarget(
            f"target {tuple(p)} at distance {np.sqrt(r2):.6g} is outside "
            f"the reachable annulus [{abs(l1 - l2):.6g}, {l1 + l2:.6g}]"
        )
    q2 = np.arccos(np.clip(cos_q2, -1.0, 1.0))
    if branch == "elbow-down":
        q2 = -q2
    q1 = np.arctan2(p[1], p[0]) - np.arctan2(l2 * np.sin(q2), l1 + l2 * np.cos(q2))
    return np.array([q1, q2])


def inverse_dynamics(state: JointState, params: ArmParams) -> np.ndarray:
    """Joint torques ``(..., 2)`` producing the accelerations in ``state``."""
    a, b, h, g1, g2 = params._coeffs
    q1 = state.q[..., 0]
    q2 = state.q[..., 1]
    v1 = state.dq[..., 0]
    v2 = state.dq[..., 1]
    u1 = state.ddq[..., 0]
    u2 = state.ddq[..., 1]
    c2, s2 = np.cos(q2), np.sin(q2)

    m11 = a + 2.0 * h * c2
    m12 = b + h * c2
    grav1 = g1 * np.cos(q1) + g2 * np.cos(q1 + q2)
    grav2 = g2 * np.cos(q1 + q2)

    tau1 = m11 * u1 + m12 * u2 - h * s2 * (2.0 * v1 * v2 + v2 * v2) + grav1
    tau2 = m12 * u1 + b * u2 + h * s2 * v1 * v1 + grav2
    return np.stack([tau1, tau2], axis=-1)


def inverse_dynamics_derivatives(
    state: JointState, params: ArmParams
) -> tuple[np.ndarray, np.ndarray]:
    """First and second derivatives of torque with respect to the state.

    Returns ``(first, second)`` with shapes ``(..., 2, 6)`` and
    ``(..., 2, 6, 6)``; the last axes index ``(q1, q2, dq1, dq2, ddq1,
    ddq2)``.  ``first[..., :, 4:6]`` is the mass matrix.
    """
    a, b, h, g1, g2 = params._coeffs
    q1 = state.q[..., 0]
    q2 = state.q[..., 1]
    v1 = state.dq[..., 0]
    v2 = state.dq[..., 1]
    u1 = state.ddq[..., 0]
    u2 = state.ddq[..., 1]
    c2, s2 = np.cos(q2), np.sin(q2)
    s1g, c1g = g1 * np.sin(q1), g1 * np.cos(q1)
    s12g, c12g = g2 * np.sin(q1 + q2), g2 * np.cos(q1 + q2)

    batch = q1.shape
    first = np.zeros(batch + (2, 6))
    second = np.zeros(batch + (2, 6, 6))

    quad = 2.0 * v1 * v2 + v2 * v2

    # tau1 rows
    first[..., 0, 0] = -s1g - s12g
    first[..., 0, 1] = -2.0 * h * s2 * u1 - h * s2 * u2 - h * c2 * quad - s12g
    first[..., 0, 2] = -2.0 * h * s2 * v2
    first[..., 0, 3] = -2.0 * h * s2 * (v1 + v2)
    first[..., 0, 4] = a + 2.0 * h * c2
    first[..., 0, 5] = b + h * c2

    # tau2 rows
    first[..., 1, 0] = -s12g
    first[..., 1, 1] = -h * s2 * u1 + h * c2 * v1 * v1 - s12g
    first[..., 1, 2] = 2.0 * h * s2 * v1
    first[..., 1, 4] = b + h * c2
    first[..., 1, 5] = b

    def sym(i: int, j: int, k: int, value: np.ndarray) -> None:
        second[..., i, j, k] = value
        if j != k:
            second[..., i, k, j] = value

    # tau1 second derivatives
    sym(0, 0, 0, -c1g - c12g)
    sym(0, 0, 1, -c12g)
    sym(0, 1, 1, -2.0 * h * c2 * u1 - h * c2 * u2 + h * s2 * quad - c12g)
    sym(0, 1, 2, -2.0 * h * c2 * v2)
    sym(0, 1, 3, -2.0 * h * c2 * (v1 + v2))
    sym(0, 1, 4, np.broadcast_to(-2.0 * h * s2, batch))
    sym(0, 1, 5, np.broadcast_to(-h * s2, batch))
    sym(0, 2, 3, np.broadcast_to(-2.0 * h * s2, batch))
    sym(0, 3, 3, np.broadcast_to(-2.0 * h * s2, batch))

    # tau2 second derivatives
    sym(1, 0, 0, -c12g)
    sym(1, 0, 1, -c12g)
    sym(1, 1, 1, -h * c2 * u1 - h * s2 * v1 * v1 - c12g)
    sym(1, 1, 2, 2.0 * h * c2 * v1)
    sym(1, 1, 4, np.broadcast_to(-h * s2, batch))
    sym(1, 2, 2, np.broadcast_to(2.0 * h * s2, batch))

    return first, second
