"""Arm model tests.

The torque reference values below were derived independently through a
symbolic Lagrangian of the planar two-link chain (kinetic energy of both
COMs plus rotational terms, potential energy against -y gravity) and are
frozen here to twenty digits, so the closed-form implementation is checked
against mechanics rather than against itself.
"""

import numpy as np
import pytest

from conftest import central_difference
from reachioc.arm import (
    ArmParams,
    JointState,
    UnreachableTarget,
    fk_derivatives,
    fk_third_derivatives,
    forward_kinematics,
    inverse_dynamics,
    inverse_dynamics_derivatives,
    inverse_kinematics,
)

# state = (q1, q2, dq1, dq2, ddq1, ddq2); expected = (tau1, tau2)
LAGRANGIAN_TORQUES_DEFAULT = [
    ((0.0, 0.0, 0.0, 0.0, 0.0, 0.0), (19.62, 4.905)),
    (
        (0.3, -0.7, 1.1, -0.4, 2.0, 0.5),
        (23.564557167051972897, 5.7262279954231702916),
    ),
    ((-1.4707963267948966, -0.1, 0.0, 0.0, 0.0, 0.0), (1.4690487259580744528, 0.0)),
    (
        (2.2, 1.9, -3.0, 2.5, -1.0, -4.0),
        (-9.3693738139351516736, -0.066182946387235652708),
    ),
    (
        (-0.9, 2.4, 0.7, 1.3, 3.1, -2.2),
        (11.267064677666482453, -0.33050580567381582231),
    ),
]

LAGRANGIAN_TORQUES_ODD = [
    ((0.0, 0.0, 0.0, 0.0, 0.0, 0.0), (17.2656, 2.0601)),
    (
        (0.3, -0.7, 1.1, -0.4, 2.0, 0.5),
        (20.244253907085600019, 2.3532695585109699721),
    ),
    ((-1.4707963267948966, -0.1, 0.0, 0.0, 0.0, 0.0), (1.5180170168233442229, 0.0)),
    (
        (2.2, 1.9, -3.0, 2.5, -1.0, -4.0),
        (-9.7618601587683482279, 0.29284295999441622982),
    ),
    (
        (-0.9, 2.4, 0.7, 1.3, 3.1, -2.2),
        (12.887791987112430903, -0.20416625313686642684),
    ),
]

FK_POINTS = [
    ((0.0, 0.0), (2.0, 0.0)),
    ((0.3, -0.7), (1.8763974831284910838, -0.093898135647310920771)),
    ((2.2, 1.9), (-1.1633250637886149992, -0.0097807072448201637371)),
    ((-1.4707963267948966, -0.1), (0.099833416646827918828, -1.9950041652780257095)),
]


def state_of(values) -> JointState:
    arr = np.asarray(values, dtype=float)
    return JointState(q=arr[:2], dq=arr[2:4], ddq=arr[4:6])


@pytest.mark.parametrize("state,expected", LAGRANGIAN_TORQUES_DEFAULT)
def test_torques_match_lagrangian_default_params(state, expected, arm):
    tau = inverse_dynamics(state_of(state), arm)
    assert np.allclose(tau, expected, rtol=1e-14, atol=1e-13)


@pytest.mark.parametrize("state,expected", LAGRANGIAN_TORQUES_ODD)
def test_torques_match_lagrangian_odd_params(state, expected, odd_arm):
    tau = inverse_dynamics(state_of(state), odd_arm)
    assert np.allclose(tau, expected, rtol=1e-14, atol=1e-13)


@pytest.mark.parametrize("q,expected", FK_POINTS)
def test_forward_kinematics_points(q, expected, arm):
    assert np.allclose(forward_kinematics(np.asarray(q), arm), expected, atol=1e-15)


def test_inverse_dynamics_broadcasts_over_leading_axes(arm):
    rng = np.random.default_rng(7)
    batch = JointState(
        q=rng.uniform(-np.pi, np.pi, (4, 3, 2)),
        dq=rng.uniform(-5, 5, (4, 3, 2)),
        ddq=rng.uniform(-20, 20, (4, 3, 2)),
    )
    tau = inverse_dynamics(batch, arm)
    assert tau.shape == (4, 3, 2)
    for i in range(4):
        for j in range(3):
            one = JointState(q=batch.q[i, j], dq=batch.dq[i, j], ddq=batch.ddq[i, j])
            assert np.allclose(tau[i, j], inverse_dynamics(one, arm))


def test_mass_matrix_symmetric_positive_definite(arm, odd_arm):
    rng = np.random.default_rng(3)
    for params in (arm, odd_arm):
        for _ in range(50):
            q = rng.uniform(-np.pi, np.pi, 2)
            state = JointState(q=q, dq=np.zeros(2), ddq=np.zeros(2))
            first, _ = inverse_dynamics_derivatives(state, params)
            mass = first[:, 4:6]
            assert np.allclose(mass, mass.T, atol=1e-12)
            assert np.all(np.linalg.eigvalsh(mass) > 0.0)


def test_torque_linear_in_acceleration(arm):
    # tau(q, dq, ddq) = M(q) ddq + bias(q, dq)
    rng = np.random.default_rng(11)
    for _ in range(20):
        q = rng.uniform(-np.pi, np.pi, 2)
        dq = rng.uniform(-5, 5, 2)
        bias = inverse_dynamics(JointState(q=q, dq=dq, ddq=np.zeros(2)), arm)
        first, _ = inverse_dynamics_derivatives(
            JointState(q=q, dq=dq, ddq=np.zeros(2)), arm
        )
        mass = first[:, 4:6]
        ddq = rng.uniform(-20, 20, 2)
        tau = inverse_dynamics(JointState(q=q, dq=dq, ddq=ddq), arm)
        assert np.allclose(tau, mass @ ddq + bias, atol=1e-10)


def test_dynamics_first_derivatives_match_finite_differences(arm, odd_arm):
    rng = np.random.default_rng(5)
    for params in (arm, odd_arm):
        for _ in range(60):
            x = np.concatenate(
                [
                    rng.uniform(-np.pi, np.pi, 2),
                    rng.uniform(-5, 5, 2),
                    rng.uniform(-20, 20, 2),
                ]
            )
            first, _ = inverse_dynamics_derivatives(state_of(x), params)
            fd = central_difference(
                lambda y: inverse_dynamics(state_of(y), params), x
            )
            assert np.allclose(first, fd, rtol=1e-5, atol=1e-6)


def test_dynamics_second_derivatives_match_finite_differences(arm):
    rng = np.random.default_rng(6)
    for _ in range(40):
        x = np.concatenate(
            [
                rng.uniform(-np.pi, np.pi, 2),
                rng.uniform(-5, 5, 2),
                rng.uniform(-20, 20, 2),
            ]
        )
        _, second = inverse_dynamics_derivatives(state_of(x), arm)
        fd = central_difference(
            lambda y: inverse_dynamics_derivatives(state_of(y), arm)[0], x
        )
        assert np.allclose(second, fd, rtol=1e-4, atol=1e-5)


def test_fk_derivatives_match_finite_differences(arm, odd_arm):
    rng = np.random.default_rng(9)
    for params in (arm, odd_arm):
        for _ in range(60):
            q = rng.uniform(-np.pi, np.pi, 2)
            jac, hess = fk_derivatives(q, params)
            assert np.allclose(
                jac, central_difference(lambda x: forward_kinematics(x, params), q),
                rtol=1e-6, atol=1e-8,
            )
            assert np.allclose(
                hess,
                central_difference(lambda x: fk_derivatives(x, params)[0], q),
                rtol=1e-5, atol=1e-7,
            )
            third = fk_third_derivatives(q, params)
            assert np.allclose(
                third,
                central_difference(lambda x: fk_derivatives(x, params)[1], q),
                rtol=1e-5, atol=1e-7,
            )


def test_inverse_kinematics_round_trip_both_branches(arm, odd_arm):
    rng = np.random.default_rng(13)
    for params in (arm, odd_arm):
        lo = abs(params.lengths[0] - params.lengths[1]) + 1e-6
        hi = params.reach - 1e-6
        for _ in range(60):
            radius = rng.uniform(lo, hi)
            angle = rng.uniform(-np.pi, np.pi)
            p = radius * np.array([np.cos(angle), np.sin(angle)])
            for branch, sign in (("elbow-up", 1.0), ("elbow-down", -1.0)):
                q = inverse_kinematics(p, branch, params)
                assert sign * q[1] >= -1e-12
                assert np.allclose(forward_kinematics(q, params), p, atol=1e-9)


def test_inverse_kinematics_rejects_unreachable(arm):
    with pytest.raises(UnreachableTarget):
        inverse_kinematics(np.array([2.5, 0.0]), "elbow-up", arm)
    with pytest.raises(ValueError):
        inverse_kinematics(np.array([1.0, 0.5]), "sideways", arm)


def test_params_validation():
    with pytest.raises(ValueError):
        ArmParams(lengths=(1.0, -1.0))
    with pytest.raises(ValueError):
        ArmParams(masses=(0.0, 1.0))
    with pytest.raises(ValueError):
        ArmParams(gravity=float("nan"))


def test_torques_match_live_lagrangian_derivation(odd_arm):
    """Re-derive the dynamics symbolically and compare at random states.

    This is the generator of the frozen constants above, kept runnable so
    the reference never goes stale.  Skipped when sympy is unavailable.
    """
    sp = pytest.importorskip("sympy")

    q1, q2, v1, v2, u1, u2 = sp.symbols("q1 q2 v1 v2 u1 u2", real=True)
    l1v, r1v, r2v = odd_arm.lengths[0], *odd_arm.com_offsets
    m1v, m2v = odd_arm.masses
    i1v, i2v = odd_arm.inertias
    gv = odd_arm.gravity

    y1 = r1v * sp.sin(q1)
    x1 = r1v * sp.cos(q1)
    x2 = l1v * sp.cos(q1) + r2v * sp.cos(q1 + q2)
    y2 = l1v * sp.sin(q1) + r2v * sp.sin(q1 + q2)
    vx1, vy1 = sp.diff(x1, q1) * v1, sp.diff(y1, q1) * v1
    vx2 = sp.diff(x2, q1) * v1 + sp.diff(x2, q2) * v2
    vy2 = sp.diff(y2, q1) * v1 + sp.diff(y2, q2) * v2
    lagrangian = (
        sp.Rational(1, 2) * m1v * (vx1**2 + vy1**2)
        + sp.Rational(1, 2) * i1v * v1**2
        + sp.Rational(1, 2) * m2v * (vx2**2 + vy2**2)
        + sp.Rational(1, 2) * i2v * (v1 + v2) ** 2
        - gv * (m1v * y1 + m2v * y2)
    )

    def total_dt(expr):
        return (
            sp.diff(expr, q1) * v1
            + sp.diff(expr, q2) * v2
            + sp.diff(expr, v1) * u1
            + sp.diff(expr, v2) * u2
        )

    taus = [
        total_dt(sp.diff(lagrangian, vi)) - sp.diff(lagrangian, qi)
        for qi, vi in ((q1, v1), (q2, v2))
    ]
    fns = [sp.lambdify((q1, q2, v1, v2, u1, u2), t, "numpy") for t in taus]

    rng = np.random.default_rng(17)
    for _ in range(25):
        x = np.concatenate(
            [
                rng.uniform(-np.pi, np.pi, 2),
                rng.uniform(-5, 5, 2),
                rng.uniform(-20, 20, 2),
            ]
        )
        expected = np.array([fn(*x) for fn in fns])
        tau = inverse_dynamics(state_of(x), odd_arm)
        assert np.allclose(tau, expected, rtol=1e-12, atol=1e-11)
