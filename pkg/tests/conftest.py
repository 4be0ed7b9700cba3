import numpy as np
import pytest

from reachioc.arm import ArmParams
from reachioc.transcription import EnvironmentParams, Horizon


@pytest.fixture
def arm() -> ArmParams:
    return ArmParams()


@pytest.fixture
def odd_arm() -> ArmParams:
    """Non-default physical parameters, to catch hard-coded coefficients."""
    return ArmParams(
        lengths=(1.1, 0.8),
        com_offsets=(0.6, 0.3),
        masses=(1.3, 0.7),
        inertias=(0.11, 0.05),
    )


@pytest.fixture
def small_horizon() -> Horizon:
    return Horizon(t0=0.0, tf=0.5, samples=10)


@pytest.fixture
def env() -> EnvironmentParams:
    return EnvironmentParams(
        q_init=np.array([-np.pi / 2 + 0.1, -0.1]), p_goal=np.array([1.5, 0.6])
    )


def random_z(rng: np.random.Generator, horizon: Horizon) -> np.ndarray:
    """Random decision vector with state magnitudes a trajectory could hold."""
    q = rng.uniform(-np.pi, np.pi, 2 * horizon.n_q)
    dq = rng.uniform(-5.0, 5.0, 2 * horizon.n_dq)
    ddq = rng.uniform(-20.0, 20.0, 2 * horizon.n_ddq)
    return np.concatenate([q, dq, ddq])


def central_difference(fn, x: np.ndarray, step: float = 1e-6) -> np.ndarray:
    """Jacobian of fn at x by central differences, columns over x entries."""
    x = np.asarray(x, dtype=float)
    cols = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = step
        cols.append((np.asarray(fn(x + e)) - np.asarray(fn(x - e))) / (2.0 * step))
    return np.stack(cols, axis=-1)
