import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from fastswitch.field import StateVelocity, TestFunction, UGrid, VelocityField
from fastswitch.model import SemiMarkovModel, SojournDistribution
from fastswitch.pipeline import build_expansion

settings.register_profile("suite", max_examples=25, deadline=None,
                          suppress_health_check=(HealthCheck.too_slow,))
settings.load_profile("suite")


GRID = UGrid(-8.0, 8.0, 257)
PHI = TestFunction("gaussian", 0.0, 1.0)


def make_model_a() -> SemiMarkovModel:
    return SemiMarkovModel(states=("a", "b"), P=[[0.0, 1.0], [1.0, 0.0]],
                           sojourns=(SojournDistribution("exponential", rate=1.0),
                                     SojournDistribution("exponential", rate=2.0)))


def make_model_b() -> SemiMarkovModel:
    return SemiMarkovModel(states=("a", "b"), P=[[0.0, 1.0], [1.0, 0.0]],
                           sojourns=(SojournDistribution("erlang", rate=1.0, shape=2),
                                     SojournDistribution("erlang", rate=2.0, shape=2)))


def make_pm_field(grid=GRID) -> VelocityField:
    return VelocityField(grid, (StateVelocity("constant", value=1.0),
                                StateVelocity("constant", value=-1.0)))


def make_collapse_model() -> SemiMarkovModel:
    return SemiMarkovModel(states=("a", "b"), P=[[0.5, 0.5], [0.5, 0.5]],
                           sojourns=(SojournDistribution("exponential", rate=1.0),
                                     SojournDistribution("erlang", rate=2.0, shape=2)))


def make_collapse_field(grid=GRID) -> VelocityField:
    return VelocityField(grid, (StateVelocity("constant", value=0.7),
                                StateVelocity("constant", value=0.7)))


def random_model(rng: np.random.Generator, n_max: int = 20) -> SemiMarkovModel:
    """Random irreducible model for property tests."""
    n = int(rng.integers(1, n_max + 1))
    P = rng.random((n, n)) + 0.05
    P /= P.sum(axis=1, keepdims=True)
    sojourns = []
    for _ in range(n):
        fam = rng.choice(["exponential", "erlang", "uniform"])
        if fam == "exponential":
            sojourns.append(SojournDistribution("exponential", rate=float(rng.uniform(0.5, 3.0))))
        elif fam == "erlang":
            sojourns.append(SojournDistribution("erlang", rate=float(rng.uniform(0.5, 3.0)),
                                                shape=int(rng.integers(1, 4))))
        else:
            a = float(rng.uniform(0.0, 1.0))
            sojourns.append(SojournDistribution("uniform", a=a, b=a + float(rng.uniform(0.2, 2.0))))
    return SemiMarkovModel(states=tuple(range(n)), P=P, sojourns=tuple(sojourns))


@pytest.fixture(scope="session")
def model_a():
    return make_model_a()


@pytest.fixture(scope="session")
def model_b():
    return make_model_b()


@pytest.fixture(scope="session")
def pm_field():
    return make_pm_field()


@pytest.fixture(scope="session")
def phi():
    return PHI


@pytest.fixture(scope="session")
def grid():
    return GRID


@pytest.fixture(scope="session")
def expansion_a():
    """Order-2 expansion of the two-state exponential test model."""
    return build_expansion(make_model_a(), make_pm_field(), PHI, order=2,
                           horizon=1.0, h_t=0.002, h_tau=0.005)


@pytest.fixture(scope="session")
def expansion_b():
    """Order-2 expansion of the two-state erlang test model."""
    return build_expansion(make_model_b(), make_pm_field(), PHI, order=2,
                           horizon=1.0, h_t=0.002, h_tau=0.005)


@pytest.fixture(scope="session")
def expansion_collapse():
    """Order-2 expansion with state-independent velocity (must vanish)."""
    return build_expansion(make_collapse_model(), make_collapse_field(), PHI,
                           order=2, horizon=1.0, h_t=0.002, h_tau=0.01)
