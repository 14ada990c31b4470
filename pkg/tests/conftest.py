import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from mfglab import scenario
from mfglab.expressions import Expr
from mfglab.measures import InitialLaw
from mfglab.model import CouplingSpec, LagrangianSpec, ModelSpec

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow], derandomize=True
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def lq_model(terminal="(x1 - 1)**2", lo=-0.5, hi=0.5, velocity_bound=None, horizon=1.0):
    L = LagrangianSpec.quadratic(0.5, 0.0, 1)
    f = CouplingSpec("none", 1)
    g = CouplingSpec("none", 1, potential=Expr.parse(terminal, 1))
    law = InitialLaw.uniform_box([lo], [hi])
    return ModelSpec.build(L, f, g, law, horizon, velocity_bound=velocity_bound)


@pytest.fixture(scope="session")
def lq():
    return lq_model()


@pytest.fixture(scope="session")
def s1():
    return scenario.load("s1_kde")


@pytest.fixture(scope="session")
def s1_small():
    over = scenario.parse_overrides(["discretization.particles=32", "discretization.n_x=64", "discretization.n_t=16"])
    return scenario.load("s1_kde", over)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, ok: bool, detail: str) -> str:
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
