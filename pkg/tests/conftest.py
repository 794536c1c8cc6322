import numpy as np
import pytest

from nbbr.data import salmonella_spec
from nbbr.model import ModelSpec


@pytest.fixture(scope="session")
def salmonella():
    return salmonella_spec()


def random_spec(rng, link="log", transform="identity", n=None, p=None, weights=False):
    """A small random NB regression problem with admissible means for ``link``."""
    n = int(rng.integers(5, 31)) if n is None else n
    p = int(rng.integers(1, 5)) if p is None else min(p, n)
    X = np.column_stack([np.ones(n), rng.uniform(0.0, 1.0, size=(n, p - 1))])
    if link == "log":
        beta = np.concatenate(([rng.uniform(0.3, 1.5)], rng.normal(0, 0.5, p - 1)))
    else:
        # keep eta > 0 for identity and sqrt links
        beta = np.concatenate(([rng.uniform(1.5, 3.0)], rng.uniform(0.0, 0.5, p - 1)))
    mu = np.exp(X @ beta) if link == "log" else (X @ beta if link == "identity" else (X @ beta) ** 2)
    kappa = rng.uniform(0.2, 1.5)
    lam = rng.gamma(1.0 / kappa, kappa * mu)
    y = rng.poisson(lam)
    m = rng.uniform(0.5, 2.0, n) if weights else None
    spec = ModelSpec(y, X, m, link, transform)
    return spec, beta, kappa


_ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def acceptance_log():
    """Collects one summary line per acceptance criterion."""
    return _ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
