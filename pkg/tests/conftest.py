import numpy as np
import pytest

from pgocp.features import LinearBasis, known_basis_v5
from pgocp.model import BasisStateSpaceModel, Dataset, LinearObservation, Scenario, make_rng
from pgocp.plant import true_coefficients


@pytest.fixture
def rng():
    return make_rng(12345)


def scalar_model(a=0.9, b=1.0, q=0.1, r=0.1):
    """``x+ = a x + b u + v``, ``y = x + w`` in the linear basis."""
    return BasisStateSpaceModel(A=[[a, b]], Q=[[q]], basis=LinearBasis(1, 1),
                                obs=LinearObservation(C=[[1.0]], R=[[r]]))


def v5_model(A=None, Q=None):
    basis = known_basis_v5()
    return BasisStateSpaceModel(A=true_coefficients() if A is None else A,
                                Q=np.diag([0.03, 0.01]) if Q is None else Q, basis=basis,
                                obs=LinearObservation(C=[[1.0, 0.0]], R=[[0.1]]))


def random_scenario(model, horizon, rng, x0=None):
    x0 = rng.standard_normal(model.n_x) if x0 is None else x0
    return Scenario(model=model, x0=x0,
                    process_noise=0.1 * rng.standard_normal((horizon + 1, model.n_x)),
                    measurement_noise=0.1 * rng.standard_normal((horizon + 1, model.n_y)))


def pytest_terminal_summary(terminalreporter):
    lines = [v for rep in terminalreporter.stats.get("passed", []) + terminalreporter.stats.get("failed", [])
             for k, v in getattr(rep, "user_properties", []) if k == "acceptance"]
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
