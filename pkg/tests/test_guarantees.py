from types import SimpleNamespace

import mpmath as mp
import numpy as np
import pytest

from pgocp.errors import ParameterError, SolverError
from pgocp.guarantees import (
    Certificate,
    CertificationRequest,
    Refusal,
    certify_cost_bound,
    certify_ocp,
    certify_policy_constraints,
    epsilon_log_residual,
    epsilon_of_s,
    greedy_support,
    theorem1_level,
)
from pgocp.model import Scenario
from pgocp.ocp import OutputConstraint, ScenarioOCP, SolverConfig, solve, solver_with
from pgocp.scenario import QuadraticCost

from conftest import scalar_model

mp.mp.dps = 30


def _mp_residual(v, K, s, beta, method):
    v = mp.mpf(v)
    t = 1 - v
    lhs = mp.binomial(K, s) * t ** (K - s)
    inner = mp.fsum(mp.binomial(m, s) * t ** (m - s) for m in range(s, K))
    if method == "one_sided":
        return lhs - mp.mpf(beta) / K * inner
    outer = mp.fsum(mp.binomial(m, s) * t ** (m - s) for m in range(K + 1, 4 * K + 1))
    return lhs - mp.mpf(beta) / (2 * K) * inner - mp.mpf(beta) / (6 * K) * outer


def _mp_largest_root(K, s, beta, method):
    grid = [mp.mpf(10) ** -k for k in range(12, 2, -1)] + [mp.mpf(i) / 200 for i in range(1, 200)]
    vals = [_mp_residual(v, K, s, beta, method) for v in grid]
    idx = [i for i in range(len(grid) - 1) if vals[i] > 0 and vals[i + 1] <= 0]
    lo, hi = grid[idx[-1]], grid[idx[-1] + 1]
    for _ in range(80):
        mid = (lo + hi) / 2
        if _mp_residual(mid, K, s, beta, method) > 0:
            lo = mid
        else:
            hi = mid
    return float(lo)


def test_theorem1_level_against_high_precision():
    for K in (1, 10, 200, 1000):
        for beta in (0.01, 0.1, 0.5):
            exact = float(1 - mp.power(mp.mpf(beta), mp.mpf(1) / K))
            assert theorem1_level(K, beta) == pytest.approx(exact, rel=1e-13)


def test_theorem1_level_decreases_with_K():
    levels = [theorem1_level(K, 0.01) for K in (10, 50, 200, 1000)]
    assert all(a > b for a, b in zip(levels, levels[1:]))
    with pytest.raises(ParameterError):
        theorem1_level(0, 0.01)
    with pytest.raises(ParameterError):
        theorem1_level(10, 1.0)


@pytest.mark.parametrize("K,s,beta", [(200, 23, 0.01), (50, 13, 0.01), (20, 0, 0.1), (100, 60, 1e-6)])
@pytest.mark.parametrize("method", ["one_sided", "two_sided"])
def test_epsilon_roots_against_high_precision(K, s, beta, method):
    got = epsilon_of_s(K, s, beta, method=method) if method == "one_sided" else \
        _largest_two_sided(K, s, beta)
    assert got == pytest.approx(_mp_largest_root(K, s, beta, method), abs=1e-10)


def _largest_two_sided(K, s, beta):
    from pgocp.guarantees import _root
    return _root(K, s, beta, "two_sided", 1e-13)


def test_default_level_is_the_larger_root():
    for s in (0, 5, 23, 150):
        both = (epsilon_of_s(200, s, 0.01, "one_sided"), _largest_two_sided(200, s, 0.01))
        assert epsilon_of_s(200, s, 0.01) == max(both)


def test_epsilon_grows_with_support_size():
    vals = [epsilon_of_s(200, s, 0.01) for s in range(0, 200, 7)]
    assert all(0 < v < 1 for v in vals)
    assert all(a < b for a, b in zip(vals, vals[1:]))
    assert epsilon_of_s(200, 24, 0.01) > epsilon_of_s(200, 23, 0.01)


def _sign_changes(K, s, method):
    v = np.concatenate([np.logspace(-12, -3, 400), np.linspace(1e-3, 0.999, 4000),
                        1 - np.logspace(-3, -14, 200)])
    r = np.array([epsilon_log_residual(x, K, s, 0.01, method) for x in v])
    return v, r, np.nonzero(np.diff(np.sign(r)) != 0)[0]


@pytest.mark.parametrize("s", [0, 1, 25, 48, 49])
def test_single_sum_root_is_unique(s):
    _, _, changes = _sign_changes(50, s, "one_sided")
    assert len(changes) == 1


@pytest.mark.parametrize("s", [1, 25, 49])
def test_two_sum_polynomial_has_two_roots_and_the_upper_is_used(s):
    # the lower root (in t = 1 - v) can fall at v < 0, leaving one change inside (0, 1)
    v, r, changes = _sign_changes(50, s, "two_sided")
    assert len(changes) in (1, 2)
    if s == 49:
        assert len(changes) == 2
    upper = _largest_two_sided(50, s, 0.01)
    assert v[changes[-1]] <= upper <= v[changes[-1] + 1]
    assert np.all(r[v > upper + 1e-9] < 0)


def test_epsilon_argument_errors():
    with pytest.raises(ParameterError):
        epsilon_of_s(10, 10, 0.01)
    with pytest.raises(ParameterError):
        epsilon_of_s(10, -1, 0.01)
    with pytest.raises(ParameterError):
        epsilon_of_s(10, 2, 0.01, method="other")


def test_certification_request():
    cert = Certificate(kind="cost-bound", K=200, beta=0.01, level=0.0228)
    assert CertificationRequest(200, 0.01, 0.97).accepts(cert)
    assert not CertificationRequest(200, 0.01, 0.99).accepts(cert)
    with pytest.raises(ParameterError):
        CertificationRequest(0, 0.01, 0.9)
    with pytest.raises(ParameterError):
        Certificate(kind="other", K=1, beta=0.1, level=0.5)


def test_cost_bound_certificate():
    cert = certify_cost_bound([3.0, 7.5, 1.0], 0.05)
    assert cert.bound_value == 7.5 and cert.K == 3
    assert cert.level == theorem1_level(3, 0.05)
    assert cert.to_dict()["kind"] == "cost-bound"


def test_policy_certificate_refuses_violations():
    res = certify_policy_constraints([1.0, -1.0, 0.5, -2.0], lambda r: r, 0.1)
    assert isinstance(res, Refusal) and res.violating == (0, 2)
    ok = certify_policy_constraints([-1.0, -0.1], lambda r: r, 0.1)
    assert isinstance(ok, Certificate) and ok.level == theorem1_level(2, 0.1)
    with pytest.raises(ParameterError):
        certify_policy_constraints([-1.0], lambda r: r, 0.1, K=3)


def test_ocp_certificate_refusals():
    bad = SimpleNamespace(converged=False, feasible=True, residuals=np.zeros(10))
    assert isinstance(certify_ocp(bad, [1], 0.01), Refusal)
    good = SimpleNamespace(converged=True, feasible=True, residuals=np.zeros(3))
    assert isinstance(certify_ocp(good, [0, 1, 2], 0.01), Refusal)
    cert = certify_ocp(good, [1], 0.01, notes=("n",))
    assert cert.s == 1 and cert.level == epsilon_of_s(3, 1, 0.01) and cert.notes == ("n",)


def _toy_problem(offsets):
    """Scalar ``x+ = u``, ``y = x``, one constraint ``y_1 >= 1 - offset`` per scenario."""
    m = scalar_model(a=0.0, b=1.0)
    sc = [Scenario(model=m, x0=[0.0], process_noise=[[o], [0.0]], measurement_noise=[[0.0], [0.0]])
          for o in offsets]
    return ScenarioOCP(sc, QuadraticCost(), [OutputConstraint(0, 1, 1, lower=1.0)])


def test_greedy_support_finds_the_single_binding_scenario():
    p = _toy_problem([0.3, -0.2, 0.1, 0.0, 0.25])
    sol = solve(p)
    np.testing.assert_allclose(sol.u_star[0], 1.2, atol=1e-9)
    res = greedy_support(p, sol, solver_with(SolverConfig()))
    assert res.support == [1]
    assert res.deviation <= 1e-6
    assert [k for k, _, removed in res.probes if not removed] == [1]


def test_greedy_support_keeps_tied_scenario_last_visited():
    p = _toy_problem([0.0, 0.3, 0.0])
    res = greedy_support(p, solve(p), lambda q, initial=None: solve(q, initial=initial))
    assert res.support == [2]


def test_greedy_support_retries_worse_local_minimum_from_incumbent():
    incumbent = SimpleNamespace(u_star=np.zeros(2), objective=1.0, converged=True)
    calls = []

    class Problem:
        def __init__(self, active=(0, 1)):
            self.active = tuple(active)

        def active_indices(self):
            return self.active

        def with_active(self, idx):
            return Problem(idx)

    def solver(problem, initial=None):
        calls.append(initial is not None)
        if initial is None and len(problem.active) < 2:
            return SimpleNamespace(u_star=np.ones(2), objective=2.0, converged=True)
        return SimpleNamespace(u_star=np.zeros(2), objective=1.0, converged=True)

    res = greedy_support(Problem(), incumbent, solver)
    assert res.support == []
    assert any(calls)


def test_greedy_support_retries_failed_cold_start_from_incumbent():
    p = _toy_problem([0.0, 0.1])
    sol = solve(p)

    def solver(q, initial=None):
        if initial is None:
            return SimpleNamespace(u_star=sol.u_star + 1.0, objective=0.0, converged=False)
        return solve(q, initial=initial)

    res = greedy_support(p, sol, solver)
    assert res.support == [0] and res.deviation <= 1e-6


def test_greedy_support_reports_solver_failure():
    p = _toy_problem([0.0, 0.1])
    sol = solve(p)
    unconverged = lambda q, initial=None: SimpleNamespace(u_star=sol.u_star, objective=0.0,  # noqa: E731
                                                          converged=False)
    with pytest.raises(SolverError, match="probing scenario 0"):
        greedy_support(p, sol, unconverged)
