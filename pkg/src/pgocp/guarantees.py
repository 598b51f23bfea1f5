"""Probabilistic certificates from finitely many scenarios.

Two kinds of statements are produced:

* a-priori levels ``1 - beta**(1/K)`` for a cost bound or for the
  constraints of a control law that was designed without the samples;
* a-posteriori levels ``eps(s)`` for an OCP solution whose support set
  (the scenarios needed to reproduce it) has ``s`` elements.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln, logsumexp

from .errors import NumericalError, ParameterError, SolverError

log = logging.getLogger(__name__)

SAME_SOLUTION_TOL = 1e-6


@dataclass(frozen=True)
class CertificationRequest:
    K: int
    beta: float
    delta: float

    def __post_init__(self):
        if self.K < 1:
            raise ParameterError("K must be >= 1")
        if not 0 < self.beta < 1 or not 0 < self.delta < 1:
            raise ParameterError("beta and delta must lie in (0, 1)")

    def accepts(self, cert: "Certificate") -> bool:
        """True if the certified satisfaction probability ``1 - level`` reaches ``delta``."""
        return 1.0 - cert.level >= self.delta


@dataclass(frozen=True)
class Certificate:
    kind: str  # "cost-bound" | "policy-constraints" | "ocp-constraints"
    K: int
    beta: float
    level: float
    s: int | None = None
    bound_value: float | None = None
    notes: tuple = ()

    def __post_init__(self):
        if self.kind not in ("cost-bound", "policy-constraints", "ocp-constraints"):
            raise ParameterError(f"unknown certificate kind {self.kind!r}")
        if not 0 < self.level < 1:
            raise ParameterError(f"level must lie in (0, 1), got {self.level}")

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "K": self.K, "s": self.s, "beta": self.beta,
             "level": self.level}
        if self.bound_value is not None:
            d["bound_value"] = self.bound_value
        if self.notes:
            d["notes"] = list(self.notes)
        return d


@dataclass(frozen=True)
class Refusal:
    reason: str
    violating: tuple = ()

    def to_dict(self) -> dict:
        return {"refused": True, "reason": self.reason, "violating": list(self.violating)}


def _check_beta(beta):
    if not 0 < beta < 1:
        raise ParameterError(f"beta must lie in (0, 1), got {beta}")


def theorem1_level(K: int, beta: float) -> float:
    """``1 - beta**(1/K)``: bound on the probability that a scenario maximum is exceeded."""
    if K < 1:
        raise ParameterError("K must be >= 1")
    _check_beta(beta)
    return float(-np.expm1(np.log(beta) / K))


def certify_cost_bound(costs, beta) -> Certificate:
    costs = list(costs)
    if not costs:
        raise ParameterError("no costs to certify")
    return Certificate(kind="cost-bound", K=len(costs), beta=beta,
                       level=theorem1_level(len(costs), beta), bound_value=float(max(costs)))


def certify_policy_constraints(rollouts, h, beta, K=None):
    """Certificate if ``h(rollout) <= 0`` for every rollout, else a ``Refusal``.

    ``h`` maps a rollout result to a scalar; positive means violated. The
    rollouts must come from samples the control law was not designed on.
    """
    rollouts = list(rollouts)
    if K is not None and K != len(rollouts):
        raise ParameterError(f"K={K} but {len(rollouts)} rollouts were given")
    if not rollouts:
        raise ParameterError("no rollouts to certify")
    violating = tuple(i for i, r in enumerate(rollouts) if float(h(r)) > 0)
    if violating:
        return Refusal(reason="constraints violated in some scenarios", violating=violating)
    return Certificate(kind="policy-constraints", K=len(rollouts), beta=beta,
                       level=theorem1_level(len(rollouts), beta))


def _log_binom(n, k):
    return gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1)


def epsilon_log_residual(v, K, s, beta, method="two_sided") -> float:
    """``log(lhs) - log(rhs)`` of the defining polynomial at ``v``; zero at ``eps(s)``.

    ``one_sided``:  C(K,s)(1-v)^(K-s) = beta/K * sum_{m=s}^{K-1} C(m,s)(1-v)^(m-s)

    ``two_sided``:  C(K,s)(1-v)^(K-s) = beta/(2K) * sum_{m=s}^{K-1} C(m,s)(1-v)^(m-s)
                                      + beta/(6K) * sum_{m=K+1}^{4K} C(m,s)(1-v)^(m-s)
    """
    log_t = np.log1p(-v)
    lhs = _log_binom(K, s) + (K - s) * log_t
    m = np.arange(s, K)
    inner = logsumexp(_log_binom(m, s) + (m - s) * log_t)
    if method == "one_sided":
        rhs = np.log(beta / K) + inner
    elif method == "two_sided":
        m2 = np.arange(K + 1, 4 * K + 1)
        outer = logsumexp(_log_binom(m2, s) + (m2 - s) * log_t)
        rhs = np.logaddexp(np.log(beta / (2 * K)) + inner, np.log(beta / (6 * K)) + outer)
    else:
        raise ParameterError(f"unknown method {method!r}")
    return float(lhs - rhs)


def _scan_points():
    # dense near both ends: for small s the two-sided residual is positive only on a narrow band
    head = np.logspace(-12, -2, 101)
    body = np.linspace(0.01, 0.99, 99)
    tail = 1 - np.logspace(-2.05, -15, 131)
    return np.unique(np.concatenate([head, body, tail]))


def _bisect(f, lo, hi, f_lo, tol):
    # f(lo) has sign f_lo, f(hi) the opposite; shrink until hi - lo <= tol
    for _ in range(200):
        if hi - lo <= tol:
            break
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if fm == 0:
            return mid
        if (fm > 0) == (f_lo > 0):
            lo, f_lo = mid, fm
        else:
            hi = mid
    # pick the endpoint with the smaller residual
    return lo if abs(f(lo)) <= abs(f(hi)) else hi


def _root(K, s, beta, method, tol):
    f = lambda v: epsilon_log_residual(v, K, s, beta, method)  # noqa: E731
    pts = _scan_points()
    vals = np.array([f(v) for v in pts])
    # residual is positive for small v and negative near 1; take the largest crossing
    crossings = np.nonzero((vals[:-1] > 0) & (vals[1:] <= 0))[0]
    if len(crossings) == 0:
        raise NumericalError(
            f"eps(s) root not bracketed for K={K}, s={s}, beta={beta} ({method})")
    i = crossings[-1]
    return _bisect(f, pts[i], pts[i + 1], vals[i], tol)


def epsilon_of_s(K: int, s: int, beta: float, method: str = "two_sided",
                 tol: float = 1e-13) -> float:
    """Violation-probability level for a solution with ``s`` support scenarios out of ``K``.

    ``one_sided`` solves the single-sum polynomial; ``two_sided`` (default)
    solves the two-sum variant, whose root is never below the one-sided root,
    and the larger of the two is returned so the level stays conservative.
    The root is bracketed by a scan and refined by bisection in ``v``.
    """
    if not (isinstance(s, (int, np.integer)) and 0 <= s < K):
        raise ParameterError(f"need 0 <= s < K, got s={s}, K={K}")
    _check_beta(beta)
    one = _root(K, s, beta, "one_sided", tol)
    if method == "one_sided":
        return one
    if method != "two_sided":
        raise ParameterError(f"unknown method {method!r}")
    return max(one, _root(K, s, beta, "two_sided", tol))


def certify_ocp(solution, support, beta, notes=()):
    """Certificate for an OCP solution from its support set, or a ``Refusal``."""
    if not solution.converged or not solution.feasible:
        return Refusal(reason="solution is not a converged feasible OCP solution")
    K = len(solution.residuals)
    s = len(support)
    if s >= K:
        return Refusal(reason=f"support size {s} is not below K={K}")
    return Certificate(kind="ocp-constraints", K=K, beta=beta, s=s,
                       level=epsilon_of_s(K, s, beta), notes=tuple(notes))


@dataclass
class SupportResult:
    support: list
    verification: object = None
    deviation: float = float("nan")
    probes: list = field(default_factory=list)


def _resolve(solver, problem, incumbent, incumbent_objective):
    sol = solver(problem)
    # the incumbent is feasible for any relaxation, so a cold start that fails
    # or ends above its cost is retried from the incumbent
    worse = sol.objective > incumbent_objective + 1e-9 * (1 + abs(incumbent_objective))
    if not sol.converged or worse:
        warm = solver(problem, initial=incumbent)
        if warm.converged and (not sol.converged or warm.objective < sol.objective):
            sol = warm
    return sol


def greedy_support(problem, solution, solver, tol=SAME_SOLUTION_TOL) -> SupportResult:
    """Greedy support-set estimate.

    Scenarios are visited in index order. Each one is tentatively dropped
    from the active constraint set and the problem re-solved; if the result
    matches the incumbent within ``tol`` (max-norm) it stays dropped. The
    objective always averages over all scenarios. ``solver(problem, initial=None)``
    must return an object with ``u_star``, ``objective`` and ``converged``.

    The problem may be non-convex. When the cold-start re-solve fails or ends
    at a higher cost than the incumbent, the incumbent (which stays feasible)
    is used as a warm start and the better of the two results is compared.
    """
    active = list(problem.active_indices())
    incumbent = np.asarray(solution.u_star)
    obj = float(solution.objective)
    probes = []
    for k in list(active):
        trial = [i for i in active if i != k]
        try:
            sol = _resolve(solver, problem.with_active(trial), incumbent, obj)
        except Exception as exc:
            raise SolverError(
                f"solver failed while probing scenario {k}; support so far {active}: {exc}") from exc
        if not sol.converged:
            raise SolverError(
                f"solver did not converge while probing scenario {k}; support so far {active}")
        dev = float(np.max(np.abs(np.asarray(sol.u_star) - incumbent)))
        removed = dev <= tol
        probes.append((k, dev, removed))
        log.info("support probe %d: deviation %.3e -> %s", k, dev, "removed" if removed else "kept")
        if removed:
            active = trial
    check = _resolve(solver, problem.with_active(active), incumbent, obj)
    dev = float(np.max(np.abs(np.asarray(check.u_star) - incumbent)))
    return SupportResult(support=active, verification=check, deviation=dev, probes=probes)
