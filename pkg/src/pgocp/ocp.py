"""Scenario optimal control: sample-average cost, per-scenario output constraints.

Every scenario/time output bound is an individual inequality. The solver is
SLSQP with exact first derivatives (adjoint gradient, forward output
sensitivities), followed by Newton iterations on the KKT equations of the
detected active set to push the residual toward machine precision. It starts from a fixed guess and processes scenarios
in a canonical order (sorted by content hash), so the returned input sequence
is a deterministic, permutation-invariant function of the scenario set.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from scipy.optimize import minimize, nnls

from .errors import ParameterError
from .scenario import QuadraticCost, ScenarioBatch, _as_input_sequence

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class OutputConstraint:
    """``lower <= y_t[component] <= upper`` for ``t_start <= t <= t_end`` (0-based component)."""

    component: int
    t_start: int
    t_end: int
    lower: float | None = None
    upper: float | None = None

    def __post_init__(self):
        if self.lower is None and self.upper is None:
            raise ParameterError("output constraint needs a lower or an upper bound")
        if not 0 <= self.t_start <= self.t_end:
            raise ParameterError("constraint window must satisfy 0 <= t_start <= t_end")


@dataclass(frozen=True)
class InputBounds:
    lower: float = -np.inf
    upper: float = np.inf

    def __post_init__(self):
        if np.any(np.asarray(self.lower) > np.asarray(self.upper)):
            raise ParameterError("input lower bound exceeds upper bound")


@dataclass(frozen=True)
class SolverConfig:
    max_iter: int = 500
    ftol: float = 1e-14
    stationarity_tol: float = 1e-7
    constraint_tol: float = 1e-8
    active_tol: float = 1e-7
    polish_iterations: int = 4
    initial_guess: float = 0.0
    regularization: float = 1e-8

    def __post_init__(self):
        if min(self.stationarity_tol, self.constraint_tol, self.ftol, self.active_tol) <= 0:
            raise ParameterError("tolerances must be positive")
        if self.max_iter < 1 or self.polish_iterations < 0:
            raise ParameterError("max_iter must be >= 1 and polish_iterations >= 0")


@dataclass
class Solution:
    u_star: np.ndarray
    objective: float
    residuals: np.ndarray  # max constraint value per scenario (<= 0 means satisfied)
    kkt_residual: float
    converged: bool
    feasible: bool
    multipliers: np.ndarray = None
    iterations: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"u_star": self.u_star.tolist(), "objective": self.objective,
                "residuals": self.residuals.tolist(), "kkt_residual": self.kkt_residual,
                "converged": self.converged, "feasible": self.feasible,
                "iterations": self.iterations}


class ScenarioOCP:
    """Decision variables ``u_0..u_H`` shared by all scenarios.

    ``active`` restricts which scenarios' output constraints are enforced;
    the objective always averages over every scenario.
    """

    def __init__(self, scenarios, cost=None, output_constraints=(), input_bounds=None,
                 horizon=None, active=None):
        self.scenarios = list(scenarios)
        if not self.scenarios:
            raise ParameterError("a scenario OCP needs at least one scenario")
        self.horizon = self.scenarios[0].horizon if horizon is None else int(horizon)
        if any(s.horizon != self.horizon for s in self.scenarios):
            raise ParameterError("scenario noise length does not match the horizon")
        self.cost = cost if cost is not None else QuadraticCost()
        self.output_constraints = tuple(output_constraints)
        for c in self.output_constraints:
            if c.t_end > self.horizon:
                raise ParameterError("constraint window extends beyond the horizon")
            if not 0 <= c.component < self.scenarios[0].model.n_y:
                raise ParameterError("constraint component out of range")
        self.input_bounds = input_bounds if input_bounds is not None else InputBounds()
        K = len(self.scenarios)
        if active is None:
            active = range(K)
        self.active = tuple(sorted(set(int(i) for i in active)))
        if self.active and not (0 <= self.active[0] and self.active[-1] < K):
            raise ParameterError("active index out of range")
        self.n_u = self.scenarios[0].model.n_u
        self._compiled = None

    def __len__(self):
        return len(self.scenarios)

    def active_indices(self):
        return self.active

    def with_active(self, indices) -> "ScenarioOCP":
        out = ScenarioOCP(self.scenarios, self.cost, self.output_constraints,
                          self.input_bounds, self.horizon, active=indices)
        out._compiled = self._compiled
        return out

    def with_scenarios(self, scenarios) -> "ScenarioOCP":
        return ScenarioOCP(scenarios, self.cost, self.output_constraints,
                           self.input_bounds, self.horizon)

    def compiled(self) -> "_Compiled":
        if self._compiled is None:
            self._compiled = _Compiled(self)
        return self._compiled

    def box(self):
        n = (self.horizon + 1) * self.n_u
        lo = np.broadcast_to(np.asarray(self.input_bounds.lower, dtype=float), (n,)).copy()
        hi = np.broadcast_to(np.asarray(self.input_bounds.upper, dtype=float), (n,)).copy()
        return lo, hi


class _Compiled:
    """Scenario batch in canonical order plus the constraint selector."""

    def __init__(self, problem: ScenarioOCP):
        hashes = [s.content_hash() for s in problem.scenarios]
        self.order = np.array(sorted(range(len(hashes)), key=lambda i: (hashes[i], i)))
        self.batch = ScenarioBatch([problem.scenarios[i] for i in self.order])
        n_y, H = self.batch.n_y, problem.horizon
        idx, sign, bound = [], [], []
        for c in problem.output_constraints:
            for t in range(c.t_start, c.t_end + 1):
                flat = t * n_y + c.component
                if c.lower is not None:
                    idx.append(flat), sign.append(-1.0), bound.append(c.lower)
                if c.upper is not None:
                    idx.append(flat), sign.append(1.0), bound.append(c.upper)
        self.idx = np.array(idx, dtype=int)
        self.sign = np.array(sign)
        self.bound = np.array(bound)
        self.scatter = np.zeros((len(idx), (H + 1) * n_y))
        self.scatter[np.arange(len(idx)), self.idx] = self.sign

    @property
    def n_rows(self):
        return len(self.idx)

    def constraint_values(self, y):
        """``g <= 0`` form, shape ``(K, rows)`` in canonical order."""
        yf = y.reshape(len(y), -1)
        return self.sign * (yf[:, self.idx] - self.bound)


def _per_scenario(problem, u):
    comp = problem.compiled()
    u = _as_input_sequence(u, problem.horizon, problem.n_u)
    x, y = comp.batch.rollout(u)
    return comp, u, x, y


def objective(problem: ScenarioOCP, u) -> float:
    """Sample-average cost over all scenarios."""
    comp, u, x, y = _per_scenario(problem, u)
    return float(np.mean(problem.cost.total(u, y)))


def objective_gradient(problem: ScenarioOCP, u) -> np.ndarray:
    """Exact gradient of ``objective`` by a reverse-time adjoint sweep, flattened."""
    comp, u, x, y = _per_scenario(problem, u)
    K = len(comp.batch)
    gu, gy = problem.cost.gradients(u, y)
    grad = comp.batch.adjoint(u, x, gy / K, gu / K)
    return grad.sum(axis=0).ravel()


def _project(z, lo, hi):
    return np.minimum(np.maximum(z, lo), hi)


class _Evaluator:
    """Objective, constraints and their derivatives over the active scenarios, with a one-point cache."""

    def __init__(self, problem: ScenarioOCP, regularization):
        self.problem = problem
        self.comp = comp = problem.compiled()
        self.batch, self.cost = comp.batch, problem.cost
        self.K, self.shape = len(comp.batch), (problem.horizon + 1, problem.n_u)
        self.reg = regularization
        active = np.isin(comp.order, problem.active)
        # flat rows of the (K, rows) constraint array that are enforced
        self.rows = np.nonzero(np.repeat(active, comp.n_rows))[0]
        self._key = None

    def _eval(self, z):
        key = z.tobytes()
        if key != self._key:
            u = z.reshape(self.shape)
            x, y = self.batch.rollout(u)
            self._x, self._y, self._key, self._jac = x, y, key, None
        return self._x, self._y

    def f(self, z):
        _, y = self._eval(z)
        return float(np.mean(self.cost.total(z.reshape(self.shape), y))) + self.reg * float(z @ z)

    def grad_f(self, z):
        return self.grad_lagrangian(z, None)

    def g(self, z):
        """Enforced constraint values, ``<= 0`` when satisfied."""
        _, y = self._eval(z)
        return self.comp.constraint_values(y).ravel()[self.rows]

    def jac_g(self, z):
        x, _ = self._eval(z)
        if self._jac is None:
            Jy = self.batch.output_jacobian(z.reshape(self.shape), x)
            comp = self.comp
            G = comp.sign[None, :, None] * Jy[:, comp.idx, :]
            self._jac = G.reshape(-1, z.size)[self.rows]
        return self._jac

    def grad_lagrangian(self, z, mu):
        """Gradient of ``f + mu . g`` by one adjoint sweep (``mu=None`` gives ``grad f``)."""
        x, y = self._eval(z)
        u = z.reshape(self.shape)
        gu, gy = self.cost.gradients(u, y)
        gy = gy / self.K
        if mu is not None and len(mu):
            full = np.zeros(self.K * self.comp.n_rows)
            full[self.rows] = mu
            gy = gy + (full.reshape(self.K, -1) @ self.comp.scatter).reshape(gy.shape)
        grad = self.batch.adjoint(u, x, gy, gu / self.K).sum(axis=0).ravel()
        return grad + 2 * self.reg * z

    def hessian_lagrangian(self, z, mu, h=1e-5):
        n = z.size
        W = np.empty((n, n))
        for i in range(n):
            e = np.zeros(n)
            e[i] = h
            W[:, i] = (self.grad_lagrangian(z + e, mu) - self.grad_lagrangian(z - e, mu)) / (2 * h)
        return 0.5 * (W + W.T)


def _free(z, lo, hi, tol):
    # coordinates within tol of a bound are treated as held by that bound
    return (z > lo + tol) & (z < hi - tol)


def _multipliers(ev, z, lo, hi, active_tol):
    """Nonnegative least-squares multipliers of the nearly active constraints."""
    g = ev.g(z)
    act = np.nonzero(g >= -active_tol)[0]
    grad = ev.grad_f(z)
    free = _free(z, lo, hi, active_tol)
    mu = np.zeros(len(g))
    if len(act) and np.any(free):
        mu[act] = nnls(-ev.jac_g(z)[act][:, free].T, grad[free], maxiter=50 * len(act))[0]
    return mu


def _kkt_residual(ev, z, mu, lo, hi):
    """Projected stationarity of the Lagrangian plus complementarity."""
    r = ev.grad_f(z)
    if len(mu):
        r = r + ev.jac_g(z).T @ mu
        compl = float(np.max(np.abs(mu * ev.g(z))))
    else:
        compl = 0.0
    return max(float(np.max(np.abs(z - _project(z - r, lo, hi)))), compl)


def _polish(ev, z, mu, lo, hi, config):
    """Newton iterations on the KKT equations of the current active set."""
    g = ev.g(z)
    act = np.nonzero((g >= -config.active_tol) & (mu > 0))[0] if len(g) else np.array([], int)
    free = _free(z, lo, hi, config.active_tol)
    z, mu = z.copy(), mu.copy()
    for _ in range(config.polish_iterations):
        W = ev.hessian_lagrangian(z, mu)[np.ix_(free, free)]
        Ga = ev.jac_g(z)[act][:, free] if len(act) else np.zeros((0, int(free.sum())))
        na = len(act)
        M = np.block([[W, Ga.T], [Ga, np.zeros((na, na))]])
        rhs = -np.concatenate([ev.grad_f(z)[free], ev.g(z)[act] if na else []])
        sol = np.linalg.lstsq(M, rhs, rcond=1e-12)[0]
        step = sol[: free.sum()]
        z[free] += step
        mu[:] = 0.0
        mu[act] = sol[free.sum():]
        if np.max(np.abs(step), initial=0.0) <= 1e-13:
            break
    return z, mu


def solve(problem: ScenarioOCP, config: SolverConfig = SolverConfig(), initial=None) -> Solution:
    """SLSQP from the fixed initial guess (or ``initial``), then a Newton polish on the active set.

    The polished point replaces the SLSQP point only if it stays inside the
    box, keeps every enforced constraint within ``constraint_tol``, has
    nonnegative multipliers and a smaller KKT residual.
    """
    ev = _Evaluator(problem, config.regularization)
    comp, shape, K = ev.comp, ev.shape, ev.K
    lo, hi = problem.box()
    if initial is None:
        z0 = np.full(shape[0] * shape[1], float(config.initial_guess))
    else:
        z0 = _as_input_sequence(initial, problem.horizon, problem.n_u).ravel()
    z0 = _project(z0, lo, hi)
    constraints = []
    if len(ev.rows):
        constraints = [{"type": "ineq", "fun": lambda z: -ev.g(z), "jac": lambda z: -ev.jac_g(z)}]
    bounds = list(zip(np.where(np.isfinite(lo), lo, None), np.where(np.isfinite(hi), hi, None)))
    with warnings.catch_warnings():
        # SLSQP clips its own trial points to the box; the result is projected anyway
        warnings.filterwarnings("ignore", "Values in x were outside bounds", RuntimeWarning)
        res = minimize(ev.f, z0, jac=ev.grad_f, method="SLSQP", bounds=bounds,
                       constraints=constraints,
                       options={"ftol": config.ftol, "maxiter": config.max_iter})
    z = _project(res.x, lo, hi)
    mu = _multipliers(ev, z, lo, hi, config.active_tol)
    kkt = _kkt_residual(ev, z, mu, lo, hi)
    log.debug("SLSQP: %s after %d iterations, kkt %.2e", res.message, res.nit, kkt)

    if config.polish_iterations and kkt > 0:
        zp, mup = _polish(ev, z, mu, lo, hi, config)
        ok = (np.all(zp >= lo) and np.all(zp <= hi) and np.all(mup >= -config.constraint_tol)
              and (not len(ev.rows) or np.max(ev.g(zp)) <= config.constraint_tol))
        if ok:
            mup = np.maximum(mup, 0.0)
            kkt_p = _kkt_residual(ev, zp, mup, lo, hi)
            log.debug("polish: kkt %.2e -> %.2e, step %.2e",
                      kkt, kkt_p, float(np.max(np.abs(zp - z))))
            if kkt_p < kkt:
                z, mu, kkt = zp, mup, kkt_p

    u_star = z.reshape(shape)
    _, y = ev._eval(z)
    g = comp.constraint_values(y)
    per = np.max(g, axis=1) if comp.n_rows else np.full(K, -np.inf)
    residuals = np.empty(K)
    residuals[comp.order] = per
    full = np.zeros(K * comp.n_rows)
    full[ev.rows] = mu
    multipliers = np.empty((K, comp.n_rows))
    multipliers[comp.order] = full.reshape(K, -1)
    enforced = np.isin(np.arange(K), problem.active)
    viol = float(np.max(np.maximum(residuals[enforced], 0.0), initial=0.0))
    feasible = viol <= config.constraint_tol
    history = [{"slsqp_status": int(res.status), "slsqp_message": str(res.message),
                "slsqp_iterations": int(res.nit), "kkt_residual": kkt, "violation": viol}]
    return Solution(u_star=u_star, objective=float(np.mean(problem.cost.total(u_star, y))),
                    residuals=residuals, kkt_residual=kkt,
                    converged=feasible and kkt <= config.stationarity_tol, feasible=feasible,
                    multipliers=multipliers, iterations=history)


def scenario_violations(problem: ScenarioOCP, u, tol=0.0) -> np.ndarray:
    """Boolean per scenario (original order): does ``u`` violate its output constraints?"""
    comp = problem.compiled()
    _, y = comp.batch.rollout(_as_input_sequence(u, problem.horizon, problem.n_u))
    g = comp.constraint_values(y)
    bad = np.any(g > tol, axis=1) if comp.n_rows else np.zeros(len(y), dtype=bool)
    out = np.empty(len(bad), dtype=bool)
    out[comp.order] = bad
    return out


def constraint_margin(outputs, constraints) -> float:
    """Largest constraint value ``g`` of one output trajectory ``(H+1, n_y)``; ``<= 0`` means satisfied."""
    y = np.asarray(outputs, dtype=float)
    worst = -np.inf
    for c in constraints:
        seg = y[c.t_start:c.t_end + 1, c.component]
        if c.lower is not None:
            worst = max(worst, float(np.max(c.lower - seg)))
        if c.upper is not None:
            worst = max(worst, float(np.max(seg - c.upper)))
    return worst


def solver_with(config: SolverConfig):
    """``(problem, initial=None) -> Solution`` closure, the shape ``greedy_support`` expects."""
    return lambda problem, initial=None: solve(problem, config, initial)


__all__ = ["OutputConstraint", "InputBounds", "SolverConfig", "Solution", "ScenarioOCP",
           "objective", "objective_gradient", "solve", "scenario_violations", "solver_with",
           "constraint_margin"]
