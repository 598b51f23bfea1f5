"""Forward simulation of posterior samples as frozen scenarios.

Noise for every scenario is drawn once, so a rollout is a deterministic
function of (scenario, inputs) or (scenario, control law).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DivergenceError, ParameterError
from .model import Dataset, Scenario, covariance_factor

DIVERGENCE_LIMIT = 1e9


@dataclass(frozen=True, eq=False)
class RolloutResult:
    inputs: np.ndarray   # (H+1, n_u)
    outputs: np.ndarray  # (H+1, n_y)
    states: np.ndarray   # (H+2, n_x)
    cost: float


@dataclass(frozen=True)
class QuadraticCost:
    """Stage cost ``wu |u|^2 + wy |y - r|^2`` and terminal cost ``wH |y_H - r|^2``."""

    input_weight: float = 1.0
    output_weight: float = 0.0
    output_reference: float = 0.0
    terminal_weight: float = 0.0

    def stage(self, u, y):
        u, y = np.asarray(u, dtype=float), np.asarray(y, dtype=float)
        return (self.input_weight * np.sum(u**2, axis=-1)
                + self.output_weight * np.sum((y - self.output_reference) ** 2, axis=-1))

    def terminal(self, y):
        y = np.asarray(y, dtype=float)
        return self.terminal_weight * np.sum((y - self.output_reference) ** 2, axis=-1)

    def total(self, u, y):
        """``J_H`` for inputs ``(H+1, n_u)`` and outputs ``(..., H+1, n_y)``."""
        return self.terminal(y[..., -1, :]) + np.sum(self.stage(u, y), axis=-1)

    def gradients(self, u, y):
        """Partial derivatives of ``total`` w.r.t. ``u`` (per trajectory) and ``y``."""
        u, y = np.asarray(u, dtype=float), np.asarray(y, dtype=float)
        gu = 2 * self.input_weight * np.broadcast_to(u, y.shape[:-2] + u.shape)
        gy = 2 * self.output_weight * (y - self.output_reference)
        gy[..., -1, :] += 2 * self.terminal_weight * (y[..., -1, :] - self.output_reference)
        return gu, gy

    def to_dict(self):
        return {"input_weight": self.input_weight, "output_weight": self.output_weight,
                "output_reference": self.output_reference,
                "terminal_weight": self.terminal_weight}


ControlLaw = Callable[[np.ndarray, np.ndarray, int], np.ndarray]


def constant_policy(value) -> ControlLaw:
    value = np.atleast_1d(np.asarray(value, dtype=float))
    return lambda u_hist, y_hist, t: value


def open_loop_policy(inputs) -> ControlLaw:
    seq = np.asarray(inputs, dtype=float)
    if seq.ndim == 1:
        seq = seq[:, None]
    return lambda u_hist, y_hist, t: seq[t]


def output_feedback_policy(gain, offset=0.0) -> ControlLaw:
    """``u_t = offset + gain * y_{t-1}`` using the most recent output."""
    gain = np.atleast_2d(np.asarray(gain, dtype=float))
    offset = np.atleast_1d(np.asarray(offset, dtype=float))
    return lambda u_hist, y_hist, t: offset + gain @ y_hist[-1]


def draw_scenarios(samples, dataset: Dataset, horizon: int, rng) -> list:
    """Freeze one scenario per posterior sample.

    For each sample the noise ``v_t, w_t`` for ``t = -1..H`` is drawn in one
    block; ``v_{-1}`` moves the sample's last latent state to ``x_0`` and
    ``w_{-1}`` is unused.
    """
    if len(samples) == 0:
        raise ParameterError("no posterior samples")
    if horizon < 0:
        raise ParameterError("horizon must be non-negative")
    u_last = dataset.inputs[-1]
    out = []
    for model, traj in zip(samples.models, samples.trajectories):
        Fq = covariance_factor(model.Q)
        Fr = covariance_factor(model.obs.R)
        v = rng.standard_normal((horizon + 2, model.n_x)) @ Fq.T
        w = rng.standard_normal((horizon + 2, model.n_y)) @ Fr.T
        x0 = model.basis(traj.last, u_last) @ model.A.T + v[0]
        out.append(Scenario(model=model, x0=x0, process_noise=v[1:], measurement_noise=w[1:]))
    return out


def _as_input_sequence(u, horizon, n_u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if u.ndim == 1:
        u = u.reshape(-1, n_u)
    if u.shape != (horizon + 1, n_u):
        raise ParameterError(f"input sequence must have shape {(horizon + 1, n_u)}, got {u.shape}")
    return u


def _check_state(x, t, scenario=None):
    if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > DIVERGENCE_LIMIT:
        raise DivergenceError(t, scenario)


def rollout_inputs(scenario: Scenario, u, cost: QuadraticCost) -> RolloutResult:
    model = scenario.model
    H = scenario.horizon
    u = _as_input_sequence(u, H, model.n_u)
    x = np.empty((H + 2, model.n_x))
    y = np.empty((H + 1, model.n_y))
    x[0] = scenario.x0
    for t in range(H + 1):
        y[t] = model.obs.mean(x[t], u[t]) + scenario.measurement_noise[t]
        x[t + 1] = model.basis(x[t], u[t]) @ model.A.T + scenario.process_noise[t]
        _check_state(x[t + 1], t + 1)
    return RolloutResult(inputs=u, outputs=y, states=x, cost=float(cost.total(u, y)))


def rollout_policy(scenario: Scenario, policy: ControlLaw, dataset: Dataset,
                   cost: QuadraticCost) -> RolloutResult:
    """Closed-loop rollout; ``policy`` sees the data window plus simulated history."""
    model = scenario.model
    H = scenario.horizon
    n = len(dataset)
    u_hist = np.concatenate([dataset.inputs, np.zeros((H + 1, model.n_u))])
    y_hist = np.concatenate([dataset.outputs, np.zeros((H + 1, model.n_y))])
    x = np.empty((H + 2, model.n_x))
    x[0] = scenario.x0
    for t in range(H + 1):
        ut = np.atleast_1d(np.asarray(policy(u_hist[: n + t], y_hist[: n + t], t), dtype=float))
        if ut.shape != (model.n_u,):
            raise ParameterError(f"policy returned shape {ut.shape}, expected {(model.n_u,)}")
        u_hist[n + t] = ut
        y_hist[n + t] = model.obs.mean(x[t], ut) + scenario.measurement_noise[t]
        x[t + 1] = model.basis(x[t], ut) @ model.A.T + scenario.process_noise[t]
        _check_state(x[t + 1], t + 1)
    u, y = u_hist[n:], y_hist[n:]
    return RolloutResult(inputs=u, outputs=y, states=x, cost=float(cost.total(u, y)))


def max_cost(costs) -> float:
    costs = list(costs)
    if not costs:
        raise ParameterError("max_cost of an empty list")
    return float(max(costs))


class ScenarioBatch:
    """Stacked scenarios sharing one basis and observation model, rolled out together."""

    def __init__(self, scenarios):
        if not scenarios:
            raise ParameterError("empty scenario list")
        first = scenarios[0].model
        self.basis, self.obs = first.basis, first.obs
        for s in scenarios:
            if s.model.basis is not self.basis and s.model.basis.to_dict() != self.basis.to_dict():
                raise ParameterError("all scenarios must share one basis")
        self.horizon = scenarios[0].horizon
        if any(s.horizon != self.horizon for s in scenarios):
            raise ParameterError("all scenarios must share one horizon")
        self.A = np.stack([s.model.A for s in scenarios])
        self.x0 = np.stack([s.x0 for s in scenarios])
        self.V = np.stack([s.process_noise for s in scenarios])
        self.W = np.stack([s.measurement_noise for s in scenarios])
        self.n_x, self.n_u, self.n_y = first.n_x, first.n_u, first.n_y

    def __len__(self):
        return len(self.A)

    def rollout(self, u):
        """States ``(K, H+2, n_x)`` and outputs ``(K, H+1, n_y)`` for shared inputs ``u``."""
        H, K = self.horizon, len(self)
        u = _as_input_sequence(u, H, self.n_u)
        x = np.empty((K, H + 2, self.n_x))
        y = np.empty((K, H + 1, self.n_y))
        x[:, 0] = self.x0
        for t in range(H + 1):
            ut = np.broadcast_to(u[t], (K, self.n_u))
            y[:, t] = self.obs.mean(x[:, t], ut) + self.W[:, t]
            phi = self.basis(x[:, t], ut)
            x[:, t + 1] = np.einsum("kia,ka->ki", self.A, phi) + self.V[:, t]
            bad = ~np.all(np.isfinite(x[:, t + 1]), axis=1) | (
                np.max(np.abs(x[:, t + 1]), axis=1) > DIVERGENCE_LIMIT)
            if np.any(bad):
                raise DivergenceError(t + 1, int(np.argmax(bad)))
        return x, y

    def output_jacobian(self, u, x):
        """``d y / d u`` by forward sensitivities, shape ``(K, (H+1) n_y, (H+1) n_u)``."""
        H, K = self.horizon, len(self)
        u = _as_input_sequence(u, H, self.n_u)
        n = (H + 1) * self.n_u
        S = np.zeros((K, self.n_x, n))
        Jy = np.zeros((K, H + 1, self.n_y, n))
        for t in range(H + 1):
            ut = np.broadcast_to(u[t], (K, self.n_u))
            cols = slice(t * self.n_u, (t + 1) * self.n_u)
            Gx = self.obs.jacobian_x(x[:, t], ut)
            Gu = self.obs.jacobian_u(x[:, t], ut)
            Jy[:, t] = np.einsum("yx,kxn->kyn", Gx, S)
            Jy[:, t, :, cols] += Gu
            Fx = np.einsum("kia,kax->kix", self.A, self.basis.jacobian_x(x[:, t], ut))
            Fu = np.einsum("kia,kan->kin", self.A, self.basis.jacobian_u(x[:, t], ut))
            S = np.einsum("kij,kjn->kin", Fx, S)
            S[:, :, cols] += Fu
        return Jy.reshape(K, (H + 1) * self.n_y, n)

    def adjoint(self, u, x, gy, gu):
        """Gradient of a loss w.r.t. ``u`` given its partials ``gy`` (K, H+1, n_y) and ``gu`` (K, H+1, n_u).

        Reverse sweep: ``lam_t = Gx^T gy_t + (A Jx_t)^T lam_{t+1}``, ``lam_{H+1} = 0``.
        Returns per-scenario gradients ``(K, H+1, n_u)``.
        """
        H, K = self.horizon, len(self)
        u = _as_input_sequence(u, H, self.n_u)
        grad = np.array(gu, dtype=float, copy=True)
        lam = np.zeros((K, self.n_x))
        for t in range(H, -1, -1):
            ut = np.broadcast_to(u[t], (K, self.n_u))
            Jx = self.basis.jacobian_x(x[:, t], ut)
            Ju = self.basis.jacobian_u(x[:, t], ut)
            Gx = self.obs.jacobian_x(x[:, t], ut)
            Gu = self.obs.jacobian_u(x[:, t], ut)
            Alam = np.einsum("kia,ki->ka", self.A, lam)
            grad[:, t] += gy[:, t] @ Gu + np.einsum("kan,ka->kn", Ju, Alam)
            lam = gy[:, t] @ Gx + np.einsum("kax,ka->kx", Jx, Alam)
        return grad
