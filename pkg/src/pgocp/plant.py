"""The two-state benchmark plant used to generate data and validate inputs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import Dataset, covariance_factor, make_rng

TRUE_PROCESS_COV = ((0.03, -0.004), (-0.004, 0.01))


def plant_transition(x, u):
    """Noise-free true dynamics; ``x`` (..., 2), ``u`` (..., 1)."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    x1, x2, u1 = x[..., 0], x[..., 1], u[..., 0]
    return np.stack([0.8 * x1 - 0.5 * x2 + 0.1 * np.cos(3 * x1) * x2,
                     0.4 * x1 + 0.5 * x2 + (1 + 0.3 * np.sin(2 * x2)) * u1], axis=-1)


def true_coefficients() -> np.ndarray:
    """Coefficients reproducing the plant in the ``known_v5`` basis."""
    return np.array([[0.8, -0.5, 0.0, 0.1, 0.0],
                     [0.4, 0.5, 1.0, 0.0, 0.3]])


@dataclass(frozen=True)
class PlantConfig:
    n_data: int = 2000
    input_variance: float = 3.0
    x_start_mean: tuple = (2.0, 2.0)
    x_start_var: float = 0.5
    process_cov: tuple = TRUE_PROCESS_COV
    measurement_var: float = 0.1
    noise_free: bool = False
    constant_input: float | None = None
    x_start: tuple | None = None  # fixes the first state instead of sampling it


@dataclass(frozen=True)
class TruePlant:
    process_cov: np.ndarray
    measurement_var: float

    @classmethod
    def from_config(cls, cfg: PlantConfig) -> "TruePlant":
        if cfg.noise_free:
            return cls(np.zeros((2, 2)), 0.0)
        return cls(np.asarray(cfg.process_cov, dtype=float), float(cfg.measurement_var))

    def rollout(self, x_prev, u_prev, inputs, rng):
        """Continue from ``(x_{-1}, u_{-1})`` under ``inputs`` (H+1, 1); returns ``(x, y)``."""
        inputs = np.asarray(inputs, dtype=float).reshape(-1, 1)
        Fq = covariance_factor(self.process_cov)
        sw = np.sqrt(self.measurement_var)
        n = len(inputs)
        x = np.empty((n + 1, 2))
        y = np.empty((n, 1))
        x[0] = plant_transition(x_prev, u_prev) + Fq @ rng.standard_normal(2)
        for t in range(n):
            y[t] = x[t, 0] + sw * rng.standard_normal()
            x[t + 1] = plant_transition(x[t], inputs[t]) + Fq @ rng.standard_normal(2)
        return x, y


def simulate_plant_states(config: PlantConfig, rng):
    """Simulated data window plus the latent states that produced it."""
    plant = TruePlant.from_config(config)
    n = config.n_data
    Fq = covariance_factor(plant.process_cov)
    sw = np.sqrt(plant.measurement_var)
    if config.constant_input is None:
        u = np.sqrt(config.input_variance) * rng.standard_normal((n, 1))
    else:
        u = np.full((n, 1), float(config.constant_input))
    x = np.empty((n, 2))
    if config.x_start is not None:
        x[0] = config.x_start
    else:
        x[0] = np.asarray(config.x_start_mean) + np.sqrt(config.x_start_var) * rng.standard_normal(2)
    y = np.empty((n, 1))
    for t in range(n):
        y[t] = x[t, 0] + sw * rng.standard_normal()
        if t + 1 < n:
            x[t + 1] = plant_transition(x[t], u[t]) + Fq @ rng.standard_normal(2)
    return Dataset(inputs=u, outputs=y), x


def simulate_plant(config: PlantConfig, rng=None) -> Dataset:
    """Input/output data only; the latent states are discarded."""
    rng = make_rng(0) if rng is None else rng
    return simulate_plant_states(config, rng)[0]
