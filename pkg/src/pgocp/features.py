"""Basis-function evaluators with analytic Jacobians.

Every evaluator maps batched ``x`` of shape ``(..., n_x)`` and ``u`` of shape
``(..., n_u)`` to ``(..., n_a)``; the Jacobians return ``(..., n_a, n_x)`` and
``(..., n_a, n_u)``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError


class KnownBasisV5:
    """``[x1, x2, u, cos(3 x1) x2, sin(2 x2) u]``."""

    basis_id = "known_v5"
    n_x, n_u, n_a = 2, 1, 5

    def __call__(self, x, u):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        x1, x2, u1 = x[..., 0], x[..., 1], u[..., 0]
        x1, x2, u1 = np.broadcast_arrays(x1, x2, u1)
        return np.stack(
            [x1, x2, u1, np.cos(3 * x1) * x2, np.sin(2 * x2) * u1], axis=-1)

    def jacobian_x(self, x, u):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        x1, x2, u1 = np.broadcast_arrays(x[..., 0], x[..., 1], u[..., 0])
        J = np.zeros(x1.shape + (5, 2))
        J[..., 0, 0] = 1.0
        J[..., 1, 1] = 1.0
        J[..., 3, 0] = -3 * np.sin(3 * x1) * x2
        J[..., 3, 1] = np.cos(3 * x1)
        J[..., 4, 1] = 2 * np.cos(2 * x2) * u1
        return J

    def jacobian_u(self, x, u):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        x2, _ = np.broadcast_arrays(x[..., 1], u[..., 0])
        J = np.zeros(x2.shape + (5, 1))
        J[..., 2, 0] = 1.0
        J[..., 4, 0] = np.sin(2 * x2)
        return J

    def to_dict(self):
        return {"type": self.basis_id}


def known_basis_v5() -> KnownBasisV5:
    return KnownBasisV5()


class LinearBasis:
    """``phi(x, u) = [x, u]`` -- turns the model into a linear-Gaussian system."""

    basis_id = "linear"

    def __init__(self, n_x, n_u):
        self.n_x, self.n_u = int(n_x), int(n_u)
        self.n_a = self.n_x + self.n_u

    def __call__(self, x, u):
        x, u = np.asarray(x, dtype=float), np.asarray(u, dtype=float)
        shape = np.broadcast_shapes(x.shape[:-1], u.shape[:-1])
        return np.concatenate(
            [np.broadcast_to(x, shape + (self.n_x,)),
             np.broadcast_to(u, shape + (self.n_u,))], axis=-1)

    def jacobian_x(self, x, u):
        shape = np.broadcast_shapes(np.shape(x)[:-1], np.shape(u)[:-1])
        J = np.zeros(shape + (self.n_a, self.n_x))
        J[..., : self.n_x, :] = np.eye(self.n_x)
        return J

    def jacobian_u(self, x, u):
        shape = np.broadcast_shapes(np.shape(x)[:-1], np.shape(u)[:-1])
        J = np.zeros(shape + (self.n_a, self.n_u))
        J[..., self.n_x:, :] = np.eye(self.n_u)
        return J

    def to_dict(self):
        return {"type": self.basis_id, "n_x": self.n_x, "n_u": self.n_u}


@dataclass(frozen=True)
class ReducedRankGPConfig:
    """Squared-exponential GP approximated on a box of Laplacian eigenfunctions.

    Defaults are the values used for the two-state, one-input benchmark.
    """

    lengthscale: float = 2.0
    signal_std: float = 100.0
    modes_x: tuple = (5, 5)
    modes_u: tuple = (5,)
    half_width_x: tuple = (20.0, 20.0)
    half_width_u: tuple = (10.0,)

    def __post_init__(self):
        for name in ("modes_x", "modes_u", "half_width_x", "half_width_u"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if len(self.modes_x) != len(self.half_width_x) or len(self.modes_u) != len(self.half_width_u):
            raise ParameterError("modes and half-widths must have matching lengths")
        if self.lengthscale <= 0 or self.signal_std <= 0:
            raise ParameterError("lengthscale and signal_std must be positive")
        if min(self.modes_x + self.modes_u) < 1:
            raise ParameterError("at least one mode per dimension is required")
        if min(self.half_width_x + self.half_width_u) <= 0:
            raise ParameterError("half-widths must be positive")


class ReducedRankGPBasis:
    """Tensor-product sine eigenfunctions of the Dirichlet Laplacian on a box.

    ``phi_j(z) = prod_d L_d^{-1/2} sin(pi j_d (z_d + L_d) / (2 L_d))`` with
    ``z = [x, u]`` and multi-indices in lexicographic order. Points outside
    the box are evaluated as-is; the approximation degrades there.
    """

    basis_id = "reduced_rank_gp"

    def __init__(self, config: ReducedRankGPConfig):
        self.config = config
        self.n_x = len(config.modes_x)
        self.n_u = len(config.modes_u)
        self.modes = np.array(config.modes_x + config.modes_u)
        self.half_widths = np.array(config.half_width_x + config.half_width_u, dtype=float)
        self.indices = np.array(
            list(itertools.product(*[range(1, m + 1) for m in self.modes])), dtype=int)
        self.n_a = len(self.indices)
        self._mmax = int(self.modes.max())
        # freq[d, j-1] = pi j / (2 L_d)
        self._freq = np.pi * np.arange(1, self._mmax + 1)[None, :] / (2 * self.half_widths[:, None])

    @property
    def eigenvalues(self) -> np.ndarray:
        w = np.pi * self.indices / (2 * self.half_widths)
        return np.sum(w**2, axis=1)

    def _tables(self, x, u):
        x, u = np.asarray(x, dtype=float), np.asarray(u, dtype=float)
        shape = np.broadcast_shapes(x.shape[:-1], u.shape[:-1])
        z = np.concatenate([np.broadcast_to(x, shape + (self.n_x,)),
                            np.broadcast_to(u, shape + (self.n_u,))], axis=-1)
        arg = (z + self.half_widths)[..., :, None] * self._freq  # (..., D, mmax)
        norm = 1.0 / np.sqrt(self.half_widths)[:, None]
        return norm * np.sin(arg), norm * self._freq * np.cos(arg)

    def _gather(self, table):
        # table (..., D, mmax) -> (..., n_a, D)
        D = len(self.modes)
        return np.stack([table[..., d, self.indices[:, d] - 1] for d in range(D)], axis=-1)

    def __call__(self, x, u):
        s, _ = self._tables(x, u)
        return np.prod(self._gather(s), axis=-1)

    def _jacobian_z(self, x, u):
        s, c = self._tables(x, u)
        S, C = self._gather(s), self._gather(c)
        D = len(self.modes)
        cols = []
        for d in range(D):
            others = np.prod(np.delete(S, d, axis=-1), axis=-1)
            cols.append(C[..., d] * others)
        return np.stack(cols, axis=-1)  # (..., n_a, D)

    def jacobian_x(self, x, u):
        return self._jacobian_z(x, u)[..., : self.n_x]

    def jacobian_u(self, x, u):
        return self._jacobian_z(x, u)[..., self.n_x:]

    def to_dict(self):
        c = self.config
        return {"type": self.basis_id, "lengthscale": c.lengthscale,
                "signal_std": c.signal_std, "modes_x": list(c.modes_x),
                "modes_u": list(c.modes_u), "half_width_x": list(c.half_width_x),
                "half_width_u": list(c.half_width_u)}


def se_spectral_density(omega, lengthscale, signal_std, dim):
    """Spectral density of the isotropic squared-exponential kernel in ``dim`` dimensions."""
    omega = np.asarray(omega, dtype=float)
    return (signal_std**2 * (2 * np.pi) ** (dim / 2) * lengthscale**dim
            * np.exp(-(omega**2) * lengthscale**2 / 2))


def reduced_rank_gp(config: ReducedRankGPConfig):
    """Return the eigenfunction basis and the diagonal prior column covariance."""
    basis = ReducedRankGPBasis(config)
    D = basis.n_x + basis.n_u
    S = se_spectral_density(np.sqrt(basis.eigenvalues), config.lengthscale,
                            config.signal_std, D)
    return basis, np.diag(S)


def basis_from_dict(d):
    """Rebuild a basis (and its GP prior covariance, else ``None``) from ``to_dict`` output."""
    kind = d["type"]
    if kind == "known_v5":
        return KnownBasisV5(), None
    if kind == "linear":
        return LinearBasis(d["n_x"], d["n_u"]), None
    if kind == "reduced_rank_gp":
        cfg = ReducedRankGPConfig(**{k: v for k, v in d.items() if k != "type"})
        return reduced_rank_gp(cfg)
    raise ParameterError(f"unknown basis type {kind!r}")
