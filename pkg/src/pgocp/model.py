"""Core domain types and matrix-variate samplers.

Time indexing follows the data window convention: a dataset of length ``n``
covers times ``-n, ..., -1`` and control starts at ``t = 0``.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.linalg import cholesky, solve_triangular

from .errors import ParameterError


def make_rng(seed) -> np.random.Generator:
    """Counter-based generator (Philox) seeded from an int or SeedSequence."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.Philox(seed))


def _readonly(a, ndim=None, name="array") -> np.ndarray:
    arr = np.array(a, dtype=float, copy=True)
    if ndim is not None and arr.ndim != ndim:
        raise ParameterError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


def _as_rows(a, name) -> np.ndarray:
    arr = np.asarray(a, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ParameterError(f"{name} must be a sequence of vectors, got shape {arr.shape}")
    return arr


def _check_pd(S, name):
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ParameterError(f"{name} must be square, got shape {S.shape}")
    if not np.allclose(S, S.T, rtol=1e-10, atol=1e-12):
        raise ParameterError(f"{name} must be symmetric")
    try:
        return cholesky(S, lower=True)
    except np.linalg.LinAlgError:
        raise ParameterError(f"{name} must be positive definite") from None


def covariance_factor(S) -> np.ndarray:
    """Return F with F @ F.T == S for a symmetric PSD matrix (zero allowed)."""
    S = np.atleast_2d(np.asarray(S, dtype=float))
    if not np.any(S):
        return np.zeros_like(S)
    try:
        return cholesky(S, lower=True)
    except np.linalg.LinAlgError:
        w, V = np.linalg.eigh(0.5 * (S + S.T))
        if w.min() < -1e-10 * max(1.0, abs(w.max())):
            raise ParameterError("covariance must be positive semi-definite") from None
        return V * np.sqrt(np.clip(w, 0.0, None))


@dataclass(frozen=True, eq=False)
class Dataset:
    """Input/output record covering times ``-n .. -1``."""

    inputs: np.ndarray
    outputs: np.ndarray

    def __post_init__(self):
        u = _as_rows(self.inputs, "inputs")
        y = _as_rows(self.outputs, "outputs")
        if len(u) != len(y) or len(u) < 1:
            raise ParameterError("inputs and outputs must have equal length >= 1")
        object.__setattr__(self, "inputs", _readonly(u))
        object.__setattr__(self, "outputs", _readonly(y))

    def __len__(self):
        return len(self.inputs)

    @property
    def start_index(self) -> int:
        return -len(self.inputs)

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.start_index, 0)

    @property
    def n_u(self) -> int:
        return self.inputs.shape[1]

    @property
    def n_y(self) -> int:
        return self.outputs.shape[1]

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.inputs).tobytes())
        h.update(np.ascontiguousarray(self.outputs).tobytes())
        return h.hexdigest()


@dataclass(frozen=True, eq=False)
class LinearObservation:
    """Known observation map ``y = C x + D u + w`` with ``w ~ N(0, R)``."""

    C: np.ndarray
    R: np.ndarray
    D: np.ndarray | None = None

    def __post_init__(self):
        C = np.atleast_2d(np.asarray(self.C, dtype=float))
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        if R.shape != (C.shape[0], C.shape[0]):
            raise ParameterError(f"R must be {C.shape[0]}x{C.shape[0]}, got {R.shape}")
        covariance_factor(R)  # PSD check
        object.__setattr__(self, "C", _readonly(C))
        object.__setattr__(self, "R", _readonly(R))
        if self.D is not None:
            D = np.atleast_2d(np.asarray(self.D, dtype=float))
            if D.shape[0] != C.shape[0]:
                raise ParameterError("D must have as many rows as C")
            object.__setattr__(self, "D", _readonly(D))

    @property
    def n_y(self) -> int:
        return self.C.shape[0]

    @property
    def n_x(self) -> int:
        return self.C.shape[1]

    def mean(self, x, u):
        y = np.asarray(x) @ self.C.T
        if self.D is not None:
            y = y + np.asarray(u) @ self.D.T
        return y

    def jacobian_x(self, x, u):
        return self.C

    def jacobian_u(self, x, u):
        n_u = np.shape(u)[-1]
        if self.D is None:
            return np.zeros((self.n_y, n_u))
        return self.D

    def to_dict(self) -> dict:
        d = {"type": "linear", "C": self.C.tolist(), "R": self.R.tolist()}
        if self.D is not None:
            d["D"] = self.D.tolist()
        return d

    @classmethod
    def from_dict(cls, d) -> "LinearObservation":
        return cls(C=d["C"], R=d["R"], D=d.get("D"))


def first_state_observation(n_x, variance) -> LinearObservation:
    """``y = x_1 + w`` with scalar noise variance."""
    C = np.zeros((1, n_x))
    C[0, 0] = 1.0
    return LinearObservation(C=C, R=[[variance]])


@dataclass(frozen=True, eq=False)
class BasisStateSpaceModel:
    """``x+ = A phi(x, u) + v, v ~ N(0, Q)``; ``y = g(x, u) + w``.

    ``Q`` must be symmetric positive semi-definite. A singular ``Q`` is
    accepted so deterministic scenarios can be built; the particle sampler
    requires it to be positive definite.
    """

    A: np.ndarray
    Q: np.ndarray
    basis: Any
    obs: LinearObservation

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        if A.shape[1] != self.basis.n_a:
            raise ParameterError(
                f"A has {A.shape[1]} columns but basis has n_a={self.basis.n_a}")
        if Q.shape != (A.shape[0], A.shape[0]):
            raise ParameterError(f"Q must be {A.shape[0]}x{A.shape[0]}, got {Q.shape}")
        if not np.allclose(Q, Q.T, rtol=1e-10, atol=1e-12):
            raise ParameterError("Q must be symmetric")
        covariance_factor(Q)
        if self.obs.n_x != A.shape[0]:
            raise ParameterError("observation model state dimension does not match A")
        object.__setattr__(self, "A", _readonly(A))
        object.__setattr__(self, "Q", _readonly(0.5 * (Q + Q.T)))

    @property
    def n_x(self) -> int:
        return self.A.shape[0]

    @property
    def n_a(self) -> int:
        return self.A.shape[1]

    @property
    def n_u(self) -> int:
        return self.basis.n_u

    @property
    def n_y(self) -> int:
        return self.obs.n_y


def dynamics_mean(model: BasisStateSpaceModel, x, u) -> np.ndarray:
    """``A phi(x, u)``; broadcasts over leading axes of ``x`` and ``u``."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if x.shape[-1] != model.n_x or u.shape[-1] != model.n_u:
        raise ParameterError("state/input dimension does not match the model")
    return model.basis(x, u) @ model.A.T


def observe_mean(model: BasisStateSpaceModel, x, u) -> np.ndarray:
    return model.obs.mean(np.asarray(x, dtype=float), np.asarray(u, dtype=float))


@dataclass(frozen=True, eq=False)
class MNIWPrior:
    """``Q ~ IW(scale, dof)``, ``A | Q ~ MN(M, Q, V)``."""

    scale: np.ndarray
    dof: float
    M: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        scale = np.atleast_2d(np.asarray(self.scale, dtype=float))
        V = np.atleast_2d(np.asarray(self.V, dtype=float))
        M = np.atleast_2d(np.asarray(self.M, dtype=float))
        _check_pd(scale, "scale")
        _check_pd(V, "V")
        n_x = scale.shape[0]
        if not self.dof > n_x - 1:
            raise ParameterError(f"dof must exceed n_x - 1 = {n_x - 1}")
        if M.shape != (n_x, V.shape[0]):
            raise ParameterError(f"M must be {n_x}x{V.shape[0]}, got {M.shape}")
        object.__setattr__(self, "scale", _readonly(scale))
        object.__setattr__(self, "V", _readonly(V))
        object.__setattr__(self, "M", _readonly(M))
        object.__setattr__(self, "dof", float(self.dof))

    @property
    def n_x(self) -> int:
        return self.scale.shape[0]

    @property
    def n_a(self) -> int:
        return self.V.shape[0]


@dataclass(frozen=True, eq=False)
class InitialStatePrior:
    """Gaussian prior on the first state of the data window."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", _readonly(np.atleast_1d(self.mean), 1, "mean"))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if cov.shape != (len(self.mean), len(self.mean)):
            raise ParameterError("initial covariance shape does not match mean")
        covariance_factor(cov)
        object.__setattr__(self, "cov", _readonly(cov))

    def sample(self, rng, size) -> np.ndarray:
        z = rng.standard_normal((size, len(self.mean)))
        return self.mean + z @ covariance_factor(self.cov).T


@dataclass(frozen=True, eq=False)
class StateTrajectory:
    """Latent states aligned with a dataset's times ``-n .. -1``."""

    states: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "states", _readonly(_as_rows(self.states, "states")))

    def __len__(self):
        return len(self.states)

    @property
    def last(self) -> np.ndarray:
        return self.states[-1]


@dataclass(frozen=True, eq=False)
class Scenario:
    """Frozen model sample, initial state and noise realisations for ``t = 0..H``."""

    model: BasisStateSpaceModel
    x0: np.ndarray
    process_noise: np.ndarray
    measurement_noise: np.ndarray
    _hash: str = field(default="", init=False, repr=False, compare=False)

    def __post_init__(self):
        x0 = _readonly(np.atleast_1d(self.x0), 1, "x0")
        v = _readonly(_as_rows(self.process_noise, "process_noise"))
        w = _readonly(_as_rows(self.measurement_noise, "measurement_noise"))
        if len(v) != len(w):
            raise ParameterError("noise sequences must both have length H+1")
        if v.shape[1] != self.model.n_x or w.shape[1] != self.model.n_y or len(x0) != self.model.n_x:
            raise ParameterError("scenario dimensions do not match the model")
        object.__setattr__(self, "x0", x0)
        object.__setattr__(self, "process_noise", v)
        object.__setattr__(self, "measurement_noise", w)

    @property
    def horizon(self) -> int:
        return len(self.process_noise) - 1

    def content_hash(self) -> str:
        """Digest of every number defining the rollout; used for canonical ordering."""
        if not self._hash:
            h = hashlib.sha256()
            for a in (self.model.A, self.model.Q, self.x0,
                      self.process_noise, self.measurement_noise):
                h.update(np.ascontiguousarray(a).tobytes())
            h.update(repr(getattr(self.model.basis, "basis_id", "")).encode())
            object.__setattr__(self, "_hash", h.hexdigest())
        return self._hash


def sample_inverse_wishart(scale, dof, rng) -> np.ndarray:
    """Draw from IW(scale, dof) by inverting a Bartlett-factored Wishart draw.

    If ``W = F B B^T F^T ~ W(scale^{-1}, dof)`` with ``F = chol(scale)^{-T}``,
    then ``W^{-1} = (chol(scale) B^{-T}) (chol(scale) B^{-T})^T``.
    """
    scale = np.atleast_2d(np.asarray(scale, dtype=float))
    L = _check_pd(scale, "scale")
    n = scale.shape[0]
    if not dof > n - 1:
        raise ParameterError(f"dof must exceed n - 1 = {n - 1}")
    B = np.zeros((n, n))
    B[np.diag_indices(n)] = np.sqrt(rng.chisquare(dof - np.arange(n)))
    lower = np.tril_indices(n, -1)
    B[lower] = rng.standard_normal(len(lower[0]))
    G = solve_triangular(B, L.T, lower=True)
    out = G.T @ G
    return 0.5 * (out + out.T)


def sample_matrix_normal(M, U, V, rng) -> np.ndarray:
    """Draw from MN(M, U, V): row covariance U, column covariance V."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    U = np.atleast_2d(np.asarray(U, dtype=float))
    V = np.atleast_2d(np.asarray(V, dtype=float))
    if U.shape != (M.shape[0],) * 2 or V.shape != (M.shape[1],) * 2:
        raise ParameterError(
            f"shape mismatch: M {M.shape}, U {U.shape}, V {V.shape}")
    Lu = _check_pd(U, "U")
    Lv = _check_pd(V, "V")
    Z = rng.standard_normal(M.shape)
    return M + Lu @ Z @ Lv.T
