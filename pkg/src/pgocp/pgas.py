"""Particle Gibbs with ancestor sampling for basis-function state-space models.

One Gibbs iteration draws a latent trajectory with a conditional SMC sweep
(bootstrap proposal, multinomial resampling, ancestor sampling for the
reference path) and then draws ``(A, Q)`` from the conjugate
matrix-normal/inverse-Wishart conditional.

Resampling the free particles of a conditional sweep systematically, with the
reference held in a fixed slot, does not leave the smoothing distribution
invariant (the chain settles measurably off the exact smoother), so
conditional sweeps resample multinomially. The unconditional sweep used to
start the chain keeps systematic resampling.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular

from .errors import DegenerateWeightsError, NumericalError, ParameterError
from .model import (
    BasisStateSpaceModel,
    Dataset,
    InitialStatePrior,
    MNIWPrior,
    StateTrajectory,
    make_rng,
    sample_inverse_wishart,
    sample_matrix_normal,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PGConfig:
    K: int = 200
    burn_in: int = 200
    thinning: int = 5
    n_particles: int = 30
    seed: int = 0

    def __post_init__(self):
        if self.K < 1 or self.thinning < 1 or self.n_particles < 1 or self.burn_in < 0:
            raise ParameterError("K, thinning and n_particles must be >= 1, burn_in >= 0")

    @property
    def total_iterations(self) -> int:
        return self.burn_in + self.K * self.thinning


@dataclass
class PosteriorSamples:
    models: list
    trajectories: list
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.models) != len(self.trajectories):
            raise ParameterError("models and trajectories must be aligned")

    def __len__(self):
        return len(self.models)


def _normalize(logw, t):
    m = np.max(logw)
    if not np.isfinite(m):
        raise DegenerateWeightsError(t)
    w = np.exp(logw - m)
    return w / w.sum()


def systematic_resample(weights, n, rng) -> np.ndarray:
    """``n`` ancestor indices by systematic resampling of normalised weights."""
    if n == 0:
        return np.empty(0, dtype=int)
    cdf = np.cumsum(weights)
    cdf[-1] = 1.0
    positions = (rng.random() + np.arange(n)) / n
    return np.searchsorted(cdf, positions, side="right")


def multinomial_resample(weights, n, rng) -> np.ndarray:
    """``n`` independent ancestor indices drawn from normalised weights."""
    cdf = np.cumsum(weights)
    cdf[-1] = 1.0
    return np.searchsorted(cdf, rng.random(n), side="right")


def _categorical(weights, rng) -> int:
    cdf = np.cumsum(weights)
    cdf[-1] = 1.0
    return int(np.searchsorted(cdf, rng.random(), side="right"))


class _GaussianLogLik:
    """Unnormalised log N(z; mean, S) for a fixed positive-definite S."""

    def __init__(self, S, what):
        try:
            self.L = cholesky(np.atleast_2d(S), lower=True)
        except np.linalg.LinAlgError:
            raise ParameterError(f"{what} covariance must be positive definite") from None

    def __call__(self, z, mean):
        r = solve_triangular(self.L, (z - mean).T, lower=True)
        with np.errstate(over="ignore"):  # overflow becomes -inf, caught by the normaliser
            return -0.5 * np.sum(r * r, axis=0)


def csmc_sweep(model: BasisStateSpaceModel, dataset: Dataset, reference, n_particles,
               rng, initial_state: InitialStatePrior) -> StateTrajectory:
    """One conditional SMC sweep with ancestor sampling.

    With ``reference=None`` this is an ordinary bootstrap particle filter
    followed by a single backward trace, used to initialise the chain. The
    reference path occupies the last particle slot.
    """
    n, N = len(dataset), int(n_particles)
    conditional = reference is not None
    if conditional:
        ref = reference.states if isinstance(reference, StateTrajectory) else np.asarray(reference)
        if len(ref) != n:
            raise ParameterError("reference length must equal dataset length")
    free = N - 1 if conditional else N
    resample = multinomial_resample if conditional else systematic_resample
    u, y = dataset.inputs, dataset.outputs
    obs_ll = _GaussianLogLik(model.obs.R, "measurement")
    trans_ll = _GaussianLogLik(model.Q, "process")
    chol_q = trans_ll.L

    X = np.empty((n, N, model.n_x))
    anc = np.zeros((n, N), dtype=int)
    X[0, :free] = initial_state.sample(rng, free)
    if conditional:
        X[0, N - 1] = ref[0]
    logw = obs_ll(y[0], model.obs.mean(X[0], u[0]))

    for t in range(1, n):
        w = _normalize(logw, t - 1)
        mean = model.basis(X[t - 1], u[t - 1]) @ model.A.T
        anc[t, :free] = resample(w, free, rng)
        X[t, :free] = mean[anc[t, :free]] + rng.standard_normal((free, model.n_x)) @ chol_q.T
        if conditional:
            logv = logw + trans_ll(ref[t], mean)
            anc[t, N - 1] = _categorical(_normalize(logv, t), rng)
            X[t, N - 1] = ref[t]
        logw = obs_ll(y[t], model.obs.mean(X[t], u[t]))

    b = _categorical(_normalize(logw, n - 1), rng)
    path = np.empty((n, model.n_x))
    for t in range(n - 1, -1, -1):
        path[t] = X[t, b]
        b = anc[t, b]
    return StateTrajectory(path)


def sufficient_statistics(trajectory, dataset, basis):
    """``(Phi, Psi, Sigma, count)`` for regressors phi(x_t, u_t) and targets x_{t+1}."""
    x = trajectory.states if isinstance(trajectory, StateTrajectory) else np.asarray(trajectory)
    n_x = x.shape[1] if x.ndim == 2 else basis.n_x
    if len(x) < 2:
        return (np.zeros((basis.n_a, basis.n_a)), np.zeros((n_x, basis.n_a)),
                np.zeros((n_x, n_x)), 0)
    if len(x) != len(dataset):
        raise ParameterError("trajectory must be aligned with the dataset")
    phi = basis(x[:-1], dataset.inputs[:-1])
    z = x[1:]
    return phi.T @ phi, z.T @ phi, z.T @ z, len(z)


def parameter_posterior(prior: MNIWPrior, trajectory, dataset, basis):
    """Conditional MNIW posterior: ``(mean, col_cov, scale, dof)``.

    ``Q ~ IW(scale, dof)`` and ``A | Q ~ MN(mean, Q, col_cov)``.
    """
    Phi, Psi, Sig, count = sufficient_statistics(trajectory, dataset, basis)
    Lv = cholesky(prior.V, lower=True)
    V_inv = cho_solve((Lv, True), np.eye(prior.n_a))
    P = V_inv + Phi
    P = 0.5 * (P + P.T)
    try:
        Lp = cholesky(P, lower=True)
    except np.linalg.LinAlgError:
        raise NumericalError(
            f"posterior precision is singular (condition number {np.linalg.cond(P):.3e})") from None
    cond = (np.diag(Lp).max() / np.diag(Lp).min()) ** 2
    if cond > 1e15:
        raise NumericalError(f"posterior precision is ill-conditioned (condition number ~{cond:.3e})")
    col_cov = cho_solve((Lp, True), np.eye(prior.n_a))
    col_cov = 0.5 * (col_cov + col_cov.T)
    Psi_bar = Psi + prior.M @ V_inv
    mean = Psi_bar @ col_cov
    scale = prior.scale + Sig + prior.M @ V_inv @ prior.M.T - mean @ Psi_bar.T
    scale = 0.5 * (scale + scale.T)
    return mean, col_cov, scale, prior.dof + count


def sample_parameters(prior: MNIWPrior, trajectory, dataset, basis, rng, Q=None):
    """Exact draw of ``(A, Q)`` given a state trajectory.

    Passing ``Q`` keeps the noise covariance fixed and draws only ``A | Q``.
    """
    mean, col_cov, scale, dof = parameter_posterior(prior, trajectory, dataset, basis)
    if Q is None:
        Q = sample_inverse_wishart(scale, dof, rng)
    else:
        Q = np.atleast_2d(np.asarray(Q, dtype=float))
    A = sample_matrix_normal(mean, Q, col_cov, rng)
    return A, Q


def run_pg(dataset: Dataset, prior: MNIWPrior, basis, obs, init, config: PGConfig,
           initial_state: InitialStatePrior, known_Q=None, rng=None) -> PosteriorSamples:
    """Run ``burn_in + K * thinning`` Gibbs iterations and keep ``K`` thinned samples.

    ``init`` is ``(A0, Q0)``. Each kept pair is the trajectory drawn in an
    iteration together with the parameters drawn conditional on it.
    """
    if rng is None:
        rng = make_rng(config.seed)
    A0, Q0 = init
    if known_Q is not None:
        Q0 = known_Q
    model = BasisStateSpaceModel(A=A0, Q=Q0, basis=basis, obs=obs)
    traj = csmc_sweep(model, dataset, None, config.n_particles, rng, initial_state)
    models, trajs = [], []
    total = config.total_iterations
    for it in range(total):
        try:
            traj = csmc_sweep(model, dataset, traj, config.n_particles, rng, initial_state)
        except DegenerateWeightsError as exc:
            raise DegenerateWeightsError(exc.time_index, iteration=it) from exc
        A, Q = sample_parameters(prior, traj, dataset, basis, rng, Q=known_Q)
        model = BasisStateSpaceModel(A=A, Q=Q, basis=basis, obs=obs)
        kept = it - config.burn_in + 1
        if kept > 0 and kept % config.thinning == 0:
            models.append(model)
            trajs.append(traj)
        if (it + 1) % 10 == 0:
            log.info("PG iteration %d/%d, kept %d, trace(Q)=%.4g",
                     it + 1, total, len(models), float(np.trace(Q)))
    provenance = {"config": asdict(config), "dataset_digest": dataset.digest(),
                  "iterations": total}
    return PosteriorSamples(models=models, trajectories=trajs, provenance=provenance)
