import numpy as np
import pytest
from scipy import stats

from pgocp.errors import DegenerateWeightsError, NumericalError, ParameterError
from pgocp.features import LinearBasis
from pgocp.model import (
    BasisStateSpaceModel,
    Dataset,
    InitialStatePrior,
    LinearObservation,
    MNIWPrior,
    StateTrajectory,
    make_rng,
)
from pgocp.pgas import (
    PGConfig,
    _normalize,
    csmc_sweep,
    parameter_posterior,
    run_pg,
    sample_parameters,
    sufficient_statistics,
    multinomial_resample,
    systematic_resample,
)

from conftest import scalar_model


def _scalar_data(n=40, seed=0, a=0.8):
    rng = make_rng(seed)
    x = np.empty(n)
    x[0] = rng.standard_normal()
    u = rng.standard_normal(n)
    for t in range(n - 1):
        x[t + 1] = a * x[t] + u[t] + 0.3 * rng.standard_normal()
    y = x + 0.3 * rng.standard_normal(n)
    return Dataset(inputs=u[:, None], outputs=y[:, None]), x


def test_table_schedule_needs_1200_iterations():
    assert PGConfig().total_iterations == 1200
    with pytest.raises(ParameterError):
        PGConfig(thinning=0)


def test_systematic_resampling_counts_are_floor_or_ceil():
    rng = make_rng(0)
    w = np.array([0.05, 0.5, 0.2, 0.25])
    for _ in range(50):
        idx = systematic_resample(w, 20, rng)
        counts = np.bincount(idx, minlength=4)
        assert np.all(counts >= np.floor(20 * w)) and np.all(counts <= np.ceil(20 * w))
    assert len(systematic_resample(w, 0, rng)) == 0


def test_multinomial_resampling_frequencies():
    rng = make_rng(1)
    w = np.array([0.05, 0.5, 0.2, 0.25])
    idx = multinomial_resample(w, 200_000, rng)
    freq = np.bincount(idx, minlength=4) / len(idx)
    np.testing.assert_allclose(freq, w, atol=4 * np.sqrt(0.25 / len(idx)))
    assert multinomial_resample(np.array([0.0, 1.0, 0.0]), 10, rng).tolist() == [1] * 10


def test_all_zero_weights_raise():
    with pytest.raises(DegenerateWeightsError) as info:
        _normalize(np.full(5, -np.inf), 7)
    assert info.value.time_index == 7
    w = _normalize(np.array([-1000.0, -1001.0]), 0)
    np.testing.assert_allclose(w.sum(), 1.0)


def test_single_particle_conditional_sweep_returns_reference():
    ds, x = _scalar_data()
    ref = StateTrajectory(x[:, None])
    out = csmc_sweep(scalar_model(), ds, ref, 1, make_rng(0),
                     InitialStatePrior(mean=[0.0], cov=[[1.0]]))
    np.testing.assert_array_equal(out.states, ref.states)


def test_sweep_rejects_misaligned_reference():
    ds, x = _scalar_data()
    with pytest.raises(ParameterError):
        csmc_sweep(scalar_model(), ds, x[:-1, None], 5, make_rng(0),
                   InitialStatePrior(mean=[0.0], cov=[[1.0]]))


def test_outlier_underflows_weights():
    ds, _ = _scalar_data(n=10)
    y = ds.outputs.copy()
    y[5] = 1e300  # squared residual overflows, every log-weight is -inf
    bad = Dataset(inputs=ds.inputs, outputs=y)
    model = scalar_model()
    with pytest.raises(DegenerateWeightsError):
        csmc_sweep(model, bad, None, 10, make_rng(0), InitialStatePrior(mean=[0.0], cov=[[1.0]]))


def test_sufficient_statistics_by_hand():
    ds = Dataset(inputs=[[1.0], [2.0], [0.0]], outputs=np.zeros((3, 1)))
    traj = StateTrajectory([[0.5], [1.0], [-1.0]])
    Phi, Psi, Sig, n = sufficient_statistics(traj, ds, LinearBasis(1, 1))
    phi = np.array([[0.5, 1.0], [1.0, 2.0]])
    z = np.array([[1.0], [-1.0]])
    np.testing.assert_allclose(Phi, phi.T @ phi)
    np.testing.assert_allclose(Psi, z.T @ phi)
    np.testing.assert_allclose(Sig, z.T @ z)
    assert n == 2


def _prior(n_a=2):
    return MNIWPrior(scale=[[0.5]], dof=6.0, M=np.full((1, n_a), 0.3), V=2.0 * np.eye(n_a))


def test_posterior_equals_prior_without_transitions():
    ds = Dataset(inputs=[[0.0]], outputs=[[0.0]])
    mean, col_cov, scale, dof = parameter_posterior(_prior(), StateTrajectory([[1.0]]), ds,
                                                    LinearBasis(1, 1))
    np.testing.assert_allclose(mean, [[0.3, 0.3]])
    np.testing.assert_allclose(col_cov, 2.0 * np.eye(2))
    np.testing.assert_allclose(scale, [[0.5]], atol=1e-12)
    assert dof == 6.0


def test_prior_draws_without_data_match_prior_moments():
    ds = Dataset(inputs=[[0.0]], outputs=[[0.0]])
    rng = make_rng(4)
    prior = _prior()
    draws = [sample_parameters(prior, StateTrajectory([[1.0]]), ds, LinearBasis(1, 1), rng)
             for _ in range(20_000)]
    A = np.array([d[0][0] for d in draws])
    Q = np.array([d[1][0, 0] for d in draws])
    se_q = Q.std() / np.sqrt(len(Q))
    assert abs(Q.mean() - 0.5 / (6 - 2)) < 3 * se_q
    se_a = A.std(axis=0) / np.sqrt(len(A))
    assert np.all(np.abs(A.mean(axis=0) - 0.3) < 3 * se_a)
    # marginal variance of A entries is V_ii E[Q]
    np.testing.assert_allclose(A.var(axis=0), 2.0 * 0.125, rtol=0.05)


def test_coefficients_given_known_noise_are_gaussian():
    ds, x = _scalar_data(n=60)
    traj = StateTrajectory(x[:, None])
    basis = LinearBasis(1, 1)
    prior = _prior()
    Q = np.array([[0.09]])
    mean, col_cov, _, _ = parameter_posterior(prior, traj, ds, basis)
    rng = make_rng(8)
    A = np.array([sample_parameters(prior, traj, ds, basis, rng, Q=Q)[0][0] for _ in range(5000)])
    for j in range(2):
        z = (A[:, j] - mean[0, j]) / np.sqrt(Q[0, 0] * col_cov[j, j])
        assert stats.kstest(z, "norm").pvalue > 1e-3


def test_ill_conditioned_posterior_is_reported():
    class Doubled:
        basis_id, n_x, n_u, n_a = "doubled", 1, 1, 2

        def __call__(self, x, u):
            x = np.asarray(x, dtype=float)
            return np.concatenate([x, x], axis=-1)

    ds, x = _scalar_data(n=30)
    prior = MNIWPrior(scale=[[1.0]], dof=3.0, M=np.zeros((1, 2)), V=1e20 * np.eye(2))
    with pytest.raises(NumericalError, match="condition number"):
        parameter_posterior(prior, StateTrajectory(x[:, None]), ds, Doubled())


def test_run_pg_keeps_thinned_samples_deterministically():
    ds, _ = _scalar_data(n=30)
    basis = LinearBasis(1, 1)
    obs = LinearObservation(C=[[1.0]], R=[[0.09]])
    cfg = PGConfig(K=4, burn_in=5, thinning=3, n_particles=10)
    args = (ds, _prior(), basis, obs, (np.zeros((1, 2)), np.eye(1)), cfg,
            InitialStatePrior(mean=[0.0], cov=[[1.0]]))
    a = run_pg(*args, rng=make_rng(1))
    b = run_pg(*args, rng=make_rng(1))
    assert len(a) == 4
    assert a.provenance["iterations"] == 17
    assert a.provenance["dataset_digest"] == ds.digest()
    for ma, mb in zip(a.models, b.models):
        np.testing.assert_array_equal(ma.A, mb.A)
    assert all(len(t) == len(ds) for t in a.trajectories)


def test_run_pg_recovers_scalar_dynamics():
    ds, _ = _scalar_data(n=300, seed=3)
    obs = LinearObservation(C=[[1.0]], R=[[0.09]])
    prior = MNIWPrior(scale=[[0.1]], dof=3.0, M=np.zeros((1, 2)), V=10 * np.eye(2))
    cfg = PGConfig(K=40, burn_in=60, thinning=2, n_particles=20)
    s = run_pg(ds, prior, LinearBasis(1, 1), obs, (np.zeros((1, 2)), np.eye(1)), cfg,
               InitialStatePrior(mean=[0.0], cov=[[1.0]]), rng=make_rng(2))
    A = np.array([m.A[0] for m in s.models])
    np.testing.assert_allclose(A.mean(axis=0), [0.8, 1.0], atol=0.1)


def test_known_noise_is_never_resampled():
    ds, _ = _scalar_data(n=20)
    obs = LinearObservation(C=[[1.0]], R=[[0.09]])
    Q = np.array([[0.09]])
    s = run_pg(ds, _prior(), LinearBasis(1, 1), obs, (np.zeros((1, 2)), np.eye(1)),
               PGConfig(K=3, burn_in=2, thinning=1, n_particles=5),
               InitialStatePrior(mean=[0.0], cov=[[1.0]]), known_Q=Q, rng=make_rng(0))
    assert all(np.array_equal(m.Q, Q) for m in s.models)
