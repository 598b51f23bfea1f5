import numpy as np
import pytest

from pgocp.errors import ParameterError
from pgocp.features import (
    KnownBasisV5,
    LinearBasis,
    ReducedRankGPBasis,
    ReducedRankGPConfig,
    basis_from_dict,
    reduced_rank_gp,
    se_spectral_density,
)
from pgocp.plant import plant_transition, true_coefficients


def _fd_jacobians(basis, x, u, h=1e-6):
    jx = np.stack([(basis(x + h * e, u) - basis(x - h * e, u)) / (2 * h)
                   for e in np.eye(len(x))], axis=-1)
    ju = np.stack([(basis(x, u + h * e) - basis(x, u - h * e)) / (2 * h)
                   for e in np.eye(len(u))], axis=-1)
    return jx, ju


def test_known_basis_values():
    b = KnownBasisV5()
    x, u = np.array([0.3, -1.2]), np.array([0.7])
    expected = [0.3, -1.2, 0.7, np.cos(0.9) * -1.2, np.sin(-2.4) * 0.7]
    np.testing.assert_allclose(b(x, u), expected)
    assert b.n_a == 5


def test_known_basis_reproduces_plant():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((20, 2))
    u = rng.standard_normal((20, 1))
    np.testing.assert_allclose(KnownBasisV5()(x, u) @ true_coefficients().T,
                               plant_transition(x, u), atol=1e-14)


@pytest.mark.parametrize("basis", [KnownBasisV5(), LinearBasis(2, 1),
                                   ReducedRankGPBasis(ReducedRankGPConfig(modes_x=(3, 2), modes_u=(2,)))])
def test_jacobians_match_finite_differences(basis):
    rng = np.random.default_rng(1)
    for _ in range(5):
        x, u = rng.standard_normal(2), rng.standard_normal(1)
        jx, ju = _fd_jacobians(basis, x, u)
        np.testing.assert_allclose(basis.jacobian_x(x, u), jx, rtol=1e-6, atol=1e-8)
        np.testing.assert_allclose(basis.jacobian_u(x, u), ju, rtol=1e-6, atol=1e-8)


def test_batched_evaluation_matches_pointwise():
    b = ReducedRankGPBasis(ReducedRankGPConfig(modes_x=(2, 3), modes_u=(2,)))
    rng = np.random.default_rng(2)
    x, u = rng.standard_normal((4, 3, 2)), rng.standard_normal((4, 3, 1))
    out = b(x, u)
    assert out.shape == (4, 3, b.n_a)
    np.testing.assert_allclose(out[2, 1], b(x[2, 1], u[2, 1]))
    assert b.jacobian_x(x, u).shape == (4, 3, b.n_a, 2)


def test_table_config_has_125_features():
    basis, V = reduced_rank_gp(ReducedRankGPConfig())
    assert basis.n_a == 125
    assert V.shape == (125, 125)


def test_prior_covariance_positive_and_decreasing():
    basis, V = reduced_rank_gp(ReducedRankGPConfig())
    d = np.diag(V)
    assert np.all(d > 0)
    assert np.count_nonzero(V - np.diag(d)) == 0
    # raising any single index lowers the spectral weight
    idx = {tuple(j): k for k, j in enumerate(basis.indices)}
    for j, k in idx.items():
        for dim in range(3):
            up = list(j)
            up[dim] += 1
            if tuple(up) in idx:
                assert d[idx[tuple(up)]] < d[k]


def test_spectral_density_formula():
    s = se_spectral_density(np.array([0.0, 1.0]), 2.0, 3.0, 3)
    expected0 = 9.0 * (2 * np.pi) ** 1.5 * 8.0
    np.testing.assert_allclose(s, [expected0, expected0 * np.exp(-2.0)])


def test_eigenfunctions_orthonormal_by_quadrature():
    cfg = ReducedRankGPConfig(modes_x=(3, 3), modes_u=(3,), half_width_x=(2.0, 3.0),
                              half_width_u=(1.5,))
    b = ReducedRankGPBasis(cfg)
    # Gauss-Legendre per dimension is exact enough for products of sines
    pts, wts = [], []
    for L in (2.0, 3.0, 1.5):
        n, w = np.polynomial.legendre.leggauss(40)
        pts.append(L * n)
        wts.append(L * w)
    g = np.meshgrid(*pts, indexing="ij")
    w = np.einsum("i,j,k->ijk", *wts).ravel()
    x = np.stack([g[0].ravel(), g[1].ravel()], axis=-1)
    u = g[2].ravel()[:, None]
    phi = b(x, u)
    gram = phi.T @ (phi * w[:, None])
    assert np.max(np.abs(gram - np.eye(b.n_a))) < 1e-3


def test_basis_round_trip():
    for basis in (KnownBasisV5(), LinearBasis(1, 1), ReducedRankGPBasis(ReducedRankGPConfig())):
        back, V = basis_from_dict(basis.to_dict())
        assert back.to_dict() == basis.to_dict()
    _, V = basis_from_dict(ReducedRankGPBasis(ReducedRankGPConfig()).to_dict())
    assert V.shape == (125, 125)
    with pytest.raises(ParameterError):
        basis_from_dict({"type": "nope"})


def test_gp_config_validation():
    with pytest.raises(ParameterError):
        ReducedRankGPConfig(lengthscale=0.0)
    with pytest.raises(ParameterError):
        ReducedRankGPConfig(modes_x=(5,), half_width_x=(1.0, 2.0))
