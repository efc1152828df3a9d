import math

import numpy as np
import pytest

from ocppe.basis import BasisSpec
from ocppe.errors import ConvergenceError
from ocppe.interventions import LocationShift, Scale, simulation_intervention
from ocppe.riesz import (
    RieszConfig,
    build_moments,
    fit_riesz,
    lasso_md_fit,
    penalty_level_gamma,
    riesz_design,
)
from ocppe.simulation import DgpConfig, dgp_sample


def test_penalty_level_values():
    assert penalty_level_gamma(500, 527) == pytest.approx(0.204534796683982, rel=1e-12)
    assert penalty_level_gamma(4000, 527) == pytest.approx(0.0963328083716697, rel=1e-12)
    # p_h < n: log n is used.
    assert penalty_level_gamma(500, 31) == pytest.approx(math.log(math.log(500)) * math.sqrt(math.log(500) / 500))
    with pytest.raises(ValueError):
        penalty_level_gamma(10, 5)


def test_moments_hand_examples():
    d = np.array([1.0, 2.0, 4.0])
    H = d[:, None] ** 2
    dH = 2 * d[:, None]
    M, G = build_moments(H, dH, np.ones(3))
    assert M[0] == pytest.approx(-2 * d.mean())
    assert G[0, 0] == pytest.approx(np.mean(d**4))
    M1, _ = build_moments(d[:, None], np.ones((3, 1)), np.ones(3))
    assert M1[0] == pytest.approx(-1.0)


@pytest.fixture(scope="module")
def moments():
    data = dgp_sample(DgpConfig(n=500, p_x=4, seed=3))
    basis = BasisSpec(2).fit(data.d, data.x)
    H, dH = riesz_design(basis, data.d, data.x, intercept=True)
    M, G = build_moments(H, dH, simulation_intervention().vartheta(data.d))
    return data, basis, H, dH, M, G


def test_zero_penalty_normal_equations(moments):
    *_, M, G = moments
    fit = lasso_md_fit(M, G, 0.0, tol=1e-12, max_sweeps=10**6)
    np.testing.assert_allclose(fit.gamma, np.linalg.solve(G, M), atol=1e-6)


def test_large_penalty_zero(moments):
    *_, M, G = moments
    fit = lasso_md_fit(M, G, float(np.abs(M).max()) + 1e-9)
    assert not np.any(fit.gamma)


@pytest.mark.parametrize("lam", [0.01, 0.1, 0.5])
def test_kkt_at_moment_level(moments, lam):
    data, basis, H, dH, M, G = moments
    mask = np.ones(M.shape, bool)
    mask[0] = False
    fit = lasso_md_fit(M, G, lam, mask)
    basis_fn = fit.gamma
    L = H @ basis_fn
    vt = simulation_intervention().vartheta(data.d)
    # Empirical integration by parts: |mean(dh_j * vartheta + L h_j)| <= lambda.
    resid = (dH.T @ vt + H.T @ L) / data.n
    assert np.all(np.abs(resid[mask]) <= lam + 1e-8 * lam)
    assert abs(resid[0]) <= 1e-8 * lam
    act = np.flatnonzero(fit.gamma)
    act = act[mask[act]]
    np.testing.assert_allclose(-resid[act], lam * np.sign(fit.gamma[act]), atol=1e-8 * lam)


def test_homogeneity_in_vartheta(moments):
    data, basis, H, dH, M, G = moments
    f1 = lasso_md_fit(M, G, 0.1)
    M2, _ = build_moments(H, dH, 2 * simulation_intervention().vartheta(data.d))
    f2 = lasso_md_fit(M2, G, 0.2)
    np.testing.assert_allclose(f2.gamma, 2 * f1.gamma, atol=1e-8)


def test_non_convergence_raises(moments):
    *_, M, G = moments
    with pytest.raises(ConvergenceError, match="objective"):
        lasso_md_fit(M, G, 1e-4, max_sweeps=1)


def test_l_hat_is_inner_product(moments):
    data, basis, *_ = moments
    fit = fit_riesz(data, basis, Scale())
    H, _ = riesz_design(basis, data.d[:5], data.x[:5], True)
    np.testing.assert_allclose(fit(data.d[:5], data.x[:5]), H @ fit.gamma)
    fit.gamma = np.zeros_like(fit.gamma)
    assert not np.any(fit(data.d[:5], data.x[:5]))


def _heldout_rms(intervention, config):
    cfg = DgpConfig(n=4000, p_x=30, seed=404)
    data = dgp_sample(cfg)
    basis = BasisSpec(2).fit(data.d, data.x)
    fit = fit_riesz(data, basis, intervention, config)
    test = dgp_sample(DgpConfig(n=4000, p_x=30, seed=405))
    vt = intervention.vartheta(test.d)
    L = intervention.vartheta_prime(test.d) - vt * (test.d - test.x @ cfg.beta_d)
    return np.sqrt(np.mean((fit(test.d, test.x) - L) ** 2)) / L.std()


@pytest.mark.slow
def test_location_shift_representer_with_refit():
    assert _heldout_rms(LocationShift(), RieszConfig(refit=True)) <= 0.15


@pytest.mark.slow
@pytest.mark.xfail(strict=True, reason="shrinkage at the default penalty level leaves RMS near 0.24 sd(L); "
                                       "see the decisions ledger")
def test_location_shift_representer_default_penalty():
    assert _heldout_rms(LocationShift(), RieszConfig()) <= 0.15
