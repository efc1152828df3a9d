import dataclasses

import numpy as np
import pytest
from scipy.stats import norm

from ocppe.basis import BasisSpec
from ocppe.data import IndexU
from ocppe.distreg import DistRegConfig
from ocppe.errors import ConfigError, NumericalError
from ocppe.interventions import ExpressionIntervention, LocationShift, simulation_intervention
from ocppe.quantile import DensityFit
from ocppe.score import (
    EstimatorConfig,
    ProcessFit,
    dist_perturbation_estimate,
    empirical_cdf,
    estimate_many,
    estimate_ocppe,
    indicator_integral,
    naive_estimate,
    orthogonal_score,
    segment_knots,
    target_cdf_from_config,
    validate_cdf,
)
from ocppe.simulation import DgpConfig, dgp_sample, oracle_nuisances

U1 = IndexU(0.2, 0.4)
U2 = IndexU(0.4, 0.6)


def test_indicator_integral_cases():
    assert indicator_integral(5.0, 1.0, 2.0) == 0.0
    assert indicator_integral(1.5, 1.0, 2.0) == pytest.approx(0.5)
    # Y below the range: the indicator is 1 on all of [q1, q2].
    assert indicator_integral(0.0, 1.0, 2.0) == pytest.approx(1.0)
    assert indicator_integral(2.0, 1.0, 2.0) == 0.0


def test_indicator_integral_numerically(rng):
    y = rng.normal(size=50) * 2
    g = np.linspace(-0.5, 1.0, 300001)
    num = np.array([np.mean(yi <= g) * 1.5 for yi in y])
    np.testing.assert_allclose(indicator_integral(y, -0.5, 1.0), num, atol=1e-4)


def test_segment_knots_single_range():
    knots, pos = segment_knots([0.0, 1.0], [(0, 1)], 10, 5)
    np.testing.assert_allclose(knots, np.linspace(0, 1, 11))
    assert pos == [0, 10]


def test_segment_knots_contiguous_ranges_get_J_each():
    knots, pos = segment_knots([0.0, 1.0, 3.0], [(0, 1), (1, 2)], 10, 5)
    assert pos == [0, 10, 20]
    np.testing.assert_allclose(knots[10:], np.linspace(1, 3, 11))


def test_segment_knots_nested_ranges():
    # The wide range alone would allot 5 steps to [0, 1]; the narrow one forces 10.
    knots, pos = segment_knots([0.0, 1.0, 2.0], [(0, 2), (0, 1)], 10, 2)
    assert pos == [0, 10, 15]


def test_scores_have_mean_zero(small_process):
    res = small_process.dml(U1, simulation_intervention())
    assert abs(res.scores.mean()) < 1e-12
    assert res.theta_hat == pytest.approx(res.signals.mean())
    assert res.se_analytic == pytest.approx(np.std(res.scores) / np.sqrt(res.n))
    lo, hi = res.ci95
    assert lo < res.theta_hat < hi


def test_naive_is_score_without_corrections(small_process):
    iv = simulation_intervention()
    t = small_process.terms(U1, iv)
    naive = small_process.naive(U1, iv)
    assert naive.theta_hat == pytest.approx(t["plugin"].mean(), rel=1e-14)
    dml = small_process.dml(U1, iv)
    total = sum(v.mean() for v in t.values())
    assert dml.theta_hat == pytest.approx(total, rel=1e-12)


def test_orthogonal_score_matches_process(small_data, small_process):
    iv = simulation_intervention()
    eta = small_process.nuisance(U2, iv)
    s = orthogonal_score(small_data.y, small_data.d, small_data.x, 0.0, eta)
    assert s.mean() == pytest.approx(small_process.dml(U2, iv).theta_hat, rel=1e-12)
    one = orthogonal_score(small_data.y[3], small_data.d[3], small_data.x[3], 0.0, eta)
    assert one[0] == pytest.approx(s[3])


def test_location_shift_hardcoded_equals_expression(small_process):
    a = small_process.dml(U1, LocationShift())
    b = small_process.dml(U1, ExpressionIntervention("d + delta"))
    assert a.theta_hat == pytest.approx(b.theta_hat, rel=1e-10)
    np.testing.assert_allclose(a.scores, b.scores, rtol=1e-9, atol=1e-12)


def test_shared_fit_matches_single_range(small_data):
    cfg = EstimatorConfig(basis=BasisSpec(2), distreg=DistRegConfig(J=20))
    many = estimate_many(small_data, [IndexU(0.1, 0.3), IndexU(0.3, 0.5)], simulation_intervention(), cfg)
    one = estimate_ocppe(small_data, IndexU(0.3, 0.5), simulation_intervention(), cfg)
    assert many[1].theta_hat == pytest.approx(one.theta_hat, rel=1e-9)


def test_estimates_are_deterministic(small_data):
    cfg = EstimatorConfig(basis=BasisSpec(2), distreg=DistRegConfig(J=20))
    a = estimate_ocppe(small_data, U1, simulation_intervention(), cfg)
    b = estimate_ocppe(small_data, U1, simulation_intervention(), cfg)
    assert a.theta_hat == b.theta_hat
    np.testing.assert_array_equal(a.scores, b.scores)


def test_result_serialisation(small_process):
    d = small_process.dml(U1, simulation_intervention()).to_dict()
    assert d["estimator"] == "dml"
    assert {"lambda_beta", "lambda_gamma", "n_thresholds"} <= set(d["diagnostics"])


def test_density_floor_raises(small_data):
    proc = ProcessFit(small_data, [(0.2, 0.4)], EstimatorConfig(distreg=DistRegConfig(J=10)))
    f = proc.densities[0.2]
    proc.densities[0.2] = DensityFit(f.at, 0.0, f.bandwidth, f.kernel)
    with pytest.raises(NumericalError):
        proc.dml(U1, LocationShift())


def test_nonmonotone_intervention_rejected(small_data):
    cfg = EstimatorConfig(distreg=DistRegConfig(J=10))
    with pytest.raises(NumericalError):
        estimate_ocppe(small_data, U1, ExpressionIntervention("d + delta*500*d**3"), cfg)


def test_oracle_score_mean_zero_moderate_sample():
    cfg = DgpConfig(n=200_000, p_x=30, seed=77)
    data = dgp_sample(cfg)
    o = oracle_nuisances(cfg, simulation_intervention(), 0.2, 0.3, mc_size=400_000, seed=3)
    psi = o.signal(data.y, data.d, data.x) - o.theta
    assert abs(psi.mean()) <= 4 * psi.std() / np.sqrt(psi.size)


# Distributional perturbation ------------------------------------------------


def test_empirical_cdf_rescaled():
    np.testing.assert_allclose(empirical_cdf([3.0, 1.0, 2.0]), [0.75, 0.25, 0.5])


def test_empirical_target_gives_zero(small_data):
    cfg = EstimatorConfig(distreg=DistRegConfig(J=10))
    G0 = target_cdf_from_config({"kind": "empirical"}, small_data)
    res = dist_perturbation_estimate(small_data, U1, G0, cfg)
    assert res.theta_hat == 0.0
    assert "plug-in only, not debiased" in res.flags


def test_shift_target_sign_matches_location_shift(small_data):
    # Moving the law of D to the right behaves like a positive shift.
    cfg = EstimatorConfig(distreg=DistRegConfig(J=10))
    G0 = target_cdf_from_config({"kind": "shift", "shift": 0.5}, small_data)
    a = dist_perturbation_estimate(small_data, U1, G0, cfg)
    b = naive_estimate(small_data, U1, LocationShift(), cfg)
    assert np.sign(a.theta_hat) == np.sign(b.theta_hat)


def test_validate_cdf_rejects_bad_targets():
    d = np.linspace(-1, 1, 50)
    validate_cdf(norm.cdf, d)
    with pytest.raises(ConfigError):
        validate_cdf(lambda t: (np.asarray(t) >= 0).astype(float), d)
    with pytest.raises(ConfigError):
        validate_cdf(lambda t: 1 - norm.cdf(t), d)
    with pytest.raises(ConfigError):
        validate_cdf(lambda t: 2 * norm.cdf(t), d)


def test_config_is_frozen():
    cfg = EstimatorConfig()
    with pytest.raises(dataclasses.FrozenInstanceError):
        cfg.level = 0.9
