import math

import numpy as np
import pytest

from ocppe.errors import ConfigError
from ocppe.interventions import LocationShift, simulation_intervention
from ocppe.simulation import (
    DgpConfig,
    StudyConfig,
    dgp_sample,
    oracle_nuisances,
    replication_rng,
    run_study,
    summarize,
    true_theta,
)


def test_design_constants():
    cfg = DgpConfig(R_d2=0.4, R_y2=0.2)
    q = cfg.delta0 @ cfg.sigma_x @ cfg.delta0
    assert cfg.c_d**2 * q == pytest.approx((math.pi**2 / 3) * 0.4 / 0.6)
    assert cfg.c_y**2 * q == pytest.approx(0.2 / 0.8)
    assert cfg.sigma_x[0, 2] == 0.25


def test_marginals_at_n_10000():
    cfg = DgpConfig(n=10000, p_x=5, seed=1)
    ds = dgp_sample(cfg)
    assert abs(np.corrcoef(ds.x[:, 0], ds.x[:, 1])[0, 1] - 0.5) < 0.05
    assert abs(np.var(ds.d - ds.x @ cfg.beta_d) - 1) < 0.05


def test_samples_are_reproducible():
    cfg = DgpConfig(n=50, p_x=3, seed=4)
    a, b = dgp_sample(cfg), dgp_sample(cfg)
    np.testing.assert_array_equal(a.y, b.y)
    r1 = dgp_sample(cfg, replication_rng(0, 3))
    r2 = dgp_sample(cfg, replication_rng(0, 3))
    np.testing.assert_array_equal(r1.x, r2.x)
    assert not np.array_equal(r1.y, dgp_sample(cfg, replication_rng(0, 4)).y)


def test_policy_design_binary_controls():
    ds = dgp_sample(DgpConfig(n=200, p_x=4, seed=2, design="policy"))
    assert set(np.unique(ds.x[:, :2])) == {0.0, 1.0}
    with pytest.raises(ConfigError):
        DgpConfig(design="policy", p_x=1)


def test_null_design_outcome_is_noise():
    cfg = DgpConfig(n=20000, p_x=3, seed=3, design="null")
    ds = dgp_sample(cfg)
    assert abs(np.corrcoef(ds.y, ds.d)[0, 1]) < 0.03


def test_homogeneous_location_shift_effect_is_one():
    # Y = D + X'beta + U: a unit shift in D moves every outcome quantile by one.
    cfg = DgpConfig(design="homogeneous")
    o = oracle_nuisances(cfg, LocationShift(), 0.2, 0.3, mc_size=200_000, seed=1)
    assert o.theta == pytest.approx(1.0, abs=1e-9)


def test_oracle_quantiles_solve_cdf():
    cfg = DgpConfig(p_x=10)
    o = oracle_nuisances(cfg, simulation_intervention(), 0.1, 0.2, mc_size=200_000, seed=2)
    ds = dgp_sample(DgpConfig(n=400_000, p_x=10, seed=8))
    assert abs(np.mean(ds.y <= o.q1) - 0.1) < 0.002
    assert abs(np.mean(ds.y <= o.q2) - 0.2) < 0.002


@pytest.mark.slow
@pytest.mark.parametrize("rng_, value", [((0.1, 0.2), 1.43192), ((0.2, 0.3), 1.57430), ((0.3, 0.4), 1.78571)])
def test_true_theta_frozen(rng_, value):
    theta, mcse = true_theta(rng_, DgpConfig())
    assert mcse < 0.003
    assert theta == pytest.approx(value, abs=2e-5)


def test_true_theta_needs_large_sample():
    with pytest.raises(ValueError):
        true_theta((0.1, 0.2), DgpConfig(), mc_size=1000)


def test_summarize_hand_example():
    s = summarize([1.0, 2.0, 3.0], [0.5, 0.5, 2.0], 2.0)
    assert s["bias_ratio"] == 0.0
    assert s["std"] == pytest.approx(math.sqrt(2 / 3))
    assert s["mse"] == pytest.approx(2 / 3)
    assert s["coverage"] == pytest.approx(2 / 3)
    assert s["coverage_std"] == pytest.approx(1.0)
    m = summarize([1.0, 3.0], [1, 1], 2.0, bias="mean_of_ratio")
    assert m["bias_ratio"] == 0.0
    with pytest.raises(ConfigError):
        summarize([1.0], [1.0], 1.0, bias="median")


def _tiny_study(n_jobs):
    from ocppe.basis import BasisSpec
    from ocppe.distreg import DistRegConfig
    from ocppe.score import EstimatorConfig

    study = StudyConfig(designs=(DgpConfig(n=150, p_x=3),), ranges=((0.2, 0.3),), reps=3, master_seed=1,
                        n_jobs=n_jobs)
    cfg = EstimatorConfig(basis=BasisSpec(1), distreg=DistRegConfig(J=10))
    return run_study(study, config=cfg)


def test_study_parallel_equals_serial(tmp_path):
    a, b = _tiny_study(1), _tiny_study(2)
    assert a.to_csv() == b.to_csv()
    assert a.replications_csv() == b.replications_csv()
    assert "Cvg(Std)" in a.table()
    assert len(a.cells) == 2
