import math

import numpy as np
import pytest
from scipy.integrate import trapezoid
from hypothesis import given, settings
from hypothesis import strategies as st

from ocppe.quantile import BandwidthConfig, check_loss, estimate_density, estimate_quantile, kde


def test_quantile_order_statistic():
    y = np.arange(1.0, 11.0)
    assert estimate_quantile(y, 0.25).q_hat == 3.0
    assert estimate_quantile(y, 0.5).q_hat == 5.0
    assert estimate_quantile(y, 0.3).q_hat == 3.0


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-100, 100, allow_nan=False), min_size=2, max_size=60),
       st.floats(0.01, 0.99))
def test_quantile_minimises_check_loss(ys, tau):
    y = np.asarray(ys)
    q = estimate_quantile(y, tau).q_hat
    best = min(check_loss(y, c, tau) for c in y)
    assert check_loss(y, q, tau) <= best + 1e-9 * (1 + abs(best))


def test_bandwidth_rule():
    y = np.random.default_rng(0).standard_normal(1000)
    h = BandwidthConfig().bandwidth(y)
    assert math.isclose(h, 1.06 * np.std(y, ddof=1) * 1000 ** -0.2)
    with pytest.raises(ValueError):
        BandwidthConfig(exponent=0.5)
    with pytest.raises(ValueError):
        BandwidthConfig(exponent=0.1)


def test_density_of_standard_normal():
    y = np.random.default_rng(1).standard_normal(20000)
    f = estimate_density(y, 0.0).f_hat
    assert abs(f - 1 / math.sqrt(2 * math.pi)) < 0.01


def test_kde_matches_pointwise():
    y = np.random.default_rng(2).standard_normal(300)
    pts = np.linspace(-2, 2, 7)
    v = kde(y, pts, chunk=3)
    for p, f in zip(pts, v):
        assert math.isclose(f, estimate_density(y, p).f_hat, rel_tol=1e-12)


def test_epanechnikov_integrates_to_one():
    y = np.array([0.0])
    g = np.linspace(-2, 2, 40001)
    f = kde(y, g, BandwidthConfig(kernel="epanechnikov"), bandwidth=1.0)
    assert abs(trapezoid(f, g) - 1.0) < 1e-6
