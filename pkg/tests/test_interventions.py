import numpy as np
import pytest

from ocppe.errors import ConfigError, NumericalError
from ocppe.interventions import (
    ExpressionIntervention,
    LocationScale,
    LocationShift,
    Scale,
    TargetPerturbation,
    from_config,
    simulation_intervention,
    vartheta,
)

D = np.linspace(-2.0, 3.0, 11)
X = np.column_stack([np.linspace(0.0, 1.0, 11), np.linspace(1.0, 2.0, 11)])


def _fd_vartheta(iv, d, x=None, h=1e-6):
    return (iv.apply(h, d, x) - iv.apply(-h, d, x)) / (2 * h)


@pytest.mark.parametrize(
    "iv",
    [
        LocationShift(),
        Scale(),
        Scale(inverse=True),
        LocationScale(mu=0.5, sigma1=2.0, sigma2=-1.0),
        simulation_intervention(),
        TargetPerturbation(g0="2*d + 1"),
    ],
)
def test_vartheta_matches_finite_differences(iv):
    np.testing.assert_allclose(iv.vartheta(D), _fd_vartheta(iv, D), rtol=1e-7, atol=1e-8)
    h = 1e-6
    fd_prime = (iv.vartheta(D + h) - iv.vartheta(D - h)) / (2 * h)
    np.testing.assert_allclose(iv.vartheta_prime(D), fd_prime, rtol=1e-6, atol=1e-7)


def test_simulation_map_closed_form():
    iv = simulation_intervention()
    np.testing.assert_allclose(iv.vartheta(D), D + 3)
    np.testing.assert_allclose(iv.vartheta_prime(D), 1.0)


def test_scale_inverse_example():
    iv = Scale(inverse=True)
    assert iv.vartheta(np.array([2.0]))[0] == -2.0


def test_covariate_dependent_expression():
    iv = ExpressionIntervention("d + delta*x1*d")
    assert iv.needs_x
    np.testing.assert_allclose(iv.vartheta(D, X), X[:, 0] * D)
    np.testing.assert_allclose(iv.vartheta_prime(D, X), X[:, 0])
    with pytest.raises(ValueError):
        vartheta(iv, D)


def test_sigma_indexed_expression():
    iv = ExpressionIntervention("d + delta*(s1 + s2*d)").at((1.0, 2.0))
    np.testing.assert_allclose(iv.vartheta(D), 1.0 + 2.0 * D)


@pytest.mark.parametrize("expr", ["d + delta*exp(d)", "d + delta*__import__('os')", "d+delta*d**0.5",
                                  "2*d + delta", "d + delta*q"])
def test_expression_whitelist(expr):
    with pytest.raises(ConfigError):
        ExpressionIntervention(expr).vartheta(D)


def test_monotonicity_check():
    LocationShift().check_monotone(D)
    with pytest.raises(NumericalError):
        ExpressionIntervention("d + delta*50*d**3").check_monotone(np.linspace(-5, 5, 21))


def test_location_scale_family():
    iv = LocationScale(mu=1.0)
    m = iv.at((0.5,))
    np.testing.assert_allclose(m.vartheta(D), 0.5 * (D - 1.0))
    m2 = iv.at((0.5, 2.0))
    np.testing.assert_allclose(m2.vartheta(D), 0.5 * (D - 1.0) + 2.0)


def test_from_config():
    assert isinstance(from_config({"kind": "location_shift"}), LocationShift)
    assert from_config({"kind": "scale", "inverse": True}).inverse
    with pytest.raises(ConfigError):
        from_config({"kind": "nope"})
    with pytest.raises(ConfigError):
        from_config({"kind": "location_shift", "extra": 1})
