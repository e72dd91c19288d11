import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from relocopt import ModelParams, ParameterError, WageProfile, classify_regime, compute_control_caps, wage_eval
from relocopt.model import WageWindowError


def test_quadratic_values_at_peak_and_ends(quad):
    assert wage_eval(quad, 0.5) == pytest.approx((0.25, 0.0, -2.0), abs=1e-15)
    assert wage_eval(quad, 0.0) == pytest.approx((0.0, 1.0, -2.0), abs=1e-15)
    assert wage_eval(quad, 1.0)[0] == pytest.approx(0.0, abs=1e-15)


def test_extension_signs_left_of_zero(quad):
    w, dw, _ = wage_eval(quad, -0.3)
    assert w < 0 and dw > 0


def test_window_is_enforced(quad):
    with pytest.raises(WageWindowError):
        wage_eval(quad, 2.5)
    # the extension itself is defined there
    assert np.isfinite(quad(2.5))


def test_extension_is_bounded_plateau(quad):
    far = quad(np.array([-50.0, 50.0]))
    assert np.allclose(far, -0.25)
    assert quad.sup_abs == pytest.approx(0.25)


def test_constant_profile():
    W = WageProfile.constant(0.3)
    x = np.linspace(-1, 2, 7)
    w, dw, d2w = W.derivs(x)
    assert np.all(w == 0.3) and np.all(dw == 0) and np.all(d2w == 0)


@pytest.mark.parametrize("profile_name", ["quad", "double_peak"])
def test_c2_at_knots(profile_name, request):
    prof = request.getfixturevalue(profile_name)
    assert prof.knot_mismatch() <= 1e-6


def test_c2_by_one_sided_differences(quad):
    # second derivative from each side of every knot
    h = 1e-4
    for k in quad.breaks[1:-1]:
        left = (quad(k) - 2 * quad(k - h) + quad(k - 2 * h)) / h**2
        right = (quad(k + 2 * h) - 2 * quad(k + h) + quad(k)) / h**2
        assert abs(left - right) <= 1e-2 * max(1.0, abs(left))


@settings(max_examples=25, deadline=None)
@given(h=st.floats(0.2, 5.0), bump=st.floats(0.0, 0.3))
def test_tabulated_single_peak_certifies(h, bump):
    kn = np.linspace(0, 1, 9)
    vals = h * kn * (1 - kn) * (1 + bump * kn)
    prof = WageProfile.tabulated(kn, vals)
    assert prof.knot_mismatch() <= 1e-6
    inner = np.linspace(0.01, 0.99, 50)
    assert np.all(prof(inner) > 0)
    assert np.all(prof(np.array([-0.05, 1.05])) < 0)


def test_certification_rejects_negative_interior():
    kn = np.linspace(0, 1, 6)
    vals = np.array([0.0, 0.2, -0.1, 0.2, 0.1, 0.0])
    with pytest.raises(ParameterError):
        WageProfile.tabulated(kn, vals)


def test_bad_family():
    with pytest.raises(ParameterError):
        WageProfile("cubic", (1.0,))


@pytest.mark.parametrize("kw, msg", [
    (dict(theta=1.2), "theta"),
    (dict(theta=0.0), "theta"),
    (dict(rho=0.0), "rho"),
    (dict(eta=0.0, xi=0.0), "eta + xi"),
    (dict(x0=1.5), "x0"),
    (dict(a0=-1.0), "a0"),
])
def test_params_invariants(kw, msg):
    with pytest.raises(ParameterError, match=msg.replace("+", r"\+")):
        ModelParams(**kw)


def test_caps_equal_rates_give_unit_mu(base, quad):
    assert compute_control_caps(base, quad).mu == 1.0


def test_cap_C_formula_value():
    # frozen from direct evaluation of the formula arithmetic
    caps = compute_control_caps(ModelParams(T=1), WageProfile.constant(0.25))
    assert caps.C == pytest.approx(1.7243823662270872, rel=1e-12)


def test_cap_Z_formula_value(quad):
    # frozen value of 1.05 * e^{0.05} / 2 at T = 1 per unit of sup|w'|; the
    # blended extension lifts sup|w'| slightly above 1
    caps = compute_control_caps(ModelParams(T=1), quad)
    assert quad.sup_abs_slope >= 1.0
    assert caps.Z / quad.sup_abs_slope == pytest.approx(0.5519173255974127, rel=1e-12)


def test_flat_wage_gets_positive_speed_cap():
    assert compute_control_caps(ModelParams(), WageProfile.constant(0.25)).Z == 1.0


def test_xi_zero_uses_pilot_fallback(quad):
    p = ModelParams(xi=0.0)
    caps = compute_control_caps(p, quad)
    assert math.isinf(caps.Z) and not caps.z_from_bound
    assert compute_control_caps(p, quad, pilot_speed=0.3).Z == pytest.approx(0.6)


@settings(max_examples=60, deadline=None)
@given(theta=st.floats(0.05, 0.95), rho=st.floats(0.005, 0.3), r=st.floats(0.005, 0.3),
       T=st.floats(0.1, 80.0), a0=st.floats(0.0, 5.0))
def test_cap_inequality(theta, rho, r, T, a0, quad):
    p = ModelParams(theta=theta, rho=rho, r=r, T=T, a0=a0)
    caps = compute_control_caps(p, quad)
    base = (a0 + T * quad.sup_abs) / (p.p * (1 - math.exp(-r * T)) / r)
    assert caps.C ** theta > max(1.0, caps.mu ** (1 / theta)) * base
    assert caps.mu == pytest.approx(math.exp(abs(r - rho) * T))


@pytest.mark.parametrize("rho, tag", [(0.10, "Positive"), (0.02, "Negative"), (0.025, "Boundary")])
def test_regime_examples(rho, tag):
    assert classify_regime(ModelParams(rho=rho, r=0.05, theta=0.5)).tag == tag


def test_positive_subcases():
    assert classify_regime(ModelParams(rho=0.04)).subcase == "rho<r"
    assert classify_regime(ModelParams(rho=0.05)).subcase == "rho=r"
    assert classify_regime(ModelParams(rho=0.08)).subcase == "rho>r"


@settings(max_examples=100, deadline=None)
@given(rho=st.floats(0.001, 1.0), r=st.floats(0.001, 1.0), theta=st.floats(0.01, 0.99),
       k=st.floats(0.01, 100.0))
def test_regime_scale_invariance(rho, r, theta, k):
    a = classify_regime(ModelParams(rho=rho, r=r, theta=theta))
    b = classify_regime(ModelParams(rho=k * rho, r=k * r, theta=theta))
    assert a.tag == b.tag
