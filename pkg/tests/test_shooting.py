import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import BASELINE_ORACLE
from relocopt import ModelParams, ShootConfig, WageProfile, count_extremals, shoot_alpha, solve_extremal
from relocopt.analysis import closed_form_constant_wage
from relocopt.dynamics import lambda1_from_aT
from relocopt.shooting import (
    NonConvergenceError,
    bracket_info,
    g_alpha,
    multiple_shoot,
    terminal_costate,
)
from relocopt.dynamics import integrate_cauchy

# independent collocation solve at lambda1 = 1, T = 10 (x0 = 0.25)
ALPHA_LAMBDA1_ONE = 0.6825476421593544


def test_g_constant_wage_is_identity():
    W = WageProfile.constant(0.25)
    for a in (-0.3, 0.0, 0.7):
        assert g_alpha(a, 1.2, ModelParams(), W) == a


def test_g_zero_at_critical_point(quad):
    assert g_alpha(0.0, 1.0, ModelParams(x0=0.5), quad) == 0.0


def test_g_bracket_signs(quad, base):
    info = bracket_info(1.0, base, quad)
    assert g_alpha(0.0, 1.0, base, quad) < 0 < g_alpha(info.M0 + 1, 1.0, base, quad)


def test_shoot_alpha_examples(quad, base):
    assert shoot_alpha(1.0, ModelParams(x0=0.5), quad) == 0.0
    assert shoot_alpha(1.0, base, WageProfile.constant(0.25)) == 0.0
    a = shoot_alpha(1.0, base, quad)
    assert a > 0
    assert abs(terminal_costate(a, 1.0, base, quad)) <= 1e-10
    assert a == pytest.approx(ALPHA_LAMBDA1_ONE, abs=1e-8)


def test_mirrored_bracket(quad):
    p = ModelParams(x0=0.75)
    info = bracket_info(1.0, p, quad)
    assert info.mirrored and info.bracket[1] == 0.0
    ext = solve_extremal(p, quad)
    assert ext.mirrored and ext.alpha < 0
    assert np.all(np.diff(ext.x) <= 0)
    # reflection symmetry of the quadratic wage about the peak
    ref = solve_extremal(ModelParams(x0=0.25), quad)
    assert ext.alpha == pytest.approx(-ref.alpha, rel=1e-8)


def test_long_horizon_uses_multiple_shooting(quad):
    p = ModelParams(T=30)
    a = shoot_alpha(1.0, p, quad)
    assert abs(terminal_costate(a, 1.0, p, quad)) > 1e-10  # single shot from alpha is hopeless
    ext = solve_extremal(p, quad)
    assert abs(ext.y[-1]) <= 1e-10 and ext.ok


def test_multiple_shoot_from_rough_guess(quad, base):
    guess = integrate_cauchy(base, quad, 1.0, 0.5)
    res = multiple_shoot(1.0, base, quad, guess.n_steps, guess, tol=1e-12)
    assert abs(res.residual) <= 1e-12
    assert res.alpha == pytest.approx(ALPHA_LAMBDA1_ONE, abs=1e-8)


@pytest.mark.parametrize("lam", [0.1, 1.0, 10.0, 100.0])
def test_unique_root_concave_wage(lam, base, quad):
    assert count_extremals(lam, base, quad).count == 1


def test_unique_root_constant_wage(base):
    scan = count_extremals(1.0, base, WageProfile.constant(0.25))
    assert scan.count == 1 and scan.roots[0] == pytest.approx(0.0, abs=1e-14)


def test_double_peak_scan_reports_multiple(double_peak):
    counts = [count_extremals(lam, ModelParams(), double_peak).count for lam in (0.1, 1.0, 10.0, 100.0)]
    # frozen from the scan itself: no uniqueness claim for this profile
    assert counts == [1, 1, 2, 2]


def test_baseline_matches_collocation_oracle(base_extremal):
    e = base_extremal
    for key in ("lambda1", "alpha", "aT", "XT", "J"):
        assert getattr(e, key) == pytest.approx(BASELINE_ORACLE[key], rel=1e-8), key


def test_baseline_qualitative(base_extremal):
    assert np.all(np.diff(base_extremal.x) > 0)
    assert base_extremal.XT < 0.5
    assert base_extremal.ok


def test_outer_consistency(base_extremal, base):
    lam = lambda1_from_aT(base_extremal.aT, base)
    assert abs(base_extremal.lambda1 - lam) / lam <= 1e-9


def test_stationary_extremal(quad):
    e = solve_extremal(ModelParams(x0=0.5), quad)
    assert np.all(e.x == 0.5) and np.all(e.z == 0.0) and e.alpha == 0.0


def test_constant_wage_matches_closed_form():
    p = ModelParams()
    e = solve_extremal(p, WageProfile.constant(0.25))
    cf = closed_form_constant_wage(p, 0.25)
    assert e.aT == pytest.approx(cf.aT, rel=1e-6)
    assert e.c[0] == pytest.approx(cf.consumption(0.0), rel=1e-6)
    assert e.J == pytest.approx(cf.J, rel=1e-6)
    assert np.max(np.abs(e.z)) <= 1e-8


def test_fixed_point_outer_loop_short_horizon(quad):
    p = ModelParams(T=1)
    fp = solve_extremal(p, quad, ShootConfig(outer="fixed_point"))
    br = solve_extremal(p, quad)
    assert fp.lambda1 == pytest.approx(br.lambda1, rel=1e-8)


def test_fixed_point_outer_loop_fails_at_long_horizon(quad):
    with pytest.raises(NonConvergenceError):
        solve_extremal(ModelParams(T=10), quad, ShootConfig(outer="fixed_point"))


@pytest.mark.parametrize("kw", [dict(alpha_tol=0), dict(damping=1.5), dict(grid_points=4),
                                dict(outer="newton"), dict(max_outer=0)])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        ShootConfig(**kw)


@settings(max_examples=12, deadline=None)
@given(theta=st.floats(0.2, 0.8), rho=st.floats(0.01, 0.15), r=st.floats(0.01, 0.15),
       T=st.floats(1, 20), x0=st.floats(0, 1))
def test_random_extremals_are_confined(theta, rho, r, T, x0, quad):
    p = ModelParams(theta=theta, rho=rho, r=r, T=T, x0=x0)
    e = solve_extremal(p, quad)
    assert e.ok
    assert np.all((e.x >= 0) & (e.x <= 1))
    assert e.aT > 0
    assert math.isfinite(e.J)


@settings(max_examples=20, deadline=None)
@given(lam=st.floats(0.01, 200), x0=st.floats(0.0, 0.45))
def test_root_is_bracketed(lam, x0, quad):
    p = ModelParams(x0=x0)
    info = bracket_info(lam, p, quad)
    lo, hi = info.bracket
    assert terminal_costate(lo, lam, p, quad) * terminal_costate(hi, lam, p, quad) < 0


@pytest.mark.parametrize("lam", np.logspace(-1, 2, 7))
def test_uniqueness_on_log_grid(lam, quad):
    assert count_extremals(float(lam), ModelParams(rho=0.02, T=20), quad).count == 1
