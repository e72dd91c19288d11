import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from relocopt import ModelParams, PicardConfig, WageProfile, build_kernel_table, green_kernel, picard_solve, solve_extremal
from relocopt.integral_solver import apply_kernel, endpoint_slope, second_order_defect


def test_kernel_vanishes_at_origin(base):
    assert green_kernel(0.0, 3.0, 1.2, base) == 0.0


@settings(max_examples=30, deadline=None)
@given(t=st.floats(0, 10), tau=st.floats(0, 10))
def test_kernel_symmetry(t, tau, base):
    assert green_kernel(t, tau, 1.2, base) == green_kernel(tau, t, 1.2, base)


def test_constant_denominator_kernel():
    # xi = 0 and rho -> tiny keeps F nearly constant; exact formula uses the same F
    p = ModelParams(xi=0.0, eta=0.5, rho=1e-12)
    assert green_kernel(2.0, 5.0, 1.0, p) == pytest.approx(2.0, rel=1e-9)
    table = build_kernel_table(1.0, p, 101)
    t = table.grid
    assert np.allclose(table.K, np.minimum.outer(t, t), rtol=1e-9)


def test_kernel_rejects_outside_horizon(base):
    with pytest.raises(ValueError):
        green_kernel(11.0, 1.0, 1.0, base)


def test_table_matches_pointwise_kernel(base):
    table = build_kernel_table(1.3, base, 401)
    i, j = 150, 300
    assert table.K[i, j] == pytest.approx(green_kernel(table.grid[i], table.grid[j], 1.3, base), rel=1e-10)


def test_apply_kernel_on_constant_density():
    # with F constant, int_0^T min(t, tau) dtau = tT - t^2/2
    p = ModelParams(xi=0.0, eta=0.5, rho=1e-12, T=2.0)
    table = build_kernel_table(1.0, p, 201)
    t = table.grid
    assert np.allclose(apply_kernel(table, np.ones_like(t)), t * 2.0 - t**2 / 2, atol=1e-10)


def test_constant_wage_converges_immediately():
    res = picard_solve(ModelParams(), WageProfile.constant(0.25), 1.0)
    assert res.converged and res.iterations == 1
    assert np.all(res.x == 0.25)


def test_critical_point_is_fixed(quad):
    res = picard_solve(ModelParams(x0=0.5), quad, 1.0)
    assert res.converged and np.all(res.x == 0.5)


def test_matches_shooting_on_short_horizon(quad):
    p = ModelParams(T=1)
    ext = solve_extremal(p, quad)
    res = picard_solve(p, quad, ext.lambda1, PicardConfig(n_nodes=len(ext.t)))
    assert res.converged
    assert np.max(np.abs(res.x - ext.x)) <= 1e-6
    assert second_order_defect(res.t, res.x, ext.lambda1, p, quad) <= 1e-6
    assert abs(endpoint_slope(res.t, res.x)) <= 1e-6


def test_non_contraction_is_reported(base_extremal, quad, base):
    res = picard_solve(base, quad, base_extremal.lambda1, PicardConfig(max_iter=50))
    assert not res.converged
    assert "did not converge" in res.report()


@pytest.mark.parametrize("kw", [dict(tol=0), dict(max_iter=0), dict(n_nodes=100), dict(n_nodes=8193)])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        PicardConfig(**kw)


def test_kernel_nonnegative_and_monotone(base):
    K = build_kernel_table(1.7, base, 201).K
    assert np.all(K >= 0)
    assert np.all(np.diff(K, axis=0) >= 0) and np.all(np.diff(K, axis=1) >= 0)
