import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from relocopt import ModelParams, OracleConfig, WageProfile, direct_optimize, sample_controls, simulate
from relocopt.analysis import closed_form_constant_wage
from relocopt.direct_oracle import InfeasibleError, fd_gradient


def test_zero_net_saving_compounds(quad):
    p = ModelParams()
    N = 16
    J, aT, XT = simulate(p, quad, np.full(N, float(quad(p.x0)) / p.p), np.zeros(N))
    assert aT == pytest.approx(p.a0 * math.exp(p.r * p.T), rel=1e-12)
    assert XT == p.x0


def test_refinement_invariance_of_constants(quad):
    p = ModelParams(x0=0.5)
    J1 = simulate(p, quad, [0.4], [0.0])[0]
    J64 = simulate(p, quad, np.full(64, 0.4), np.zeros(64))[0]
    assert J1 == pytest.approx(J64, abs=1e-10)


def test_location_is_piecewise_linear(quad, base):
    z = np.array([0.01, -0.02, 0.03, 0.0])
    _, _, XT = simulate(base, quad, np.full(4, 0.3), z)
    assert XT == pytest.approx(base.x0 + z.sum() * base.T / 4, abs=1e-15)


def test_infeasible_control_has_minus_infinity(quad, base):
    J, aT, _ = simulate(base, quad, np.full(8, 50.0), np.zeros(8))
    assert aT < 0 and J == -math.inf


def test_batch_matches_single(quad, base):
    rng = np.random.default_rng(1)
    c = rng.uniform(0.1, 0.5, (3, 12))
    z = rng.uniform(-0.05, 0.05, (3, 12))
    Jb, aTb, _ = simulate(base, quad, c, z)
    for k in range(3):
        assert simulate(base, quad, c[k], z[k])[0] == Jb[k]


@settings(max_examples=25, deadline=None)
@given(c=st.floats(0.01, 0.4), z=st.floats(-0.05, 0.05))
def test_speed_costs_utility(c, z, quad):
    p = ModelParams(x0=0.5)
    J0 = simulate(p, quad, np.full(8, c), np.zeros(8))[0]
    J1 = simulate(p, quad, np.full(8, c), np.full(8, z))[0]
    # leaving the peak lowers wages and adds quadratic costs
    assert J1 <= J0 + 1e-15


def test_sampled_controls_are_interval_means(base_extremal):
    c, z = sample_controls(base_extremal, 1)
    T = base_extremal.t[-1]
    from scipy.integrate import simpson
    assert c[0] == pytest.approx(simpson(base_extremal.c, x=base_extremal.t) / T, rel=1e-12)
    assert z[0] == pytest.approx(simpson(base_extremal.z, x=base_extremal.t) / T, rel=1e-12)


def test_constant_wage_oracle():
    p = ModelParams()
    sol = direct_optimize(p, WageProfile.constant(0.25), N=32)
    cf = closed_form_constant_wage(p, 0.25)
    assert np.max(np.abs(sol.z)) <= 1e-3
    assert sol.J == pytest.approx(cf.J, rel=1e-5)


def test_single_interval_matches_grid_search(quad):
    p = ModelParams(T=2.0)
    sol = direct_optimize(p, quad, N=1)
    cs = np.linspace(0.05, 1.5, 300)
    zs = np.linspace(-0.3, 0.3, 301)
    C, Z = np.meshgrid(cs, zs, indexing="ij")
    J, _, _ = simulate(p, quad, C.reshape(-1, 1), Z.reshape(-1, 1))
    k = int(np.argmax(J))
    dc, dz = cs[1] - cs[0], zs[1] - zs[0]
    assert abs(sol.c[0] - C.ravel()[k]) <= dc
    assert abs(sol.z[0] - Z.ravel()[k]) <= dz
    assert sol.J >= J[k] - 1e-12


def test_fd_gradient_on_smooth_quadratic_direction(quad, base):
    c = np.full(8, 0.3)
    z = np.full(8, 0.02)
    g = fd_gradient(base, quad, c, z)
    h = 1e-5
    e = np.zeros(8)
    e[3] = h
    fd = (simulate(base, quad, c + e, z)[0] - simulate(base, quad, c - e, z)[0]) / (2 * h)
    assert g[3] == pytest.approx(fd, rel=1e-5)


def test_infeasible_problem_raises(quad):
    p = ModelParams(a0=0.0, x0=0.0, T=1.0)
    with pytest.raises(InfeasibleError):
        direct_optimize(p, WageProfile.constant(-1.0), N=8,
                        config=OracleConfig(N=8, max_iter=50, penalty_rounds=1))


@pytest.mark.parametrize("kw", [dict(N=4), dict(tol=0), dict(penalty_growth=1.0), dict(fd_step=0)])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        OracleConfig(**kw)


@pytest.mark.slow
def test_dominance_on_doubling_ladder(quad, base, base_extremal):
    Js = [direct_optimize(base, quad, N=N, warm=base_extremal).J for N in (8, 16, 32, 64, 128)]
    assert all(b >= a - 1e-6 * abs(a) for a, b in zip(Js, Js[1:]))


def test_caps_inactive_at_optimum(quad, base, base_extremal):
    from relocopt import compute_control_caps

    sol = direct_optimize(base, quad, N=32, warm=base_extremal)
    caps = compute_control_caps(base, quad)
    assert np.all(sol.c < 0.99 * caps.C) and np.all(sol.c > 0)
    assert np.all(np.abs(sol.z) < 0.99 * caps.Z)
    assert sol.aT > 0
