"""Horizon sweeps, growth-rate fits, constant-wage closed forms and peak reports."""
from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .dynamics import lambda1_from_aT
from .model import ModelParams, WageProfile, classify_regime
from .shooting import NoRootError, NonConvergenceError, ShootConfig, solve_extremal

log = logging.getLogger(__name__)


def _rel_expm1_over(m, T):
    """(1 - e^{-mT}) / m, continuous at m = 0."""
    if m == 0:
        return T
    return -math.expm1(-m * T) / m


@dataclass(frozen=True)
class ConstantWageSolution:
    aT: float
    lambda1: float
    J: float
    c_scale: float
    c_rate: float
    T: float

    def consumption(self, t):
        """c(t) = p^{-1/theta} aT e^{((rho-r)/theta)(T-t)}."""
        return self.c_scale * np.exp(self.c_rate * (self.T - np.asarray(t, float)))


def closed_form_constant_wage(params: ModelParams, W: float) -> ConstantWageSolution:
    """Optimal terminal assets, lambda1 and J when w(x) == W (so z == 0)."""
    rho, r, th, p, T = params.rho, params.r, params.theta, params.p, params.T
    k = (rho - r) / th
    m = (rho - r * (1.0 - th)) / th
    Q = math.exp(k * T) * _rel_expm1_over(m, T)
    denom = 1.0 + math.exp(r * T) * p ** ((th - 1.0) / th) * Q
    assert denom > 0
    aT = math.exp(r * T) * (params.a0 + W * (-math.expm1(-r * T)) / r) / denom
    if aT <= 0:
        return ConstantWageSolution(aT, math.inf, -math.inf, 0.0, k, T)
    c_scale = p ** (-1.0 / th) * aT
    # discounted consumption utility integrates in closed form with the same rate m
    running = c_scale ** (1.0 - th) * math.exp(k * (1.0 - th) * T) * _rel_expm1_over(m, T) / (1.0 - th)
    J = running + math.exp(-rho * T) * aT ** (1.0 - th) / (1.0 - th)
    return ConstantWageSolution(aT, lambda1_from_aT(aT, params), J, c_scale, k, T)


@dataclass(frozen=True)
class SweepRecord:
    T: float
    aT: float
    lambda1: float
    XT: float
    J: float
    regime: str
    converged: bool
    x_min: float = math.nan
    x_max: float = math.nan
    x_increasing: bool = False


def _solve_one(args):
    params, profile, config = args
    try:
        ext = solve_extremal(params, profile, config)
    except (NonConvergenceError, NoRootError, ArithmeticError) as exc:
        log.warning("T=%g did not converge: %s", params.T, exc)
        return SweepRecord(params.T, math.nan, math.nan, math.nan, math.nan,
                           str(classify_regime(params)), False)
    x = ext.x
    return SweepRecord(params.T, ext.aT, ext.lambda1, ext.XT, ext.J, str(classify_regime(params)),
                       ext.ok, float(x.min()), float(x.max()), bool(np.all(np.diff(x) > 0)))


def sweep_horizon(params: ModelParams, profile: WageProfile, T_list,
                  config: ShootConfig | None = None, jobs: int = 1) -> list[SweepRecord]:
    """Solve independently for every horizon; failures are recorded, not raised."""
    T_list = [float(T) for T in T_list]
    if len(T_list) < 3 or np.any(np.diff(T_list) <= 0):
        raise ValueError("T list must be increasing with at least 3 points")
    config = config or ShootConfig()
    tasks = [(params.replace(T=T), profile, config) for T in T_list]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(_solve_one, tasks))
    else:
        records = [_solve_one(t) for t in tasks]
    if not profile.is_constant and params.x0 < profile.peak:
        x1 = profile.peak
        for rec in records:
            if not rec.converged:
                continue
            if rec.XT > x1:
                raise AssertionError(f"X(T) = {rec.XT} right of the peak {x1} at T = {rec.T}")
            if rec.XT == x1:
                # the gap x1 - X(T) decays exponentially and drops below float spacing
                log.warning("X(T) rounds to the peak at T=%g", rec.T)
    return records


@dataclass(frozen=True)
class GrowthFit:
    slope: float
    intercept: float
    residual: float
    window: tuple


def fit_growth_rate(records, field: str = "aT", regime: str | None = None,
                    theta: float | None = None) -> GrowthFit:
    """Least-squares line through (T, log field) over the largest-T half.

    In the Boundary regime the polynomial factor is removed first:
    log(1+T) is added for ``aT`` and theta*log(1+T) subtracted for ``lambda1``.
    """
    recs = sorted((r for r in records if r.converged), key=lambda r: r.T)
    if len(recs) < 4:
        raise ValueError("at least 4 converged records required")
    T = np.array([r.T for r in recs])
    v = np.array([getattr(r, field) for r in recs], dtype=float)
    if np.any(v <= 0):
        raise ValueError(f"{field} must be positive to fit log growth")
    y = np.log(v)
    regime = regime if regime is not None else recs[0].regime
    if regime.startswith("Boundary"):
        if field == "aT":
            y = y + np.log1p(T)
        elif field == "lambda1":
            if theta is None:
                raise ValueError("theta needed for the Boundary lambda1 correction")
            y = y - theta * np.log1p(T)
    half = len(T) // 2
    Tt, yt = T[half:], y[half:]
    slope, intercept = np.polyfit(Tt, yt, 1)
    resid = float(np.max(np.abs(yt - (slope * Tt + intercept))))
    return GrowthFit(float(slope), float(intercept), resid, (float(Tt[0]), float(Tt[-1])))


def stalling_bound(params: ModelParams, profile: WageProfile, lambda1: float) -> float:
    """x0 + lambda1 w'(x0) / (2 rho (r - rho) eta), valid for rho in (r(1-theta), r)."""
    rho, r, th, eta = params.rho, params.r, params.theta, params.eta
    if not r * (1 - th) < rho < r:
        raise ValueError("stalling bound needs rho ∈ (r(1-theta), r)")
    if eta <= 0:
        raise ValueError("stalling bound needs eta > 0")
    return params.x0 + lambda1 * profile.slope(params.x0) / (2.0 * rho * (r - rho) * eta)


@dataclass
class PeakGapReport:
    regime: str
    x1: float
    T: list
    XT: list
    gaps: list
    gap_decreasing: bool
    l_estimate: float
    bounds: list | None = None
    bound_holds: bool | None = None
    bound_below_peak: bool | None = None

    def lines(self):
        out = [f"regime = {self.regime}", f"x1 = {self.x1:.17g}",
               f"l_estimate = {self.l_estimate:.17g}", f"gap_decreasing = {self.gap_decreasing}"]
        if self.bounds is not None:
            out += [f"bound_holds = {self.bound_holds}", f"bound_below_peak = {self.bound_below_peak}",
                    f"max_bound = {max(self.bounds):.17g}"]
        return out


def peak_gap_report(params: ModelParams, profile: WageProfile, records) -> PeakGapReport:
    """Classify the approach of X(T) to the wage peak over a sweep."""
    recs = sorted((r for r in records if r.converged), key=lambda r: r.T)
    if not recs:
        raise ValueError("no converged records")
    x1 = profile.peak
    T = [r.T for r in recs]
    XT = [r.XT for r in recs]
    gaps = [x1 - x for x in XT]
    # strict decrease while the gap is resolvable; once X(T) rounds onto the
    # peak the gap stays at exactly 0
    dec = all(b < a or a == b == 0.0 for a, b in zip(gaps, gaps[1:]))
    regime = classify_regime(params)
    rep = PeakGapReport(str(regime), x1, T, XT, gaps, dec, XT[-1])
    rho, r, th = params.rho, params.r, params.theta
    if r * (1 - th) < rho < r:
        rep.bounds = [stalling_bound(params.replace(T=rec.T), profile, rec.lambda1) for rec in recs]
        rep.bound_holds = all(x <= b for x, b in zip(XT, rep.bounds))
        rep.bound_below_peak = all(b < x1 for b in rep.bounds)
    return rep
