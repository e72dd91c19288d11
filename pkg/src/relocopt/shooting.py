"""Shooting on the initial location costate and the outer loop on lambda1."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import simpson
from scipy.optimize import brentq

from .dynamics import (
    Extremal,
    Path,
    F_of_t,
    aT_from_lambda1,
    consumption_rule,
    default_steps,
    integrate_assets,
    integrate_cauchy,
    lambda1_from_aT,
    objective_eval,
    segment,
    segment_jacobian,
)
from .model import ModelParams, WageProfile, compute_control_caps

log = logging.getLogger(__name__)


class NoRootError(RuntimeError):
    def __init__(self, msg, g_samples=()):
        super().__init__(msg)
        self.g_samples = list(g_samples)


class NonConvergenceError(RuntimeError):
    def __init__(self, msg, trace=()):
        super().__init__(msg)
        self.trace = list(trace)


@dataclass(frozen=True)
class ShootConfig:
    alpha_tol: float = 1e-10
    lambda_tol: float = 1e-9
    damping: float = 0.5
    max_outer: int = 200
    grid_points: int = 64
    n_steps: int | None = None
    outer: str = "bracket"

    def __post_init__(self):
        if not (self.alpha_tol > 0 and self.lambda_tol > 0):
            raise ValueError("tolerances > 0 violated")
        if not 0 < self.damping <= 1:
            raise ValueError("damping ∈ (0,1] violated")
        if self.grid_points < 16:
            raise ValueError("grid_points ≥ 16 violated")
        if self.max_outer < 1:
            raise ValueError("max_outer ≥ 1 violated")
        if self.outer not in ("bracket", "fixed_point"):
            raise ValueError("outer must be 'bracket' or 'fixed_point'")


@dataclass
class BracketInfo:
    M0: float
    bracket: tuple
    g_samples: list = field(default_factory=list)
    mirrored: bool = False


@dataclass
class ExtremalScan:
    alphas: np.ndarray
    g: np.ndarray
    roots: list

    @property
    def count(self) -> int:
        return len(self.roots)


def _steps(params, n_steps):
    return default_steps(params.T) if n_steps is None else n_steps


def bracket_info(lambda1: float, params: ModelParams, profile: WageProfile) -> BracketInfo:
    """Search interval [0, M0 + 1] for alpha, mirrored when w'(x0) < 0."""
    M0 = lambda1 * profile.sup_abs_slope * (-math.expm1(-params.r * params.T)) / params.r
    slope0 = profile.slope(params.x0)
    if slope0 < 0:
        return BracketInfo(M0, (-(M0 + 1.0), 0.0), mirrored=True)
    return BracketInfo(M0, (0.0, M0 + 1.0))


def terminal_costate(alpha, lambda1, params, profile, n_steps=None) -> float:
    """y(T, alpha) from the Cauchy integration."""
    return float(integrate_cauchy(params, profile, lambda1, alpha, _steps(params, n_steps)).y[-1])


def g_alpha(alpha: float, lambda1: float, params: ModelParams, profile: WageProfile,
            n_steps: int | None = None) -> float:
    """alpha - lambda1 * int_0^T w'(x(tau, alpha)) e^{-r tau} dtau, by Simpson."""
    path = integrate_cauchy(params, profile, lambda1, alpha, _steps(params, n_steps))
    _, dw, _ = profile.derivs(path.x)
    return float(alpha - lambda1 * simpson(dw * np.exp(-params.r * path.t), x=path.t))


@dataclass
class ShotResult:
    alpha: float
    path: Path
    residual: float
    method: str
    nodes: tuple | None = None
    g_samples: list = field(default_factory=list)


def _brent_shot(lambda1, params, profile, config, n) -> ShotResult:
    if profile.is_constant or profile.slope(params.x0) == 0.0:
        path = integrate_cauchy(params, profile, lambda1, 0.0, n)
        if abs(path.y[-1]) <= config.alpha_tol:
            return ShotResult(0.0, path, float(path.y[-1]), "brent")
    info = bracket_info(lambda1, params, profile)
    lo, hi = info.bracket

    def f(a):
        return terminal_costate(a, lambda1, params, profile, n)

    flo, fhi = f(lo), f(hi)
    info.g_samples = [(lo, flo), (hi, fhi)]
    if flo == 0.0 or fhi == 0.0:
        root = lo if flo == 0.0 else hi
    elif flo * fhi > 0:
        raise NoRootError(f"no sign change of y(T, alpha) on [{lo}, {hi}]", info.g_samples)
    else:
        root = brentq(f, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    path = integrate_cauchy(params, profile, lambda1, root, n)
    return ShotResult(float(root), path, float(path.y[-1]), "brent", g_samples=info.g_samples)


def _segment_bounds(lambda1, params, profile, n):
    """Grid indices splitting [0, T] into pieces of bounded growth.

    Near the peak the linearised system grows like exp(kappa t) with
    kappa^2 = sup|w''| * max_t lambda1 e^{-rt} / F(t).
    """
    curv = float(np.max(np.abs(profile._critical_values(2))))
    ends = np.array([0.0, params.T])
    ratio = float(np.max(lambda1 * np.exp(-params.r * ends) / F_of_t(ends, lambda1, params)))
    kappa = math.sqrt(curv * ratio)
    length = params.T if kappa == 0 else min(params.T, 2.0 / kappa)
    K = min(max(1, math.ceil(params.T / length)), n // 8)
    return np.unique(np.round(np.linspace(0, n, K + 1)).astype(np.int64))


def _turnpike_guess(guess: Path, profile: WageProfile, x0: float, nodes):
    """Node values from a shot that peels away from the peak late in the horizon.

    The shot is trusted while it keeps moving monotonically toward the peak
    without crossing it; later nodes sit at (x1, 0).
    """
    x, y = guess.x, guess.y
    xs = x[nodes].copy()
    ys = y[nodes].copy()
    if profile.is_constant:
        return np.full(len(nodes), x0), np.zeros(len(nodes))
    x1 = profile.peak
    side = np.sign(x1 - x0)
    ok = np.isfinite(x) & np.isfinite(y) & (x >= 0.0) & (x <= 1.0)
    if side != 0:
        ok &= side * (x1 - x) >= 0
        ok &= np.concatenate([[True], side * np.diff(x) >= 0])
    bad = np.flatnonzero(~ok)
    if bad.size:
        cut = nodes >= bad[0]
        xs[cut] = x1
        ys[cut] = 0.0
    xs[0] = x0
    return xs, ys


def multiple_shoot(lambda1: float, params: ModelParams, profile: WageProfile, n: int,
                   guess: Path, tol: float = 1e-12, max_iter: int = 50) -> ShotResult:
    """Newton solve of the Cauchy matching conditions on grid-aligned segments.

    Unknowns are alpha and (x, y) at the interior segment starts. Continuity
    across segments and y(T) = 0 are the equations; segment Jacobians come
    from the equations of variation.
    """
    h = params.T / n
    idx = _segment_bounds(lambda1, params, profile, n)
    K = len(idx) - 1
    xs, ys = _turnpike_guess(guess, profile, params.x0, idx[:-1])
    m = 2 * K - 1

    def unpack(u):
        return np.concatenate([[params.x0], u[1::2]]), np.concatenate([[u[0]], u[2::2]])

    def residual(u, with_jac):
        sx, sy = unpack(u)
        R = np.empty(m)
        Jm = np.zeros((m, m)) if with_jac else None
        for k in range(K):
            if with_jac:
                (xe, ye), jac = segment_jacobian(params, profile, lambda1, sx[k], sy[k],
                                                 int(idx[k]), int(idx[k + 1] - idx[k]), h)
            else:
                xe, ye = segment(params, profile, lambda1, sx[k], sy[k],
                                 int(idx[k]), int(idx[k + 1] - idx[k]), h)
            rows = slice(2 * k, 2 * k + 2) if k < K - 1 else slice(m - 1, m)
            if k < K - 1:
                R[2 * k] = xe - sx[k + 1]
                R[2 * k + 1] = ye - sy[k + 1]
            else:
                R[m - 1] = ye
            if with_jac:
                block = jac if k < K - 1 else jac[1:2]
                if k == 0:
                    Jm[rows, 0] = block[:, 1]
                else:
                    Jm[rows, 2 * k - 1:2 * k + 1] = block
                if k < K - 1:
                    Jm[2 * k, 2 * k + 1] = -1.0
                    Jm[2 * k + 1, 2 * k + 2] = -1.0
        return R, Jm

    u = np.empty(m)
    u[0] = ys[0]
    u[1::2] = xs[1:]
    u[2::2] = ys[1:]
    R, Jm = residual(u, True)
    norm = float(np.max(np.abs(R)))
    for it in range(max_iter):
        log.debug("multiple shooting iter %d: K=%d max|R|=%.3e", it, K, norm)
        if norm <= tol:
            break
        step = np.linalg.solve(Jm, -R)
        lam = 1.0
        while lam > 1e-6:
            trial = u + lam * step
            Rt, _ = residual(trial, False)
            nt = float(np.max(np.abs(Rt)))
            if nt < norm:
                break
            lam *= 0.5
        else:
            break
        u = trial
        R, Jm = residual(u, True)
        norm = float(np.max(np.abs(R)))
    sx, sy = unpack(u)
    X = np.empty(n + 1)
    Y = np.empty(n + 1)
    for k in range(K):
        a, b = int(idx[k]), int(idx[k + 1])
        segment(params, profile, lambda1, sx[k], sy[k], a, b - a, h, X[a:b + 1], Y[a:b + 1])
        # the next segment restarts from its own node
    for k in range(1, K):
        X[idx[k]], Y[idx[k]] = sx[k], sy[k]
    path = Path(guess.t, X, Y)
    return ShotResult(float(sy[0]), path, float(Y[-1]), "multiple", (idx, sx, sy))


def _shoot(lambda1, params, profile, config, n, warm: ShotResult | None = None) -> ShotResult:
    if warm is not None and warm.method == "multiple":
        return multiple_shoot(lambda1, params, profile, n, warm.path, tol=0.01 * config.alpha_tol)
    shot = _brent_shot(lambda1, params, profile, config, n)
    if abs(shot.residual) <= config.alpha_tol:
        return shot
    # y(T, alpha) is too steep for double precision: split the horizon
    log.debug("single shooting residual %.3e; switching to multiple shooting", shot.residual)
    multi = multiple_shoot(lambda1, params, profile, n, shot.path, tol=0.01 * config.alpha_tol)
    if abs(multi.residual) > config.alpha_tol:
        raise NoRootError(f"|y(T, alpha*)| = {multi.residual:.3e} exceeds alpha_tol",
                          shot.g_samples)
    return multi


def shoot_alpha(lambda1: float, params: ModelParams, profile: WageProfile,
                config: ShootConfig | None = None) -> float:
    """Initial costate alpha* with |y(T, alpha*)| <= alpha_tol.

    Brent on alpha -> y(T, alpha) over the bracket; when the terminal map is
    too steep for the tolerance (long horizons) the Brent root seeds a
    multiple-shooting Newton solve on the same grid.
    """
    config = config or ShootConfig()
    return _shoot(lambda1, params, profile, config, _steps(params, config.n_steps)).alpha


def count_extremals(lambda1: float, params: ModelParams, profile: WageProfile,
                    grid_points: int = 64, n_steps: int | None = None) -> ExtremalScan:
    """Scan g on a uniform alpha grid over the bracket and polish each sign change."""
    info = bracket_info(lambda1, params, profile)
    lo, hi = info.bracket
    alphas = np.linspace(lo, hi, grid_points)
    n = _steps(params, n_steps)
    g = np.array([g_alpha(a, lambda1, params, profile, n) for a in alphas])
    roots = []
    for i in range(grid_points):
        if g[i] == 0.0:
            roots.append(float(alphas[i]))
        elif i + 1 < grid_points and g[i + 1] != 0.0 and g[i] * g[i + 1] < 0:
            roots.append(float(brentq(g_alpha, alphas[i], alphas[i + 1],
                                      args=(lambda1, params, profile, n), xtol=1e-14)))
    return ExtremalScan(alphas, g, roots)


def build_extremal(lambda1: float, alpha: float, params: ModelParams,
                   profile: WageProfile, n_steps: int, path: Path | None = None) -> Extremal:
    """Assemble states, controls, assets and objective for given (lambda1, alpha)."""
    if path is None:
        path = integrate_cauchy(params, profile, lambda1, alpha, n_steps)
    t = path.t
    c = consumption_rule(lambda1, t, params)
    z = path.y / F_of_t(t, lambda1, params)
    a = integrate_assets(params, profile, t, path.x, c, z)
    J = objective_eval(params, t, c, z, a[-1]) if a[-1] > 0 else -math.inf
    return Extremal(alpha=float(alpha), lambda1=float(lambda1), path=path, c=c, z=z, a=a, J=J)


def initial_lambda1(params: ModelParams, profile: WageProfile) -> float:
    from .analysis import closed_form_constant_wage

    W = float(profile(params.x0))
    sol = closed_form_constant_wage(params, W)
    if not sol.aT > 0:
        sol = closed_form_constant_wage(params, profile.sup_abs)
    if not sol.aT > 0:
        return 1.0
    return sol.lambda1


def _flag(ext: Extremal, params, profile, config):
    caps = compute_control_caps(params, profile, pilot_speed=float(np.max(np.abs(ext.z))))
    ext.caps = caps
    flags = []
    if abs(ext.y[-1]) > config.alpha_tol:
        flags.append("transversality")
    if not ext.a[-1] > 0:
        flags.append("asset_positivity")
    if not (np.all(ext.c > 0) and np.all(ext.c < caps.C)):
        flags.append("consumption_cap")
    if not np.all(np.abs(ext.z) < caps.Z):
        flags.append("speed_cap")
    if np.any(ext.x < 0) or np.any(ext.x > 1):
        flags.append("confinement")
    ext.flags = flags
    if flags:
        log.warning("extremal flagged: %s", ", ".join(flags))
    return ext


def solve_extremal(params: ModelParams, profile: WageProfile,
                   config: ShootConfig | None = None) -> Extremal:
    """Solve the necessary conditions with lambda1 determined self-consistently.

    ``config.outer == "bracket"`` (default) finds the root in log(lambda1) of
    a(T; lambda1) - a_target(lambda1) by Brent's method;
    ``"fixed_point"`` runs the damped iteration lambda1 <- (1-w) lambda1 + w lambda1'.
    """
    config = config or ShootConfig()
    n = _steps(params, config.n_steps)
    trace = []
    state = {"shot": None}

    def evaluate(lam):
        shot = _shoot(lam, params, profile, config, n, state["shot"])
        if abs(shot.residual) > config.alpha_tol:
            shot = _shoot(lam, params, profile, config, n)
        state["shot"] = shot
        alpha = shot.alpha
        ext = build_extremal(lam, alpha, params, profile, n, shot.path)
        trace.append({"outer": len(trace), "lambda1": lam, "alpha": alpha, "aT": ext.aT})
        log.debug("outer %d lambda1=%.12g alpha=%.12g aT=%.12g", len(trace) - 1, lam, alpha, ext.aT)
        return ext

    lam0 = initial_lambda1(params, profile)
    if config.outer == "fixed_point":
        lam = lam0
        for _ in range(config.max_outer):
            ext = evaluate(lam)
            if not ext.aT > 0:
                raise NonConvergenceError("a(T) <= 0 during fixed-point iteration", trace)
            lam_new = (1 - config.damping) * lam + config.damping * lambda1_from_aT(ext.aT, params)
            if abs(lam_new - lam) <= config.lambda_tol * lam:
                lam = lam_new
                break
            lam = lam_new
        else:
            raise NonConvergenceError(f"lambda1 iteration did not converge in {config.max_outer} steps", trace)
    else:
        def phi(L):
            lam = math.exp(L)
            return evaluate(lam).aT - aT_from_lambda1(lam, params)

        # phi increases with lambda1: more saving, smaller target
        L0 = math.log(lam0)
        f0 = phi(L0)
        step = 0.25
        lo = hi = L0
        if f0 < 0:
            fhi = f0
            while fhi < 0:
                lo, hi = hi, hi + step
                fhi = phi(hi)
                step *= 2.0
                if step > 2**40:
                    raise NonConvergenceError("could not bracket lambda1", trace)
        elif f0 > 0:
            flo = f0
            while flo > 0:
                hi, lo = lo, lo - step
                flo = phi(lo)
                step *= 2.0
                if step > 2**40:
                    raise NonConvergenceError("could not bracket lambda1", trace)
        if f0 == 0:
            Lstar = L0
        else:
            try:
                Lstar = brentq(phi, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps,
                               maxiter=config.max_outer)
            except RuntimeError as exc:
                raise NonConvergenceError(str(exc), trace) from exc
        lam = math.exp(Lstar)

    ext = evaluate(lam)
    if not ext.aT > 0:
        raise NonConvergenceError("converged lambda1 gives a(T) <= 0", trace)
    mismatch = abs(lam - lambda1_from_aT(ext.aT, params)) / lam
    if mismatch > config.lambda_tol:
        raise NonConvergenceError(f"lambda1 consistency {mismatch:.3e} exceeds lambda_tol", trace)
    ext.trace = trace
    ext.mirrored = profile.slope(params.x0) < 0
    return _flag(ext, params, profile, config)
