"""State/costate right-hand sides, fixed-step integration and residual checks.

The costate of assets is never sampled: it is ``lambda1 * exp(-r t)``.
The location costate ``y`` (p2) is integrated together with ``x`` by a
classical fixed-step Runge-Kutta scheme compiled with numba.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy.integrate import cumulative_simpson, simpson

from .model import ControlCaps, ModelParams, WageProfile, ppoly_scalar

STEPS_PER_UNIT = 2048
MAX_STEPS = 1 << 20
MIN_STEPS = 16


class SingularDenominatorError(ArithmeticError):
    """Raised when F(t) = 2(xi lambda1 e^{-rt} + eta e^{-rho t}) falls below F_min."""


class DivergenceError(ArithmeticError):
    """Raised when the Cauchy integration produces a non-finite state."""


class BequestError(ValueError):
    """Raised when terminal assets are not strictly positive."""


@dataclass(frozen=True)
class Path:
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray

    @property
    def step(self) -> float:
        return float(self.t[1] - self.t[0])

    @property
    def n_steps(self) -> int:
        return len(self.t) - 1


@dataclass
class Extremal:
    alpha: float
    lambda1: float
    path: Path
    c: np.ndarray
    z: np.ndarray
    a: np.ndarray
    J: float
    caps: ControlCaps | None = None
    flags: list = field(default_factory=list)
    trace: list = field(default_factory=list)
    mirrored: bool = False

    @property
    def t(self):
        return self.path.t

    @property
    def x(self):
        return self.path.x

    @property
    def y(self):
        return self.path.y

    @property
    def aT(self) -> float:
        return float(self.a[-1])

    @property
    def XT(self) -> float:
        return float(self.path.x[-1])

    @property
    def ok(self) -> bool:
        return not self.flags


@dataclass(frozen=True)
class ResidualReport:
    stationarity_c: float
    stationarity_z: float
    transversality: float
    costate_ode: float
    positivity: float
    confinement: float

    def residuals(self) -> dict:
        """Fields that vanish at an exact extremal (``positivity`` is a margin)."""
        return {
            "stationarity_c": self.stationarity_c,
            "stationarity_z": self.stationarity_z,
            "transversality": self.transversality,
            "costate_ode": self.costate_ode,
            "confinement": self.confinement,
        }

    def passes(self, tol: float = 1e-6) -> bool:
        return self.positivity > 0 and all(v <= tol for v in self.residuals().values())

    def as_text(self) -> str:
        lines = [f"{k} = {v:.17g}" for k, v in self.residuals().items()]
        lines.insert(4, f"positivity = {self.positivity:.17g}")
        return "\n".join(lines) + "\n"


def default_steps(T: float) -> int:
    n = math.ceil(STEPS_PER_UNIT * max(1.0, T))
    n += n % 2
    return min(n, MAX_STEPS)


def _check_steps(n):
    if n < MIN_STEPS:
        raise ValueError(f"n_steps >= {MIN_STEPS} required, got {n}")
    if n % 2:
        raise ValueError("n_steps must be even (Simpson pairing)")


def F_of_t(t, lambda1: float, params: ModelParams):
    return 2.0 * (params.xi * lambda1 * np.exp(-params.r * t) + params.eta * np.exp(-params.rho * t))


def F_min(lambda1: float, params: ModelParams) -> float:
    return 1e-12 * max(params.xi * lambda1, params.eta)


def _guard_F(lambda1, params, t_max):
    if not lambda1 > 0:
        raise ValueError("lambda1 > 0 required")
    # F is decreasing in t
    if F_of_t(t_max, lambda1, params) < F_min(lambda1, params):
        raise SingularDenominatorError(f"F({t_max}) below F_min")


def rhs_cauchy(t, x, y, lambda1, params: ModelParams, profile: WageProfile):
    """(dx/dt, dy/dt) for the location/costate system."""
    _guard_F(lambda1, params, t)
    F = F_of_t(t, lambda1, params)
    _, dw, _ = profile.derivs(x)
    return y / F, -dw * lambda1 * np.exp(-params.r * t)


@numba.njit(cache=True)
def _rk4_cauchy(x, y, i0, nsteps, h, lam, xi, eta, r, rho, breaks, coefs, xs, ys):
    """Integrate ``nsteps`` RK4 steps from grid index ``i0``.

    Samples are written to ``xs``/``ys`` when they are non-empty. Returns
    (status, x_end, y_end) with status -1 on success, else the failing step.
    """
    store = xs.shape[0] > 0
    if store:
        xs[0] = x
        ys[0] = y
    for i in range(nsteps):
        t = (i0 + i) * h
        tm = t + 0.5 * h
        t1 = t + h
        e0 = lam * math.exp(-r * t)
        em = lam * math.exp(-r * tm)
        e1 = lam * math.exp(-r * t1)
        F0 = 2.0 * (xi * e0 + eta * math.exp(-rho * t))
        Fm = 2.0 * (xi * em + eta * math.exp(-rho * tm))
        F1 = 2.0 * (xi * e1 + eta * math.exp(-rho * t1))
        k1x = y / F0
        k1y = -ppoly_scalar(x, breaks, coefs)[1] * e0
        k2x = (y + 0.5 * h * k1y) / Fm
        k2y = -ppoly_scalar(x + 0.5 * h * k1x, breaks, coefs)[1] * em
        k3x = (y + 0.5 * h * k2y) / Fm
        k3y = -ppoly_scalar(x + 0.5 * h * k2x, breaks, coefs)[1] * em
        k4x = (y + h * k3y) / F1
        k4y = -ppoly_scalar(x + h * k3x, breaks, coefs)[1] * e1
        x = x + h / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
        y = y + h / 6.0 * (k1y + 2.0 * k2y + 2.0 * k3y + k4y)
        if not (math.isfinite(x) and math.isfinite(y)):
            return i + 1, x, y
        if store:
            xs[i + 1] = x
            ys[i + 1] = y
    return -1, x, y


@numba.njit(cache=True)
def _rk4_variational(x, y, u, v, i0, nsteps, h, lam, xi, eta, r, rho, breaks, coefs, xs, ys, us, vs):
    """RK4 for the state together with one direction of the equations of variation."""
    store = xs.shape[0] > 0
    if store:
        xs[0] = x
        ys[0] = y
        us[0] = u
        vs[0] = v
    for i in range(nsteps):
        t = (i0 + i) * h
        tm = t + 0.5 * h
        t1 = t + h
        e0 = lam * math.exp(-r * t)
        em = lam * math.exp(-r * tm)
        e1 = lam * math.exp(-r * t1)
        F0 = 2.0 * (xi * e0 + eta * math.exp(-rho * t))
        Fm = 2.0 * (xi * em + eta * math.exp(-rho * tm))
        F1 = 2.0 * (xi * e1 + eta * math.exp(-rho * t1))
        _, d1, c1 = ppoly_scalar(x, breaks, coefs)
        k1x = y / F0
        k1y = -d1 * e0
        k1u = v / F0
        k1v = -c1 * u * e0
        _, d2, c2 = ppoly_scalar(x + 0.5 * h * k1x, breaks, coefs)
        k2x = (y + 0.5 * h * k1y) / Fm
        k2y = -d2 * em
        k2u = (v + 0.5 * h * k1v) / Fm
        k2v = -c2 * (u + 0.5 * h * k1u) * em
        _, d3, c3 = ppoly_scalar(x + 0.5 * h * k2x, breaks, coefs)
        k3x = (y + 0.5 * h * k2y) / Fm
        k3y = -d3 * em
        k3u = (v + 0.5 * h * k2v) / Fm
        k3v = -c3 * (u + 0.5 * h * k2u) * em
        _, d4, c4 = ppoly_scalar(x + h * k3x, breaks, coefs)
        k4x = (y + h * k3y) / F1
        k4y = -d4 * e1
        k4u = (v + h * k3v) / F1
        k4v = -c4 * (u + h * k3u) * e1
        x = x + h / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
        y = y + h / 6.0 * (k1y + 2.0 * k2y + 2.0 * k3y + k4y)
        u = u + h / 6.0 * (k1u + 2.0 * k2u + 2.0 * k3u + k4u)
        v = v + h / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
        if not (math.isfinite(x) and math.isfinite(y) and math.isfinite(u) and math.isfinite(v)):
            return i + 1, x, y, u, v
        if store:
            xs[i + 1] = x
            ys[i + 1] = y
            us[i + 1] = u
            vs[i + 1] = v
    return -1, x, y, u, v


_EMPTY = np.empty(0)


def segment(params: ModelParams, profile: WageProfile, lambda1: float, x: float, y: float,
            i0: int, nsteps: int, h: float, out_x=_EMPTY, out_y=_EMPTY):
    """RK4 over grid steps [i0, i0 + nsteps]; returns the end state."""
    status, xe, ye = _rk4_cauchy(float(x), float(y), i0, nsteps, h, lambda1, params.xi, params.eta,
                                 params.r, params.rho, profile.breaks, profile.coefs, out_x, out_y)
    if status >= 0:
        raise DivergenceError(f"non-finite state at step {i0 + status}")
    return xe, ye


def segment_jacobian(params: ModelParams, profile: WageProfile, lambda1: float, x: float,
                     y: float, i0: int, nsteps: int, h: float):
    """End state and 2x2 sensitivity of the end state to the start state."""
    jac = np.empty((2, 2))
    end = None
    for col, (u, v) in enumerate(((1.0, 0.0), (0.0, 1.0))):
        status, xe, ye, ue, ve = _rk4_variational(
            float(x), float(y), u, v, i0, nsteps, h, lambda1, params.xi, params.eta, params.r,
            params.rho, profile.breaks, profile.coefs, _EMPTY, _EMPTY, _EMPTY, _EMPTY)
        if status >= 0:
            raise DivergenceError(f"non-finite state at step {i0 + status}")
        jac[:, col] = ue, ve
        end = (xe, ye)
    return end, jac


def _grid(T, n):
    t = np.arange(n + 1) * (T / n)
    t[-1] = T
    return t


def integrate_cauchy(params: ModelParams, profile: WageProfile, lambda1: float,
                     alpha: float, n_steps: int | None = None) -> Path:
    """RK4 solution of x' = y/F, y' = -w'(x) lambda1 e^{-rt} with x(0)=x0, y(0)=alpha."""
    n = default_steps(params.T) if n_steps is None else int(n_steps)
    _check_steps(n)
    _guard_F(lambda1, params, params.T)
    xs = np.empty(n + 1)
    ys = np.empty(n + 1)
    segment(params, profile, lambda1, params.x0, alpha, 0, n, params.T / n, xs, ys)
    return Path(_grid(params.T, n), xs, ys)


def integrate_variational(params: ModelParams, profile: WageProfile, lambda1: float,
                          alpha: float, n_steps: int | None = None):
    """Path together with the sensitivities dx/dalpha, dy/dalpha."""
    n = default_steps(params.T) if n_steps is None else int(n_steps)
    _check_steps(n)
    _guard_F(lambda1, params, params.T)
    xs, ys, xa, ya = (np.empty(n + 1) for _ in range(4))
    status, *_ = _rk4_variational(params.x0, float(alpha), 0.0, 1.0, 0, n, params.T / n, lambda1,
                                  params.xi, params.eta, params.r, params.rho, profile.breaks,
                                  profile.coefs, xs, ys, xa, ya)
    if status >= 0:
        raise DivergenceError(f"non-finite state at step {status} (alpha={alpha})")
    return Path(_grid(params.T, n), xs, ys), xa, ya


def consumption_rule(lambda1, t, params: ModelParams):
    if not np.all(np.asarray(lambda1) > 0):
        raise ValueError("lambda1 > 0 required")
    th = params.theta
    return (1.0 / (params.p * lambda1)) ** (1.0 / th) * np.exp((params.r - params.rho) / th * t)


def relocation_rule(y, t, lambda1, params: ModelParams):
    _guard_F(lambda1, params, np.max(t))
    return y / F_of_t(t, lambda1, params)


def _asset_forcing(params, profile, x, c, z):
    return profile(x) - params.p * c - params.xi * z**2


def _aligned(t, *arrays):
    for a in arrays:
        if np.shape(a) != np.shape(t):
            raise ValueError("sample grids are misaligned")


def integrate_assets(params: ModelParams, profile: WageProfile, t, x, c, z):
    """a(t) = e^{rt}[a0 + int_0^t (w(x) - p c - xi z^2) e^{-rs} ds], Simpson rule."""
    _aligned(t, x, c, z)
    f = _asset_forcing(params, profile, x, c, z) * np.exp(-params.r * t)
    cum = cumulative_simpson(f, x=t, initial=0.0)
    cum[-1] = simpson(f, x=t)
    return np.exp(params.r * t) * (params.a0 + cum)


def integrate_assets_rk4(params: ModelParams, profile: WageProfile, t, x, c, z) -> float:
    """Terminal assets by RK4 on a' = r a + g(t), stepping 2h over sample triples."""
    _aligned(t, x, c, z)
    if (len(t) - 1) % 2:
        raise ValueError("even number of intervals required")
    g = _asset_forcing(params, profile, x, c, z)
    H = 2.0 * (t[1] - t[0])
    r = params.r
    g0, gm, g1 = g[0:-1:2], g[1::2], g[2::2]
    # one RK4 step of the linear ODE is a -> P a + q
    def step(a, f0, fm, f1):
        k1 = r * a + f0
        k2 = r * (a + 0.5 * H * k1) + fm
        k3 = r * (a + 0.5 * H * k2) + fm
        k4 = r * (a + H * k3) + f1
        return a + H / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    Pm = step(1.0, 0.0, 0.0, 0.0)
    q = step(0.0, g0, gm, g1)
    m = len(q)
    powers = Pm ** np.arange(m - 1, -1, -1, dtype=float)
    return float(Pm**m * params.a0 + np.dot(powers, q))


def bequest_utility(aT, params: ModelParams):
    th = params.theta
    return math.exp(-params.rho * params.T) * aT ** (1.0 - th) / (1.0 - th)


def objective_eval(params: ModelParams, t, c, z, aT: float) -> float:
    """Discounted utility of consumption minus relocation disutility, plus bequest."""
    if not aT > 0:
        raise BequestError(f"bequest utility undefined for a(T) = {aT}")
    th = params.theta
    f = np.exp(-params.rho * t) * (np.asarray(c) ** (1.0 - th) / (1.0 - th) - params.eta * np.asarray(z) ** 2)
    return float(simpson(f, x=t) + bequest_utility(aT, params))


def lambda1_from_aT(aT: float, params: ModelParams) -> float:
    if not aT > 0:
        raise BequestError(f"a(T) > 0 required, got {aT}")
    return math.exp((params.r - params.rho) * params.T) * aT ** (-params.theta)


def aT_from_lambda1(lambda1: float, params: ModelParams) -> float:
    return lambda1 ** (-1.0 / params.theta) * math.exp((params.r - params.rho) / params.theta * params.T)


def verify_necessary_conditions(extremal: Extremal, params: ModelParams,
                                profile: WageProfile) -> ResidualReport:
    t, x, y = extremal.t, extremal.x, extremal.y
    lam = extremal.lambda1
    c, z = extremal.c, extremal.z
    p1 = lam * np.exp(-params.r * t)
    disc = np.exp(-params.rho * t)
    dHdc = -params.p * p1 + disc * c ** (-params.theta)
    dHdz = -2.0 * params.xi * p1 * z + y - 2.0 * params.eta * disc * z
    _, dw, _ = profile.derivs(x)
    ydot = np.gradient(y, t[1] - t[0], edge_order=2)
    defect = ydot + dw * p1
    conf = np.maximum(np.maximum(-x, x - 1.0), 0.0)
    return ResidualReport(
        stationarity_c=float(np.max(np.abs(dHdc))),
        stationarity_z=float(np.max(np.abs(dHdz))),
        transversality=float(abs(y[-1])),
        costate_ode=float(np.max(np.abs(defect))),
        positivity=float(extremal.a[-1]),
        confinement=float(np.max(conf)),
    )
