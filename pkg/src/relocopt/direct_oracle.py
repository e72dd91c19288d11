"""Direct transcription: maximise J over piecewise-constant controls.

Controls are constant on N equal intervals. Location is then piecewise
linear and exact, assets follow from RK4 substeps of the linear asset
equation, and the running utility is integrated by Simpson. The optimizer
is a projected gradient ascent with central finite-difference gradients, a
Barzilai-Borwein trial step, Armijo backtracking and a quadratic penalty on
the terminal asset floor. It never uses the necessary conditions.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy.integrate import cumulative_simpson, simpson

from .dynamics import Extremal
from .model import ModelParams, WageProfile, compute_control_caps, ppoly_scalar

log = logging.getLogger(__name__)


class InfeasibleError(RuntimeError):
    """Raised when no start reaches a terminal asset level above the floor."""


@dataclass(frozen=True)
class OracleConfig:
    N: int = 128
    resolution: int = 256
    tol: float = 1e-5
    max_iter: int = 4000
    penalty_rounds: int = 4
    penalty_growth: float = 10.0
    penalty0: float = 1e2
    seed: int = 0
    fd_step: float = 1e-6

    def __post_init__(self):
        if not 8 <= self.N <= 512:
            raise ValueError("N ∈ [8, 512] violated")
        if self.resolution < 2 or self.tol <= 0 or self.max_iter < 1:
            raise ValueError("resolution ≥ 2, tol > 0, max_iter ≥ 1 required")
        if self.penalty_rounds < 1 or self.penalty_growth <= 1 or self.penalty0 <= 0:
            raise ValueError("invalid penalty schedule")
        if not self.fd_step > 0:
            raise ValueError("fd_step > 0 violated")


@dataclass
class DirectSolution:
    N: int
    c: np.ndarray
    z: np.ndarray
    J: float
    aT: float
    iterations: int
    XT: float = math.nan
    start: str = ""
    feasible: bool = True
    converged: bool = False
    seed: int = 0
    starts: dict = field(default_factory=dict)
    T: float = 1.0

    @property
    def t(self) -> np.ndarray:
        """Interval boundaries."""
        return np.linspace(0.0, self.T, self.N + 1)

    def x_nodes(self, x0: float) -> np.ndarray:
        """Location at the interval boundaries."""
        return x0 + np.concatenate([[0.0], np.cumsum(self.z)]) * (self.T / self.N)


@dataclass(frozen=True)
class SimResult:
    J: np.ndarray
    aT: np.ndarray
    XT: np.ndarray
    feasible: np.ndarray


@numba.njit(cache=True)
def _simulate_batch(c, z, x0, a0, T, r, xi, p, m, breaks, coefs, aT_out, XT_out):
    B, N = c.shape
    dt = T / N
    h = dt / m
    for b in range(B):
        x = x0
        a = a0
        for i in range(N):
            ci = c[b, i]
            zi = z[b, i]
            cost = p * ci + xi * zi * zi
            f0 = ppoly_scalar(x, breaks, coefs)[0] - cost
            for k in range(m):
                s0 = k * h
                fm = ppoly_scalar(x + zi * (s0 + 0.5 * h), breaks, coefs)[0] - cost
                f1 = ppoly_scalar(x + zi * (s0 + h), breaks, coefs)[0] - cost
                k1 = r * a + f0
                k2 = r * (a + 0.5 * h * k1) + fm
                k3 = r * (a + 0.5 * h * k2) + fm
                k4 = r * (a + h * k3) + f1
                a += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
                f0 = f1
            x = x + zi * dt
        aT_out[b] = a
        XT_out[b] = x


def substeps(params: ModelParams, N: int, resolution: int = 256) -> int:
    """Even number of RK4 substeps per interval giving about ``resolution`` per unit time."""
    m = max(2, math.ceil(resolution * params.T / N))
    return m + m % 2


def aT_floor(params: ModelParams) -> float:
    return 1e-6 * params.a0 * math.exp(params.r * params.T) if params.a0 > 0 else 1e-8


class _Problem:
    """Cached quadrature weights for one (params, profile, N)."""

    def __init__(self, params: ModelParams, profile: WageProfile, N: int, resolution: int):
        self.params = params
        self.profile = profile
        self.N = N
        self.m = substeps(params, N, resolution)
        dt = params.T / N
        s = np.linspace(0.0, dt, self.m + 1)
        # Simpson weight of e^{-rho t} on each interval
        self.E = np.array([simpson(np.exp(-params.rho * (i * dt + s)), x=s) for i in range(N)])
        self.floor = aT_floor(params)

    def _evaluate(self, c, z):
        pr = self.params
        c2 = np.ascontiguousarray(np.atleast_2d(c), dtype=float)
        z2 = np.ascontiguousarray(np.atleast_2d(z), dtype=float)
        if c2.shape != z2.shape or c2.shape[1] != self.N:
            raise ValueError("control arrays must have shape (B, N)")
        aT = np.empty(c2.shape[0])
        XT = np.empty(c2.shape[0])
        _simulate_batch(c2, z2, pr.x0, pr.a0, pr.T, pr.r, pr.xi, pr.p, self.m,
                        self.profile.breaks, self.profile.coefs, aT, XT)
        th = pr.theta
        util = np.maximum(c2, 0.0) ** (1.0 - th) / (1.0 - th) - pr.eta * z2 ** 2
        return util @ self.E, aT, XT

    def _bequest(self, aT):
        th = self.params.theta
        return math.exp(-self.params.rho * self.params.T) * aT ** (1.0 - th) / (1.0 - th)

    def simulate(self, c, z) -> SimResult:
        running, aT, XT = self._evaluate(c, z)
        feasible = aT > 0
        J = np.full_like(aT, -np.inf)
        J[feasible] = running[feasible] + self._bequest(aT[feasible])
        return SimResult(J, aT, XT, feasible)

    def merit(self, c, z, mu: float) -> np.ndarray:
        """J with the bequest frozen below the floor and a quadratic shortfall penalty."""
        running, aT, _ = self._evaluate(c, z)
        short = np.maximum(self.floor - aT, 0.0)
        return running + self._bequest(np.maximum(aT, self.floor)) - mu * short ** 2

    def gradient(self, u, mu: float, step: float) -> np.ndarray:
        """Central differences of the merit in all 2N coordinates, one batch."""
        n = u.size
        hs = step * np.maximum(1.0, np.abs(u))
        pert = np.repeat(u[None, :], 2 * n, axis=0)
        idx = np.arange(n)
        pert[idx, idx] += hs
        pert[n + idx, idx] -= hs
        vals = self.merit(pert[:, : self.N], pert[:, self.N:], mu)
        return (vals[:n] - vals[n:]) / (2.0 * hs)


def simulate(params: ModelParams, profile: WageProfile, c, z, resolution: int = 256):
    """(J, aT, X(T)) for piecewise-constant controls; J is -inf when aT <= 0."""
    c = np.asarray(c, float)
    z = np.asarray(z, float)
    batch = c.ndim == 2
    N = c.shape[-1]
    if N < 1:
        raise ValueError("at least one control interval required")
    prob = _Problem(params, profile, N, resolution)
    res = prob.simulate(c, z)
    if not np.all(res.feasible):
        log.info("simulated control has a(T) <= 0 (infeasible)")
    if batch:
        return res.J, res.aT, res.XT
    return float(res.J[0]), float(res.aT[0]), float(res.XT[0])


def sample_controls(extremal: Extremal, N: int):
    """Interval averages of an indirect extremal's c and z on N equal intervals."""
    t = extremal.t
    T = float(t[-1])
    edges = np.linspace(0.0, T, N + 1)
    out = []
    for v in (extremal.c, extremal.z):
        cum = cumulative_simpson(v, x=t, initial=0.0)
        out.append(np.diff(np.interp(edges, t, cum)) / (T / N))
    return out[0], out[1]


def _project(u, N, lo_c, C, Z):
    v = u.copy()
    v[:N] = np.clip(v[:N], lo_c, C)
    v[N:] = np.clip(v[N:], -Z, Z)
    return v


def _ascend(prob: _Problem, u0, config: OracleConfig, C, Z):
    N = prob.N
    lo_c = 1e-10
    u = _project(u0, N, lo_c, C, Z)
    iters = 0
    converged = False
    for k in range(config.penalty_rounds):
        mu = config.penalty0 * config.penalty_growth ** k
        f = float(prob.merit(u[None, :N], u[None, N:], mu)[0])
        g = prob.gradient(u, mu, config.fd_step)
        alpha = 1.0 / max(1.0, float(np.max(np.abs(g))))
        converged = False
        while iters < config.max_iter:
            pg = _project(u + g, N, lo_c, C, Z) - u
            if np.max(np.abs(pg)) <= config.tol:
                converged = True
                break
            d = _project(u + alpha * g, N, lo_c, C, Z) - u
            slope = float(g @ d)
            step = 1.0
            while True:
                trial = u + step * d
                ft = float(prob.merit(trial[None, :N], trial[None, N:], mu)[0])
                if ft >= f + 1e-4 * step * slope:
                    break
                step *= 0.5
                if step < 1e-12:
                    break
            iters += 1
            if step < 1e-12:
                log.debug("step collapse at iteration %d", iters)
                break
            g_new = prob.gradient(trial, mu, config.fd_step)
            s = trial - u
            yv = g_new - g
            sy = float(s @ yv)
            alpha = float(s @ s) / -sy if sy < 0 else 1e3 * alpha
            alpha = min(max(alpha, 1e-8), 1e8)
            u, f, g = trial, ft, g_new
    return u, iters, converged


def direct_optimize(params: ModelParams, profile: WageProfile, N: int | None = None,
                    config: OracleConfig | None = None, warm: Extremal | None = None) -> DirectSolution:
    """Best of up to three projected-gradient ascents (flat, warm, random starts)."""
    from .analysis import closed_form_constant_wage

    config = config or OracleConfig()
    N = config.N if N is None else int(N)
    # N = 1 is admitted for the exhaustive grid cross-check
    if not 1 <= N <= 512:
        raise ValueError("N ∈ [1, 512] violated")
    prob = _Problem(params, profile, N, config.resolution)
    caps = compute_control_caps(params, profile, pilot_speed=_pilot_speed(warm))
    C, Z = caps.C, caps.Z if math.isfinite(caps.Z) else 10.0
    cf = closed_form_constant_wage(params, float(profile(params.x0)))
    mids = (np.arange(N) + 0.5) * params.T / N
    c_flat = float(np.mean(cf.consumption(mids))) if cf.aT > 0 else params.a0 / params.T + 1e-3
    starts = {"flat": np.concatenate([np.full(N, c_flat), np.zeros(N)])}
    if warm is not None:
        cw, zw = sample_controls(warm, N)
        starts["indirect"] = np.concatenate([cw, zw])
    rng = np.random.default_rng(config.seed)
    starts["random"] = np.concatenate([c_flat * rng.uniform(0.5, 1.5, N), rng.uniform(-0.2, 0.2, N)])
    best = None
    summary = {}
    for name, u0 in starts.items():
        u, iters, conv = _ascend(prob, u0, config, C, Z)
        res = prob.simulate(u[None, :N], u[None, N:])
        J, aT, XT = float(res.J[0]), float(res.aT[0]), float(res.XT[0])
        feasible = aT >= prob.floor
        summary[name] = {"J": J, "aT": aT, "iterations": iters, "converged": conv, "feasible": feasible}
        log.info("start %s: J=%.12g aT=%.6g iters=%d converged=%s", name, J, aT, iters, conv)
        if feasible and (best is None or J > best.J):
            best = DirectSolution(N, u[:N].copy(), u[N:].copy(), J, aT, iters, XT, name, True,
                                  conv, config.seed, summary, params.T)
    if best is None:
        raise InfeasibleError(f"all starts end with a(T) below the floor {prob.floor:.3e}")
    best.starts = summary
    return best


def _pilot_speed(warm):
    if warm is None:
        return None
    return float(np.max(np.abs(warm.z)))


def fd_gradient(params: ModelParams, profile: WageProfile, c, z, steps=(1e-3, 1e-4, 1e-5, 1e-6, 1e-7),
                resolution: int = 256) -> np.ndarray:
    """Central-difference gradient of J in every control coordinate.

    The step is tuned: among the candidate steps the one whose estimate agrees
    best with the next smaller step is kept.
    """
    c = np.asarray(c, float)
    z = np.asarray(z, float)
    N = c.size
    prob = _Problem(params, profile, N, resolution)
    u = np.concatenate([c, z])
    ests = []
    for h in steps:
        n = u.size
        pert = np.repeat(u[None, :], 2 * n, axis=0)
        idx = np.arange(n)
        pert[idx, idx] += h
        pert[n + idx, idx] -= h
        J = prob.simulate(pert[:, :N], pert[:, N:]).J
        ests.append((J[:n] - J[n:]) / (2.0 * h))
    diffs = [np.max(np.abs(ests[k] - ests[k + 1])) for k in range(len(ests) - 1)]
    return ests[int(np.argmin(diffs))]
