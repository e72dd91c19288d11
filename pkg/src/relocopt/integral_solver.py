"""Location BVP as a fixed point of the Green-kernel integral equation.

With g(tau) = lambda1 e^{-r tau} w'(x(tau)) the problem
(F x')' = -g, x(0) = x0, x'(T) = 0 is equivalent to

    x(t) = x0 + int_0^T K(t, tau) g(tau) dtau,   K(t, tau) = int_0^{min(t,tau)} ds / F(s).

Plain Picard iteration on this map is used as an independent check of the
shooting solver; it contracts only for small lambda1 * T.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_simpson, simpson

from .dynamics import F_of_t, _guard_F, default_steps
from .model import ModelParams, WageProfile

log = logging.getLogger(__name__)

MAX_NODES = 4096


@dataclass(frozen=True)
class PicardConfig:
    tol: float = 1e-10
    max_iter: int = 500
    n_nodes: int | None = None

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol > 0 violated")
        if self.max_iter < 1:
            raise ValueError("max_iter ≥ 1 violated")
        if self.n_nodes is not None and not (5 <= self.n_nodes <= MAX_NODES and self.n_nodes % 2):
            raise ValueError(f"n_nodes must be odd and in [5, {MAX_NODES}]")


@dataclass(frozen=True)
class KernelTable:
    grid: np.ndarray
    K: np.ndarray
    cumulative: np.ndarray


@dataclass
class PicardResult:
    t: np.ndarray
    x: np.ndarray
    iterations: int
    converged: bool
    history: list = field(default_factory=list)

    def report(self) -> str:
        state = "converged" if self.converged else "did not converge"
        last = self.history[-1] if self.history else float("nan")
        return f"Picard {state} after {self.iterations} iterations, last sup change {last:.3e}"


def default_nodes(T: float) -> int:
    """Odd node count on the shooting grid, capped by the O(n^2) kernel memory."""
    n = min(default_steps(T), MAX_NODES - 1)
    n -= n % 2
    return n + 1


def build_kernel_table(lambda1: float, params: ModelParams, n_nodes: int | None = None) -> KernelTable:
    n_nodes = default_nodes(params.T) if n_nodes is None else int(n_nodes)
    if n_nodes > MAX_NODES:
        raise ValueError(f"kernel table limited to {MAX_NODES} nodes")
    _guard_F(lambda1, params, params.T)
    t = np.linspace(0.0, params.T, n_nodes)
    G = cumulative_simpson(1.0 / F_of_t(t, lambda1, params), x=t, initial=0.0)
    i = np.arange(n_nodes)
    K = G[np.minimum.outer(i, i)]
    return KernelTable(t, K, G)


def green_kernel(t, tau, lambda1: float, params: ModelParams, n_nodes: int = 2049) -> float:
    """K(t, tau) = int_0^{min(t,tau)} ds / F(s), by Simpson."""
    s = min(float(t), float(tau))
    if not (0.0 <= t <= params.T and 0.0 <= tau <= params.T):
        raise ValueError("t, tau ∈ [0, T] required")
    _guard_F(lambda1, params, params.T)
    if s == 0.0:
        return 0.0
    grid = np.linspace(0.0, s, n_nodes)
    return float(simpson(1.0 / F_of_t(grid, lambda1, params), x=grid))


def apply_kernel(table: KernelTable, g) -> np.ndarray:
    """int_0^T K(t_i, tau) g(tau) dtau at every node.

    The kernel has a kink on the diagonal, so the integral is split there:
    int_0^t G g dtau + G(t) int_t^T g dtau, both by cumulative Simpson.
    """
    t, G = table.grid, table.cumulative
    below = cumulative_simpson(G * g, x=t, initial=0.0)
    running = cumulative_simpson(g, x=t, initial=0.0)
    return below + G * (running[-1] - running)


def picard_solve(params: ModelParams, profile: WageProfile, lambda1: float,
                 config: PicardConfig | None = None) -> PicardResult:
    """Iterate x <- x0 + int K g(x) from x = x0 until the sup change is below tol."""
    config = config or PicardConfig()
    table = build_kernel_table(lambda1, params, config.n_nodes)
    t = table.grid
    disc = lambda1 * np.exp(-params.r * t)
    x = np.full_like(t, params.x0)
    history = []
    for it in range(1, config.max_iter + 1):
        _, dw, _ = profile.derivs(x)
        x_new = params.x0 + apply_kernel(table, disc * dw)
        change = float(np.max(np.abs(x_new - x)))
        history.append(change)
        x = x_new
        if not np.isfinite(change):
            break
        if change <= config.tol:
            return PicardResult(t, x, it, True, history)
    result = PicardResult(t, x, len(history), False, history)
    log.warning(result.report())
    return result


def second_order_defect(t, x, lambda1: float, params: ModelParams, profile: WageProfile) -> float:
    """Sup-norm over interior nodes of (F x')' + lambda1 e^{-rt} w'(x).

    Conservative three-point stencil with F at the half nodes, second order.
    """
    t = np.asarray(t, float)
    x = np.asarray(x, float)
    h = np.diff(t)
    F_half = F_of_t(0.5 * (t[1:] + t[:-1]), lambda1, params)
    flux = F_half * np.diff(x) / h
    div = (flux[1:] - flux[:-1]) / (0.5 * (h[1:] + h[:-1]))
    _, dw, _ = profile.derivs(x[1:-1])
    defect = div + lambda1 * np.exp(-params.r * t[1:-1]) * dw
    return float(np.max(np.abs(defect)))


def endpoint_slope(t, x) -> float:
    """x'(T) by the second-order one-sided stencil."""
    h = t[-1] - t[-2]
    return float((3.0 * x[-1] - 4.0 * x[-2] + x[-3]) / (2.0 * h))
