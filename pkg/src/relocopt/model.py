"""Model parameters, wage profiles, control caps and regime classification.

Wage profiles are stored as piecewise polynomials (ascending local
coefficients, degree <= 5) so that the same compiled evaluator serves
every family inside the integrators. Outside [0, 1] each non-constant
profile is continued by a quintic Hermite blend down to a flat negative
plateau, which keeps w twice continuously differentiable and bounded.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np
from numpy.polynomial import polynomial as P
from scipy.interpolate import CubicSpline

FAMILIES = ("quadratic", "constant", "tabulated")
BLEND_WIDTH = 0.5
WINDOW = (-1.0, 2.0)
REGIME_TOL = 1e-12
CAP_SAFETY = 1.05
_ORDER = 6


class ParameterError(ValueError):
    """Raised when model parameters or a wage profile violate an invariant."""


class WageWindowError(ValueError):
    """Raised by :func:`wage_eval` for locations outside the evaluation window."""


@dataclass(frozen=True)
class ModelParams:
    rho: float = 0.05
    r: float = 0.05
    theta: float = 0.5
    eta: float = 1.0
    xi: float = 1.0
    p: float = 1.0
    T: float = 10.0
    a0: float = 1.0
    x0: float = 0.25

    def __post_init__(self):
        for name in ("rho", "r", "theta", "eta", "xi", "p", "T", "a0", "x0"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ParameterError(f"{name} must be finite, got {v!r}")
        if not 0.0 < self.theta < 1.0:
            raise ParameterError("theta ∈ (0,1) violated")
        for name in ("rho", "r", "p", "T"):
            if getattr(self, name) <= 0.0:
                raise ParameterError(f"{name} > 0 violated")
        if self.eta < 0.0 or self.xi < 0.0:
            raise ParameterError("eta, xi ≥ 0 violated")
        if self.eta + self.xi <= 0.0:
            raise ParameterError("eta + xi > 0 violated")
        if self.a0 < 0.0:
            raise ParameterError("a0 ≥ 0 violated")
        if not 0.0 <= self.x0 <= 1.0:
            raise ParameterError("x0 ∈ [0,1] violated")

    def replace(self, **changes) -> "ModelParams":
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d.update(changes)
        return ModelParams(**d)


# ----------------------------------------------------------------------
# compiled piecewise-polynomial evaluation


@numba.njit(cache=True)
def ppoly_scalar(x, breaks, coefs):
    """Value, slope and curvature of the piecewise polynomial at ``x``."""
    nb = breaks.shape[0]
    if x <= breaks[0]:
        return coefs[0, 0], 0.0, 0.0
    if x >= breaks[nb - 1]:
        k = nb - 2
        s = breaks[nb - 1] - breaks[k]
    else:
        k = np.searchsorted(breaks, x, side="right") - 1
        s = x - breaks[k]
    c = coefs[k]
    v = c[5]
    d1 = 5.0 * c[5]
    d2 = 20.0 * c[5]
    v = v * s + c[4]
    d1 = d1 * s + 4.0 * c[4]
    d2 = d2 * s + 12.0 * c[4]
    v = v * s + c[3]
    d1 = d1 * s + 3.0 * c[3]
    d2 = d2 * s + 6.0 * c[3]
    v = v * s + c[2]
    d1 = d1 * s + 2.0 * c[2]
    d2 = d2 * s + 2.0 * c[2]
    v = v * s + c[1]
    d1 = d1 * s + c[1]
    v = v * s + c[0]
    if x >= breaks[nb - 1]:
        return v, 0.0, 0.0
    return v, d1, d2


@numba.njit(cache=True)
def ppoly_array(xs, breaks, coefs, w, dw, d2w):
    for i in range(xs.shape[0]):
        w[i], dw[i], d2w[i] = ppoly_scalar(xs[i], breaks, coefs)


def _quintic_hermite(left, right, length):
    """Local ascending coefficients matching (w, w', w'') at both ends."""
    L = length
    A = np.array([
        [1, 0, 0, 0, 0, 0],
        [0, 1, 0, 0, 0, 0],
        [0, 0, 2, 0, 0, 0],
        [1, L, L**2, L**3, L**4, L**5],
        [0, 1, 2 * L, 3 * L**2, 4 * L**3, 5 * L**4],
        [0, 0, 2, 6 * L, 12 * L**2, 20 * L**3],
    ], dtype=float)
    return np.linalg.solve(A, np.concatenate([left, right]))


def _monotone_blend(left, right, width, sign, halvings=8):
    """Quintic blend that is strictly monotone with the given sign.

    Steep end slopes relative to the plateau depth force a dip in the
    quintic, so the width is halved until the slope keeps its sign.
    """
    L = width
    for _ in range(halvings + 1):
        c = _quintic_hermite(left, right, L)
        s = np.linspace(0.0, L, 513)[1:-1]
        if np.all(sign * P.polyval(s, P.polyder(c)) > 0):
            return L, c
        L *= 0.5
    return width, _quintic_hermite(left, right, width)


def _pad(c):
    out = np.zeros(_ORDER)
    out[: len(c)] = c
    return out


def _shift(c, s0):
    """Re-expand ascending coefficients about a new origin ``s0``."""
    c = np.trim_zeros(np.asarray(c, float), "b")
    if c.size == 0:
        return np.zeros(_ORDER)
    out = np.zeros(len(c))
    # Taylor expansion of the polynomial at s0
    d = c.copy()
    fact = 1.0
    for k in range(len(c)):
        out[k] = P.polyval(s0, d) / fact
        d = P.polyder(d) if d.size > 1 else np.zeros(1)
        fact *= k + 1
    return _pad(out)


@dataclass(frozen=True)
class WageProfile:
    """A C² bounded wage distribution.

    ``family`` is one of ``quadratic`` (``h * x * (1 - x)``), ``constant``
    (``W`` everywhere) or ``tabulated`` (cubic spline through knots on
    [0, 1]). ``coefficients`` holds ``(h,)``, ``(W,)`` or the flattened
    knot/value pairs respectively.
    """

    family: str
    coefficients: tuple
    delta: float = BLEND_WIDTH
    breaks: np.ndarray = field(init=False, repr=False, compare=False)
    coefs: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ParameterError(f"wage family must be one of {FAMILIES}, got {self.family!r}")
        coeffs = tuple(float(c) for c in self.coefficients)
        object.__setattr__(self, "coefficients", coeffs)
        if not self.delta > 0:
            raise ParameterError("blend width delta > 0 violated")
        breaks, coefs = self._build()
        object.__setattr__(self, "breaks", breaks)
        object.__setattr__(self, "coefs", coefs)
        self.certify()

    # constructors
    @classmethod
    def quadratic(cls, h: float = 1.0, delta: float = BLEND_WIDTH) -> "WageProfile":
        return cls("quadratic", (h,), delta)

    @classmethod
    def constant(cls, W: float) -> "WageProfile":
        return cls("constant", (W,))

    @classmethod
    def tabulated(cls, knots, values, delta: float = BLEND_WIDTH) -> "WageProfile":
        knots = np.asarray(knots, float)
        values = np.asarray(values, float)
        if knots.shape != values.shape:
            raise ParameterError("tabulated wage needs equally many knots and values")
        flat = np.column_stack([knots, values]).ravel()
        return cls("tabulated", tuple(flat), delta)

    @property
    def knots(self):
        if self.family != "tabulated":
            return None
        arr = np.asarray(self.coefficients).reshape(-1, 2)
        return arr[:, 0], arr[:, 1]

    def _interior(self):
        """Breaks and coefficient rows covering [0, 1]."""
        if self.family == "quadratic":
            if len(self.coefficients) != 1:
                raise ParameterError("quadratic wage takes one coefficient h")
            (h,) = self.coefficients
            if not h > 0:
                raise ParameterError("quadratic wage height h > 0 violated")
            return np.array([0.0, 1.0]), np.array([_pad([0.0, h, -h])])
        if self.family == "tabulated":
            if len(self.coefficients) < 8 or len(self.coefficients) % 2:
                raise ParameterError("tabulated wage needs at least 4 (knot, value) pairs")
            x, v = self.knots
            if x[0] != 0.0 or x[-1] != 1.0 or np.any(np.diff(x) <= 0):
                raise ParameterError("tabulated knots must increase strictly from 0 to 1")
            cs = CubicSpline(x, v)
            rows = np.array([_pad(cs.c[::-1, k]) for k in range(cs.c.shape[1])])
            return x.copy(), rows
        raise AssertionError(self.family)

    def _build(self):
        if self.family == "constant":
            if len(self.coefficients) != 1:
                raise ParameterError("constant wage takes one coefficient W")
            return np.array([0.0, 1.0]), np.array([_pad([self.coefficients[0]])])
        xb, rows = self._interior()
        d = self.delta
        left_end = rows[0]
        right_end = _shift(rows[-1], xb[-1] - xb[-2])
        lv = np.array([left_end[0], left_end[1], 2 * left_end[2]])
        rv = np.array([right_end[0], right_end[1], 2 * right_end[2]])
        # plateau depth is sup of w on [0, 1]
        self_sup = max(_piece_extreme(rows, xb, np.max), 0.0)
        plateau = np.array([-self_sup, 0.0, 0.0])
        dl, left = _monotone_blend(plateau, lv, d, +1)
        dr, right = _monotone_blend(rv, plateau, d, -1)
        breaks = np.concatenate([[-dl], xb, [1.0 + dr]])
        coefs = np.vstack([left, rows, right])
        return breaks, np.ascontiguousarray(coefs)

    # evaluation
    def derivs(self, x):
        """Return ``(w, w', w'')`` at ``x`` (scalar or array), no window check."""
        xa = np.atleast_1d(np.asarray(x, dtype=float))
        flat = np.ascontiguousarray(xa.ravel())
        w = np.empty_like(flat)
        dw = np.empty_like(flat)
        d2w = np.empty_like(flat)
        ppoly_array(flat, self.breaks, self.coefs, w, dw, d2w)
        if np.ndim(x) == 0:
            return float(w[0]), float(dw[0]), float(d2w[0])
        return w.reshape(xa.shape), dw.reshape(xa.shape), d2w.reshape(xa.shape)

    def __call__(self, x):
        return self.derivs(x)[0]

    def slope(self, x):
        return self.derivs(x)[1]

    # structure
    def _critical_values(self, order):
        """Values of the ``order``-th derivative at its own extrema and piece ends."""
        vals = []
        for k in range(len(self.breaks) - 1):
            c = np.trim_zeros(self.coefs[k], "b")
            if c.size == 0:
                vals.append(0.0)
                continue
            for _ in range(order):
                c = P.polyder(c) if c.size > 1 else np.zeros(1)
            L = self.breaks[k + 1] - self.breaks[k]
            cand = [0.0, L]
            dc = P.polyder(c) if c.size > 1 else np.zeros(1)
            if np.any(dc != 0):
                for root in P.polyroots(dc):
                    if abs(root.imag) < 1e-12 and 0 < root.real < L:
                        cand.append(root.real)
            vals.extend(P.polyval(np.array(cand), c))
        return np.array(vals)

    @property
    def sup_abs(self) -> float:
        return float(np.max(np.abs(self._critical_values(0))))

    @property
    def sup_abs_slope(self) -> float:
        return float(np.max(np.abs(self._critical_values(1))))

    @property
    def is_constant(self) -> bool:
        return self.family == "constant"

    @property
    def peak(self) -> float:
        """Location of the maximum of w on [0, 1]."""
        if self.family == "quadratic":
            return 0.5
        xs = np.linspace(0.0, 1.0, 20001)
        x1 = xs[np.argmax(self(xs))]
        if self.family == "constant":
            return float(x1)
        # polish on the slope
        lo, hi = max(0.0, x1 - 1e-4), min(1.0, x1 + 1e-4)
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            if self.slope(mid) > 0:
                lo = mid
            else:
                hi = mid
        return 0.5 * (lo + hi)

    def knot_mismatch(self) -> float:
        """Largest relative one-sided jump of (w, w', w'') over interior knots."""
        worst = 0.0
        for k in range(1, len(self.breaks) - 1):
            L = self.breaks[k] - self.breaks[k - 1]
            left = self.coefs[k - 1]
            right = self.coefs[k]
            for order in range(3):
                lc, rc = left, right
                for _ in range(order):
                    lc, rc = P.polyder(lc), P.polyder(rc)
                a = P.polyval(L, lc)
                b = rc[0] if rc.size else 0.0
                worst = max(worst, abs(a - b) / max(1.0, abs(a), abs(b)))
        return worst

    def certify(self):
        """Check the smoothness and sign structure; raise ParameterError on failure."""
        if self.knot_mismatch() > 1e-6:
            raise ParameterError("wage is not C² at its knots")
        if self.is_constant:
            return
        dl = -self.breaks[0]
        dr = self.breaks[-1] - 1.0
        inner = np.linspace(0.0, 1.0, 2001)[1:-1]
        if np.any(self(inner) <= 0):
            raise ParameterError("w(x) > 0 on (0,1) violated")
        outer = np.concatenate([np.linspace(-3 * dl, 0.0, 400)[:-1], np.linspace(1.0, 1 + 3 * dr, 400)[1:]])
        if np.any(self(outer) >= 0):
            raise ParameterError("w(x) < 0 outside [0,1] violated")
        lb = np.linspace(-dl, 0.0, 400)[1:]
        rb = np.linspace(1.0, 1.0 + dr, 400)[:-1]
        if np.any(self.slope(lb) <= 0) or np.any(self.slope(rb) >= 0):
            raise ParameterError("w' sign structure in the blend region violated")


def _piece_extreme(rows, xb, fn):
    vals = []
    for k in range(len(xb) - 1):
        L = xb[k + 1] - xb[k]
        s = np.linspace(0.0, L, 257)
        vals.append(fn(P.polyval(s, rows[k])))
    return float(fn(vals))


def wage_eval(profile: WageProfile, x: float):
    """(w, w', w'') at ``x``; locations outside the evaluation window are rejected."""
    if not WINDOW[0] <= x <= WINDOW[1]:
        raise WageWindowError(f"x = {x} outside evaluation window {WINDOW}")
    return profile.derivs(float(x))


# ----------------------------------------------------------------------
# caps and regimes


@dataclass(frozen=True)
class ControlCaps:
    C: float
    Z: float
    mu: float
    z_from_bound: bool = True


def compute_control_caps(params: ModelParams, profile: WageProfile,
                         pilot_speed: float | None = None) -> ControlCaps:
    """Caps on consumption and relocation speed that never bind at an optimum.

    With ``xi == 0`` the speed bound is undefined; ``Z`` then falls back to
    twice ``pilot_speed`` (or ``inf`` when no pilot solve is available).
    """
    rho, r, th, T = params.rho, params.r, params.theta, params.T
    mu = math.exp(abs(r - rho) * T)
    annuity = -math.expm1(-r * T) / r
    base = (params.a0 + T * profile.sup_abs) / (params.p * annuity)
    lead = max(1.0, mu ** (1.0 / th)) * base
    # printed bound on C**theta, and the bound C > mu**(1/theta) * C0 the proof needs
    try:
        C = CAP_SAFETY * max(lead ** (1.0 / th), lead)
    except OverflowError:
        # no finite double bounds consumption; the cap is vacuous
        C = math.inf
    if params.xi > 0:
        Z = CAP_SAFETY * T * profile.sup_abs_slope * math.exp(r * T) / (2.0 * params.xi)
        if Z == 0.0:
            # flat wage: the bound is 0 and any positive cap is strict
            Z = 1.0
        return ControlCaps(C, Z, mu, True)
    if pilot_speed is None:
        return ControlCaps(C, math.inf, mu, False)
    Z = 2.0 * pilot_speed if pilot_speed > 0 else 1.0
    return ControlCaps(C, Z, mu, False)


@dataclass(frozen=True)
class Regime:
    tag: str
    subcase: str | None = None

    def __str__(self):
        return self.tag if self.subcase is None else f"{self.tag}:{self.subcase}"


def classify_regime(params: ModelParams, tol: float = REGIME_TOL) -> Regime:
    """Classify by the sign of rho - r(1 - theta), relative tolerance ``tol``."""
    rho, r, th = params.rho, params.r, params.theta
    gap = rho - r * (1.0 - th)
    scale = max(abs(rho), abs(r))
    if abs(gap) <= tol * scale:
        return Regime("Boundary")
    if gap < 0:
        return Regime("Negative")
    if abs(rho - r) <= tol * scale:
        sub = "rho=r"
    elif rho < r:
        sub = "rho<r"
    else:
        sub = "rho>r"
    return Regime("Positive", sub)
