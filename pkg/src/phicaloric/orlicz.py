"""Orlicz functions, their shifts and conjugates, and scalar helpers.

Every function object here is immutable and evaluates vectorised over numpy
arrays. The families are

* ``PowerFunction``      t**p / p
* ``BrokenPowerFunction`` derivative max/min of t**(p-1), t**(q-1), C2-blended at t=1
* ``ShiftedFunction``    the shifted function phi_a with phi_a'(t) = phi'(a+t) t/(a+t)
* ``TableFunction``      phi' given by samples, log-log monotone interpolation
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.special import binom, roots_legendre

from .errors import AssumptionViolation, RangeError

__all__ = [
    "OrliczFunction",
    "PowerFunction",
    "BrokenPowerFunction",
    "ShiftedFunction",
    "TableFunction",
    "make_power",
    "make_max_power",
    "make_min_power",
    "shift",
    "conjugate",
    "conjugate_deriv_inverse",
    "biconjugate",
    "characteristics",
    "Characteristics",
    "select_q",
    "QSelection",
    "invert_phiprime_t",
    "monotone_inverse",
    "rho",
    "kappa",
    "G_level",
    "H_level",
    "rho_admissible",
    "characteristics_report",
    "phi_from_config",
    "DEFAULT_T_GRID",
]

DEFAULT_T_GRID = np.logspace(-3, 3, 241)

# Dyadic composite Gauss-Legendre rule on (0, 1]: panels [2^-(j+1), 2^-j].
_GL_X, _GL_W = roots_legendre(12)
_DYADIC_LEVELS = 48


def _dyadic_rule():
    xs, ws = [], []
    for j in range(_DYADIC_LEVELS):
        lo, hi = 2.0 ** (-j - 1), 2.0 ** (-j)
        xs.append(lo + (hi - lo) * (_GL_X + 1.0) / 2.0)
        ws.append((hi - lo) / 2.0 * _GL_W)
    return np.concatenate(xs), np.concatenate(ws)


_DY_X, _DY_W = _dyadic_rule()


def _integrate_from_zero(deriv, t):
    """Integral of ``deriv`` over [0, t] for every entry of ``t``.

    ``deriv`` is called with an array of shape ``t.shape + (nodes,)`` and must
    broadcast. The rule is fixed, so results are deterministic and identical
    to what a per-grid cache would return.
    """
    t = np.asarray(t, dtype=float)
    s = t[..., None] * _DY_X
    return t * np.sum(deriv(s) * _DY_W, axis=-1)


class OrliczFunction:
    """Base class: a convex phi with phi(0)=0 evaluated elementwise.

    Subclasses provide ``__call__`` (phi), ``deriv`` (phi') and ``deriv2``
    (phi''), plus the declared bounds ``char_lo``/``char_hi`` on
    phi''(t) t / phi'(t).
    """

    kind = "abstract"
    char_lo: float
    char_hi: float

    def __call__(self, t):
        raise NotImplementedError

    def deriv(self, t):
        raise NotImplementedError

    def deriv2(self, t):
        raise NotImplementedError

    @property
    def delta2(self) -> float:
        # t phi'(t) <= (1 + char_hi) phi(t) integrates to phi(2t) <= 2^(1+char_hi) phi(t)
        return 2.0 ** (1.0 + self.char_hi)

    def describe(self) -> dict:
        return {"kind": self.kind}

    def __repr__(self):
        params = ", ".join(f"{k}={v!r}" for k, v in self.describe().items() if k != "kind")
        return f"{type(self).__name__}({params})"


class PowerFunction(OrliczFunction):
    kind = "power"

    def __init__(self, p: float):
        if not p > 1.0:
            raise AssumptionViolation(f"power exponent must exceed 1, got p={p}")
        self.p = float(p)
        self.char_lo = self.char_hi = self.p - 1.0

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return t**self.p / self.p

    def deriv(self, t):
        t = np.asarray(t, dtype=float)
        return t ** (self.p - 1.0)

    def deriv2(self, t):
        t = np.asarray(t, dtype=float)
        with np.errstate(divide="ignore"):
            return (self.p - 1.0) * t ** (self.p - 2.0)

    @property
    def delta2(self) -> float:
        return 2.0**self.p

    @property
    def conjugate_exponent(self) -> float:
        return self.p / (self.p - 1.0)

    def describe(self):
        return {"kind": self.kind, "p": self.p}


class BrokenPowerFunction(OrliczFunction):
    """phi' = t**e_left below 1 and t**e_right above 1, C1 Hermite blend in between.

    ``family="max"`` gives phi' = max(t^(p-1), t^(q-1)) and
    ``family="min"`` gives phi' = min(t^(p-1), t^(q-1)); with the blend on
    [1 - width, 1 + width] phi is C2 on (0, inf).
    """

    def __init__(self, p: float, q: float, family: str = "max", width: float = 1e-3):
        if not (1.0 < p <= q < math.inf):
            raise AssumptionViolation(f"need 1 < p <= q < inf, got p={p}, q={q}")
        if family not in ("max", "min"):
            raise ValueError(f"family must be 'max' or 'min', got {family!r}")
        self.p, self.q, self.family, self.width = float(p), float(q), family, float(width)
        self.kind = f"{family}_power"
        if family == "max":
            self.e_left, self.e_right = self.p - 1.0, self.q - 1.0
        else:
            self.e_left, self.e_right = self.q - 1.0, self.p - 1.0
        self.char_lo, self.char_hi = self.p - 1.0, self.q - 1.0
        tl, tr = 1.0 - width, 1.0 + width
        self._tl, self._tr, self._span = tl, tr, tr - tl
        self._yl, self._ml = tl**self.e_left, self.e_left * tl ** (self.e_left - 1.0)
        self._yr, self._mr = tr**self.e_right, self.e_right * tr ** (self.e_right - 1.0)
        self._phi_l = tl ** (self.e_left + 1.0) / (self.e_left + 1.0)
        self._phi_r = self._phi_l + self._blend_integral(1.0)

    def _blend_integral(self, s):
        yl, ml, yr, mr, d = self._yl, self._ml, self._yr, self._mr, self._span
        s2, s3, s4 = s * s, s**3, s**4
        return d * (
            yl * (s - s3 + s4 / 2.0)
            + d * ml * (s2 / 2.0 - 2.0 * s3 / 3.0 + s4 / 4.0)
            + yr * (s3 - s4 / 2.0)
            + d * mr * (-s3 / 3.0 + s4 / 4.0)
        )

    def _pieces(self, t):
        t = np.asarray(t, dtype=float)
        left = t <= self._tl
        right = t >= self._tr
        s = np.clip((t - self._tl) / self._span, 0.0, 1.0)
        return t, left, right, s

    def __call__(self, t):
        t, left, right, s = self._pieces(t)
        el, er = self.e_left, self.e_right
        out = self._phi_l + self._blend_integral(s)
        out = np.where(left, t ** (el + 1.0) / (el + 1.0), out)
        out = np.where(right, self._phi_r + (t ** (er + 1.0) - self._tr ** (er + 1.0)) / (er + 1.0), out)
        return out

    def deriv(self, t):
        t, left, right, s = self._pieces(t)
        d = self._span
        h00, h10 = 2 * s**3 - 3 * s**2 + 1, s**3 - 2 * s**2 + s
        h01, h11 = -2 * s**3 + 3 * s**2, s**3 - s**2
        out = h00 * self._yl + h10 * d * self._ml + h01 * self._yr + h11 * d * self._mr
        out = np.where(left, t**self.e_left, out)
        return np.where(right, t**self.e_right, out)

    def deriv2(self, t):
        t, left, right, s = self._pieces(t)
        d = self._span
        g00, g10 = 6 * s**2 - 6 * s, 3 * s**2 - 4 * s + 1
        g01, g11 = -6 * s**2 + 6 * s, 3 * s**2 - 2 * s
        out = (g00 * self._yl + g01 * self._yr) / d + g10 * self._ml + g11 * self._mr
        with np.errstate(divide="ignore"):
            out = np.where(left, self.e_left * t ** (self.e_left - 1.0), out)
            return np.where(right, self.e_right * t ** (self.e_right - 1.0), out)

    def describe(self):
        return {"kind": self.kind, "p": self.p, "q": self.q}


class ShiftedFunction(OrliczFunction):
    """The shifted function phi_a built from any base function."""

    kind = "shifted"

    def __init__(self, base: OrliczFunction, a: float):
        if not a >= 0.0:
            raise ValueError(f"shift must be nonnegative, got a={a}")
        self.base, self.a = base, float(a)
        # phi_a'' t / phi_a' = r * (base ratio at a+t) + (1 - r), r = t/(a+t)
        self.char_lo = min(1.0, base.char_lo)
        self.char_hi = max(1.0, base.char_hi)

    def __call__(self, t):
        return shifted_value(self.base, self.a, t)

    def deriv(self, t):
        return shifted_deriv(self.base, self.a, t)

    def deriv2(self, t):
        return shifted_deriv2(self.base, self.a, t)

    def describe(self):
        return {"kind": self.kind, "a": self.a, "base": self.base.describe()}


class TableFunction(OrliczFunction):
    """phi' interpolated monotonically in log-log coordinates from samples.

    Outside the sampled range the end slopes are continued, i.e. phi' is
    extended by power laws. phi itself comes from quadrature of phi'.
    """

    kind = "table"

    def __init__(self, t_nodes, dphi_nodes):
        t_nodes = np.asarray(t_nodes, dtype=float)
        dphi_nodes = np.asarray(dphi_nodes, dtype=float)
        if t_nodes.ndim != 1 or t_nodes.size < 3 or t_nodes.shape != dphi_nodes.shape:
            raise ValueError("need matching 1-d node arrays with at least 3 entries")
        if np.any(t_nodes <= 0) or np.any(np.diff(t_nodes) <= 0) or np.any(dphi_nodes <= 0):
            raise AssumptionViolation("table nodes and phi' samples must be positive and increasing")
        self._x = np.log(t_nodes)
        self._interp = PchipInterpolator(self._x, np.log(dphi_nodes), extrapolate=False)
        self._slope = self._interp.derivative()
        slopes = self._slope(np.linspace(self._x[0], self._x[-1], 4001))
        if np.any(slopes <= 0):
            raise AssumptionViolation("phi' must be strictly increasing (positive log-log slope)")
        self._s_lo, self._s_hi = float(self._slope(self._x[0])), float(self._slope(self._x[-1]))
        self._y_lo, self._y_hi = float(self._interp(self._x[0])), float(self._interp(self._x[-1]))
        self.char_lo, self.char_hi = float(slopes.min()), float(slopes.max())
        self.t_nodes, self.dphi_nodes = t_nodes, dphi_nodes

    def _logderiv(self, x):
        y = self._interp(np.clip(x, self._x[0], self._x[-1]))
        y = np.where(x < self._x[0], self._y_lo + self._s_lo * (x - self._x[0]), y)
        return np.where(x > self._x[-1], self._y_hi + self._s_hi * (x - self._x[-1]), y)

    def _logslope(self, x):
        s = self._slope(np.clip(x, self._x[0], self._x[-1]))
        s = np.where(x < self._x[0], self._s_lo, s)
        return np.where(x > self._x[-1], self._s_hi, s)

    def deriv(self, t):
        t = np.asarray(t, dtype=float)
        with np.errstate(divide="ignore"):
            x = np.log(t)
        return np.where(t > 0, np.exp(self._logderiv(x)), 0.0)

    def deriv2(self, t):
        t = np.asarray(t, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            x = np.log(t)
            return np.where(t > 0, self.deriv(t) * self._logslope(x) / t, np.inf)

    def __call__(self, t):
        return _integrate_from_zero(self.deriv, t)

    def describe(self):
        return {"kind": self.kind, "t": self.t_nodes.tolist(), "dphi": self.dphi_nodes.tolist()}


# ---------------------------------------------------------------------------
# shifted functions, vectorised over the shift


def shifted_deriv(phi: OrliczFunction, a, t):
    """phi_a'(t) = phi'(a+t) t/(a+t), broadcasting over ``a`` and ``t``."""
    a = np.asarray(a, dtype=float)
    t = np.asarray(t, dtype=float)
    at = a + t
    with np.errstate(invalid="ignore", divide="ignore"):
        out = phi.deriv(at) * t / at
    return np.where(at > 0, out, 0.0)


def shifted_deriv2(phi: OrliczFunction, a, t):
    """Derivative of phi_a' obtained by differentiating its defining formula."""
    a = np.asarray(a, dtype=float)
    t = np.asarray(t, dtype=float)
    at = a + t
    with np.errstate(invalid="ignore", divide="ignore"):
        out = phi.deriv2(at) * t / at + phi.deriv(at) * a / at**2
    return np.where(at > 0, out, phi.deriv2(at))


def _shifted_power_value(p, a, t):
    """Closed form of phi_a(t) for phi = t^p/p without cancellation."""
    a, t = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(t, dtype=float))
    out = np.empty(a.shape)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        tau = np.where(a > 0, t / np.where(a > 0, a, 1.0), np.inf)
    far = tau >= 0.25
    ta, aa = t[far], a[far]
    out[far] = ((aa + ta) ** p - aa**p) / p - aa * ((aa + ta) ** (p - 1.0) - aa ** (p - 1.0)) / (p - 1.0)
    near = ~far
    if np.any(near):
        # a^p * int_0^tau (1+x)^(p-2) x dx as a binomial series, tau < 1/4
        tn, an = tau[near], a[near]
        k = np.arange(60)
        coef = binom(p - 2.0, k) / (k + 2.0)
        series = np.sum(coef * tn[:, None] ** (k + 2.0), axis=1)
        out[near] = an**p * series
    return out


def shifted_value(phi: OrliczFunction, a, t):
    """phi_a(t); closed form for power bases, dyadic quadrature otherwise."""
    a = np.asarray(a, dtype=float)
    t = np.asarray(t, dtype=float)
    if isinstance(phi, PowerFunction):
        return _shifted_power_value(phi.p, a, t)
    a_b, t_b = np.broadcast_arrays(a, t)
    return _integrate_from_zero(lambda s: shifted_deriv(phi, a_b[..., None], s), t_b)


def shift(phi: OrliczFunction, a: float) -> ShiftedFunction:
    """Return the shifted function phi_a. Shifting a shifted function nests it."""
    return ShiftedFunction(phi, a)


# ---------------------------------------------------------------------------
# monotone inversion and conjugates


def monotone_inverse(func, y, lo=1e-8, hi=1.0, iters=110, deriv=None, max_expand=400):
    """Solve ``func(x) = y`` for increasing ``func`` on (0, inf), elementwise.

    Brackets by repeated doubling/halving in log space, then bisects on
    log(x) and finishes with guarded Newton steps when ``deriv`` is given.
    Entries with ``y == 0`` return 0.
    """
    y = np.asarray(y, dtype=float)
    if np.any(y < 0) or not np.all(np.isfinite(y)):
        raise RangeError("targets must be finite and nonnegative")
    shape = y.shape
    y = y.ravel()
    lo = np.full(y.shape, float(lo))
    hi = np.full(y.shape, float(hi))
    pos = y > 0
    for _ in range(max_expand):
        bad = pos & (func(hi) < y)
        if not bad.any():
            break
        hi = np.where(bad, hi * 16.0, hi)
        if not np.all(np.isfinite(hi)):
            raise RangeError("target beyond representable range")
    else:
        raise RangeError("could not bracket root from above")
    for _ in range(max_expand):
        bad = pos & (func(lo) > y)
        if not bad.any():
            break
        lo = np.where(bad, lo / 16.0, lo)
        if np.any(lo[bad] == 0.0):
            raise RangeError("target below representable range")
    else:
        raise RangeError("could not bracket root from below")
    llo, lhi = np.log(lo), np.log(hi)
    for _ in range(iters):
        mid = 0.5 * (llo + lhi)
        above = func(np.exp(mid)) >= y
        lhi = np.where(above, mid, lhi)
        llo = np.where(above, llo, mid)
        if np.all(lhi - llo < 1e-15):
            break
    x = np.exp(0.5 * (llo + lhi))
    if deriv is not None:
        for _ in range(2):
            d = deriv(x)
            with np.errstate(invalid="ignore", divide="ignore"):
                step = (func(x) - y) / d
            cand = x - step
            ok = np.isfinite(cand) & (cand >= np.exp(llo) * 0.999) & (cand <= np.exp(lhi) * 1.001)
            x = np.where(ok, cand, x)
    return np.where(pos, x, 0.0).reshape(shape)


def conjugate_deriv_inverse(phi: OrliczFunction, s, a=None):
    """The maximiser t* of s t - phi_a(t), i.e. the root of phi_a'(t) = s."""
    if a is None:
        return monotone_inverse(phi.deriv, s, deriv=phi.deriv2)
    a_b, s_b = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(s, dtype=float))
    a_f = a_b.ravel()
    t = monotone_inverse(lambda x: shifted_deriv(phi, a_f, x), s_b.ravel(),
                         deriv=lambda x: shifted_deriv2(phi, a_f, x))
    return t.reshape(s_b.shape)


def conjugate(phi: OrliczFunction, s, a=None):
    """Legendre conjugate sup_t (s t - phi(t)), or of phi_a when ``a`` is given.

    Power functions use s^p'/p'; everything else maximises the concave map
    t -> s t - phi(t) through the root of phi'(t) = s.
    """
    s = np.asarray(s, dtype=float)
    if np.any(s < 0):
        raise ValueError("conjugate is evaluated for s >= 0 only")
    if a is None and isinstance(phi, PowerFunction):
        pc = phi.conjugate_exponent
        return s**pc / pc
    if a is None and isinstance(phi, ShiftedFunction):
        phi, a = phi.base, phi.a
    t_star = conjugate_deriv_inverse(phi, s, a)
    val = phi(t_star) if a is None else shifted_value(phi, a, t_star)
    out = s * t_star - val
    if not np.all(np.isfinite(out)):
        raise RangeError("conjugate diverged")
    return np.maximum(out, 0.0)


def biconjugate(phi: OrliczFunction, t, s_hi_factor=64.0):
    """sup_s (t s - phi*(s)) computed by bounded scalar maximisation.

    Independent of the closed forms: phi* is treated as a black box and the
    supremum is found with Brent's method, once per entry of ``t``.
    """
    from scipy.optimize import minimize_scalar

    t = np.atleast_1d(np.asarray(t, dtype=float))
    out = np.empty_like(t)
    for i, ti in enumerate(t):
        if ti == 0.0:
            out[i] = 0.0
            continue
        # optimum sits at s = phi'(t); search a generous log window around it
        c = math.log(float(phi.deriv(ti)))
        obj = lambda ls: -(ti * math.exp(ls) - float(conjugate(phi, math.exp(ls))))
        w = math.log(s_hi_factor)
        res = minimize_scalar(obj, bounds=(c - w, c + w), method="bounded",
                              options={"xatol": 1e-12, "maxiter": 500})
        out[i] = max(-res.fun, 0.0)
    return out


# ---------------------------------------------------------------------------
# characteristics, q selection


@dataclass(frozen=True)
class Characteristics:
    char_lo: float
    char_hi: float
    delta2: float


def characteristics(phi: OrliczFunction, t_grid=None, window_tol=1e-6) -> Characteristics:
    """Sampled bounds of phi''(t) t / phi'(t) and of phi(2t)/phi(t).

    For shifted functions the sampled bounds must sit inside
    [min(1, lo_base), max(1, hi_base)], the window every shift inherits.
    """
    t = DEFAULT_T_GRID if t_grid is None else np.asarray(t_grid, dtype=float)
    if t.size == 0 or np.any(t <= 0):
        raise ValueError("t_grid must be nonempty and positive")
    with np.errstate(all="ignore"):
        ratio = phi.deriv2(t) * t / phi.deriv(t)
        d2 = phi(2.0 * t) / phi(t)
    if not (np.all(np.isfinite(ratio)) and np.all(ratio > 0)):
        bad = t[~(np.isfinite(ratio) & (ratio > 0))][0]
        raise AssumptionViolation(f"phi'' t / phi' not positive and finite at t={bad:g}")
    if not np.all(np.isfinite(d2)):
        raise AssumptionViolation("phi(2t)/phi(t) not finite on grid")
    out = Characteristics(float(ratio.min()), float(ratio.max()), float(d2.max()))
    if isinstance(phi, ShiftedFunction):
        base = phi.base
        lo_w, hi_w = min(1.0, base.char_lo), max(1.0, base.char_hi)
        if out.char_lo < lo_w * (1 - window_tol) or out.char_hi > hi_w * (1 + window_tol):
            raise AssumptionViolation(
                f"shifted characteristics ({out.char_lo:g}, {out.char_hi:g}) leave the "
                f"window [{lo_w:g}, {hi_w:g}] of the base function")
    return out


@dataclass(frozen=True)
class QSelection:
    q: float
    c_val: float
    growth: float
    tried: tuple


def _q_ratio(phi, q, a_grid, t_grid, eta_grid):
    A, T, E = np.meshgrid(a_grid, t_grid, eta_grid, indexing="ij")
    num = shifted_value(phi, A, E ** (q - 1.0) * T)
    den = E**q * shifted_value(phi, A, T)
    return num / den  # shape (a, t, eta)


def select_q(phi: OrliczFunction, q_step=0.1, growth_tol=2.0, q_max=None,
             a_grid=None, t_grid=None, eta_grid=None) -> QSelection:
    """Smallest q on a 0.1-grid with phi_a(eta^(q-1) t) <~ eta^q phi_a(t).

    The sampled ratio is required to stay bounded as eta -> 0: its maximum
    over the smallest eta decades may exceed the maximum over eta in
    [1e-5, 1] by at most ``growth_tol``. ``c_val`` is the largest sampled
    ratio for the accepted q.
    """
    a_grid = np.concatenate([[0.0], np.logspace(-3, 3, 7)]) if a_grid is None else np.asarray(a_grid)
    t_grid = np.logspace(-3, 3, 13) if t_grid is None else np.asarray(t_grid)
    eta_grid = np.logspace(-20, 0, 41) if eta_grid is None else np.asarray(eta_grid)
    if q_max is None:
        # powers need q >= max(2, p/(p-1)); p/(p-1) = 1 + 1/char_lo
        q_max = max(phi.char_hi + 2.0, 2.0 + 1.0 / phi.char_lo) + 1.0
    small = eta_grid <= 1e-15
    mid = eta_grid >= 1e-5
    tried = []
    for q in np.round(np.arange(1.1, q_max + 1e-9, q_step), 10):
        with np.errstate(all="ignore"):
            r = _q_ratio(phi, q, a_grid, t_grid, eta_grid)
        r = np.where(np.isfinite(r), r, np.inf)
        c_mid = r[..., mid].max()
        c_small = r[..., small].max() if small.any() else c_mid
        growth = c_small / c_mid
        tried.append((float(q), float(growth)))
        if np.isfinite(c_small) and growth <= growth_tol:
            return QSelection(float(q), float(r.max()), float(growth), tuple(tried))
    raise AssumptionViolation(f"no admissible q up to {q_max:g}; last growth {tried[-1][1]:g}")


# ---------------------------------------------------------------------------
# scalar auxiliaries


def invert_phiprime_t(phi: OrliczFunction, c):
    """gamma >= 0 with phi'(gamma) gamma = c^2 (0 for c = 0)."""
    c = np.asarray(c, dtype=float)
    if np.any(c < 0):
        raise ValueError("level c must be nonnegative")
    func = lambda g: phi.deriv(g) * g
    dfunc = lambda g: phi.deriv2(g) * g + phi.deriv(g)
    with np.errstate(over="ignore"):
        cc = c * c
    if np.any(np.isinf(cc)):
        raise RangeError("level c too large: c^2 overflows")
    return monotone_inverse(func, cc, deriv=dfunc)


def rho(phi: OrliczFunction, t, n: int):
    """phi(t)^(n/2) t^(2-n)."""
    t = np.asarray(t, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = phi(t) ** (n / 2.0) * t ** (2.0 - n)
    return np.where(t > 0, out, 0.0)


def kappa(phi: OrliczFunction, t):
    d2 = np.asarray(phi.deriv2(t), dtype=float)
    with np.errstate(divide="ignore"):
        return np.maximum(np.sqrt(d2), np.sqrt(1.0 / d2))


def G_level(phi: OrliczFunction, gamma: float, t):
    """(sqrt(phi'(t) t) - sqrt(phi'(gamma) gamma))_+"""
    t = np.asarray(t, dtype=float)
    base = math.sqrt(float(phi.deriv(gamma)) * gamma)
    return np.maximum(np.sqrt(phi.deriv(t) * t) - base, 0.0)


def H_level(gamma: float, t):
    """(t^2 - gamma^2)_+"""
    t = np.asarray(t, dtype=float)
    return np.maximum(t * t - gamma * gamma, 0.0)


def rho_admissible(phi: OrliczFunction, n: int, t_grid=None, c: float = 1.01):
    """Check that rho is almost increasing on the grid.

    Returns ``(ok, c_emp)`` where ``c_emp = max_{t1 <= t2} rho(t1)/rho(t2)``,
    computed through the running maximum of rho (its monotone envelope).
    """
    t = DEFAULT_T_GRID if t_grid is None else np.sort(np.asarray(t_grid, dtype=float))
    r = rho(phi, t, n)
    if np.any(r <= 0) or not np.all(np.isfinite(r)):
        return False, math.inf
    c_emp = float(np.max(np.maximum.accumulate(r) / r))
    return c_emp <= c, c_emp


def characteristics_report(phi: OrliczFunction, n: int = 2, t_grid=None) -> dict:
    ch = characteristics(phi, t_grid)
    qs = select_q(phi)
    ok, c_emp = rho_admissible(phi, n, t_grid)
    return {
        "phi": phi.describe(),
        "char_lo": ch.char_lo,
        "char_hi": ch.char_hi,
        "delta2": ch.delta2,
        "q": qs.q,
        "rho_admissible": bool(ok),
        "rho_constant": c_emp,
    }


def make_power(p: float) -> PowerFunction:
    return PowerFunction(p)


def make_max_power(p: float, q: float) -> BrokenPowerFunction:
    return BrokenPowerFunction(p, q, "max")


def make_min_power(p: float, q: float) -> BrokenPowerFunction:
    return BrokenPowerFunction(p, q, "min")


def phi_from_config(spec: dict) -> OrliczFunction:
    """Build a function from a run-config entry like ``{"kind": "power", "p": 3}``."""
    kind = spec.get("kind")
    if kind == "power":
        return PowerFunction(spec["p"])
    if kind in ("max_power", "min_power"):
        return BrokenPowerFunction(spec["p"], spec["q"], kind.split("_")[0])
    if kind == "shifted":
        return ShiftedFunction(phi_from_config(spec["base"]), spec["a"])
    if kind == "table":
        return TableFunction(spec["t"], spec["dphi"])
    raise ValueError(f"unknown phi kind {kind!r}")
