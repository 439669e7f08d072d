"""Discrete evaluation of the gradient estimates on solver output.

All quantities are computed from a ``GradOrField`` restricted to parabolic
cylinders Q_r = (t0 - alpha r^2, t0] x B_r(x0). Time integrals use the
recorded snapshots (each stands for the step interval ending at its time);
space integrals use cell centres inside the ball. Averages are normalised by
the discrete measure of the region, so constants average to themselves.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import AssumptionViolation, OutOfDomain
from .iteration import RecursionParams, gamma_threshold, iterate_bound
from .orlicz import (
    G_level,
    OrliczFunction,
    conjugate,
    rho,
    rho_admissible,
    select_q,
)
from .solver import GradOrField
from .tensor_maps import A_map

R_HAT = 10.0  # inner Lebesgue exponent replacing n/(n-2) when n <= 2
C_ZETA = 15.0 / 4.0  # Lipschitz factor of the quintic-smoothstep cutoffs


def smoothstep(s):
    """C^2 quintic ramp 6s^5 - 15s^4 + 10s^3 clipped to [0, 1]."""
    s = np.clip(s, 0.0, 1.0)
    return s**3 * (10.0 - 15.0 * s + 6.0 * s**2)


def inner_exponent(n: int) -> float:
    return n / (n - 2) if n > 2 else R_HAT


@dataclass(frozen=True)
class ParabolicCylinder:
    t0: float
    x0: tuple
    R: float
    alpha: float = 1.0

    def __post_init__(self):
        if self.R <= 0 or self.alpha <= 0:
            raise ValueError("need R > 0 and alpha > 0")

    def time_length(self, lam: float = 1.0) -> float:
        return self.alpha * (lam * self.R) ** 2

    def contains(self, t, x, lam: float = 1.0):
        """Indicator of Q_{lam R} at times ``t`` (shape (nt,)) and points ``x`` (nx, n)."""
        dist = np.sqrt(np.sum((np.asarray(x) - np.asarray(self.x0)) ** 2, axis=-1))
        tin = (t > self.t0 - self.time_length(lam) - 1e-12) & (t <= self.t0 + 1e-12)
        return tin[:, None] & (dist <= lam * self.R)[None, :]


class CylinderSample:
    """A field restricted to Q_{2R}: snapshot indices, cell indices and geometry."""

    def __init__(self, fld: GradOrField, cyl: ParabolicCylinder, margin_cells: int = 2):
        self.fld, self.cyl = fld, cyl
        n = fld.n
        if len(cyl.x0) != n:
            raise ValueError("cylinder centre has the wrong dimension")
        t = fld.t
        t_lo = cyl.t0 - cyl.time_length(2.0)
        tol = 1e-9 * max(1.0, abs(cyl.t0))
        if cyl.t0 > t[-1] + tol or t_lo < t[0] - tol:
            raise OutOfDomain(f"time range ({t_lo:.4g}, {cyl.t0:.4g}] outside the run [{t[0]:.4g}, {t[-1]:.4g}]")
        for ax in range(n):
            a, b = fld.extent[ax]
            m = margin_cells * fld.h[ax]
            if cyl.x0[ax] - 2 * cyl.R < a + m - 1e-12 or cyl.x0[ax] + 2 * cyl.R > b - m + 1e-12:
                raise OutOfDomain("ball B_2R leaves the domain minus the margin")
        self.tidx = np.flatnonzero((t > t_lo + tol) & (t <= cyl.t0 + tol))
        if self.tidx.size == 0:
            raise OutOfDomain("no snapshot inside the cylinder")
        self.t = t[self.tidx]
        centers = np.meshgrid(*fld.cell_centers, indexing="ij")
        X = np.stack([c.ravel() for c in centers], axis=-1)
        self.dist_all = np.sqrt(np.sum((X - np.asarray(cyl.x0)) ** 2, axis=-1))
        self.cells = np.flatnonzero(self.dist_all <= 2 * cyl.R)
        self.X = X[self.cells]
        self.dist = self.dist_all[self.cells]

    def take(self, arr):
        """Restrict a per-snapshot cell array (n_snap, *cells, ...) to (nt, nx, ...)."""
        arr = np.asarray(arr)
        nsp = len(self.fld.v.shape) - 1
        flat = arr.reshape(arr.shape[:1] + (-1,) + arr.shape[1 + nsp:])
        return flat[self.tidx][:, self.cells]

    @property
    def v(self):
        return self.take(self.fld.v)

    def indicator(self, lam: float):
        return self.cyl.contains(self.t, self.X, lam)

    def average(self, f, weight=None, region_lam: float = 2.0):
        """Dashed integral over Q_{region_lam R} of f*weight (f of shape (nt, nx))."""
        f = np.asarray(f, dtype=float)
        if weight is not None:
            f = f * weight
        if region_lam == 2.0:
            return float(np.mean(f))
        mask = self.indicator(region_lam)
        if not mask.any():
            raise OutOfDomain("empty sub-cylinder")
        return float(np.sum(f[mask]) / np.sum(mask))

    def sup(self, f, region_lam: float = 1.0):
        mask = self.indicator(region_lam)
        if not mask.any():
            raise OutOfDomain("empty sub-cylinder")
        return float(np.max(np.asarray(f)[mask]))


@dataclass
class CutoffFamily:
    """zeta_k = 1 on Q_{k+1}, supported in Q_k, with Q_k = Q_{(1+2^-k)R}.

    zeta_k(t, x) = sigma(space) sigma(time) with sigma the quintic smoothstep
    across the gap between the two cylinders.
    """
    cyl: ParabolicCylinder
    k_max: int
    C_zeta: float = C_ZETA

    def radius(self, k):
        return (1.0 + 2.0 ** (-k)) * self.cyl.R

    def __call__(self, k, t, dist):
        cyl = self.cyl
        r_out, r_in = self.radius(k), self.radius(k + 1)
        s_space = (r_out - np.asarray(dist)) / (r_out - r_in)
        t_out, t_in = cyl.t0 - cyl.alpha * r_out**2, cyl.t0 - cyl.alpha * r_in**2
        s_time = (np.asarray(t) - t_out) / (t_in - t_out)
        return smoothstep(s_time)[:, None] * smoothstep(s_space)[None, :]

    def grad_bound(self, k):
        return self.C_zeta * 2.0**k / self.cyl.R

    def dt_bound(self, k):
        return self.C_zeta * 2.0**k / (self.cyl.alpha * self.cyl.R**2)


def cutoff_certificate(cut: CutoffFamily, k: int, n: int = 2, points: int = 401):
    """Largest discrete slopes of zeta_k along a radial line and in time,
    divided by the stated bounds (both ratios must be <= 1)."""
    cyl = cut.cyl
    r = np.linspace(0.0, 2 * cyl.R, points)
    t = np.linspace(cyl.t0 - 4 * cyl.alpha * cyl.R**2, cyl.t0, points)
    z_space = cut(k, np.array([cyl.t0]), r)[0]
    z_time = cut(k, t, np.array([0.0]))[:, 0]
    gs = np.max(np.abs(np.diff(z_space)) / np.diff(r))
    gt = np.max(np.abs(np.diff(z_time)) / np.diff(t))
    return gs / cut.grad_bound(k), gt / cut.dt_bound(k)


def _zeta_sample(sample: CylinderSample, cut: CutoffFamily | None, k: int):
    if cut is None:
        return np.ones((sample.t.size, sample.cells.size))
    return cut(k, sample.t, sample.dist)


def bochner_norm(f, s, r, k, sample: CylinderSample, cut: CutoffFamily | None, q: float = 2.0):
    """(avg_I (avg_B |f|^r zeta_k^q dx)^(s/r) dt)^(1/s) over Q_{2R}.

    ``f`` has shape (nt, nx) (already restricted) or the full field shape.
    ``s``/``r`` may be ``np.inf`` for discrete maxima. ``cut=None`` uses
    zeta = 1.
    """
    f = np.abs(np.asarray(f, dtype=float))
    if f.shape != (sample.t.size, sample.cells.size):
        f = sample.take(f)
    z = _zeta_sample(sample, cut, k) ** q
    if np.isinf(r):
        inner = np.max(f * (z > 0), axis=1)
    else:
        inner = np.mean(f**r * z, axis=1) ** (1.0 / r)
    if np.isinf(s):
        return float(np.max(inner))
    return float(np.mean(inner**s) ** (1.0 / s))


@dataclass
class DeGiorgiTrace:
    gamma_inf: float
    gamma: np.ndarray
    Y: np.ndarray
    Z: np.ndarray
    W: np.ndarray
    q: float
    stop_index: int | None = None
    extras: dict = field(default_factory=dict)


def compute_trace(fld: GradOrField, cyl: ParabolicCylinder, gamma_inf: float, k_max: int,
                  phi: OrliczFunction, q: float | None = None) -> DeGiorgiTrace:
    if gamma_inf <= 0:
        raise ValueError("gamma_inf must be positive")
    q = select_q(phi).q if q is None else q
    sample = CylinderSample(fld, cyl)
    cut = CutoffFamily(cyl, k_max + 1)
    v = sample.v
    phiv = phi(v)
    ks = np.arange(k_max + 1)
    gam = gamma_inf * (1.0 - 2.0 ** (-ks))
    Y, Z = np.zeros(k_max + 1), np.zeros(k_max + 1)
    stop = None
    for k in ks:
        ind = v > gam[k]
        Y[k] = bochner_norm(phiv * ind, 1, 1, k, sample, cut, q)
        Z[k] = bochner_norm(v**2 * ind, 1, 1, k, sample, cut, q) / cyl.alpha
        if Y[k] + Z[k] == 0:
            stop = int(k)
            break
    return DeGiorgiTrace(gamma_inf, gam, Y, Z, Y + Z, q, stop)


def verify_levelset_lemma(trace: DeGiorgiTrace, fld: GradOrField, cyl: ParabolicCylinder,
                          phi: OrliczFunction):
    """Per-level constants of the two level-set estimates and the fitted growth exponent.

    c1_k = LHS1_k / (2^(3k) W_k), c2_k = LHS2_k / (2^(3k) W_k) for k with W_k > 0.
    ``beta`` is the least-squares slope of log2(LHS/W_k) against k over
    levels with nonzero LHS (nan when fewer than two are available).
    """
    sample = CylinderSample(fld, cyl)
    k_max = trace.gamma.size - 1
    cut = CutoffFamily(cyl, k_max + 2)
    v = sample.v
    phiv = phi(v)
    r_in = inner_exponent(fld.n)
    rows = []
    for k in range(k_max):
        Wk = trace.W[k]
        g_next = trace.gamma_inf * (1.0 - 2.0 ** (-(k + 1)))
        ind = v > g_next
        lhs1 = bochner_norm(v**2 * ind, np.inf, 1, k + 1, sample, cut, trace.q) / cyl.alpha
        lhs2 = bochner_norm(phiv * ind, 1, r_in, k + 1, sample, cut, trace.q)
        if Wk == 0:
            rows.append({"k": k, "W": 0.0, "lhs1": lhs1, "lhs2": lhs2, "c1": 0.0, "c2": 0.0, "vacuous": True})
            continue
        scale = 2.0 ** (3 * k) * Wk
        rows.append({"k": k, "W": float(Wk), "lhs1": lhs1, "lhs2": lhs2,
                     "c1": lhs1 / scale, "c2": lhs2 / scale, "vacuous": False})
    betas = []
    for key in ("lhs1", "lhs2"):
        pts = [(r["k"], math.log2(r[key] / r["W"])) for r in rows if not r["vacuous"] and r[key] > 0]
        if len(pts) >= 2:
            kk, yy = np.array(pts).T
            betas.append(float(np.polyfit(kk, yy, 1)[0]))
    beta = max(betas) if betas else float("nan")
    cmax = max((max(r["c1"], r["c2"]) for r in rows), default=0.0)
    return {"rows": rows, "beta": beta, "c_max": cmax}


def level_inflation_constant(phi: OrliczFunction, gamma_inf: float, k_max: int = 12, samples: int = 200):
    """Smallest C with h(t) <= C 2^(k+1) (h(t) - h(gamma_k))_+ for sampled t > gamma_{k+1},
    k = 1..k_max, for h(t) = t^2 and h(t) = sqrt(phi'(t) t)."""
    hs = {"square": lambda t: t**2, "sqrt_phiprime": lambda t: np.sqrt(phi.deriv(t) * t)}
    out = {}
    for name, h in hs.items():
        c = 0.0
        for k in range(1, k_max + 1):
            gk = gamma_inf * (1 - 2.0 ** (-k))
            gk1 = gamma_inf * (1 - 2.0 ** (-k - 1))
            t = gk1 * np.exp(np.linspace(1e-9, np.log(1e3), samples))
            need = h(t) / (2.0 ** (k + 1) * (h(t) - h(gk)))
            c = max(c, float(np.max(need)))
        out[name] = c
    return out


def intrinsic_level(phi: OrliczFunction, gamma, alpha: float, n: int):
    """M(gamma) = min{rho(gamma) alpha^((n-2)/2), gamma^2/alpha}."""
    gamma = np.asarray(gamma, dtype=float)
    return np.minimum(rho(phi, gamma, n) * alpha ** ((n - 2) / 2), gamma**2 / alpha)


def energy_average(fld: GradOrField, cyl: ParabolicCylinder, phi: OrliczFunction) -> float:
    """W_0 = avg over Q_2R of phi(v) + v^2/alpha."""
    sample = CylinderSample(fld, cyl)
    v = sample.v
    return sample.average(phi(v) + v**2 / cyl.alpha)


def choose_gamma_infty(fld: GradOrField, cyl: ParabolicCylinder, phi: OrliczFunction, n: int,
                       kappa_cal: float = 1.0, W0: float | None = None) -> float:
    """Root of min{rho(g) alpha^((n-2)/2), g^2/alpha} = kappa_cal W0 by bisection."""
    ok, _ = rho_admissible(phi, n)
    if not ok:
        raise AssumptionViolation(f"rho is not almost increasing for n={n}")
    W0 = energy_average(fld, cyl, phi) if W0 is None else W0
    return level_from_energy(phi, cyl.alpha, n, kappa_cal * W0)


def level_from_energy(phi, alpha, n, target, iters=200):
    if target <= 0:
        return 0.0
    M = lambda g: float(intrinsic_level(phi, g, alpha, n))
    lo, hi = 1.0, 1.0
    while M(lo) > target:
        lo *= 0.5
    while M(hi) < target:
        hi *= 2.0
    llo, lhi = math.log(lo), math.log(hi)
    for _ in range(iters):
        mid = 0.5 * (llo + lhi)
        if M(math.exp(mid)) < target:
            llo = mid
        else:
            lhi = mid
        if lhi - llo < 1e-15:
            break
    return math.exp(0.5 * (llo + lhi))


def verify_main_bound(fld: GradOrField, cyl: ParabolicCylinder, phi: OrliczFunction, n: int):
    """Both sides of min{sup rho(v) alpha^((n-2)/2), sup v^2/alpha} <= c avg(v^2/alpha + phi(v))."""
    ok, c_rho = rho_admissible(phi, n)
    if not ok:
        raise AssumptionViolation(f"rho is not almost increasing for n={n}")
    sample = CylinderSample(fld, cyl)
    v = sample.v
    lhs = min(sample.sup(rho(phi, v, n) * cyl.alpha ** ((n - 2) / 2)), sample.sup(v**2 / cyl.alpha))
    rhs = sample.average(v**2 / cyl.alpha + phi(v))
    ratio = lhs / rhs if rhs > 0 else (0.0 if lhs == 0 else math.inf)
    return {"lhs": float(lhs), "rhs": float(rhs), "ratio": float(ratio)}


def degiorgi_closure(trace: DeGiorgiTrace, alpha: float, phi: OrliczFunction, n: int, K: int = 60):
    """Fit C in W_{k+1} <= C 2^(3k(1+2/n)) W_k (W_k/M)^(2/n) and iterate the majorant.

    Diagnostic only: reports the fitted C, the threshold the iteration lemma
    would need and whether the majorant decays with gamma = M.
    """
    M = float(intrinsic_level(phi, trace.gamma_inf, alpha, n))
    b = 2.0 ** (3 * (1 + 2 / n))
    a = 2.0 / n
    W = trace.W
    cs = [W[k + 1] / (b**k * W[k] * (W[k] / M) ** a) for k in range(W.size - 1) if W[k] > 0 and W[k + 1] > 0]
    if W[0] <= 0 or not cs:
        # W_1 = 0: the recursion holds with every C > 0 and the majorant vanishes after one step
        return {"C": 0.0, "M": M, "threshold": 0.0, "decays": True}
    C = max(cs)
    thr = gamma_threshold(W[0], C, b, a)
    seq, over = iterate_bound(RecursionParams(W[0], C, b, a, M), K)
    return {"C": float(C), "M": M, "threshold": float(thr),
            "decays": bool(not over.any() and seq[-1] < seq[0])}


def dibenedetto_terms(fld: GradOrField, cyl: ParabolicCylinder, p: float, n: int):
    """LHS, the new right-hand side and the classical one with the alpha^(p/(2-p)) term."""
    if p == 2:
        return None
    from .orlicz import make_power
    phi = make_power(p)
    mb = verify_main_bound(fld, cyl, phi, n)
    dib = max(mb["rhs"], cyl.alpha ** (p / (2 - p)))
    return {"lhs": mb["lhs"], "rhs_new": mb["rhs"], "rhs_dib": dib, "alpha_term": cyl.alpha ** (p / (2 - p))}


def dibenedetto_compare(runs, cyl: ParabolicCylinder, p: float, n: int):
    """Amplitude sweep report from ``runs``: a list of (amplitude, field) pairs.

    The report lists the three quantities per amplitude, their values
    relative to the largest amplitude and whether LHS and RHS_new decrease
    monotonically while RHS_dib stays at or above the alpha term.
    """
    if p == 2:
        return {"skipped": True, "reason": "the alpha^(p/(2-p)) term is undefined for p = 2"}
    rows = []
    for s, fld in sorted(runs, key=lambda r: -r[0]):
        if s == 0:
            alpha_term = cyl.alpha ** (p / (2 - p))
            rows.append({"s": 0.0, "lhs": 0.0, "rhs_new": 0.0, "rhs_dib": alpha_term, "alpha_term": alpha_term})
            continue
        d = dibenedetto_terms(fld, cyl, p, n)
        rows.append({"s": float(s), **d})
    base = rows[0]
    for r in rows:
        r["lhs_rel"] = r["lhs"] / base["lhs"] if base["lhs"] > 0 else 0.0
        r["rhs_new_rel"] = r["rhs_new"] / base["rhs_new"] if base["rhs_new"] > 0 else 0.0
        r["ratio"] = r["lhs"] / r["rhs_new"] if r["rhs_new"] > 0 else 0.0
    lhs = [r["lhs"] for r in rows]
    rn = [r["rhs_new"] for r in rows]
    mono = all(a > b for a, b in zip(lhs, lhs[1:])) and all(a > b for a, b in zip(rn, rn[1:]))
    floor = all(r["rhs_dib"] >= r["alpha_term"] for r in rows)
    ratios = [r["ratio"] for r in rows if r["rhs_new"] > 0]
    return {"skipped": False, "rows": rows, "monotone": mono, "dib_floor": floor,
            "ratio_spread": (max(ratios) / min(ratios)) if ratios and min(ratios) > 0 else math.inf}


def _spatial_gradient(arr, h, n):
    """Centred differences of (nsnap, *cells, ...) along the n spatial axes, stacked last-but-trailing."""
    return np.stack([np.gradient(arr, h[ax], axis=1 + ax) for ax in range(n)], axis=-1)


def caccioppoli_check(fld: GradOrField, cyl: ParabolicCylinder, phi: OrliczFunction,
                      f_choice="one", gamma: float | None = None, q: float | None = None,
                      user_f=None):
    """Terms of the energy inequality with eta = 1 on Q_R, supported in Q_2R.

    ``f_choice``: "one" (f = 1, H = t^2/2), "level" (f = indicator of t > gamma,
    H = (t^2 - gamma^2)_+ as in the level-set corollary) or "user" (callable
    ``user_f``, H by quadrature of t f(t)).

    Returns lhs_sup, lhs_gradV, rhs1, rhs2 and c_emp = (lhs_sup + lhs_gradV)/(rhs1 + rhs2).
    For "level" the corollary form with grad(G(v) eta^(q/2)) and phi(v) in
    place of |V|^2 is also evaluated (``*_cor`` keys, ``c_emp_cor``).
    """
    if q is None:
        raise AssumptionViolation("select q first (orlicz.select_q) and pass it in")
    n = fld.n
    R, alpha = cyl.R, cyl.alpha
    v_full = fld.v
    if f_choice == "one":
        f = lambda t: np.ones_like(t)
        H = lambda t: 0.5 * t**2
    elif f_choice == "level":
        if gamma is None:
            raise ValueError("the level choice needs gamma")
        f = lambda t: (t > gamma).astype(float)
        H = lambda t: np.maximum(t**2 - gamma**2, 0.0)
    elif f_choice == "user":
        f = user_f
        from scipy.integrate import cumulative_trapezoid
        grid = np.linspace(0.0, max(float(v_full.max()), 1e-12), 4001)
        Hg = cumulative_trapezoid(grid * f(grid), grid, initial=0.0)
        H = lambda t: np.interp(t, grid, Hg)
    else:
        raise ValueError(f"unknown f_choice {f_choice!r}")
    sample = CylinderSample(fld, cyl)
    v = sample.v
    # eta = 1 on Q_R, zero outside Q_2R: one step of the smoothstep family
    cut = CutoffFamily(cyl, 1)
    eta = cut(0, sample.t, sample.dist)
    grad_eta_inf = (15.0 / 8.0) / R  # max slope of the smoothstep over a gap of width R
    # time derivative of eta in closed form
    t_out, t_in = cyl.t0 - 4 * alpha * R**2, cyl.t0 - alpha * R**2
    st = np.clip((sample.t - t_out) / (t_in - t_out), 0.0, 1.0)
    dsig = 30.0 * st**2 * (1 - st) ** 2 / (t_in - t_out)
    s_space = (2 * R - sample.dist) / R
    eta_t = np.abs(dsig[:, None] * smoothstep(s_space)[None, :])
    gV2 = sample.take(np.sum(fld.gradV**2, axis=(-3, -2, -1)))
    V2 = sample.take(np.sum(fld.Vfield**2, axis=(-2, -1)))
    fv = f(v)
    Hv = H(v)
    inner = sample.indicator(1.0)
    # sup over the time slab of Q_R of avg over B_R
    ball = sample.dist <= R
    tmask = inner.any(axis=1)
    lhs_sup = float(np.max(np.mean((Hv * eta**q)[tmask][:, ball], axis=1))) / alpha
    lhs_gradV = R**2 * sample.average(gV2 * eta**q * fv, region_lam=1.0)
    rhs1 = R**2 * sample.average(V2 * grad_eta_inf**2 * fv)
    rhs2 = R**2 * sample.average(Hv * eta ** (q - 1) * eta_t)
    rhs = rhs1 + rhs2
    out = {"lhs_sup": lhs_sup, "lhs_gradV": lhs_gradV, "rhs1": rhs1, "rhs2": rhs2,
           "c_emp": (lhs_sup + lhs_gradV) / rhs if rhs > 0 else (0.0 if lhs_sup + lhs_gradV == 0 else math.inf)}
    if f_choice == "level":
        G = G_level(phi, gamma, fld.v)
        # eta^(q/2) on the full grid of the snapshots in the sample
        eta_full = np.zeros(fld.v.shape)
        flat = eta_full.reshape(eta_full.shape[0], -1)
        sub = flat[sample.tidx]
        sub[:, sample.cells] = eta ** (q / 2)
        flat[sample.tidx] = sub
        Ge = G * eta_full
        gradGe2 = sample.take(np.sum(_spatial_gradient(Ge, fld.h, n) ** 2, axis=-1))
        lhs_grad_cor = R**2 * sample.average(gradGe2, region_lam=1.0)
        rhs1_cor = R**2 * sample.average(phi(v) * grad_eta_inf**2 * (v > gamma))
        rhs_cor = rhs1_cor + rhs2
        lhs_cor = lhs_sup + lhs_grad_cor
        out.update({"lhs_grad_cor": lhs_grad_cor, "rhs1_cor": rhs1_cor,
                    "c_emp_cor": lhs_cor / rhs_cor if rhs_cor > 0 else (0.0 if lhs_cor == 0 else math.inf)})
    return out


def stationary_check(fld: GradOrField, x0, R: float, phi: OrliczFunction, q: float | None = None,
                     k_max: int = 12, C: float = 1.0):
    """sup_{B_R} phi(v) against avg_{B_2R} phi(v), plus the U_k level iteration.

    U_k = avg_{B_2R} G_k(v)^2 eta_k^q with G_k = (sqrt(phi'(v) v) - c_k)_+,
    c_k = c_inf (1 - 2^-k), eta_k = 1 on B_{k+1}, supported in B_k. c_inf is
    calibrated from U_0 with the iteration-lemma threshold for
    b = 2^6, alpha = 2/n and constant ``C``.
    """
    q = select_q(phi).q if q is None else q
    t0 = float(fld.t[-1])
    cyl = ParabolicCylinder(t0, tuple(x0), R, alpha=1.0)
    # stationary fields carry one snapshot; the time window is irrelevant
    one = GradOrField(np.array([t0 - 4 * R**2, t0]), fld.u, np.repeat(fld.grad[-1:], 2, 0),
                      np.repeat(fld.v[-1:], 2, 0), np.repeat(fld.Vfield[-1:], 2, 0),
                      np.repeat(fld.gradV[-1:], 2, 0), fld.h, fld.extent, fld.n, fld.N)
    sample = CylinderSample(one, cyl)
    v = sample.v[-1]
    phiv = phi(v)
    lhs = float(np.max(phiv[sample.dist <= R]))
    rhs = float(np.mean(phiv))
    n = fld.n
    w = np.sqrt(phi.deriv(v) * v)
    cut = CutoffFamily(cyl, k_max + 1)
    ones_t = np.array([t0])

    def U(k, c_inf):
        ck = c_inf * (1 - 2.0 ** (-k))
        eta = cut(k, ones_t, sample.dist)[0]
        return float(np.mean(np.maximum(w - ck, 0.0) ** 2 * eta**q))

    U0 = U(0, 0.0)
    if U0 == 0:
        return {"lhs": lhs, "rhs": rhs, "ratio": 0.0 if lhs == 0 else math.inf,
                "U": [0.0] * (k_max + 1), "c_inf": 0.0, "decay": True}
    c_inf = math.sqrt(gamma_threshold(U0, C, 2.0**6, 2.0 / n))
    Us = [U(k, c_inf) for k in range(k_max + 1)]
    return {"lhs": lhs, "rhs": rhs, "ratio": lhs / rhs if rhs > 0 else math.inf, "U": Us,
            "c_inf": c_inf, "sup_level": float(np.max(w)),
            "decay": bool(Us[-1] < 1e-6 * Us[0])}


def w21_check(fld: GradOrField, cyl: ParabolicCylinder, phi: OrliczFunction, snapshot: int = -1):
    """L^1 norms of grad^2 u and grad A(grad u) on B_2R at one snapshot against
    avg |grad V|^2 + avg phi(v) + phi*(1) (resp. phi(1))."""
    sample = CylinderSample(fld, cyl)
    n = fld.n
    g = fld.grad[snapshot:][:1] if snapshot != -1 else fld.grad[-1:]
    hess = _spatial_gradient(g, fld.h, n)
    A = A_map(phi, g)
    dA = _spatial_gradient(A, fld.h, n)
    cells = sample.cells
    h2 = np.sqrt(np.sum(hess**2, axis=(-3, -2, -1))).reshape(-1)[cells]
    a2 = np.sqrt(np.sum(dA**2, axis=(-3, -2, -1))).reshape(-1)[cells]
    gV = fld.gradV[snapshot]
    gV2 = np.sum(gV**2, axis=(-3, -2, -1)).reshape(-1)[cells]
    phiv = phi(fld.v[snapshot].reshape(-1)[cells])
    lhs1, lhs2 = float(np.mean(h2)), float(np.mean(a2))
    base = float(np.mean(gV2) + np.mean(phiv))
    rhs1 = base + float(conjugate(phi, 1.0))
    rhs2 = base + float(phi(1.0))
    return {"lhs1": lhs1, "lhs2": lhs2, "rhs1": rhs1, "rhs2": rhs2,
            "ratio1": lhs1 / rhs1, "ratio2": lhs2 / rhs2}


def hoelder_diagnostic(fld: GradOrField, cyl: ParabolicCylinder, phi: OrliczFunction, n_radii: int = 4,
                       floor: float = 1e-10):
    """Fit mu in osc_{Q_r} grad u ~ C (r/R)^mu over radii r = (R/2) 2^(-j/2), j < n_radii.

    The kappa(sup_{Q_R} v) factor only shifts the intercept and is reported
    separately. Oscillations below ``floor`` times the gradient scale are
    treated as unresolved.
    """
    from .orlicz import kappa

    sample = CylinderSample(fld, cyl)
    G = sample.take(fld.grad)
    v = sample.v
    vmax = sample.sup(v, 1.0)
    radii = [(cyl.R / 2) * 2.0 ** (-j / 2) for j in range(n_radii)]
    osc = []
    for r in radii:
        mask = sample.indicator(r / cyl.R)
        if mask.sum() < 2:
            osc.append(0.0)
            continue
        vals = G[mask]
        osc.append(float(np.sqrt(np.sum((vals.max(axis=0) - vals.min(axis=0)) ** 2))))
    osc = np.array(osc)
    kap = float(kappa(phi, vmax)) if vmax > 0 else float("nan")
    good = osc > floor * max(vmax, 1.0)
    if good.sum() < 2:
        return {"mu_fit": None, "unresolved": True, "osc": osc.tolist(), "radii": radii, "kappa": kap}
    mu = float(np.polyfit(np.log(np.array(radii)[good] / cyl.R), np.log(osc[good]), 1)[0])
    return {"mu_fit": mu, "unresolved": False, "osc": osc.tolist(), "radii": radii, "kappa": kap}
