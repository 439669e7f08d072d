"""Matrix maps A, V and the radial shrink S_eps, with sampled checks of the
equivalences relating them to shifted Orlicz functions.

Matrices are numpy arrays whose last two axes are (n, N); leading axes are
batch axes. A plain float is treated as a 1x1 matrix.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .orlicz import OrliczFunction, conjugate, shifted_deriv, shifted_value

log = logging.getLogger(__name__)

QUANTITIES = ("q1", "q2", "q3", "q4", "q5", "q6")
# the four-way chain of equivalences and the derivative-level pair
CHAIN = ("q1", "q2", "q3", "q4")
PAIRS = tuple(combinations(CHAIN, 2)) + (("q5", "q6"),)


def _as_matrix(P):
    P = np.asarray(P, dtype=float)
    if P.ndim < 2:
        P = P.reshape(P.shape + (1, 1))
    return P


def frob(P):
    P = _as_matrix(P)
    return np.sqrt(np.sum(P * P, axis=(-2, -1)))


def _radial(P, scale):
    """scale(|P|) * P / |P| with the value 0 at P = 0."""
    P = _as_matrix(P)
    r = frob(P)
    with np.errstate(invalid="ignore", divide="ignore"):
        g = np.where(r > 0, scale(r) / r, 0.0)
    return g[..., None, None] * P


def A_map(phi: OrliczFunction, P):
    """phi'(|P|) P/|P|."""
    return _radial(P, phi.deriv)


def V_map(phi: OrliczFunction, P):
    """sqrt(phi'(|P|)|P|) P/|P|."""
    return _radial(P, lambda r: np.sqrt(phi.deriv(r) * r))


def S_epsilon(Q, eps: float):
    """(|Q| - eps)_+ Q/|Q|: shrink towards the origin by eps."""
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    return _radial(Q, lambda r: np.maximum(r - eps, 0.0))


@dataclass
class HammerReport:
    q: dict
    valid: np.ndarray

    def ratio(self, num, den):
        with np.errstate(invalid="ignore", divide="ignore"):
            return self.q[num][self.valid] / self.q[den][self.valid]

    def envelopes(self) -> dict:
        """min/max of every tracked ratio over the valid samples."""
        out = {}
        for a, b in PAIRS:
            r = self.ratio(a, b)
            r = r[np.isfinite(r)]
            out[f"{a}/{b}"] = (float(r.min()), float(r.max())) if r.size else (np.nan, np.nan)
        return out


def hammer_check(phi: OrliczFunction, P, Q) -> HammerReport:
    """The six quantities of the A/V/shifted-function equivalences per pair.

    Pairs with P = Q (all quantities vanish) and pairs producing non-finite
    values are marked invalid and skipped by the envelope reduction.
    """
    P, Q = np.broadcast_arrays(_as_matrix(P), _as_matrix(Q))
    AP, AQ = A_map(phi, P), A_map(phi, Q)
    dA = AP - AQ
    a = frob(P)
    d = frob(P - Q)
    q = {
        "q1": np.sum(dA * (P - Q), axis=(-2, -1)),
        "q2": shifted_value(phi, a, d),
        "q3": frob(V_map(phi, P) - V_map(phi, Q)) ** 2,
        "q5": frob(dA),
        "q6": shifted_deriv(phi, a, d),
    }
    q["q4"] = conjugate(phi, q["q5"], a=a)
    finite = np.logical_and.reduce([np.isfinite(v) for v in q.values()])
    valid = finite & (d > 0) & np.logical_and.reduce([q[k] > 0 for k in QUANTITIES])
    n_bad = int(np.sum(~finite))
    if n_bad:
        log.warning("hammer_check: %d samples rejected for non-finite values", n_bad)
    return HammerReport(q, valid)


def sample_pairs(rng, size, n=2, N=1, lo=1e-3, hi=1e3, structured=True):
    """Matrix pairs for the property sweeps.

    Norms are log-uniform in [lo, hi] with uniformly random directions. With
    ``structured`` part of the sample is replaced by near-degenerate pairs
    (|P-Q| = 1e-8 |P|) and by a grid over |Q|/|P| and the angle between P
    and Q. The radial maps only see (|P|, |Q|, angle), so the grid pins the
    extreme configurations regardless of the seed.
    """
    def directions(m):
        x = rng.standard_normal((m, n, N))
        return x / frob(x)[:, None, None]

    def norms(m):
        return np.exp(rng.uniform(np.log(lo), np.log(hi), m))

    if structured:
        lam, theta = np.meshgrid(np.logspace(-6, 6, 41), np.linspace(0.0, np.pi, 41), indexing="ij")
        lam_s, th_s = lam.ravel(), theta.ravel()
        m_grid = lam_s.size
        m_near = max(size // 50, 1)
        m_rand = size - m_grid - m_near
        if m_rand < 0:
            raise ValueError(f"structured sample needs size >= {m_grid + m_near}")
    else:
        m_rand = size
    P = directions(m_rand) * norms(m_rand)[:, None, None]
    Q = directions(m_rand) * norms(m_rand)[:, None, None]
    if structured:
        def frame(m):
            e1 = directions(m)
            if n * N == 1:
                return e1, e1
            # Gram-Schmidt: e2 orthogonal to e1
            e2 = directions(m)
            e2 = e2 - np.sum(e2 * e1, axis=(-2, -1))[:, None, None] * e1
            return e1, e2 / frob(e2)[:, None, None]

        def rotate(e1, e2, ang):
            if n * N == 1:
                return np.where(np.cos(ang) >= 0, 1.0, -1.0)[:, None, None] * e1
            return np.cos(ang)[:, None, None] * e1 + np.sin(ang)[:, None, None] * e2

        # perturbation direction swept from radial to tangential
        e1, e2 = frame(m_near)
        rn = norms(m_near)
        psi = np.linspace(0.0, np.pi, m_near)
        Pn = rn[:, None, None] * e1
        Qn = Pn + (1e-8 * rn)[:, None, None] * rotate(e1, e2, psi)
        e1, e2 = frame(m_grid)
        r = norms(m_grid)
        Pc = r[:, None, None] * e1
        Qc = (r * lam_s)[:, None, None] * rotate(e1, e2, th_s)
        P = np.concatenate([P, Pn, Pc])
        Q = np.concatenate([Q, Qn, Qc])
    return P, Q


def hammer_envelopes(phi, n=2, N=1, size=10_000, seed=0):
    """Envelope record for one seed, in the JSON shape used for regression."""
    rng = np.random.default_rng(seed)
    P, Q = sample_pairs(rng, size, n, N)
    rep = hammer_check(phi, P, Q)
    env = rep.envelopes()
    return {
        "phi": phi.describe(),
        "n": n,
        "N": N,
        "seed": seed,
        "valid": int(rep.valid.sum()),
        "envelope": [{"pair": k, "min": v[0], "max": v[1]} for k, v in env.items()],
    }


@dataclass
class ShiftChangeCalibration:
    delta: float
    c_delta: float
    c_delta_conj: float
    margin: float
    samples: int = field(default=0)


def _shift_change_needed(phi, P, Q, t, delta, conj=False):
    a, b = frob(P), frob(Q)
    vd = frob(V_map(phi, P) - V_map(phi, Q)) ** 2
    if conj:
        lhs, base = conjugate(phi, t, a=a), conjugate(phi, t, a=b)
    else:
        lhs, base = shifted_value(phi, a, t), shifted_value(phi, b, t)
    with np.errstate(invalid="ignore", divide="ignore"):
        need = np.where(base > 0, np.maximum(lhs - delta * vd, 0.0) / base, 0.0)
    return lhs, base, vd, need


def calibrate_shift_change(phi, delta, n=2, N=1, size=4000, seed=12345, margin=0.25):
    """Largest constant needed over a calibration cloud, inflated by ``margin``.

    The cloud mixes random pairs/levels with a structured grid over
    |Q|/|P| and t/|P| for collinear and antiparallel pairs.
    """
    rng = np.random.default_rng(seed)
    P, Q = sample_pairs(rng, size, n, N)
    t = frob(P) * np.exp(rng.uniform(np.log(1e-4), np.log(1e4), size))
    base_dir = np.zeros((n, N))
    base_dir[0, 0] = 1.0
    ratios = np.logspace(-4, 4, 33)
    levels = np.logspace(-4, 4, 33)
    R, L, S = np.meshgrid(ratios, levels, np.array([-1.0, 1.0]), indexing="ij")
    Pg = np.broadcast_to(base_dir, R.shape + (n, N))
    Qg = (S * R)[..., None, None] * base_dir
    P = np.concatenate([P, Pg.reshape(-1, n, N)])
    Q = np.concatenate([Q, Qg.reshape(-1, n, N)])
    t = np.concatenate([t, L.ravel()])
    need = _shift_change_needed(phi, P, Q, t, delta)[3]
    need_c = _shift_change_needed(phi, P, Q, t, delta, conj=True)[3]
    c = max(1.0, float(np.nanmax(need))) * (1 + margin)
    cc = max(1.0, float(np.nanmax(need_c))) * (1 + margin)
    return ShiftChangeCalibration(delta, c, cc, margin, int(P.shape[0]))


def shift_change_check(phi, P, Q, t, delta, calibration: ShiftChangeCalibration | None = None):
    """Evaluate phi_|P|(t) <= c phi_|Q|(t) + delta |V(P)-V(Q)|^2 and its conjugate form.

    Returns ``(lhs, rhs, passed)`` for the primal inequality and the same
    triple for the conjugate one, each array-valued over the batch.
    """
    if not 0 < delta <= 1:
        raise ValueError("delta must lie in (0, 1]")
    if calibration is None or calibration.delta != delta:
        calibration = calibrate_shift_change(phi, delta)
    P, Q = np.broadcast_arrays(_as_matrix(P), _as_matrix(Q))
    t = np.asarray(t, dtype=float)
    lhs, base, vd, _ = _shift_change_needed(phi, P, Q, t, delta)
    rhs = calibration.c_delta * base + delta * vd
    lhs_c, base_c, _, _ = _shift_change_needed(phi, P, Q, t, delta, conj=True)
    rhs_c = calibration.c_delta_conj * base_c + delta * vd
    tol = 1e-12
    return (lhs, rhs, lhs <= rhs * (1 + tol) + tol), (lhs_c, rhs_c, lhs_c <= rhs_c * (1 + tol) + tol)
