"""Fast geometric convergence of the recursion a_{k+1} <= C b^k a_k (a_k/gamma)^alpha."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import RangeError

# (a0, C, b, alpha) sweep used by the acceptance suite: 3*3*2*3 = 54 points
DEFAULT_GRID = {
    "a0": (1e-3, 1.0, 1e3),
    "C": (1.0, 10.0, 100.0),
    "b": (2.0, 8.0),
    "alpha": (0.5, 1.0, 2.0),
}


@dataclass(frozen=True)
class RecursionParams:
    a0: float
    C: float
    b: float
    alpha: float
    gamma: float | None = None

    def __post_init__(self):
        vals = (self.a0, self.C, self.b, self.alpha)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("recursion parameters must be finite")
        if self.a0 < 0 or self.C <= 0 or self.b <= 1 or self.alpha <= 0:
            raise ValueError("need a0 >= 0, C > 0, b > 1, alpha > 0")

    def threshold(self) -> float:
        return gamma_threshold(self.a0, self.C, self.b, self.alpha)

    def with_gamma(self, gamma: float) -> "RecursionParams":
        return RecursionParams(self.a0, self.C, self.b, self.alpha, gamma)


def gamma_threshold(a0: float, C: float, b: float, alpha: float) -> float:
    """a0 * C^(1/alpha) * b^(1/alpha^2), computed in log space."""
    if C <= 0 or b <= 1 or alpha <= 0:
        raise ValueError("need C > 0, b > 1, alpha > 0")
    if a0 == 0:
        return 0.0
    log_g = math.log(a0) + math.log(C) / alpha + math.log(b) / alpha**2
    if log_g > math.log(np.finfo(float).max):
        raise RangeError(f"threshold overflows (log gamma = {log_g:.1f})")
    return math.exp(log_g)


def iterate_bound(params: RecursionParams, K: int):
    """Extremal sequence a_{k+1} = C b^k a_k (a_k/gamma)^alpha for k < K.

    Returns ``(a, overflow)``; entries past an overflow are ``inf`` and flagged.
    When ``params.gamma`` is None the threshold value is used.

    The recursion is run in the normalised variable x_k = log(a_k/(a0 b^(-k/alpha))),
    for which it reads x_{k+1} = (1+alpha) x_k + beta with
    beta = log C + alpha log(a0/gamma) + log(b)/alpha. At the threshold
    beta = 0 and x_k = 0 is a repelling fixed point: a rounding error in a
    floating-point gamma would grow like (1+alpha)^k. So beta is set to 0
    exactly when gamma is left at the threshold.
    """
    if not 0 <= K <= 10_000:
        raise ValueError("K must lie in [0, 10^4]")
    a = np.zeros(K + 1)
    over = np.zeros(K + 1, dtype=bool)
    a[0] = params.a0
    if params.a0 == 0:
        return a, over
    if params.gamma is None:
        beta = 0.0
    elif params.gamma > 0:
        beta = (math.log(params.C) + params.alpha * (math.log(params.a0) - math.log(params.gamma))
                + math.log(params.b) / params.alpha)
    else:
        raise ValueError("gamma must be positive when a0 > 0")
    la0, rate = math.log(params.a0), math.log(params.b) / params.alpha
    big = math.log(np.finfo(float).max)
    x = 0.0
    for k in range(K):
        x = (1 + params.alpha) * x + beta
        la = la0 - (k + 1) * rate + x
        if la > big:
            a[k + 1:] = np.inf
            over[k + 1:] = True
            break
        a[k + 1] = math.exp(la)  # underflows harmlessly to 0
    return a, over


def decay_certificate(params: RecursionParams, K: int):
    """a0 * b^(-k/alpha), the closed-form majorant of the threshold sequence."""
    if params.a0 == 0:
        return np.zeros(K + 1)
    k = np.arange(K + 1)
    return np.exp(math.log(params.a0) - k * (math.log(params.b) / params.alpha))


def inductive_step_holds(params: RecursionParams, k: int, rtol: float = 1e-12) -> bool:
    """One step of the induction: a_k = a0 b^(-k/alpha) maps to at most a0 b^(-(k+1)/alpha)."""
    gamma = params.threshold() if params.gamma is None else params.gamma
    if params.a0 == 0:
        return True
    # log of C b^k a_k (a_k/gamma)^alpha minus log of the next certificate value
    la = math.log(params.a0) - k * math.log(params.b) / params.alpha
    nxt = math.log(params.C) + k * math.log(params.b) + la + params.alpha * (la - math.log(gamma))
    target = math.log(params.a0) - (k + 1) * math.log(params.b) / params.alpha
    return nxt <= target + rtol * max(1.0, abs(target))


@dataclass
class DecayRow:
    a0: float
    C: float
    b: float
    alpha: float
    gamma: float
    k_decay: int
    ratio_final: float
    passed: bool


def verify_decay(grid: dict | None = None, K: int = 200, rtol: float = 1e-12, floor: float = 1e-10):
    """Run the threshold recursion over a parameter grid.

    A point passes when every a_k stays below the certificate (relative slack
    ``rtol``), every inductive step checks out and a_K < floor * a0.
    ``k_decay`` is the first k with a_k < floor * a0 (-1 if never).
    """
    grid = DEFAULT_GRID if grid is None else grid
    rows = []
    for a0, C, b, alpha in itertools.product(grid["a0"], grid["C"], grid["b"], grid["alpha"]):
        prm = RecursionParams(a0, C, b, alpha)
        gamma = prm.threshold()
        a, over = iterate_bound(prm, K)
        cert = decay_certificate(prm, K)
        below = bool(np.all(a <= cert * (1 + rtol))) and not over.any()
        steps = all(inductive_step_holds(prm, k) for k in range(K))
        small = a <= floor * a0
        k_decay = int(np.argmax(small)) if small.any() else -1
        ratio = float(a[-1] / a0) if a0 > 0 else 0.0
        ok = below and steps and (a0 == 0 or ratio < floor)
        rows.append(DecayRow(a0, C, b, alpha, gamma, k_decay, ratio, ok))
    return rows


def decay_csv(rows) -> str:
    lines = ["a0,C,b,alpha,gamma,k_decay,pass"]
    for r in rows:
        lines.append(f"{r.a0!r},{r.C!r},{r.b!r},{r.alpha!r},{r.gamma!r},{r.k_decay},{int(r.passed)}")
    return "\n".join(lines) + "\n"
