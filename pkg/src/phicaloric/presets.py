"""Named initial/boundary data used by the runner and the oracle tests.

Every preset is a function returning keyword arguments for ``GridSpec``
(``u0``, ``bc``, ``forcing``, ``extent``, ``t_start``) plus an optional exact
solution under ``exact``.
"""
from __future__ import annotations

import math

import numpy as np


def _norm(X):
    return np.sqrt(np.sum(X * X, axis=-1))


def eigenmode(n=2, N=1, amplitude=1.0, modes=None, **_):
    """amplitude * prod_i sin(k_i pi x_i) on the unit box, zero boundary data.

    Component c uses wave numbers ``modes[c]`` (default: all ones, then
    (c+1, 1, ...)) so vector targets are not collinear.
    """
    if modes is None:
        modes = [[1 + c] + [1] * (n - 1) for c in range(N)]
    modes = np.asarray(modes, dtype=float).reshape(N, n)

    def u0(X):
        return amplitude * np.stack([np.prod(np.sin(np.pi * k * X), axis=-1) for k in modes], axis=-1)

    return {"u0": u0, "bc": lambda t, X: np.zeros((X.shape[0], N)),
            "extent": ((0.0, 1.0),) * n, "modes": modes}


def heat_eigen_exact(modes, amplitude, h, dt):
    """Fully discrete decay of a sine eigenmode under backward Euler with the
    three-point Laplacian on a uniform grid (diagonal-cut P1 with lumped mass
    reduces to it): amplitude (1 + lam_h dt)^(-m)."""
    lam = sum(4.0 / hh**2 * math.sin(k * math.pi * hh / 2) ** 2 for k, hh in zip(modes, h))

    def u(t, X):
        m = np.round(t / dt)
        return amplitude * (1.0 + lam * dt) ** (-m) * np.prod(np.sin(np.pi * np.asarray(modes) * X), axis=-1)

    return u, lam


def affine(n=2, N=1, slope=None, offset=0.0, **_):
    """u = offset + x . slope, reproduced exactly by every phi."""
    B = np.ones((n, N)) if slope is None else np.asarray(slope, dtype=float).reshape(n, N)

    def u(t, X):
        return offset + X @ B

    return {"u0": lambda X: u(0.0, X), "bc": u, "exact": u, "extent": ((0.0, 1.0),) * n}


def barenblatt_profile(p, n, C=1.0):
    """Source-type solution of du/dt = div(|grad u|^(p-2) grad u), p > 2n/(n+1).

    With lam = 1/(n(p-2)+p) and xi = |x| t^(-lam):
      p > 2: t^(-n lam) (C - (p-2)/p lam^(1/(p-1)) xi^(p/(p-1)))_+^((p-1)/(p-2))
      p < 2: the same with a negative power and no cut-off
      p = 2: the heat kernel (4 pi t)^(-n/2) exp(-|x|^2/(4t)) scaled by C
    """
    if p <= 2 * n / (n + 1):
        raise ValueError("no finite-mass source solution for p <= 2n/(n+1)")
    if p == 2:
        def u(t, X):
            return C * (4 * np.pi * t) ** (-n / 2) * np.exp(-_norm(X) ** 2 / (4 * t))
        return u
    lam = 1.0 / (n * (p - 2) + p)
    k = (p - 2) / p * lam ** (1.0 / (p - 1))
    e = (p - 1) / (p - 2)

    def u(t, X):
        xi = _norm(X) * t ** (-lam)
        base = C - k * xi ** (p / (p - 1))
        if p > 2:
            base = np.maximum(base, 0.0)
        with np.errstate(divide="ignore"):
            return t ** (-n * lam) * base**e

    return u


def barenblatt(p=3.0, n=1, N=1, C=1.0, t_start=1.0, half_width=5.0, amplitude=1.0, **_):
    prof = barenblatt_profile(p, n, C)

    def u(t, X):
        return amplitude * np.repeat(prof(t, X)[:, None], N, axis=1)

    return {"u0": lambda X: u(t_start, X), "bc": u, "exact": u, "t_start": t_start,
            "extent": ((-half_width, half_width),) * n}


def radial_pharmonic(p=3.0, n=2, N=1, inner=0.5, outer=1.5, **_):
    """|x|^((p-n)/(p-1)) (log|x| when p = n) on a box avoiding the origin."""
    if p == n:
        def u(t, X):
            return np.log(_norm(X))[:, None] * np.ones(N)
    else:
        e = (p - n) / (p - 1)

        def u(t, X):
            return (_norm(X) ** e)[:, None] * np.ones(N)
    return {"u0": lambda X: u(0.0, X), "bc": u, "exact": u, "extent": ((inner, outer),) * n}


def harmonic_poly(n=2, N=1, **_):
    """x1^2 - x2^2, harmonic for the Laplacian."""
    if n != 2:
        raise ValueError("harmonic_poly needs n = 2")

    def u(t, X):
        return ((X[:, 0] ** 2 - X[:, 1] ** 2)[:, None]) * np.ones(N)

    return {"u0": lambda X: u(0.0, X), "bc": u, "exact": u, "extent": ((-1.0, 1.0),) * 2}


def tilted(n=2, N=1, amplitude=1.0, slope=None, bump=0.1, **_):
    """amplitude * (x . slope + bump * prod_i sin(pi x_i)) on the unit box.

    The boundary data are the affine part, so the gradient stays close to
    ``amplitude * slope`` while the bump relaxes.
    """
    B = np.full((n, N), 1.0 / math.sqrt(n * N)) if slope is None else np.asarray(slope, dtype=float).reshape(n, N)

    def bc(t, X):
        return amplitude * (X @ B)

    def u0(X):
        return bc(0.0, X) + amplitude * bump * np.prod(np.sin(np.pi * X), axis=-1)[:, None]

    return {"u0": u0, "bc": bc, "extent": ((0.0, 1.0),) * n}


def random_smooth(n=2, N=1, seed=0, amplitude=1.0, kmax=3, **_):
    """Random sine series with coefficients decaying like 1/|k|^2, zero on the boundary.

    The series is normalised so its largest coefficient has modulus 1.
    """
    rng = np.random.default_rng(seed)
    ks = np.array(np.meshgrid(*[np.arange(1, kmax + 1)] * n, indexing="ij")).reshape(n, -1).T
    coef = rng.standard_normal((N, ks.shape[0])) / np.sum(ks**2, axis=1)
    coef /= np.max(np.abs(coef))

    def u0(X):
        basis = np.stack([np.prod(np.sin(np.pi * k * X), axis=-1) for k in ks], axis=-1)
        return amplitude * basis @ coef.T

    return {"u0": u0, "bc": lambda t, X: np.zeros((X.shape[0], N)), "extent": ((0.0, 1.0),) * n}


def manufactured_p3(**_):
    """u = exp(-t) sin(pi x) with the forcing that makes it p=3 caloric in 1-D."""
    def u(t, X):
        return np.exp(-t) * np.sin(np.pi * X[:, 0])

    def f(t, X):
        s, c = np.sin(np.pi * X[:, 0]), np.cos(np.pi * X[:, 0])
        return -np.exp(-t) * s + 2 * np.pi**3 * np.exp(-2 * t) * np.abs(c) * s

    return {"u0": lambda X: u(0.0, X), "bc": u, "forcing": f, "exact": u, "extent": ((0.0, 1.0),)}


PRESETS = {
    "eigenmode": (eigenmode, "product of sines on the unit box, zero boundary data"),
    "affine": (affine, "affine data; every phi keeps it stationary"),
    "barenblatt": (barenblatt, "source-type self-similar solution of the p-Laplace evolution"),
    "radial_pharmonic": (radial_pharmonic, "radial p-harmonic function on a box off the origin"),
    "harmonic_poly": (harmonic_poly, "x1^2 - x2^2 on [-1,1]^2"),
    "tilted": (tilted, "affine tilt plus a sine bump; nearly uniform gradient"),
    "random_smooth": (random_smooth, "seeded random sine series, zero boundary data"),
    "manufactured_p3": (manufactured_p3, "1-D manufactured solution for p = 3 with forcing"),
}


def get_preset(name: str, **params) -> dict:
    try:
        factory = PRESETS[name][0]
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; known: {', '.join(sorted(PRESETS))}") from None
    return factory(**params)
