"""Implicit solver for du/dt = div(phi'(|grad u|) grad u/|grad u|) on rectangles.

Space is discretised with continuous piecewise linear elements on a uniform
vertex grid (intervals in 1-D, squares cut along one diagonal in 2-D) and a
lumped mass. One backward-Euler step is the minimiser of the strictly convex
functional

    F(u) = sum_i m_i |u_i - u_prev_i|^2 / (2 dt) + sum_T |T| phi_eps(|grad_T u|) - sum_i m_i f_i . u_i

over vectors matching the Dirichlet data. phi_eps is the shift of phi by
eps, whose radial coefficient phi_eps'(t)/t stays bounded at t = 0.
Newton steps are damped by a line search and backed by frozen-coefficient
(Picard) sweeps. Targets may be vector valued; the coefficient then depends
on the full Frobenius norm of the gradient.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import NonConvergence, NumericalBlowup
from .orlicz import OrliczFunction, shifted_deriv2, shifted_value

log = logging.getLogger(__name__)

Field = Callable[..., np.ndarray]


@dataclass
class GridSpec:
    """Uniform rectangular grid and the data of one run.

    ``bc``, ``u0`` and ``forcing`` are called with ``(t, X)`` where ``X`` has
    shape ``(n_points, n)`` and must return an array of shape ``(n_points, N)``
    (a 1-D result is accepted when N = 1). ``u0`` takes ``X`` only.
    """
    n: int
    cells: Sequence[int]
    extent: Sequence[tuple] = None
    N: int = 1
    dt: float = 1e-3
    T: float = 0.1
    t_start: float = 0.0
    u0: Field | None = None
    bc: Field | None = None
    forcing: Field | None = None

    def __post_init__(self):
        if self.n not in (1, 2):
            raise ValueError("only n = 1 or n = 2 is supported")
        self.cells = tuple(int(c) for c in np.broadcast_to(self.cells, (self.n,)))
        if min(self.cells) < 8:
            raise ValueError("need at least 8 cells per axis")
        if self.extent is None:
            self.extent = ((0.0, 1.0),) * self.n
        self.extent = tuple((float(a), float(b)) for a, b in self.extent)
        if len(self.extent) != self.n or any(b <= a for a, b in self.extent):
            raise ValueError("extent must be one increasing interval per axis")
        if self.N < 1 or self.dt <= 0:
            raise ValueError("need N >= 1 and dt > 0")

    @property
    def h(self) -> np.ndarray:
        return np.array([(b - a) / c for (a, b), c in zip(self.extent, self.cells)])

    @property
    def n_steps(self) -> int:
        return int(round((self.T - self.t_start) / self.dt))


class Mesh:
    """Vertex grid, element gradient operator and lumped mass for a GridSpec."""

    def __init__(self, grid: GridSpec):
        self.grid = grid
        self.n, self.N = grid.n, grid.N
        self.h = grid.h
        self.vshape = tuple(c + 1 for c in grid.cells)
        axes = [np.linspace(a, b, c + 1) for (a, b), c in zip(grid.extent, grid.cells)]
        self.axes = axes
        self.X = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=-1)
        self.nv = self.X.shape[0]
        idx = np.arange(self.nv).reshape(self.vshape)
        if self.n == 1:
            self.D, self.measure = self._gradient_1d(idx)
        else:
            self.D, self.measure = self._gradient_2d(idx)
        self.ne = self.measure.size
        # lumped mass: each simplex spreads |T| evenly over its n+1 vertices
        inc = self._incidence(idx)
        self.mass = inc.T @ (self.measure / (self.n + 1))
        boundary = np.zeros(self.vshape, dtype=bool)
        for ax in range(self.n):
            sl = [slice(None)] * self.n
            sl[ax] = 0
            boundary[tuple(sl)] = True
            sl[ax] = -1
            boundary[tuple(sl)] = True
        self.boundary = boundary.ravel()
        self.free = np.flatnonzero(~self.boundary)
        self.fixed = np.flatnonzero(self.boundary)
        # vector-valued operator acting on u.reshape(-1) with u of shape (nv, N)
        self.K = sp.kron(self.D, sp.identity(self.N), format="csr")
        self.w = np.repeat(self.measure, self.n * self.N)
        self._elem_vertices = self._element_vertices(idx)

    def _gradient_1d(self, idx):
        h = self.h[0]
        m = self.vshape[0] - 1
        rows = np.repeat(np.arange(m), 2)
        cols = np.stack([idx[:-1], idx[1:]], axis=1).ravel()
        vals = np.tile([-1.0 / h, 1.0 / h], m)
        return sp.csr_matrix((vals, (rows, cols)), shape=(m, self.nv)), np.full(m, h)

    def _gradient_2d(self, idx):
        hx, hy = self.h
        v00, v10 = idx[:-1, :-1].ravel(), idx[1:, :-1].ravel()
        v01, v11 = idx[:-1, 1:].ravel(), idx[1:, 1:].ravel()
        nc = v00.size
        # triangle a = (00, 10, 11), triangle b = (00, 01, 11); element e = 2*cell + {0, 1}
        ea, eb = 2 * np.arange(nc), 2 * np.arange(nc) + 1
        rows, cols, vals = [], [], []

        def add(e, d, plus, minus, hd):
            r = 2 * e + d
            rows.extend([r, r])
            cols.extend([plus, minus])
            vals.extend([np.full(nc, 1.0 / hd), np.full(nc, -1.0 / hd)])

        add(ea, 0, v10, v00, hx)
        add(ea, 1, v11, v10, hy)
        add(eb, 0, v11, v01, hx)
        add(eb, 1, v01, v00, hy)
        D = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(4 * nc, self.nv))
        return D, np.full(2 * nc, 0.5 * hx * hy)

    def _element_vertices(self, idx):
        if self.n == 1:
            return np.stack([idx[:-1], idx[1:]], axis=1)
        v00, v10 = idx[:-1, :-1].ravel(), idx[1:, :-1].ravel()
        v01, v11 = idx[:-1, 1:].ravel(), idx[1:, 1:].ravel()
        ta = np.stack([v00, v10, v11], axis=1)
        tb = np.stack([v00, v01, v11], axis=1)
        return np.stack([ta, tb], axis=1).reshape(-1, 3)

    def _incidence(self, idx):
        ev = self._element_vertices(idx)
        rows = np.repeat(np.arange(ev.shape[0]), ev.shape[1])
        return sp.csr_matrix((np.ones(ev.size), (rows, ev.ravel())), shape=(ev.shape[0], self.nv))

    def grad(self, u):
        """Element gradients, shape (ne, n, N), of vertex values u of shape (nv, N)."""
        return (self.D @ np.asarray(u).reshape(self.nv, self.N)).reshape(self.ne, self.n, self.N)

    def divergence(self, F):
        """Discrete divergence -M^{-1} D^T W F of element fields F (ne, n, N)."""
        F = np.asarray(F).reshape(self.ne * self.n, self.N)
        return -(self.D.T @ (np.repeat(self.measure, self.n)[:, None] * F)) / self.mass[:, None]

    def cell_gradient(self, u):
        """Gradient per grid cell: the element gradient in 1-D, the mean of the
        two triangles in 2-D (the 2x2 centred stencil)."""
        g = self.grad(u)
        if self.n == 2:
            g = 0.5 * (g[0::2] + g[1::2])
        return g.reshape(self.grid.cells + (self.n, self.N))

    def evaluate(self, func, t=None):
        """Sample a data callback at the vertices as an (nv, N) array."""
        out = func(self.X) if t is None else func(t, self.X)
        out = np.asarray(out, dtype=float)
        if out.ndim == 1:
            out = out[:, None]
        return np.broadcast_to(out, (self.nv, self.N)).copy()


@dataclass
class StepStats:
    newton_iters: int = 0
    picard_sweeps: int = 0
    halvings: int = 0
    residuals: list = field(default_factory=list)
    linear_iters: int = 0


class _Problem:
    """One backward-Euler (or stationary, dt = inf) minimisation problem."""

    def __init__(self, phi, mesh: Mesh, u_prev, dt, eps, f=None):
        self.phi, self.mesh, self.eps = phi, mesh, float(eps)
        self.u_prev = u_prev.reshape(-1)
        self.inv_dt = 0.0 if not np.isfinite(dt) else 1.0 / dt
        self.mvec = np.repeat(mesh.mass, mesh.N)
        self.load = np.zeros_like(self.u_prev) if f is None else self.mvec * f.reshape(-1)

    def _norms(self, G):
        return np.sqrt(np.sum(G * G, axis=(-2, -1)))

    def coef(self, t):
        """phi_eps'(t)/t including the t -> 0 limit."""
        a = self.eps
        at = a + t
        with np.errstate(invalid="ignore", divide="ignore"):
            g = self.phi.deriv(at) / at
        if a == 0:
            g = np.where(t > 0, g, self.phi.deriv2(np.maximum(t, 1e-300)))
        return g

    def energy(self, u):
        G = self.mesh.grad(u)
        t = self._norms(G)
        du = u - self.u_prev
        return (0.5 * self.inv_dt * np.dot(self.mvec, du * du)
                + np.dot(self.mesh.measure, shifted_value(self.phi, self.eps, t))
                - np.dot(self.load, u))

    def gradient(self, u):
        G = self.mesh.grad(u)
        g = self.coef(self._norms(G))
        flux = (g[:, None, None] * G).reshape(-1)
        return self.inv_dt * self.mvec * (u - self.u_prev) + self.mesh.K.T @ (self.mesh.w * flux) - self.load

    def hessian(self, u, frozen=False):
        mesh = self.mesh
        G = mesh.grad(u)
        t = self._norms(G)
        g = self.coef(t)
        m = mesh.n * mesh.N
        blocks = g[:, None, None] * np.eye(m)
        if not frozen:
            d2 = shifted_deriv2(self.phi, self.eps, t)
            with np.errstate(invalid="ignore", divide="ignore"):
                Ph = np.where(t[:, None] > 0, G.reshape(-1, m) / t[:, None], 0.0)
            blocks = blocks + (d2 - g)[:, None, None] * Ph[:, :, None] * Ph[:, None, :]
        blocks *= mesh.measure[:, None, None]
        B = sp.bsr_matrix((blocks, np.arange(mesh.ne), np.arange(mesh.ne + 1)),
                          shape=(mesh.ne * m, mesh.ne * m))
        H = (mesh.K.T @ B.tocsr() @ mesh.K).tocsr()
        if self.inv_dt:
            H = H + sp.diags(self.inv_dt * self.mvec)
        return H


def pcg(A, b, rtol=1e-9, maxiter=None):
    """Jacobi-preconditioned conjugate gradients with a sparse direct fallback.

    Returns ``(x, iterations)``; iterations is -1 when the fallback was used.
    """
    if b.size == 0:
        return b.copy(), 0
    d = A.diagonal()
    d = np.where(d > 0, d, 1.0)
    M = spla.LinearOperator(A.shape, matvec=lambda x: x / d)
    count = [0]

    def cb(_):
        count[0] += 1

    maxiter = maxiter or max(200, 4 * b.size)
    x, info = spla.cg(A, b, rtol=rtol, atol=0.0, maxiter=maxiter, M=M, callback=cb)
    if info != 0:
        log.debug("pcg: no convergence after %d iterations, using a direct solve", count[0])
        return spla.spsolve(A.tocsc(), b), -1
    return x, count[0]


def _free_dofs(mesh: Mesh):
    N = mesh.N
    return (mesh.free[:, None] * N + np.arange(N)).ravel()


def step_implicit(phi: OrliczFunction, mesh: Mesh, u_prev, t_new, dt, eps,
                  tol=1e-10, max_newton=50, u_guess=None, stats: StepStats | None = None):
    """Advance one backward-Euler step; ``dt = inf`` solves the stationary problem.

    Parameters
    ----------
    phi : OrliczFunction
    mesh : Mesh
    u_prev : ndarray, shape (nv, N)
    t_new : float
        Time level at which boundary data and forcing are evaluated.
    dt : float
    eps : float
        Shift used to regularise phi near zero gradients.
    tol : float
        Newton stops once the residual, measured per unit mass, drops below
        ``tol`` times a scale set by the data.

    Returns
    -------
    ndarray, shape (nv, N)
    """
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    stats = stats if stats is not None else StepStats()
    grid = mesh.grid
    u_prev = np.asarray(u_prev, dtype=float).reshape(mesh.nv, mesh.N)
    if not np.all(np.isfinite(u_prev)):
        raise NumericalBlowup(f"non-finite state before step to t={t_new}")
    f = mesh.evaluate(grid.forcing, t_new) if grid.forcing is not None else None
    prob = _Problem(phi, mesh, u_prev, dt, eps, f)
    u = (u_prev if u_guess is None else np.asarray(u_guess, dtype=float).reshape(mesh.nv, mesh.N)).copy()
    if grid.bc is not None:
        u[mesh.fixed] = mesh.evaluate(grid.bc, t_new)[mesh.fixed]
    else:
        u[mesh.fixed] = u_prev[mesh.fixed]
    u = u.reshape(-1)
    fd = _free_dofs(mesh)
    mfree = prob.mvec[fd]

    def resid(v):
        r = prob.gradient(v)[fd]
        return r, float(np.max(np.abs(r / mfree))) if r.size else 0.0

    # scale for the stopping test: size of the terms balanced by the residual
    g0 = np.abs(prob.gradient(u)[fd] / mfree)
    scale = 1.0 + (float(np.max(g0)) if g0.size else 0.0)
    if np.isfinite(dt):
        scale += float(np.max(np.abs(u_prev))) / dt
    r, rn = resid(u)
    stats.residuals.append(rn)
    attempts = 0
    it = 0
    while rn > tol * scale:
        if it >= max_newton:
            raise NonConvergence(f"Newton did not converge at t={t_new}", rn, t_new)
        H = prob.hessian(u.reshape(mesh.nv, mesh.N))[fd][:, fd]
        delta, li = pcg(H, -r)
        stats.linear_iters += max(li, 0)
        F0 = prob.energy(u)
        slope = float(np.dot(r, delta))
        lam, accepted = 1.0, False
        for _ in range(21):
            trial = u.copy()
            trial[fd] += lam * delta
            rt, rnt = resid(trial)
            if rnt < rn or prob.energy(trial) <= F0 + 1e-4 * lam * slope:
                accepted = True
                break
            lam *= 0.5
            stats.halvings += 1
        it += 1
        stats.newton_iters += 1
        if accepted:
            u, r, rn = trial, rt, rnt
            stats.residuals.append(rn)
            continue
        attempts += 1
        if attempts > 3:
            raise NonConvergence(f"Newton and Picard stalled at t={t_new}", rn, t_new)
        fixed = np.setdiff1d(np.arange(u.size), fd)
        for _ in range(5):
            Hp = prob.hessian(u.reshape(mesh.nv, mesh.N), frozen=True)
            # frozen-coefficient system; its right-hand side is mass*u_prev/dt + load
            rhs = Hp @ u - prob.gradient(u)
            Hp = Hp.tocsr()
            x, _ = pcg(Hp[fd][:, fd], rhs[fd] - Hp[fd][:, fixed] @ u[fixed])
            u = u.copy()
            u[fd] = x
            stats.picard_sweeps += 1
        r, rn = resid(u)
        stats.residuals.append(rn)
    if not np.all(np.isfinite(u)):
        raise NumericalBlowup(f"non-finite state at t={t_new}")
    return u.reshape(mesh.nv, mesh.N)


def eps_schedule(k: int, eps0: float = 1e-2, eps_min: float = 1e-8) -> float:
    """Regularisation used at time step k: max(eps_min, eps0 2^-k)."""
    return max(eps_min, eps0 * 2.0 ** (-k))


@dataclass
class GradOrField:
    """Snapshots of a discrete solution and the gradient quantities derived from it.

    Arrays are indexed ``[snapshot, *cells, ...]``; ``grad`` has trailing shape
    (n, N), ``gradV`` trailing shape (n, n, N) with the differentiation axis
    first. ``u`` holds vertex values, everything else lives at cell centres.
    """
    t: np.ndarray
    u: np.ndarray
    grad: np.ndarray
    v: np.ndarray
    Vfield: np.ndarray
    gradV: np.ndarray
    h: np.ndarray
    extent: tuple
    n: int
    N: int
    meta: dict = field(default_factory=dict)

    @property
    def cell_centers(self):
        return [a + (np.arange(m) + 0.5) * hh for (a, _), hh, m in
                zip(self.extent, self.h, self.v.shape[1:])]

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0]) if self.t.size > 1 else 0.0


def discrete_fields(phi: OrliczFunction, mesh: Mesh, t, u_snapshots, meta=None) -> GradOrField:
    """Cell-centred gradient, |grad u|, V(grad u) and its gradient for each snapshot.

    The cell gradient is the mean of the element gradients in the cell; grad V
    is the centred difference of the cell V field (one-sided on the outer
    cells), which is exact on affine V.
    """
    from .tensor_maps import V_map

    t = np.asarray(t, dtype=float)
    U = np.asarray(u_snapshots, dtype=float).reshape(len(t), mesh.nv, mesh.N)
    grads = np.stack([mesh.cell_gradient(u) for u in U])
    v = np.sqrt(np.sum(grads * grads, axis=(-2, -1)))
    V = V_map(phi, grads)
    n = mesh.n
    gV = []
    for ax in range(n):
        gV.append(np.gradient(V, mesh.h[ax], axis=1 + ax))
    gradV = np.stack(gV, axis=1 + n)
    return GradOrField(t, U.reshape((len(t),) + mesh.vshape + (mesh.N,)), grads, v, V, gradV,
                       mesh.h.copy(), tuple(mesh.grid.extent), n, mesh.N, dict(meta or {}))


def _stride_times(n_steps, stride):
    keep = set(range(0, n_steps + 1, max(int(stride), 1)))
    keep.add(n_steps)
    return sorted(keep)


def solve_parabolic(phi: OrliczFunction, grid: GridSpec, eps0=1e-2, eps_min=1e-8,
                    stride=1, eps_fn=None, return_mesh=False):
    """March from ``grid.t_start`` to ``grid.T`` and record snapshots.

    The shift used at step k is ``eps_fn(k)`` when given, otherwise
    ``eps_schedule(k, eps0, eps_min)``.
    """
    mesh = Mesh(grid)
    if grid.u0 is None:
        u = np.zeros((mesh.nv, mesh.N))
    else:
        u = mesh.evaluate(grid.u0)
    keep = _stride_times(grid.n_steps, stride)
    times, snaps = [grid.t_start], [u.copy()]
    stats = StepStats()
    for k in range(grid.n_steps):
        t_new = grid.t_start + (k + 1) * grid.dt
        eps = eps_fn(k) if eps_fn is not None else eps_schedule(k, eps0, eps_min)
        try:
            u = step_implicit(phi, mesh, u, t_new, grid.dt, eps, stats=stats)
        except NonConvergence as exc:
            exc.time = t_new
            raise
        if k + 1 in keep:
            times.append(t_new)
            snaps.append(u.copy())
    meta = {"newton_iters": stats.newton_iters, "picard_sweeps": stats.picard_sweeps,
            "linear_iters": stats.linear_iters, "eps_final": eps if grid.n_steps else eps0}
    fld = discrete_fields(phi, mesh, np.array(times), np.array(snaps), meta)
    return (fld, mesh) if return_mesh else fld


def solve_elliptic(phi: OrliczFunction, grid: GridSpec, eps=1e-8, tau0=1e-3, growth=10.0,
                   max_pseudo=40, return_mesh=False):
    """Stationary problem div A_eps(grad u) = f via pseudo-time continuation.

    Implicit pseudo-time steps with step size growing by ``growth`` provide a
    good initial guess; a final stationary Newton solve then removes the
    pseudo-time bias.
    """
    mesh = Mesh(grid)
    u = mesh.evaluate(grid.u0) if grid.u0 is not None else np.zeros((mesh.nv, mesh.N))
    if grid.bc is not None:
        u[mesh.fixed] = mesh.evaluate(grid.bc, grid.T)[mesh.fixed]
    tau = tau0
    stats = StepStats()
    for _ in range(max_pseudo):
        u_new = step_implicit(phi, mesh, u, grid.T, tau, max(eps, 1e-6), stats=stats)
        change = float(np.max(np.abs(u_new - u)))
        u = u_new
        tau *= growth
        if change < 1e-6 * (1.0 + float(np.max(np.abs(u)))):
            break
    u = step_implicit(phi, mesh, u, grid.T, math.inf, eps, stats=stats)
    meta = {"newton_iters": stats.newton_iters, "picard_sweeps": stats.picard_sweeps,
            "linear_iters": stats.linear_iters, "eps_final": eps}
    fld = discrete_fields(phi, mesh, np.array([grid.T]), u[None], meta)
    return (fld, mesh) if return_mesh else fld


def discrete_energy(phi, mesh: Mesh, u, eps=0.0):
    """J(u) = sum_T |T| phi_eps(|grad_T u|)."""
    G = mesh.grad(u)
    t = np.sqrt(np.sum(G * G, axis=(-2, -1)))
    return float(np.dot(mesh.measure, shifted_value(phi, eps, t)))
