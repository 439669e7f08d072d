"""Convergence studies of the solver against closed-form solutions."""
from __future__ import annotations

import numpy as np

from .orlicz import make_power
from .presets import get_preset, heat_eigen_exact
from .solver import GridSpec, solve_elliptic, solve_parabolic


def heat_eigenmode(cells=128, dt=1e-4, T=0.1):
    """Max error of the p=2 eigenmode run against the fully discrete decay law."""
    pr = get_preset("eigenmode", n=1)
    g = GridSpec(n=1, cells=cells, dt=dt, T=T, u0=pr["u0"], bc=pr["bc"])
    fld, mesh = solve_parabolic(make_power(2.0), g, eps_fn=lambda k: 0.0, stride=100, return_mesh=True)
    exact, _ = heat_eigen_exact([1.0], 1.0, [1.0 / cells], dt)
    err = max(float(np.max(np.abs(u[:, 0] - exact(t, mesh.X)))) for t, u in zip(fld.t, fld.u))
    return {"error": err, "steps": g.n_steps}


def mms_p3(grids=(32, 64, 128, 256), c_dt=2.0, T=0.1):
    """Final-time max errors and observed orders for the 1-D p=3 manufactured solution.

    The step is tied to the mesh, dt = c_dt h^2, so the temporal error does
    not mask the spatial order.
    """
    pr = get_preset("manufactured_p3")
    errs = []
    for m in grids:
        h = 1.0 / m
        dt = c_dt * h * h
        g = GridSpec(n=1, cells=m, dt=dt, T=T, u0=pr["u0"], bc=pr["bc"], forcing=pr["forcing"])
        g.T = g.n_steps * dt
        fld, mesh = solve_parabolic(make_power(3.0), g, eps_fn=lambda k: 1e-10, stride=10**9, return_mesh=True)
        errs.append(float(np.max(np.abs(fld.u[-1].reshape(-1) - pr["exact"](fld.t[-1], mesh.X)))))
    errs = np.array(errs)
    return {"grids": list(grids), "errors": errs.tolist(), "orders": np.log2(errs[:-1] / errs[1:]).tolist()}


def barenblatt_1d(p=3.0, grids=(40, 80, 160), t_start=1.0, T=2.0):
    """L1 errors at time T of the source-type solution on [-5, 5], dt = h/4."""
    pr = get_preset("barenblatt", p=p, n=1, t_start=t_start)
    errs = []
    for m in grids:
        h = 10.0 / m
        g = GridSpec(n=1, cells=m, extent=pr["extent"], dt=0.25 * h, t_start=t_start, T=T,
                     u0=pr["u0"], bc=pr["bc"])
        fld, mesh = solve_parabolic(make_power(p), g, stride=10**9, return_mesh=True)
        diff = fld.u[-1].reshape(-1) - pr["exact"](fld.t[-1], mesh.X)[:, 0]
        errs.append(float(np.sum(np.abs(diff)) * h))
    errs = np.array(errs)
    return {"grids": list(grids), "errors": errs.tolist(), "ratios": (errs[:-1] / errs[1:]).tolist()}


def radial_elliptic(p=3.0, grids=(8, 16, 32, 64)):
    """Max errors of the stationary solver on the radial p-harmonic function."""
    pr = get_preset("radial_pharmonic", p=p, n=2)
    errs = []
    for m in grids:
        g = GridSpec(n=2, cells=m, extent=pr["extent"], u0=pr["u0"], bc=pr["bc"], T=0.0)
        fld, mesh = solve_elliptic(make_power(p), g, return_mesh=True)
        errs.append(float(np.max(np.abs(fld.u[0].reshape(-1) - pr["exact"](0.0, mesh.X)[:, 0]))))
    return {"grids": list(grids), "errors": errs}


ORACLES = {
    "heat_eigenmode": heat_eigenmode,
    "mms_p3": mms_p3,
    "barenblatt_1d": barenblatt_1d,
    "radial_elliptic": radial_elliptic,
}
