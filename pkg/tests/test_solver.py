import numpy as np
import pytest
from scipy import sparse as sp
from scipy.integrate import quad

from phicaloric.errors import NonConvergence, NumericalBlowup
from phicaloric.orlicz import make_max_power, make_power
from phicaloric.oracles import barenblatt_1d, heat_eigenmode, mms_p3, radial_elliptic
from phicaloric.presets import barenblatt_profile, get_preset, heat_eigen_exact
from phicaloric.solver import (
    GridSpec,
    Mesh,
    discrete_energy,
    discrete_fields,
    eps_schedule,
    pcg,
    solve_elliptic,
    solve_parabolic,
    step_implicit,
)


def _grid(preset, n=2, cells=16, **kw):
    pr = get_preset(preset, n=n, **{k: v for k, v in kw.items() if k in ("seed", "p", "amplitude", "slope")})
    gkw = {k: v for k, v in kw.items() if k in ("dt", "T", "N")}
    return GridSpec(n=n, cells=cells, extent=pr["extent"], u0=pr["u0"], bc=pr["bc"],
                    t_start=pr.get("t_start", 0.0), **gkw), pr


# --- grid and operators --------------------------------------------------------

@pytest.mark.parametrize("kw", [{"n": 3, "cells": 8}, {"n": 2, "cells": 4},
                                {"n": 1, "cells": 8, "dt": 0.0}, {"n": 1, "cells": 8, "extent": ((1, 0),)}])
def test_gridspec_rejects(kw):
    with pytest.raises(ValueError):
        GridSpec(**kw)


@pytest.mark.parametrize("n", [1, 2])
def test_gradient_exact_on_affine(n):
    mesh = Mesh(GridSpec(n=n, cells=9, extent=((-1.0, 2.0),) * n))
    B = np.arange(1.0, n + 1)[:, None]
    G = mesh.grad(mesh.X @ B + 0.3)
    np.testing.assert_allclose(G, np.broadcast_to(B, G.shape), atol=1e-12)
    assert mesh.mass.sum() == pytest.approx(3.0**n)


def test_summation_by_parts():
    # sum_i m_i u_i div(F)_i = -sum_T |T| grad_T u . F_T for the discrete divergence
    mesh = Mesh(GridSpec(n=2, cells=(8, 11), N=2))
    rng = np.random.default_rng(0)
    u = rng.standard_normal((mesh.nv, 2))
    F = rng.standard_normal((mesh.ne, 2, 2))
    lhs = np.sum(mesh.mass[:, None] * u * mesh.divergence(F))
    rhs = -np.sum(mesh.measure[:, None, None] * mesh.grad(u) * F)
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_pcg_matches_direct():
    A = sp.diags([-np.ones(49), 2.5 * np.ones(50), -np.ones(49)], [-1, 0, 1], format="csr")
    b = np.random.default_rng(1).standard_normal(50)
    x, it = pcg(A, b, rtol=1e-12)
    np.testing.assert_allclose(A @ x, b, atol=1e-9)
    assert it > 0


def test_eps_schedule():
    assert eps_schedule(0) == 1e-2
    assert eps_schedule(1) == 5e-3
    assert eps_schedule(100) == 1e-8


# --- oracles -------------------------------------------------------------------

def test_heat_eigenmode_fully_discrete():
    assert heat_eigenmode(cells=64, dt=1e-3, T=0.05)["error"] < 1e-10


def test_heat_eigenmode_2d():
    g, pr = _grid("eigenmode", n=2, cells=16, dt=2e-3, T=0.02)
    fld, mesh = solve_parabolic(make_power(2.0), g, eps_fn=lambda k: 0.0, return_mesh=True)
    exact, _ = heat_eigen_exact([1.0, 1.0], 1.0, mesh.h, g.dt)
    for t, u in zip(fld.t, fld.u):
        np.testing.assert_allclose(u.reshape(-1), exact(t, mesh.X), atol=1e-10)


def test_mms_second_order():
    res = mms_p3(grids=(16, 32, 64))
    assert min(res["orders"]) > 1.6
    assert res["errors"][-1] < 5e-3


@pytest.mark.slow
def test_barenblatt_converges():
    res = barenblatt_1d(grids=(40, 80))
    assert res["ratios"][0] > 1.8


def test_radial_elliptic_converges():
    res = radial_elliptic(grids=(8, 16, 32))
    e = res["errors"]
    assert e[0] > e[1] > e[2]
    assert e[1] / e[2] > 3.0


# --- closed forms validated independently of the solver --------------------------

@pytest.mark.parametrize("p", [1.8, 3.0, 4.0])
def test_barenblatt_1d_pde_residual(p):
    u = barenblatt_profile(p, 1)
    t, dt, dx = 1.5, 1e-5, 1e-4
    x = np.linspace(-0.8, 0.8, 32)  # the profile is only C^1 at the origin

    def ev(tt, xx):
        return u(tt, xx[:, None])

    ut = (ev(t + dt, x) - ev(t - dt, x)) / (2 * dt)

    def flux(xx):
        g = (ev(t, xx + dx / 2) - ev(t, xx - dx / 2)) / dx
        return np.abs(g) ** (p - 2) * g

    div = (flux(x + dx / 2) - flux(x - dx / 2)) / dx
    assert np.max(np.abs(ut - div)) < 1e-4 * (1 + np.max(np.abs(ut)))


@pytest.mark.parametrize("p", [1.8, 3.0])
def test_barenblatt_mass_conserved(p):
    u = barenblatt_profile(p, 1)
    masses = [quad(lambda x: float(u(t, np.array([[x]]))[0]), -60, 60, limit=200)[0] for t in (1.0, 2.0, 4.0)]
    np.testing.assert_allclose(masses, masses[0], rtol=1e-6)


def test_barenblatt_2d_radial_residual():
    p, n = 3.0, 2
    u = barenblatt_profile(p, n)
    t, dt, dr = 1.2, 1e-5, 1e-4
    r = np.linspace(0.1, 0.6, 11)

    def ev(tt, rr):
        return u(tt, np.stack([rr, 0 * rr], axis=1))

    ut = (ev(t + dt, r) - ev(t - dt, r)) / (2 * dt)

    def flux(rr):
        g = (ev(t, rr + dr / 2) - ev(t, rr - dr / 2)) / dr
        return rr ** (n - 1) * np.abs(g) ** (p - 2) * g

    div = (flux(r + dr / 2) - flux(r - dr / 2)) / dr / r ** (n - 1)
    assert np.max(np.abs(ut - div)) < 1e-4


@pytest.mark.parametrize("p", [1.8, 3.0, 4.0])
def test_radial_pharmonic_flux_constant(p):
    pr = get_preset("radial_pharmonic", p=p, n=2)
    r = np.linspace(0.6, 1.4, 9)
    d = 1e-6
    f = lambda rr: pr["exact"](0.0, np.stack([rr, 0 * rr], axis=1))[:, 0]
    du = (f(r + d) - f(r - d)) / (2 * d)
    flux = r * np.abs(du) ** (p - 2) * du
    assert np.ptp(flux) < 1e-6 * np.max(np.abs(flux))


# --- qualitative behaviour --------------------------------------------------------

def test_zero_data_stays_zero():
    g = GridSpec(n=2, cells=8, dt=0.01, T=0.05, bc=lambda t, X: np.zeros(len(X)))
    fld = solve_parabolic(make_power(3.0), g)
    assert np.all(fld.u == 0)


@pytest.mark.parametrize("phi", [make_power(3.0), make_power(1.5), make_max_power(1.5, 3.0)])
def test_affine_is_stationary(phi):
    g, pr = _grid("affine", n=2, cells=10, dt=0.01, T=0.05)
    fld, mesh = solve_parabolic(phi, g, return_mesh=True)
    for u in fld.u:
        np.testing.assert_allclose(u.reshape(-1), pr["exact"](0.0, mesh.X)[:, 0], atol=1e-9)
    el = solve_elliptic(phi, g)
    np.testing.assert_allclose(el.v, np.sqrt(2.0), rtol=1e-9)


def test_harmonic_poly_quadratic_elliptic():
    g, pr = _grid("harmonic_poly", n=2, cells=16)
    fld, mesh = solve_elliptic(make_power(2.0), g, return_mesh=True)
    err = np.max(np.abs(fld.u[0].reshape(-1) - pr["exact"](0.0, mesh.X)[:, 0]))
    assert err < 1e-8  # x^2 - y^2 is discretely harmonic on the diagonal-cut mesh


@pytest.mark.parametrize("N", [1, 2])
def test_energy_dissipation_and_max_principle(N):
    pr = get_preset("random_smooth", n=2, N=N, seed=3)
    g = GridSpec(n=2, N=N, cells=16, dt=0.005, T=0.05, u0=pr["u0"], bc=pr["bc"])
    phi = make_power(3.0)
    fld, mesh = solve_parabolic(phi, g, return_mesh=True)
    E = [discrete_energy(phi, mesh, u) for u in fld.u]
    assert np.all(np.diff(E) <= 1e-12 * E[0])
    lo, hi = fld.u[0].min(axis=tuple(range(fld.u[0].ndim - 1))), fld.u[0].max(axis=tuple(range(fld.u[0].ndim - 1)))
    for u in fld.u[1:]:
        flat = u.reshape(-1, N)
        if N == 1:
            assert flat.min() >= lo.min() - 1e-10 and flat.max() <= hi.max() + 1e-10
        else:
            # vector flows only keep the norm bounded
            assert np.max(np.linalg.norm(flat, axis=1)) <= np.max(np.linalg.norm(fld.u[0].reshape(-1, N), axis=1)) + 1e-10


def test_regularisation_consistency():
    g, _ = _grid("eigenmode", n=2, cells=16, dt=0.005, T=0.05)
    phi = make_power(3.0)
    a = solve_parabolic(phi, g, eps_min=1e-4)
    b = solve_parabolic(phi, g, eps_min=5e-5)
    assert abs(a.v[-1].max() / b.v[-1].max() - 1) < 0.01


def test_degenerate_decay_slower_than_heat_for_small_data():
    # for p = 3 the diffusivity |grad u| is small when the data are small
    g, _ = _grid("eigenmode", n=1, cells=32, dt=0.005, T=0.05, amplitude=0.1)
    slow = solve_parabolic(make_power(3.0), g).u[-1].max()
    fast = solve_parabolic(make_power(2.0), g).u[-1].max()
    assert slow > fast


def test_stride_keeps_final_time():
    g, _ = _grid("eigenmode", n=1, cells=16, dt=0.01, T=0.05)
    fld = solve_parabolic(make_power(3.0), g, stride=2)
    np.testing.assert_allclose(fld.t, [0.0, 0.02, 0.04, 0.05])


def test_blowup_on_nonfinite_state():
    mesh = Mesh(GridSpec(n=1, cells=8))
    u = np.full((mesh.nv, 1), np.nan)
    with pytest.raises(NumericalBlowup):
        step_implicit(make_power(3.0), mesh, u, 0.1, 0.1, 1e-3)


def test_nonconvergence_reports_residual():
    g, _ = _grid("eigenmode", n=1, cells=16, dt=0.01, T=0.01)
    mesh = Mesh(g)
    u0 = mesh.evaluate(g.u0)
    with pytest.raises(NonConvergence) as info:
        step_implicit(make_power(3.0), mesh, u0, 0.01, 0.01, 1e-3, max_newton=0)
    assert info.value.residual > 0 and info.value.time == 0.01


# --- derived fields ------------------------------------------------------------------

def test_fields_affine():
    g, pr = _grid("affine", n=2, cells=10)
    mesh = Mesh(g)
    fld = discrete_fields(make_power(3.0), mesh, [0.0], mesh.evaluate(g.u0)[None])
    np.testing.assert_allclose(fld.v, np.sqrt(2.0), rtol=1e-12)
    assert np.max(np.abs(fld.gradV)) < 1e-10


def test_fields_quadratic_bowl():
    # u = |x|^2/2 with phi = t^2/2: V = grad u = x, so |grad V|^2 = n
    mesh = Mesh(GridSpec(n=2, cells=16))
    u = 0.5 * np.sum(mesh.X**2, axis=1)
    fld = discrete_fields(make_power(2.0), mesh, [0.0], u[None])
    gv2 = np.sum(fld.gradV[0, 2:-2, 2:-2] ** 2, axis=(-3, -2, -1))
    np.testing.assert_allclose(gv2, 2.0, rtol=1e-10)
    np.testing.assert_allclose(fld.cell_centers[0], (np.arange(16) + 0.5) / 16)
