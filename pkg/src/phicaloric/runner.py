"""End-to-end experiments: solve runs, evaluate checks, write reports.

Every check produces rows ``(run_id, cyl_id, k, quantity, value)`` and a
summary ``{check, id, max_ratio, pass, ...}``. Reports are deterministic:
values are written with ``repr`` and in a fixed order, and timings only go
to the JSON summary.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import harness, iteration, oracles
from .config import canonical, code_version, digest, load_config, run_key
from .errors import NonConvergence
from .orlicz import biconjugate, characteristics, make_power, phi_from_config, select_q
from .presets import get_preset
from .solver import GradOrField, GridSpec, solve_elliptic, solve_parabolic
from .tensor_maps import S_epsilon, frob, hammer_check, sample_pairs

log = logging.getLogger(__name__)

EXIT_OK, EXIT_ASSERT, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2, 3


# ---------------------------------------------------------------- solving

def build_grid(cfg: dict, run: dict) -> GridSpec:
    phi_spec = run.get("phi", cfg["phi"])
    g = run["grid"]
    params = {"n": g["n"], "N": g.get("N", 1), "seed": run.get("seed", cfg["seed"]), **run["params"]}
    if "p" in phi_spec:
        params.setdefault("p", phi_spec["p"])
    if run.get("amplitude") is not None:
        params["amplitude"] = run["amplitude"]
    pr = get_preset(run["preset"], **params)
    t_start = g.get("t_start", pr.get("t_start", 0.0))
    elliptic = run["mode"] == "elliptic"
    return GridSpec(n=g["n"], cells=g["cells"], extent=pr["extent"], N=g.get("N", 1),
                    dt=math.inf if elliptic else g["dt"], T=g.get("T", 0.0 if elliptic else 0.1),
                    t_start=t_start, u0=pr.get("u0"), bc=pr.get("bc"), forcing=pr.get("forcing"))


def solve_run(cfg: dict, run: dict) -> GradOrField:
    phi = phi_from_config(run.get("phi", cfg["phi"]))
    grid = build_grid(cfg, run)
    s = cfg["solver"]
    if run["mode"] == "elliptic":
        return solve_elliptic(phi, grid, eps=s["eps_min"])
    return solve_parabolic(phi, grid, eps0=s["eps0"], eps_min=s["eps_min"], stride=s["stride"])


_ARRAYS = ("t", "u", "grad", "v", "Vfield", "gradV", "h")


def save_field(path: Path, fld: GradOrField):
    meta = {"extent": fld.extent, "n": fld.n, "N": fld.N, "meta": fld.meta}
    tmp = path.with_suffix(".tmp.npz")
    np.savez(tmp, meta=np.array(json.dumps(meta)), **{k: getattr(fld, k) for k in _ARRAYS})
    tmp.replace(path)


def load_field(path: Path) -> GradOrField:
    with np.load(path) as z:
        meta = json.loads(str(z["meta"]))
        arrs = {k: z[k] for k in _ARRAYS}
    return GradOrField(extent=tuple(tuple(e) for e in meta["extent"]), n=meta["n"], N=meta["N"],
                       meta=meta["meta"], **arrs)


def run_hash(cfg: dict, run: dict) -> str:
    return digest({"run": run_key(cfg, run), "code": code_version()})


def _solve_to_cache(args):
    cfg, run, path = args
    save_field(Path(path), solve_run(cfg, run))
    return run["id"]


class Context:
    """Lazily solved runs with an on-disk cache keyed by run hash and code version."""

    def __init__(self, cfg: dict, cache_dir: Path | None):
        self.cfg = cfg
        self.runs = {r["id"]: r for r in cfg["runs"]}
        self.cache_dir = cache_dir
        self._fields: dict[str, GradOrField] = {}

    def cache_path(self, run_id: str) -> Path | None:
        if self.cache_dir is None:
            return None
        return self.cache_dir / f"{run_id}-{run_hash(self.cfg, self.runs[run_id])[:16]}.npz"

    def field(self, run_id: str) -> GradOrField:
        if run_id not in self._fields:
            path = self.cache_path(run_id)
            if path is not None and path.exists():
                fld = load_field(path)
            else:
                fld = solve_run(self.cfg, self.runs[run_id])
                if path is not None:
                    save_field(path, fld)
            self._fields[run_id] = fld
        return self._fields[run_id]

    def prefetch(self, run_ids, workers: int):
        """Solve uncached runs over a process pool (results land in the cache)."""
        todo = [r for r in run_ids if r not in self._fields
                and (self.cache_path(r) is None or not self.cache_path(r).exists())]
        if workers <= 1 or self.cache_dir is None or len(todo) < 2:
            return
        jobs = [(self.cfg, self.runs[r], str(self.cache_path(r))) for r in todo]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for _ in pool.map(_solve_to_cache, jobs):
                pass

    def phi(self, run_id: str):
        return phi_from_config(self.runs[run_id].get("phi", self.cfg["phi"]))

    def p(self, run_id: str) -> float:
        return float(self.runs[run_id].get("phi", self.cfg["phi"])["p"])

    def cylinders(self, run_id: str):
        """(cyl_id, ParabolicCylinder); t0 defaults to the final time, alpha to 1."""
        run = self.runs[run_id]
        out = []
        for c in self.cfg["cylinder_sets"].get(run.get("cylinders"), []):
            t0 = c.get("t0", run["grid"].get("T", 0.0))
            out.append((c["id"], harness.ParabolicCylinder(t0, tuple(c["x0"]), c["R"], c.get("alpha", 1.0))))
        return out


# ---------------------------------------------------------------- checks

@dataclass
class CheckResult:
    check: str
    id: str
    passed: bool
    max_ratio: float | None = None
    details: dict = field(default_factory=dict)
    rows: list = field(default_factory=list)
    plots: dict = field(default_factory=dict)
    seconds: float = 0.0

    def summary(self) -> dict:
        return {"check": self.check, "id": self.id, "max_ratio": self.max_ratio, "pass": self.passed,
                "seconds": round(self.seconds, 3), **self.details}


def _spread(values) -> float:
    vals = [v for v in values if math.isfinite(v)]
    if not vals or min(vals) <= 0:
        return math.inf
    return max(vals) / min(vals)


def check_orlicz_exactness(ctx, chk, res):
    o = chk["options"]
    env = chk["envelope"]
    tol_c, tol_d, tol_b = env.get("characteristics", 1e-12), env.get("delta2", 1e-10), env.get("biconjugate", 1e-8)
    t = np.logspace(-3, 3, o.get("points", 61))
    ok = True
    for p in o.get("ps", [1.5, 2.0, 3.0, 4.5]):
        phi = make_power(p)
        ch = characteristics(phi)
        bic = biconjugate(phi, t)
        e_lo = abs(ch.char_lo - (p - 1)) / (p - 1)
        e_hi = abs(ch.char_hi - (p - 1)) / (p - 1)
        e_d = abs(ch.delta2 - 2.0**p) / 2.0**p
        e_b = float(np.max(np.abs(bic - phi(t)) / phi(t)))
        rid = f"p={p!r}"
        res.rows += [(rid, "", 0, "char_lo", ch.char_lo), (rid, "", 0, "char_hi", ch.char_hi),
                     (rid, "", 0, "delta2", ch.delta2), (rid, "", 0, "biconj_relerr", e_b)]
        ok &= e_lo <= tol_c and e_hi <= tol_c and e_d <= tol_d and e_b <= tol_b
    res.passed = bool(ok)


def check_hammer_envelope(ctx, chk, res):
    o = chk["options"]
    tol = chk["envelope"].get("seed_change", 0.05)
    seed0 = ctx.cfg["seed"]
    seeds = [seed0 + i for i in range(o.get("seeds", 3))]
    worst, finite = 0.0, True
    for p in o.get("ps", [1.5, 2.0, 3.0, 4.5]):
        phi = make_power(p)
        for N in o.get("Ns", [1, 3]):
            envs = []
            for s in seeds:
                P, Q = sample_pairs(np.random.default_rng(s), o.get("size", 10_000), o.get("n", 2), N)
                envs.append(hammer_check(phi, P, Q).envelopes())
            rid = f"p={p!r},N={N}"
            for pair in envs[0]:
                lo = np.array([e[pair][0] for e in envs])
                hi = np.array([e[pair][1] for e in envs])
                finite &= bool(np.all(np.isfinite(lo)) and np.all(np.isfinite(hi)) and np.all(lo > 0))
                change = max(float(np.max(np.abs(lo / lo[0] - 1))), float(np.max(np.abs(hi / hi[0] - 1))))
                worst = max(worst, change)
                res.rows += [(rid, pair, 0, "min", float(lo[0])), (rid, pair, 0, "max", float(hi[0])),
                             (rid, pair, 0, "seed_change", change)]
    res.details["worst_seed_change"] = worst
    res.passed = bool(finite and worst < tol)


def check_contraction(ctx, chk, res):
    o = chk["options"]
    rng = np.random.default_rng(ctx.cfg["seed"])
    m, n, N = o.get("size", 100_000), o.get("n", 2), o.get("N", 2)
    scale = np.exp(rng.uniform(-5, 5, (m, 1, 1)))
    P = rng.standard_normal((m, n, N)) * scale
    Q = P + rng.standard_normal((m, n, N)) * scale * np.exp(rng.uniform(-8, 1, (m, 1, 1)))
    # eps drawn from a log-spaced set so each value is applied as one batch
    levels = np.logspace(-5, 5, 41)
    which = rng.integers(0, levels.size, m)
    lhs = np.empty(m)
    for j, eps in enumerate(levels):
        idx = which == j
        lhs[idx] = frob(S_epsilon(P[idx], float(eps)) - S_epsilon(Q[idx], float(eps)))
    ok = lhs <= frob(P - Q) + chk["envelope"].get("slack", 1e-12)
    frac = float(np.mean(ok))
    res.rows.append(("", "", 0, "pass_fraction", frac))
    res.details["pass_fraction"] = frac
    res.passed = frac == 1.0


def check_verify_decay(ctx, chk, res):
    o = chk["options"]
    grid = o.get("grid", iteration.DEFAULT_GRID)
    rows = iteration.verify_decay(grid, K=o.get("K", 200))
    for i, r in enumerate(rows):
        rid = f"a0={r.a0!r},C={r.C!r},b={r.b!r},alpha={r.alpha!r}"
        res.rows += [(rid, "", r.k_decay, "ratio_final", r.ratio_final), (rid, "", 0, "pass", float(r.passed))]
    a, _ = iteration.iterate_bound(iteration.RecursionParams(1.0, 1.0, 2.0, 1.0), o.get("K", 200))
    canon = float(np.max(np.abs(a - 2.0 ** -np.arange(a.size))))
    res.rows.append(("canonical", "", 0, "max_abs_dev", canon))
    res.details.update(points=len(rows), passed_points=sum(r.passed for r in rows), canonical_dev=canon)
    res.passed = all(r.passed for r in rows) and canon <= chk["envelope"].get("canonical", 1e-12)


def check_solver_oracles(ctx, chk, res):
    env = chk["envelope"]
    o = chk["options"]
    heat = oracles.heat_eigenmode(**o.get("heat_eigenmode", {}))
    mms = oracles.mms_p3(**o.get("mms_p3", {}))
    bar = oracles.barenblatt_1d(**o.get("barenblatt_1d", {}))
    rad = oracles.radial_elliptic(**o.get("radial_elliptic", {}))
    res.rows.append(("heat_eigenmode", "", 0, "linf_error", heat["error"]))
    for name, rep, key in (("mms_p3", mms, "errors"), ("barenblatt_1d", bar, "errors"),
                           ("radial_elliptic", rad, "errors")):
        for m, e in zip(rep["grids"], rep[key]):
            res.rows.append((name, "", m, "error", e))
    for i, r in enumerate(mms["orders"]):
        res.rows.append(("mms_p3", "", i, "order", r))
    for i, r in enumerate(bar["ratios"]):
        res.rows.append(("barenblatt_1d", "", i, "error_ratio", r))
    e = rad["errors"]
    verdict = {
        "heat_eigenmode": heat["error"] < env.get("heat_linf", 1e-5),
        "mms_p3": min(mms["orders"]) >= env.get("mms_order", 1.8),
        "barenblatt_1d": min(bar["ratios"]) >= env.get("barenblatt_ratio", 2.0),
        "radial_elliptic": all(a > b for a, b in zip(e, e[1:])),
    }
    res.details["oracles"] = verdict
    res.passed = all(verdict.values())


def _group_max(values_by_run, groups):
    return {g: max((v for r in ids for v in values_by_run.get(r, [])), default=math.nan)
            for g, ids in groups.items()}


def check_verify_main_bound(ctx, chk, res):
    runs = chk.get("runs", [])
    groups = chk.get("groups", {})
    ratios = {}
    for rid in runs:
        fld, phi = ctx.field(rid), ctx.phi(rid)
        ratios[rid] = []
        for cid, cyl in ctx.cylinders(rid):
            mb = harness.verify_main_bound(fld, cyl, phi, fld.n)
            res.rows += [(rid, cid, 0, "lhs", mb["lhs"]), (rid, cid, 0, "rhs", mb["rhs"]),
                         (rid, cid, 0, "ratio", mb["ratio"])]
            ratios[rid].append(mb["ratio"])
    allr = [r for v in ratios.values() for r in v]
    finite = bool(allr) and all(math.isfinite(r) for r in allr)
    res.max_ratio = max(allr) if allr else None
    gm = _group_max(ratios, groups)
    for g, v in gm.items():
        res.rows.append((g, "", 0, "group_max_ratio", v))
    spread = _spread(gm.values()) if gm else 1.0
    tol = chk["envelope"].get("stability", 0.2)
    res.details.update(cylinders=len(allr), group_max=gm, group_spread=spread,
                       min_cylinders_ok=len(allr) >= chk["envelope"].get("min_cylinders", 0))
    res.passed = finite and spread <= 1 + tol and res.details["min_cylinders_ok"]


def _gamma_inf(mode, fld, cyl, phi):
    s = harness.CylinderSample(fld, cyl)
    if mode == "sup_inner":
        return float(s.sup(s.v, 1.0))
    if mode == "median":
        return float(np.median(s.v))
    if mode == "auto":
        return harness.choose_gamma_infty(fld, cyl, phi, fld.n)
    return float(mode)


def check_verify_levelset_lemma(ctx, chk, res):
    o = chk["options"]
    k_max = o.get("k_max", 8)
    mode = o.get("gamma", "sup_inner")
    betas, cmax = [], {}
    for rid in chk.get("runs", []):
        fld, phi = ctx.field(rid), ctx.phi(rid)
        q = select_q(phi).q
        cmax[rid] = []
        for cid, cyl in ctx.cylinders(rid):
            g = _gamma_inf(mode, fld, cyl, phi)
            if g <= 0:
                continue
            tr = harness.compute_trace(fld, cyl, g, k_max, phi, q)
            rep = harness.verify_levelset_lemma(tr, fld, cyl, phi)
            for r in rep["rows"]:
                res.rows += [(rid, cid, r["k"], "W", r["W"]), (rid, cid, r["k"], "c1", r["c1"]),
                             (rid, cid, r["k"], "c2", r["c2"])]
            res.rows += [(rid, cid, 0, "gamma_inf", g), (rid, cid, 0, "beta", rep["beta"])]
            res.plots[f"{rid}_{cid}_logW"] = [(k, math.log(w)) for k, w in enumerate(tr.W) if w > 0]
            if math.isfinite(rep["beta"]):
                betas.append(rep["beta"])
            cmax[rid].append(rep["c_max"])
    beta_max = max(betas) if betas else math.nan
    allc = [c for v in cmax.values() for c in v]
    res.max_ratio = max(allc) if allc else None
    gm = _group_max(cmax, chk.get("groups", {}))
    spread = _spread(gm.values()) if gm else 1.0
    res.details.update(beta_max=beta_max, fitted=len(betas), group_max=gm, group_spread=spread)
    env = chk["envelope"]
    res.passed = bool(betas) and beta_max <= env.get("beta_max", 3.2) and spread <= 1 + env.get("stability", math.inf)


def check_dibenedetto_compare(ctx, chk, res):
    o = chk["options"]
    runs = chk.get("runs", [])
    cid, cyl = ctx.cylinders(runs[0])[o.get("cylinder_index", 0)]
    p = ctx.p(runs[0])
    pairs = [(ctx.runs[r].get("amplitude", 1.0), ctx.field(r)) for r in runs]
    rep = harness.dibenedetto_compare(pairs, cyl, p, pairs[0][1].n)
    if rep["skipped"]:
        res.details["skipped"] = rep["reason"]
        res.passed = True
        return
    env = chk["envelope"]
    for r in rep["rows"]:
        for key in ("lhs", "rhs_new", "rhs_dib", "alpha_term", "lhs_rel", "rhs_new_rel", "ratio"):
            res.rows.append((f"s={r['s']!r}", cid, 0, key, r[key]))
    res.plots["amplitude_vs_ratio"] = [(r["s"], r["ratio"]) for r in rep["rows"]]
    res.plots["amplitude_vs_lhs"] = [(r["s"], r["lhs"]) for r in rep["rows"]]
    res.plots["amplitude_vs_rhs_new"] = [(r["s"], r["rhs_new"]) for r in rep["rows"]]
    res.plots["amplitude_vs_rhs_dib"] = [(r["s"], r["rhs_dib"]) for r in rep["rows"]]
    last = rep["rows"][-1]
    small = last["lhs_rel"] < env.get("rel_max", 1e-2) and last["rhs_new_rel"] < env.get("rel_max", 1e-2)
    bounded = rep["ratio_spread"] <= env.get("ratio_spread_max", 10.0)
    res.max_ratio = max(r["ratio"] for r in rep["rows"])
    res.details.update(monotone=rep["monotone"], dib_floor=rep["dib_floor"], small=bool(small),
                       ratio_spread=rep["ratio_spread"])
    res.passed = bool(rep["monotone"] and rep["dib_floor"] and small and bounded)


def check_caccioppoli_check(ctx, chk, res):
    o = chk["options"]
    env = chk["envelope"]
    ok = True
    runs = chk.get("runs", [])
    if runs:
        rid = runs[0]
        fld, phi = ctx.field(rid), ctx.phi(rid)
        q = select_q(phi).q
        cid, cyl = ctx.cylinders(rid)[o.get("cylinder_index", 0)]
        s = harness.CylinderSample(fld, cyl)
        vals = s.v[s.indicator(o.get("quantile_region", 1.0))]
        m = o.get("levels", 8)
        cs, cors = [], []
        for j in range(1, m + 1):
            g = float(np.quantile(vals, j / (m + 1)))
            c = harness.caccioppoli_check(fld, cyl, phi, "level", gamma=g, q=q)
            for key in ("lhs_sup", "lhs_gradV", "rhs1", "rhs2", "c_emp", "c_emp_cor"):
                res.rows.append((rid, cid, j, key, c[key]))
            res.rows.append((rid, cid, j, "gamma", g))
            cs.append(c["c_emp"])
            cors.append(c["c_emp_cor"])
        spread = _spread(cs)
        res.max_ratio = max(cs)
        res.details.update(level_spread=spread, level_spread_cor=_spread(cors))
        ok &= spread < env.get("level_spread_max", 3.0)
    base = o.get("baseline_run")
    if base is not None:
        fld, phi = ctx.field(base), ctx.phi(base)
        q = select_q(phi).q
        cb = []
        for cid, cyl in ctx.cylinders(base):
            c = harness.caccioppoli_check(fld, cyl, phi, "one", q=q)
            for key in ("lhs_sup", "lhs_gradV", "rhs1", "rhs2", "c_emp"):
                res.rows.append((base, cid, 0, key, c[key]))
            cb.append(c["c_emp"])
        res.details["baseline_c_max"] = max(cb)
        ok &= max(cb) <= env.get("baseline_c_max", 1.0)
    res.passed = bool(ok)


def check_stationary_check(ctx, chk, res):
    o = chk["options"]
    env = chk["envelope"]
    k_max = o.get("k_max", 12)
    ratios, decays = {}, []
    for rid in chk.get("runs", []):
        fld, phi = ctx.field(rid), ctx.phi(rid)
        ratios[rid] = []
        for cid, cyl in ctx.cylinders(rid):
            r = harness.stationary_check(fld, cyl.x0, cyl.R, phi, k_max=k_max, C=o.get("C", 1.0))
            res.rows += [(rid, cid, 0, "lhs", r["lhs"]), (rid, cid, 0, "rhs", r["rhs"]),
                         (rid, cid, 0, "ratio", r["ratio"]), (rid, cid, 0, "c_inf", r["c_inf"])]
            res.rows += [(rid, cid, k, "U", u) for k, u in enumerate(r["U"])]
            ratios[rid].append(r["ratio"])
            decays.append(r["U"][-1] <= env.get("decay", 1e-6) * r["U"][0] if r["U"][0] > 0 else True)
    allr = [r for v in ratios.values() for r in v]
    gm = _group_max(ratios, chk.get("groups", {}))
    spread = _spread(gm.values()) if gm else 1.0
    res.max_ratio = max(allr) if allr else None
    res.details.update(group_max=gm, group_spread=spread, decay_all=all(decays))
    res.passed = (bool(allr) and all(math.isfinite(r) for r in allr) and all(decays)
                  and spread <= 1 + env.get("stability", 0.2))


def check_w21_check(ctx, chk, res):
    ratios = []
    for rid in chk.get("runs", []):
        fld, phi = ctx.field(rid), ctx.phi(rid)
        for cid, cyl in ctx.cylinders(rid):
            r = harness.w21_check(fld, cyl, phi)
            for key, val in r.items():
                if isinstance(val, (int, float)):
                    res.rows.append((rid, cid, 0, key, float(val)))
            ratios += [r["ratio1"], r["ratio2"]]
    res.max_ratio = max(ratios) if ratios else None
    res.passed = all(math.isfinite(r) for r in ratios)


def check_hoelder_diagnostic(ctx, chk, res):
    for rid in chk.get("runs", []):
        fld, phi = ctx.field(rid), ctx.phi(rid)
        for cid, cyl in ctx.cylinders(rid):
            r = harness.hoelder_diagnostic(fld, cyl, phi)
            for key, val in r.items():
                if isinstance(val, (int, float)):
                    res.rows.append((rid, cid, 0, key, float(val)))
    res.passed = True


CHECKS = {
    "orlicz_exactness": (check_orlicz_exactness,
                         "Characteristics, Delta_2 constant and biconjugation of t^p/p against closed forms."),
    "hammer_envelope": (check_hammer_envelope,
                        "Six pairwise ratios of the equivalent monotonicity quantities "
                        "over sampled matrix pairs; envelopes must be finite and stable across seeds."),
    "contraction": (check_contraction, "S_eps(Q) = (|Q| - eps)_+ Q/|Q| is 1-Lipschitz on random pairs."),
    "verify_decay": (check_verify_decay,
                     "Fast geometric convergence lemma: threshold recursion on the parameter grid and the "
                     "canonical point a_k = 2^-k."),
    "solver_oracles": (check_solver_oracles,
                       "Solver against exact solutions: heat eigenmode, p=3 manufactured solution, "
                       "Barenblatt (p=3, n=1), radial p-harmonic elliptic benchmark."),
    "verify_main_bound": (check_verify_main_bound,
                          "Theorem main: min{sup rho(v) alpha^((n-2)/2), sup v^2/alpha} against "
                          "avg(v^2/alpha + phi(v)) on parabolic cylinders; ratio finite and stable."),
    "verify_levelset_lemma": (check_verify_levelset_lemma,
                              "Level-set energy lemma: per-level constants LHS/(2^(3k) W_k) and the fitted "
                              "growth exponent beta of LHS/W_k."),
    "dibenedetto_compare": (check_dibenedetto_compare,
                            "Amplitude sweep comparing the new bound with the classical one carrying "
                            "the alpha^(p/(2-p)) term; small gradients are detected only by the new bound."),
    "caccioppoli_check": (check_caccioppoli_check,
                          "Caccioppoli-type energy inequality: level sweep of the "
                          "empirical constant and the f = 1 heat baseline."),
    "stationary_check": (check_stationary_check,
                         "Stationary sup bound: sup_{B_R} phi(v) against avg_{B_2R} phi(v) and decay of the "
                         "level sequence U_k."),
    "w21_check": (check_w21_check, "Second-derivative (W^{2,1}) bounds on one snapshot; diagnostic."),
    "hoelder_diagnostic": (check_hoelder_diagnostic, "Oscillation decay of the gradient over shrinking cylinders; diagnostic."),
}


def describe_check(name: str) -> str:
    if name not in CHECKS:
        raise KeyError(name)
    fn, text = CHECKS[name]
    return f"{name}: {text}"


def run_check(ctx: Context, chk: dict) -> CheckResult:
    res = CheckResult(chk["check"], chk["id"], False)
    t0 = time.perf_counter()
    CHECKS[chk["check"]][0](ctx, chk, res)
    res.seconds = time.perf_counter() - t0
    limit = chk["envelope"].get("seconds")
    if limit is not None:
        res.details["within_time"] = res.seconds < limit
        res.passed = res.passed and res.seconds < limit
    return res


# ---------------------------------------------------------------- reports

def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_rows(path: Path, rows, fmt: str):
    if fmt == "json":
        data = [{"run_id": r, "cyl_id": c, "k": int(k), "quantity": q, "value": float(v)} for r, c, k, q, v in rows]
        path.with_suffix(".json").write_text(json.dumps(data, indent=1) + "\n")
        return
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["run_id", "cyl_id", "k", "quantity", "value"])
    w.writerows([r, c, int(k), q, _fmt(v)] for r, c, k, q, v in rows)
    path.with_suffix(".csv").write_text(buf.getvalue())


def write_snapshots(d: Path, fld: GradOrField, fmt: str):
    """One file per snapshot: CSV of vertex values, or flat little-endian float64
    with a JSON header alongside. The header is ``{t, n, N, cells, h}``."""
    d.mkdir(parents=True, exist_ok=True)
    cells = [s - 1 for s in fld.u.shape[1:1 + fld.n]]
    for i, t in enumerate(fld.t):
        head = {"t": float(t), "n": fld.n, "N": fld.N, "cells": cells, "h": [float(x) for x in fld.h]}
        u = fld.u[i].reshape(-1, fld.N)
        if fmt == "json":
            (d / f"snap_{i:05d}.json").write_text(json.dumps(head) + "\n")
            (d / f"snap_{i:05d}.bin").write_bytes(u.astype("<f8").tobytes())
        else:
            lines = ["# " + json.dumps(head), ",".join(f"u{c}" for c in range(fld.N))]
            lines += [",".join(repr(float(x)) for x in row) for row in u]
            (d / f"snap_{i:05d}.csv").write_text("\n".join(lines) + "\n")


def write_plots(out: Path, res: CheckResult):
    if not res.plots:
        return
    d = out / "plots"
    d.mkdir(exist_ok=True)
    for name, pts in sorted(res.plots.items()):
        (d / f"{res.id}_{name}.dat").write_text("".join(f"{_fmt(x)} {_fmt(y)}\n" for x, y in pts))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else str(f)
    return obj


@dataclass
class ExperimentResult:
    status: int
    config_hash: str
    results: list
    out_dir: Path
    message: str = ""

    def result(self, check_id: str) -> CheckResult:
        return next(r for r in self.results if r.id == check_id)


def _check_worker(args):
    cfg, cache_dir, chk = args
    return run_check(Context(cfg, Path(cache_dir)), chk)


def run_experiment(config, out_dir=None, workers: int = 1, seed: int | None = None, fmt: str | None = None,
                   solve_only: bool = False, use_cache: bool = True) -> ExperimentResult:
    """Solve, check and report; ``status`` follows the exit-code convention.

    ConfigError propagates to the caller (exit 2). A solver failure stops
    the pipeline with status 3 and keeps the reports already written.
    """
    cfg = load_config(config)
    if seed is not None:
        cfg["seed"] = int(seed)
    out = Path(out_dir or cfg["output"].get("dir", "phicaloric-out"))
    fmt = fmt or cfg["output"].get("format", "csv")
    out.mkdir(parents=True, exist_ok=True)
    chash = digest(cfg)
    cache = out / "cache" if use_cache else None
    if cache is not None:
        cache.mkdir(exist_ok=True)
    ctx = Context(cfg, cache)
    summary = {"name": cfg["name"], "config_hash": chash, "code_version": code_version(),
               "seed": cfg["seed"], "checks": []}
    (out / "config.resolved.json").write_text(canonical(cfg) + "\n")
    results, status, message = [], EXIT_OK, ""
    try:
        ctx.prefetch([r["id"] for r in cfg["runs"]], workers)
        if solve_only:
            for run in cfg["runs"]:
                fld = ctx.field(run["id"])
                write_snapshots(out / "snapshots" / run["id"], fld, fmt)
                summary["checks"].append({"check": "solve", "id": run["id"], "snapshots": int(fld.t.size),
                                          "meta": fld.meta, "pass": True})
        elif workers > 1 and cache is not None and len(cfg["checks"]) > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(_check_worker, [(cfg, str(cache), c) for c in cfg["checks"]]))
        else:
            for chk in cfg["checks"]:
                results.append(run_check(ctx, chk))
                log.info("%s %s: %s", chk["check"], chk["id"], "pass" if results[-1].passed else "FAIL")
    except NonConvergence as exc:
        status, message = EXIT_SOLVER, f"solver did not converge (t={exc.time}, residual={exc.residual:g}): {exc}"
    # reports are written in config order by this process only
    for res in results:
        write_rows(out / res.id, res.rows, fmt)
        write_plots(out, res)
        summary["checks"].append(res.summary())
    if status == EXIT_OK and not all(r.passed for r in results):
        status = EXIT_ASSERT
    summary["status"] = status
    if message:
        summary["message"] = message
    (out / "summary.json").write_text(json.dumps(_jsonable(summary), indent=1, sort_keys=True) + "\n")
    return ExperimentResult(status, chash, results, out, message)
