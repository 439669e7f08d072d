"""Acceptance suite: the bundled experiment, re-evaluated from its CSV reports.

Each criterion is recomputed from the raw report rows at its stated
tolerance instead of trusting the pass flags written by the runner.
"""
import csv
import json
import math
import time
from collections import defaultdict

import pytest

from phicaloric.config import bundled
from phicaloric.runner import run_experiment


@pytest.fixture(scope="session")
def suite(tmp_path_factory):
    out = tmp_path_factory.mktemp("suite")
    t0 = time.perf_counter()
    res = run_experiment(bundled(), out)
    wall = time.perf_counter() - t0
    summary = json.loads((out / "summary.json").read_text())
    return {"out": out, "res": res, "wall": wall,
            "checks": {c["id"]: c for c in summary["checks"]}}


def rows(suite, check_id):
    with open(suite["out"] / f"{check_id}.csv", newline="") as fh:
        return [dict(r, k=int(r["k"]), value=float(r["value"])) for r in csv.DictReader(fh)]


def by_quantity(rs, q):
    return [r for r in rs if r["quantity"] == q]


def test_criterion_1_orlicz_exactness(suite, criterion):
    rs = rows(suite, "c01_orlicz_exactness")
    worst = {"char": 0.0, "delta2": 0.0, "biconj": 0.0}
    for r in rs:
        p = float(r["run_id"].split("=")[1])
        if r["quantity"] in ("char_lo", "char_hi"):
            worst["char"] = max(worst["char"], abs(r["value"] - (p - 1)) / (p - 1))
        elif r["quantity"] == "delta2":
            worst["delta2"] = max(worst["delta2"], abs(r["value"] - 2**p) / 2**p)
        else:
            worst["biconj"] = max(worst["biconj"], r["value"])
    secs = suite["checks"]["c01_orlicz_exactness"]["seconds"]
    ok = worst["char"] <= 1e-12 and worst["delta2"] <= 1e-10 and worst["biconj"] <= 1e-8 and secs < 5
    assert criterion(1, ok, f"char err {worst['char']:.1e}, delta2 err {worst['delta2']:.1e}, "
                            f"biconj err {worst['biconj']:.1e}, {secs:.2f}s")


def test_criterion_2_hammer_envelope(suite, criterion):
    rs = rows(suite, "c02_hammer_envelope")
    bounds = [r["value"] for r in rs if r["quantity"] in ("min", "max")]
    change = max(r["value"] for r in by_quantity(rs, "seed_change"))
    combos = {r["run_id"] for r in rs}
    secs = suite["checks"]["c02_hammer_envelope"]["seconds"]
    ok = (len(combos) == 8 and all(math.isfinite(b) and b > 0 for b in bounds)
          and change < 0.05 and secs < 30)
    assert criterion(2, ok, f"{len(bounds)} envelope bounds finite, worst seed change {change:.2%}, {secs:.1f}s")


def test_criterion_3_contraction(suite, criterion):
    frac = by_quantity(rows(suite, "c03_contraction"), "pass_fraction")[0]["value"]
    assert criterion(3, frac == 1.0, f"pass fraction {frac:.6f} over 1e5 pairs")


def test_criterion_4_iteration_lemma(suite, criterion):
    rs = rows(suite, "c04_verify_decay")
    passes = by_quantity(rs, "pass")
    finals = by_quantity(rs, "ratio_final")
    dev = by_quantity(rs, "max_abs_dev")[0]["value"]
    secs = suite["checks"]["c04_verify_decay"]["seconds"]
    ok = (len(passes) == 54 and all(r["value"] == 1.0 for r in passes)
          and all(r["value"] < 1e-10 for r in finals) and dev <= 1e-12 and secs < 1)
    assert criterion(4, ok, f"{sum(r['value'] == 1.0 for r in passes)}/54 grid points, "
                            f"canonical deviation {dev:.1e}, {secs:.2f}s")


def test_criterion_5_solver_oracles(suite, criterion):
    rs = rows(suite, "c05_solver_oracles")
    get = lambda run, q: [r["value"] for r in rs if r["run_id"] == run and r["quantity"] == q]
    heat = get("heat_eigenmode", "linf_error")[0]
    orders = get("mms_p3", "order")
    bar = get("barenblatt_1d", "error_ratio")
    rad = get("radial_elliptic", "error")
    secs = suite["checks"]["c05_solver_oracles"]["seconds"]
    ok = (heat < 1e-5 and len(orders) >= 3 and min(orders) >= 1.8 and min(bar) >= 2.0
          and len(rad) >= 4 and all(a > b for a, b in zip(rad, rad[1:])) and secs < 180)
    assert criterion(5, ok, f"heat {heat:.1e}, MMS orders {min(orders):.2f}-{max(orders):.2f}, "
                            f"Barenblatt L1 ratios {min(bar):.2f}-{max(bar):.2f}, "
                            f"radial {rad[0]:.1e}->{rad[-1]:.1e}, {secs:.0f}s")


def test_criterion_6_main_bound(suite, criterion):
    rs = rows(suite, "c06_main_bound")
    ratios = [r["value"] for r in by_quantity(rs, "ratio")]
    runs = {r["run_id"] for r in by_quantity(rs, "ratio")}
    ps = {r.split("_")[0] for r in runs}
    gmax = [r["value"] for r in by_quantity(rs, "group_max_ratio")]
    spread = max(gmax) / min(gmax)
    betas = [r["value"] for r in by_quantity(rows(suite, "c06_levelset_lemma"), "beta")]
    ok = (len(ratios) >= 20 and ps == {"p1", "p2", "p3"} and all(math.isfinite(x) for x in ratios)
          and spread <= 1.2 and len(betas) > 0 and max(betas) <= 3.2 and suite["wall"] < 600)
    assert criterion(6, ok, f"{len(ratios)} cylinders, max ratio {max(ratios):.3f}, "
                            f"group-max spread {spread:.3f} (seeds x 2 grids), beta max {max(betas):.2f}, "
                            f"suite {suite['wall']:.0f}s")


def test_criterion_7_small_gradients(suite, criterion):
    rs = rows(suite, "c07_dibenedetto")
    tab = defaultdict(dict)
    for r in rs:
        tab[float(r["run_id"].split("=")[1])][r["quantity"]] = r["value"]
    s = sorted(tab, reverse=True)
    lhs = [tab[x]["lhs"] for x in s]
    rhs = [tab[x]["rhs_new"] for x in s]
    mono = all(a > b for a, b in zip(lhs, lhs[1:])) and all(a > b for a, b in zip(rhs, rhs[1:]))
    rel_l, rel_r = lhs[-1] / lhs[0], rhs[-1] / rhs[0]
    floor = all(tab[x]["rhs_dib"] >= tab[x]["alpha_term"] for x in s)
    ratios = [a / b for a, b in zip(lhs, rhs)]
    spread = max(ratios) / min(ratios)
    ok = (s == [1.0, 0.5, 0.25, 0.125] and mono and rel_l < 1e-2 and rel_r < 1e-2 and floor
          and spread <= 10)
    assert criterion(7, ok, f"LHS and RHS_new monotone to {rel_l:.4f} / {rel_r:.4f} of s=1, "
                            f"RHS_DiB >= alpha term, LHS/RHS_new spread {spread:.2f}")


@pytest.mark.xfail(strict=True, reason="level uniformity within x3 is not attained; see README")
def test_criterion_8_caccioppoli(suite, criterion):
    rs = rows(suite, "c08_caccioppoli")
    level = [r["value"] for r in by_quantity(rs, "c_emp") if r["run_id"] == "p3_eig_32" and r["k"] >= 1]
    base = [r["value"] for r in by_quantity(rs, "c_emp") if r["run_id"] == "p2_eig_32"]
    spread = max(level) / min(level)
    base_ok = len(base) > 0 and max(base) <= 0.5
    ok = len(level) == 8 and spread < 3.0 and base_ok
    # the runner must record the same verdict
    assert suite["checks"]["c08_caccioppoli"]["pass"] == ok
    assert criterion(8, ok, f"c_emp over 8 level quantiles {min(level):.3f}-{max(level):.3f} "
                            f"(spread x{spread:.1f}, need < x3); heat baseline c {max(base):.3f} "
                            f"{'within' if base_ok else 'outside'} envelope 0.5")


def test_criterion_9_stationary(suite, criterion):
    rs = rows(suite, "c09_stationary")
    ratios = [r["value"] for r in by_quantity(rs, "ratio")]
    U = defaultdict(dict)
    for r in by_quantity(rs, "U"):
        U[(r["run_id"], r["cyl_id"])][r["k"]] = r["value"]
    decays = [u[12] < 1e-6 * u[0] for u in U.values()]
    spread = suite["checks"]["c09_stationary"]["group_spread"]
    ok = all(math.isfinite(x) for x in ratios) and spread <= 1.2 and len(decays) > 0 and all(decays)
    assert criterion(9, ok, f"{len(ratios)} balls, max ratio {max(ratios):.3f}, "
                            f"spread {spread:.4f} across grids, U_12 < 1e-6 U_0 on {sum(decays)}/{len(decays)}")


def test_criterion_10_determinism(suite, tmp_path_factory, criterion):
    again = tmp_path_factory.mktemp("suite_again")
    res = run_experiment(bundled(), again, use_cache=False)
    first = sorted(p.name for p in suite["out"].glob("*.csv"))
    second = sorted(p.name for p in again.glob("*.csv"))
    same = [n for n in first if (suite["out"] / n).read_bytes() == (again / n).read_bytes()]
    ok = first == second and len(same) == len(first) > 0 and res.config_hash == suite["res"].config_hash
    assert criterion(10, ok, f"{len(same)}/{len(first)} CSV reports byte-identical on a fresh rerun")


def test_suite_status_reflects_failures(suite):
    failed = {r.id for r in suite["res"].results if not r.passed}
    assert suite["res"].status == (1 if failed else 0)
    assert failed <= {"c08_caccioppoli"}
