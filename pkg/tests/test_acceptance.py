"""End-to-end acceptance gate.

Each test exercises one headline guarantee of the package at desk scale and
prints a single PASS/FAIL line with the measured numbers.  The slower studies
(the exact-solution convergence sweep and the rough-coefficient sweep) are
shared across tests through module-scoped fixtures.
"""

import math
import os
import subprocess
import sys
import time

import numpy as np
import pytest

from lodll.analysis import (ReferenceConfig, bn_projection, compute_reference,
                            error_norms, modulus_deviation)
from lodll.cli import parse_config, run_experiment, run_single_lod
from lodll.coefficients import CoefficientField, exact_solution_example1
from lodll.fem import MagnetizationField
from lodll.lod import GLOBAL_LAYERS, build_lod_basis
from lodll.mesh import make_mesh_pair


def _report(capsys, name, ok, detail):
    with capsys.disabled():
        print(f"\n[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    assert ok, f"{name}: {detail}"


def _read_csv(path):
    lines = open(path).read().strip().split("\n")
    header = lines[0].split(",")
    return [dict(zip(header, line.split(","))) for line in lines[1:]]


def _slope(hs, errs):
    return float(np.polyfit(np.log(hs), np.log(errs), 1)[0])


@pytest.fixture(scope="module")
def outdir(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance")


@pytest.fixture(scope="module")
def exact_study(outdir):
    """Exact-solution convergence sweeps at alpha=1.0 and alpha=1e-2.

    Errors are measured against the same-scheme fine-mesh solution at the
    same time step, so the time-discretization error (shared by every run
    at this tau) cancels and the spatial rates are visible.  Returns
    per-alpha rows (H, l2, h1, modulus_dev), fitted slopes, elapsed
    seconds, and the lifted fields (reused by the scheme-variant test).
    """
    results = {}
    for alpha, preset in ((1.0, "exact-desk"), (1e-2, "exact-desk-lowdamp")):
        cfg = parse_config("ll_convergence", preset=preset,
                           overrides={"output_dir": str(outdir)})
        truth = compute_reference(ReferenceConfig(
            cfg.family, cfg.epsilon, cfg.alpha, cfg.tau, cfg.T,
            cfg.resolved_fine_n(), cfg.scheme, cfg.initial, cfg.forcing))
        start = time.monotonic()
        rows, lifts = [], {}
        for H in cfg.coarse_H:
            lift = run_single_lod(cfg, H)
            l2, h1 = error_norms(lift, truth)
            rows.append((H, l2, h1, modulus_deviation(lift)))
            lifts[H] = lift
        elapsed = time.monotonic() - start
        hs = [r[0] for r in rows]
        results[alpha] = {
            "rows": rows,
            "slope_l2": _slope(hs, [r[1] for r in rows]),
            "slope_h1": _slope(hs, [r[2] for r in rows]),
            "elapsed": elapsed,
            "lifts": lifts,
            "cfg": cfg,
        }
    return results


def test_a1_elliptic_lod_rates(outdir, capsys):
    cfg = parse_config("elliptic_convergence", preset="elliptic-desk",
                       overrides={"output_dir": str(outdir / "a1")})
    start = time.monotonic()
    run_experiment(cfg)
    elapsed = time.monotonic() - start
    rows = _read_csv(str(outdir / "a1" / "elliptic_convergence.csv"))
    order = rows[-1]
    s2, s1 = float(order["rate_l2"]), float(order["rate_h1"])
    ok = s2 >= 2.5 and s1 >= 1.7 and elapsed < 120
    _report(capsys, "A1 elliptic LOD rates",
            ok, f"L2 slope {s2:.3f} (>=2.5), H1 slope {s1:.3f} (>=1.7), "
                f"{elapsed:.1f}s (<120s)")


def test_a2_localization_decay(outdir, capsys):
    cfg = parse_config("localization_decay", preset="decay-desk",
                       overrides={"output_dir": str(outdir / "a2")})
    start = time.monotonic()
    run_experiment(cfg)
    elapsed = time.monotonic() - start
    rows = _read_csv(str(outdir / "a2" / "localization_decay.csv"))
    dists = [float(r["basis_distance"]) for r in rows]
    monotone = all(dists[i + 1] <= dists[i] for i in range(len(dists) - 1))
    decrement = (math.log(dists[0]) - math.log(dists[-1])) / (len(dists) - 1)
    ok = monotone and decrement >= 0.5 and elapsed < 120
    _report(capsys, "A2 localization decay",
            ok, f"distances {['%.2e' % d for d in dists]} non-increasing="
                f"{monotone}, mean log-decrement {decrement:.3f} (>=0.5), "
                f"{elapsed:.1f}s (<120s)")


def test_a3_exact_solution_rates(exact_study, capsys):
    ok = True
    parts = []
    for alpha in (1.0, 1e-2):
        res = exact_study[alpha]
        good = (res["slope_l2"] >= 2.5 and res["slope_h1"] >= 1.8
                and res["elapsed"] < 600)
        ok = ok and good
        parts.append(f"alpha={alpha:g}: L2 {res['slope_l2']:.3f} (>=2.5), "
                     f"H1 {res['slope_h1']:.3f} (>=1.8), "
                     f"{res['elapsed']:.0f}s (<600s)")
    _report(capsys, "A3 exact-solution rates", ok, "; ".join(parts))


def test_a4_rough_coefficient_rates(outdir, capsys):
    cfg = parse_config("ll_convergence", preset="rough-desk",
                       overrides={"output_dir": str(outdir / "a4")})
    start = time.monotonic()
    run_experiment(cfg)
    elapsed = time.monotonic() - start
    rows = _read_csv(str(outdir / "a4" / "ll_convergence.csv"))
    order = rows[-1]
    s2, s1 = float(order["rate_l2"]), float(order["rate_h1"])
    ok = s2 >= 2.5 and s1 >= 1.7 and elapsed < 1200
    _report(capsys, "A4 rough-coefficient rates",
            ok, f"L2 slope {s2:.3f} (>=2.5), H1 slope {s1:.3f} (>=1.7), "
                f"{elapsed:.0f}s (<1200s)")


def test_a5_modulus_deviation_decreasing(exact_study, capsys):
    ok = True
    parts = []
    for alpha in (1.0, 1e-2):
        devs = [r[3] for r in exact_study[alpha]["rows"]]
        dec = all(devs[i + 1] < devs[i] for i in range(len(devs) - 1))
        ok = ok and dec
        parts.append(f"alpha={alpha:g}: {['%.2e' % d for d in devs]} "
                     f"strictly decreasing={dec}")
    _report(capsys, "A5 unit-modulus deviation", ok, "; ".join(parts))


def test_a6_invariant_suite(capsys):
    start = time.monotonic()
    proc = subprocess.run(
        [sys.executable, "-m", "pytest", "-q",
         "tests/test_fem.py", "tests/test_lod.py", "tests/test_stepper.py",
         "tests/test_analysis.py",
         "tests/test_cli.py::test_csv_determinism_byte_exact"],
        cwd=os.path.dirname(os.path.dirname(os.path.abspath(__file__))),
        capture_output=True, text=True)
    elapsed = time.monotonic() - start
    tail = proc.stdout.strip().split("\n")[-1]
    ok = proc.returncode == 0 and elapsed < 60
    _report(capsys, "A6 invariant suite",
            ok, f"{tail}, {elapsed:.1f}s (<60s)")


def test_a7_scheme_variants(exact_study, capsys):
    from dataclasses import replace
    exact = exact_solution_example1()
    base = exact_study[1.0]
    H = 0.25
    cimrak = base["lifts"][H]
    cimrak_err, _ = error_norms(cimrak, exact, t=base["cfg"].T)
    fields = {"cimrak": cimrak}
    for scheme in ("gao", "an"):
        cfg = replace(base["cfg"], scheme=scheme)
        fields[scheme] = run_single_lod(cfg, H)
    moduli = np.linalg.norm(fields["an"].values, axis=0)
    mod_err = float(np.max(np.abs(moduli - 1.0)))
    pair_dists = {}
    names = list(fields)
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            l2, _ = error_norms(fields[a], fields[b])
            pair_dists[f"{a}-{b}"] = l2
    bound = 10 * cimrak_err
    ok = mod_err <= 1e-14 and all(d <= bound for d in pair_dists.values())
    _report(capsys, "A7 scheme variants",
            ok, f"an nodal modulus error {mod_err:.2e} (<=1e-14), pairwise "
                f"L2 {['%s:%.2e' % kv for kv in pair_dists.items()]} "
                f"(<= 10x cimrak error {bound:.2e})")


def test_a8_lagged_projection_rates(capsys):
    kappa = CoefficientField("constant")
    exact = exact_solution_example1()
    fine_n = 128
    errs, hs = [], []
    for n in (2, 4, 8):
        pair = make_mesh_pair(n, fine_n)
        basis = build_lod_basis(pair, kappa, GLOBAL_LAYERS)
        x, y = pair.fine.nodes[:, 0], pair.fine.nodes[:, 1]
        Mn = MagnetizationField(pair.fine, exact.value(x, y, 0.0))
        target = MagnetizationField(pair.fine, exact.value(x, y, 0.05))
        coeffs = bn_projection(basis, Mn, 1.0, target)
        lift = MagnetizationField(pair.fine, basis.lift(coeffs))
        l2, _ = error_norms(lift, target)
        errs.append(l2)
        hs.append(1.0 / n)
    slope = _slope(hs, errs)
    ok = slope >= 2.5
    _report(capsys, "A8 lagged-form projection rates",
            ok, f"L2 slope {slope:.3f} (>=2.5), errors "
                f"{['%.2e' % e for e in errs]}")
