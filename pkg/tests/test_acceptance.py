"""End-to-end acceptance checks, one test per criterion.

Each test prints a single [PASS]/[FAIL] line for its criterion (collected in
the terminal summary as well) followed by the underlying report lines. The
statistical checks run the shipped configs under configs/ with their fixed
seeds.
"""
import itertools
import json
import math
import time
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

from nbplab.cli import run_experiment
from nbplab.config import load_config
from nbplab.cross_sections import GW3_COUNTS, gw3_model, rod_model
from nbplab.experiments import run_kind
from nbplab.engine import DOWN, UP
from nbplab.rod import (Grid, RodOperator, dense_eigen, power_iteration, solve_w, solve_w_spaceless,
                        stationary_residual, step_psi, survival_checks)
from nbplab.skeleton import (G_up, G_updown, build_down, build_up, constant_survival, down_table, gw3_table,
                             model_table, subset_sum, up_table)
from nbplab.stats import TestReport, stream

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
THREADS = 1


def _load(name):
    return load_config(CONFIGS / f"{name}.json")


def _run(name):
    return run_kind(_load(name), threads=THREADS)


def _verdict(log, number, title, reports, extra_ok=True):
    ok = extra_ok and all(r.passed for r in reports)
    head = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title}"
    log.append(head)
    print(head)
    for r in reports:
        print("    " + r.line())
    return ok


def _named(outcome, prefix):
    return [r for r in outcome.reports if r.name.startswith(prefix)]


@pytest.fixture(scope="module")
def rod_skeleton_outcome():
    return _run("rod1_skeleton")


def test_c01_eigen_oracle(acceptance_log):
    t0 = time.perf_counter()
    out = _run("rod1_eigen")
    reports = list(out.reports)
    # the unit rod as literally specified: subcritical but the same oracle checks apply
    short = rod_model(1.0)
    grid = Grid.for_model(short, 128)
    op = RodOperator(short, grid)
    eig = power_iteration(short, grid, op=op)
    dense = dense_eigen(short, grid, op)
    reports.append(TestReport("unit rod: power vs dense eigenvalue", abs(eig.lam - dense["lam"]), 1e-6))
    psi = step_psi(short, grid, eig.phi, 1.0, op)
    rel = float(np.abs(psi - math.exp(eig.lam) * eig.phi).max() / np.abs(psi).max())
    reports.append(TestReport("unit rod: psi_1[phi] = exp(lam) phi", rel, 1e-4))
    reports.append(TestReport("runtime seconds", time.perf_counter() - t0, 10.0))
    assert _verdict(acceptance_log, 1, "eigen oracle", reports)


def test_c02_extinction_fixed_point(acceptance_log):
    t0 = time.perf_counter()
    w_gw3 = solve_w_spaceless(GW3_COUNTS)["w"]
    reports = [TestReport("GW3 spaceless w - 1/3", w_gw3 - 1 / 3, 1e-9, rule="abs_le")]
    reports += _run("rod1_extinction").reports
    short = rod_model(1.0)
    grid = Grid.for_model(short, 128)
    sf = solve_w(short, grid)
    chk = survival_checks(short, sf)
    reports.append(TestReport("unit rod: stationarity residual", stationary_residual(short, grid, sf.w), 1e-5))
    reports.append(TestReport("unit rod: w above no-collision exit probability",
                              chk["lower_bound_margin"], -1e-12, rule="ge"))
    reports.append(TestReport("unit rod: max w", float(sf.w.max()), 1.0))
    reports.append(TestReport("runtime seconds", time.perf_counter() - t0, 10.0))
    assert _verdict(acceptance_log, 2, "extinction fixed point", reports)


def test_c03_unit_mean_martingale(acceptance_log):
    t0 = time.perf_counter()
    cfg = _load("rod1_simulate")
    out = run_kind(cfg, threads=THREADS)
    reports = _named(out, "mean W")
    times = {float(r.name.split("t=")[1]) for r in reports}
    reports.append(TestReport("runtime seconds", time.perf_counter() - t0, 120.0))
    ok = cfg.replicates >= 10_000 and {0.5, 1.0, 2.0} <= times
    assert _verdict(acceptance_log, 3, "unit-mean martingale", reports, ok)


def test_c04_skeleton_algebra_exact(acceptance_log):
    third = Fraction(1, 3)
    w = lambda _: third  # noqa: E731
    down = down_table(gw3_table(), w, 0)
    up = up_table(gw3_table(), w, 0)
    law_down, law_up = down.law(), up.law()
    checks = {
        "down rate = 1": down.rate == 1,
        "down P(N=0) = 3/4": law_down.get((), 0) == Fraction(3, 4),
        "down P(N=2) = 1/4": law_down.get((0, 0), 0) == Fraction(1, 4),
        "updown rate = 1": up.rate == 1,
        "P(2 up) = 1/2": law_up.get(((0, UP), (0, UP)), 0) == Fraction(1, 2),
        "P(1 up, 1 down) = 1/2": law_up.get(((0, UP), (0, DOWN)), 0) == Fraction(1, 2),
    }
    # the grid-level builders give the same branch rates on the embedded GW3
    gw3 = gw3_model()
    sf = constant_survival(gw3, 1 / 3)
    r, j = np.array([5e5]), np.array([0])
    checks["build_down branch rate = 1"] = abs(build_down(gw3, sf).rates(r, j)[1][0] - 1) < 1e-12
    checks["build_up branch rate = 1"] = abs(build_up(gw3, sf).rates(r, j)[1][0] - 1) < 1e-12
    # subset identity on every law with N <= 6 and probabilities from a fixed lattice
    lattice = [Fraction(0), Fraction(1, 4), Fraction(1, 3), Fraction(1, 2), Fraction(1)]
    subset_ok = all(subset_sum(ps) == 1 for n in range(7) for ps in itertools.product(lattice, repeat=n))
    checks["subset identity, N <= 6"] = subset_ok
    # G_updown[f, 1] = G_up[f] for 100 random f on the rod branching table
    rod = rod_model()
    sf = solve_w(rod, Grid.for_model(rod, 128))
    wf = sf.w_field()
    rng = stream(20240917, 0, "acceptance/g-updown")
    worst = 0.0
    for _ in range(100):
        r = float(rng.uniform(0.0, 8.0))
        j = int(rng.integers(0, 2))
        W = [float(wf.at([r], [c])[0]) for c in range(2)]
        fv = rng.random(2)
        table = model_table(rod, 0, j)
        a = G_updown(table, lambda c: W[c], lambda c: fv[c], lambda c: 1.0, j)
        b = G_up(table, lambda c: W[c], lambda c: fv[c], j)
        worst = max(worst, abs(a - b))
    reports = [TestReport(name, float(ok), 1.0, rule="ge") for name, ok in checks.items()]
    reports.append(TestReport("max |G_updown[f,1] - G_up[f]|", worst, 1e-12))
    assert _verdict(acceptance_log, 4, "skeleton algebra (exact)", reports)


def test_c05_reconstruction_law(acceptance_log):
    t0 = time.perf_counter()
    cfgs = [_load("gw3_reconstruct"), _load("rod1_reconstruct")]
    reports = []
    for cfg in cfgs:
        reports += run_kind(cfg, threads=THREADS).reports
    reports.append(TestReport("runtime seconds", time.perf_counter() - t0, 300.0))
    ok = ([c.horizon for c in cfgs] == [2.0, 1.0] and all(c.replicates >= 10_000 for c in cfgs)
          and all(r.p_value is not None for r in reports[:2]))
    assert _verdict(acceptance_log, 5, "reconstruction law equality", reports, ok)


def test_c06_binpp_embedding(acceptance_log, rod_skeleton_outcome):
    reports = _named(rod_skeleton_outcome, "binpp slope")
    ok = len(reports) == 1 and reports[0].threshold == 0.02 and reports[0].sample_sizes[0] >= 10_000
    assert _verdict(acceptance_log, 6, "BinPP embedding", reports, ok)


def test_c07_skeleton_mean_identity(acceptance_log, rod_skeleton_outcome):
    rod_reports = _named(rod_skeleton_outcome, "skeleton mean count")
    gw3 = _run("gw3_skeleton")
    gw3_reports = _named(gw3, "skeleton mean count")
    oracles = gw3.results["oracle_up_mean"]
    ok = (len(rod_reports) == 2 and len(gw3_reports) == 2
          and np.allclose(oracles, [math.exp(0.5), math.exp(1.0)], rtol=1e-12))
    assert _verdict(acceptance_log, 7, "skeleton mean identity", rod_reports + gw3_reports, ok)


def test_c08_slln(acceptance_log):
    t0 = time.perf_counter()
    out = _run("rod1_slln")
    reports = list(out.reports)
    reports.append(TestReport("runtime seconds", time.perf_counter() - t0, 600.0))
    names = {r.name for r in reports}
    ok = {"growth factor at horizon", "slln ratio g=phi"} <= names
    assert _verdict(acceptance_log, 8, "law of large numbers at fixed horizon", reports, ok)


def test_c09_growth_rate(acceptance_log):
    reports = _named(_run("rod1_growth"), "growth rate CI") + _named(_run("gw3_growth"), "growth rate CI")
    ok = len(reports) == 2 and reports[1].target == 0.5
    assert _verdict(acceptance_log, 9, "growth rate", reports, ok)


def test_c10_strip(acceptance_log):
    out = _run("strip_bbm")
    reports = list(out.reports)
    reports.append(TestReport("strip lambda - 1/2", out.results["lam"] - 0.5, 1e-12, rule="abs_le"))
    assert _verdict(acceptance_log, 10, "branching Brownian motion on a strip", reports)


def _small(path, tmp_path, reps=100):
    raw = json.loads(path.read_text())
    if "replicates" in raw.get("run", {}):
        raw["run"]["replicates"] = str(min(int(raw["run"]["replicates"]), reps))
    if "fission_samples" in raw.get("run", {}):
        raw["run"]["fission_samples"] = "2000"
    p = tmp_path / path.name
    p.write_text(json.dumps(raw))
    return p


def test_c11_determinism(acceptance_log, tmp_path, capsys):
    reports = []
    for path in sorted(CONFIGS.glob("*.json")):
        small = _small(path, tmp_path)
        dirs = []
        for threads in (1, 3, 1):
            d = tmp_path / f"{path.stem}-{len(dirs)}"
            code = run_experiment(small, d, threads=threads)
            assert code in (0, 1)
            dirs.append(d)
        files = sorted(p.relative_to(dirs[0]) for p in (dirs[0] / "data").glob("*.csv"))
        same = bool(files) and all((d / f).read_bytes() == (dirs[0] / f).read_bytes() for d in dirs for f in files)
        reports.append(TestReport(f"byte-identical CSVs: {path.stem}", float(same), 1.0, rule="ge"))
    capsys.readouterr()  # drop the per-run report lines
    assert _verdict(acceptance_log, 11, "determinism across reruns and thread counts", reports)
