"""Pipelines behind each experiment kind.

Every pipeline returns an ``Outcome``: CSV tables, a JSON-ready results
dict and the list of asserted checks. Nothing here depends on the thread
count, so tables are byte-stable for a fixed config and seed.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from . import asymptotics as asy
from .bbm_strip import StripModel, lambda_strip, simulate_strip_many, solve_w_strip
from .config import ExperimentConfig
from .cross_sections import fission_mean_check, validate_hypotheses
from .engine import UP, ParticleSystem, simulate_many
from .rod import (CFLError, Grid, RodOperator, dense_eigen, down_growth_rate, phi_over_p_max,
                  power_iteration, richardson, rod_field, solve_w, solve_w_spaceless, step_psi,
                  survival_checks, two_stream_lambda)
from .skeleton import DressedDynamics, constant_survival, dressed_many, mark_binpp
from .stats import TestReport, mean_se, stream, two_sample_test

DENSE_LIMIT = 4096  # largest propagator handed to the dense eigensolver


@dataclass
class Outcome:
    tables: dict[str, tuple[list[str], list[list]]] = field(default_factory=dict)
    results: dict = field(default_factory=dict)
    reports: list[TestReport] = field(default_factory=list)
    hypotheses: dict | None = None

    @property
    def passed(self) -> bool:
        if self.hypotheses is not None and not self.hypotheses["structural_ok"]:
            return False
        return all(r.passed for r in self.reports)


def _flag(name: str, ok: bool, **details) -> TestReport:
    return TestReport(name, 1.0 if ok else 0.0, 1.0, rule="ge", details=details)


# ------------------------------------------------------------- shared pieces

def _grid(cfg: ExperimentConfig) -> Grid:
    return Grid.for_model(cfg.model, cfg.n_cells)


def _start(cfg: ExperimentConfig, eig=None):
    """Initial condition: a point, the domain midpoint, or phi~-distributed draws."""
    model = cfg.model
    if cfg.start is not None and "density" in cfg.start:
        if eig is None:
            raise ValueError("a phi~ start needs the eigen-triple")
        field_ = rod_field(eig.grid, eig.phi_tilde, "phi_tilde")
        varr = model.velocities.array

        def draw(rng):
            r, j = asy.sample_from_density(field_, rng, 1)
            return ParticleSystem(r[:, None], varr[j].copy(), j.astype(np.int64),
                                  np.zeros(1, np.int8), np.zeros(1, np.int64))
        return draw
    if cfg.start is not None:
        return ParticleSystem.single(model, cfg.start["r"], cfg.start["v"])
    dom = model.domain
    mid = [(dom.a + dom.b) / 2] if dom.dim == 1 else list(getattr(dom, "center", np.zeros(dom.dim)))
    v0 = model.velocities.array[0] if model.discrete else np.eye(dom.dim)[0] * model.velocities.v_max
    return ParticleSystem.single(model, mid, v0)


def _point(cfg, start):
    if not isinstance(start, ParticleSystem):
        raise ValueError("this kind needs a point start")
    return float(start.r[0, 0]), int(start.vidx[0])


def _survival(cfg: ExperimentConfig):
    """Grid survival field, or the constant field of the spaceless process."""
    if cfg.spaceless:
        sol = solve_w_spaceless(cfg.model.fission.count_probs[0, 0], float(cfg.model.sigma_f[0, 0]))
        return constant_survival(cfg.model, sol["w"]), None
    grid = _grid(cfg)
    return solve_w(cfg.model, grid, tol=cfg.grid_tol), grid


def _eigen(cfg: ExperimentConfig, grid: Grid):
    return power_iteration(cfg.model, grid, op=RodOperator(cfg.model, grid))


# ------------------------------------------------------------------ kinds

def run_validate(cfg: ExperimentConfig, threads: int = 1) -> Outcome:
    model = cfg.model
    hyp = validate_hypotheses(model)
    out = Outcome(hypotheses=hyp.to_dict())
    out.tables["hypotheses"] = (["hypothesis", "status", "witness"],
                                [[h, "deferred" if s is None else ("ok" if s else "fail"), hyp.witnesses.get(h, "")]
                                 for h, s in hyp.checks.items()])
    rows = []
    zones = model.zones
    probes = []
    if model.domain.dim == 1 and hasattr(zones, "edges"):
        lo, hi = model.domain.a, model.domain.b
        for z in range(zones.n_zones):
            a, b = max(zones.edges[z], lo), min(zones.edges[z + 1], hi)
            probes.append([(a + b) / 2])
    else:
        probes.append(list(getattr(model.domain, "center", np.zeros(model.domain.dim))))
    vels = model.velocities.array if model.discrete else [np.eye(model.domain.dim)[0] * model.velocities.v_max]
    if model.discrete:
        g = lambda kids: 1.0 + np.asarray(kids, dtype=float)  # noqa: E731
    else:
        g = lambda kv: np.linalg.norm(kv, axis=1)  # noqa: E731
    for zi, r in enumerate(probes):
        for j, v in enumerate(vels):
            rep = fission_mean_check(model, r, v, g, cfg.fission_samples, stream(cfg.seed, zi * len(vels) + j,
                                                                                  "validate/fission"))
            rep.name = f"fission mean zone={zi} v={j}"
            out.reports.append(rep)
            rows.append([zi, j, rep.value, rep.target, rep.details["se"]])
    out.tables["fission_means"] = (["zone", "velocity", "mc_mean", "declared_mean", "se"], rows)
    out.reports.insert(0, _flag("structural hypotheses", hyp.structural_ok))
    out.results["hypotheses_ok"] = hyp.structural_ok
    return out


def run_eigen(cfg: ExperimentConfig, threads: int = 1) -> Outcome:
    model = cfg.model
    grid = _grid(cfg)
    op = RodOperator(model, grid)
    eig = power_iteration(model, grid, op=op)
    out = Outcome()
    res = {"lam": eig.lam, "iterations": eig.iterations, "phi_tilde_mass": eig.mass, "dt": grid.dt,
           "n_cells": grid.n_cells}
    if grid.n_cells * grid.k <= DENSE_LIMIT:
        dense = dense_eigen(model, grid, op)
        res["lam_dense"] = dense["lam"]
        res["second"] = [dense["second"].real, dense["second"].imag]
        out.reports.append(TestReport("power vs dense eigenvalue", abs(eig.lam - dense["lam"]), 1e-6,
                                      rule="le", details={"lam": eig.lam, "lam_dense": dense["lam"]}))
    try:
        t = 1.0
        grid.steps_for(t)
    except CFLError:
        t = grid.dt * max(1, round(1.0 / grid.dt))
    psi = step_psi(model, grid, eig.phi, t, op)
    rel = float(np.abs(psi - math.exp(eig.lam * t) * eig.phi).max() / np.abs(psi).max())
    out.reports.append(TestReport(f"psi_t[phi] = exp(lam t) phi at t={t:g}", rel, 1e-4, rule="le"))
    if cfg.refine:
        fine = power_iteration(model, Grid.for_model(model, 2 * grid.n_cells))
        res["lam_fine"] = fine.lam
        res["lam_extrapolated"] = richardson(eig.lam, fine.lam, 2)
    try:
        res["lam_two_stream"] = two_stream_lambda(model)
    except ValueError:
        pass
    out.results = res
    rows = []
    for i, x in enumerate(grid.centers):
        for j in range(grid.k):
            rows.append([i, x, grid.speeds[j], eig.phi[i, j], eig.phi_tilde[i, j]])
    out.tables["eigen"] = (["cell", "r", "velocity", "phi", "phi_tilde"], rows)
    return out


def run_extinction(cfg: ExperimentConfig, threads: int = 1) -> Outcome:
    model = cfg.model
    grid = _grid(cfg)
    sf = solve_w(model, grid, tol=cfg.grid_tol)
    chk = survival_checks(model, sf)
    out = Outcome()
    out.reports += [
        TestReport("stationarity residual", sf.residual, 1e-5, rule="le"),
        _flag("w above no-collision exit probability", chk["lower_bound_ok"], margin=chk["lower_bound_margin"]),
        _flag("w below 1", chk["below_one_ok"]),
        _flag("survival probability positive", chk["p_min"] > 0, p_min=chk["p_min"]),
    ]
    res = {"iterations": sf.iterations, "residual": sf.residual, "w_min": float(sf.w.min()),
           "w_max": float(sf.w.max()), **chk, "subcritical": sf.subcritical}
    if not sf.subcritical and grid.n_cells * grid.k <= 1024:
        lam_down = down_growth_rate(model, sf)
        res["lam_down"] = lam_down
        out.reports.append(TestReport("doomed process subcritical", lam_down, 0.0, rule="le"))
        eig = _eigen(cfg, grid)
        res["lam"] = eig.lam
        res["phi_over_p_max"] = phi_over_p_max(eig, sf)
    out.results = res
    rows = [[i, x, grid.speeds[j], sf.w[i, j], sf.p[i, j]]
            for i, x in enumerate(grid.centers) for j in range(grid.k)]
    out.tables["survival"] = (["cell", "r", "velocity", "w", "p"], rows)
    return out


def run_simulate(cfg: ExperimentConfig, threads: int = 1) -> Outcome:
    model = cfg.model
    eig = _eigen(cfg, _grid(cfg)) if cfg.n_cells else None
    mu = _start(cfg, eig)
    trajs = simulate_many(mu, model, cfg.horizon, cfg.replicates, cfg.seed, checkpoints=cfg.checkpoints,
                          scheme=cfg.scheme, threads=threads, cap=cfg.cap, reduce=_light)
    times = np.asarray(cfg.checkpoints)
    counts = np.array([tr.counts() for tr in trajs])
    out = Outcome()
    res = {"mean_counts": counts.mean(axis=0), "times": times}
    header = ["replicate", "time", "count"]
    rows = []
    if eig is not None:
        ef = asy.EigenFields.from_triple(eig)
        track = asy.track_W(trajs, ef)
        out.reports += [r for r, t in zip(track.unit_mean_reports(), times) if t > 0]
        res["lam"] = eig.lam
        res["W_mean"] = track.mean
        header.append("W")
        for i in range(counts.shape[0]):
            for k, t in enumerate(times):
                rows.append([i, t, counts[i, k], track.values[i, k]])
        if cfg.start is not None and "density" in cfg.start:
            burn = cfg.burn_in if cfg.burn_in is not None else 0.0
            est = asy.estimate_lambda(counts, times, burn_in=burn, seed=cfg.seed)
            out.reports.append(est.report(eig.lam, "growth rate CI covers lam"))
            res["lam_estimate"] = [est.lam, est.lo, est.hi]
    else:
        rows = [[i, t, counts[i, k]] for i in range(counts.shape[0]) for k, t in enumerate(times)]
        if cfg.spaceless:
            # no boundary: the mean grows at sigma_f (m - 1) from any start
            growth = float(model.sigma_f[0, 0] * (model.fission.mean_count()[0, 0] - 1.0))
            est = asy.estimate_lambda(counts, times, burn_in=cfg.burn_in or 0.0, seed=cfg.seed)
            out.reports.append(est.report(growth, "growth rate CI covers lam"))
            res["lam"] = growth
            res["lam_estimate"] = [est.lam, est.lo, est.hi]
    out.results = res
    out.tables["counts"] = (header, rows)
    return out


def _light(tr):
    """Drop event logs but keep snapshots."""
    tr.events = None
    return tr


def run_skeleton(cfg: ExperimentConfig, threads: int = 1) -> Outcome:
    model = cfg.model
    sf, grid = _survival(cfg)
    dyn = DressedDynamics(model, sf)
    mu = _start(cfg)
    x, j = _point(cfg, mu)
    times = np.asarray(cfg.checkpoints)

    def up_down(tr):
        return [[int(np.sum(s.mark == UP)), int(np.sum(s.mark != UP))] for s in tr.snapshots]

    ud = np.array(dressed_many(mu, dyn, cfg.horizon, cfg.replicates, cfg.seed, checkpoints=times,
                               threads=threads, reduce=up_down, cap=cfg.cap))
    out = Outcome()
    op = RodOperator(model, grid) if grid is not None else None
    growth = float(model.sigma_f[0, 0] * (model.fission.mean_count()[0, 0] - 1.0))
    res = {"times": times, "mean_up": ud[:, :, 0].mean(axis=0), "mean_down": ud[:, :, 1].mean(axis=0)}
    oracles = []
    for k, t in enumerate(times):
        if t == 0:
            continue
        if op is None:
            orc = math.exp(growth * t)
        else:
            orc = asy.oracle_up_mean(model, sf, np.ones_like(sf.w), t, x, j, op)
        oracles.append(orc)
        out.reports.append(asy.skeleton_identity_check(ud[:, k, 0], orc, f"skeleton mean count at t={t:g}"))
    out.reports.append(TestReport("prolific count never zero", float(ud[:, :, 0].min()), 1.0, rule="ge"))
    res["oracle_up_mean"] = oracles

    pf = sf.p_field()

    def pmass(tr):
        s = tr.snapshots[-1]
        return float(np.sum(pf(s))) if s.count else 0.0, s

    plain = simulate_many(mu, model, cfg.horizon, cfg.replicates, cfg.seed, checkpoints=[cfg.horizon],
                          threads=threads, cap=cfg.cap, tag="skeleton/plain", reduce=pmass)
    pm = np.array([p for p, _ in plain])
    marked = np.array([mark_binpp(s, pf, stream(cfg.seed, i, "skeleton/binpp")).count
                       for i, (_, s) in enumerate(plain)])
    rep = asy.binpp_regression(pm, marked)
    out.reports.append(rep)
    res["binpp_slope"] = rep.value
    out.results = res
    rows = [[i, t, ud[i, k, 0], ud[i, k, 1]] for i in range(ud.shape[0]) for k, t in enumerate(times)]
    out.tables["skeleton_counts"] = (["replicate", "time", "up", "down"], rows)
    out.tables["binpp"] = (["replicate", "p_mass", "marked"],
                           [[i, pm[i], marked[i]] for i in range(pm.size)])
    return out


def run_reconstruct(cfg: ExperimentConfig, threads: int = 1) -> Outcome:
    model = cfg.model
    sf, _ = _survival(cfg)
    dyn = DressedDynamics(model, sf)
    mu = _start(cfg)
    last = lambda tr: int(tr.snapshots[-1].count)  # noqa: E731
    mix = np.array(dressed_many(mu, dyn, cfg.horizon, cfg.replicates, cfg.seed, checkpoints=[cfg.horizon],
                                threads=threads, mode="mixture", reduce=last, cap=cfg.cap))
    direct = np.array(simulate_many(mu, model, cfg.horizon, cfg.replicates, cfg.seed,
                                    checkpoints=[cfg.horizon], threads=threads, cap=cfg.cap, reduce=last))
    rep = two_sample_test(mix, direct, name=f"mixture vs direct N at t={cfg.horizon:g}", seed=cfg.seed)
    out = Outcome(reports=[rep])
    out.results = {"mean_mixture": mean_se(mix), "mean_direct": mean_se(direct), "p_value": rep.p_value}
    out.tables["reconstruct"] = (["replicate", "mixture", "direct"],
                                 [[i, mix[i], direct[i]] for i in range(mix.size)])
    return out


def run_slln(cfg: ExperimentConfig, threads: int = 1) -> Outcome:
    model = cfg.model
    grid = _grid(cfg)
    eig = _eigen(cfg, grid)
    ef = asy.EigenFields.from_triple(eig)
    mid = (model.domain.a + model.domain.b) / 2
    left = np.where(grid.centers[:, None] < mid, 1.0, 0.0)
    target = eig.pair(eig.phi * left, eig.phi_tilde)

    def g_left(s):
        return ef.phi(s) * (s.r[:, 0] < mid)

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        jump = asy.check_directional_continuity(g_left, model, stream(cfg.seed, 0, "slln/continuity"), warn=False)
    mu = _start(cfg, eig)
    trajs = simulate_many(mu, model, cfg.horizon, cfg.replicates, cfg.seed, checkpoints=[cfg.horizon],
                          threads=threads, cap=cfg.cap, reduce=_light)
    rep_left = asy.slln_ratio(trajs, g_left, ef, target, name="slln ratio g=phi on left half")
    rep_phi = asy.slln_ratio(trajs, ef.phi, ef, 1.0, name="slln ratio g=phi")
    out = Outcome()
    out.reports += [
        TestReport("growth factor at horizon", math.exp(eig.lam * cfg.horizon), 1e3, rule="ge"),
        rep_left.to_report(),
        TestReport("slln ratio g=phi", float(np.abs(rep_phi.ratios - 1.0).max()) if rep_phi.ratios.size
                   else float("inf"), 1e-12, rule="le"),
    ]
    out.results = {"lam": eig.lam, "target": target, "mean_ratio": rep_left.mean_ratio,
                   "survivors": int(rep_left.ratios.size), "discontinuity_fraction": jump}
    rows = []
    for i, tr in enumerate(trajs):
        s = tr.snapshots[-1]
        if s.count:
            ph = float(np.sum(ef.phi(s)))
            gl = float(np.sum(g_left(s)))
            rows.append([i, s.count, gl, ph, gl / ph])
        else:
            rows.append([i, 0, 0.0, 0.0, ""])
    out.tables["slln"] = (["replicate", "count", "g_mass", "phi_mass", "ratio"], rows)
    return out


def _minimal_root(probs) -> float:
    c = np.asarray(probs, dtype=float)
    f = lambda s: np.polynomial.polynomial.polyval(s, c) - s  # noqa: E731
    grid = np.linspace(0.0, 1.0, 2001)
    vals = f(grid)
    for i in range(grid.size - 1):
        if vals[i] == 0:
            return float(grid[i])
        if vals[i] * vals[i + 1] < 0:
            return float(brentq(f, grid[i], grid[i + 1], xtol=1e-15))
    return 1.0


def run_bbm(cfg: ExperimentConfig, threads: int = 1) -> Outcome:
    s = cfg.strip
    model = StripModel(s["K"], s["mu"], s["rate"], s["probs"])
    lam = lambda_strip(model)
    out = Outcome()
    out.reports.append(TestReport("strip eigenvalue vs finite differences", lam["difference"], 1e-6, rule="le"))
    times = np.asarray(cfg.checkpoints)
    counts = simulate_strip_many(model, cfg.horizon, cfg.replicates, cfg.seed, checkpoints=times,
                                 threads=threads)
    burn = cfg.burn_in if cfg.burn_in is not None else 0.0
    est = asy.estimate_lambda(counts, times, burn_in=burn, seed=cfg.seed)
    out.reports.append(est.report(lam["lam"], "strip growth CI covers lam"))
    res = {**lam, "lam_estimate": [est.lam, est.lo, est.hi], "times": times,
           "mean_counts": counts.mean(axis=0)}
    if s["plateau_K"] is not None:
        wide = StripModel(s["plateau_K"], s["mu"], s["rate"], s["plateau_probs"])
        sol = solve_w_strip(wide)
        mid = float(np.interp(wide.K / 2, sol.x, sol.w))
        root = _minimal_root(s["plateau_probs"])
        out.reports.append(TestReport("strip extinction plateau", mid, 1e-4, rule="within", target=root))
        res["plateau"] = mid
        res["spaceless_w"] = root
        out.tables["strip_w"] = (["x", "w"], [[x, w] for x, w in zip(sol.x, sol.w)])
    out.results = res
    out.tables["strip_counts"] = (["replicate", "time", "count"],
                                  [[i, t, counts[i, k]] for i in range(counts.shape[0])
                                   for k, t in enumerate(times)])
    return out


PIPELINES = {
    "validate": run_validate,
    "eigen": run_eigen,
    "extinction": run_extinction,
    "simulate": run_simulate,
    "skeleton": run_skeleton,
    "reconstruct": run_reconstruct,
    "slln": run_slln,
    "bbm": run_bbm,
}


def run_kind(cfg: ExperimentConfig, threads: int = 1) -> Outcome:
    return PIPELINES[cfg.kind](cfg, threads)
