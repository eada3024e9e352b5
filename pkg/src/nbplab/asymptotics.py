"""Additive martingales, law-of-large-numbers ratios, growth-rate estimation
and the skeleton mean identities, computed from trajectory archives."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .engine import UP, ParticleSystem, Trajectory
from .rod import EigenTriple, GridField, RodOperator, SurvivalField, rod_field
from .stats import THREE_SIGMA_LEVEL, TestReport, mean_se, stream

Functional = Callable[[ParticleSystem], np.ndarray]


@dataclass
class EigenFields:
    """Growth rate with callables for phi (and optionally phi~) on particles."""

    lam: float
    phi: Functional
    phi_tilde: Functional | None = None

    @classmethod
    def from_triple(cls, eig: EigenTriple) -> "EigenFields":
        return cls(eig.lam, rod_field(eig.grid, eig.phi, "phi"), rod_field(eig.grid, eig.phi_tilde, "phi_tilde"))

    @classmethod
    def constant(cls, lam: float) -> "EigenFields":
        return cls(lam, lambda s: np.ones(s.count), lambda s: np.ones(s.count))


@dataclass
class MartingaleTrack:
    times: np.ndarray
    values: np.ndarray  # (replicates, times)
    variant: str = "plain"

    @property
    def mean(self) -> np.ndarray:
        return self.values.mean(axis=0)

    @property
    def se(self) -> np.ndarray:
        return self.values.std(axis=0, ddof=1) / np.sqrt(self.values.shape[0])

    @property
    def terminal(self) -> np.ndarray:
        return self.values[:, -1]

    def unit_mean_reports(self, n_se: float = 3.0) -> list[TestReport]:
        out = []
        for t, m, s in zip(self.times, self.mean, self.se):
            out.append(TestReport(f"mean W at t={t:g}", float(m), max(n_se * float(s), 1e-15), rule="within",
                                  target=1.0, sample_sizes=(self.values.shape[0],), details={"se": float(s)}))
        return out


def track_W(trajectories: Sequence[Trajectory], eigen: EigenFields, variant: str = "plain",
            p: Functional | None = None) -> MartingaleTrack:
    """Per-replicate W_t = e^{-lam t} <phi, X_t> / <phi, X_0>.

    The skeleton variant uses phi/p on prolific particles only. Each
    trajectory must carry a checkpoint at time 0.
    """
    if variant not in ("plain", "skeleton"):
        raise ValueError(f"unknown variant {variant!r}")
    if variant == "skeleton" and p is None:
        raise ValueError("skeleton variant needs p")
    times = np.asarray(trajectories[0].checkpoints, dtype=float)
    if times[0] != 0.0:
        raise ValueError("trajectories need a checkpoint at t=0")
    vals = np.empty((len(trajectories), times.size))
    for i, tr in enumerate(trajectories):
        for k, snap in enumerate(tr.snapshots):
            vals[i, k] = _phi_mass(snap, eigen, variant, p)
    vals = vals / vals[:, :1] * np.exp(-eigen.lam * times)[None, :]
    vals[:, 0] = 1.0
    return MartingaleTrack(times, vals, variant)


def _phi_mass(snap: ParticleSystem, eigen: EigenFields, variant: str, p) -> float:
    if variant == "skeleton":
        snap = snap.subset(snap.mark == UP)
    if snap.count == 0:
        return 0.0
    f = np.asarray(eigen.phi(snap), dtype=float)
    if variant == "skeleton":
        f = f / np.asarray(p(snap), dtype=float)
    return float(f.sum())


def martingale_regression(track: MartingaleTrack, i: int, j: int) -> TestReport:
    """OLS slope of W_{t_j} on W_{t_i} across replicates; should be 1."""
    x = track.values[:, i]
    y = track.values[:, j]
    xc = x - x.mean()
    sxx = float(xc @ xc)
    slope = float(xc @ (y - y.mean())) / sxx
    resid = y - y.mean() - slope * xc
    se = float(np.sqrt(resid @ resid / (x.size - 2) / sxx))
    return TestReport(f"martingale regression {track.times[i]:g}->{track.times[j]:g}", slope, 3 * se,
                      rule="within", target=1.0, sample_sizes=(x.size,), details={"se": se})


@dataclass
class SLLNReport:
    name: str
    times: np.ndarray
    ratios: np.ndarray  # per surviving replicate, at the final checkpoint
    target: float
    band: float = 0.05
    status: str = "ok"
    n_replicates: int = 0
    details: dict = field(default_factory=dict)

    @property
    def mean_ratio(self) -> float:
        return float(self.ratios.mean()) if self.ratios.size else float("nan")

    @property
    def relative_error(self) -> float:
        return abs(self.mean_ratio - self.target) / abs(self.target)

    @property
    def passed(self) -> bool:
        return self.status == "ok" and self.relative_error <= self.band

    def to_report(self) -> TestReport:
        return TestReport(self.name, self.relative_error if self.status == "ok" else float("inf"), self.band,
                          rule="le", target=None, sample_sizes=(int(self.ratios.size), self.n_replicates),
                          details={"mean_ratio": self.mean_ratio, "target": self.target,
                                   "status": self.status, **self.details})


def slln_ratio(trajectories: Sequence[Trajectory], g: Functional, eigen: EigenFields, target: float,
               *, variant: str = "plain", p: Functional | None = None, band: float = 0.05,
               name: str = "slln ratio") -> SLLNReport:
    """Ratio <g, X_T>/<phi, X_T> on replicates alive at the final checkpoint.

    For the skeleton variant both pairings use prolific particles and the
    denominator is phi/p.
    """
    ratios = []
    for tr in trajectories:
        snap = tr.snapshots[-1]
        if variant == "skeleton":
            snap = snap.subset(snap.mark == UP)
        if snap.count == 0:
            continue
        den = np.asarray(eigen.phi(snap), dtype=float)
        if variant == "skeleton":
            den = den / np.asarray(p(snap), dtype=float)
        ratios.append(float(np.sum(g(snap)) / den.sum()))
    times = np.asarray(trajectories[0].checkpoints)
    status = "ok" if ratios else "extinct"
    r = np.asarray(ratios)
    details = {"se": float(r.std(ddof=1) / np.sqrt(r.size)) if r.size > 1 else float("nan"),
               "survivors": int(r.size)}
    return SLLNReport(name, times, r, float(target), band, status, len(trajectories), details)


def check_g_dominated(g_grid: np.ndarray, bound_grid: np.ndarray, c: float | None = None) -> float:
    """Smallest c with 0 <= g <= c * bound on the grid; raises if g < 0."""
    if np.any(g_grid < 0):
        raise ValueError("test function must be non-negative")
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(g_grid > 0, g_grid / bound_grid, 0.0)
    cmax = float(np.nanmax(ratio))
    if not np.isfinite(cmax) or (c is not None and cmax > c):
        raise ValueError("test function is not dominated by the eigenfunction")
    return cmax


# --------------------------------------------------------------- growth rate

@dataclass
class GrowthEstimate:
    lam: float
    lo: float
    hi: float
    times: np.ndarray
    mean_counts: np.ndarray
    level: float

    def covers(self, x: float) -> bool:
        return self.lo <= x <= self.hi

    def report(self, target: float, name: str = "growth rate") -> TestReport:
        half = (self.hi - self.lo) / 2
        mid = (self.hi + self.lo) / 2
        return TestReport(name, mid, half, rule="within", target=target,
                          details={"estimate": self.lam, "ci": [self.lo, self.hi], "level": self.level})


def _slopes(times: np.ndarray, means: np.ndarray) -> np.ndarray:
    """Least-squares slope of log(means) on times along the last axis."""
    tc = times - times.mean()
    y = np.log(means)
    return (y - y.mean(axis=-1, keepdims=True)) @ tc / (tc @ tc)


def estimate_lambda(counts: np.ndarray | Sequence[Trajectory], times: np.ndarray | None = None, *,
                    burn_in: float = 0.0, level: float = THREE_SIGMA_LEVEL, n_boot: int = 2000,
                    seed: int = 0) -> GrowthEstimate:
    """Slope of log E<1, X_t> over checkpoints past ``burn_in`` with a
    percentile bootstrap CI over replicates."""
    if times is None:
        trajs = list(counts)
        times = np.asarray(trajs[0].checkpoints, dtype=float)
        counts = np.array([tr.counts() for tr in trajs], dtype=float)
    counts = np.asarray(counts, dtype=float)
    times = np.asarray(times, dtype=float)
    sel = times >= burn_in
    t, c = times[sel], counts[:, sel]
    means = c.mean(axis=0)
    if t.size < 2 or np.any(means <= 0):
        raise ValueError("need at least two checkpoints with surviving mass past burn-in")
    lam = float(_slopes(t, means))
    rng = stream(seed, 0, "bootstrap")
    n = c.shape[0]
    boots = []
    for start in range(0, n_boot, 200):
        m = min(200, n_boot - start)
        wts = rng.multinomial(n, np.full(n, 1.0 / n), size=m)
        bm = wts @ c / n
        ok = np.all(bm > 0, axis=1)
        boots.append(_slopes(t, bm[ok]))
    boots = np.concatenate(boots)
    q = (1 - level) / 2
    lo, hi = np.quantile(boots, [q, 1 - q])
    return GrowthEstimate(lam, float(lo), float(hi), t, means, level)


# ---------------------------------------------------------- skeleton checks

def oracle_up_mean(model, sf: SurvivalField, g_grid: np.ndarray, t: float, x: float, j: int,
                   op: RodOperator | None = None) -> float:
    """psi_t[g p](x) / p(x) on the grid."""
    op = op or RodOperator(model, sf.grid)
    val = op.apply(g_grid * sf.p, t)
    f = GridField(sf.grid, val, outgoing=0.0, clip=(0.0, np.inf))
    return float(f.at([x], [j])[0] / sf.p_field().at([x], [j])[0])


def skeleton_identity_check(up_values: np.ndarray, oracle: float, name: str = "skeleton mean") -> TestReport:
    """MC mean of <g, X^up_t> against the grid oracle, 3-s.e. band."""
    m, se = mean_se(up_values)
    return TestReport(name, m, 3 * se, rule="within", target=oracle, sample_sizes=(len(up_values),),
                      details={"se": se})


def binpp_regression(full_pmass: np.ndarray, marked_counts: np.ndarray, tol: float = 0.02) -> TestReport:
    """OLS slope of marked counts on <p, X_t>; conditional mean gives slope 1."""
    x = np.asarray(full_pmass, dtype=float)
    y = np.asarray(marked_counts, dtype=float)
    xc = x - x.mean()
    sxx = float(xc @ xc)
    slope = float(xc @ (y - y.mean())) / sxx
    resid = y - y.mean() - slope * xc
    se = float(np.sqrt(resid @ resid / (x.size - 2) / sxx))
    return TestReport("binpp slope", slope, tol, rule="within", target=1.0, sample_sizes=(x.size,),
                      details={"se": se, "intercept": float(y.mean() - slope * x.mean())})


def sup_second_moment(track: MartingaleTrack) -> np.ndarray:
    """E[(sup_{s<=t} W_s)^2] at each checkpoint (running sup over checkpoints)."""
    run_sup = np.maximum.accumulate(track.values, axis=1)
    return (run_sup**2).mean(axis=0)


def check_directional_continuity(g: Functional, model, rng: np.random.Generator, *, n: int = 2000,
                                 eps: float = 1e-7, tol: float = 1e-3, warn: bool = True) -> float:
    """Fraction of sampled flight segments along which g jumps within ``eps``.

    Continuity along r + v s is required of test functions by the
    law-of-large-numbers results; violations trigger a warning.
    """
    dom = model.domain
    if not model.discrete or dom.dim != 1:
        raise ValueError("directional check implemented for rods")
    k = model.velocities.k
    x = dom.a + (dom.b - dom.a) * rng.random(n)
    j = rng.integers(0, k, n)
    v = model.velocities.array[j]
    kappa = dom.exit_times(x[:, None], v)
    s = np.minimum(eps, kappa / 2)
    a = ParticleSystem(x[:, None], v, j, np.zeros(n, np.int8), np.arange(n))
    b = ParticleSystem(x[:, None] + v * s[:, None], v, j, np.zeros(n, np.int8), np.arange(n))
    jumps = np.abs(np.asarray(g(b), dtype=float) - np.asarray(g(a), dtype=float)) > tol
    frac = float(jumps.mean())
    if warn and frac > 0:
        warnings.warn(f"test function is not directionally continuous on {frac:.2%} of sampled flights",
                      stacklevel=2)
    return frac


def sample_from_density(field: GridField, rng: np.random.Generator, n: int,
                        weight: GridField | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Draw (position, velocity index) from the piecewise-linear interpolant of
    ``field`` node values (times ``weight`` node values when given), choosing a
    segment by its trapezoid mass and then the position by rejection."""
    x = field.nodes
    vals = field.node_values.copy()
    if weight is not None:
        vals = vals * weight.node_values
    vals = np.maximum(vals, 0.0)
    seg_mass = (vals[:, :-1] + vals[:, 1:]) / 2 * np.diff(x)[None, :]  # (k, n+1) trapezoids
    flat = seg_mass.ravel() / seg_mass.sum()
    cum = np.cumsum(flat)
    out_r = np.empty(n)
    out_j = np.empty(n, dtype=np.int64)
    pending = np.arange(n)
    while pending.size:
        pick = np.minimum(np.searchsorted(cum, rng.random(pending.size), side="right"), flat.size - 1)
        j, i = np.divmod(pick, seg_mass.shape[1])
        t = rng.random(pending.size)
        y0, y1 = vals[j, i], vals[j, i + 1]
        dens = (1 - t) * y0 + t * y1
        acc = rng.random(pending.size) * np.maximum(y0, y1) < dens
        r = x[i] + t * (x[i + 1] - x[i])
        out_r[pending[acc]] = r[acc]
        out_j[pending[acc]] = j[acc]
        pending = pending[~acc]
    return out_r, out_j
