"""Event-driven simulation of branching particle systems with straight flights.

Each particle flies linearly until the next candidate event proposed by its
dynamics (exact thinning against a rate bound that holds for the proposed
segment), the domain boundary, or the horizon. Rejected candidates and
segment ends are null moves. Replicates are independent and each draws from
its own counter-based stream.
"""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .cross_sections import CrossSectionModel
from .phase_space import PhasePoint
from .stats import mean_se, stream

UNMARKED, UP, DOWN = 0, 1, 2
MARK_NAMES = {UNMARKED: "unmarked", UP: "up", DOWN: "down"}

SCATTER, FISSION, EXIT, CAPTURE, HORIZON = range(5)
EVENT_NAMES = ("scatter", "fission", "boundary-exit", "capture", "horizon")


class PopulationCapExceeded(RuntimeError):
    """Raised instead of silently truncating a run; carries the partial trajectory."""

    def __init__(self, msg: str, partial: "Trajectory"):
        super().__init__(msg)
        self.partial = partial


@dataclass
class ParticleSystem:
    """Atomic measure sum of delta_(r_i, v_i) with marks and lineage ids."""

    r: np.ndarray
    v: np.ndarray
    vidx: np.ndarray
    mark: np.ndarray
    lineage: np.ndarray
    time: float = 0.0

    @property
    def count(self) -> int:
        return int(self.r.shape[0])

    def __len__(self):
        return self.count

    @classmethod
    def empty(cls, dim: int, time: float = 0.0) -> "ParticleSystem":
        return cls(np.zeros((0, dim)), np.zeros((0, dim)), np.zeros(0, np.int64),
                   np.zeros(0, np.int8), np.zeros(0, np.int64), time)

    @classmethod
    def from_points(cls, points: Sequence[PhasePoint], model: CrossSectionModel,
                    marks: Sequence[int] | None = None) -> "ParticleSystem":
        pts = [p for p in points if p.alive]
        dim = model.domain.dim
        if not pts:
            return cls.empty(dim)
        r = np.array([p.r for p in pts], dtype=float).reshape(len(pts), dim)
        v = np.array([p.v for p in pts], dtype=float).reshape(len(pts), dim)
        if model.discrete:
            vidx = np.array([model.velocities.index_of(x) for x in v], dtype=np.int64)
        else:
            vidx = np.full(len(pts), -1, dtype=np.int64)
        mk = np.zeros(len(pts), np.int8) if marks is None else np.asarray(marks, np.int8)
        return cls(r, v, vidx, mk, np.arange(len(pts), dtype=np.int64))

    @classmethod
    def single(cls, model: CrossSectionModel, r, v, mark: int = UNMARKED) -> "ParticleSystem":
        return cls.from_points([PhasePoint.of(r, v)], model, [mark])

    def subset(self, mask) -> "ParticleSystem":
        return ParticleSystem(self.r[mask], self.v[mask], self.vidx[mask], self.mark[mask],
                              self.lineage[mask], self.time)

    def points(self) -> list[PhasePoint]:
        return [PhasePoint(tuple(r), tuple(v)) for r, v in zip(self.r.tolist(), self.v.tolist())]

    @staticmethod
    def concat(parts: Sequence["ParticleSystem"], time: float) -> "ParticleSystem":
        parts = list(parts)
        return ParticleSystem(np.concatenate([p.r for p in parts]), np.concatenate([p.v for p in parts]),
                              np.concatenate([p.vidx for p in parts]), np.concatenate([p.mark for p in parts]),
                              np.concatenate([p.lineage for p in parts]), time)


@dataclass
class EventLog:
    """Time-ordered event records."""

    time: np.ndarray
    lineage: np.ndarray
    kind: np.ndarray
    r: np.ndarray
    v: np.ndarray
    offspring: list[list[int]]

    def __len__(self):
        return int(self.time.size)

    def records(self):
        for i in range(len(self)):
            yield {"time": float(self.time[i]), "lineage": int(self.lineage[i]),
                   "event": EVENT_NAMES[int(self.kind[i])], "r": self.r[i].tolist(),
                   "v": self.v[i].tolist(), "offspring": self.offspring[i]}

    def to_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            for rec in self.records():
                fh.write(json.dumps(rec) + "\n")

    def same_as(self, other: "EventLog") -> bool:
        return (np.array_equal(self.time, other.time) and np.array_equal(self.lineage, other.lineage)
                and np.array_equal(self.kind, other.kind) and np.array_equal(self.r, other.r)
                and np.array_equal(self.v, other.v) and self.offspring == other.offspring)


@dataclass
class SimConfig:
    horizon: float
    cap: int = 1_000_000
    seed: int = 0
    replicate: int = 0
    sigma_bar: float | None = None
    scheme: str = "collision"  # or "fission": separate scatter and fission clocks
    record_events: bool = False

    def __post_init__(self):
        if not self.horizon >= 0:
            raise ValueError("horizon must be non-negative")
        if self.cap <= 0:
            raise ValueError("population cap must be positive")
        if self.sigma_bar is not None and not np.isfinite(self.sigma_bar):
            raise ValueError("thinning bound must be finite")
        if self.scheme not in ("collision", "fission"):
            raise ValueError(f"unknown scheme {self.scheme!r}")


@dataclass
class Trajectory:
    checkpoints: np.ndarray
    snapshots: list[ParticleSystem]
    events: EventLog | None = None
    replicate: int = 0
    seed: int = 0
    info: dict = field(default_factory=dict)

    def counts(self) -> np.ndarray:
        return np.array([s.count for s in self.snapshots])

    def at(self, t: float) -> ParticleSystem:
        i = int(np.argmin(np.abs(self.checkpoints - t)))
        if abs(self.checkpoints[i] - t) > 1e-12:
            raise KeyError(f"no checkpoint at t={t}")
        return self.snapshots[i]


@dataclass
class Offspring:
    """Outcome of resolving a batch of candidate events.

    Indices refer to positions in the candidate batch.
    """

    accepted: np.ndarray          # bool per candidate
    kind: np.ndarray              # per accepted candidate (in candidate order)
    child_parent: np.ndarray      # candidate index per child
    child_v: np.ndarray
    child_vidx: np.ndarray
    child_mark: np.ndarray
    child_keeps_lineage: np.ndarray


class NBPDynamics:
    """Scatter/fission dynamics of the plain process.

    ``scheme="collision"`` proposes events from one clock at the total-rate
    bound and classifies accepted collisions; ``scheme="fission"`` runs
    independent scatter and fission clocks (the walk driven by scattering,
    interrupted by fission).
    """

    def __init__(self, model: CrossSectionModel, scheme: str = "collision", sigma_bar: float | None = None):
        self.model = model
        self.domain = model.domain
        self.scheme = scheme
        sb = model.sigma_bar if sigma_bar is None else float(sigma_bar)
        if sb < model.sigma_bar - 1e-12:
            raise ValueError("thinning bound below the supremum of the total rate")
        self.sigma_bar = sb
        self.bar_s = model.sigma_bar_s
        self.bar_f = model.sigma_bar_f
        self._varr = model.velocities.array if model.discrete else None

    def propose(self, rng, r, v, vidx, mark):
        n = r.shape[0]
        if self.scheme == "collision":
            dt = rng.exponential(size=n) / self.sigma_bar if self.sigma_bar > 0 else np.full(n, np.inf)
            return dt, np.full(n, np.inf), None
        with np.errstate(divide="ignore"):
            ds = rng.exponential(size=n) / self.bar_s
            df = rng.exponential(size=n) / self.bar_f
        return np.minimum(ds, df), np.full(n, np.inf), df < ds

    def resolve(self, rng, r, v, vidx, mark, info) -> Offspring:
        m = self.model
        n = r.shape[0]
        ss, sf = m.rates(r, v, vidx)
        u = rng.random(n)
        if info is None:
            x = u * self.sigma_bar
            scat = x < ss
            fis = ~scat & (x < ss + sf)
        else:
            fis = info & (u * self.bar_f < sf)
            scat = ~info & (u * self.bar_s < ss)
        accepted = scat | fis
        return self._branch(rng, r, v, vidx, mark, accepted, scat, fis)

    def _branch(self, rng, r, v, vidx, mark, accepted, scat, fis) -> Offspring:
        m = self.model
        zone = m.zone_of(r)
        si = np.nonzero(scat)[0]
        fi = np.nonzero(fis)[0]
        if m.discrete:
            new_j = m.scatter.sample(rng, zone[si], vidx[si])
            sv = self._varr[new_j]
        else:
            new_j = np.full(si.size, -1, np.int64)
            sv = m.velocities.sample_uniform(rng, si.size)
        counts, kv_idx, kv = m.fission.sample(rng, zone[fi], m.group_of(v[fi], vidx[fi]))
        fparent = np.repeat(fi, counts)
        if m.discrete:
            fvel = self._varr[kv_idx] if kv_idx.size else np.zeros((0, v.shape[1]))
            fidx = kv_idx.astype(np.int64)
        else:
            fvel = kv
            fidx = np.full(fparent.size, -1, np.int64)
        kind = np.where(scat, SCATTER, np.where(fis, FISSION, -1))
        fk = np.zeros(r.shape[0], dtype=np.int64)
        fk[fi] = counts
        kind = np.where(fis & (fk == 0), CAPTURE, kind)
        return Offspring(accepted, kind[accepted],
                         np.concatenate([si, fparent]),
                         np.concatenate([sv, fvel]) if (si.size + fparent.size) else np.zeros((0, v.shape[1])),
                         np.concatenate([new_j, fidx]),
                         np.concatenate([mark[si], mark[fparent]]),
                         np.concatenate([np.ones(si.size, bool), np.zeros(fparent.size, bool)]))


def _empty_log(dim):
    return EventLog(np.zeros(0), np.zeros(0, np.int64), np.zeros(0, np.int8),
                    np.zeros((0, dim)), np.zeros((0, dim)), [])


def run(mu: ParticleSystem, dynamics, horizon: float, rng: np.random.Generator, *,
        checkpoints: Sequence[float] | None = None, cap: int = 1_000_000,
        record_events: bool = False) -> Trajectory:
    """Simulate from ``mu`` to ``horizon`` under ``dynamics``."""
    domain = dynamics.domain
    T = float(horizon)
    cps = np.unique(np.asarray([T] if checkpoints is None else list(checkpoints), dtype=float))
    if cps.size and (cps.min() < 0 or cps.max() > T + 1e-12):
        raise ValueError("checkpoints must lie in [0, horizon]")
    dim = mu.r.shape[1]
    r = mu.r.astype(float).copy()
    v = mu.v.astype(float).copy()
    vidx = mu.vidx.astype(np.int64).copy()
    mark = mu.mark.astype(np.int8).copy()
    lin = mu.lineage.astype(np.int64).copy()
    t = np.full(r.shape[0], float(mu.time))
    next_id = int(lin.max()) + 1 if lin.size else 0
    snaps: list[list[tuple]] = [[] for _ in cps]
    log_parts: list[tuple] = []
    offspring_lists: list[list[int]] = []

    def emit(times, lineage, kinds, rr, vv, offs):
        log_parts.append((times, lineage, kinds.astype(np.int8), rr, vv))
        offspring_lists.extend(offs)

    def build_traj() -> Trajectory:
        snapshots = []
        for ci, c in enumerate(cps):
            parts = snaps[ci]
            if parts:
                rr, vv, ii, mm, ll = (np.concatenate(x) for x in zip(*parts))
                order = np.argsort(ll, kind="stable")
                snapshots.append(ParticleSystem(rr[order], vv[order], ii[order], mm[order], ll[order], float(c)))
            else:
                snapshots.append(ParticleSystem.empty(dim, float(c)))
        log = None
        if record_events:
            if log_parts:
                tt, ll, kk, rr, vv = (np.concatenate(x) for x in zip(*log_parts))
                order = np.argsort(tt, kind="stable")
                log = EventLog(tt[order], ll[order], kk[order], rr[order], vv[order],
                               [offspring_lists[i] for i in order])
            else:
                log = _empty_log(dim)
        return Trajectory(cps, snapshots, log)

    while r.shape[0]:
        n = r.shape[0]
        dt, seg, info = dynamics.propose(rng, r, v, vidx, mark)
        kappa = domain.exit_times(r, v)
        remaining = T - t
        step = np.minimum(dt, seg)
        exit_ = (kappa <= step) & (kappa <= remaining)
        reach_T = ~exit_ & (remaining <= step)
        null = ~exit_ & ~reach_T & (seg < dt)
        cand = ~exit_ & ~reach_T & ~null
        dur = np.where(exit_, kappa, np.where(reach_T, remaining, step))
        t_end = np.where(reach_T, T, t + dur)

        lo, hi = t.min(), t_end.max()
        for ci, c in enumerate(cps):
            if c < lo or c > hi:
                continue
            sel = (t <= c) & ((c < t_end) | (reach_T & (c <= t_end)))
            if sel.any():
                pos = r[sel] + v[sel] * (c - t[sel])[:, None]
                snaps[ci].append((pos, v[sel], vidx[sel], mark[sel], lin[sel]))

        if record_events:
            for mask, kind in ((exit_, EXIT), (reach_T, HORIZON)):
                if mask.any():
                    k = int(mask.sum())
                    emit(t_end[mask], lin[mask], np.full(k, kind), r[mask] + v[mask] * dur[mask, None],
                         v[mask], [[] for _ in range(k)])

        ci_idx = np.nonzero(cand)[0]
        keep = null.copy()
        r_new = r + v * dur[:, None]
        child_parts = None
        if ci_idx.size:
            off = dynamics.resolve(rng, r_new[ci_idx], v[ci_idx], vidx[ci_idx], mark[ci_idx],
                                   None if info is None else info[ci_idx])
            keep[ci_idx[~off.accepted]] = True
            nch = off.child_parent.size
            if nch or off.accepted.any():
                gparent = ci_idx[off.child_parent]
                c_lin = np.where(off.child_keeps_lineage, lin[gparent], -1)
                fresh = ~off.child_keeps_lineage
                c_lin[fresh] = np.arange(next_id, next_id + int(fresh.sum()))
                next_id += int(fresh.sum())
                child_parts = (r_new[gparent], off.child_v, off.child_vidx.astype(np.int64),
                               off.child_mark.astype(np.int8), c_lin, t_end[gparent])
                if record_events:
                    acc = ci_idx[off.accepted]
                    offs = []
                    for a, kd in zip(acc, off.kind):
                        if kd == FISSION:
                            offs.append(c_lin[(gparent == a) & fresh].tolist())
                        else:
                            offs.append([])
                    emit(t_end[acc], lin[acc], off.kind, r_new[acc], v[acc], offs)

        r, v, vidx, mark, lin, t = r_new[keep], v[keep], vidx[keep], mark[keep], lin[keep], t_end[keep]
        if child_parts is not None:
            cr, cv, cj, cm, cl, ct = child_parts
            r = np.concatenate([r, cr])
            v = np.concatenate([v, cv])
            vidx = np.concatenate([vidx, cj])
            mark = np.concatenate([mark, cm])
            lin = np.concatenate([lin, cl])
            t = np.concatenate([t, ct])
        if r.shape[0] > cap:
            raise PopulationCapExceeded(f"population {r.shape[0]} exceeded cap {cap}", build_traj())

    return build_traj()


def simulate(mu: ParticleSystem, cfg: SimConfig, model: CrossSectionModel, *,
             checkpoints: Sequence[float] | None = None, rng: np.random.Generator | None = None,
             tag: str = "simulate") -> Trajectory:
    """Plain process from ``mu``; the stream is keyed by (seed, replicate, tag)."""
    rng = rng if rng is not None else stream(cfg.seed, cfg.replicate, tag)
    dyn = NBPDynamics(model, cfg.scheme, cfg.sigma_bar)
    traj = run(mu, dyn, cfg.horizon, rng, checkpoints=checkpoints, cap=cfg.cap,
               record_events=cfg.record_events)
    traj.replicate, traj.seed = cfg.replicate, cfg.seed
    return traj


InitialCondition = ParticleSystem | Callable[[np.random.Generator], ParticleSystem]


def initial_state(mu: InitialCondition, seed: int, replicate: int, tag: str) -> ParticleSystem:
    if callable(mu):
        return mu(stream(seed, replicate, tag + "/init"))
    return mu


def run_replicates(task: Callable[[int], object], n_reps: int, threads: int = 1) -> list:
    """Map ``task`` over replicate indices; results are in replicate order."""
    if threads <= 1:
        return [task(i) for i in range(n_reps)]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(task, range(n_reps)))


def simulate_many(mu: InitialCondition, model: CrossSectionModel, horizon: float, n_reps: int,
                  seed: int, *, checkpoints=None, scheme: str = "collision", threads: int = 1,
                  tag: str = "simulate", cap: int = 1_000_000,
                  reduce: Callable[[Trajectory], object] | None = None) -> list:
    """Independent replicates of the plain process.

    ``reduce`` maps each trajectory to a summary before it is kept, which
    keeps memory flat for large replicate counts.
    """
    def task(i):
        cfg = SimConfig(horizon, cap=cap, seed=seed, replicate=i, scheme=scheme)
        tr = simulate(initial_state(mu, seed, i, tag), cfg, model, checkpoints=checkpoints, tag=tag)
        return tr if reduce is None else reduce(tr)

    return run_replicates(task, n_reps, threads)


def estimate_psi(g: Callable[[ParticleSystem], np.ndarray], t: float, x: InitialCondition,
                 n_reps: int, model: CrossSectionModel, *, seed: int = 0, scheme: str = "collision",
                 threads: int = 1) -> tuple[float, float]:
    """MC mean and standard error of <g, X_t>; g vanishes on the cemetery."""
    def reduce(tr):
        s = tr.snapshots[-1]
        return float(np.sum(g(s))) if s.count else 0.0

    vals = simulate_many(x, model, t, n_reps, seed, checkpoints=[t], scheme=scheme,
                         threads=threads, tag="psi", reduce=reduce)
    return mean_se(vals)


def estimate_u(g: Callable[[ParticleSystem], np.ndarray], t: float, x: InitialCondition,
               n_reps: int, model: CrossSectionModel, *, seed: int = 0, threads: int = 1) -> tuple[float, float]:
    """MC mean and standard error of prod g(x_i(t)); the empty product is 1."""
    def reduce(tr):
        s = tr.snapshots[-1]
        if not s.count:
            return 1.0
        vals = np.asarray(g(s), dtype=float)
        if np.any(vals < 0) or np.any(vals > 1):
            raise ValueError("u-functional needs 0 <= g <= 1")
        return float(np.prod(vals))

    vals = simulate_many(x, model, t, n_reps, seed, checkpoints=[t], threads=threads,
                         tag="u", reduce=reduce)
    return mean_se(vals)
