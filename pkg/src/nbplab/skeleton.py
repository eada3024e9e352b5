"""Skeletal decomposition: doomed (down) subtrees, the prolific (up) skeleton
dressed with immigrating doomed subtrees, Bernoulli marking and the
Bernoulli-mixture reconstruction of the plain process.

The exact algebra works on finite branching tables with any number type
(``fractions.Fraction`` gives exact results). The simulation side tilts a rod
model by a grid survival field.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Callable, Hashable, Sequence

import numpy as np

from .cross_sections import CrossSectionModel, IIDFission
from .engine import (DOWN, FISSION, SCATTER, UP, InitialCondition, Offspring, ParticleSystem,
                     Trajectory, initial_state, run, run_replicates)
from .rod import GridField, SurvivalField
from .stats import stream

# ------------------------------------------------------------ exact algebra

Label = Hashable


@dataclass(frozen=True)
class BranchingTable:
    """Branch rate and a finite offspring law: (probability, child labels)."""

    rate: Any
    outcomes: tuple[tuple[Any, tuple], ...]

    def expect_product(self, f: Callable[[Label], Any]) -> Any:
        total = 0
        for prob, kids in self.outcomes:
            term = prob
            for c in kids:
                term = term * f(c)
            total = total + term
        return total

    def total_probability(self) -> Any:
        return sum(p for p, _ in self.outcomes)

    def mean_offspring(self) -> Any:
        return sum(p * len(k) for p, k in self.outcomes)

    def law(self) -> dict:
        """Probabilities aggregated by (sorted) child multiset."""
        out: dict = {}
        for p, kids in self.outcomes:
            key = tuple(sorted(kids, key=repr))
            out[key] = out.get(key, 0) + p
        return out


def G(table: BranchingTable, f: Callable[[Label], Any], x: Label) -> Any:
    """Branching generator rate * (E prod f(children) - f(x))."""
    return table.rate * (table.expect_product(f) - f(x))


def down_table(table: BranchingTable, w: Callable[[Label], Any], x: Label) -> BranchingTable:
    """Doomed branching: rate * E[prod w]/w(x); outcomes reweighted by prod w / E prod w."""
    epw = table.expect_product(w)
    outs = []
    for prob, kids in table.outcomes:
        wt = prob
        for c in kids:
            wt = wt * w(c)
        outs.append((wt / epw, kids))
    return BranchingTable(table.rate * epw / w(x), tuple(outs))


def up_table(table: BranchingTable, w: Callable[[Label], Any], x: Label) -> BranchingTable:
    """Prolific branching with immigration.

    Children become (label, mark) pairs; every outcome carries at least one
    prolific child. Rate is rate * (1 - E prod w) / p(x).
    """
    one = w(x) * 0 + 1
    epw = table.expect_product(w)
    px = one - w(x)
    norm = one - epw
    outs = []
    for prob, kids in table.outcomes:
        n = len(kids)
        for mask in itertools.product((True, False), repeat=n):
            if not any(mask):
                continue
            wt = prob
            for c, up in zip(kids, mask):
                wt = wt * ((one - w(c)) if up else w(c))
            if wt != 0:
                outs.append((wt / norm, tuple((c, UP if up else DOWN) for c, up in zip(kids, mask))))
    return BranchingTable(table.rate * norm / px, tuple(outs))


def G_down(table: BranchingTable, w, f, x) -> Any:
    """(G[f w] - f G[w]) / w at x."""
    return (G(table, lambda y: f(y) * w(y), x) - f(x) * G(table, w, x)) / w(x)


def G_up(table: BranchingTable, w, f, x) -> Any:
    """(G[p f + w] - (1 - f) G[w]) / p at x."""
    one = w(x) * 0 + 1
    p = lambda y: one - w(y)
    return (G(table, lambda y: p(y) * f(y) + w(y), x) - (one - f(x)) * G(table, w, x)) / p(x)


def G_updown(table: BranchingTable, w, f, g, x) -> Any:
    """Joint generator of prolific offspring (tested by f) and immigrants (by g):
    (rate/p) E[sum over non-empty I of prod_I p f prod_{I^c} w g] - rate_up f(x)."""
    one = w(x) * 0 + 1
    p = lambda y: one - w(y)
    total = 0
    for prob, kids in table.outcomes:
        for mask in itertools.product((True, False), repeat=len(kids)):
            if not any(mask):
                continue
            term = prob
            for c, up in zip(kids, mask):
                term = term * (p(c) * f(c) if up else w(c) * g(c))
            total = total + term
    rate_up = table.rate * (one - table.expect_product(w)) / p(x)
    return table.rate / p(x) * total - rate_up * f(x)


def subset_sum(p_values: Sequence[Any]) -> Any:
    """Sum over all subsets I of prod_I p prod_{I^c} (1 - p); identically 1."""
    total = 0
    for mask in itertools.product((True, False), repeat=len(p_values)):
        term = 1
        for pv, up in zip(p_values, mask):
            term = term * (pv if up else 1 - pv)
        total = total + term
    return total


def gw3_table() -> BranchingTable:
    return BranchingTable(Fraction(1), ((Fraction(1, 4), ()), (Fraction(3, 4), (0, 0))))


def model_table(model: CrossSectionModel, zone: int, j: int) -> BranchingTable:
    """Fission branching table at a (zone, velocity) cell; labels are velocity indices."""
    return BranchingTable(float(model.sigma_f[zone, j]), tuple(model.fission.configurations(zone, j)))


def sample_prolific_subset(p_values: np.ndarray, rng: np.random.Generator, max_tries: int = 100_000) -> np.ndarray:
    """Indices marked prolific, each independently with its p, conditioned on >= 1."""
    p = np.asarray(p_values, dtype=float)
    if p.size == 0:
        raise ValueError("no offspring to mark")
    if np.all(p <= 0):
        raise ValueError("every child has zero survival probability")
    for _ in range(max_tries):
        marks = rng.random(p.size) < p
        if marks.any():
            return np.nonzero(marks)[0]
    raise RuntimeError("prolific subset rejection sampler exhausted")


# ------------------------------------------------------------- grid specs

def _check_w(sf: SurvivalField, allow_degenerate: bool) -> None:
    if allow_degenerate:
        return
    bad = np.argwhere((sf.w <= 0) | (sf.w >= 1))
    if bad.size:
        i, j = bad[0]
        raise ValueError(f"w={sf.w[i, j]:.6g} outside (0,1) at cell {int(i)}, velocity {int(j)}")


@dataclass
class DownProcess:
    """Doomed process on a rod: w-tilted scatter and reweighted fission."""

    model: CrossSectionModel
    w: GridField

    def rates(self, r: np.ndarray, j: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        W = _field_all(self.w, r, self.model.velocities.k)
        return _tilted_rates(self.model, r, j, W, W)

    def table(self, r: float, j: int) -> BranchingTable:
        z = int(self.model.zone_of(np.array([[r]]))[0])
        W = _field_all(self.w, np.array([r]), self.model.velocities.k)[0]
        return down_table(model_table(self.model, z, j), lambda c: W[c], j)

    def mean_offspring_grid(self) -> np.ndarray:
        """Mean offspring number under the reweighted law at every cell center."""
        g = self.w.grid
        W = _field_all(self.w, g.centers, g.k)
        out = np.empty((g.n_cells, g.k))
        z = self.model.zone_of(g.centers[:, None])
        for i in range(g.n_cells):
            for j in range(g.k):
                t = down_table(model_table(self.model, int(z[i]), j), lambda c: W[i, c], j)
                out[i, j] = t.mean_offspring()
        return out


@dataclass
class UpProcess:
    model: CrossSectionModel
    w: GridField
    p: GridField

    def rates(self, r: np.ndarray, j: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        k = self.model.velocities.k
        W = _field_all(self.w, r, k)
        P = _field_all(self.p, r, k)
        return _tilted_rates(self.model, r, j, P, W, up=True)

    def table(self, r: float, j: int) -> BranchingTable:
        z = int(self.model.zone_of(np.array([[r]]))[0])
        W = _field_all(self.w, np.array([r]), self.model.velocities.k)[0]
        return up_table(model_table(self.model, z, j), lambda c: W[c], j)


def build_down(model: CrossSectionModel, sf: SurvivalField, allow_degenerate: bool = False) -> DownProcess:
    _check_w(sf, allow_degenerate)
    return DownProcess(model, sf.w_field())


def build_up(model: CrossSectionModel, sf: SurvivalField, allow_degenerate: bool = False) -> UpProcess:
    _check_w(sf, allow_degenerate)
    return UpProcess(model, sf.w_field(), sf.p_field())


def _field_all(f: GridField, r: np.ndarray, k: int) -> np.ndarray:
    """Field values at positions r for every velocity index: shape (n, k)."""
    r = np.asarray(r, dtype=float).reshape(-1)
    return np.stack([f.at(r, np.full(r.size, j)) for j in range(k)], axis=1)


def _tilted_rates(model, r, j, H, W, up=False):
    """Tilted scatter rate and branch rate at (r, j).

    Down (H = W): sigma_s (pi_s w)(j)/w(j) and sigma_f E[prod w]/w(j).
    Up (H = P): sigma_s (pi_s p)(j)/p(j) and sigma_f (1 - E[prod w])/p(j).
    """
    r2 = np.asarray(r, dtype=float).reshape(-1, 1)
    z = model.zone_of(r2)
    n = r2.shape[0]
    rows = np.arange(n)
    ss = model.sigma_s[z, j]
    sfv = model.sigma_f[z, j]
    pis = model.scatter.matrix[z, j]              # (n, k)
    here = H[rows, j]
    epw = model.fission.expected_product(z, j, W)
    with np.errstate(divide="ignore", invalid="ignore"):
        scat = ss * np.einsum("nk,nk->n", pis, H) / here
        branch = sfv * ((1.0 - epw) if up else epw) / here
    return scat, branch


class _RangeMin:
    """Sparse table answering min over node index ranges, per velocity row."""

    def __init__(self, values: np.ndarray):
        levels = [values]
        span = 1
        while 2 * span <= values.shape[1]:
            prev = levels[-1]
            levels.append(np.minimum(prev[:, :-span], prev[:, span:]))
            span *= 2
        self.levels = levels

    def query(self, row: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
        """min values[row, lo..hi] inclusive; +inf where lo > hi."""
        out = np.full(row.size, np.inf)
        ok = lo <= hi
        if not ok.any():
            return out
        rr, a, b = row[ok], lo[ok], hi[ok]
        length = b - a + 1
        lev = np.floor(np.log2(length)).astype(int)
        res = np.empty(rr.size)
        for L in np.unique(lev):
            m = lev == L
            tab = self.levels[L]
            res[m] = np.minimum(tab[rr[m], a[m]], tab[rr[m], b[m] - (1 << L) + 1])
        out[ok] = res
        return out


class DressedDynamics:
    """Marked dynamics: up particles follow the p-tilted motion and branch with
    at least one prolific child; down particles follow the w-tilted motion and
    branch under the reweighted law. Children of down particles are down.

    Up particles propose events on segments ending halfway to the exit point,
    using the bound sigma_bar / min p over the segment (p is piecewise linear,
    so the minimum sits at a node or an end point). A particle whose p drops
    below ``p_floor`` branches on the spot: its tilted event rate diverges at
    the boundary, so such a particle cannot escape.
    """

    def __init__(self, model: CrossSectionModel, sf: SurvivalField, *, p_floor: float = 1e-6,
                 alt_view: bool = False, allow_degenerate: bool = False):
        if not model.discrete:
            raise ValueError("dressed dynamics needs a discrete velocity set")
        self.model = model
        self.domain = model.domain
        self.down = build_down(model, sf, allow_degenerate)
        self.up = build_up(model, sf, allow_degenerate)
        self.wf = self.down.w
        self.pf = self.up.p
        self.k = model.velocities.k
        self.varr = model.velocities.array
        self.speeds = self.varr[:, 0]
        self.sigma_bar = model.sigma_bar_s + model.sigma_bar_f
        self.w_min = self.wf.min
        if self.w_min <= 0:
            raise ValueError("w must be positive for the down process")
        self.p_floor = p_floor
        self.alt_view = alt_view
        if alt_view and not isinstance(model.fission, IIDFission):
            raise ValueError("the alternative view is implemented for i.i.d. fission laws")
        self._rmq = _RangeMin(self.pf.node_values)
        self._cum_s = np.cumsum(model.scatter.matrix, axis=2)

    # -- proposals
    def propose(self, rng, r, v, vidx, mark):
        n = r.shape[0]
        bound = np.full(n, self.sigma_bar / self.w_min)
        seg = np.full(n, np.inf)
        up = np.nonzero(mark == UP)[0]
        if up.size:
            b_up, s_up = self._up_bound(r[up, 0], vidx[up])
            bound[up] = b_up
            seg[up] = s_up
        with np.errstate(divide="ignore"):
            dt = rng.exponential(size=n) / bound
        dt[~np.isfinite(bound)] = 0.0
        return dt, seg, bound

    def _up_bound(self, x, j):
        dom = self.domain
        s = self.speeds[j]
        fwd = s > 0
        dist = np.where(fwd, dom.b - x, x - dom.a)
        end = x + np.where(fwd, 1.0, -1.0) * dist / 2.0
        lo_x = np.minimum(x, end)
        hi_x = np.maximum(x, end)
        nodes = self.pf.nodes
        i0 = np.searchsorted(nodes, lo_x, side="right")
        i1 = np.searchsorted(nodes, hi_x, side="left") - 1
        p_start = self.pf.at(x, j)
        p_end = self.pf.at(end, j)
        pmin = np.minimum(np.minimum(p_start, p_end), self._rmq.query(j, i0, i1))
        with np.errstate(divide="ignore"):
            bound = self.sigma_bar / pmin
        seg = dist / 2.0 / np.abs(s)
        forced = p_start < self.p_floor
        bound[forced] = np.inf
        seg[forced] = 0.0
        return bound, seg

    # -- resolution
    def resolve(self, rng, r, v, vidx, mark, bound) -> Offspring:
        n = r.shape[0]
        x = r[:, 0]
        j = vidx
        W = _field_all(self.wf, x, self.k)
        upm = mark == UP
        H = np.where(upm[:, None], 1.0 - W, W)
        m = self.model
        z = m.zone_of(r)
        rows = np.arange(n)
        pis = m.scatter.matrix[z, j]
        ss = m.sigma_s[z, j]
        sfv = m.sigma_f[z, j]
        here = H[rows, j]
        epw = m.fission.expected_product(z, j, W)
        num_s = ss * np.einsum("nk,nk->n", pis, H)
        num_b = sfv * np.where(upm, 1.0 - epw, epw)
        forced = ~np.isfinite(bound)
        u = rng.random(n)
        with np.errstate(divide="ignore", invalid="ignore"):
            # forced events split by the rate numerators (the common 1/h cancels)
            xval = np.where(forced, u * (num_s + num_b), u * bound * here)
        scat = xval < num_s
        br = ~scat & (xval < num_s + num_b)
        if np.any(forced & ~(scat | br)):
            raise RuntimeError("forced event with vanishing rates")
        accepted = scat | br

        # tilted scatter: new velocity with mass pi_s(j, j') h(j')
        si = np.nonzero(scat)[0]
        wts = pis[si] * H[si]
        cum = np.cumsum(wts, axis=1)
        us = rng.random(si.size) * cum[:, -1]
        new_j = np.minimum((cum < us[:, None]).sum(axis=1), self.k - 1)

        kinds = np.where(scat, SCATTER, np.where(br, FISSION, -1))
        parts_parent = [si]
        parts_j = [new_j]
        parts_mark = [mark[si]]
        parts_keep = [np.ones(si.size, bool)]

        bi = np.nonzero(br)[0]
        down_b = bi[~upm[bi]]
        up_b = bi[upm[bi]]
        if down_b.size:
            par, kj = self._down_branch(rng, z[down_b], j[down_b], W[down_b])
            parts_parent.append(down_b[par])
            parts_j.append(kj)
            parts_mark.append(np.full(kj.size, DOWN, np.int8))
            parts_keep.append(np.zeros(kj.size, bool))
        if up_b.size:
            par, kj, km, keep = self._up_branch(rng, z[up_b], j[up_b], W[up_b])
            parts_parent.append(up_b[par])
            parts_j.append(kj)
            parts_mark.append(km)
            parts_keep.append(keep)

        parent = np.concatenate(parts_parent)
        cj = np.concatenate(parts_j).astype(np.int64)
        branch_parents = np.concatenate(parts_parent[1:]) if len(parts_parent) > 1 else np.zeros(0, int)
        nkids = np.bincount(branch_parents, minlength=n)
        kinds = np.where(br & (nkids == 0), 3, kinds)
        return Offspring(accepted, kinds[accepted], parent, self.varr[cj] if cj.size else np.zeros((0, 1)),
                         cj, np.concatenate(parts_mark).astype(np.int8), np.concatenate(parts_keep))

    def _down_branch(self, rng, z, j, W):
        """Configurations with probability proportional to P(config) prod w."""
        fis = self.model.fission
        pending = np.arange(z.size)
        parents, kids = [], []
        while pending.size:
            counts, kj, _ = fis.sample(rng, z[pending], j[pending])
            par = np.repeat(np.arange(pending.size), counts)
            wv = W[pending[par], kj] if kj.size else np.zeros(0)
            logp = np.zeros(pending.size)
            np.add.at(logp, par, np.log(wv))
            acc = rng.random(pending.size) < np.exp(logp)
            keep_child = acc[par]
            parents.append(pending[par[keep_child]])
            kids.append(kj[keep_child])
            pending = pending[~acc]
        return np.concatenate(parents), np.concatenate(kids)

    def _up_branch(self, rng, z, j, W):
        """Configuration and independent marks, jointly resampled until >= 1 up.

        With ``alt_view`` the event class (exactly one prolific child versus at
        least two) is chosen first from its rate share, and the configuration
        is drawn conditioned on that class; a lone prolific child continues its
        parent's lineage, which is the immigration-along-the-path reading.
        """
        fis = self.model.fission
        n = z.size
        if self.alt_view:
            emit = fis.emission[z, j]
            pbar = np.einsum("nk,nk->n", emit, 1.0 - W)
            wbar = 1.0 - pbar
            probs = fis.count_probs[z, j]
            ns = np.arange(probs.shape[1])
            one = (probs * ns * pbar[:, None] * wbar[:, None] ** np.maximum(ns - 1, 0)).sum(axis=1)
            atleast1 = 1.0 - (probs * wbar[:, None] ** ns).sum(axis=1)
            want_one = rng.random(n) * atleast1 < one
        else:
            want_one = np.zeros(n, bool)
        pending = np.arange(n)
        parents, kids, marks, keeps = [], [], [], []
        while pending.size:
            counts, kj, _ = fis.sample(rng, z[pending], j[pending])
            par = np.repeat(np.arange(pending.size), counts)
            pv = 1.0 - W[pending[par], kj] if kj.size else np.zeros(0)
            mk = rng.random(par.size) < pv
            nup = np.bincount(par, weights=mk, minlength=pending.size)
            if self.alt_view:
                acc = np.where(want_one[pending], nup == 1, nup >= 2)
            else:
                acc = nup >= 1
            sel = acc[par]
            parents.append(pending[par[sel]])
            kids.append(kj[sel])
            marks.append(np.where(mk[sel], UP, DOWN).astype(np.int8))
            keeps.append(mk[sel] & want_one[pending[par[sel]]])
            pending = pending[~acc]
        return np.concatenate(parents), np.concatenate(kids), np.concatenate(marks), np.concatenate(keeps)


# ------------------------------------------------------------- pipelines

def mark_binpp(ps: ParticleSystem, p: Callable[[ParticleSystem], np.ndarray],
               rng: np.random.Generator) -> ParticleSystem:
    """Independent Bernoulli(p(x_i)) thinning; retained particles are marked up."""
    if ps.count == 0:
        return ps.subset(np.zeros(0, bool))
    keep = rng.random(ps.count) < np.asarray(p(ps), dtype=float)
    out = ps.subset(keep)
    out.mark = np.full(out.count, UP, np.int8)
    return out


@dataclass
class MixtureManifest:
    roots: list[dict] = field(default_factory=list)


def reconstruct_mixture(mu: ParticleSystem, horizon: float, dyn: DressedDynamics,
                        rng: np.random.Generator, *, checkpoints=None, cap: int = 1_000_000,
                        record_events: bool = False) -> tuple[Trajectory, MixtureManifest]:
    """Each root starts a dressed up-tree with probability p(root), otherwise a
    down tree; all trees evolve together under the marked dynamics."""
    pv = dyn.pf.at(mu.r[:, 0], mu.vidx) if mu.count else np.zeros(0)
    b = rng.random(mu.count) < pv
    marked = ParticleSystem(mu.r.copy(), mu.v.copy(), mu.vidx.copy(), np.where(b, UP, DOWN).astype(np.int8),
                            mu.lineage.copy(), mu.time)
    traj = run(marked, dyn, horizon, rng, checkpoints=checkpoints, cap=cap, record_events=record_events)
    man = MixtureManifest([{"lineage": int(l), "r": float(x), "vidx": int(j), "p": float(q), "up": bool(u)}
                           for l, x, j, q, u in zip(mu.lineage, mu.r[:, 0], mu.vidx, pv, b)])
    return traj, man


def simulate_dressed(x: ParticleSystem, horizon: float, dyn: DressedDynamics, rng: np.random.Generator, *,
                     checkpoints=None, cap: int = 1_000_000, record_events: bool = False) -> Trajectory:
    """Dressed skeleton from up-marked initial particles."""
    if x.count and np.any(x.mark != UP):
        raise ValueError("initial particles of a dressed run must be marked up")
    return run(x, dyn, horizon, rng, checkpoints=checkpoints, cap=cap, record_events=record_events)


def dressed_many(mu: InitialCondition, dyn: DressedDynamics, horizon: float, n_reps: int, seed: int, *,
                 checkpoints=None, threads: int = 1, mode: str = "dressed", tag: str = "dressed",
                 reduce=None, cap: int = 1_000_000) -> list:
    """Replicates of a dressed (``mode="dressed"``), mixture (``"mixture"``) or
    pure down (``"down"``) run, each on its own stream."""

    def task(i):
        rng = stream(seed, i, tag)
        x = initial_state(mu, seed, i, tag)
        if mode == "dressed":
            x = ParticleSystem(x.r, x.v, x.vidx, np.full(x.count, UP, np.int8), x.lineage, x.time)
            tr = simulate_dressed(x, horizon, dyn, rng, checkpoints=checkpoints, cap=cap)
        elif mode == "mixture":
            tr, man = reconstruct_mixture(x, horizon, dyn, rng, checkpoints=checkpoints, cap=cap)
            tr.info["manifest"] = man
        elif mode == "down":
            x = ParticleSystem(x.r, x.v, x.vidx, np.full(x.count, DOWN, np.int8), x.lineage, x.time)
            tr = run(x, dyn, horizon, rng, checkpoints=checkpoints, cap=cap)
        else:
            raise ValueError(f"unknown mode {mode!r}")
        tr.replicate, tr.seed = i, seed
        return tr if reduce is None else reduce(tr)

    return run_replicates(task, n_reps, threads)


def constant_survival(model: CrossSectionModel, w: float, n_cells: int = 16) -> SurvivalField:
    """Spatially constant survival field (spaceless embedding on a long rod).

    The outgoing boundary values are not pinned, because the embedding
    treats the rod as unbounded.
    """
    from .rod import Grid
    grid = Grid.for_model(model, n_cells)
    return _ConstantSurvival(np.full((n_cells, grid.k), float(w)), grid, 0.0, 0)


class _ConstantSurvival(SurvivalField):
    def w_field(self) -> GridField:
        return GridField(self.grid, self.w, outgoing=float(self.w[0, 0]), incoming=float(self.w[0, 0]))

    def p_field(self) -> GridField:
        q = 1.0 - float(self.w[0, 0])
        return GridField(self.grid, self.p, outgoing=q, incoming=q)
