"""Branching Brownian motion with drift, killed outside a strip [0, K], and its
spaceless Galton-Watson limit."""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.linalg import eigvalsh_tridiagonal, solve_banded

from .stats import stream


@dataclass(frozen=True)
class StripModel:
    K: float
    mu: float
    rate: float
    probs: tuple[float, ...]  # offspring law p_0, p_1, ...

    def __post_init__(self):
        if not self.K > 0:
            raise ValueError("strip width must be positive")
        if not self.rate > 0:
            raise ValueError("branch rate must be positive")
        if any(q < 0 for q in self.probs) or abs(sum(self.probs) - 1.0) > 1e-12:
            raise ValueError("offspring probabilities must be non-negative and sum to 1")

    @property
    def mean(self) -> float:
        return float(sum(k * q for k, q in enumerate(self.probs)))

    def pgf(self, s):
        return np.polynomial.polynomial.polyval(s, np.asarray(self.probs, dtype=float))

    def pgf_prime(self, s):
        c = np.asarray(self.probs, dtype=float)
        return np.polynomial.polynomial.polyval(s, np.polynomial.polynomial.polyder(c))

    def branching(self, u):
        """G[u] = rate (f(u) - u)."""
        return self.rate * (self.pgf(u) - u)


GW3 = {
    "rate": Fraction(1), "p0": Fraction(1, 4), "p2": Fraction(3, 4),
    "m": Fraction(3, 2), "lam": Fraction(1, 2), "w": Fraction(1, 3), "p": Fraction(2, 3),
}
GW3_PROBS = (0.25, 0.0, 0.75)


def gw3_minimal_root() -> Fraction:
    """Smallest root in [0, 1] of (3/4) s^2 - s + 1/4 = 0, in exact arithmetic."""
    a, b, c = Fraction(3, 4), Fraction(-1), Fraction(1, 4)
    disc = b * b - 4 * a * c  # = 1/4, a perfect square
    sq = Fraction(1, 2)
    assert sq * sq == disc
    return min((-b - sq) / (2 * a), (-b + sq) / (2 * a))


# ------------------------------------------------------------------ w solve

@dataclass
class StripSolution:
    x: np.ndarray
    w: np.ndarray
    residual: float
    method: str
    iterations: int


def _operator_diagonals(model: StripModel, n: int):
    h = model.K / n
    lower = 0.5 / h**2 - model.mu / (2 * h)
    upper = 0.5 / h**2 + model.mu / (2 * h)
    diag = -1.0 / h**2
    return h, lower, diag, upper


def _residual(model, w_in, lower, diag, upper):
    w = np.concatenate([[1.0], w_in, [1.0]])
    return lower * w[:-2] + diag * w[1:-1] + upper * w[2:] + model.branching(w[1:-1])


def _time_step(model, n, tol, w=None, dt=None, max_steps=200_000):
    """Monotone parabolic stepping from u = 0: implicit diffusion, explicit reaction."""
    h, lo, di, up = _operator_diagonals(model, n)
    m = n - 1
    dt = dt or min(0.1, 0.5 / model.rate)
    ab = np.zeros((3, m))
    ab[0, 1:] = -dt * up
    ab[1, :] = 1 - dt * di
    ab[2, :-1] = -dt * lo
    u = np.zeros(m) if w is None else w.copy()
    bc = np.zeros(m)
    bc[0] = dt * lo
    bc[-1] = dt * up
    for it in range(1, max_steps + 1):
        rhs = u + dt * model.branching(u) + bc
        nu = solve_banded((1, 1), ab, rhs)
        inc = np.abs(nu - u).max() / dt
        u = nu
        if inc < tol:
            return u, it
    return u, max_steps


def solve_w_strip(model: StripModel, n_cells: int = 2000, tol: float = 1e-10) -> StripSolution:
    """Extinction probability on the strip from the two-point problem
    (1/2) w'' + mu w' + G[w] = 0, w(0) = w(K) = 1, by damped Newton on a
    second-order stencil started from parabolic time stepping."""
    n = int(n_cells)
    h, lo, di, up = _operator_diagonals(model, n)
    x = np.linspace(0.0, model.K, n + 1)
    u, _ = _time_step(model, n, tol=1e-3)
    method = "newton"
    its = 0
    res = np.abs(_residual(model, u, lo, di, up)).max()
    for its in range(1, 101):
        F = _residual(model, u, lo, di, up)
        ab = np.zeros((3, n - 1))
        ab[0, 1:] = up
        ab[1, :] = di + model.rate * (model.pgf_prime(u) - 1.0)
        ab[2, :-1] = lo
        step = solve_banded((1, 1), ab, -F)
        lam = 1.0
        while lam > 1e-4:
            trial = np.clip(u + lam * step, 0.0, 1.0)
            new_res = np.abs(_residual(model, trial, lo, di, up)).max()
            if new_res < res or new_res < tol:
                break
            lam /= 2
        else:
            method = "time-stepping"
            break
        u, res = trial, new_res
        if res < tol:
            break
    else:
        method = "time-stepping"
    if method == "time-stepping":
        u, its = _time_step(model, n, tol=tol, w=u)
        res = np.abs(_residual(model, u, lo, di, up)).max()
    return StripSolution(x, np.concatenate([[1.0], u, [1.0]]), float(res), method, its)


# ------------------------------------------------------------ eigenvalue

def dirichlet_eigen_fd(K: float, mu: float, n: int = 4000) -> float:
    """Top eigenvalue of (1/2) d^2/dx^2 + mu d/dx on [0, K] with Dirichlet
    ends, from the symmetrized tridiagonal matrix, Richardson-extrapolated
    from n and 2n cells."""
    def top(cells):
        h = K / cells
        lower = 0.5 / h**2 - mu / (2 * h)
        upper = 0.5 / h**2 + mu / (2 * h)
        if lower * upper <= 0:
            raise ValueError("grid too coarse for the drift")
        d = np.full(cells - 1, -1.0 / h**2)
        e = np.full(cells - 2, math.sqrt(lower * upper))
        return float(eigvalsh_tridiagonal(d, e, select="i", select_range=(cells - 2, cells - 2))[0])

    a, b = top(n), top(2 * n)
    return (4 * b - a) / 3


def lambda_strip(model: StripModel, n: int = 4000) -> dict:
    """Leading eigenvalue of the mean semigroup: (m-1) rate - mu^2/2 - pi^2/(2K^2),
    with the diffusion part cross-checked by a finite-difference eigensolver."""
    closed = (model.mean - 1) * model.rate - model.mu**2 / 2 - math.pi**2 / (2 * model.K**2)
    fd = (model.mean - 1) * model.rate + dirichlet_eigen_fd(model.K, model.mu, n)
    return {"lam": closed, "lam_fd": fd, "difference": abs(closed - fd)}


# ------------------------------------------------------------- simulation

@dataclass
class StripTrajectory:
    checkpoints: np.ndarray
    positions: list[np.ndarray]

    def counts(self) -> np.ndarray:
        return np.array([p.size for p in self.positions])


def simulate_strip(model: StripModel, x0, horizon: float, rng: np.random.Generator, *,
                   checkpoints=None, dt_max: float = 0.1, cap: int = 1_000_000) -> StripTrajectory:
    """Exact Gaussian steps of length <= dt_max with Brownian-bridge crossing
    checks at both walls, exponential branch clocks and local offspring."""
    from .engine import PopulationCapExceeded

    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if np.any((x0 <= 0) | (x0 >= model.K)):
        raise ValueError("start inside the strip")
    cps = np.unique(np.asarray([horizon] if checkpoints is None else list(checkpoints), dtype=float))
    K, mu, rate = model.K, model.mu, model.rate
    cum = np.cumsum(model.probs)
    x = x0.copy()
    t = np.zeros(x.size)
    out = []
    for c in cps:
        while True:
            act = np.nonzero(t < c - 1e-15)[0]
            if act.size == 0:
                break
            tau = rng.exponential(size=act.size) / rate
            s = np.minimum(np.minimum(tau, dt_max), c - t[act])
            s = np.where(c - t[act] - s < 1e-13, c - t[act], s)
            xa = x[act]
            xn = xa + mu * s + np.sqrt(s) * rng.standard_normal(act.size)
            inside = (xn > 0) & (xn < K)
            with np.errstate(over="ignore", invalid="ignore"):
                p0 = np.exp(-2.0 * xa * np.maximum(xn, 0) / s)
                pK = np.exp(-2.0 * (K - xa) * np.maximum(K - xn, 0) / s)
            cross = 1.0 - (1.0 - p0) * (1.0 - pK)
            alive = inside & (rng.random(act.size) >= cross)
            branch = alive & (tau <= s)
            x[act] = xn
            t[act] = t[act] + s
            dead = act[~alive]
            keep = np.ones(x.size, bool)
            keep[dead] = False
            bi = act[branch]
            if bi.size:
                u = rng.random(bi.size)
                k = np.minimum(np.searchsorted(cum, u, side="right"), len(model.probs) - 1)
                keep[bi] = False
                kids_x = np.repeat(x[bi], k)
                kids_t = np.repeat(t[bi], k)
                x = np.concatenate([x[keep], kids_x])
                t = np.concatenate([t[keep], kids_t])
            else:
                x, t = x[keep], t[keep]
            if x.size > cap:
                raise PopulationCapExceeded(f"population {x.size} exceeded cap {cap}",
                                            StripTrajectory(cps[:len(out)], out))
        out.append(np.sort(x))
    return StripTrajectory(cps, out)


def sample_strip_start(model: StripModel, rng: np.random.Generator, n: int = 1) -> np.ndarray:
    """Rejection draws from the principal left eigenfunction exp(mu x) sin(pi x / K);
    started there the mean population grows exactly exponentially."""
    out = []
    while len(out) < n:
        x = rng.random(4 * n) * model.K
        dens = np.exp(model.mu * x) * np.sin(np.pi * x / model.K)
        bound = np.exp(max(0.0, model.mu * model.K))
        acc = rng.random(x.size) * bound < dens
        out.extend(x[acc].tolist())
    return np.asarray(out[:n])


def simulate_strip_many(model: StripModel, horizon: float, n_reps: int, seed: int, *,
                        checkpoints=None, dt_max: float = 0.1, x0=None, threads: int = 1) -> np.ndarray:
    """Counts at checkpoints, one row per replicate. ``x0=None`` draws each
    start from the principal left eigenfunction."""
    from .engine import run_replicates

    def task(i):
        if x0 is None:
            start = sample_strip_start(model, stream(seed, i, "strip/init"), 1)
        else:
            start = x0
        tr = simulate_strip(model, start, horizon, stream(seed, i, "strip"),
                            checkpoints=checkpoints, dt_max=dt_max)
        return tr.counts()

    return np.array(run_replicates(task, n_reps, threads))


def down_mean_offspring(model: StripModel, w: np.ndarray) -> np.ndarray:
    """Mean offspring number of the doomed process at local extinction probability w."""
    c = np.asarray(model.probs, dtype=float)
    k = np.arange(c.size)
    wk = np.asarray(w, dtype=float)[:, None] ** k[None, :]
    return (wk * c * k).sum(axis=1) / (wk * c).sum(axis=1)
