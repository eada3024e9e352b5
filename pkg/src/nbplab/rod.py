"""Deterministic grid solvers for rods (interval domain, finite velocity set).

Time stepping is Strang splitting: half a collision step, an exact
characteristic shift by one transit time, half a collision step. Each
velocity moves an integer number of cells per step, so advection carries
no numerical diffusion.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.linalg import expm
from scipy.optimize import brentq

from .cross_sections import CrossSectionModel
from .phase_space import Interval


class CFLError(ValueError):
    """Requested time is not a whole number of grid steps."""


class ConvergenceError(RuntimeError):
    def __init__(self, msg: str, residual: float):
        super().__init__(f"{msg} (last residual {residual:.3e})")
        self.residual = residual


class MonotonicityError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class Grid:
    a: float
    b: float
    n_cells: int
    speeds: np.ndarray  # signed speed per velocity index

    def __post_init__(self):
        if self.n_cells < 16:
            raise ValueError("grid needs at least 16 cells")
        s = np.asarray(self.speeds, dtype=float)
        object.__setattr__(self, "speeds", s)
        vmin = np.abs(s).min()
        ratio = np.abs(s) / vmin
        if np.max(np.abs(ratio - np.round(ratio))) > 1e-9:
            raise CFLError("speeds must be integer multiples of the slowest speed")

    @classmethod
    def for_model(cls, model: CrossSectionModel, n_cells: int) -> "Grid":
        if not isinstance(model.domain, Interval) or not model.discrete:
            raise ValueError("rod grids need an interval domain and a discrete velocity set")
        return cls(model.domain.a, model.domain.b, int(n_cells), model.velocities.array[:, 0])

    @property
    def k(self) -> int:
        return self.speeds.size

    @property
    def h(self) -> float:
        return (self.b - self.a) / self.n_cells

    @property
    def centers(self) -> np.ndarray:
        return self.a + self.h * (np.arange(self.n_cells) + 0.5)

    @property
    def dt(self) -> float:
        """One transit time of a cell at the slowest speed."""
        return self.h / np.abs(self.speeds).min()

    @property
    def shifts(self) -> np.ndarray:
        return np.round(self.speeds / np.abs(self.speeds).min()).astype(int)

    def steps_for(self, t: float) -> int:
        n = t / self.dt
        if t < 0 or abs(n - round(n)) > 1e-9 * max(1.0, n):
            raise CFLError(f"t={t} is not a multiple of the grid step {self.dt}")
        return int(round(n))

    def exit_times(self) -> np.ndarray:
        """Exit time from each cell center, shape (n_cells, k)."""
        c = self.centers[:, None]
        v = self.speeds[None, :]
        return np.where(v > 0, (self.b - c) / v, (self.a - c) / v)


def _shift_matrix(grid: Grid) -> sp.csr_matrix:
    n, k = grid.n_cells, grid.k
    rows, cols = [], []
    for j, s in enumerate(grid.shifts):
        i = np.arange(n)
        src = i + s
        ok = (src >= 0) & (src < n)
        rows.append(i[ok] * k + j)
        cols.append(src[ok] * k + j)
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    return sp.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(n * k, n * k))


def _shift(grid: Grid, u: np.ndarray, fill: float) -> np.ndarray:
    """Backward characteristic shift of an (n, k) field; outside values ``fill``."""
    out = np.full_like(u, fill)
    n = grid.n_cells
    for j, s in enumerate(grid.shifts):
        if s > 0:
            out[: n - s, j] = u[s:, j]
        else:
            out[-s:, j] = u[: n + s, j]
    return out


def collision_matrix(model: CrossSectionModel, zone: int) -> np.ndarray:
    """Mean collision generator K = -diag(sigma) + sigma_s pi_s + sigma_f pi_f."""
    sig = model.sigma_s[zone] + model.sigma_f[zone]
    return model.combined_matrix()[zone] - np.diag(sig)


class RodOperator:
    """Assembled one-step propagator M of the mean semigroup on a grid."""

    def __init__(self, model: CrossSectionModel, grid: Grid):
        self.model = model
        self.grid = grid
        z = model.zone_of(grid.centers[:, None])
        self.zones = z
        half = {int(q): expm(collision_matrix(model, int(q)) * grid.dt / 2) for q in np.unique(z)}
        blocks = [half[int(q)] for q in z]
        self.C = sp.block_diag(blocks, format="csr")
        self.S = _shift_matrix(grid)
        self.M = (self.C @ self.S @ self.C).tocsr()
        self.MT = self.M.T.tocsr()

    def apply(self, g: np.ndarray, t: float) -> np.ndarray:
        n = self.grid.steps_for(t)
        x = np.asarray(g, dtype=float).reshape(-1)
        for _ in range(n):
            x = self.M @ x
        return x.reshape(self.grid.n_cells, self.grid.k)

    def apply_adjoint(self, g: np.ndarray, t: float) -> np.ndarray:
        n = self.grid.steps_for(t)
        x = np.asarray(g, dtype=float).reshape(-1)
        for _ in range(n):
            x = self.MT @ x
        return x.reshape(self.grid.n_cells, self.grid.k)


def step_psi(model: CrossSectionModel, grid: Grid, g: np.ndarray, t: float,
             op: RodOperator | None = None) -> np.ndarray:
    """psi_t[g] on the grid; g has shape (n_cells, k) and vanishes off D."""
    op = op or RodOperator(model, grid)
    return op.apply(g, t)


# --------------------------------------------------------------- eigen-triple

@dataclass
class EigenTriple:
    lam: float
    phi: np.ndarray        # right eigenfunction, max 1
    phi_tilde: np.ndarray  # left eigen-density, <phi, phi_tilde> = 1
    grid: Grid
    mass: float            # <1, phi_tilde>
    iterations: int = 0
    residual: float = 0.0
    info: dict = field(default_factory=dict)

    def pair(self, f: np.ndarray, g: np.ndarray) -> float:
        """Grid quadrature <f, g> = h * sum f g."""
        return float(self.grid.h * np.sum(f * g))


def power_iteration(model: CrossSectionModel, grid: Grid, tol: float = 1e-13,
                    max_iter: int = 200_000, op: RodOperator | None = None,
                    vec_tol: float = 1e-10) -> EigenTriple:
    """Principal triple of the grid propagator by simultaneous power iteration.

    The growth factor per step is the two-sided Rayleigh quotient
    <l, M r>/<l, r>, whose error is quadratic in the eigenvector errors.
    Iteration stops once that factor changes by less than ``tol`` (relative)
    and both projected iterates are eigenvectors to ``vec_tol``.
    """
    op = op or RodOperator(model, grid)
    M, MT = op.M, op.MT
    n = M.shape[0]
    r = np.ones(n)
    l = np.ones(n)
    rho_old = np.inf
    resid = np.inf

    # Each step moves every value by a whole number of cells, so when all
    # shifts have equal parity the propagator is bipartite and -rho is also
    # an eigenvalue. Averaging an iterate with its image projects that
    # mirror component out.
    def project(x, A, rho):
        y = x + (A @ x) / rho
        return y / np.abs(y).max()

    for it in range(1, max_iter + 1):
        Mr = M @ r
        rho = float(l @ Mr) / float(l @ r)
        r = Mr / np.abs(Mr).max()
        l = MT @ l
        l /= np.abs(l).max()
        resid = abs(rho - rho_old)
        rho_old = rho
        if resid < tol * abs(rho) and it > 10 and it % 10 == 0:
            rp, lp = project(r, M, rho), project(l, MT, rho)
            vres = max(np.abs(M @ rp - rho * rp).max(), np.abs(MT @ lp - rho * lp).max())
            if vres < vec_tol:
                r, l = rp, lp
                break
    else:
        raise ConvergenceError("power iteration did not converge", resid)
    if rho <= 0:
        raise ConvergenceError("non-positive growth factor", resid)
    lam = float(np.log(rho) / grid.dt)
    phi = r.reshape(grid.n_cells, grid.k)
    phi = phi / phi.max()
    lt = l.reshape(grid.n_cells, grid.k)
    lt = lt / (grid.h * np.sum(phi * lt))
    return EigenTriple(lam, phi, lt, grid, float(grid.h * lt.sum()), it, resid)


def dense_eigen(model: CrossSectionModel, grid: Grid, op: RodOperator | None = None) -> dict:
    """Dense eigensolve of the same propagator: principal and second eigenvalue."""
    op = op or RodOperator(model, grid)
    ev = np.linalg.eigvals(op.M.toarray())
    order = np.argsort(-np.abs(ev))
    ev = ev[order]
    top = ev[np.argmax(ev.real)]
    lam = float(np.log(top.real) / grid.dt) if top.real > 0 else float("-inf")
    # skip the bipartite mirror -rho of the principal eigenvalue
    rest = ev[np.abs(np.abs(ev) - abs(top)) > 1e-9 * abs(top)]
    second = rest[0] if rest.size else 0.0
    lam2 = complex(np.log(complex(second)) / grid.dt) if second != 0 else complex("-inf")
    return {"lam": lam, "rho": float(top.real), "second": lam2}


def richardson(lam_h: float, lam_h2: float, order: int = 2) -> float:
    """Extrapolate two estimates at h and h/2 for a scheme of the given order."""
    f = 2.0**order
    return (f * lam_h2 - lam_h) / (f - 1.0)


def two_stream_lambda(model: CrossSectionModel) -> float:
    """Exact principal eigenvalue for a homogeneous rod with V = {+v, -v}.

    Shoots the eigenfunction ODE across the rod and finds the largest lambda
    for which the outgoing boundary condition holds.
    """
    if model.velocities.k != 2 or model.zones.n_zones != 1:
        raise ValueError("two-stream oracle needs one zone and two velocities")
    v = model.velocities.array[:, 0]
    if not (v[0] > 0 > v[1]):
        raise ValueError("velocities must be ordered (+v, -v')")
    K = collision_matrix(model, 0)
    D_inv = np.diag(1.0 / v)
    L = model.domain.b - model.domain.a

    def f(lam):
        A = D_inv @ (lam * np.eye(2) - K)
        # start at the left end with the incoming (-) component zero
        return expm(A * L)[0, 0]

    hi = float(np.max(K.sum(axis=1))) + 1e-9
    step = 1e-3
    x1, f1 = hi, f(hi)
    while x1 > hi - 1e3:
        x0 = x1 - step
        f0 = f(x0)
        if np.sign(f0) != np.sign(f1):
            return float(brentq(f, x0, x1, xtol=1e-14, rtol=1e-15))
        x1, f1 = x0, f0
    raise ConvergenceError("no eigenvalue bracketed", abs(f1))


# ----------------------------------------------------------------- survival

@dataclass(frozen=True, eq=False)
class GridField:
    """Values on cell centers with piecewise-linear interpolation per velocity.

    At the boundary a velocity is leaving through, the field is pinned to
    ``outgoing``; at the boundary it enters through it is linearly
    extrapolated and clipped to ``clip``. ``outgoing=None`` swaps the roles,
    pinning the entering side to ``incoming``.
    """

    grid: Grid
    values: np.ndarray
    outgoing: float | None = None
    incoming: float | None = None
    clip: tuple[float, float] = (-np.inf, np.inf)

    def __post_init__(self):
        g = self.grid
        x = np.concatenate([[g.a], g.centers, [g.b]])
        ys = []
        for j in range(g.k):
            y = self.values[:, j]
            left = float(np.clip(1.5 * y[0] - 0.5 * y[1], *self.clip))
            right = float(np.clip(1.5 * y[-1] - 0.5 * y[-2], *self.clip))
            forward = g.speeds[j] > 0
            if self.outgoing is not None:
                if forward:
                    right = self.outgoing
                else:
                    left = self.outgoing
            if self.incoming is not None:
                if forward:
                    left = self.incoming
                else:
                    right = self.incoming
            ys.append(np.concatenate([[left], y, [right]]))
        object.__setattr__(self, "nodes", x)
        object.__setattr__(self, "node_values", np.asarray(ys))  # (k, n+2)

    def at(self, r: np.ndarray, vidx: np.ndarray) -> np.ndarray:
        r = np.asarray(r, dtype=float).reshape(-1)
        vidx = np.asarray(vidx).reshape(-1)
        x = self.nodes
        i = np.clip(np.searchsorted(x, r, side="right") - 1, 0, x.size - 2)
        t = (r - x[i]) / (x[i + 1] - x[i])
        y = self.node_values
        return (1 - t) * y[vidx, i] + t * y[vidx, i + 1]

    def __call__(self, ps) -> np.ndarray:
        return self.at(ps.r[:, 0], ps.vidx)

    @property
    def min(self) -> float:
        return float(self.node_values.min())

    @property
    def max(self) -> float:
        return float(self.node_values.max())


@dataclass
class SurvivalField:
    w: np.ndarray
    grid: Grid
    residual: float
    iterations: int
    subcritical: bool = False
    info: dict = field(default_factory=dict)

    @property
    def p(self) -> np.ndarray:
        return 1.0 - self.w

    def w_field(self) -> GridField:
        return GridField(self.grid, self.w, outgoing=1.0, clip=(0.0, 1.0))

    def p_field(self) -> GridField:
        return GridField(self.grid, self.p, outgoing=0.0, clip=(0.0, 1.0))


def collision_rhs(model: CrossSectionModel, zones: np.ndarray, u: np.ndarray) -> np.ndarray:
    """sigma_s (int u pi_s - u) + sigma_f (E prod u - u) per cell, u of shape (n, k)."""
    n, k = u.shape
    ss = model.sigma_s[zones]
    sf = model.sigma_f[zones]
    scat = np.einsum("njk,nk->nj", model.scatter.matrix[zones], u)
    zz = np.repeat(zones, k)
    jj = np.tile(np.arange(k), n)
    prod = model.fission.expected_product(zz, jj, np.repeat(u, k, axis=0)).reshape(n, k)
    return ss * (scat - u) + sf * (prod - u)


def _collide(model, zones, u, tau, substeps):
    h = tau / substeps
    for _ in range(substeps):
        k1 = collision_rhs(model, zones, u)
        k2 = collision_rhs(model, zones, u + 0.5 * h * k1)
        k3 = collision_rhs(model, zones, u + 0.5 * h * k2)
        k4 = collision_rhs(model, zones, u + h * k3)
        u = u + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return u


def nonlinear_step(model: CrossSectionModel, grid: Grid, u: np.ndarray,
                   zones: np.ndarray | None = None, substeps: int = 2) -> np.ndarray:
    """One grid step of u_t[g] = E prod g(X_t) with g(cemetery) = 1."""
    if zones is None:
        zones = model.zone_of(grid.centers[:, None])
    u = _collide(model, zones, u, grid.dt / 2, substeps)
    u = _shift(grid, u, 1.0)
    return _collide(model, zones, u, grid.dt / 2, substeps)


def step_u(model: CrossSectionModel, grid: Grid, g: np.ndarray, t: float) -> np.ndarray:
    n = grid.steps_for(t)
    zones = model.zone_of(grid.centers[:, None])
    u = np.asarray(g, dtype=float).copy()
    for _ in range(n):
        u = nonlinear_step(model, grid, u, zones)
    return u


def stationary_residual(model: CrossSectionModel, grid: Grid, w: np.ndarray) -> float:
    """Sup-norm of the discrete generator applied to w: (step(w) - w) / dt."""
    return float(np.abs(nonlinear_step(model, grid, w) - w).max() / grid.dt)


def flight_survival(model: CrossSectionModel, grid: Grid) -> np.ndarray:
    """exp(-integral of sigma along the flight to the boundary) from each center."""
    out = np.empty((grid.n_cells, grid.k))
    # integrate the piecewise-constant total rate on a fine sub-grid of cell faces
    faces = np.linspace(grid.a, grid.b, grid.n_cells + 1)
    mids = (faces[:-1] + faces[1:]) / 2
    z = model.zone_of(mids[:, None])
    for j in range(grid.k):
        sig = model.sigma_s[z, j] + model.sigma_f[z, j]
        v = abs(grid.speeds[j])
        cell_cost = sig * grid.h / v
        if grid.speeds[j] > 0:
            after = np.concatenate([np.cumsum(cell_cost[::-1])[::-1][1:], [0.0]])
        else:
            after = np.concatenate([[0.0], np.cumsum(cell_cost)[:-1]])
        out[:, j] = np.exp(-(after + cell_cost / 2))
    return out


def solve_w(model: CrossSectionModel, grid: Grid, horizon: float = 1e4, tol: float = 1e-8,
            substeps: int = 2) -> SurvivalField:
    """Extinction probability as the monotone limit of u_t[0].

    Stops when the sup-norm increment per unit time drops below ``tol``.
    Raises if the iteration ever decreases (a numerical fault) or the horizon
    is exhausted.
    """
    zones = model.zone_of(grid.centers[:, None])
    u = np.zeros((grid.n_cells, grid.k))
    n_max = int(np.ceil(horizon / grid.dt))
    inc = np.inf
    for it in range(1, n_max + 1):
        nu = nonlinear_step(model, grid, u, zones, substeps)
        if np.any(nu < u - 1e-12):
            raise MonotonicityError(f"u_t[0] decreased at step {it}")
        inc = float(np.abs(nu - u).max() / grid.dt)
        u = nu
        if inc < tol:
            break
    else:
        raise ConvergenceError("extinction iteration hit the horizon", inc)
    u = np.minimum(u, 1.0)
    res = stationary_residual(model, grid, u)
    sub = bool(np.all(u > 1.0 - 1e-6))
    return SurvivalField(u, grid, res, it, sub, {"increment": inc})


def solve_w_spaceless(count_probs, rate: float = 1.0, tol: float = 1e-12,
                      dt: float = 0.05) -> dict:
    """Extinction probability of a continuous-time GW process by monotone
    time-stepping of du/dt = rate (f(u) - u) from u = 0 (classical RK4)."""
    c = np.asarray(count_probs, dtype=float)

    def rhs(u):
        return rate * (np.polynomial.polynomial.polyval(u, c) - u)

    u, it = 0.0, 0
    while True:
        k1 = rhs(u)
        k2 = rhs(u + dt / 2 * k1)
        k3 = rhs(u + dt / 2 * k2)
        k4 = rhs(u + dt * k3)
        nu = u + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        it += 1
        if nu < u:
            raise MonotonicityError("spaceless iteration decreased")
        done = abs(nu - u) < tol * dt
        u = nu
        if done or it > 10**7:
            break
    return {"w": float(u), "residual": float(abs(rhs(u))), "iterations": it}


def survival_checks(model: CrossSectionModel, sf: SurvivalField) -> dict:
    """Bounds exp(-int sigma) <= w < 1 cell-wise and the p floor."""
    lower = flight_survival(model, sf.grid)
    return {
        "lower_bound_ok": bool(np.all(sf.w >= lower - 1e-12)),
        "lower_bound_margin": float((sf.w - lower).min()),
        "below_one_ok": bool(np.all(sf.w < 1.0)),
        "p_min": float(sf.p.min()),
    }


def down_growth_rate(model: CrossSectionModel, sf: SurvivalField) -> float:
    """Growth rate of the linearization of the extinction step at w.

    This is the principal eigenvalue of the doomed process' mean semigroup
    (the two operators are conjugate through multiplication by w).
    """
    grid = sf.grid
    zones = model.zone_of(grid.centers[:, None])
    w = sf.w
    base = nonlinear_step(model, grid, w, zones)
    n = w.size
    J = np.empty((n, n))
    eps = 1e-7
    for i in range(n):
        e = np.zeros(n)
        e[i] = eps
        J[:, i] = ((nonlinear_step(model, grid, w + e.reshape(w.shape), zones) - base) / eps).ravel()
    ev = np.linalg.eigvals(J)
    rho = float(np.abs(ev).max())
    return float(np.log(rho) / grid.dt)


def phi_over_p_max(eig: EigenTriple, sf: SurvivalField) -> float:
    return float((eig.phi / sf.p).max())


def rod_field(grid: Grid, values: np.ndarray, kind: str) -> GridField:
    """Interpolating field for phi (vanishes leaving), phi~ (vanishes entering)."""
    if kind == "phi":
        return GridField(grid, values, outgoing=0.0, clip=(0.0, np.inf))
    if kind == "phi_tilde":
        return GridField(grid, values, incoming=0.0, clip=(0.0, np.inf))
    raise ValueError(kind)
