"""Geometry of the physical domain, velocity spaces and straight-line flights."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np

# Absolute tolerance on coordinates for boundary membership.
BOUNDARY_TOL = 1e-12

AdvectMode = Literal["kill", "stop"]


class SpatialDomain:
    """Open, bounded, convex region. Subclasses supply vectorized exit times."""

    dim: int

    def exit_times(self, r: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Exit times for rows of ``r`` (n, dim) moving with rows of ``v``."""
        raise NotImplementedError

    def contains(self, r: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    @property
    def diameter(self) -> float:
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError

    def _check(self, r: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        r = np.atleast_2d(np.asarray(r, dtype=float))
        v = np.atleast_2d(np.asarray(v, dtype=float))
        if r.shape[1] != self.dim or v.shape[1] != self.dim:
            raise ValueError(f"expected {self.dim}-dimensional coordinates")
        if np.any(np.all(v == 0.0, axis=1)):
            raise ValueError("zero velocity has no exit time")
        return r, v


def _slab_exit(x: np.ndarray, u: np.ndarray, lo, hi) -> np.ndarray:
    """Per-axis exit time from [lo, hi] moving with speed u (inf when u == 0)."""
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(u > 0, (hi - x) / u, np.where(u < 0, (lo - x) / u, np.inf))
    # Within tolerance of the face being left: already exited.
    t = np.where((u > 0) & (hi - x <= BOUNDARY_TOL), 0.0, t)
    t = np.where((u < 0) & (x - lo <= BOUNDARY_TOL), 0.0, t)
    return np.maximum(t, 0.0)


@dataclass(frozen=True)
class Interval(SpatialDomain):
    a: float
    b: float
    dim = 1

    def __post_init__(self):
        if not (math.isfinite(self.a) and math.isfinite(self.b)) or not self.a < self.b:
            raise ValueError("interval requires finite a < b")

    def exit_times(self, r, v):
        r, v = self._check(r, v)
        return _slab_exit(r[:, 0], v[:, 0], self.a, self.b)

    def contains(self, r):
        r = np.atleast_2d(np.asarray(r, dtype=float))
        return (r[:, 0] > self.a) & (r[:, 0] < self.b)

    @property
    def diameter(self):
        return self.b - self.a

    def to_dict(self):
        return {"type": "interval", "a": self.a, "b": self.b}


@dataclass(frozen=True)
class Box(SpatialDomain):
    lo: tuple[float, ...]
    hi: tuple[float, ...]

    def __post_init__(self):
        if len(self.lo) != len(self.hi) or len(self.lo) == 0:
            raise ValueError("box corners must have equal, positive dimension")
        if any(not l < h for l, h in zip(self.lo, self.hi)):
            raise ValueError("box requires lo < hi on every axis")

    @property
    def dim(self):
        return len(self.lo)

    def exit_times(self, r, v):
        r, v = self._check(r, v)
        lo = np.asarray(self.lo)
        hi = np.asarray(self.hi)
        return _slab_exit(r, v, lo, hi).min(axis=1)

    def contains(self, r):
        r = np.atleast_2d(np.asarray(r, dtype=float))
        return np.all((r > np.asarray(self.lo)) & (r < np.asarray(self.hi)), axis=1)

    @property
    def diameter(self):
        return float(np.linalg.norm(np.asarray(self.hi) - np.asarray(self.lo)))

    def to_dict(self):
        return {"type": "box", "lo": list(self.lo), "hi": list(self.hi)}


@dataclass(frozen=True)
class Ball(SpatialDomain):
    center: tuple[float, ...]
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("ball radius must be positive")

    @property
    def dim(self):
        return len(self.center)

    def exit_times(self, r, v):
        r, v = self._check(r, v)
        d = r - np.asarray(self.center)
        a = np.einsum("ij,ij->i", v, v)
        b = np.einsum("ij,ij->i", d, v)
        c = np.einsum("ij,ij->i", d, d) - self.radius**2
        disc = np.maximum(b * b - a * c, 0.0)
        sq = np.sqrt(disc)
        # Positive root of a t^2 + 2 b t + c = 0 without cancellation.
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(b > 0, -c / (b + sq), (sq - b) / a)
        dist = np.sqrt(np.einsum("ij,ij->i", d, d))
        outward = (b > 0) & (self.radius - dist <= BOUNDARY_TOL)
        t = np.where(outward, 0.0, t)
        return np.maximum(t, 0.0)

    def contains(self, r):
        r = np.atleast_2d(np.asarray(r, dtype=float))
        d = r - np.asarray(self.center)
        return np.einsum("ij,ij->i", d, d) < self.radius**2

    @property
    def diameter(self):
        return 2.0 * self.radius

    def to_dict(self):
        return {"type": "ball", "center": list(self.center), "radius": self.radius}


def domain_from_dict(d: dict) -> SpatialDomain:
    kind = d.get("type")
    if kind == "interval":
        return Interval(float(d["a"]), float(d["b"]))
    if kind == "box":
        return Box(tuple(map(float, d["lo"])), tuple(map(float, d["hi"])))
    if kind == "ball":
        return Ball(tuple(map(float, d["center"])), float(d["radius"]))
    raise ValueError(f"unknown domain type {kind!r}")


class VelocitySpace:
    v_min: float
    v_max: float
    dim: int


@dataclass(frozen=True)
class DiscreteVelocities(VelocitySpace):
    """Finite velocity set; rows of ``values`` are the velocities."""

    values: tuple[tuple[float, ...], ...]

    def __post_init__(self):
        arr = self.array
        if arr.ndim != 2 or arr.shape[0] == 0:
            raise ValueError("need at least one velocity")
        if np.any(self.speeds <= 0):
            raise ValueError("velocities must have positive speed")

    @classmethod
    def from_array(cls, arr) -> "DiscreteVelocities":
        arr = np.atleast_2d(np.asarray(arr, dtype=float))
        return cls(tuple(tuple(map(float, row)) for row in arr))

    @classmethod
    def line(cls, speeds) -> "DiscreteVelocities":
        """One-dimensional velocities from a flat list of signed speeds."""
        return cls(tuple((float(s),) for s in speeds))

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)

    @property
    def k(self) -> int:
        return len(self.values)

    @property
    def dim(self) -> int:
        return len(self.values[0])

    @property
    def speeds(self) -> np.ndarray:
        return np.linalg.norm(self.array, axis=1)

    @property
    def v_min(self) -> float:
        return float(self.speeds.min())

    @property
    def v_max(self) -> float:
        return float(self.speeds.max())

    def index_of(self, v) -> int:
        d = np.linalg.norm(self.array - np.asarray(v, dtype=float), axis=1)
        i = int(np.argmin(d))
        if d[i] > 1e-9:
            raise ValueError(f"velocity {v} is not a member of the discrete set")
        return i

    def to_dict(self):
        return {"type": "discrete", "values": [list(v) for v in self.values]}


@dataclass(frozen=True)
class VelocityAnnulus(VelocitySpace):
    """Continuous set {v : v_min <= |v| <= v_max} in ``dim`` dimensions."""

    v_min: float
    v_max: float
    dim: int = 3

    def __post_init__(self):
        if not 0 < self.v_min < self.v_max < math.inf:
            raise ValueError("annulus requires 0 < v_min < v_max < inf")

    @property
    def volume(self) -> float:
        unit = math.pi ** (self.dim / 2) / math.gamma(self.dim / 2 + 1)
        return unit * (self.v_max**self.dim - self.v_min**self.dim)

    def sample_uniform(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Uniform draws from the annulus (isotropic direction, |v|^(d-1) speed law)."""
        g = rng.standard_normal((n, self.dim))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        u = rng.random(n)
        lo, hi = self.v_min**self.dim, self.v_max**self.dim
        s = (lo + u * (hi - lo)) ** (1.0 / self.dim)
        return g * s[:, None]

    def to_dict(self):
        return {"type": "annulus", "v_min": self.v_min, "v_max": self.v_max, "dim": self.dim}


def velocities_from_dict(d: dict) -> VelocitySpace:
    kind = d.get("type")
    if kind == "discrete":
        return DiscreteVelocities(tuple(tuple(map(float, row)) for row in d["values"]))
    if kind == "annulus":
        return VelocityAnnulus(float(d["v_min"]), float(d["v_max"]), int(d.get("dim", 3)))
    raise ValueError(f"unknown velocity space {kind!r}")


@dataclass(frozen=True)
class PhasePoint:
    """A neutron configuration (r, v); ``alive=False`` is the cemetery."""

    r: tuple[float, ...] = ()
    v: tuple[float, ...] = ()
    alive: bool = True

    def __post_init__(self):
        if not self.alive and (self.r or self.v):
            raise ValueError("the cemetery point carries no coordinates")

    @classmethod
    def cemetery(cls) -> "PhasePoint":
        return cls((), (), False)

    @classmethod
    def of(cls, r, v) -> "PhasePoint":
        return cls(tuple(np.atleast_1d(np.asarray(r, dtype=float)).tolist()),
                   tuple(np.atleast_1d(np.asarray(v, dtype=float)).tolist()))


def exit_time(r, v, domain: SpatialDomain) -> float:
    """Time until r + v t leaves the domain."""
    r = np.atleast_1d(np.asarray(r, dtype=float))
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if not np.any(v):
        raise ValueError("zero velocity has no exit time")
    return float(domain.exit_times(r[None, :], v[None, :])[0])


def advect(x: PhasePoint, t: float, domain: SpatialDomain, mode: AdvectMode = "kill") -> PhasePoint:
    """Straight-line flight for time t.

    ``kill`` returns the cemetery once t >= exit time; ``stop`` parks the
    particle on the boundary point it reaches.
    """
    if t < 0:
        raise ValueError("negative flight time")
    if not x.alive:
        raise ValueError("cannot advect the cemetery")
    r = np.asarray(x.r, dtype=float)
    v = np.asarray(x.v, dtype=float)
    kappa = exit_time(r, v, domain)
    if mode == "kill":
        if t >= kappa:
            return PhasePoint.cemetery()
        s = t
    elif mode == "stop":
        s = min(t, kappa)
    else:
        raise ValueError(f"unknown advect mode {mode!r}")
    return PhasePoint(tuple((r + v * s).tolist()), x.v)


def max_exit_time(domain: SpatialDomain, velocities: VelocitySpace) -> float:
    """Upper bound diam(D)/v_min on every exit time."""
    return domain.diameter / velocities.v_min
