"""Statistical primitives with fixed conventions: CIs, a two-sample chi-square
test for integer counts, and counter-based RNG streams."""
from __future__ import annotations

import zlib
from dataclasses import asdict, dataclass, field
from typing import Any, Callable

import numpy as np
from scipy import stats as sps

# Two-sided level whose half-width is three standard errors.
THREE_SIGMA_LEVEL = float(sps.norm.cdf(3.0) - sps.norm.cdf(-3.0))


def _tag_key(tag: str) -> int:
    return zlib.crc32(tag.encode("utf-8"))


def stream(seed: int, replicate: int = 0, tag: str = "main") -> np.random.Generator:
    """Independent generator keyed by (master seed, replicate index, purpose tag).

    Derivation is a pure function of the key, so the stream handed to a
    replicate does not depend on scheduling or on other draw sites.
    """
    if seed < 0 or replicate < 0:
        raise ValueError("seed and replicate index must be non-negative")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(replicate), _tag_key(tag)))
    return np.random.Generator(np.random.Philox(ss))


@dataclass
class TestReport:
    """Outcome of one statistical or numerical check.

    ``passed`` is derived from the other fields through ``rule``:
    ``"le"`` means value <= threshold, ``"ge"`` value >= threshold,
    ``"abs_le"`` |value| <= threshold, ``"p_ge"`` p_value >= threshold,
    ``"within"`` |value - target| <= threshold.
    """

    __test__ = False  # keep pytest from collecting this class

    name: str
    value: float
    threshold: float
    rule: str = "le"
    p_value: float | None = None
    target: float | None = None
    seed: int | None = None
    sample_sizes: tuple[int, ...] = ()
    details: dict[str, Any] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        v, th = self.value, self.threshold
        if self.rule == "le":
            return bool(v <= th)
        if self.rule == "ge":
            return bool(v >= th)
        if self.rule == "abs_le":
            return bool(abs(v) <= th)
        if self.rule == "p_ge":
            return self.p_value is not None and bool(self.p_value >= th)
        if self.rule == "within":
            return self.target is not None and bool(abs(v - self.target) <= th)
        raise ValueError(f"unknown rule {self.rule!r}")

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["sample_sizes"] = list(self.sample_sizes)
        d["passed"] = self.passed
        return _jsonable(d)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = f" p={self.p_value:.4g}" if self.p_value is not None else ""
        tgt = f" target={self.target:.6g}" if self.target is not None else ""
        return f"[{status}] {self.name}: value={self.value:.6g}{tgt} threshold={self.threshold:.6g}{extra}"


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def mc_mean_ci(samples, level: float = 0.95) -> tuple[float, float]:
    """Normal-approximation CI: returns (mean, half-width)."""
    x = np.asarray(samples, dtype=float).ravel()
    n = x.size
    if n < 2:
        raise ValueError("need at least two samples")
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    z = sps.norm.ppf(0.5 + level / 2.0)
    return float(x.mean()), float(z * x.std(ddof=1) / np.sqrt(n))


def mean_se(samples) -> tuple[float, float]:
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < 2:
        raise ValueError("need at least two samples")
    return float(x.mean()), float(x.std(ddof=1) / np.sqrt(x.size))


def _merge_bins(ca: np.ndarray, cb: np.ndarray, min_expected: float) -> tuple[np.ndarray, np.ndarray]:
    na, nb = ca.sum(), cb.sum()
    n = na + nb
    # The smaller sample has the smaller expected count in every bin.
    frac = min(na, nb) / n
    out_a, out_b = [], []
    acc_a = acc_b = 0
    for a, b in zip(ca, cb):
        acc_a += a
        acc_b += b
        if (acc_a + acc_b) * frac >= min_expected:
            out_a.append(acc_a)
            out_b.append(acc_b)
            acc_a = acc_b = 0
    if acc_a or acc_b:
        if out_a:
            out_a[-1] += acc_a
            out_b[-1] += acc_b
        else:
            out_a.append(acc_a)
            out_b.append(acc_b)
    return np.asarray(out_a, dtype=float), np.asarray(out_b, dtype=float)


def two_sample_test(counts_a, counts_b, *, min_expected: float = 5.0,
                    name: str = "two-sample chi2", alpha: float = 0.01,
                    seed: int | None = None) -> TestReport:
    """Chi-square homogeneity test for two samples of non-negative integers.

    Values are tallied per integer, then adjacent bins are merged left to
    right until each merged bin has expected count >= ``min_expected`` in
    both samples; a short tail is folded into the last bin.
    """
    a = np.asarray(counts_a)
    b = np.asarray(counts_b)
    if a.size == 0 or b.size == 0:
        raise ValueError("empty sample")
    if not (np.issubdtype(a.dtype, np.integer) or np.all(a == np.round(a))):
        raise ValueError("samples must be integer valued")
    if not (np.issubdtype(b.dtype, np.integer) or np.all(b == np.round(b))):
        raise ValueError("samples must be integer valued")
    a = a.astype(np.int64)
    b = b.astype(np.int64)
    lo = int(min(a.min(), b.min()))
    hi = int(max(a.max(), b.max()))
    ca = np.bincount(a - lo, minlength=hi - lo + 1)
    cb = np.bincount(b - lo, minlength=hi - lo + 1)
    ma, mb = _merge_bins(ca, cb, min_expected)
    if ma.size < 2:
        raise ValueError("fewer than two effective bins after merging")
    table = np.vstack([ma, mb])
    col = table.sum(axis=0)
    row = table.sum(axis=1)
    expected = np.outer(row, col) / table.sum()
    chi2 = float(((table - expected) ** 2 / expected).sum())
    dof = ma.size - 1
    p = float(sps.chi2.sf(chi2, dof))
    return TestReport(name=name, value=chi2, threshold=alpha, rule="p_ge", p_value=p,
                      seed=seed, sample_sizes=(int(a.size), int(b.size)),
                      details={"bins": int(ma.size), "dof": dof})


def overlap_3se(m1: float, s1: float, m2: float, s2: float) -> bool:
    """True when the two 3-s.e. intervals intersect."""
    return abs(m1 - m2) <= 3.0 * (s1 + s2)


def bootstrap_ci(data: np.ndarray, statistic: Callable[[np.ndarray], float], *,
                 n_boot: int = 1000, level: float = 0.95,
                 rng: np.random.Generator) -> tuple[float, float]:
    """Percentile bootstrap over the first axis of ``data``."""
    data = np.asarray(data)
    n = data.shape[0]
    vals = np.empty(n_boot)
    for b in range(n_boot):
        idx = rng.integers(0, n, size=n)
        vals[b] = statistic(data[idx])
    q = (1.0 - level) / 2.0
    lo, hi = np.quantile(vals, [q, 1.0 - q])
    return float(lo), float(hi)
