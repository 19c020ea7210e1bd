"""Agreement statistics between a candidate and a reference series."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import SampledSeries

DEFAULT_THRESHOLDS = {
    "rr": ("10%", "20%"),
    "tv": ("10%", "20%"),
    "hr": ("5%", "10%"),
    "spo2": ("3", "6"),
}


@dataclass(frozen=True, eq=False)
class PairedSamples:
    candidate: np.ndarray
    reference: np.ndarray
    times: np.ndarray

    def __len__(self) -> int:
        return self.candidate.size


@dataclass(frozen=True)
class Threshold:
    """Coverage band: relative (percent of reference) or absolute (output units)."""

    value: float
    relative: bool

    @classmethod
    def parse(cls, text: str) -> "Threshold":
        t = str(text).strip().lstrip("±+")
        relative = t.endswith("%")
        value = float(t.rstrip("%"))
        if value < 0:
            raise ValueError(f"negative threshold {text!r}")
        return cls(value, relative)

    @property
    def label(self) -> str:
        v = f"{self.value:g}"
        return f"{v}%" if self.relative else v

    def half_width(self, reference: np.ndarray) -> np.ndarray:
        if self.relative:
            return self.value / 100.0 * np.abs(reference)
        return np.full(np.shape(reference), self.value)


@dataclass(frozen=True)
class AgreementReport:
    mae: float
    mse: float
    bias: float
    sd_diff: float
    loa_low: float
    loa_high: float
    n: int
    cp: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "n": self.n, "mae": self.mae, "mse": self.mse, "bias": self.bias,
            "sd_diff": self.sd_diff, "loa_low": self.loa_low, "loa_high": self.loa_high,
            "cp": dict(self.cp),
        }


def _index_range(s: SampledSeries) -> tuple[float, float]:
    return s.start_time, s.start_time + len(s) / s.rate


def align(candidate: SampledSeries, reference: SampledSeries, rel_tol: float = 1e-9) -> PairedSamples:
    """Pair samples on the grid of the lower-rate series.

    The higher-rate series is averaged over each lower-rate period
    ``[t_k, t_k + 1/rate)``; equal rates pair samples by nearest start
    offset. Pairs with either side missing are dropped.
    """
    c0, c1 = _index_range(candidate)
    r0, r1 = _index_range(reference)
    if len(candidate) == 0 or len(reference) == 0 or min(c1, r1) <= max(c0, r0):
        raise ValueError("no overlap between candidate and reference")
    swap = candidate.rate > reference.rate * (1 + rel_tol)
    low, high = (reference, candidate) if swap else (candidate, reference)
    n_low = len(low)
    if math.isclose(low.rate, high.rate, rel_tol=rel_tol):
        bins = np.rint((high.times - low.start_time) * low.rate).astype(np.int64)
    else:
        bins = np.floor((high.times - low.start_time) * low.rate + 1e-9).astype(np.int64)
    keep = (bins >= 0) & (bins < n_low) & high.present
    sums = np.bincount(bins[keep], weights=high.values[keep], minlength=n_low)[:n_low]
    counts = np.bincount(bins[keep], minlength=n_low)[:n_low]
    ok = (counts > 0) & low.present
    high_vals = sums[ok] / counts[ok]
    low_vals = low.values[ok]
    if not ok.any():
        raise ValueError("no overlap: no sample pairs with both sides present")
    cand, ref = (high_vals, low_vals) if swap else (low_vals, high_vals)
    return PairedSamples(cand, ref, low.times[ok])


def coverage(candidate: np.ndarray, reference: np.ndarray, threshold: Threshold) -> float:
    diff = np.abs(np.asarray(candidate, float) - np.asarray(reference, float))
    return float(np.mean(diff <= threshold.half_width(reference)))


def agreement(pairs: PairedSamples, thresholds: Sequence[str] = ("10%", "20%")) -> AgreementReport:
    n = len(pairs)
    if n < 2:
        raise ValueError("agreement needs at least 2 pairs")
    x = np.asarray(pairs.candidate, dtype=float)
    y = np.asarray(pairs.reference, dtype=float)
    d = x - y
    bias = float(d.mean())
    sd = float(d.std(ddof=1))
    cp = {}
    for t in thresholds:
        th = Threshold.parse(t)
        cp[th.label] = coverage(x, y, th)
    return AgreementReport(
        mae=float(np.abs(d).mean()),
        mse=float((d * d).mean()),
        bias=bias,
        sd_diff=sd,
        loa_low=bias - 2.0 * sd,
        loa_high=bias + 2.0 * sd,
        n=n,
        cp=cp,
    )


def bland_altman_points(pairs: PairedSamples) -> np.ndarray:
    """``(n, 2)`` array of (pair mean, candidate minus reference)."""
    x, y = pairs.candidate, pairs.reference
    return np.column_stack([(x + y) / 2.0, x - y])


# ---------------------------------------------------------------------------
# Mann-Whitney U
# ---------------------------------------------------------------------------

def _midranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(values.size)
    sorted_vals = values[order]
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def _exact_tails(doubled: np.ndarray, n_a: int, observed: int) -> tuple[float, float]:
    """P(S <= observed), P(S >= observed) for S the doubled rank sum of a random n_a-subset."""
    total = int(doubled.sum())
    # ways[k, s]: subsets of size k with doubled rank sum s
    ways = np.zeros((n_a + 1, total + 1))
    ways[0, 0] = 1.0
    for v in doubled.astype(int):
        ways[1:, v:] += ways[:-1, :total + 1 - v].copy()
    dist = ways[n_a]
    dist = dist / dist.sum()
    return float(dist[:observed + 1].sum()), float(dist[observed:].sum())


def mann_whitney_u(group_a: Sequence[float], group_b: Sequence[float], method: str = "auto",
                   two_sided: bool = True, exact_limit: int = 400) -> tuple[float, float]:
    """U statistic of ``group_a`` and its p-value.

    ``U`` counts pairs with a > b plus half the ties. ``method="auto"``
    enumerates the permutation distribution exactly when
    ``n_a * n_b <= exact_limit`` and otherwise uses the tie-corrected normal
    approximation with continuity correction. The one-sided alternative is
    "a tends to be larger".
    """
    a = np.asarray(group_a, dtype=float)
    b = np.asarray(group_b, dtype=float)
    n_a, n_b = a.size, b.size
    if n_a == 0 or n_b == 0:
        raise ValueError("both groups must be nonempty")
    ranks = _midranks(np.concatenate([a, b]))
    rank_sum = ranks[:n_a].sum()
    u = float(rank_sum - n_a * (n_a + 1) / 2.0)
    if method == "auto":
        method = "exact" if n_a * n_b <= exact_limit else "asymptotic"
    if method == "exact":
        doubled = np.rint(2.0 * ranks).astype(int)
        lower, upper = _exact_tails(doubled, n_a, int(doubled[:n_a].sum()))
        p = 2.0 * min(lower, upper) if two_sided else upper
    elif method == "asymptotic":
        n = n_a + n_b
        _, tie_counts = np.unique(ranks, return_counts=True)
        tie_term = float((tie_counts ** 3 - tie_counts).sum())
        var = n_a * n_b / 12.0 * ((n + 1) - tie_term / (n * (n - 1))) if n > 1 else 0.0
        mu = n_a * n_b / 2.0
        if var <= 0:
            return u, 1.0
        sd = math.sqrt(var)
        if two_sided:
            z = max(abs(u - mu) - 0.5, 0.0) / sd
            p = math.erfc(z / math.sqrt(2.0))
        else:
            z = (u - mu - 0.5) / sd
            p = 0.5 * math.erfc(z / math.sqrt(2.0))
    else:
        raise ValueError(f"unknown method {method!r}")
    return u, float(min(1.0, p))
