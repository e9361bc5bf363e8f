"""The objective transform induced by an advantage schedule.

With phi[s] = b[s] - a[s] the expected Algorithm-1 update is the gradient of

    h_M(t) = (1/M) sum_s phi[s] I_t(s+1, M-s)

evaluated at the pass probability t, and its derivative is the Bernstein polynomial

    kappa(t) = sum_s phi[s] C(M-1, s) t^s (1-t)^(M-1-s).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable, Sequence, TextIO

from .errors import DegenerateScheduleError, DomainError
from .schedule import AdvantageSchedule
from .specfun import (
    binom_pmf_row,
    check_probability,
    harmonic,
    is_float,
    reg_inc_beta_int,
    survival_row,
)

SWEEP_HEADER = ("label", "M", "eps", "t", "h", "kappa", "h_normalized")


@dataclass(frozen=True)
class InducedTransform:
    M: int
    phi: tuple
    label: str = "induced"
    eps: float | None = None

    def __post_init__(self):
        if len(self.phi) != self.M:
            raise ValueError(f"phi must have length M={self.M}, got {len(self.phi)}")

    def evaluate(self, t):
        return eval_h(self, t)

    def derivative(self, t):
        return eval_kappa(self, t)


def induced(sched: AdvantageSchedule) -> InducedTransform:
    return InducedTransform(sched.M, sched.phi, sched.label, sched.eps)


def _weighted_sum(weights: Sequence, values: Sequence, t):
    if is_float(t):
        return math.fsum(float(w) * v for w, v in zip(weights, values))
    total = 0 * t
    for w, v in zip(weights, values):
        total += w * v
    return total


def eval_h(tr: InducedTransform, t, method: str = "fast"):
    """h_M(t).

    ``method="fast"`` shares one binomial survival pass across all s (O(M));
    ``method="direct"`` calls the incomplete beta kernel once per s (O(M^2)).
    """
    check_probability(t)
    M = tr.M
    if method == "fast":
        tails = survival_row(M, t)
    elif method == "direct":
        tails = [reg_inc_beta_int(s + 1, M - s, t) for s in range(M)]
    else:
        raise ValueError(f"unknown method {method!r}")
    return _weighted_sum(tr.phi, tails, t) / M


def eval_kappa(tr: InducedTransform, t):
    """kappa(t) = h_M'(t)."""
    check_probability(t)
    return _weighted_sum(tr.phi, binom_pmf_row(tr.M - 1, t), t)


def rejection_closed_form(M: int, t):
    """H_M - sum_{r=1}^{M} (1-t)^r / r.

    Equal to log t + H_M + sum_{r>M} (1-t)^r / r, i.e. the transform induced by
    the mean-of-correct schedule, written without the infinite tail.
    """
    check_probability(t)
    if t == 0:
        raise DomainError("the rejection-sampling transform diverges at t = 0")
    u = 1 - t
    if is_float(t):
        return harmonic(M) - math.fsum(u**r / r for r in range(1, M + 1))
    total = 0 * t
    for r in range(1, M + 1):
        total += (1 - u**r) / (0 * t + r)
    return total


def h_at_one(tr: InducedTransform):
    """h_M(1) = (1/M) sum_s phi[s], since every I_1 term equals one."""
    if all(is_float(p) for p in tr.phi):
        return math.fsum(float(p) for p in tr.phi) / tr.M
    return sum(tr.phi) / tr.M


def normalized_h(tr: InducedTransform, t):
    denom = h_at_one(tr)
    if denom == 0:
        raise DegenerateScheduleError(f"h_M(1) = 0 for {tr.label} (M={tr.M}); cannot normalize")
    return eval_h(tr, t) / denom


@dataclass(frozen=True)
class SweepRow:
    label: str
    M: int
    eps: float | None
    t: float
    h: float
    kappa: float
    h_normalized: float | None


def uniform_grid(n: int = 101, lo: float = 0.0, hi: float = 1.0) -> list[float]:
    if n < 2:
        return [lo]
    # Endpoints exact; interior points by i/(n-1) to keep 0.25, 0.5, ... exact.
    return [lo + (hi - lo) * i / (n - 1) for i in range(n)]


def sweep(tr: InducedTransform, grid: Iterable[float]) -> list[SweepRow]:
    """Tabulate h, kappa and h/h(1) on a grid (normalized column empty if h(1) = 0)."""
    denom = h_at_one(tr)
    rows = []
    for t in grid:
        h = eval_h(tr, t)
        rows.append(SweepRow(
            tr.label, tr.M, tr.eps, float(t), float(h), float(eval_kappa(tr, t)),
            float(h / denom) if denom != 0 else None,
        ))
    return rows


def fmt_float(x) -> str:
    if x is None:
        return ""
    return format(float(x), ".17g")


def write_sweep_csv(rows: Iterable[SweepRow], fh: TextIO, header: bool = True) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    if header:
        writer.writerow(SWEEP_HEADER)
    for r in rows:
        writer.writerow([
            r.label, r.M, fmt_float(r.eps), fmt_float(r.t), fmt_float(r.h),
            fmt_float(r.kappa), fmt_float(r.h_normalized),
        ])
