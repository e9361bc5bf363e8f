"""Scalar kernels: binomial coefficients and pmfs, the integer-shape regularized
incomplete beta function, harmonic numbers and the reference transforms.

Every kernel accepts a plain ``float`` and takes a fast, compensated float path.
Exact number types (``fractions.Fraction``) and ``mpmath.mpf`` are accepted too,
in which case the same sums are carried out in that arithmetic. This is what
lets tests resolve quantities far below double-precision resolution.
"""
from __future__ import annotations

import enum
import math
import numbers
from fractions import Fraction
from functools import lru_cache

from .errors import DomainError, ObjectiveUndefinedError

# Above this n the float path works in log space (C(n, n/2) overflows near n = 1030,
# and t**k underflows long before that).
DIRECT_MAX_N = 256


def _check_count(name: str, value) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        try:
            as_int = int(value)
        except (TypeError, ValueError):
            raise DomainError(f"{name} must be an integer, got {value!r}") from None
        if as_int != value:
            raise DomainError(f"{name} must be an integer, got {value!r}")
        value = as_int
    if value < 0:
        raise DomainError(f"{name} must be nonnegative, got {value}")
    return value


def check_probability(t):
    """Raise DomainError unless 0 <= t <= 1 (NaN is rejected)."""
    if not (0 <= t <= 1):
        raise DomainError(f"probability must lie in [0, 1], got {t!r}")
    return t


def is_float(t) -> bool:
    return isinstance(t, (float, numbers.Integral)) and not isinstance(t, bool)


@lru_cache(maxsize=128)
def _comb_row(n: int) -> tuple[int, ...]:
    row = [1] * (n + 1)
    c = 1
    for j in range(1, n + 1):
        c = c * (n - j + 1) // j
        row[j] = c
    return tuple(row)


@lru_cache(maxsize=128)
def _comb_row_float(n: int) -> tuple[float, ...]:
    return tuple(float(c) for c in _comb_row(n))


@lru_cache(maxsize=128)
def _log_comb_row(n: int) -> tuple[float, ...]:
    return tuple(math.log(c) for c in _comb_row(n))


def log_binom(n: int, k: int) -> float:
    """Natural log of C(n, k).

    Evaluated as the correctly rounded log of the exact integer coefficient, so
    there is neither factorial overflow nor log-gamma cancellation.
    """
    n = _check_count("n", n)
    k = _check_count("k", k)
    if k > n:
        raise DomainError(f"need k <= n, got n={n}, k={k}")
    if n <= 4096:
        return _log_comb_row(n)[k]
    return math.log(math.comb(n, k))


def binom_pmf(n: int, k: int, t):
    """C(n, k) t^k (1-t)^(n-k) with 0^0 = 1 at the endpoints."""
    n = _check_count("n", n)
    k = _check_count("k", k)
    if k > n:
        raise DomainError(f"need k <= n, got n={n}, k={k}")
    check_probability(t)
    if not is_float(t):
        return math.comb(n, k) * t**k * (1 - t) ** (n - k)
    t = float(t)
    if n <= DIRECT_MAX_N:
        return _comb_row_float(n)[k] * t**k * (1.0 - t) ** (n - k)
    if t == 0.0:
        return 1.0 if k == 0 else 0.0
    if t == 1.0:
        return 1.0 if k == n else 0.0
    return math.exp(log_binom(n, k) + k * math.log(t) + (n - k) * math.log1p(-t))


def binom_pmf_row(n: int, t) -> list:
    """All n+1 probabilities of Binomial(n, t), index k = number of successes."""
    n = _check_count("n", n)
    check_probability(t)
    if not is_float(t):
        comb = _comb_row(n)
        u = 1 - t
        return [comb[k] * t**k * u ** (n - k) for k in range(n + 1)]
    t = float(t)
    if n <= DIRECT_MAX_N:
        comb = _comb_row_float(n)
        u = 1.0 - t
        return [comb[k] * t**k * u ** (n - k) for k in range(n + 1)]
    if t == 0.0 or t == 1.0:
        row = [0.0] * (n + 1)
        row[0 if t == 0.0 else n] = 1.0
        return row
    lt, lu = math.log(t), math.log1p(-t)
    lc = _log_comb_row(n) if n <= 4096 else [log_binom(n, k) for k in range(n + 1)]
    return [math.exp(lc[k] + k * lt + (n - k) * lu) for k in range(n + 1)]


def reg_inc_beta_int(s_plus_1: int, m_minus_s: int, t):
    """Regularized incomplete beta I_t(s+1, M-s) for integer shapes.

    Uses the binomial survival identity
    I_t(s+1, M-s) = P(Binomial(M, t) >= s+1) = sum_{j=s+1}^{M} C(M, j) t^j (1-t)^(M-j).
    """
    a = _check_count("s_plus_1", s_plus_1)
    b = _check_count("m_minus_s", m_minus_s)
    if a < 1 or b < 1:
        raise DomainError(f"shape parameters must be positive, got ({a}, {b})")
    check_probability(t)
    M = a + b - 1
    if is_float(t):
        t = float(t)
        if t == 0.0:
            return 0.0
        if t == 1.0:
            return 1.0
        # Sum the smaller tail; taking 1 - (lower tail) keeps values near 1 accurate.
        if a - 1 < M * t:
            lower = math.fsum(binom_pmf(M, j, t) for j in range(0, a))
            if lower < 0.5:
                return 1.0 - lower
        return min(1.0, math.fsum(binom_pmf(M, j, t) for j in range(a, M + 1)))
    total = 0 * t
    for j in range(a, M + 1):
        total += binom_pmf(M, j, t)
    return total


def _neumaier_cumsum(values) -> list[float]:
    out = []
    acc, comp = 0.0, 0.0
    for x in values:
        y = acc + x
        if abs(acc) >= abs(x):
            comp += (acc - y) + x
        else:
            comp += (x - y) + acc
        acc = y
        out.append(acc + comp)
    return out


def survival_row(M: int, t) -> list:
    """[I_t(s+1, M-s) for s in 0..M-1] in one O(M) pass.

    On the float path both binomial tails are accumulated with Neumaier
    compensation and each entry uses the smaller one, as in reg_inc_beta_int.
    """
    M = _check_count("M", M)
    if M < 1:
        raise DomainError("M must be positive")
    pmf = binom_pmf_row(M, t)
    if is_float(t):
        # upper[s] = sum_{j>s} pmf[j]; lower[s] = sum_{j<=s} pmf[j]
        upper = _neumaier_cumsum(pmf[M:0:-1])[::-1]
        lower = _neumaier_cumsum(pmf[:M])
        return [1.0 - lo if lo < 0.5 else min(1.0, up) for lo, up in zip(lower, upper)]
    out = [None] * M
    acc = 0 * t
    for j in range(M, 0, -1):
        acc += pmf[j]
        out[j - 1] = acc
    return out


def harmonic(M: int, exact: bool = False):
    """H_M = 1 + 1/2 + ... + 1/M (a Fraction when ``exact``)."""
    M = _check_count("M", M)
    if M < 1:
        raise DomainError("harmonic number needs M >= 1")
    if exact:
        return sum((Fraction(1, r) for r in range(1, M + 1)), Fraction(0))
    return math.fsum(1.0 / r for r in range(1, M + 1))


class RefTransform(enum.Enum):
    """Closed-form monotone transforms h: (0, 1) -> R used as references."""

    IDENTITY = "identity"
    LOG = "log"
    TWO_ARCSIN_SQRT = "two_arcsin_sqrt"
    LOGIT = "logit"

    @property
    def label(self) -> str:
        return self.value

    def evaluate(self, t: float) -> float:
        check_probability(t)
        if self is RefTransform.IDENTITY:
            return float(t)
        if self is RefTransform.TWO_ARCSIN_SQRT:
            return 2.0 * math.asin(math.sqrt(t))
        if t == 0 or (self is RefTransform.LOGIT and t == 1):
            raise ObjectiveUndefinedError(f"{self.value} has a pole at t={t}")
        if self is RefTransform.LOG:
            return math.log(t)
        return math.log(t) - math.log1p(-t)

    def derivative(self, t: float) -> float:
        check_probability(t)
        if self is RefTransform.IDENTITY:
            return 1.0
        if self is RefTransform.LOG:
            if t == 0:
                raise ObjectiveUndefinedError("log has a pole at t=0")
            return 1.0 / t
        if t == 0 or t == 1:
            raise ObjectiveUndefinedError(f"derivative of {self.value} is infinite at t={t}")
        if self is RefTransform.TWO_ARCSIN_SQRT:
            return 1.0 / math.sqrt(t * (1.0 - t))
        return 1.0 / (t * (1.0 - t))


def normalized_arcsin(t: float) -> float:
    """(2/pi) arcsin(sqrt(t)), the [0, 1]-normalized arcsine-root transform."""
    check_probability(t)
    return 2.0 / math.pi * math.asin(math.sqrt(t))
