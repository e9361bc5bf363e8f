"""Advantage schedules.

A schedule stores two weight tables indexed by the leave-one-out correct count
``s = S_i`` in ``0..M-1``: ``a[s]`` is the weight of a sample whose own reward is 0,
``b[s]`` the weight of a sample whose reward is 1, so that

    Z_i = (1 - R_i) * a[S_i] + R_i * b[S_i].

Only ``phi[s] = b[s] - a[s]`` enters the induced objective; the split between
``a`` and ``b`` changes the estimator variance, not its mean.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigurationError, ObjectiveUndefinedError

VARIANCE_CONVENTIONS = ("population", "sample")


def _check_group_size(M) -> int:
    if isinstance(M, bool) or not isinstance(M, (int, np.integer)) or M < 1:
        raise ConfigurationError(f"group size M must be a positive integer, got {M!r}")
    return int(M)


def _check_eps(eps) -> float:
    eps = float(eps)
    if not (eps > 0 and math.isfinite(eps)):
        raise ConfigurationError(f"eps must be a positive finite number, got {eps!r}")
    return eps


@dataclass(frozen=True)
class AdvantageSchedule:
    M: int
    a: tuple
    b: tuple
    label: str
    eps: float | None = None
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if len(self.a) != self.M or len(self.b) != self.M:
            raise ConfigurationError(
                f"weight tables must have length M={self.M}, got {len(self.a)} and {len(self.b)}"
            )
        for name, table in (("a", self.a), ("b", self.b)):
            for s, v in enumerate(table):
                if not math.isfinite(float(v)):
                    raise ConfigurationError(f"{name}[{s}] is not finite ({v!r})")

    @property
    def phi(self) -> tuple:
        return tuple(bs - as_ for as_, bs in zip(self.a, self.b))

    @property
    def a_array(self) -> np.ndarray:
        return np.array([float(v) for v in self.a])

    @property
    def b_array(self) -> np.ndarray:
        return np.array([float(v) for v in self.b])

    def advantage(self, R: int, S: int):
        return advantage(self, R, S)

    def group_advantages(self, rewards: np.ndarray) -> np.ndarray:
        """Z_i for every member of a group given its 0/1 reward vector."""
        rewards = np.asarray(rewards, dtype=np.int64)
        if rewards.shape[-1] != self.M:
            raise ConfigurationError(
                f"group has {rewards.shape[-1]} rewards but the schedule has M={self.M}"
            )
        loo = rewards.sum(axis=-1, keepdims=True) - rewards
        return np.where(rewards == 1, self.b_array[loo], self.a_array[loo])

    def to_table(self) -> str:
        return schedule_to_table(self)


def advantage(sched: AdvantageSchedule, R: int, S: int):
    """Per-sample weight Z for own reward R and leave-one-out total S."""
    if R not in (0, 1):
        raise ValueError(f"reward must be 0 or 1, got {R!r}")
    if not 0 <= S < sched.M:
        raise IndexError(f"leave-one-out total S={S} outside 0..{sched.M - 1}")
    return sched.b[S] if R == 1 else sched.a[S]


def vanilla(M: int, exact: bool = False) -> AdvantageSchedule:
    """Z_i = R_i (plain REINFORCE with a 0/1 reward)."""
    M = _check_group_size(M)
    zero, one = (Fraction(0), Fraction(1)) if exact else (0.0, 1.0)
    return AdvantageSchedule(M, (zero,) * M, (one,) * M, "vanilla", params={"M": M})


def mean_of_correct(M: int, exact: bool = False) -> AdvantageSchedule:
    """Z_i = R_i M / (S_i + 1): average the score of the correct samples only.

    A group with k >= 1 correct answers gives each correct member weight M/k, so
    the (1/M)-scaled group update is the mean of grad log pi over those k.
    An all-incorrect group gives the zero vector.
    """
    M = _check_group_size(M)
    if exact:
        a = (Fraction(0),) * M
        b = tuple(Fraction(M, s + 1) for s in range(M))
    else:
        a = (0.0,) * M
        b = tuple(M / (s + 1) for s in range(M))
    return AdvantageSchedule(M, a, b, "mean_of_correct", params={"M": M})


def _grpo_tables(M: int, eps: float, scale: Callable[[float], float]):
    q = [s / M for s in range(M + 1)]
    a = tuple(-q[s] / (scale(q[s]) + eps) + 0.0 for s in range(M))  # no -0.0
    b = tuple((1.0 - q[s + 1]) / (scale(q[s + 1]) + eps) for s in range(M))
    return a, b


def grpo(M: int, eps: float, variance: str = "population") -> AdvantageSchedule:
    """Group-standardized rewards (R_i - mean) / (std + eps).

    Conditioned on S_i = s the group mean is q_s = s/M when R_i = 0 and q_{s+1}
    when R_i = 1, and the population variance of a 0/1 vector is q(1-q).
    ``variance="sample"`` uses the M-1 denominator instead.
    """
    M = _check_group_size(M)
    eps = _check_eps(eps)
    if variance not in VARIANCE_CONVENTIONS:
        raise ConfigurationError(f"variance must be one of {VARIANCE_CONVENTIONS}")
    if variance == "sample":
        if M < 2:
            raise ConfigurationError("sample variance needs M >= 2")
        factor = M / (M - 1)
        a, b = _grpo_tables(M, eps, lambda q: math.sqrt(q * (1.0 - q) * factor))
    else:
        a, b = _grpo_tables(M, eps, lambda q: math.sqrt(q * (1.0 - q)))
    params = {"M": M, "eps": eps}
    if variance != "population":
        params["variance"] = variance
    return AdvantageSchedule(M, a, b, "grpo", eps=eps, params=params)


def grpo_variance(M: int, eps: float) -> AdvantageSchedule:
    """GRPO with the variance, not the standard deviation, in the denominator."""
    M = _check_group_size(M)
    eps = _check_eps(eps)
    a, b = _grpo_tables(M, eps, lambda q: q * (1.0 - q))
    return AdvantageSchedule(M, a, b, "grpo_variance", eps=eps, params={"M": M, "eps": eps})


def bernstein_nodes(M: int, clip: float = 0.0) -> list[float]:
    M = _check_group_size(M)
    if not 0.0 <= clip < 0.5:
        raise ConfigurationError(f"clip must lie in [0, 0.5), got {clip}")
    if M == 1:
        nodes = [0.5]
    else:
        nodes = [s / (M - 1) for s in range(M)]
    return [min(max(x, clip), 1.0 - clip) for x in nodes]


def _split(phi: Sequence, centers: Sequence[float], split: str):
    if split == "zero":
        return tuple(0.0 * p for p in phi), tuple(phi)
    if split == "centered":
        a = tuple(-p * c for p, c in zip(phi, centers))
        b = tuple(p * (1.0 - c) for p, c in zip(phi, centers))
        return a, b
    raise ConfigurationError(f"split must be 'zero' or 'centered', got {split!r}")


def bernstein_fit(
    M: int,
    hprime: Callable[[float], float],
    split: str = "zero",
    clip: float = 0.0,
    label: str = "bernstein",
) -> AdvantageSchedule:
    """Sample a target derivative at the Bernstein nodes: phi[s] = h'(s/(M-1)).

    The induced kappa is then the degree M-1 Bernstein polynomial of h', which
    converges uniformly to h' for continuous h'. ``clip`` clamps the nodes into
    [clip, 1-clip] for targets whose derivative blows up at 0 or 1. With
    ``split="centered"`` each row is split around its node value c as
    (-phi c, phi (1-c)), which leaves the expectation unchanged.
    """
    nodes = bernstein_nodes(M, clip)
    phi = []
    for s, x in enumerate(nodes):
        try:
            v = float(hprime(x))
        except (ZeroDivisionError, OverflowError, ObjectiveUndefinedError, ValueError) as exc:
            raise ConfigurationError(f"h' could not be evaluated at node s={s} (t={x}): {exc}") from None
        if not math.isfinite(v):
            raise ConfigurationError(f"h' is not finite at node s={s} (t={x}): {v}")
        phi.append(v)
    a, b = _split(phi, nodes, split)
    params = {"M": len(nodes)}
    if clip:
        params["clip"] = clip
    return AdvantageSchedule(len(nodes), a, b, label, params=params)


def bernstein_poly(M: int, hprime_coeffs: Sequence, exact: bool = False) -> AdvantageSchedule:
    """Exact Bernstein coefficients for a polynomial target derivative.

    ``hprime_coeffs[k]`` is the coefficient of t^k in h'. The degree must be at
    most M-1; then kappa == h' identically and h_M = h + const. Conversion from the
    monomial basis: beta_s = sum_{k<=s} c_k C(s, k) / C(M-1, k).
    """
    M = _check_group_size(M)
    coeffs = list(hprime_coeffs)
    while len(coeffs) > 1 and coeffs[-1] == 0:
        coeffs.pop()
    n = M - 1
    if len(coeffs) - 1 > n:
        raise ConfigurationError(
            f"h' has degree {len(coeffs) - 1} but M={M} only represents degree <= {n}"
        )
    conv = Fraction if exact else float
    phi = []
    for s in range(M):
        terms = [conv(c) * conv(Fraction(math.comb(s, k), math.comb(n, k)))
                 for k, c in enumerate(coeffs[: s + 1])]
        phi.append(sum(terms, conv(0)) if exact else math.fsum(terms))
    zero = Fraction(0) if exact else 0.0
    return AdvantageSchedule(M, (zero,) * M, tuple(phi), "bernstein_poly", params={"M": M})


def poly_derivative(h_coeffs: Sequence[float]) -> list[float]:
    return [k * c for k, c in enumerate(h_coeffs)][1:] or [0.0]


BERNSTEIN_TARGETS: dict[str, Callable[[float], float]] = {
    "identity": lambda t: 1.0,
    "log": lambda t: 1.0 / t,
    "arcsin": lambda t: 1.0 / math.sqrt(t * (1.0 - t)),
    "logit": lambda t: 1.0 / (t * (1.0 - t)),
    "sin": math.cos,
}
# Targets whose derivative is infinite at an endpoint.
SINGULAR_TARGETS = frozenset({"log", "arcsin", "logit"})


# --- schedule spec strings: name:key=value,key=value ----------------------

_SPEC_KEYS = {
    "vanilla": {"M"},
    "mean_of_correct": {"M"},
    "grpo": {"M", "eps", "variance"},
    "grpo_variance": {"M", "eps"},
    "bernstein": {"M", "target", "clip", "split", "poly"},
}


def parse_schedule_spec(spec: str) -> AdvantageSchedule:
    """Build a schedule from ``name:key=value,...``, e.g. ``grpo:M=64,eps=0.01``.

    For ``bernstein`` either ``target`` (one of BERNSTEIN_TARGETS) or ``poly``
    (coefficients of h itself, lowest degree first, separated by ';') is given.
    """
    name, _, rest = spec.strip().partition(":")
    if name not in _SPEC_KEYS:
        raise ConfigurationError(f"unknown schedule {name!r}; choose from {sorted(_SPEC_KEYS)}")
    kv: dict[str, str] = {}
    if rest:
        for item in rest.split(","):
            key, eq, value = item.partition("=")
            key = key.strip()
            if not eq or not key:
                raise ConfigurationError(f"malformed schedule parameter {item!r} in {spec!r}")
            if key not in _SPEC_KEYS[name]:
                raise ConfigurationError(f"unknown key {key!r} for schedule {name!r}")
            kv[key] = value.strip()
    if "M" not in kv:
        raise ConfigurationError(f"schedule {spec!r} is missing M")
    try:
        M = int(kv["M"])
    except ValueError:
        raise ConfigurationError(f"M must be an integer in {spec!r}") from None

    def need_eps() -> float:
        if "eps" not in kv:
            raise ConfigurationError(f"schedule {name!r} needs eps")
        try:
            return float(kv["eps"])
        except ValueError:
            raise ConfigurationError(f"eps must be a number in {spec!r}") from None

    if name == "vanilla":
        return vanilla(M)
    if name == "mean_of_correct":
        return mean_of_correct(M)
    if name == "grpo":
        return grpo(M, need_eps(), kv.get("variance", "population"))
    if name == "grpo_variance":
        return grpo_variance(M, need_eps())
    if "poly" in kv:
        if "target" in kv:
            raise ConfigurationError("give either target or poly, not both")
        try:
            h_coeffs = [float(c) for c in kv["poly"].split(";")]
        except ValueError:
            raise ConfigurationError(f"bad polynomial coefficients {kv['poly']!r}") from None
        return bernstein_poly(M, poly_derivative(h_coeffs))
    target = kv.get("target")
    if target not in BERNSTEIN_TARGETS:
        raise ConfigurationError(f"bernstein target must be one of {sorted(BERNSTEIN_TARGETS)}")
    clip = float(kv["clip"]) if "clip" in kv else 0.0
    return bernstein_fit(M, BERNSTEIN_TARGETS[target], split=kv.get("split", "zero"),
                         clip=clip, label=f"bernstein_{target}")


# --- plain-text table ----------------------------------------------------

def _fmt(x) -> str:
    return format(float(x), ".17g")


def schedule_to_table(sched: AdvantageSchedule) -> str:
    buf = io.StringIO()
    buf.write(f"# label: {sched.label}\n")
    buf.write(f"# M: {sched.M}\n")
    if sched.eps is not None:
        buf.write(f"# eps: {_fmt(sched.eps)}\n")
    buf.write("s,a_s,b_s\n")
    for s in range(sched.M):
        buf.write(f"{s},{_fmt(sched.a[s])},{_fmt(sched.b[s])}\n")
    return buf.getvalue()


def schedule_from_table(text: str) -> AdvantageSchedule:
    meta: dict[str, str] = {}
    rows: list[tuple[int, float, float]] = []
    header_seen = False
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, _, value = line[1:].partition(":")
            meta[key.strip()] = value.strip()
            continue
        if not header_seen:
            if line.replace(" ", "") != "s,a_s,b_s":
                raise ConfigurationError(f"unexpected schedule table header {line!r}")
            header_seen = True
            continue
        s, a, b = line.split(",")
        rows.append((int(s), float(a), float(b)))
    if "M" not in meta or "label" not in meta:
        raise ConfigurationError("schedule table lacks label or M")
    M = int(meta["M"])
    if [r[0] for r in rows] != list(range(M)):
        raise ConfigurationError("schedule table rows must be s = 0..M-1 in order")
    eps = float(meta["eps"]) if "eps" in meta else None
    return AdvantageSchedule(
        M, tuple(r[1] for r in rows), tuple(r[2] for r in rows), meta["label"], eps=eps
    )


def builtin_schedules(M: int, eps: float = 0.1) -> list[AdvantageSchedule]:
    """One instance of every schedule family, used by the verification suites."""
    return [
        vanilla(M),
        mean_of_correct(M),
        grpo(M, eps),
        grpo_variance(M, eps),
        bernstein_fit(M, math.cos, label="bernstein_sin"),
    ]
