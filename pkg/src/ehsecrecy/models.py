"""Fading distributions, channel quantization, joint channel states, arrivals,
and the full problem description."""

from __future__ import annotations

import functools
import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from . import numerics
from .errors import ConfigError, DomainError, SizeError
from .numerics import Tolerance

TAIL_MASS = 1e-12
DEFAULT_STATE_CAP = 10**7

_QUAD_TOL = Tolerance(rel=1e-12, abs=1e-300, max_iter=200_000)


@dataclass(frozen=True)
class FadingModel:
    """Distribution of a power gain on one link.

    ``kind`` is ``"gamma"`` (Nakagami-m amplitude, so the power gain is
    Gamma(shape=m, scale=mean/m)) or ``"discrete"`` (finite support).
    Build instances with :meth:`gamma` or :meth:`discrete`.
    """

    kind: str
    m: float = 1.0
    mean_gain: float = 1.0
    support: tuple = ()
    probs: tuple = ()

    @classmethod
    def gamma(cls, m: float = 1.0, mean: float = 1.0) -> "FadingModel":
        if not (m >= 1 and math.isfinite(m)):
            raise DomainError(f"Nakagami shape m must be >= 1, got {m}")
        if not (mean > 0 and math.isfinite(mean)):
            raise DomainError(f"mean gain must be positive, got {mean}")
        return cls("gamma", m=float(m), mean_gain=float(mean))

    @classmethod
    def discrete(cls, support, probs) -> "FadingModel":
        support = tuple(float(s) for s in support)
        probs = tuple(float(p) for p in probs)
        if len(support) != len(probs) or not support:
            raise DomainError("discrete model needs equally long, non-empty support and probs")
        if any(s < 0 for s in support):
            raise DomainError("gains must be non-negative")
        if any(p < 0 for p in probs):
            raise DomainError("probabilities must be non-negative")
        if abs(sum(probs) - 1.0) > 1e-12:
            raise DomainError(f"probabilities sum to {sum(probs)!r}, not 1")
        # Remark: only channel conditions with positive probability are states.
        kept = sorted((s, p) for s, p in zip(support, probs) if p > 0)
        return cls("discrete", support=tuple(s for s, _ in kept), probs=tuple(p for _, p in kept))

    # -- distribution functions -------------------------------------------

    @property
    def scale(self) -> float:
        return self.mean_gain / self.m

    @property
    def mean(self) -> float:
        if self.kind == "gamma":
            return self.mean_gain
        return float(sum(s * p for s, p in zip(self.support, self.probs)))

    def pdf(self, x: float) -> float:
        if self.kind != "gamma":
            raise DomainError("pdf is only defined for gamma models")
        if x < 0:
            return 0.0
        m, theta = self.m, self.scale
        if x == 0:
            return 1.0 / theta if m == 1 else 0.0
        return math.exp((m - 1.0) * math.log(x / theta) - x / theta - math.lgamma(m)) / theta

    def cdf(self, x: float) -> float:
        if self.kind == "gamma":
            return numerics.gamma_lower_regularized(self.m, max(x, 0.0) / self.scale)
        return float(sum(p for s, p in zip(self.support, self.probs) if s <= x))

    def quantile(self, u: float) -> float:
        """Inverse CDF of a gamma model, by bisection on the CDF."""
        if self.kind != "gamma":
            raise DomainError("quantile is only defined for gamma models")
        if not 0 <= u < 1:
            raise DomainError(f"quantile level must be in [0, 1), got {u}")
        if u == 0:
            return 0.0
        hi = self.mean_gain
        while self.cdf(hi) < u:
            hi *= 2.0
        tol = Tolerance(rel=1e-15, abs=0.0, max_iter=4000)
        return numerics.bisect(lambda x: self.cdf(x) - u, 0.0, hi, tol)

    @property
    def upper_limit(self) -> float:
        """Finite integration limit carrying all but TAIL_MASS of the mass."""
        if self.kind == "gamma":
            return _tail_quantile(self.m, self.mean_gain)
        return max(self.support)

    def expect(self, func: Callable[[float], float], lo: float = 0.0,
               hi: Optional[float] = None) -> float:
        """E[func(X); lo <= X <= hi] (the unnormalized partial expectation)."""
        if self.kind == "discrete":
            upper = math.inf if hi is None else hi
            return float(sum(p * func(s) for s, p in zip(self.support, self.probs)
                             if lo <= s <= upper))
        upper = self.upper_limit if hi is None else min(hi, self.upper_limit)
        if upper <= lo:
            return 0.0
        pdf = self.pdf
        return numerics.integrate(lambda x: func(x) * pdf(x), lo, upper, _QUAD_TOL)


_tail_cache: dict = {}


def _tail_quantile(m, mean):
    key = (m, mean)
    if key not in _tail_cache:
        _tail_cache[key] = FadingModel("gamma", m=m, mean_gain=mean).quantile(1.0 - TAIL_MASS)
    return _tail_cache[key]


@dataclass(frozen=True)
class ChannelQuantization:
    boundaries: tuple
    centroids: tuple
    probs: tuple

    @property
    def n(self) -> int:
        return len(self.centroids)


@functools.lru_cache(maxsize=256)
def quantize(model: FadingModel, n: int) -> ChannelQuantization:
    """Equally likely quantization of a gain distribution.

    Gamma models are cut into ``n`` intervals of probability 1/n each, and
    every interval is represented by its conditional mean. The top interval is
    truncated at the 1 - 1e-12 quantile. Discrete models are returned with
    their native support and probabilities.
    """
    if n < 1:
        raise DomainError(f"need at least one quantization level, got {n}")
    if model.kind == "discrete":
        return ChannelQuantization(
            boundaries=tuple(model.support) + (math.inf,),
            centroids=tuple(model.support),
            probs=tuple(model.probs),
        )
    bounds = [0.0] + [model.quantile(i / n) for i in range(1, n)] + [math.inf]
    top = model.upper_limit
    centroids = []
    for i in range(n):
        lo, hi = bounds[i], min(bounds[i + 1], top)
        mass = model.cdf(hi) - model.cdf(lo)
        centroids.append(model.expect(lambda x: x, lo, hi) / mass)
    return ChannelQuantization(
        boundaries=tuple(bounds),
        centroids=tuple(centroids),
        probs=tuple([1.0 / n] * n),
    )


# ---------------------------------------------------------------------------
# Energy arrivals
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ArrivalProcess:
    kind: str
    pmf: tuple
    param: float = 0.0

    def __post_init__(self):
        if not self.pmf or any(p < 0 for p in self.pmf):
            raise DomainError("arrival pmf must be non-empty and non-negative")
        if abs(sum(self.pmf) - 1.0) > 1e-12:
            raise DomainError(f"arrival pmf sums to {sum(self.pmf)!r}")

    @classmethod
    def deterministic(cls, b: int) -> "ArrivalProcess":
        if b < 0:
            raise DomainError("arrival size must be non-negative")
        pmf = [0.0] * (b + 1)
        pmf[b] = 1.0
        return cls("deterministic", tuple(pmf), float(b))

    @classmethod
    def bernoulli(cls, p: float, b: int) -> "ArrivalProcess":
        if not 0 <= p <= 1 or b < 1:
            raise DomainError("bernoulli arrivals need 0 <= p <= 1 and b >= 1")
        pmf = [0.0] * (b + 1)
        pmf[0] = 1.0 - p
        pmf[b] += p
        return cls("bernoulli", tuple(pmf), float(p))

    @classmethod
    def truncated_geometric(cls, q: float, b_max: int) -> "ArrivalProcess":
        return cls("truncated_geometric", tuple(_geometric_pmf(q, b_max)), float(q))

    @property
    def mean(self) -> float:
        return float(sum(b * p for b, p in enumerate(self.pmf)))

    @property
    def b_max(self) -> int:
        return max(b for b, p in enumerate(self.pmf) if p > 0)

    @property
    def b_min(self) -> int:
        return min(b for b, p in enumerate(self.pmf) if p > 0)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.pmf, dtype=float)


def _geometric_pmf(q, b_max):
    if b_max < 1 or not q > 0:
        raise DomainError("truncated geometric needs b_max >= 1 and q > 0")
    # Normalize in log space so very large or small q stay finite.
    logs = [b * math.log(q) for b in range(b_max + 1)]
    top = max(logs)
    w = [math.exp(v - top) for v in logs]
    s = sum(w)
    return [v / s for v in w]


def calibrate_truncated_geometric(b_max: int, target_mean: float) -> ArrivalProcess:
    """Truncated geometric arrivals, pmf(b) ~ q^b on {0..b_max}, with a given mean."""
    if b_max < 1:
        raise DomainError("b_max must be >= 1")
    if not 0 < target_mean < b_max:
        raise DomainError(f"target mean {target_mean} is not in (0, {b_max})")

    def mean_gap(log_q):
        pmf = _geometric_pmf(math.exp(log_q), b_max)
        return sum(b * p for b, p in enumerate(pmf)) - target_mean

    lo, hi = -1.0, 1.0
    while mean_gap(lo) > 0:
        lo *= 2.0
    while mean_gap(hi) < 0:
        hi *= 2.0
    log_q = numerics.bisect(mean_gap, lo, hi, Tolerance(rel=1e-15, abs=1e-13, max_iter=4000))
    return ArrivalProcess.truncated_geometric(math.exp(log_q), b_max)


# ---------------------------------------------------------------------------
# System description and joint channel states
# ---------------------------------------------------------------------------

CODINGS = ("constant", "variable")
CSI_MODES = ("full", "partial", "statistical")


@dataclass(frozen=True)
class SystemConfig:
    e_max: int
    arrivals: ArrivalProcess
    legit: tuple
    eave: tuple
    n: int = 15
    coding: str = "variable"
    csi: str = "full"
    slot_duration: float = 1.0
    state_cap: int = field(default=DEFAULT_STATE_CAP, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "legit", tuple(self.legit))
        object.__setattr__(self, "eave", tuple(self.eave))
        if self.e_max < 1:
            raise ConfigError("battery capacity must be at least one quantum", field="e_max")
        if self.n < 1:
            raise ConfigError("need at least one quantization level", field="n")
        if len(self.legit) < 1 or len(self.legit) != len(self.eave):
            raise ConfigError("legit and eave need one fading model per sub-carrier", field="N")
        if self.arrivals.mean <= 0:
            raise ConfigError("energy arrivals must be positive with nonzero probability",
                              field="arrivals")
        if self.arrivals.b_max > self.e_max:
            raise ConfigError(
                f"b_max={self.arrivals.b_max} exceeds battery capacity {self.e_max}", field="b_max")
        if self.coding not in CODINGS:
            raise ConfigError(f"unknown coding {self.coding!r}", field="coding")
        if self.csi not in CSI_MODES:
            raise ConfigError(f"unknown csi mode {self.csi!r}", field="csi")

    @property
    def N(self) -> int:
        return len(self.legit)

    def with_(self, **changes) -> "SystemConfig":
        return replace(self, **changes)

    @classmethod
    def default(cls, **changes) -> "SystemConfig":
        """Baseline scenario: e_max=30, truncated geometric arrivals with
        b_max=6 and mean 1, n=15, one Rayleigh sub-carrier, equal means."""
        base = cls(
            e_max=30,
            arrivals=calibrate_truncated_geometric(6, 1.0),
            legit=(FadingModel.gamma(1.0, 1.0),),
            eave=(FadingModel.gamma(1.0, 1.0),),
            n=15,
        )
        return replace(base, **changes) if changes else base


@dataclass(frozen=True)
class JointState:
    g: tuple
    h: tuple
    prob: float


def enumerate_joint_states(quants, cap: int = DEFAULT_STATE_CAP,
                           n_legit: Optional[int] = None) -> list:
    """Cartesian product of per-carrier quantizations.

    ``quants`` lists the N legitimate quantizations followed by the N
    eavesdropper ones. Pass ``n_legit=len(quants)`` to enumerate legitimate
    gains only (``h`` vectors are then empty). Components are independent, so
    probabilities multiply; zero-probability combinations are dropped.
    """
    quants = list(quants)
    if n_legit is None:
        if len(quants) % 2:
            raise DomainError("expected 2N quantizations (legit then eave)")
        n_legit = len(quants) // 2
    size = 1
    for q in quants:
        size *= q.n
    if size > cap:
        raise SizeError(f"{size} joint channel states exceed the cap of {cap}")
    states = []
    for combo in itertools.product(*[range(q.n) for q in quants]):
        prob = 1.0
        for q, i in zip(quants, combo):
            prob *= q.probs[i]
        if prob <= 0:
            continue
        values = tuple(q.centroids[i] for q, i in zip(quants, combo))
        states.append(JointState(values[:n_legit], values[n_legit:], prob))
    return states


def channel_states(config: SystemConfig) -> list:
    """Joint channel states observed by the transmitter under ``config.csi``."""
    if config.csi == "statistical":
        return [JointState((), (), 1.0)]
    lq = [quantize(m, config.n) for m in config.legit]
    if config.csi == "partial":
        return enumerate_joint_states(lq, config.state_cap, n_legit=len(lq))
    eq = [quantize(m, config.n) for m in config.eave]
    return enumerate_joint_states(lq + eq, config.state_cap)
