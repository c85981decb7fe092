"""Secrecy-rate rewards for every channel-knowledge and coding mode.

All rates are in bits per slot (base-2 logarithms).
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import Sequence

from . import numerics
from .errors import DomainError
from .models import FadingModel

LN2 = math.log(2.0)


def _check_coding(coding):
    if coding not in ("constant", "variable"):
        raise DomainError(f"unknown coding mode {coding!r}")


def rate_pair(g: float, h: float, rho: float, coding: str = "variable") -> float:
    """Secrecy rate of one sub-carrier with known gains.

    Variable-rate coding caps the eavesdropper at the legitimate rate, so the
    result is never negative; constant-rate coding may go below zero.
    """
    _check_coding(coding)
    if rho < 0 or g < 0 or h < 0:
        raise DomainError("gains and power must be non-negative")
    if rho == 0:
        return 0.0
    leak = min(g, h) if coding == "variable" else h
    return (math.log1p(g * rho) - math.log1p(leak * rho)) / LN2


def c_total(rho_vec: Sequence[float], g_vec: Sequence[float], h_vec: Sequence[float],
            coding: str = "variable") -> float:
    if not len(rho_vec) == len(g_vec) == len(h_vec):
        raise DomainError(
            f"dimension mismatch: {len(rho_vec)} powers, {len(g_vec)} g, {len(h_vec)} h")
    return sum(rate_pair(g, h, p, coding) for p, g, h in zip(rho_vec, g_vec, h_vec))


# ---------------------------------------------------------------------------
# Expectations over unknown gains
# ---------------------------------------------------------------------------

@functools.lru_cache(maxsize=200_000)
def mean_log_rate(model: FadingModel, rho: float) -> float:
    """E[log2(1 + X rho)] for X distributed as ``model``."""
    if rho == 0:
        return 0.0
    return model.expect(lambda x: math.log1p(x * rho)) / LN2


@functools.lru_cache(maxsize=200_000)
def _partial_log_rate(model: FadingModel, upper: float, rho: float) -> float:
    # E[log2(1 + X rho); X <= upper]
    return model.expect(lambda x: math.log1p(x * rho), 0.0, upper) / LN2


def t_con(g: float, rho: float, eave: FadingModel) -> float:
    """Expected constant-rate secrecy reward over the unknown eavesdropper gain.

    Because the legitimate term does not depend on h, the integral splits into
    log2(1 + g rho) minus one quadrature that depends on rho only.
    """
    if rho < 0 or g < 0:
        raise DomainError("gain and power must be non-negative")
    if rho == 0:
        return 0.0
    return math.log1p(g * rho) / LN2 - mean_log_rate(eave, rho)


def t_var(g: float, rho: float, eave: FadingModel) -> float:
    """Expected variable-rate secrecy reward: only h < g contributes."""
    if rho < 0 or g < 0:
        raise DomainError("gain and power must be non-negative")
    if rho == 0 or g == 0:
        return 0.0
    value = math.log1p(g * rho) / LN2 * eave.cdf(g) - _partial_log_rate(eave, g, rho)
    return max(value, 0.0)


def t_stat(rho: float, legit: FadingModel, eave: FadingModel) -> float:
    """Expected constant-rate reward when neither gain is known.

    Equal to E_G[t_con(G, rho)], evaluated as a difference of two one-dimensional
    expectations (the integrand is a difference of a g-only and an h-only term).
    """
    if rho < 0:
        raise DomainError("power must be non-negative")
    if rho == 0 or legit == eave:
        return 0.0
    return mean_log_rate(legit, rho) - mean_log_rate(eave, rho)


def t_con_rayleigh(g: float, rho: float, mean_h: float) -> float:
    """Closed form of t_con for exponentially distributed eavesdropper gain.

    log2(1 + g rho) + exp(a) Ei(-a) / ln 2 with a = 1 / (rho mean_h).
    """
    if rho == 0:
        return 0.0
    a = 1.0 / (rho * mean_h)
    return math.log1p(g * rho) / LN2 + numerics.scaled_exp_integral_ei(-a) / LN2


def d2_t_con(g: float, rho: float) -> float:
    """Mixed derivative d^2 t_con / (d rho d g)."""
    return 1.0 / (LN2 * (1.0 + g * rho) ** 2)


def d2_t_var(g: float, rho: float, eave: FadingModel) -> float:
    """Mixed derivative d^2 t_var / (d rho d g) for a gamma eavesdropper."""
    if eave.kind != "gamma":
        raise DomainError("d2_t_var is defined for gamma eavesdropper models")
    m = eave.m
    full = math.gamma(m)
    tail = numerics.gamma_upper(m, m * g / eave.mean_gain)
    return (full - tail) / ((1.0 + g * rho) ** 2 * full) / LN2


@dataclass(frozen=True)
class RewardKernel:
    """Bundle of what is needed to score a power allocation in one mode."""

    coding: str
    csi: str
    legit: tuple
    eave: tuple

    def __post_init__(self):
        _check_coding(self.coding)
        if self.csi not in ("full", "partial", "statistical"):
            raise DomainError(f"unknown csi mode {self.csi!r}")

    @classmethod
    def from_config(cls, config) -> "RewardKernel":
        # Without main-channel knowledge the code rate cannot follow the channel.
        coding = "constant" if config.csi == "statistical" else config.coding
        return cls(coding, config.csi, tuple(config.legit), tuple(config.eave))

    @property
    def N(self) -> int:
        return len(self.eave)

    def carrier_reward(self, r: int, g: float, rho: float) -> float:
        """Expected reward of sub-carrier ``r`` (partial / statistical CSI)."""
        if self.csi == "partial":
            if self.coding == "constant":
                return t_con(g, rho, self.eave[r])
            return t_var(g, rho, self.eave[r])
        if self.csi == "statistical":
            return t_stat(rho, self.legit[r], self.eave[r])
        raise DomainError("carrier_reward needs partial or statistical CSI")

    def reward(self, rho_vec, g_vec=(), h_vec=()) -> float:
        if self.csi == "full":
            return c_total(rho_vec, g_vec, h_vec, self.coding)
        if self.csi == "statistical":
            g_vec = [0.0] * len(rho_vec)
        return sum(self.carrier_reward(r, g, p) for r, (g, p) in enumerate(zip(g_vec, rho_vec)))
