"""Slot-by-slot Monte Carlo of the battery and channel process under a policy."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DomainError, InfeasibleActionError
from .mdp import Policy, StateSpace, check_feasible
from .models import SystemConfig
from .powersplit import RewardTable


@dataclass(frozen=True, eq=False)
class SimResult:
    estimated_rate: float
    std_error: float
    battery_hist: np.ndarray
    slots: int
    seed: int
    consumed: int
    harvested: int
    initial_battery: int

    def __eq__(self, other):
        if not isinstance(other, SimResult):
            return NotImplemented
        return (self.estimated_rate == other.estimated_rate
                and self.std_error == other.std_error
                and np.array_equal(self.battery_hist, other.battery_hist)
                and (self.slots, self.seed, self.consumed, self.harvested, self.initial_battery)
                == (other.slots, other.seed, other.consumed, other.harvested,
                    other.initial_battery))


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based generator (Philox), identical streams on every platform."""
    return np.random.Generator(np.random.Philox(int(seed)))


def simulate(config: SystemConfig, policy: Policy, slots: int, seed: int,
             table: Optional[RewardTable] = None, initial_battery: int = 0,
             batches: int = 100, probs=None) -> SimResult:
    """Estimate the long-run secrecy rate of ``policy``.

    Each slot draws a channel state index and an energy arrival, takes the
    policy's action, collects the table reward of that (power, state) pair and
    applies the battery update. Under partial or statistical knowledge the
    table entry is already the expectation over the unseen gains, which gives
    the same long-run mean with lower variance than sampling them.
    """
    if slots < batches or batches < 2:
        raise DomainError(f"need slots >= batches >= 2, got slots={slots}, batches={batches}")
    table = policy.table if table is None else table
    if table is None:
        raise DomainError("simulation needs a reward table")
    total = np.asarray(policy.total)
    check_feasible(total)
    e_max = config.e_max
    if total.shape[0] != e_max + 1:
        raise InfeasibleActionError("policy and config disagree on the battery size")
    if not 0 <= initial_battery <= e_max:
        raise DomainError(f"initial battery {initial_battery} outside 0..{e_max}")
    if probs is None:
        probs = StateSpace.from_config(config).probs
    probs = np.asarray(probs, dtype=float)
    pmf = config.arrivals.as_array()

    rng = make_rng(seed)
    chan = rng.choice(probs.size, size=slots, p=probs / probs.sum()).tolist()
    arr = rng.choice(pmf.size, size=slots, p=pmf / pmf.sum()).tolist()
    actions = total.tolist()
    values = np.asarray(table.values).tolist()

    rewards = np.empty(slots)
    visits = np.zeros(e_max + 1, dtype=np.int64)
    e = int(initial_battery)
    consumed = 0
    harvested = 0
    levels = []
    for k in range(slots):
        s = chan[k]
        a = actions[e][s]
        rewards[k] = values[a][s]
        levels.append(e)
        consumed += a
        nxt = e - a + arr[k]
        if nxt > e_max:
            nxt = e_max
        harvested += nxt - (e - a)
        e = nxt
    visits += np.bincount(np.asarray(levels), minlength=e_max + 1)

    # Stored energy can only come from the initial charge or admitted arrivals.
    if consumed > harvested + initial_battery:
        raise InfeasibleActionError("energy causality violated in simulation")

    size = slots // batches
    means = rewards[: size * batches].reshape(batches, size).mean(axis=1)
    return SimResult(
        estimated_rate=float(rewards.mean()),
        std_error=float(means.std(ddof=1) / np.sqrt(batches)),
        battery_hist=visits / slots,
        slots=slots,
        seed=int(seed),
        consumed=int(consumed),
        harvested=int(harvested),
        initial_battery=int(initial_battery),
    )
