"""Average-reward MDP over (battery level, channel state) and its solution by
policy iteration.

Channel states are i.i.d. across slots, so the battery level after an action
is the only thing that carries information forward. With ``d = e - a`` the
energy left after transmitting, the next level is ``min(d + b, e_max)``; the
matrix ``step[d, e']`` collects these probabilities. Policy evaluation works on
the induced battery-level chain, which is exact because the channel factor of
every transition row is the same product distribution.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.sparse.csgraph import connected_components

from . import numerics
from .errors import ConvergenceError, DomainError, InfeasibleActionError, SingularMatrixError
from .models import SystemConfig, channel_states
from .powersplit import RewardTable, SplitResult, cached_reward_table
from .reward import LN2

DEFAULT_MAX_ITER = 100
_TIE = 1e-11


# ---------------------------------------------------------------------------
# State space, policies, kernels
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StateSpace:
    e_max: int
    states: tuple
    probs: np.ndarray

    @classmethod
    def from_config(cls, config: SystemConfig) -> "StateSpace":
        states = tuple(channel_states(config))
        probs = np.array([s.prob for s in states], dtype=float)
        return cls(config.e_max, states, probs)

    @property
    def n_channel(self) -> int:
        return len(self.states)

    @property
    def count(self) -> int:
        return (self.e_max + 1) * self.n_channel


@dataclass(frozen=True, eq=False)
class Policy:
    """Integer total power ``total[e, s]`` per state, plus the table that
    expands a total into per-carrier powers."""

    total: np.ndarray
    table: Optional[RewardTable] = None

    def __post_init__(self):
        total = np.asarray(self.total, dtype=np.int64)
        check_feasible(total)
        total.flags.writeable = False
        object.__setattr__(self, "total", total)

    @property
    def e_max(self) -> int:
        return self.total.shape[0] - 1

    def split(self, e: int, s: int) -> SplitResult:
        if self.table is None:
            raise DomainError("policy carries no reward table")
        return self.table.split(int(self.total[e, s]), s)

    def __eq__(self, other):
        return isinstance(other, Policy) and np.array_equal(self.total, other.total)

    def __hash__(self):
        return hash(self.total.tobytes())


def check_feasible(total: np.ndarray) -> None:
    levels = np.arange(total.shape[0])[:, None]
    bad = np.argwhere((total < 0) | (total > levels))
    if bad.size:
        e, s = bad[0]
        raise InfeasibleActionError(
            f"action {total[e, s]} at battery level {e}, channel state {s} is not in 0..{e}")


def step_matrix(e_max: int, arrival_pmf) -> np.ndarray:
    """step[d, e'] = P(min(d + B, e_max) = e')."""
    pmf = np.asarray(arrival_pmf, dtype=float)
    step = np.zeros((e_max + 1, e_max + 1))
    for d in range(e_max + 1):
        for b, p in enumerate(pmf):
            if p > 0:
                step[d, min(d + b, e_max)] += p
    return step


@dataclass(frozen=True, eq=False)
class TransitionKernel:
    """Transition structure induced by a policy."""

    step: np.ndarray
    probs: np.ndarray
    total: np.ndarray

    @property
    def e_max(self) -> int:
        return self.step.shape[0] - 1

    @property
    def battery(self) -> np.ndarray:
        """Battery-level chain: P[e, e'] = sum_s p_s step[e - a(e, s), e']."""
        levels = np.arange(self.e_max + 1)[:, None]
        rows = self.step[levels - self.total]  # (E+1, S, E+1)
        return np.einsum("s,esf->ef", self.probs, rows)

    def dense(self) -> np.ndarray:
        """Full kernel over states (e, s) in row-major order."""
        E1, S = self.total.shape
        levels = np.arange(E1)[:, None]
        rows = self.step[levels - self.total]  # (E+1, S, E+1)
        full = rows[:, :, :, None] * self.probs[None, None, None, :]
        return full.reshape(E1 * S, E1 * S)


def build_transition_kernel(config: SystemConfig, policy_total, probs=None) -> TransitionKernel:
    """Kernel of the chain under ``policy_total`` (shape (e_max+1, S))."""
    total = np.asarray(policy_total, dtype=np.int64)
    if total.shape[0] != config.e_max + 1:
        raise DomainError(f"policy has {total.shape[0]} battery rows, expected {config.e_max + 1}")
    check_feasible(total)
    if probs is None:
        probs = np.array([s.prob for s in channel_states(config)])
    probs = np.asarray(probs, dtype=float)
    if total.shape[1] != probs.size:
        raise DomainError(f"policy has {total.shape[1]} channel columns, expected {probs.size}")
    return TransitionKernel(step_matrix(config.e_max, config.arrivals.pmf), probs, total)


# ---------------------------------------------------------------------------
# Chain structure
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ChainStructure:
    recurrent: tuple  # tuple of sorted level tuples, ordered by smallest level
    transient: tuple

    @property
    def unichain(self) -> bool:
        return len(self.recurrent) == 1


def classify_chains(kernel) -> ChainStructure:
    """Closed communicating classes of the battery chain.

    Accepts a TransitionKernel or a battery-level matrix. A state (e, s) is
    recurrent exactly when level e is, because the channel component is
    redrawn independently every slot.
    """
    P = kernel.battery if isinstance(kernel, TransitionKernel) else np.asarray(kernel, float)
    adj = P > 0
    n_comp, labels = connected_components(adj, directed=True, connection="strong")
    recurrent, transient = [], []
    for c in range(n_comp):
        members = np.flatnonzero(labels == c)
        outside = np.ones(P.shape[0], bool)
        outside[members] = False
        if adj[np.ix_(members, outside)].any():
            transient.extend(members.tolist())
        else:
            recurrent.append(tuple(members.tolist()))
    recurrent.sort(key=lambda c: c[0])
    return ChainStructure(tuple(recurrent), tuple(sorted(transient)))


def steady_state(kernel, recurrent_class) -> np.ndarray:
    """Stationary battery distribution supported on ``recurrent_class``."""
    P = kernel.battery if isinstance(kernel, TransitionKernel) else np.asarray(kernel, float)
    cls = np.asarray(sorted(recurrent_class))
    sub = P[np.ix_(cls, cls)]
    k = cls.size
    A = (np.eye(k) - sub).T
    A[-1, :] = 1.0
    rhs = np.zeros(k)
    rhs[-1] = 1.0
    pi_c = numerics.solve_linear(A, rhs)
    pi_c = np.clip(pi_c, 0.0, None)
    pi_c /= pi_c.sum()
    resid = np.max(np.abs(pi_c @ sub - pi_c))
    if resid > 1e-10:
        raise SingularMatrixError(f"stationary residual {resid:.2e} exceeds 1e-10")
    pi = np.zeros(P.shape[0])
    pi[cls] = pi_c
    return pi


def expected_reward(policy_total: np.ndarray, values: np.ndarray, probs: np.ndarray) -> np.ndarray:
    """r[e] = sum_s p_s c*(a(e, s), s)."""
    S = probs.size
    r = values[policy_total, np.arange(S)[None, :]]
    return r @ probs


# ---------------------------------------------------------------------------
# Unichain repair
# ---------------------------------------------------------------------------

def class_gains(kernel: TransitionKernel, values: np.ndarray, structure=None):
    structure = classify_chains(kernel) if structure is None else structure
    r = expected_reward(kernel.total, values, kernel.probs)
    out = []
    for cls in structure.recurrent:
        pi = steady_state(kernel, cls)
        out.append(float(pi @ r))
    return out


def repair_unichain(policy_total: np.ndarray, kernel: TransitionKernel,
                    values: np.ndarray) -> np.ndarray:
    """Turn a multichain policy into a unichain one with the best class gain.

    The winning recurrent class is translated upward so that its top level
    lands on e_max; every level below the translated class transmits nothing,
    so the battery drifts into the class from any start.
    """
    total = np.asarray(policy_total, dtype=np.int64)
    structure = classify_chains(kernel)
    if structure.unichain:
        return total
    gains = class_gains(kernel, values, structure)
    # Prefer the larger top level among numerically tied classes.
    top_gain = max(gains)
    tied = [i for i, g in enumerate(gains) if abs(g - top_gain) <= 1e-12 * (1.0 + abs(top_gain))]
    best = max(tied, key=lambda i: max(structure.recurrent[i]))
    cls = structure.recurrent[best]
    e_max = total.shape[0] - 1
    shift = e_max - max(cls)
    out = np.zeros_like(total)
    start = min(cls) + shift
    out[start:] = total[start - shift:e_max + 1 - shift]
    repaired = TransitionKernel(kernel.step, kernel.probs, out)
    if classify_chains(repaired).unichain:
        return out
    # Copied levels between class members can hold another closed class;
    # keep only the translated class itself.
    keep = np.array(cls) + shift
    out2 = np.zeros_like(total)
    out2[keep] = total[np.array(cls)]
    return out2


# ---------------------------------------------------------------------------
# Evaluation and improvement
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Evaluation:
    gain: float
    bias: np.ndarray          # (E+1, S), zero at (0, 0)
    level_bias: np.ndarray    # w[e] = sum_s p_s bias[e, s]
    residual: float


def evaluate_policy(policy_total, kernel: TransitionKernel, values: np.ndarray) -> Evaluation:
    """Gain and bias of a unichain policy.

    Solves g + w = r + P w on the battery chain (w[0] pinned), then recovers
    the state bias h(e, s) = c*(a, s) - g + step[e - a] . w and shifts it so
    that h(0, 0) = 0.
    """
    total = np.asarray(policy_total, dtype=np.int64)
    P = kernel.battery
    if not classify_chains(P).unichain:
        raise SingularMatrixError("policy is multichain; evaluation system is singular")
    S = kernel.probs.size
    r = expected_reward(total, values, kernel.probs)
    n = P.shape[0]
    A = np.eye(n) - P
    A[:, 0] = 1.0  # column of w[0] now carries the gain
    sol = numerics.solve_linear(A, r)
    gain = float(sol[0])
    w = sol.copy()
    w[0] = 0.0
    resid = float(np.max(np.abs(gain + w - r - P @ w)))
    if resid > 1e-9 * (1.0 + np.max(np.abs(r))):
        raise SingularMatrixError(f"evaluation residual {resid:.2e} exceeds 1e-9")
    levels = np.arange(n)[:, None]
    U = kernel.step @ w
    bias = values[total, np.arange(S)[None, :]] - gain + U[levels - total]
    shift = bias[0, 0]
    bias = bias - shift
    return Evaluation(gain, bias, w - shift, resid)


def _q_values(e, values, U):
    # Q[a, s] = c*(a, s) + U[e - a] for a = 0..e
    a = np.arange(e + 1)
    return values[: e + 1, :] + U[e - a][:, None]


def improve_policy(level_bias: np.ndarray, step: np.ndarray, values: np.ndarray,
                   current: Optional[np.ndarray] = None, prune_shape=None,
                   debug: bool = False) -> np.ndarray:
    """Greedy policy for a bias vector; ties go to the smallest power.

    ``prune_shape=(n_g, n_h)`` restricts the search using monotonicity in the
    channel gains (g-major state ordering; use n_h=1 for legitimate-only
    states). With ``debug`` the pruned choice is checked against a full search.
    """
    U = step @ level_bias
    E1, S = values.shape
    out = np.zeros((E1, S), dtype=np.int64)
    for e in range(E1):
        Q = _q_values(e, values, U)
        best = Q.max(axis=0)
        tol = _TIE * (1.0 + np.abs(best))
        choice = np.argmax(Q >= best - tol, axis=0)
        if prune_shape is not None:
            pruned = _pruned_choice(Q, prune_shape)
            if debug:
                lost = best - Q[pruned, np.arange(S)]
                assert np.all(lost <= tol), "monotone pruning changed the maximizer"
            choice = pruned
        out[e] = choice
    return out


def _pruned_choice(Q, shape):
    n_g, n_h = shape
    S = Q.shape[1]
    A = Q.shape[0]
    choice = np.zeros(S, dtype=np.int64)
    for ig in range(n_g):
        for ih in range(n_h):
            s = ig * n_h + ih
            lo = choice[(ig - 1) * n_h + ih] if ig > 0 else 0
            hi = choice[ig * n_h + ih - 1] if ih > 0 else A - 1
            if lo > hi:  # bounds crossed: fall back to the full range
                lo, hi = 0, A - 1
            seg = Q[lo:hi + 1, s]
            m = seg.max()
            choice[s] = lo + int(np.argmax(seg >= m - _TIE * (1.0 + abs(m))))
    return choice


# ---------------------------------------------------------------------------
# Driver
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class SolveReport:
    policy: Policy
    gain: float
    raw_gain: float
    battery_steady_state: np.ndarray
    iterations: int
    recurrent_class: tuple
    bias: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        table = self.policy.table
        rows = []
        E1, S = self.policy.total.shape
        for e in range(E1):
            for s in range(S):
                row = {"e": e, "s": s, "rho_tot": int(self.policy.total[e, s])}
                if table is not None:
                    row["rho"] = [float(v) for v in table.rho[self.policy.total[e, s], s]]
                rows.append(row)
        return {
            "gain": self.gain,
            "raw_gain": self.raw_gain,
            "iterations": self.iterations,
            "recurrent_class": list(self.recurrent_class),
            "battery_steady_state": [float(v) for v in self.battery_steady_state],
            "diagnostics": self.diagnostics,
            "policy": rows,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)


def unichain_conditions(policy_total: np.ndarray, b_min: int, b_max: int) -> dict:
    """Sufficient conditions for a unichain policy.

    ``upward``: every level below e_max has a channel state whose action is
    below b_max. ``downward``: every level above 0 has one whose action
    exceeds b_min. Either suffices; both together give an irreducible chain.
    """
    total = np.asarray(policy_total)
    upward = bool(np.all((total[:-1] < b_max).any(axis=1)))
    downward = bool(np.all((total[1:] > b_min).any(axis=1)))
    return {"upward": upward, "downward": downward}


def d_function(rho: float, g1: float, h1: float, g2: float, h2: float) -> float:
    """d/drho [R(g2, h2, rho) - R(g1, h1, rho)] for one carrier, variable coding.

    Non-negative everywhere implies the optimal power in state (g2, h2) is at
    least that in state (g1, h1) at every battery level.
    """
    def slope(g, h):
        if g <= h:
            return 0.0
        return (g / (1.0 + g * rho) - h / (1.0 + h * rho)) / LN2
    return slope(g2, h2) - slope(g1, h1)


def flow_balance(pi: np.ndarray, policy_total: np.ndarray, probs: np.ndarray,
                 arrival_pmf) -> dict:
    """Long-run energy spent vs. energy admitted into the battery per slot."""
    E1 = pi.size
    e_max = E1 - 1
    total = np.asarray(policy_total)
    spent = float(pi @ (total @ probs))
    pmf = np.asarray(arrival_pmf, dtype=float)
    b = np.arange(pmf.size)
    admitted = 0.0
    for e in range(E1):
        if pi[e] == 0:
            continue
        d = e - total[e]  # (S,)
        stored = np.minimum(d[:, None] + b[None, :], e_max) - d[:, None]
        admitted += pi[e] * float(probs @ (stored @ pmf))
    return {"consumed": spent, "admitted": admitted, "mean_arrival": float(pmf @ b)}


def _prune_shape(config, n_channel):
    if config.N != 1 or config.csi == "statistical":
        return None
    n_g = len(channel_states(config.with_(csi="partial")))
    n_h = n_channel // n_g
    return (n_g, n_h)


def solve(config: SystemConfig, splitter: str = "optimal", table: Optional[RewardTable] = None,
          max_iter: int = DEFAULT_MAX_ITER, prune: bool = False, debug: bool = False,
          cache_dir=None, workers: int = 1) -> SolveReport:
    """Optimal secrecy policy by policy iteration with unichain repair."""
    space = StateSpace.from_config(config)
    if table is None:
        table = cached_reward_table(config, splitter, cache_dir, workers)
    values = np.asarray(table.values)
    if values.shape != (config.e_max + 1, space.n_channel):
        raise DomainError(f"reward table shape {values.shape} does not match the state space")
    step = step_matrix(config.e_max, config.arrivals.pmf)
    probs = space.probs
    shape = _prune_shape(config, space.n_channel) if prune else None

    def make(total):
        return TransitionKernel(step, probs, total)

    total = np.zeros(values.shape, dtype=np.int64)
    kernel = make(total)
    total = repair_unichain(total, kernel, values)
    kernel = make(total)
    ev = evaluate_policy(total, kernel, values)
    gains = [ev.gain]
    seen = {total.tobytes()}
    iterations = 0
    for iterations in range(1, max_iter + 1):
        if _attains_max(total, ev.level_bias, step, values):
            break
        new = improve_policy(ev.level_bias, step, values, total, shape, debug)
        new = repair_unichain(new, make(new), values)
        key = new.tobytes()
        if key in seen:
            break
        seen.add(key)
        total = new
        kernel = make(total)
        ev_new = evaluate_policy(total, kernel, values)
        if ev_new.gain < ev.gain - 1e-10 * (1.0 + abs(ev.gain)):
            raise ConvergenceError(
                f"gain decreased from {ev.gain!r} to {ev_new.gain!r} at iteration {iterations}")
        ev = ev_new
        gains.append(ev.gain)
    else:
        raise ConvergenceError(f"policy iteration did not converge in {max_iter} iterations")

    structure = classify_chains(kernel)
    cls = structure.recurrent[0]
    pi = steady_state(kernel, cls)
    flows = flow_balance(pi, total, probs, config.arrivals.pmf)
    diagnostics = {
        "gains": gains,
        "unichain_conditions": unichain_conditions(total, config.arrivals.b_min,
                                                   config.arrivals.b_max),
        "flow": flows,
        "optimality_gap": _optimality_gap(total, ev.level_bias, step, values),
    }
    return SolveReport(
        policy=Policy(total, table),
        gain=max(ev.gain, 0.0),
        raw_gain=ev.gain,
        battery_steady_state=pi,
        iterations=iterations,
        recurrent_class=cls,
        bias=ev.bias,
        diagnostics=diagnostics,
    )


def _gaps(total, level_bias, step, values):
    U = step @ level_bias
    E1, S = values.shape
    gaps = np.zeros((E1, S))
    for e in range(E1):
        Q = _q_values(e, values, U)
        gaps[e] = Q.max(axis=0) - Q[total[e], np.arange(S)]
    return gaps, U


def _attains_max(total, level_bias, step, values) -> bool:
    gaps, U = _gaps(total, level_bias, step, values)
    scale = 1.0 + np.max(np.abs(values)) + np.max(np.abs(U))
    return bool(np.all(gaps <= _TIE * scale))


def _optimality_gap(total, level_bias, step, values) -> float:
    gaps, _ = _gaps(total, level_bias, step, values)
    return float(gaps.max())


__all__ = [
    "StateSpace", "Policy", "TransitionKernel", "ChainStructure", "Evaluation", "SolveReport",
    "step_matrix", "build_transition_kernel", "classify_chains", "steady_state",
    "expected_reward", "class_gains", "repair_unichain", "evaluate_policy", "improve_policy",
    "unichain_conditions", "d_function", "flow_balance", "solve", "check_feasible",
]
