"""Splitting a total transmit power across parallel sub-carriers.

Three splitters are provided: the closed-form water-filling rule for full
channel knowledge, a numerical equal-marginal rule for partial or statistical
knowledge, and the uniform baseline. :func:`build_reward_table` evaluates a
splitter for every integer power budget and channel state, which is the inner
step of the policy solver.

Table cache layout (little-endian)::

    offset  size        content
    0       8           magic b"OSPTBL01"
    8       32          sha256 digest of the table key
    40      3 x uint64  rows (e_max + 1), cols (channel states), N
    64      rows*cols   float64 rewards, row-major
    ...     rows*cols*N float64 per-carrier powers, row-major
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.optimize

from . import numerics
from .errors import ConvergenceError, DomainError
from .models import SystemConfig, channel_states
from .numerics import Tolerance
from .reward import RewardKernel, c_total

SPLITTERS = ("optimal", "uniform")


@dataclass(frozen=True)
class SplitResult:
    rho_vec: tuple
    achieved_reward: float
    eta: Optional[float] = None
    unallocated: float = 0.0


def split_uniform(x: float, N: int) -> SplitResult:
    if x < 0 or N < 1:
        raise DomainError("need x >= 0 and N >= 1")
    return SplitResult(tuple([x / N] * N), 0.0)


# ---------------------------------------------------------------------------
# Full channel knowledge
# ---------------------------------------------------------------------------

def _carrier_power(g, h, eta):
    # Stationary point of ln(1+g rho) - ln(1+h rho) - eta rho, clipped at 0.
    # sqrt(a^2/4 + a/eta) - b/2 with a = 1/h - 1/g, b = 1/h + 1/g, rewritten
    # in terms of 1/a so that it neither overflows nor cancels as h -> 0.
    inv_alpha = g * h / (g - h)
    root = math.sqrt(0.25 + inv_alpha / eta) + 0.5
    return max(1.0 / (eta * root) - 1.0 / g, 0.0)


def split_full_csi(x: float, g_vec: Sequence[float], h_vec: Sequence[float],
                   coding: str = "variable") -> SplitResult:
    """Optimal split when both gain vectors are known.

    Only carriers with g > h receive power. The Lagrange multiplier ``eta``
    (in nats per unit power) is found by bisection on log(eta), since the
    total allocated power decreases monotonically in eta.
    """
    if len(g_vec) != len(h_vec) or not g_vec:
        raise DomainError("g_vec and h_vec must have the same positive length")
    if x < 0:
        raise DomainError(f"total power must be non-negative, got {x}")
    N = len(g_vec)
    active = [r for r in range(N) if g_vec[r] > h_vec[r]]
    if x == 0 or not active:
        return SplitResult(tuple([0.0] * N), 0.0, None, float(x))

    def total(log_eta):
        eta = math.exp(log_eta)
        return sum(_carrier_power(g_vec[r], h_vec[r], eta) for r in active)

    lo, hi = 0.0, 0.0
    if total(0.0) > x:
        while total(hi) > x:
            hi += math.log(2.0)
    else:
        while total(lo) < x:
            lo -= math.log(2.0)
    log_eta = numerics.bisect(lambda v: total(v) - x, lo, hi,
                              Tolerance(rel=1e-15, abs=1e-13 * max(1.0, x), max_iter=4000))
    eta = math.exp(log_eta)
    rho = [0.0] * N
    for r in active:
        rho[r] = _carrier_power(g_vec[r], h_vec[r], eta)
    s = sum(rho)
    if s <= 0:
        # Degenerate: all mass sits at the kink, give it to the best carrier.
        best = max(active, key=lambda r: g_vec[r] - h_vec[r])
        rho[best] = float(x)
    else:
        rho = [p * x / s for p in rho]
    return SplitResult(tuple(rho), c_total(rho, g_vec, h_vec, coding), eta)


# ---------------------------------------------------------------------------
# Partial / statistical knowledge
# ---------------------------------------------------------------------------

def _derivative(f, rho):
    step = 1e-5 * (1.0 + rho)
    if rho < step:
        # One-sided second-order stencil; f is undefined below 0.
        return (-3.0 * f(rho) + 4.0 * f(rho + step) - f(rho + 2.0 * step)) / (2.0 * step)
    return (f(rho + step) - f(rho - step)) / (2.0 * step)


def _looks_concave(f, x, samples=9):
    xs = np.linspace(0.0, x, samples)
    ys = np.array([f(v) for v in xs])
    second = ys[2:] - 2.0 * ys[1:-1] + ys[:-2]
    scale = max(1.0, float(np.max(np.abs(ys))))
    return bool(np.all(second <= 1e-9 * scale))


def _waterfill(funcs, x):
    derivs = [(lambda r, f=f: _derivative(f, r)) for f in funcs]
    d0 = [d(0.0) for d in derivs]
    dx = [d(x) for d in derivs]
    lam_hi = max(d0)
    lam_lo = min(dx)
    if lam_hi - lam_lo <= 1e-12 * max(1.0, abs(lam_hi)):
        # Flat marginals: every split is equally good.
        return [x / len(funcs)] * len(funcs)

    def power(r, lam):
        if d0[r] <= lam:
            return 0.0
        if dx[r] >= lam:
            return x
        return scipy.optimize.brentq(lambda v: derivs[r](v) - lam, 0.0, x,
                                     xtol=1e-12 * max(1.0, x), rtol=1e-12)

    def excess(lam):
        return sum(power(r, lam) for r in range(len(funcs))) - x

    if excess(lam_lo) < 0:  # numerical flatness at the budget edge
        lam = lam_lo
    else:
        lam = scipy.optimize.brentq(excess, lam_lo, lam_hi, xtol=1e-13, rtol=1e-13)
    rho = [power(r, lam) for r in range(len(funcs))]
    s = sum(rho)
    if s <= 0:
        rho = [0.0] * len(funcs)
        rho[int(np.argmax(d0))] = x
        return rho
    return [p * x / s for p in rho]


def _simplex_points(center, step, radius, x):
    # Grid points on {rho >= 0, sum = x} within +-radius steps of center
    # in the first N-1 coordinates.
    N = len(center)
    if N == 1:
        return np.array([[x]])
    axes = [center[i] + step * np.arange(-radius, radius + 1) for i in range(N - 1)]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, N - 1)
    mesh = mesh[np.all(mesh >= -1e-15, axis=1)]
    last = x - mesh.sum(axis=1)
    keep = last >= -1e-12 * max(1.0, x)
    mesh = np.clip(mesh[keep], 0.0, None)
    return np.column_stack([mesh, np.clip(last[keep], 0.0, None)])


def _grid_refine(funcs, x, coarse=40, levels=6, shrink=4):
    """Exhaustive simplex grid followed by repeated local zooms."""
    N = len(funcs)

    def score(points):
        return np.array([sum(f(p) for f, p in zip(funcs, row)) for row in points])

    step = x / coarse
    pts = _simplex_points([x / 2.0] * N, step, coarse, x)
    vals = score(pts)
    best = pts[int(np.argmax(vals))]
    for _ in range(levels):
        step /= shrink
        pts = _simplex_points(best, step, 2 * shrink, x)
        vals = score(pts)
        best = pts[int(np.argmax(vals))]
    return [float(v) for v in best]


def split_partial_csi(x: float, g_vec: Sequence[float], kernel: RewardKernel) -> SplitResult:
    """Maximize the sum of expected per-carrier rewards for a power budget.

    Concave per-carrier rewards are split by equalizing numerically
    differentiated marginals; otherwise a zooming grid search is used. The
    budget is always spent in full, so under constant-rate coding the result
    can be negative and it is up to the caller to compare with smaller budgets.
    """
    if x < 0:
        raise DomainError(f"total power must be non-negative, got {x}")
    N = kernel.N
    if kernel.csi == "statistical":
        g_vec = [0.0] * N
    if len(g_vec) != N:
        raise DomainError(f"expected {N} gains, got {len(g_vec)}")
    if x == 0:
        return SplitResult(tuple([0.0] * N), 0.0)
    if N == 1:
        return SplitResult((float(x),), kernel.carrier_reward(0, g_vec[0], x))

    funcs = [(lambda rho, r=r: kernel.carrier_reward(r, g_vec[r], rho)) for r in range(N)]
    try:
        if all(_looks_concave(f, x) for f in funcs):
            rho = _waterfill(funcs, x)
        else:
            rho = _grid_refine(funcs, x)
    except (ValueError, RuntimeError) as exc:
        raise ConvergenceError(
            f"power split failed for x={x}, g={tuple(g_vec)}: {exc}") from exc
    value = sum(f(p) for f, p in zip(funcs, rho))
    return SplitResult(tuple(rho), value)


# ---------------------------------------------------------------------------
# Reward tables
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RewardTable:
    """Best reward ``values[x, s]`` and split ``rho[x, s, :]`` for every
    integer budget x and channel-state index s."""

    values: np.ndarray
    rho: np.ndarray
    splitter: str = "optimal"

    @property
    def e_max(self) -> int:
        return self.values.shape[0] - 1

    @property
    def n_states(self) -> int:
        return self.values.shape[1]

    def split(self, x: int, s: int) -> SplitResult:
        rho = tuple(float(v) for v in self.rho[x, s])
        return SplitResult(rho, float(self.values[x, s]), None, float(x) - sum(rho))


def _split_for(kernel, splitter, x, state):
    N = kernel.N
    if splitter == "uniform":
        rho = split_uniform(x, N).rho_vec
        return SplitResult(rho, kernel.reward(rho, state.g, state.h))
    if kernel.csi == "full":
        return split_full_csi(x, state.g, state.h, kernel.coding)
    return split_partial_csi(x, state.g, kernel)


def _table_column(args):
    kernel, splitter, e_max, state = args
    vals = np.zeros(e_max + 1)
    rho = np.zeros((e_max + 1, kernel.N))
    for x in range(1, e_max + 1):
        res = _split_for(kernel, splitter, x, state)
        vals[x] = res.achieved_reward
        rho[x] = res.rho_vec
    return vals, rho


def build_reward_table(config: SystemConfig, states=None, kernel: Optional[RewardKernel] = None,
                       splitter: str = "optimal", workers: int = 1) -> RewardTable:
    """Evaluate ``splitter`` for every budget 0..e_max and channel state."""
    if splitter not in SPLITTERS:
        raise DomainError(f"unknown splitter {splitter!r}")
    states = channel_states(config) if states is None else states
    kernel = RewardKernel.from_config(config) if kernel is None else kernel
    jobs = [(kernel, splitter, config.e_max, st) for st in states]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            cols = list(pool.map(_table_column, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        cols = [_table_column(j) for j in jobs]
    values = np.stack([c[0] for c in cols], axis=1)
    rho = np.stack([c[1] for c in cols], axis=1)
    values.flags.writeable = False
    rho.flags.writeable = False
    return RewardTable(values, rho, splitter)


# -- content-addressed cache --------------------------------------------------

_MAGIC = b"OSPTBL01"
_HEADER = struct.Struct("<8s32sQQQ")


def _jsonable(obj):
    if isinstance(obj, float):
        return repr(obj)
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def table_key(config: SystemConfig, splitter: str) -> bytes:
    """sha256 over everything that influences a reward table."""
    doc = asdict(config)
    doc.pop("state_cap", None)
    doc.pop("slot_duration", None)
    payload = json.dumps({"config": _jsonable(doc), "splitter": splitter}, sort_keys=True)
    return hashlib.sha256(payload.encode()).digest()


def save_table(path, table: RewardTable, key: bytes) -> None:
    rows, cols = table.values.shape
    N = table.rho.shape[2]
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, key, rows, cols, N))
        fh.write(np.ascontiguousarray(table.values, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(table.rho, dtype="<f8").tobytes())
    os.replace(tmp, path)


def load_table(path, key: bytes, splitter: str = "optimal") -> Optional[RewardTable]:
    """Read a cached table, or None if the file is missing or for another key."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except FileNotFoundError:
        return None
    if len(raw) < _HEADER.size:
        return None
    magic, digest, rows, cols, N = _HEADER.unpack_from(raw)
    if magic != _MAGIC or digest != key:
        return None
    n_vals = rows * cols
    expected = _HEADER.size + 8 * (n_vals + n_vals * N)
    if len(raw) != expected:
        return None
    body = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    values = body[:n_vals].reshape(rows, cols).astype(float)
    rho = body[n_vals:].reshape(rows, cols, N).astype(float)
    values.flags.writeable = False
    rho.flags.writeable = False
    return RewardTable(values, rho, splitter)


def cached_reward_table(config: SystemConfig, splitter: str = "optimal",
                        cache_dir=None, workers: int = 1) -> RewardTable:
    """build_reward_table with an optional on-disk cache keyed by content hash."""
    if cache_dir is None:
        return build_reward_table(config, splitter=splitter, workers=workers)
    key = table_key(config, splitter)
    path = os.path.join(cache_dir, key.hex()[:32] + ".tbl")
    table = load_table(path, key, splitter)
    if table is None:
        table = build_reward_table(config, splitter=splitter, workers=workers)
        os.makedirs(cache_dir, exist_ok=True)
        save_table(path, table, key)
    return table


__all__ = [
    "SPLITTERS", "SplitResult", "RewardTable", "split_uniform", "split_full_csi",
    "split_partial_csi", "build_reward_table", "table_key", "save_table", "load_table",
    "cached_reward_table",
]
