"""Stabilization drivers: toppling strategies, kill boundaries, no-sleep
zones, the escorted extremal-active procedure and geometric trapping."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np
from scipy.stats import nbinom

from . import _kernels as K
from ._hash import derive_seed, seed_key
from ._parallel import run_chunked
from .core import (
    Config,
    DEFAULT_DEPTH_CAP,
    Instruction,
    InstructionArray,
    Interval,
    ModelParams,
    Odometer,
    is_stable_in,
    kernel_kinds,
    segment,
)
from .errors import BudgetExhausted

DEFAULT_BUDGET = 10**8


def default_budget() -> int:
    """Toppling budget per stabilization; the ARW_BUDGET variable overrides it."""
    env = os.environ.get("ARW_BUDGET")
    return int(float(env)) if env else DEFAULT_BUDGET


class Strategy(IntEnum):
    LEFTMOST_ACTIVE = K.LEFTMOST
    RIGHTMOST_ACTIVE = K.RIGHTMOST
    CLOSEST_TO_ORIGIN = K.CLOSEST
    SEEDED_RANDOM_ACTIVE = K.RANDOM
    QUEUE_ORDER = K.QUEUE


@dataclass
class StabilizeRequest:
    """What to stabilize.

    Sites of ``target`` are toppled legally, sites of ``no_sleep_zone`` carry
    jump-only stacks and are toppled while occupied, and a particle jumping
    out of ``kill_region`` is removed.
    """

    initial: Config
    target: Interval
    kill_region: Interval | None = None
    no_sleep_zone: frozenset = frozenset()
    strategy: Strategy = Strategy.QUEUE_ORDER
    budget: int | None = None
    strategy_seed: int = 1
    check_order: bool = False

    def __post_init__(self):
        if self.kill_region is None:
            self.kill_region = self.target
        self.no_sleep_zone = frozenset(self.no_sleep_zone)
        if not self.kill_region.contains_interval(self.target):
            raise ValueError("the target region must lie inside the kill region")
        for x in self.no_sleep_zone:
            if x in self.target or x not in self.kill_region:
                raise ValueError(f"no-sleep site {x} must lie in the kill region, outside the target")
        for x in self.initial.occupied():
            if x not in self.kill_region:
                raise ValueError(f"initial particle at {x} outside the kill region")
            if x not in self.target and x not in self.no_sleep_zone and \
                    not self.initial.sleeping[x - self.initial.window.lo]:
                raise ValueError(f"active particle at {x} outside the target and no-sleep zone")
        if self.budget is None:
            self.budget = default_budget()


@dataclass
class StabilizationReport:
    final: Config
    odometer: Odometer
    exits_left: int
    exits_right: int
    topplings: int
    truncated: bool
    reason: str = ""

    @property
    def exits_total(self) -> int:
        return self.exits_left + self.exits_right

    M = exits_total


def _window(W: Interval):
    # kernel window: W plus one sink cell on each side
    return W.lo - 1, len(W) + 2


def _load(config: Config, lo: int, m: int):
    counts = np.zeros(m, dtype=np.int64)
    sleeping = np.zeros(m, dtype=np.bool_)
    for x in config.occupied():
        i = x - config.window.lo
        counts[x - lo] = config.counts[i]
        sleeping[x - lo] = config.sleeping[i]
    return counts, sleeping


_STATUS = {K.OK: "", K.BUDGET: "budget", K.DEPTH: "depth cap", K.OVERFLOW: "window overflow"}


def stabilize(request: StabilizeRequest, array: InstructionArray) -> StabilizationReport:
    """Topple strategy-selected sites until the target is stable and the
    no-sleep zone is empty, or the budget runs out (``truncated``)."""
    W = request.kill_region
    lo, m = _window(W)
    array.set_jump_only(request.no_sleep_zone)
    counts, sleeping = _load(request.initial, lo, m)
    kind = kernel_kinds(lo, m, array, request.target, request.no_sleep_zone)
    odo, has_ov, ov_s, ov_i, ov_c = array.kernel_inputs(lo, m)
    odo0 = odo.copy()
    key, S, R, J = array.kernel_constants()
    if request.strategy == Strategy.QUEUE_ORDER:
        t, st = K.drain_kernel(counts, sleeping, odo, kind, lo, key, S, R, J, 1, m - 2,
                               request.budget, array.depth_cap, has_ov, ov_s, ov_i, ov_c)
    else:
        t, st = K.ordered_kernel(counts, sleeping, odo, kind, lo, key, S, R, J, 1, m - 2,
                                 int(request.strategy), np.uint64(request.strategy_seed),
                                 request.budget, array.depth_cap, has_ov, ov_s, ov_i, ov_c,
                                 request.check_order)
    if st == K.ORDER:
        raise AssertionError("an active site lies beyond a sleeping one under an extremal strategy")
    array.absorb(lo, odo)
    final = Config(W, counts[1:-1], sleeping[1:-1])
    final.killed_left = request.initial.killed_left + int(counts[0])
    final.killed_right = request.initial.killed_right + int(counts[-1])
    run = odo - odo0
    odometer = Odometer({lo + int(i): int(run[i]) for i in np.flatnonzero(run)})
    truncated = st != K.OK
    if not truncated:
        assert is_stable_in(final, request.target)
        assert all(final.counts[x - W.lo] == 0 for x in request.no_sleep_zone)
    return StabilizationReport(final, odometer, int(counts[0]), int(counts[-1]), int(t),
                               truncated, _STATUS.get(st, str(st)))


def _as_counts(eta, n: int) -> np.ndarray:
    if isinstance(eta, Config):
        V = segment(n)
        c = np.zeros(n, dtype=np.int64)
        for x in eta.occupied():
            if x not in V:
                raise ValueError(f"particle at {x} outside V_{n}")
            c[x - V.lo] = eta.counts[x - eta.window.lo]
        return c
    c = np.asarray(eta, dtype=np.int64)
    if c.shape != (n,):
        raise ValueError(f"expected {n} site counts, got shape {c.shape}")
    return c


def exit_count(eta, n: int, params: ModelParams, seed: int, budget: int | None = None) -> int:
    """M_n: particles killed while stabilizing ``eta`` (all active) in V_n."""
    counts = _as_counts(eta, n)
    el, er, _, st = batch_exit_counts(counts[None, :], params, [seed], budget=budget)
    if st[0] != K.OK:
        raise BudgetExhausted(f"stabilization of V_{n} stopped: {_STATUS.get(int(st[0]))}")
    return int(el[0] + er[0])


def batch_exit_counts(etas: np.ndarray, params: ModelParams, seeds, threads: int = 1,
                      budget: int | None = None, depth_cap: int = DEFAULT_DEPTH_CAP):
    """Killed-boundary stabilization of every row of ``etas`` on V_n.

    Row r uses the instruction array of seed ``seeds[r]`` (so it agrees with
    ``InstructionArray(params, seeds[r])``).  Returns arrays
    (exits_left, exits_right, topplings, status).
    """
    etas = np.ascontiguousarray(etas, dtype=np.int64)
    trials, n = etas.shape
    keys = np.array([seed_key(int(s)) for s in seeds], dtype=np.uint64)
    S, R, _ = params.thresholds()
    lo = segment(n).lo
    b = default_budget() if budget is None else int(budget)

    def work(a, z):
        return K.batch_exit_counts(etas[a:z], keys[a:z], lo, np.uint64(S), np.uint64(R), b, depth_cap)

    if trials == 0:
        e = np.zeros(0, dtype=np.int64)
        return e, e, e, e
    return run_chunked(work, trials, threads)


# --- no man's land ---------------------------------------------------------

@dataclass
class EscortReport:
    exits: int
    exits_left: int
    exits_right: int
    escorts: int
    topplings: int
    odometer: Odometer
    final: Config
    truncated: bool


def escorted_stabilization(eta, n: int, W: Interval, array: InstructionArray,
                           budget: int | None = None, check_order: bool = False) -> EscortReport:
    """Escorted extremal-active stabilization of ``eta`` on V_n inside W.

    With a strip on the left only, the leftmost active site of V_n is
    toppled and every particle leaving V_n to the left is walked out of W.
    Otherwise the inner region is U = [min W, max V_n]: its rightmost active
    site is toppled and right exits are walked out of W.  Strip sites carry
    jump-only stacks.
    """
    V = segment(n)
    if not W.contains_interval(V):
        raise ValueError("W must contain V_n")
    strips = [x for x in W if x not in V]
    array.set_jump_only(strips)
    lo, m = _window(W)
    counts = np.zeros(m, dtype=np.int64)
    counts[V.lo - lo:V.hi - lo + 1] = _as_counts(eta, n)
    sleeping = np.zeros(m, dtype=np.bool_)
    kind = kernel_kinds(lo, m, array, V, strips)
    odo, has_ov, ov_s, ov_i, ov_c = array.kernel_inputs(lo, m)
    odo0 = odo.copy()
    key, S, R, J = array.kernel_constants()
    if W.hi == V.hi:
        side, ia, ib = -1, V.lo - lo, V.hi - lo
    else:
        side, ia, ib = 1, W.lo - lo, V.hi - lo
    b = default_budget() if budget is None else budget
    t, esc, st = K.escorted_kernel(counts, sleeping, odo, kind, lo, key, S, R, J, ia, ib, side, b,
                                   array.depth_cap, has_ov, ov_s, ov_i, ov_c, check_order)
    if st == K.ORDER:
        raise AssertionError("sleeping particle found beyond the extremal active site")
    array.absorb(lo, odo)
    run = odo - odo0
    final = Config(W, counts[1:-1], sleeping[1:-1])
    final.killed_left, final.killed_right = int(counts[0]), int(counts[-1])
    return EscortReport(int(counts[0] + counts[-1]), int(counts[0]), int(counts[-1]), int(esc), int(t),
                        Odometer({lo + int(i): int(run[i]) for i in np.flatnonzero(run)}),
                        final, st != K.OK)


def stabilize_with_nml(eta, n: int, W: Interval, params: ModelParams, seed: int,
                       budget: int | None = None) -> int:
    """Number of particles leaving W under the escorted procedure."""
    rep = escorted_stabilization(eta, n, W, InstructionArray(params, seed), budget)
    if rep.truncated:
        raise BudgetExhausted("escorted stabilization stopped early")
    return rep.exits


def nml_exit_count(eta, n: int, W: Interval, params: ModelParams, seed: int,
                   budget: int | None = None, strategy: Strategy = Strategy.QUEUE_ORDER) -> int:
    """M_n^W: legal in V_n, no-sleep strips W \\ V_n that must end empty."""
    rep = nml_report(eta, n, W, InstructionArray(params, seed), budget, strategy)
    if rep.truncated:
        raise BudgetExhausted("stabilization with strips stopped early", rep)
    return rep.exits_total


def nml_report(eta, n: int, W: Interval, array: InstructionArray, budget: int | None = None,
               strategy: Strategy = Strategy.QUEUE_ORDER) -> StabilizationReport:
    V = segment(n)
    counts = _as_counts(eta, n)
    init = Config(W)
    init.counts[V.lo - W.lo:V.hi - W.lo + 1] = counts
    req = StabilizeRequest(init, V, W, frozenset(x for x in W if x not in V), strategy, budget)
    return stabilize(req, array)


# --- trapping --------------------------------------------------------------

def nb_success(k: int, ell: int, lam: float, strict: bool = True) -> float:
    """P(G_1 + ... + G_k <= ell) for i.i.d. geometric G_j on {0, 1, ...}
    with success probability lam/(1+lam).  ``strict`` uses the trapping
    layout's event sum(G_j + 1) <= ell instead."""
    if k == 0:
        return 1.0
    budget = ell - k if strict else ell
    if budget < 0:
        return 0.0
    return float(nbinom.cdf(budget, k, lam / (1.0 + lam)))


def _trap(k: int, ell: int, step: int, first: int, array: InstructionArray):
    # particle j starts one slot beyond the rest site of particle j-1 and
    # advances on every jump instruction read at a fresh slot
    slot = 0
    jumps = 0
    for _ in range(k):
        slot += 1
        while True:
            if slot > ell:
                return False, jumps
            ins = array.consume(first + step * (slot - 1))
            if ins == Instruction.SLEEP:
                break
            jumps += 1
            slot += 1
    return True, jumps


def trap_in_buffer(k: int, ell: int, side: str, params: ModelParams, seed: int):
    """Settle ``k`` particles in a fresh buffer of ``ell`` sites.

    Returns (success, jumps_used); success means every particle came to rest
    inside the buffer.
    """
    if k < 0 or ell < 0:
        raise ValueError("k and ell must be non-negative")
    if side not in ("left", "right"):
        raise ValueError("side must be 'left' or 'right'")
    step = -1 if side == "left" else 1
    return _trap(k, ell, step, step, InstructionArray(params, seed))


def two_step_spread(eta, n: int, ell: int, params: ModelParams, seed: int, budget: int | None = None):
    """Stabilize in V_{n+2ell} with no-sleep strips around V_n, then trap the
    particles that left on each side in the outer buffers of V_{n+4ell}.

    Returns (no_exit_enlarged, M_prime)."""
    array = InstructionArray(params, seed)
    W = segment(n + 2 * ell)
    rep = nml_report(eta, n, W, array, budget)
    if rep.truncated:
        raise BudgetExhausted("first step stopped early", rep)
    ok_l, _ = _trap(rep.exits_left, ell, -1, W.lo - 1, array)
    ok_r, _ = _trap(rep.exits_right, ell, 1, W.hi + 1, array)
    return ok_l and ok_r, rep.exits_total


def seeds_for(master: int, trials: int, *path: int) -> list[int]:
    """Per-trial seeds ``derive_seed(master, *path, r)``."""
    return [derive_seed(master, *path, r) for r in range(trials)]
