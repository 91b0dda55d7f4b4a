"""Block configurations and the coarse-graining coupling.

The block model starts from a copy of eta in every occupied block B_k =
V_n + kn; the coarse model has one site per block, sleep probability
p = P(M_n = 0) and jumps directed towards the origin.  ``run_coupling``
stabilizes the block model block by block, closest block to the origin
first, and writes the coarse instructions from the observed good or bad
block stabilizations.  All structural invariants of the construction are
checked after every step.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from ._hash import derive_seed
from .core import (
    Config,
    Instruction,
    InstructionArray,
    Interval,
    ModelParams,
    segment,
    topple,
)
from .errors import (
    BlockWindowOverflow,
    CouplingInvariantError,
    InsufficientSamples,
    MarchBudgetExhausted,
    OverrideError,
)
from .stabilize import _as_counts, default_budget, exit_count
from .stats import proportion_se, two_proportion_z, wilson_interval

DEFAULT_MARCH_BUDGET = 10**7
DEFAULT_PADDING = 20_000

GOOD = "good"
BAD = "bad"
MULTIPLICITY = "multiplicity"

_S_XI, _S_TAU, _S_TAU_PRIME = 1, 2, 3


@dataclass(frozen=True)
class BlockSpec:
    n: int
    eta: tuple
    K: int
    q: float

    def __post_init__(self):
        object.__setattr__(self, "eta", tuple(int(v) for v in _as_counts(self.eta, self.n)))
        if sum(self.eta) == 0:
            raise ValueError("eta must hold at least one particle")
        if min(self.eta) < 0:
            raise ValueError("negative particle count in eta")
        if not 0.0 <= self.q <= 1.0:
            raise ValueError("q must lie in [0, 1]")
        if self.K < 1:
            raise ValueError("K must be at least 1")

    @property
    def mass(self) -> int:
        return sum(self.eta)

    def block(self, k: int) -> Interval:
        return segment(self.n).shift(k * self.n)

    @property
    def window(self) -> Interval:
        V = segment(self.n)
        return Interval(V.lo - self.K * self.n, V.hi + self.K * self.n)


def coarse_initial(spec: BlockSpec, seed: int) -> Config:
    """I.i.d. Bernoulli(q) coarse configuration on [-K, K]."""
    rng = np.random.default_rng(derive_seed(seed, _S_XI))
    occ = (rng.random(2 * spec.K + 1) < spec.q).astype(np.int64)
    return Config(Interval(-spec.K, spec.K), occ)


def build_block_config(spec: BlockSpec, seed: int):
    """Returns (xi, xi_prime): xi holds a copy of eta on B_k iff xi_prime(k) = 1."""
    xp = coarse_initial(spec, seed)
    xi = Config(spec.window)
    eta = np.asarray(spec.eta, dtype=np.int64)
    for k in range(-spec.K, spec.K + 1):
        if xp.counts[k + spec.K]:
            a = spec.block(k).lo - spec.window.lo
            xi.counts[a:a + spec.n] = eta
    return xi, xp


def random_offset_sample(xi: Config, n: int, seed: int, return_offset: bool = False):
    """Translate ``xi`` by Y uniform on V_n."""
    V = segment(n)
    y = int(np.random.default_rng(seed).integers(V.lo, V.hi + 1))
    out = Config(xi.window.shift(y), xi.counts.copy(), xi.sleeping.copy())
    return (out, y) if return_offset else out


class CoarseInstructionArray(InstructionArray):
    """Coarse instruction stacks.

    The native entry at (k, i) is a sleep instruction iff an auxiliary copy
    of eta, stabilized in V_n on its own instructions, loses no particle;
    otherwise it is a jump towards the origin.  Its sleep probability is
    therefore p = P(M_n = 0) without p ever being computed.
    """

    def __init__(self, params: ModelParams, seed: int, eta, n: int, budget: int | None = None):
        super().__init__(params, seed)
        self.eta = np.asarray(eta, dtype=np.int64)
        self.n = n
        self.budget = budget
        self._cache: dict[tuple[int, int], Instruction] = {}

    def _draw(self, site: int, index: int) -> Instruction:
        key = (site, index)
        ins = self._cache.get(key)
        if ins is None:
            m = exit_count(self.eta, self.n, self.params, derive_seed(self.seed, site, index), self.budget)
            ins = Instruction.SLEEP if m == 0 else toward_origin(site)
            self._cache[key] = ins
        return ins


def toward_origin(k: int) -> Instruction:
    return Instruction.JUMP_LEFT if k > 0 else Instruction.JUMP_RIGHT


@dataclass
class StepRecord:
    j: int
    k: int
    case: str
    tau_prime_write: str | None
    tau_prime_index: int | None
    tau_prime_reads: list
    marched: int
    topplings: int
    aborted_reason: str | None = None

    def as_json(self) -> dict:
        return {"j": self.j, "k": self.k, "case": self.case, "tau_prime_write": self.tau_prime_write,
                "tau_prime_index": self.tau_prime_index,
                "tau_prime_reads": [list(r) for r in self.tau_prime_reads],
                "marched": self.marched, "topplings": self.topplings, "aborted_reason": self.aborted_reason}


@dataclass
class CouplingTrace:
    steps: list = field(default_factory=list)
    coarse_origin_visited: bool = False
    block0_odometer_nonzero: bool = False
    aborted: bool = False
    aborted_reason: str | None = None
    completed: bool = False
    coarse_jumps: dict = field(default_factory=dict)
    away_jumps: int = 0
    seed: int = 0

    @property
    def implication_holds(self) -> bool:
        return self.coarse_origin_visited or not self.block0_odometer_nonzero

    def writes(self) -> list:
        return [(s.k, s.tau_prime_index, s.tau_prime_write) for s in self.steps if s.tau_prime_write]

    def to_jsonl(self) -> str:
        return "".join(json.dumps(s.as_json(), sort_keys=True) + "\n" for s in self.steps)


class CouplingState:
    """Block model on a padded window plus the coarse model on [-K, K].

    The block model lives in flat arrays (cell i is site ``lo + i``); cells
    0 and m-1 are sinks whose occupation means the padding was too small.
    """

    def __init__(self, spec: BlockSpec, params: ModelParams, seed: int,
                 padding: int = DEFAULT_PADDING, march_budget: int = DEFAULT_MARCH_BUDGET,
                 budget: int | None = None):
        self.spec, self.params, self.seed = spec, params, seed
        xi, xp = build_block_config(spec, seed)
        self.lo = spec.window.lo - padding - 1
        self.m = len(spec.window) + 2 * padding + 2
        self.counts = np.zeros(self.m, dtype=np.int64)
        self.sleeping = np.zeros(self.m, dtype=np.bool_)
        self.odo = np.zeros(self.m, dtype=np.int64)
        self.kind = np.zeros(self.m, dtype=np.int8)
        a = spec.window.lo - self.lo
        self.counts[a:a + len(spec.window)] = xi.counts
        self.tau = InstructionArray(params, derive_seed(seed, _S_TAU))
        self.key, self.S, self.R, self.J = self.tau.kernel_constants()
        self.xi_prime = xp
        self.tau_prime = CoarseInstructionArray(params, derive_seed(seed, _S_TAU_PRIME), spec.eta, spec.n, budget)
        self.j = 0
        self.march_budget = march_budget
        self.budget = default_budget() if budget is None else budget
        self.eta = np.asarray(spec.eta, dtype=np.int64)
        self.coarse_jumps: dict[int, int] = {}
        self.away_jumps = 0
        self._no_ov = (np.zeros(self.m, dtype=np.bool_), np.zeros(0, dtype=np.int64),
                       np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64))

    # views
    def cells(self, k: int) -> tuple[int, int]:
        b = self.spec.block(k)
        return b.lo - self.lo, b.hi - self.lo

    def coarse(self, k: int) -> tuple[int, bool]:
        i = k + self.spec.K
        return int(self.xi_prime.counts[i]), bool(self.xi_prime.sleeping[i])

    def block_config(self) -> Config:
        W = self.spec.window
        a = W.lo - self.lo
        return Config(W, self.counts[a:a + len(W)], self.sleeping[a:a + len(W)])

    def h_prime(self, k: int) -> int:
        return self.tau_prime.used[k]

    def selectable(self):
        """Closest unstable coarse site to the origin, positive side first,
        or None when the step is the identity."""
        if self.coarse(0)[0] != 0:
            return None
        for d in range(1, self.spec.K + 1):
            for k in (d, -d):
                c, s = self.coarse(k)
                if c >= 1 and not s:
                    return k
        return None

    # block model moves
    def _check_sinks(self):
        if self.counts[0] or self.counts[-1]:
            raise BlockWindowOverflow("a particle reached the edge of the simulated window")

    def stabilize_block(self, k: int):
        """Legal topplings of B_k only.  Returns (exits toward the origin,
        exits away from it, topplings)."""
        a, b = self.cells(k)
        before_l, before_r = int(self.counts[a - 1]), int(self.counts[b + 1])
        self.kind[a:b + 1] = K.NORMAL
        try:
            t, st = K.drain_kernel(self.counts, self.sleeping, self.odo, self.kind, self.lo, self.key,
                                   self.S, self.R, self.J, a, b, self.budget, self.tau.depth_cap,
                                   *self._no_ov)
        finally:
            self.kind[a:b + 1] = K.FROZEN
        if st != K.OK:
            raise MarchBudgetExhausted(f"block {k} did not stabilize within the budget")
        el = int(self.counts[a - 1]) - before_l
        er = int(self.counts[b + 1]) - before_r
        return (el, er, int(t)) if k > 0 else (er, el, int(t))

    def _march_one(self, start: int, dest: int, budget: int) -> int:
        t, st = K.march_kernel(self.counts, self.sleeping, self.odo, self.kind, self.lo, self.key,
                               self.S, self.R, self.J, start, dest, budget, self.tau.depth_cap,
                               *self._no_ov)
        if st == K.OVERFLOW:
            raise BlockWindowOverflow("a marching particle reached the edge of the simulated window")
        if st != K.OK:
            raise MarchBudgetExhausted("forced march did not finish within its budget")
        return int(t)

    def destinations(self, ell: int) -> list[int]:
        a, _ = self.cells(ell)
        return [a + i for i, c in enumerate(self.eta) for _ in range(c)]


def forced_march(state: CouplingState, k: int, ell: int, starts: list[int]) -> int:
    """Walk particles from cells ``starts`` onto a copy of eta in B_ell.

    Starts and destinations are paired in order of distance to the origin
    and the innermost pair is walked first; every start lies outside every
    destination, so a walker stops at its destination before it could pass
    it and never reaches a filled destination.  Returns the number of
    topplings.
    """
    if not (abs(ell) == abs(k) - 1 and (ell == 0 or np.sign(ell) == np.sign(k))):
        raise ValueError("ell must be the neighbour block of k towards the origin")
    dests = state.destinations(ell)
    if len(starts) != len(dests):
        raise CouplingInvariantError(f"{len(starts)} particles to march onto {len(dests)} destinations")
    outward = 1 if k > 0 else -1
    starts = sorted(starts, key=lambda c: outward * c)
    dests = sorted(dests, key=lambda c: outward * c)
    if any(outward * s < outward * d for s, d in zip(starts, dests)):
        raise CouplingInvariantError("a marching particle starts closer to the origin than its destination")
    total = 0
    for s, d in zip(starts, dests):
        total += state._march_one(s, d, state.march_budget - total)
    return total


def _coarse_topple(state: CouplingState, k: int) -> Instruction:
    before = state.h_prime(k)
    ins = state.tau_prime.peek(k, before + 1)
    topple(state.xi_prime, state.tau_prime, k, "legal")
    if ins != Instruction.SLEEP:
        if ins != toward_origin(k):
            state.away_jumps += 1
        state.coarse_jumps[k] = state.coarse_jumps.get(k, 0) + 1
    return ins


def coupling_step(state: CouplingState) -> StepRecord | None:
    """One construction step; returns None when the step is the identity."""
    k = state.selectable()
    if k is None:
        return None
    check_priority(state, k)
    ell = k - 1 if k > 0 else k + 1
    c, _ = state.coarse(k)
    state.j += 1
    rec = StepRecord(state.j, k, "", None, None, [], 0, 0)
    try:
        if c == 1:
            a, b = state.cells(k)
            if state.sleeping[a:b + 1].any() or not np.array_equal(state.counts[a:b + 1], state.eta):
                raise CouplingInvariantError(f"block {k} is not an active copy of eta")
            inner = a - 1 if k > 0 else b + 1
            outer = b + 1 if k > 0 else a - 1
            e_in, e_out, t = state.stabilize_block(k)
            rec.topplings = t
            idx = state.h_prime(k) + 1
            rec.tau_prime_index = idx
            if e_in + e_out == 0:
                rec.case = GOOD
                write = Instruction.SLEEP
            else:
                rec.case = BAD
                write = toward_origin(k)
            try:
                state.tau_prime.install_override(k, idx, write)
            except OverrideError as e:
                raise CouplingInvariantError(str(e)) from e
            rec.tau_prime_write = "sleep" if write == Instruction.SLEEP else "jump"
            _coarse_topple(state, k)
            if state.h_prime(k) != idx:
                raise CouplingInvariantError("the rewritten coarse instruction was not the one used")
            if rec.case == BAD:
                starts = [a + i for i in range(state.spec.n) for _ in range(int(state.counts[a + i]))]
                starts += [inner] * e_in + [outer] * e_out
                rec.marched = len(starts)
                rec.topplings += forced_march(state, k, ell, starts)
        else:
            rec.case = MULTIPLICITY
            a, b = state.cells(k)
            surplus = state.counts[a:b + 1] - state.eta
            if (surplus < 0).any() or surplus.sum() < state.spec.mass:
                raise CouplingInvariantError(f"block {k} lacks a copy of eta plus {state.spec.mass} particles")
            cells = [a + i for i in range(state.spec.n) for _ in range(int(surplus[i]))]
            cells.sort(key=lambda x: x if k > 0 else -x)
            starts = cells[:state.spec.mass]
            rec.marched = len(starts)
            rec.topplings = forced_march(state, k, ell, starts)
            while True:
                ins = _coarse_topple(state, k)
                rec.tau_prime_reads.append((state.h_prime(k), "sleep" if ins == Instruction.SLEEP else "jump"))
                if ins != Instruction.SLEEP:
                    break
        state._check_sinks()
    except (MarchBudgetExhausted, BlockWindowOverflow) as e:
        rec.aborted_reason = type(e).__name__
        raise _Abort(rec, e)
    check_invariants(state)
    return rec


class _Abort(Exception):
    def __init__(self, rec, err):
        super().__init__(str(err))
        self.rec = rec
        self.err = err


# --- invariants -----------------------------------------------------------

def check_priority(state: CouplingState, k: int) -> None:
    for kk in range(-abs(k) + 1, abs(k)):
        c, s = state.coarse(kk)
        if c >= 1 and not s:
            raise CouplingInvariantError(f"block {k} selected while {kk} is unstable and closer")


def check_invariants(state: CouplingState) -> None:
    """Coherence of blocks and coarse sites, sleepers inside actives on each
    side, untouched origin block, and an empty padding."""
    spec = state.spec
    eta = state.eta
    for k in range(-spec.K, spec.K + 1):
        c, s = state.coarse(k)
        a, b = state.cells(k)
        blk = state.counts[a:b + 1]
        if c == 0:
            ok = not blk.any()
        elif s:
            ok = blk.sum() == spec.mass and bool((state.sleeping[a:b + 1] == (blk > 0)).all()) \
                and blk.max() <= 1
        else:
            ok = blk.sum() >= c * spec.mass and bool((blk >= eta).all())
        if not ok:
            raise CouplingInvariantError(f"block {k} does not match coarse value ({c}, sleeping={s})")
    for sign in (1, -1):
        ones = [d for d in range(1, spec.K + 1) if state.coarse(sign * d) == (1, False)]
        sleeps = [d for d in range(1, spec.K + 1) if state.coarse(sign * d)[1]]
        if ones and sleeps and max(sleeps) > min(ones):
            raise CouplingInvariantError("a sleeping block lies farther from the origin than an active one")
    a, b = state.cells(0)
    if state.coarse(0)[0] == 0 and state.odo[a:b + 1].any():
        raise CouplingInvariantError("the origin block was toppled while the coarse origin is empty")
    w0, w1 = state.cells(-spec.K)[0], state.cells(spec.K)[1]
    if state.counts[:w0].any() or state.counts[w1 + 1:].any():
        raise CouplingInvariantError("particles left outside the block window after a step")


def check_jump_bound(state: CouplingState) -> None:
    for k, jumps in state.coarse_jumps.items():
        if jumps > abs(k) - 1:
            raise CouplingInvariantError(f"{jumps} coarse jumps at {k} exceed |k| - 1")


# --- runs -----------------------------------------------------------------

def run_coupling(spec: BlockSpec, params: ModelParams, seed: int, step_budget: int = 10**5,
                 padding: int = DEFAULT_PADDING, march_budget: int = DEFAULT_MARCH_BUDGET,
                 state_out: list | None = None) -> CouplingTrace:
    """Iterate coupling steps until the coarse window is stable, the coarse
    origin is occupied, a budget runs out, or the block window overflows."""
    state = CouplingState(spec, params, seed, padding, march_budget)
    trace = CouplingTrace(seed=seed)
    check_invariants(state)
    while True:
        if state.j >= step_budget:
            trace.aborted, trace.aborted_reason = True, "StepBudget"
            break
        try:
            rec = coupling_step(state)
        except _Abort as ab:
            trace.steps.append(ab.rec)
            trace.aborted, trace.aborted_reason = True, ab.rec.aborted_reason
            break
        if rec is None:
            trace.completed = True
            break
        trace.steps.append(rec)
    a, b = state.cells(0)
    trace.coarse_origin_visited = state.coarse(0)[0] != 0
    trace.block0_odometer_nonzero = bool(state.odo[a:b + 1].any())
    trace.coarse_jumps = dict(state.coarse_jumps)
    trace.away_jumps = state.away_jumps
    if trace.completed and not trace.coarse_origin_visited:
        check_jump_bound(state)
    if state_out is not None:
        state_out.append(state)
    return trace


def run_traces(spec: BlockSpec, params: ModelParams, traces: int, seed: int, threads: int = 1, **kw):
    """Independent coupling runs with seeds derive_seed(seed, r), in order."""
    seeds = [derive_seed(seed, r) for r in range(traces)]
    if threads <= 1:
        return [run_coupling(spec, params, s, **kw) for s in seeds]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(lambda s: run_coupling(spec, params, s, **kw), seeds))


def tau_prime_marginal_stats(traces, p_hat: float, p_hat_trials: int | None = None,
                             conf: float = 0.99) -> dict:
    """Sleep frequency of the coarse instructions written at single-copy
    steps against an independent estimate of p.

    With ``p_hat_trials`` the two-proportion z test is reported as well.
    ``pass`` requires p_hat inside the Wilson interval of the sleep
    frequency and every coarse jump to point towards the origin."""
    writes = [w for t in traces for w in t.writes()]
    if not writes:
        raise InsufficientSamples("no coarse instruction was written")
    sleeps = sum(1 for _, _, w in writes if w == "sleep")
    n = len(writes)
    lo, hi = wilson_interval(sleeps, n, conf)
    directed = sum(t.away_jumps for t in traces) == 0
    out = {"writes": n, "sleeps": sleeps, "sleep_freq": sleeps / n, "sleep_se": proportion_se(sleeps, n),
           "ci_lo": lo, "ci_hi": hi, "p_hat": p_hat, "directed": directed,
           "pass": lo <= p_hat <= hi and directed}
    if p_hat_trials:
        z, pv = two_proportion_z(sleeps, n, round(p_hat * p_hat_trials), p_hat_trials)
        out.update({"z": z, "p_value": pv})
    return out


def summarize_traces(traces) -> dict:
    done = [t for t in traces if not t.aborted]
    return {
        "traces": len(traces),
        "aborted": len(traces) - len(done),
        "abort_reasons": {r: sum(1 for t in traces if t.aborted_reason == r)
                          for r in sorted({t.aborted_reason for t in traces if t.aborted})},
        "implication_holds": sum(1 for t in done if t.implication_holds),
        "origin_visited": sum(1 for t in done if t.coarse_origin_visited),
        "block0_toppled": sum(1 for t in done if t.block0_odometer_nonzero),
        "steps": sum(len(t.steps) for t in traces),
        "good": sum(1 for t in traces for s in t.steps if s.case == GOOD),
        "bad": sum(1 for t in traces for s in t.steps if s.case == BAD),
        "multiplicity": sum(1 for t in traces for s in t.steps if s.case == MULTIPLICITY),
    }
