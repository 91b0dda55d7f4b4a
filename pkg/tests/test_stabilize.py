import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from arw import _kernels as K
from arw._hash import derive_seed
from arw.core import Config, Instruction, InstructionArray, Interval, ModelParams, segment
from arw.errors import BudgetExhausted
from arw.stabilize import (
    Strategy, StabilizeRequest, batch_exit_counts, escorted_stabilization, exit_count,
    nb_success, nml_exit_count, nml_report, stabilize, trap_in_buffer, two_step_spread,
)
from arw.stats import wilson_interval

from conftest import reference_stabilize

STRATS = list(Strategy)


def run(eta, n, params, seed, strategy=Strategy.QUEUE_ORDER, check_order=False):
    V = segment(n)
    req = StabilizeRequest(Config.from_counts(V.lo, eta), V, strategy=strategy, strategy_seed=seed,
                           check_order=check_order)
    return stabilize(req, InstructionArray(params, seed))


def test_single_particle_exit_is_first_instruction(params):
    # M_1 = 0 exactly when the first instruction at the origin is a sleep
    for s in range(300):
        first = InstructionArray(params, s).peek(0, 1)
        assert exit_count([1], 1, params, s) == (0 if first == Instruction.SLEEP else 1)


def test_two_particles_on_one_site(params):
    # the first sleep is a no-op, so M_1 = 1 iff the instruction read right
    # after the first jump is a sleep
    for s in range(300):
        arr = InstructionArray(params, s)
        k = 1
        while arr.peek(0, k) == Instruction.SLEEP:
            k += 1
        expect = 1 if arr.peek(0, k + 1) == Instruction.SLEEP else 2
        assert exit_count([2], 1, params, s) == expect


def test_single_particle_rate_on_two_sites(params):
    # absorbing-chain oracle: P(M_2 = 0) = 2/3 for lambda = 1, symmetric jumps
    seeds = [derive_seed(11, r) for r in range(40_000)]
    el, er, _, stt = batch_exit_counts(np.tile([1, 0], (len(seeds), 1)), params, seeds)
    k = int(np.sum(el + er == 0))
    lo, hi = wilson_interval(k, len(seeds), 0.999)
    assert lo <= 2 / 3 <= hi


def test_kernel_matches_reference(params):
    rng = np.random.default_rng(3)
    for t in range(60):
        n = int(rng.integers(1, 12))
        eta = rng.integers(0, 4, n)
        ref, odo, m = reference_stabilize(eta, n, params, t)
        rep = run(eta, n, params, t)
        assert rep.final.contents() == ref.contents()
        assert rep.odometer == odo
        assert rep.exits_total == m == exit_count(eta, n, params, t)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 3), min_size=1, max_size=14), st.integers(0, 2**32),
       st.floats(0.2, 4.0), st.floats(0.0, 1.0))
def test_abelian_property(eta, seed, lam, pr):
    params = ModelParams(lam, pr)
    n = len(eta)
    reps = [run(eta, n, params, seed, s) for s in STRATS]
    for r in reps[1:]:
        assert r.final.contents() == reps[0].final.contents()
        assert r.odometer == reps[0].odometer
        assert r.exits_total == reps[0].exits_total


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 3), min_size=1, max_size=14), st.integers(0, 2**32), st.data())
def test_monotone_in_initial_configuration(eta, seed, data):
    params = ModelParams(1.0, 0.5)
    small = [data.draw(st.integers(0, v)) for v in eta]
    big = run(eta, len(eta), params, seed)
    little = run(small, len(eta), params, seed)
    assert big.odometer.dominates(little.odometer)
    assert big.exits_total >= little.exits_total


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 4), min_size=1, max_size=14), st.integers(0, 2**32))
def test_conservation_and_stability(eta, seed):
    rep = run(eta, len(eta), ModelParams(0.5, 0.5), seed)
    assert rep.final.total_particles() + rep.exits_total == sum(eta)
    assert rep.final.active_sites() == []
    assert all(rep.final.counts <= 1)


def test_extremal_strategies_keep_sleepers_behind(params):
    rng = np.random.default_rng(8)
    for t in range(30):
        eta = rng.integers(0, 3, 10)
        run(eta, 10, params, t, Strategy.LEFTMOST_ACTIVE, check_order=True)
        run(eta, 10, params, t, Strategy.RIGHTMOST_ACTIVE, check_order=True)


def test_budget_truncation(params):
    rep = run([5] * 10, 10, params, 1)
    V = segment(10)
    req = StabilizeRequest(Config.from_counts(V.lo, [5] * 10), V, budget=10)
    short = stabilize(req, InstructionArray(params, 1))
    assert short.truncated and short.topplings == 10 and not rep.truncated
    with pytest.raises(BudgetExhausted):
        exit_count([5] * 10, 10, params, 1, budget=10)


def test_strip_oracle(params):
    # absorbing chain on W = [-2, 2] with jump-only strips: P(M_1^W = 0) = 3/4
    W = Interval(-2, 2)
    hits = sum(nml_exit_count([1], 1, W, params, derive_seed(5, r)) == 0 for r in range(20_000))
    lo, hi = wilson_interval(hits, 20_000, 0.999)
    assert lo <= 0.75 <= hi


def test_strip_oracle_asymmetric():
    # absorbing chain, lambda = 2, p_right = 0.3, strips 3 left and 1 right
    params = ModelParams(2.0, 0.3)
    W = Interval(-3, 1)
    hits = sum(nml_exit_count([1], 1, W, params, derive_seed(6, r)) == 0 for r in range(20_000))
    lo, hi = wilson_interval(hits, 20_000, 0.999)
    assert lo <= 0.7987330441368863 <= hi


def test_strips_end_empty(params):
    W = Interval(-8, 9)
    rep = nml_report([2] * 6, 6, W, InstructionArray(params, 3))
    for x in W:
        if x not in segment(6):
            assert rep.final[x].__class__.__name__ == "Empty"


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 3), min_size=1, max_size=10), st.integers(0, 2**32),
       st.integers(0, 4), st.integers(0, 4))
def test_escorted_count_dominates_legal_count(eta, seed, left, right):
    n = len(eta)
    params = ModelParams(1.0, 0.5)
    V = segment(n)
    W = Interval(V.lo - left, V.hi + right)
    legal = nml_report(eta, n, W, InstructionArray(params, seed))
    esc = escorted_stabilization(eta, n, W, InstructionArray(params, seed), check_order=True)
    assert esc.exits >= legal.exits_total
    assert esc.final.total_particles() + esc.exits == sum(eta)


def test_nb_success_values():
    r = 0.5
    assert nb_success(0, 5, 1.0) == 1.0
    assert math.isclose(nb_success(1, 4, 1.0), 1 - (1 - r) ** 4)
    assert nb_success(3, 2, 1.0) == 0.0
    # two geometric failures counts summing to at most 3
    assert math.isclose(nb_success(2, 3, 1.0, strict=False), 0.25 * (1 + 2 * 0.5 + 3 * 0.25 + 4 * 0.125))


def test_trap_single_particle_closed_form():
    params = ModelParams(1.0, 0.5)
    ell = 3
    wins = sum(trap_in_buffer(1, ell, "right", params, s)[0] for s in range(20_000))
    lo, hi = wilson_interval(wins, 20_000, 0.999)
    assert lo <= 1 - 0.5 ** ell <= hi
    assert trap_in_buffer(0, 0, "left", params, 1) == (True, 0)


def test_two_step_spread_runs(params):
    ok, mp = two_step_spread([1] * 8, 8, 6, params, 2)
    assert isinstance(ok, bool) and mp >= 0
