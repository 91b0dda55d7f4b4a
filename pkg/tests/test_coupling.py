import json

import numpy as np
import pytest
from scipy.stats import chisquare

from arw import _kernels as K
from arw._hash import derive_seed
from arw.core import Config, InstructionArray, Interval, ModelParams, segment
from arw.coupling import (
    BAD, GOOD, BlockSpec, CouplingState, build_block_config, check_invariants, coupling_step,
    forced_march, random_offset_sample, run_coupling, run_traces, summarize_traces,
    tau_prime_marginal_stats,
)
from arw.errors import InsufficientSamples
from arw.stats import wilson_interval

P = ModelParams(1.0, 0.5)
ETA = (1, 1, 1, 1, 1)


def test_block_spec_validation():
    with pytest.raises(ValueError):
        BlockSpec(3, (0, 0, 0), 5, 0.5)
    with pytest.raises(ValueError):
        BlockSpec(3, (1, 0, 0), 5, 1.5)


def test_block_config_extremes():
    xi, xp = build_block_config(BlockSpec(5, ETA, 4, 0.0), 1)
    assert xi.total_particles() == 0 and xp.total_particles() == 0
    xi, xp = build_block_config(BlockSpec(5, (2, 0, 1, 0, 0), 4, 1.0), 1)
    assert xi.total_particles() == 9 * 3
    assert xi.counts[:5].tolist() == [2, 0, 1, 0, 0]


def test_block_density():
    spec = BlockSpec(4, (2, 0, 1, 0), 10, 0.3)
    dens = np.mean([build_block_config(spec, s)[0].total_particles() / len(spec.window) for s in range(2000)])
    assert abs(dens - 0.3 * 3 / 4) < 0.01


def test_random_offset():
    xi, _ = build_block_config(BlockSpec(5, ETA, 3, 0.5), 2)
    ys = [random_offset_sample(xi, 5, s, return_offset=True)[1] for s in range(5000)]
    counts = np.bincount(np.array(ys) - segment(5).lo, minlength=5)
    assert chisquare(counts).pvalue > 1e-4
    s0 = next(s for s in range(100) if random_offset_sample(xi, 5, s, return_offset=True)[1] == 0)
    assert random_offset_sample(xi, 5, s0) == xi
    moved, y = random_offset_sample(xi, 5, s0 + 1, return_offset=True)
    assert moved.window == xi.window.shift(y) and moved.total_particles() == xi.total_particles()


def test_empty_run_has_no_steps():
    tr = run_coupling(BlockSpec(5, ETA, 5, 0.0), P, 1)
    assert tr.completed and not tr.steps
    assert not tr.coarse_origin_visited and not tr.block0_odometer_nonzero


def _single_block_state(seed, k=3):
    st = CouplingState(BlockSpec(5, ETA, 6, 0.0), P, seed, padding=2000)
    st.xi_prime.counts[k + 6] = 1
    a, b = st.cells(k)
    st.counts[a:b + 1] = 1
    check_invariants(st)
    return st


def test_single_block_good_and_bad_steps():
    seen = set()
    for seed in range(200):
        st = _single_block_state(seed)
        rec = coupling_step(st)
        a2, b2 = st.cells(2)
        a3, b3 = st.cells(3)
        if rec.case == GOOD:
            assert st.coarse(3) == (1, True)
            assert st.counts[a3:b3 + 1].sum() == 5 and st.sleeping[a3:b3 + 1].all()
            assert rec.tau_prime_write == "sleep"
        else:
            assert rec.case == BAD and rec.tau_prime_write == "jump"
            assert st.coarse(2) == (1, False) and st.coarse(3) == (0, False)
            assert st.counts[a2:b2 + 1].tolist() == list(ETA)
            assert st.odo[:a2].sum() == 0  # nothing closer to the origin was toppled
        assert st.tau_prime.used[3] == rec.tau_prime_index == 1
        seen.add(rec.case)
        if seen == {GOOD, BAD}:
            break
    assert seen == {GOOD, BAD}


def test_march_from_destination_costs_nothing():
    st = _single_block_state(0)
    a, _ = st.cells(2)
    st.counts[st.cells(3)[0]:st.cells(3)[1] + 1] = 0
    st.counts[a:a + 5] = 1
    # starts equal destinations: zero topplings
    assert forced_march(st, 3, 2, [a + i for i in range(5)]) == 0


def test_march_mean_matches_first_passage():
    # drift 0.8 toward the destination, lambda = 1: mean topplings over a
    # distance of 3 is 3 / ((1 - 1/2)(0.8 - 0.2)) = 10 (absorbing-chain value)
    params = ModelParams(1.0, 0.2)
    m = 400
    tot = []
    for s in range(4000):
        counts = np.zeros(m, dtype=np.int64)
        sleeping = np.zeros(m, dtype=np.bool_)
        odo = np.zeros(m, dtype=np.int64)
        kind = np.zeros(m, dtype=np.int8)
        counts[13] = 1
        key, S, R, J = InstructionArray(params, derive_seed(3, s)).kernel_constants()
        t, stt = K.march_kernel(counts, sleeping, odo, kind, 0, key, S, R, J, 13, 10, 10**6, 10**7,
                                np.zeros(m, dtype=np.bool_), np.zeros(0, dtype=np.int64),
                                np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64))
        assert stt == K.OK and counts[10] == 1
        tot.append(t)
    tot = np.array(tot)
    assert abs(tot.mean() - 10.0) < 4 * tot.std() / np.sqrt(tot.size)


def test_traces_hold_the_implication_and_invariants():
    spec = BlockSpec(5, ETA, 12, 0.3)
    traces = run_traces(spec, P, 40, 11, march_budget=10**6, padding=5000)
    done = [t for t in traces if not t.aborted]
    assert done
    assert all(t.implication_holds for t in done)
    assert all(t.away_jumps == 0 for t in traces)
    for t in done:
        if not t.coarse_origin_visited:
            assert all(j <= abs(k) - 1 for k, j in t.coarse_jumps.items())
    s = summarize_traces(traces)
    assert s["good"] + s["bad"] + s["multiplicity"] == s["steps"]


def test_trace_export():
    spec = BlockSpec(5, ETA, 6, 0.5)
    tr = next(t for t in (run_coupling(spec, P, s, march_budget=10**6, padding=3000) for s in range(50))
              if t.steps)
    lines = tr.to_jsonl().splitlines()
    assert len(lines) == len(tr.steps)
    rec = json.loads(lines[0])
    assert set(rec) == {"j", "k", "case", "tau_prime_write", "tau_prime_index", "tau_prime_reads",
                        "marched", "topplings", "aborted_reason"}


def test_coarse_sleep_rate_single_site_blocks():
    # n = 1, one particle: p = lambda / (1 + lambda) = 1/2 exactly
    spec = BlockSpec(1, (1,), 30, 0.2)
    traces = run_traces(spec, P, 800, 5, march_budget=10**5, padding=3000)
    rep = tau_prime_marginal_stats(traces, 0.5)
    assert rep["writes"] >= 10_000
    assert rep["pass"] and rep["directed"]


def test_marginal_needs_samples():
    with pytest.raises(InsufficientSamples):
        tau_prime_marginal_stats([run_coupling(BlockSpec(5, ETA, 3, 0.0), P, 1)], 0.5)
