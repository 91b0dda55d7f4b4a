import math

import numpy as np
import pytest

from arw.core import ModelParams, segment
from arw.errors import AllTrialsTruncated, EpsilonOutOfRange
from arw.experiments import (
    Deterministic, Flat, IIDCustom, IIDPoisson, PointMass, TrialPlan, check_critical_decay,
    check_thm_explicit, check_thm_no_exit, epsilon_max, estimate_zeta_c, explicit_bound,
    hockey_stick_scan, initial_from_name, nml_dominance, run_exit_stats, sample_exits, spread_check,
)

P = ModelParams(1.0, 0.5)


def test_generators():
    f = Flat(1.3).counts(10)
    assert f.sum() == 13 and f.max() - f.min() <= 1
    pm = PointMass(1.3).counts(10)
    assert pm.sum() == 13 and pm[-segment(10).lo] == 13
    lo = IIDPoisson(0.5).sample(30, 50, 4)
    hi = IIDPoisson(0.9).sample(30, 50, 4)
    assert (lo <= hi).all() and lo.sum() < hi.sum()
    big = IIDPoisson(1.7).sample(200, 200, 5)
    assert abs(big.mean() - 1.7) < 4 * math.sqrt(1.7 / big.size)
    c = IIDCustom((0.5, 0.0, 0.5)).sample(100, 100, 6)
    assert set(np.unique(c)) <= {0, 2}
    assert IIDCustom((0.5, 0.0, 0.5)).mean(1) == 1.0
    assert initial_from_name("counts:1,0,2").counts(3).tolist() == [1, 0, 2]
    with pytest.raises(ValueError):
        initial_from_name("nonsense")


def test_empty_initial_gives_no_exits():
    s = run_exit_stats(TrialPlan(P, Deterministic((0, 0, 0)), 3, 20, 1))
    assert s.mean_Mn_over_n == 0 and s.p_zero == 1.0


def test_single_particle_no_exit_rate():
    s = run_exit_stats(TrialPlan(P, Deterministic((1,)), 1, 20_000, 3))
    assert s.p_zero_ci[0] <= 0.5 <= s.p_zero_ci[1]
    assert sum(s.histogram.values()) + s.excluded_truncated == s.trials


def test_summary_is_thread_invariant():
    plan = TrialPlan(P, IIDPoisson(1.2), 40, 700, 9, epsilon=0.1)
    a = run_exit_stats(plan, threads=1)
    b = run_exit_stats(plan, threads=3)
    assert np.array_equal(a.samples, b.samples)
    assert (a.mean_Mn_over_n, a.p_tail, a.histogram) == (b.mean_Mn_over_n, b.p_tail, b.histogram)


def test_truncation_is_counted_not_imputed():
    with pytest.raises(AllTrialsTruncated):
        run_exit_stats(TrialPlan(P, Flat(3.0), 30, 5, 1, budget=5))
    M, st = sample_exits(P, IIDPoisson(1.5), 30, 200, 2, budget=4000)
    assert (st != 0).any() and (st == 0).any()


def test_hockey_stick_scan_monotone_on_shared_arrays():
    rows, diag = hockey_stick_scan(P, [0.0, 0.6, 1.1, 1.6], [30, 60], 80, 3)
    assert [r["mean_Mn_over_n"] for r in rows if r["zeta"] == 0.0] == [0.0, 0.0]
    for n in (30, 60):
        assert diag[n]["per_trial_decreases"] == 0
        assert diag[n]["means_non_decreasing"]


def test_zeta_c_bracket_is_reproducible():
    a = estimate_zeta_c(P, 100, 150, 0.05, 5)
    b = estimate_zeta_c(P, 100, 150, 0.05, 5)
    assert (a.lo, a.hi) == (b.lo, b.hi)
    assert 0 < a.lo <= a.hi < 1 and a.hi - a.lo <= 0.05 + 1e-12
    assert a.trace and all("theta" in t for t in a.trace)


def test_bound_formulas():
    assert math.isclose(explicit_bound(1.0, 2.0, 0.9, 0.0), 1 - 0.45)
    assert math.isclose(epsilon_max(1.0, 1.8, 0.9), 0.9 / 7.2)
    with pytest.raises(EpsilonOutOfRange):
        check_thm_explicit(P, 1.8, 10, 10, (0.85, 0.9), 1, epsilon=0.2)
    with pytest.raises(ValueError):
        check_thm_no_exit(P, 0.8, 10, 10, (0.85, 0.9), 1)


def test_no_exit_check_small():
    rep = check_thm_no_exit(P, 1.9, 40, 300, (0.9, 0.95), 4)
    assert {r["generator"] for r in rep["rows"]} == {"flat", "point"}
    assert rep["pass"]
    assert rep["rows"][0]["bound"] == 0.95 / 1.9


def test_critical_decay_zero_density():
    rep = check_critical_decay(P, (0.0, 0.0), [10, 20], 30, 1, zeta=0.0)
    assert all(r["mean_Mn_over_n"] == 0 for r in rep["rows"]) and rep["non_increasing"]
    assert not rep["level_positive"]
    with pytest.raises(ValueError):
        check_critical_decay(P, (0.9, 0.95), [20, 10], 30, 1)


def test_nml_dominance_small():
    res = nml_dominance(P, 20, Flat(2.0), 4, 300, 7)
    assert res["verdict"].passed and res["pointwise_N_ge_MW"]


def test_spread_check_small():
    res = spread_check(P, np.ones(10, dtype=np.int64), 10, 3, 6, 400, 2)
    assert res["pass"]
    assert 0 <= res["rhs"] <= res["p_small_exit"]
