"""Monte Carlo drivers: exit statistics, hockey-stick scans, critical
density bracketing and consistency checks of the exit bounds."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy.stats import poisson

from . import _kernels as K
from ._hash import derive_seed
from .core import Interval, ModelParams, segment
from .errors import AllTrialsTruncated, EpsilonOutOfRange, NonMonotoneCriterion
from .stabilize import (
    InstructionArray,
    batch_exit_counts,
    escorted_stabilization,
    nb_success,
    nml_report,
    two_step_spread,
)
from .stats import (
    dominance_test,
    mean_se,
    proportion_se,
    two_proportion_z,
    wilson_interval,
)

# seed streams hanging off a master seed
STREAM_INIT = 1
STREAM_TAU = 2
STREAM_TAU_B = 3
STREAM_COUPLING = 4


# --- initial configurations -------------------------------------------------

@dataclass(frozen=True)
class Deterministic:
    eta: tuple

    name = "deterministic"

    def counts(self, n: int) -> np.ndarray:
        c = np.asarray(self.eta, dtype=np.int64)
        if c.shape != (n,):
            raise ValueError(f"configuration has {c.size} sites, expected {n}")
        return c

    def sample(self, n: int, trials: int, seed: int) -> np.ndarray:
        return np.tile(self.counts(n), (trials, 1))

    def mean(self, n: int) -> float:
        return float(np.sum(self.eta)) / n


@dataclass(frozen=True)
class Flat:
    """Deterministic, ceil(zeta n) particles spread as evenly as possible."""

    zeta: float

    name = "flat"

    def counts(self, n: int) -> np.ndarray:
        total = math.ceil(self.zeta * n - 1e-9)
        return np.diff((np.arange(n + 1) * total) // n).astype(np.int64)

    def sample(self, n, trials, seed):
        return np.tile(self.counts(n), (trials, 1))

    def mean(self, n):
        return self.counts(n).sum() / n


@dataclass(frozen=True)
class PointMass:
    """ceil(zeta n) particles at the origin."""

    zeta: float

    name = "point"

    def counts(self, n: int) -> np.ndarray:
        c = np.zeros(n, dtype=np.int64)
        c[-segment(n).lo] = math.ceil(self.zeta * n - 1e-9)
        return c

    def sample(self, n, trials, seed):
        return np.tile(self.counts(n), (trials, 1))

    def mean(self, n):
        return self.counts(n).sum() / n


def _uniforms(n: int, trials: int, seed: int) -> np.ndarray:
    # one uniform per (trial, site); row r depends only on (seed, r)
    u = np.empty((trials, n))
    for r in range(trials):
        u[r] = np.random.default_rng(derive_seed(seed, STREAM_INIT, r)).random(n)
    return u


@dataclass(frozen=True)
class IIDPoisson:
    """I.i.d. Poisson(zeta) counts, drawn by inversion so that configurations
    for different zeta on the same seed are nested."""

    zeta: float

    name = "poisson"

    def sample(self, n, trials, seed):
        if self.zeta == 0:
            return np.zeros((trials, n), dtype=np.int64)
        return poisson.ppf(_uniforms(n, trials, seed), self.zeta).astype(np.int64)

    def mean(self, n):
        return self.zeta


@dataclass(frozen=True)
class IIDCustom:
    """I.i.d. counts with probabilities ``pmf[k]`` of k particles."""

    pmf: tuple

    name = "iid"

    def sample(self, n, trials, seed):
        cdf = np.cumsum(np.asarray(self.pmf, dtype=float))
        cdf /= cdf[-1]
        return np.searchsorted(cdf, _uniforms(n, trials, seed), side="right").astype(np.int64)

    def mean(self, n):
        p = np.asarray(self.pmf, dtype=float)
        return float(np.dot(np.arange(p.size), p) / p.sum())


IIDBernoulliLike = IIDCustom


def initial_from_name(name: str, zeta: float = 1.0):
    """CLI helper: single | flat | point | poisson | counts:a,b,c."""
    if name == "single":
        return Deterministic((1,))
    if name == "flat":
        return Flat(zeta)
    if name == "point":
        return PointMass(zeta)
    if name == "poisson":
        return IIDPoisson(zeta)
    if name.startswith("counts:"):
        return Deterministic(tuple(int(v) for v in name[7:].split(",")))
    if name.startswith("iid:"):
        return IIDCustom(tuple(float(v) for v in name[4:].split(",")))
    raise ValueError(f"unknown initial configuration {name!r}")


# --- plans and summaries --------------------------------------------------

@dataclass(frozen=True)
class TrialPlan:
    params: ModelParams
    initial: object
    n: int
    trials: int
    master_seed: int
    epsilon: float = 0.0
    budget: int | None = None

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")


@dataclass
class EmpiricalSummary:
    n: int
    trials: int
    used: int
    excluded_truncated: int
    mean_Mn_over_n: float
    se: float
    p_zero: float
    p_zero_ci: tuple
    p_tail: float
    p_tail_ci: tuple
    histogram: dict
    manifest: dict = field(default_factory=dict)
    samples: np.ndarray | None = field(default=None, repr=False)


def sample_exits(params: ModelParams, initial, n: int, trials: int, seed: int, threads: int = 1,
                 budget: int | None = None, stream: int = STREAM_TAU):
    """M_n for ``trials`` independent runs.  Returns (M, status)."""
    etas = initial.sample(n, trials, seed)
    seeds = [derive_seed(seed, stream, r) for r in range(trials)]
    el, er, _, st = batch_exit_counts(etas, params, seeds, threads=threads, budget=budget)
    return el + er, st


def summarize(M: np.ndarray, status: np.ndarray, n: int, epsilon: float = 0.0,
              conf: float = 0.99, manifest: dict | None = None) -> EmpiricalSummary:
    ok = status == K.OK
    m = M[ok]
    if m.size == 0:
        raise AllTrialsTruncated(f"all {M.size} trials were truncated")
    mean, se = mean_se(m / n)
    k0 = int(np.sum(m == 0))
    kt = int(np.sum(m > epsilon * n))
    vals, cnts = np.unique(m, return_counts=True)
    return EmpiricalSummary(
        n=n, trials=int(M.size), used=int(m.size), excluded_truncated=int(M.size - m.size),
        mean_Mn_over_n=mean, se=se,
        p_zero=k0 / m.size, p_zero_ci=wilson_interval(k0, m.size, conf),
        p_tail=kt / m.size, p_tail_ci=wilson_interval(kt, m.size, conf),
        histogram={int(v): int(c) for v, c in zip(vals, cnts)},
        manifest=manifest or {}, samples=m,
    )


def run_exit_stats(plan: TrialPlan, threads: int = 1) -> EmpiricalSummary:
    """Stabilize ``plan.trials`` independent copies and aggregate M_n."""
    M, st = sample_exits(plan.params, plan.initial, plan.n, plan.trials, plan.master_seed,
                         threads, plan.budget)
    manifest = {
        "params": asdict(plan.params), "initial": repr(plan.initial), "n": plan.n,
        "trials": plan.trials, "master_seed": plan.master_seed, "epsilon": plan.epsilon,
        "budget": plan.budget,
    }
    return summarize(M, st, plan.n, plan.epsilon, manifest=manifest)


# --- hockey stick and critical density --------------------------------------

def hockey_stick_scan(params: ModelParams, zeta_grid, n_list, trials: int, seed: int,
                      threads: int = 1, budget: int | None = None):
    """Mean M_n/n on a (zeta, n) grid with nested i.i.d. Poisson starts and
    shared instruction arrays across zeta.

    Returns (rows, diagnostics).  ``diagnostics[n]`` counts per-trial
    decreases of M_n along the zeta grid (zero under exact monotonicity) and
    flags non-monotone cell means.
    """
    zs = sorted(float(z) for z in zeta_grid)
    rows = []
    diag = {}
    for n in n_list:
        prev = None
        violations = 0
        mean_ok = True
        last_mean = -1.0
        for z in zs:
            M, st = sample_exits(params, IIDPoisson(z), n, trials, derive_seed(seed, n), threads, budget)
            ok = st == K.OK
            mean, se = mean_se(M[ok] / n) if ok.any() else (float("nan"), float("nan"))
            rows.append({"zeta": z, "n": n, "trials": trials, "mean_Mn_over_n": mean, "se": se,
                         "excluded": int((~ok).sum())})
            if prev is not None:
                both = ok & prev[1]
                violations += int(np.sum(M[both] < prev[0][both]))
            if mean < last_mean:
                mean_ok = False
            last_mean = mean
            prev = (M, ok)
        diag[n] = {"per_trial_decreases": violations, "means_non_decreasing": mean_ok}
    return rows, diag


@dataclass
class ZetaCBracket:
    lo: float
    hi: float
    iterations: int
    trace: list
    n: int
    threshold: str
    monotone: bool = True

    @property
    def mid(self) -> float:
        return 0.5 * (self.lo + self.hi)


def criterion_threshold(se: float, n: int, rule: str = "sqrt") -> float:
    """Level that mean M_n/n must exceed for a probe to count as supercritical.

    ``"sqrt"``: max(3 se, n^-1/2), i.e. E[M_n] must beat both the noise and
    the O(sqrt n) boundary losses seen below the threshold; ``"3se"``:
    3 standard errors only.
    """
    if rule == "3se":
        return 3.0 * se
    if rule == "sqrt":
        return max(3.0 * se, 1.0 / math.sqrt(n))
    raise ValueError(f"unknown threshold rule {rule!r}")


def estimate_zeta_c(params: ModelParams, n: int, trials: int, tol: float, seed: int,
                    threshold: str = "sqrt", threads: int = 1, budget: int | None = None,
                    strict: bool = False) -> ZetaCBracket:
    """Bisect zeta on [0, 1] on the finite-size criterion mean M_n/n > theta.

    Probes share the seed lineage (nested Poisson starts, common arrays), so
    the criterion is monotone along each trial.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    trace = []
    pseed = derive_seed(seed, n)

    def probe(z):
        M, st = sample_exits(params, IIDPoisson(z), n, trials, pseed, threads, budget)
        ok = st == K.OK
        mean, se = mean_se(M[ok] / n)
        th = criterion_threshold(se, n, threshold)
        hit = mean > th
        trace.append({"zeta": z, "n": n, "mean_Mn_over_n": mean, "se": se, "theta": th,
                      "supercritical": bool(hit), "excluded": int((~ok).sum())})
        return hit

    lo, hi = 0.0, 1.0
    monotone = True
    if not probe(hi):
        monotone = False
        if strict:
            raise NonMonotoneCriterion("criterion not met at zeta = 1")
    it = 0
    while hi - lo > tol and monotone:
        mid = 0.5 * (lo + hi)
        if probe(mid):
            hi = mid
        else:
            lo = mid
        it += 1
    # the criterion's means should increase with zeta along the probes
    pts = sorted((t["zeta"], t["mean_Mn_over_n"]) for t in trace)
    if any(b[1] < a[1] for a, b in zip(pts, pts[1:])):
        monotone = False
        if strict:
            raise NonMonotoneCriterion("probe means decrease in zeta")
        lo = max(0.0, lo - tol)
        hi = min(1.0, hi + tol)
    return ZetaCBracket(lo, hi, it, trace, n, threshold, monotone)


# --- checks of the exit bounds -------------------------------------------------

def _zc_upper(zeta_c_hat) -> float:
    if isinstance(zeta_c_hat, ZetaCBracket):
        return zeta_c_hat.hi
    if isinstance(zeta_c_hat, (tuple, list)):
        return float(zeta_c_hat[1])
    return float(zeta_c_hat)


def theorem_samples(params: ModelParams, zeta: float, n: int, trials, seed: int,
                    generators=("flat", "point"), threads: int = 1, budget: int | None = None):
    """M_n samples for deterministic starts with ceil(zeta n) particles.

    ``trials`` is a count or a dict generator -> count.  Returns a dict
    generator -> (M, status)."""
    out = {}
    for i, g in enumerate(generators):
        t = trials[g] if isinstance(trials, dict) else trials
        init = Flat(zeta) if g == "flat" else PointMass(zeta)
        out[g] = sample_exits(params, init, n, t, derive_seed(seed, 100 + i), threads, budget)
    return out


def check_thm_no_exit(params: ModelParams, zeta: float, n: int, trials, zeta_c_hat, seed: int,
                      samples=None, conf: float = 0.99, threads: int = 1):
    """P(M_n = 0) <= zeta_c / zeta, with zeta_c taken at the upper end of the
    estimate.  A generator passes when the lower Wilson bound of its
    estimate lies under the bound."""
    zc = _zc_upper(zeta_c_hat)
    if not zeta > zc:
        raise ValueError("zeta must exceed the critical density estimate")
    samples = samples or theorem_samples(params, zeta, n, trials, seed, threads=threads)
    bound = zc / zeta
    rows = []
    for g, (M, st) in samples.items():
        m = M[st == K.OK]
        k = int(np.sum(m == 0))
        lo, hi = wilson_interval(k, m.size, conf)
        rows.append({"generator": g, "n": n, "zeta": zeta, "trials": int(M.size),
                     "excluded": int(M.size - m.size), "p_zero": k / m.size, "ci_lo": lo,
                     "ci_hi": hi, "bound": bound, "margin": bound - k / m.size,
                     "vacuous": bound >= 1.0, "pass": lo <= bound})
    return {"theorem": "no-exit", "zeta_c_upper": zc, "rows": rows,
            "pass": all(r["pass"] for r in rows)}


def epsilon_max(lam: float, zeta: float, zeta_c: float) -> float:
    """Upper end of the admissible epsilon range for the explicit bound."""
    return lam * (zeta - zeta_c) / (4.0 * (1.0 + lam) * zeta_c)


def explicit_bound(lam: float, zeta: float, zeta_c: float, eps: float) -> float:
    return 1.0 - (zeta_c / zeta) * (1.0 + 4.0 * (1.0 + lam) * eps / lam)


def check_thm_explicit(params: ModelParams, zeta: float, n: int, trials, zeta_c_hat, seed: int,
                       epsilon: float = 0.0, samples=None, conf: float = 0.99, threads: int = 1):
    """P(M_n > eps n) >= 1 - (zeta_c/zeta)(1 + 4(1+lam)eps/lam) for the worst
    generator; passes when the upper Wilson bound reaches the bound."""
    zc = _zc_upper(zeta_c_hat)
    if not zeta > zc:
        raise ValueError("zeta must exceed the critical density estimate")
    emax = epsilon_max(params.lam, zeta, zc)
    if not 0 <= epsilon < emax:
        raise EpsilonOutOfRange(f"epsilon must lie in [0, {emax:.6g})")
    samples = samples or theorem_samples(params, zeta, n, trials, seed, threads=threads)
    bound = explicit_bound(params.lam, zeta, zc, epsilon)
    rows = []
    for g, (M, st) in samples.items():
        m = M[st == K.OK]
        k = int(np.sum(m > epsilon * n))
        lo, hi = wilson_interval(k, m.size, conf)
        rows.append({"generator": g, "n": n, "zeta": zeta, "epsilon": epsilon, "trials": int(M.size),
                     "excluded": int(M.size - m.size), "p_tail": k / m.size, "ci_lo": lo, "ci_hi": hi,
                     "bound": bound, "pass": hi >= bound})
    worst = min(rows, key=lambda r: r["p_tail"])
    return {"theorem": "explicit", "zeta_c_upper": zc, "epsilon_max": emax, "rows": rows,
            "worst_generator": worst["generator"], "pass": worst["pass"]}


def check_critical_decay(params: ModelParams, zeta_c_hat, n_list, trials: int, seed: int,
                         zeta: float | None = None, threads: int = 1, budget: int | None = None):
    """Mean M_n/n along increasing n for i.i.d. Poisson starts.

    ``zeta`` defaults to the midpoint of the bracket.  ``non_increasing``
    holds when every later mean is at most an earlier one plus 2 combined
    standard errors; ``level_positive`` when the last mean is over 3 SE
    above zero and at least half the first one.
    """
    ns = list(n_list)
    if any(b <= a for a, b in zip(ns, ns[1:])):
        raise ValueError("n_list must be increasing")
    if zeta is None:
        zeta = zeta_c_hat.mid if isinstance(zeta_c_hat, ZetaCBracket) else \
            (0.5 * (zeta_c_hat[0] + zeta_c_hat[1]) if isinstance(zeta_c_hat, (tuple, list)) else zeta_c_hat)
    rows = []
    for n in ns:
        M, st = sample_exits(params, IIDPoisson(zeta), n, trials, derive_seed(seed, n), threads, budget)
        ok = st == K.OK
        mean, se = mean_se(M[ok] / n)
        rows.append({"n": n, "zeta": zeta, "trials": trials, "mean_Mn_over_n": mean, "se": se,
                     "excluded": int((~ok).sum())})
    worst = 0.0
    non_inc = True
    for i in range(len(rows)):
        for j in range(i + 1, len(rows)):
            a, b = rows[i], rows[j]
            tolr = 2.0 * math.hypot(a["se"], b["se"])
            excess = b["mean_Mn_over_n"] - a["mean_Mn_over_n"] - tolr
            worst = max(worst, excess)
            if excess > 0:
                non_inc = False
    first, last = rows[0], rows[-1]
    level_pos = last["mean_Mn_over_n"] > 3 * last["se"] and \
        last["mean_Mn_over_n"] >= 0.5 * first["mean_Mn_over_n"]
    return {"theorem": "critical-decay", "zeta": zeta, "rows": rows, "non_increasing": non_inc,
            "worst_excess": worst, "level_positive": bool(level_pos), "pass": non_inc}


# --- building-block checks ------------------------------------------------------

def nml_dominance(params: ModelParams, n: int, initial, strip: int, trials: int, seed: int,
                  delta: float = 0.01, strip_right: int | None = None, threads: int = 1,
                  escorted_trials: int | None = None):
    """Samples of M_n, of M_n^W (legal, jump-only strips) and, on the first
    ``escorted_trials`` arrays of M_n^W, of the escorted count N, with the
    dominance verdicts.  ``verdict`` tests "M_n dominates M_n^W"."""
    V = segment(n)
    W = Interval(V.lo - strip, V.hi + (strip if strip_right is None else strip_right))
    M, st = sample_exits(params, initial, n, trials, seed, threads, stream=STREAM_TAU)
    etas = initial.sample(n, trials, derive_seed(seed, 7))
    n_esc = trials if escorted_trials is None else min(trials, escorted_trials)
    MW = np.full(trials, -1, dtype=np.int64)
    N = np.full(n_esc, -1, dtype=np.int64)
    for r in range(trials):
        s = derive_seed(seed, STREAM_TAU_B, r)
        rep = nml_report(etas[r], n, W, InstructionArray(params, s))
        if not rep.truncated:
            MW[r] = rep.exits_total
        if r < n_esc:
            esc = escorted_stabilization(etas[r], n, W, InstructionArray(params, s))
            if not esc.truncated:
                N[r] = esc.exits
    keep = MW >= 0
    both = keep[:n_esc] & (N >= 0)
    m_ok = M[st == K.OK]
    return {"n": n, "W": (W.lo, W.hi), "M": m_ok, "MW": MW[keep], "N": N[N >= 0],
            "excluded": {"M": int(trials - m_ok.size), "MW": int(trials - keep.sum()),
                         "N": int(n_esc - (N >= 0).sum())},
            "verdict": dominance_test(m_ok, MW[keep], delta),
            "pointwise_N_ge_MW": bool(np.all(N[both] >= MW[:n_esc][both])),
            "N_vs_MW": dominance_test(N[N >= 0], MW[keep], delta),
            "M_vs_N": dominance_test(m_ok, N[N >= 0], delta)}


def spread_check(params: ModelParams, eta, n: int, k: int, ell: int, trials: int, seed: int,
                 threads: int = 1, two_step_trials: int = 0):
    """P(M_{n+4ell} = 0) against P(M_n <= k) * P(sum(G_j + 1) <= ell).

    Passes when the left side is at least the right side minus 3 combined
    standard errors."""
    eta = np.asarray(eta, dtype=np.int64)
    big = n + 4 * ell
    wide = np.zeros(big, dtype=np.int64)
    off = segment(n).lo - segment(big).lo
    wide[off:off + n] = eta
    Mb, stb = sample_exits(params, Deterministic(tuple(wide)), big, trials, derive_seed(seed, 1), threads)
    Ms, sts = sample_exits(params, Deterministic(tuple(eta)), n, trials, derive_seed(seed, 2), threads)
    mb = Mb[stb == K.OK]
    ms = Ms[sts == K.OK]
    p_big = float(np.mean(mb == 0))
    p_small = float(np.mean(ms <= k))
    nb = nb_success(k, ell, params.lam, strict=True)
    se = math.hypot(proportion_se(int(np.sum(mb == 0)), mb.size), nb * proportion_se(int(np.sum(ms <= k)), ms.size))
    out = {"n": n, "k": k, "ell": ell, "trials": trials, "p_no_exit_enlarged": p_big,
           "p_small_exit": p_small, "nb_success": nb, "nb_success_loose": nb_success(k, ell, params.lam, False),
           "rhs": p_small * nb, "combined_se": se, "pass": p_big >= p_small * nb - 3 * se}
    if two_step_trials:
        succ = 0
        mp = np.empty(two_step_trials, dtype=np.int64)
        for r in range(two_step_trials):
            ok, mprime = two_step_spread(eta, n, ell, params, derive_seed(seed, 3, r))
            succ += ok
            mp[r] = mprime
        out["p_two_step"] = succ / two_step_trials
        out["Mprime_dominated_by_Mn"] = dominance_test(ms, mp).passed
    return out


def tau_sleep_vs_exit(p_hat_k: int, p_hat_n: int, sleep_k: int, sleep_n: int, conf: float = 0.99):
    """Sleep frequency of written coarse instructions against an independent
    estimate of P(M_n = 0)."""
    lo, hi = wilson_interval(sleep_k, sleep_n, conf)
    p_hat = p_hat_k / p_hat_n
    z, pv = two_proportion_z(sleep_k, sleep_n, p_hat_k, p_hat_n)
    return {"p_hat": p_hat, "sleep_freq": sleep_k / max(sleep_n, 1), "sleep_ci": (lo, hi),
            "z": z, "p_value": pv, "pass": lo <= p_hat <= hi}
