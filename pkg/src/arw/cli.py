"""Command-line runner: ``arw <subcommand> [flags]``.

Exit status: 0 on success, 2 when a check fails, 1 on errors (including
exhausted budgets), 64 on invalid usage.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import asdict

import numpy as np

from . import coupling as C
from . import experiments as E
from .core import Config, InstructionArray, ModelParams, segment
from .errors import ARWError
from .output import RunManifest, print_table, write_outputs
from .stabilize import Strategy, StabilizeRequest, default_budget, stabilize

EXIT_OK, EXIT_ERROR, EXIT_CHECK, EXIT_USAGE = 0, 1, 2, 64


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_USAGE)


def _common(p: argparse.ArgumentParser, trials: int = 1000):
    p.add_argument("--lambda", dest="lam", type=float, default=1.0, help="sleep rate")
    p.add_argument("--p-right", type=float, default=0.5, help="probability of a right jump")
    p.add_argument("--seed", type=int, default=1, help="master seed")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--trials", type=int, default=trials)
    p.add_argument("--out", default=None, help="output directory (default: CSV on stdout)")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="arw", description="Activated random walk experiments.")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("stabilize", help="stabilize one configuration and print its statistics")
    _common(p, 1)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--eta", default="flat", help="single | flat | point | poisson | counts:a,b,... | iid:p0,p1,...")
    p.add_argument("--zeta", type=float, default=1.0)
    p.add_argument("--strategy", choices=[s.name.lower() for s in Strategy], default="queue_order")

    p = sub.add_parser("exit-stats", help="Monte Carlo statistics of M_n")
    _common(p)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--eta", default="poisson")
    p.add_argument("--zeta", type=float, default=1.0)
    p.add_argument("--eps", type=float, default=0.0)

    p = sub.add_parser("hockey-stick", help="mean M_n/n on a (zeta, n) grid")
    _common(p, 200)
    p.add_argument("--zeta", type=float, nargs="+", required=True)
    p.add_argument("--n", type=int, nargs="+", required=True)

    p = sub.add_parser("zeta-c", help="bracket the critical density by bisection")
    _common(p, 400)
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--tol", type=float, default=0.05)
    p.add_argument("--threshold", choices=["sqrt", "3se"], default="sqrt")

    p = sub.add_parser("dominance", help="M_n against the no-sleep-strip count M_n^W")
    _common(p)
    p.add_argument("--n", type=int, default=50)
    p.add_argument("--eta", default="flat")
    p.add_argument("--zeta", type=float, default=2.0)
    p.add_argument("--strip", type=int, default=10)
    p.add_argument("--alpha", type=float, default=0.01, help="DKW level delta")
    p.add_argument("--escorted-trials", type=int, default=None,
                   help="arrays on which the escorted count N is also computed (default: all)")

    p = sub.add_parser("spread", help="enlarged-segment no-exit probability against the trapping bound")
    _common(p)
    p.add_argument("--n", type=int, default=40)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--ell", type=int, default=30)
    p.add_argument("--zeta", type=float, default=1.0, help="particles per site of the flat start")

    p = sub.add_parser("coupling", help="run the coarse-graining coupling")
    _common(p, 100)
    p.add_argument("--block-n", type=int, default=5)
    p.add_argument("--K", type=int, default=20)
    p.add_argument("--q", type=float, default=0.2)
    p.add_argument("--eta", default="counts:1,1,1,1,1")
    p.add_argument("--p-trials", type=int, default=20000, help="trials for the independent estimate of p")
    p.add_argument("--padding", type=int, default=C.DEFAULT_PADDING)
    p.add_argument("--march-budget", type=int, default=C.DEFAULT_MARCH_BUDGET)

    p = sub.add_parser("check", help="consistency checks of the exit bounds")
    _common(p)
    p.add_argument("--theorem", choices=["no-exit", "explicit", "critical-decay"], required=True)
    p.add_argument("--n", type=int, nargs="+", default=[200])
    p.add_argument("--zeta", type=float, default=None, help="density (default: 2 x bracket top, or its midpoint)")
    p.add_argument("--eps", type=float, default=0.0)
    p.add_argument("--zeta-c", default=None, help="bracket LO,HI; estimated when omitted")
    p.add_argument("--zc-trials", type=int, default=400)
    p.add_argument("--tol", type=float, default=0.05)
    return ap


def _params(a) -> ModelParams:
    return ModelParams(lam=a.lam, p_right=a.p_right)


def _emit(a, name, schema, columns, rows, manifest, traces=None):
    if a.out:
        write_outputs(a.out, name, schema, columns, rows, manifest, traces)
    else:
        print_table(columns, rows)


def cmd_stabilize(a, argv):
    params = _params(a)
    init = E.initial_from_name(a.eta, a.zeta)
    eta = init.sample(a.n, 1, a.seed)[0]
    V = segment(a.n)
    req = StabilizeRequest(Config.from_counts(V.lo, eta), V, strategy=Strategy[a.strategy.upper()],
                           strategy_seed=a.seed)
    rep = stabilize(req, InstructionArray(params, a.seed))
    row = {"n": a.n, "particles": int(eta.sum()), "M": rep.exits_total, "exits_left": rep.exits_left,
           "exits_right": rep.exits_right, "topplings": rep.topplings, "truncated": rep.truncated,
           "final_particles": rep.final.total_particles()}
    man = RunManifest("stabilize", argv, asdict(params), a.seed, {"topplings": req.budget})
    _emit(a, "stabilize", "stabilize", list(row), [row], man)
    return EXIT_ERROR if rep.truncated else EXIT_OK


EXIT_STATS_COLUMNS = ["n", "lambda", "p_right", "zeta", "trials", "mean_Mn_over_n", "se", "p_zero",
                      "p_zero_lo", "p_zero_hi", "eps", "p_tail", "p_tail_lo", "p_tail_hi", "excluded"]


def exit_stats_row(s: E.EmpiricalSummary, params: ModelParams, zeta, eps) -> dict:
    return {"n": s.n, "lambda": params.lam, "p_right": params.p_right, "zeta": zeta, "trials": s.trials,
            "mean_Mn_over_n": s.mean_Mn_over_n, "se": s.se, "p_zero": s.p_zero, "p_zero_lo": s.p_zero_ci[0],
            "p_zero_hi": s.p_zero_ci[1], "eps": eps, "p_tail": s.p_tail, "p_tail_lo": s.p_tail_ci[0],
            "p_tail_hi": s.p_tail_ci[1], "excluded": s.excluded_truncated}


def cmd_exit_stats(a, argv):
    params = _params(a)
    init = E.initial_from_name(a.eta, a.zeta)
    plan = E.TrialPlan(params, init, a.n, a.trials, a.seed, a.eps)
    s = E.run_exit_stats(plan, a.threads)
    row = exit_stats_row(s, params, init.mean(a.n), a.eps)
    man = RunManifest("exit-stats", argv, asdict(params), a.seed, {"topplings": default_budget()})
    man.set("exclusions", {"truncated": s.excluded_truncated})
    man.set("histogram", s.histogram)
    _emit(a, "exit-stats", "exit_stats", EXIT_STATS_COLUMNS, [row], man)
    return EXIT_OK


def cmd_hockey(a, argv):
    params = _params(a)
    rows, diag = E.hockey_stick_scan(params, a.zeta, a.n, a.trials, a.seed, a.threads)
    man = RunManifest("hockey-stick", argv, asdict(params), a.seed, {"topplings": default_budget()})
    man.set("diagnostics", diag)
    man.set("exclusions", {"truncated": sum(r["excluded"] for r in rows)})
    _emit(a, "hockey-stick", "hockey_stick", ["zeta", "n", "trials", "mean_Mn_over_n", "se", "excluded"],
          rows, man)
    return EXIT_OK


def cmd_zeta_c(a, argv):
    params = _params(a)
    br = E.estimate_zeta_c(params, a.n, a.trials, a.tol, a.seed, a.threshold, a.threads)
    man = RunManifest("zeta-c", argv, asdict(params), a.seed, {"topplings": default_budget()})
    man.set("bracket", {"lo": br.lo, "hi": br.hi, "iterations": br.iterations, "monotone": br.monotone})
    _emit(a, "zeta-c", "zeta_c", ["zeta", "n", "mean_Mn_over_n", "se", "theta", "supercritical", "excluded"],
          br.trace, man)
    if not a.out:
        print(f"# bracket lo={br.lo:.10g} hi={br.hi:.10g}")
    return EXIT_OK


def cmd_dominance(a, argv):
    params = _params(a)
    init = E.initial_from_name(a.eta, a.zeta)
    res = E.nml_dominance(params, a.n, init, a.strip, a.trials, a.seed, a.alpha, threads=a.threads,
                          escorted_trials=a.escorted_trials)
    v = res["verdict"]
    row = {"n": a.n, "strip": a.strip, "trials": a.trials, "mean_M": float(np.mean(res["M"])),
           "mean_MW": float(np.mean(res["MW"])), "mean_N": float(np.mean(res["N"])),
           "one_sided_stat": v.one_sided_stat, "threshold": v.threshold, "pass": v.passed,
           "N_ge_MW_pointwise": res["pointwise_N_ge_MW"]}
    man = RunManifest("dominance", argv, asdict(params), a.seed, {"topplings": default_budget()})
    _emit(a, "dominance", "dominance", list(row), [row], man)
    return EXIT_OK if v.passed else EXIT_CHECK


def cmd_spread(a, argv):
    params = _params(a)
    eta = E.Flat(a.zeta).counts(a.n)
    res = E.spread_check(params, eta, a.n, a.k, a.ell, a.trials, a.seed, a.threads)
    man = RunManifest("spread", argv, asdict(params), a.seed, {"topplings": default_budget()})
    _emit(a, "spread", "spread", list(res), [res], man)
    return EXIT_OK if res["pass"] else EXIT_CHECK


def cmd_coupling(a, argv):
    params = _params(a)
    eta = E.initial_from_name(a.eta, 1.0).sample(a.block_n, 1, a.seed)[0]
    spec = C.BlockSpec(a.block_n, tuple(eta), a.K, a.q)
    traces = C.run_traces(spec, params, a.trials, a.seed, a.threads, padding=a.padding,
                          march_budget=a.march_budget)
    summ = C.summarize_traces(traces)
    M, st = E.sample_exits(params, E.Deterministic(tuple(eta)), a.block_n, a.p_trials,
                           E.derive_seed(a.seed, 99), a.threads)
    ok = st == 0
    p_hat = float(np.mean(M[ok] == 0))
    stats = C.tau_prime_marginal_stats(traces, p_hat, int(ok.sum()))
    done = summ["traces"] - summ["aborted"]
    row = {**{k: v for k, v in summ.items() if k != "abort_reasons"},
           "implication_all": summ["implication_holds"] == done, "p_hat": p_hat,
           "sleep_freq": stats["sleep_freq"], "sleep_lo": stats["ci_lo"], "sleep_hi": stats["ci_hi"],
           "marginal_pass": stats["pass"]}
    man = RunManifest("coupling", argv, asdict(params), a.seed,
                      {"march": a.march_budget, "padding": a.padding, "topplings": default_budget()})
    man.set("exclusions", summ["abort_reasons"])
    jl = "".join(f'{{"trace": {r}}}\n' + t.to_jsonl() for r, t in enumerate(traces))
    _emit(a, "coupling", "coupling", list(row), [row], man, jl)
    return EXIT_OK if row["implication_all"] and stats["pass"] else EXIT_CHECK


def _bracket(a, params):
    if a.zeta_c:
        lo, hi = (float(v) for v in a.zeta_c.split(","))
        return (lo, hi)
    br = E.estimate_zeta_c(params, a.n[0], a.zc_trials, a.tol, a.seed, threads=a.threads)
    return (br.lo, br.hi)


def cmd_check(a, argv):
    params = _params(a)
    lo, hi = _bracket(a, params)
    man = RunManifest("check", argv, asdict(params), a.seed, {"topplings": default_budget()})
    man.set("zeta_c_bracket", [lo, hi])
    if a.theorem == "critical-decay":
        zeta = a.zeta if a.zeta is not None else 0.5 * (lo + hi)
        res = E.check_critical_decay(params, (lo, hi), a.n, a.trials, a.seed, zeta, a.threads)
        rows = [{**r, "non_increasing": res["non_increasing"], "level_positive": res["level_positive"]}
                for r in res["rows"]]
        _emit(a, "check-critical-decay", "check_critical_decay", list(rows[0]), rows, man)
        return EXIT_OK if res["pass"] else EXIT_CHECK
    zeta = a.zeta if a.zeta is not None else 2 * hi
    n = a.n[0]
    if a.theorem == "no-exit":
        res = E.check_thm_no_exit(params, zeta, n, a.trials, (lo, hi), a.seed, threads=a.threads)
    else:
        res = E.check_thm_explicit(params, zeta, n, a.trials, (lo, hi), a.seed, a.eps, threads=a.threads)
    rows = res["rows"]
    _emit(a, f"check-{a.theorem}", f"check_{a.theorem.replace('-', '_')}", list(rows[0]), rows, man)
    return EXIT_OK if res["pass"] else EXIT_CHECK


COMMANDS = {"stabilize": cmd_stabilize, "exit-stats": cmd_exit_stats, "hockey-stick": cmd_hockey,
            "zeta-c": cmd_zeta_c, "dominance": cmd_dominance, "spread": cmd_spread,
            "coupling": cmd_coupling, "check": cmd_check}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        a = build_parser().parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return COMMANDS[a.command](a, argv)
    except (ARWError, ValueError) as e:
        sys.stderr.write(f"arw: error: {e}\n")
        return EXIT_ERROR


if __name__ == "__main__":
    raise SystemExit(main())
