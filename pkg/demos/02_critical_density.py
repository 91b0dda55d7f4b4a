"""
Locating the critical density
=============================

Above the critical density a positive fraction of the particles leaves the
segment, which shows up as a hockey-stick profile of mean M_n/n against the
density.  Bisection on that profile gives a bracket for zeta_c, and the
bracket feeds the exit-probability checks.
"""

from arw import experiments as E
from arw.core import ModelParams

params = ModelParams(lam=1.0, p_right=0.5)
seed = 11

rows, diag = E.hockey_stick_scan(params, [0.6, 0.8, 0.9, 1.0, 1.2, 1.6], [50, 100], 200, seed)
print("zeta    n    mean M_n/n      se")
for r in rows:
    print(f"{r['zeta']:.2f} {r['n']:4d}   {r['mean_Mn_over_n']:.4f}   {r['se']:.4f}")
for n, d in diag.items():
    print(f"n={n}: means increase with zeta: {d['means_non_decreasing']}, "
          f"single trials that lost exits when zeta grew: {d['per_trial_decreases']}")

br = E.estimate_zeta_c(params, n=100, trials=300, tol=0.05, seed=seed)
print(f"\nbracket for zeta_c at n=100: [{br.lo:.3f}, {br.hi:.3f}] after {br.iterations} probes")

# far above the bracket most starts lose particles
zeta = 2 * br.hi
samples = E.theorem_samples(params, zeta, 100, 300, seed)
no_exit = E.check_thm_no_exit(params, zeta, 100, None, br, seed, samples=samples)
explicit = E.check_thm_explicit(params, zeta, 100, None, br, seed, 0.0, samples=samples)
for a, b in zip(no_exit["rows"], explicit["rows"]):
    print(f"{a['generator']:5s} P(M_n=0)={a['p_zero']:.3f} (bound {a['bound']:.3f})   "
          f"P(M_n>0)={b['p_tail']:.3f} (bound {b['bound']:.3f})")
