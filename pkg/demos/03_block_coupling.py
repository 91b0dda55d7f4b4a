"""
Coarse-graining coupling
========================

Blocks of n sites that each hold a copy of eta are stabilized one at a
time.  When no particle leaves the block, the coarse stack at that block
gets a Sleep; otherwise the particles are marched one block closer to the
origin and the coarse stack gets a jump towards it.  The coarse sleep
frequency should match P(M_n = 0), and when the coarse origin is never
occupied, the block of the origin is never toppled.
"""

import numpy as np

from arw import coupling as C
from arw import experiments as E
from arw.core import ModelParams

params = ModelParams(lam=1.0, p_right=0.5)
spec = C.BlockSpec(n=5, eta=(1, 1, 1, 1, 1), K=20, q=0.2)
traces = C.run_traces(spec, params, 60, seed=3)
s = C.summarize_traces(traces)
print(f"{s['traces']} traces, {s['aborted']} aborted, {s['steps']} steps "
      f"(good {s['good']}, bad {s['bad']}, multiplicity {s['multiplicity']})")
done = s["traces"] - s["aborted"]
print(f"origin block untouched whenever the coarse origin stays empty: {s['implication_holds']}/{done}")

M, st = E.sample_exits(params, E.Deterministic(spec.eta), spec.n, 20_000, seed=4)
p_hat = float(np.mean(M[st == 0] == 0))
m = C.tau_prime_marginal_stats(traces, p_hat, int((st == 0).sum()))
print(f"coarse sleep frequency {m['sleep_freq']:.3f} over {m['writes']} writes, "
      f"99% CI {m['ci_lo']:.3f}..{m['ci_hi']:.3f}; independent P(M_5 = 0) = {p_hat:.3f}")
print("first steps of one trace:")
t = next(t for t in traces if len(t.steps) > 3)
print("\n".join(t.to_jsonl().splitlines()[:4]))
