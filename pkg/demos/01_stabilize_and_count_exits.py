"""
Stabilizing a segment and counting exits
========================================

Particles start on the segment V_n, perform independent walks, fall asleep
at rate lambda, and are removed when they leave V_n.  With a fixed array of
instructions the outcome does not depend on the order of topplings; this
script checks that on one configuration and then estimates P(M_n = 0).
"""

import numpy as np

from arw import experiments as E
from arw.core import Config, InstructionArray, ModelParams, segment
from arw.stabilize import Strategy, StabilizeRequest, stabilize

params = ModelParams(lam=1.0, p_right=0.5)
n, seed = 20, 7
V = segment(n)
eta = np.random.default_rng(seed).poisson(1.5, n)
print(f"V_{n} = [{V.lo}, {V.hi}], {eta.sum()} particles")

# the same instructions, four toppling orders
for strategy in Strategy:
    req = StabilizeRequest(Config.from_counts(V.lo, eta), V, strategy=strategy, strategy_seed=3)
    rep = stabilize(req, InstructionArray(params, seed))
    print(f"{strategy.name:22s} M_n={rep.M:3d}  left={rep.exits_left:3d}  right={rep.exits_right:3d}  "
          f"topplings={rep.topplings}  left behind={rep.final.total_particles()}")

# a single particle on one site stays with probability lambda / (1 + lambda)
s = E.run_exit_stats(E.TrialPlan(params, E.Deterministic((1,)), 1, 20_000, seed))
print(f"\nsingle particle: P(M_1 = 0) = {s.p_zero:.4f}, 99% CI {s.p_zero_ci[0]:.4f}..{s.p_zero_ci[1]:.4f}")

# below the critical density few particles leave, above it a fixed fraction does
for zeta in (0.5, 0.9, 1.5):
    s = E.run_exit_stats(E.TrialPlan(params, E.IIDPoisson(zeta), 100, 400, seed))
    print(f"zeta={zeta:.1f}: mean M_n/n = {s.mean_Mn_over_n:.4f} +- {s.se:.4f}, P(M_n=0) = {s.p_zero:.3f}")
