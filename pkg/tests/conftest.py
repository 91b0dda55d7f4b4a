import numpy as np
import pytest

from arw.core import Config, InstructionArray, ModelParams, Interval, segment, topple


def reference_stabilize(eta, n, params, seed):
    """Plain-Python leftmost-active legal stabilization of V_n with a kill
    boundary; returns (final Config, odometer dict, exits)."""
    V = segment(n)
    cfg = Config.from_counts(V.lo, np.asarray(eta, dtype=np.int64))
    arr = InstructionArray(params, seed)
    while True:
        act = cfg.active_sites()
        if not act:
            break
        topple(cfg, arr, act[0])
    return cfg, arr.used.nonzero(), cfg.killed


@pytest.fixture
def params():
    return ModelParams(1.0, 0.5)
