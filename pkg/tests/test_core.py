import numpy as np
import pytest

from arw.core import (
    EMPTY, SLEEPING, Active, Config, Instruction, InstructionArray, Interval, ModelParams, Odometer,
    apply_sequence, is_stable_in, segment, topple,
)
from arw.errors import (
    DepthCapExceeded, OverrideError, ToppleOnEmpty, ToppleSleepingWhenLegal, WindowOverflow,
)


class FixedArray(InstructionArray):
    """Instruction stacks given explicitly per site."""

    def __init__(self, stacks):
        super().__init__(ModelParams(), 0)
        self.stacks = stacks

    def _draw(self, site, index):
        return self.stacks[site][index - 1]


S, R, L = Instruction.SLEEP, Instruction.JUMP_RIGHT, Instruction.JUMP_LEFT


def test_params_validation():
    with pytest.raises(ValueError):
        ModelParams(0.0)
    with pytest.raises(ValueError):
        ModelParams(1.0, 1.5)
    s, r, l = ModelParams(3.0, 0.25).probabilities()
    assert (s, r, l) == (0.75, 0.0625, 0.1875)


def test_segment():
    assert segment(1) == Interval(0, 0)
    assert segment(2) == Interval(0, 1)
    assert segment(5) == Interval(-2, 2)
    assert segment(200) == Interval(-99, 100)
    assert len(segment(0)) == 0


def test_config_contents_and_overflow():
    c = Config.from_counts(-1, [0, 2, 1])
    assert c[-1] is EMPTY and c[0] == Active(2) and c[5] is EMPTY
    c.set(1, SLEEPING)
    assert c[1] is SLEEPING
    assert c.total_particles() == 3 and c.active_sites() == [0]
    with pytest.raises(WindowOverflow):
        c.set(3, SLEEPING)
    with pytest.raises(ValueError):
        Config(Interval(0, 1), [2, 0], [True, False])


def test_topple_sleep_then_wake():
    c = Config.from_counts(0, [1, 0])
    arr = FixedArray({0: [S, R], 1: [S]})
    topple(c, arr, 0)
    assert c[0] is SLEEPING
    with pytest.raises(ToppleSleepingWhenLegal):
        topple(c, arr, 0)
    topple(c, arr, 0, mode="acceptable")
    assert c[0] is EMPTY and c[1] == Active(1)
    topple(c, arr, 1)
    assert c[1] is SLEEPING
    with pytest.raises(ToppleOnEmpty):
        topple(c, arr, 0, mode="acceptable")


def test_sleep_with_two_particles_is_a_no_op():
    c = Config.from_counts(0, [2])
    arr = FixedArray({0: [S, L, S]})
    topple(c, arr, 0)
    assert c[0] == Active(2)
    topple(c, arr, 0)
    assert c.killed_left == 1 and c[0] == Active(1)
    topple(c, arr, 0)
    assert c[0] is SLEEPING and arr.used[0] == 3


def test_apply_sequence_reports_failing_position():
    c = Config.from_counts(0, [1, 0, 0])
    arr = FixedArray({0: [R], 1: [R], 2: [S]})
    c, m = apply_sequence(c, arr, [0, 1, 2])
    assert m == {0: 1, 1: 1, 2: 1}
    with pytest.raises(ToppleSleepingWhenLegal) as e:
        apply_sequence(c, arr, [2])
    assert e.value.index == 0
    assert is_stable_in(c, Interval(0, 2))


def test_overrides_only_at_unread_indices():
    arr = InstructionArray(ModelParams(), 4)
    arr.peek(2, 3)
    with pytest.raises(OverrideError):
        arr.install_override(2, 3, S)
    arr.install_override(2, 4, R)
    assert arr.peek(2, 4) == R
    arr.consume(5)
    with pytest.raises(OverrideError):
        arr.install_override(5, 1, S)


def test_depth_cap():
    arr = InstructionArray(ModelParams(), 1, depth_cap=3)
    for _ in range(3):
        arr.consume(0)
    with pytest.raises(DepthCapExceeded):
        arr.consume(0)


def test_array_replay_is_order_free():
    a = InstructionArray(ModelParams(0.7, 0.4), 77)
    b = InstructionArray(ModelParams(0.7, 0.4), 77)
    fwd = [a.peek(x, k) for x in range(-3, 4) for k in range(1, 30)]
    back = [b.peek(x, k) for x in range(3, -4, -1) for k in range(29, 0, -1)]
    assert sorted(fwd) == sorted(back)
    assert a.peek(-2, 7) == b.peek(-2, 7)


def test_odometer_helpers():
    a = Odometer({0: 2, 1: 0})
    b = Odometer({0: 1})
    assert a == Odometer({0: 2})
    assert a.dominates(b) and not b.dominates(a)
    assert a[9] == 0
    assert a.restricted(Interval(1, 3)) == Odometer()
