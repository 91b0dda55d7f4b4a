"""Configurations, instruction stacks and the single toppling operator.

Everything here is plain Python and serves as the reference semantics; the
compiled loops in ``_kernels`` reproduce it for speed and are checked
against it in the tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum
from typing import Iterable, Iterator, Sequence

import numpy as np

from . import _kernels as K
from ._hash import hash53, seed_key, threshold53
from .errors import (
    DepthCapExceeded,
    OverrideError,
    ToppleError,
    ToppleOnEmpty,
    ToppleSleepingWhenLegal,
    WindowOverflow,
)

DEFAULT_DEPTH_CAP = 10**7


@dataclass(frozen=True)
class ModelParams:
    """Sleep rate ``lam`` and probability ``p_right`` that a jump goes right."""

    lam: float = 1.0
    p_right: float = 0.5

    def __post_init__(self):
        if not (self.lam > 0 and math.isfinite(self.lam)):
            raise ValueError(f"lambda must be positive and finite, got {self.lam}")
        if not (0.0 <= self.p_right <= 1.0):
            raise ValueError(f"p_right must lie in [0, 1], got {self.p_right}")

    @property
    def sleep_prob(self) -> float:
        return self.lam / (1.0 + self.lam)

    def probabilities(self) -> tuple[float, float, float]:
        """(sleep, jump right, jump left) for a normal-mode instruction."""
        return (
            self.lam / (1.0 + self.lam),
            self.p_right / (1.0 + self.lam),
            (1.0 - self.p_right) / (1.0 + self.lam),
        )

    def thresholds(self) -> tuple[int, int, int]:
        """53-bit cuts (S, R, J) used to turn a hash into an instruction."""
        s = threshold53(self.lam / (1.0 + self.lam))
        r = threshold53((self.lam + self.p_right) / (1.0 + self.lam))
        j = threshold53(self.p_right)
        return s, max(s, r), j


@dataclass(frozen=True)
class Interval:
    """Integer interval [lo, hi]; empty when hi < lo."""

    lo: int
    hi: int

    def __contains__(self, x) -> bool:
        return self.lo <= x <= self.hi

    def __len__(self) -> int:
        return max(0, self.hi - self.lo + 1)

    def __iter__(self) -> Iterator[int]:
        return iter(range(self.lo, self.hi + 1))

    def contains_interval(self, other: "Interval") -> bool:
        return len(other) == 0 or (self.lo <= other.lo and other.hi <= self.hi)

    def shift(self, d: int) -> "Interval":
        return Interval(self.lo + d, self.hi + d)


def segment(n: int) -> Interval:
    """V_n = (-n/2, n/2] as an integer interval."""
    if n < 0:
        raise ValueError("n must be non-negative")
    lo = 1 - (n + 1) // 2
    return Interval(lo, lo + n - 1)


# --- site contents -------------------------------------------------------

@dataclass(frozen=True)
class Empty:
    pass


@dataclass(frozen=True)
class Sleeping:
    pass


@dataclass(frozen=True)
class Active:
    count: int

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("Active needs a positive count")


SiteContent = Empty | Sleeping | Active
EMPTY = Empty()
SLEEPING = Sleeping()


class Config:
    """Particle configuration on a finite window.

    ``counts[i]`` and ``sleeping[i]`` describe site ``window.lo + i``; a site
    flagged sleeping always holds exactly one particle.  ``killed_left`` and
    ``killed_right`` count particles removed through either side of a kill
    boundary.
    """

    __slots__ = ("window", "counts", "sleeping", "killed_left", "killed_right")

    def __init__(self, window: Interval, counts=None, sleeping=None):
        self.window = window
        m = len(window)
        self.counts = np.zeros(m, dtype=np.int64) if counts is None else np.array(counts, dtype=np.int64)
        self.sleeping = np.zeros(m, dtype=np.bool_) if sleeping is None else np.array(sleeping, dtype=np.bool_)
        if self.counts.shape != (m,) or self.sleeping.shape != (m,):
            raise ValueError("arrays do not match the window")
        if (self.counts < 0).any():
            raise ValueError("negative particle count")
        if (self.sleeping & (self.counts != 1)).any():
            raise ValueError("a sleeping site must hold exactly one particle")
        self.killed_left = 0
        self.killed_right = 0

    @classmethod
    def from_counts(cls, lo: int, counts: Sequence[int]) -> "Config":
        """All-active configuration with ``counts[i]`` particles at ``lo + i``."""
        counts = np.asarray(counts, dtype=np.int64)
        return cls(Interval(lo, lo + len(counts) - 1), counts)

    @classmethod
    def from_dict(cls, window: Interval, contents: dict) -> "Config":
        c = cls(window)
        for x, v in contents.items():
            c.set(x, v)
        return c

    @property
    def killed(self) -> int:
        return self.killed_left + self.killed_right

    def _idx(self, x: int) -> int:
        if x not in self.window:
            raise WindowOverflow(f"site {x} outside window [{self.window.lo}, {self.window.hi}]")
        return x - self.window.lo

    def __getitem__(self, x: int) -> SiteContent:
        if x not in self.window:
            return EMPTY
        i = x - self.window.lo
        c = int(self.counts[i])
        if c == 0:
            return EMPTY
        if self.sleeping[i]:
            return SLEEPING
        return Active(c)

    def set(self, x: int, content: SiteContent) -> None:
        i = self._idx(x)
        if isinstance(content, Empty):
            self.counts[i], self.sleeping[i] = 0, False
        elif isinstance(content, Sleeping):
            self.counts[i], self.sleeping[i] = 1, True
        elif isinstance(content, Active):
            self.counts[i], self.sleeping[i] = content.count, False
        else:
            raise TypeError(f"not a site content: {content!r}")

    def total_particles(self) -> int:
        return int(self.counts.sum())

    def occupied(self) -> list[int]:
        return [int(i) + self.window.lo for i in np.flatnonzero(self.counts)]

    def active_sites(self) -> list[int]:
        mask = (self.counts > 0) & ~self.sleeping
        return [int(i) + self.window.lo for i in np.flatnonzero(mask)]

    def particles_in(self, region: Interval) -> int:
        a = max(region.lo, self.window.lo) - self.window.lo
        b = min(region.hi, self.window.hi) - self.window.lo
        return int(self.counts[a:b + 1].sum()) if b >= a else 0

    def copy(self) -> "Config":
        c = Config(self.window, self.counts.copy(), self.sleeping.copy())
        c.killed_left, c.killed_right = self.killed_left, self.killed_right
        return c

    def restrict(self, window: Interval) -> "Config":
        """Same particles on another window (which must cover them)."""
        c = Config(window)
        for x in self.occupied():
            i = x - self.window.lo
            c.counts[c._idx(x)] = self.counts[i]
            c.sleeping[x - window.lo] = self.sleeping[i]
        c.killed_left, c.killed_right = self.killed_left, self.killed_right
        return c

    def contents(self) -> dict:
        return {x: self[x] for x in self.occupied()}

    def __eq__(self, other) -> bool:
        if not isinstance(other, Config):
            return NotImplemented
        return self.contents() == other.contents() and self.killed_left == other.killed_left \
            and self.killed_right == other.killed_right

    def __repr__(self) -> str:
        return f"Config(window=[{self.window.lo},{self.window.hi}], {self.contents()}, killed={self.killed})"


# --- instructions --------------------------------------------------------

class Instruction(IntEnum):
    """Value is the displacement of the toppled particle."""

    SLEEP = 0
    JUMP_RIGHT = 1
    JUMP_LEFT = -1


class Odometer(dict):
    """Per-site toppling counts; missing sites read as zero."""

    def __missing__(self, key):
        return 0

    def nonzero(self) -> dict:
        return {x: v for x, v in self.items() if v}

    def __eq__(self, other):
        if isinstance(other, dict):
            return self.nonzero() == {x: v for x, v in other.items() if v}
        return NotImplemented

    def __ne__(self, other):
        r = self.__eq__(other)
        return r if r is NotImplemented else not r

    def dominates(self, other: dict) -> bool:
        """Pointwise ``self >= other``."""
        return all(self[x] >= v for x, v in other.items())

    def restricted(self, region: Interval) -> "Odometer":
        return Odometer({x: v for x, v in self.items() if x in region and v})


class InstructionArray:
    """Replayable per-site instruction stacks.

    The instruction at ``(site, index)`` is a hash of (seed, site, index),
    so reading order never matters.  ``used[site]`` is the number of
    instructions consumed at that site (the odometer of the run owning the
    array).  Overrides may only be installed at indices that have been
    neither read nor consumed.
    """

    def __init__(self, params: ModelParams, seed: int, jump_only: Iterable[int] = (),
                 depth_cap: int = DEFAULT_DEPTH_CAP):
        self.params = params
        self.seed = int(seed)
        self.key = seed_key(self.seed)
        self.depth_cap = int(depth_cap)
        self.used = Odometer()
        self.seen = Odometer()  # highest index ever read at each site
        self.jump_only: set[int] = set(jump_only)
        self.overrides: dict[tuple[int, int], Instruction] = {}
        self._S, self._R, self._J = params.thresholds()

    # site modes
    def set_jump_only(self, sites: Iterable[int]) -> None:
        self.jump_only.update(sites)

    def is_jump_only(self, site: int) -> bool:
        return site in self.jump_only

    def _draw(self, site: int, index: int) -> Instruction:
        v = hash53(self.key, site, index)
        if site in self.jump_only:
            return Instruction.JUMP_RIGHT if v < self._J else Instruction.JUMP_LEFT
        if v < self._S:
            return Instruction.SLEEP
        return Instruction.JUMP_RIGHT if v < self._R else Instruction.JUMP_LEFT

    def peek(self, site: int, index: int) -> Instruction:
        if index < 1:
            raise ValueError("instruction indices start at 1")
        if index > self.depth_cap:
            raise DepthCapExceeded(f"site {site}: index {index} beyond depth cap {self.depth_cap}")
        if index > self.seen[site]:
            self.seen[site] = index
        ov = self.overrides.get((site, index))
        return ov if ov is not None else self._draw(site, index)

    def consume(self, site: int) -> Instruction:
        """Read the next unused instruction at ``site`` and mark it used."""
        k = self.used[site] + 1
        ins = self.peek(site, k)
        self.used[site] = k
        return ins

    def install_override(self, site: int, index: int, instruction: Instruction) -> None:
        if index <= max(self.used[site], self.seen[site]):
            raise OverrideError(
                f"cannot rewrite instruction ({site}, {index}): already read up to {self.seen[site]}")
        self.overrides[(site, index)] = Instruction(instruction)

    # bridge to the compiled loops
    def kernel_inputs(self, lo: int, m: int):
        """Odometer and override arrays for the window of ``m`` cells at ``lo``."""
        odo = np.zeros(m, dtype=np.int64)
        for x, v in self.used.items():
            if lo <= x < lo + m:
                odo[x - lo] = v
        has_ov = np.zeros(m, dtype=np.bool_)
        sites, idxs, codes = [], [], []
        for (x, i), ins in self.overrides.items():
            if lo <= x < lo + m and i > self.used[x]:
                has_ov[x - lo] = True
                sites.append(x)
                idxs.append(i)
                codes.append(int(ins))
        return (odo, has_ov, np.array(sites, dtype=np.int64), np.array(idxs, dtype=np.int64),
                np.array(codes, dtype=np.int64))

    def absorb(self, lo: int, odo: np.ndarray) -> None:
        """Write back an odometer window produced by a kernel."""
        for i in np.flatnonzero(odo):
            x = lo + int(i)
            v = int(odo[i])
            self.used[x] = v
            if v > self.seen[x]:
                self.seen[x] = v

    def kernel_constants(self):
        return np.uint64(self.key), np.uint64(self._S), np.uint64(self._R), np.uint64(self._J)


# --- toppling ------------------------------------------------------------

LEGAL = "legal"
ACCEPTABLE = "acceptable"


def topple(config: Config, array: InstructionArray, site: int, mode: str = LEGAL,
           kill_region: Interval | None = None) -> Config:
    """Apply the next instruction at ``site`` to ``config`` in place.

    ``mode`` is ``"legal"`` (the site must hold an active particle) or
    ``"acceptable"`` (any occupied site; a sleeper is woken first).  A jump
    leaving ``kill_region`` removes the particle; ``kill_region`` defaults to
    the configuration window.  Returns ``config``.
    """
    kr = config.window if kill_region is None else kill_region
    i = config._idx(site)
    if config.counts[i] == 0:
        raise ToppleOnEmpty(f"site {site} is empty", site=site)
    if config.sleeping[i]:
        if mode == LEGAL:
            raise ToppleSleepingWhenLegal(f"site {site} holds a sleeping particle", site=site)
        config.sleeping[i] = False
    elif mode not in (LEGAL, ACCEPTABLE):
        raise ValueError(f"unknown mode {mode!r}")
    ins = array.consume(site)
    if ins == Instruction.SLEEP:
        if config.counts[i] == 1:
            config.sleeping[i] = True
        return config
    config.counts[i] -= 1
    y = site + int(ins)
    if y not in kr:
        if y < kr.lo:
            config.killed_left += 1
        else:
            config.killed_right += 1
        return config
    j = config._idx(y)
    config.counts[j] += 1
    config.sleeping[j] = False
    return config


def is_stable_in(config: Config, region: Interval) -> bool:
    """True iff no site of ``region`` holds an active particle."""
    if not config.window.contains_interval(region):
        raise ValueError("region must lie inside the window")
    a = region.lo - config.window.lo
    b = region.hi - config.window.lo + 1
    c = config.counts[a:b]
    return not bool(((c > 0) & ~config.sleeping[a:b]).any())


def apply_sequence(config: Config, array: InstructionArray, sequence: Iterable[int],
                   mode: str = LEGAL, kill_region: Interval | None = None):
    """Topple the sites of ``sequence`` in order.

    Returns ``(config, m)`` with ``m`` the per-site occurrence counts of the
    sequence.  A failing toppling re-raises with ``index`` set to its
    position in the sequence.
    """
    m = Odometer()
    for t, x in enumerate(sequence):
        try:
            topple(config, array, x, mode, kill_region)
        except ToppleError as e:
            e.index = t
            raise
        m[x] += 1
    return config, m


def kernel_kinds(window_lo: int, m: int, array: InstructionArray, normal: Interval,
                 no_sleep: Iterable[int] = ()) -> np.ndarray:
    """Cell kinds for a kernel run: sites of ``normal`` are toppled legally,
    ``no_sleep`` sites whenever occupied, everything else is frozen."""
    kind = np.zeros(m, dtype=np.int8)
    for x in normal:
        if window_lo <= x < window_lo + m:
            kind[x - window_lo] = K.JUMP_ONLY if array.is_jump_only(x) else K.NORMAL
    for x in no_sleep:
        kind[x - window_lo] = K.JUMP_ONLY
    return kind
