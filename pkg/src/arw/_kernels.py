"""Compiled toppling loops.

A run works on a flat window: ``counts[i]`` particles at site ``lo + i``,
``sleeping[i]`` set when that site holds exactly one sleeping particle,
``odo[i]`` the number of instructions already consumed there, and
``kind[i]`` one of FROZEN (never toppled here), NORMAL (legal topplings,
sleep instructions allowed) or JUMP_ONLY (toppled while occupied, stack has
no sleep instructions).  Callers surround the region of interest with
FROZEN cells, so a particle that leaves it simply piles up there; the
outermost cells act as kill sinks.

Instruction ``(x, k)`` is a pure function of ``(key, x, k)``: one splitmix64
round on ``key + x*C_SITE + k*GOLDEN``, keeping the top 53 bits ``v``.  On a
normal site it is a sleep if ``v < S``, a right jump if ``S <= v < R`` and a
left jump otherwise; on a jump-only site it is a right jump iff ``v < J``.
Codes: 0 sleep, +1 right, -1 left.
"""

import numpy as np
from numba import njit

FROZEN = 0
NORMAL = 1
JUMP_ONLY = 2

# strategy ids, mirrored by stabilize.Strategy
LEFTMOST = 0
RIGHTMOST = 1
CLOSEST = 2
RANDOM = 3
QUEUE = 4

# status codes
OK = 0
BUDGET = 1
DEPTH = 2
ORDER = 3
OVERFLOW = 4

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
C_SITE = np.uint64(0xD1B54A32D192ED03)

# _topple_at result when the instruction moved nobody
_STAY = -1
_DEPTH = -2


@njit(cache=True)
def _mix(z):
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@njit(cache=True)
def hash53(key, x, k):
    """Top 53 bits of the instruction hash at site ``x``, index ``k``."""
    z = key + np.uint64(x) * C_SITE + np.uint64(k) * GOLDEN
    return _mix(z) >> np.uint64(11)


@njit(cache=True)
def instruction_code(key, x, k, jump_only, S, R, J):
    v = hash53(key, x, k)
    if jump_only:
        return 1 if v < J else -1
    if v < S:
        return 0
    if v < R:
        return 1
    return -1


@njit(cache=True)
def _code_at(i, x, k, kind, key, S, R, J, has_ov, ov_site, ov_index, ov_code):
    if has_ov[i]:
        for t in range(ov_site.shape[0]):
            if ov_site[t] == x and ov_index[t] == k:
                return ov_code[t]
    return instruction_code(key, x, k, kind[i] == JUMP_ONLY, S, R, J)


@njit(cache=True)
def _topple_at(i, counts, sleeping, odo, kind, lo, key, S, R, J, depth_cap,
               has_ov, ov_site, ov_index, ov_code):
    # acceptable toppling of window cell i; returns the destination cell,
    # _STAY, or _DEPTH when the stack at i is exhausted
    k = odo[i] + 1
    if k > depth_cap:
        return _DEPTH
    code = _code_at(i, lo + i, k, kind, key, S, R, J, has_ov, ov_site, ov_index, ov_code)
    odo[i] = k
    if code == 0:
        sleeping[i] = counts[i] == 1
        return _STAY
    sleeping[i] = False
    counts[i] -= 1
    j = i + code
    counts[j] += 1
    sleeping[j] = False
    return j


@njit(cache=True)
def _can_topple(i, counts, sleeping, kind):
    if counts[i] == 0:
        return False
    if kind[i] == JUMP_ONLY:
        return True
    return kind[i] == NORMAL and not sleeping[i]


@njit(cache=True)
def order_violated(counts, sleeping, kind, a, b, side):
    """True if, inside cells [a, b], some active normal site lies strictly on
    the wrong side of a sleeping one (left of it for side < 0, right of it
    for side > 0)."""
    seen_active = False
    rng = range(a, b + 1) if side < 0 else range(b, a - 1, -1)
    for i in rng:
        if counts[i] > 0 and kind[i] == NORMAL:
            if sleeping[i]:
                if seen_active:
                    return True
            else:
                seen_active = True
    return False


@njit(cache=True, nogil=True)
def drain_kernel(counts, sleeping, odo, kind, lo, key, S, R, J, ta, tb, budget, depth_cap,
                 has_ov, ov_site, ov_index, ov_code):
    """Queue-order stabilization of cells [ta, tb]: pop an unstable site and
    topple it until it is empty or holds a lone sleeper, pushing the
    neighbours that received particles.  Returns (topplings, status)."""
    m = counts.shape[0]
    stack = np.empty(m, dtype=np.int64)
    in_stack = np.zeros(m, dtype=np.bool_)
    top = 0
    for i in range(tb, ta - 1, -1):
        if _can_topple(i, counts, sleeping, kind):
            stack[top] = i
            in_stack[i] = True
            top += 1
    t = 0
    while top > 0:
        top -= 1
        c = stack[top]
        in_stack[c] = False
        if not _can_topple(c, counts, sleeping, kind):
            continue
        if t >= budget:
            return t, BUDGET
        x = lo + c
        if kind[c] == JUMP_ONLY:
            s = np.uint64(0)
            r = J
        else:
            s = S
            r = R
        base = key + np.uint64(x) * C_SITE
        k0 = odo[c]
        k = k0
        mm = counts[c]
        nl = 0
        nr = 0
        slept = False
        hov = has_ov[c]
        kcap = min(depth_cap, k0 + budget - t)
        while mm > 0 and k < kcap:
            k += 1
            if hov:
                code = _code_at(c, x, k, kind, key, S, R, J, has_ov, ov_site, ov_index, ov_code)
                isl = np.int64(code == 0)
                left = np.int64(code == -1)
            else:
                v = _mix(base + np.uint64(k) * GOLDEN) >> np.uint64(11)
                isl = np.int64(v < s)
                left = np.int64(v >= r)
            if isl == 1 and mm == 1:
                slept = True
                break
            right = 1 - isl - left
            nr += right
            nl += left
            mm -= right + left
        odo[c] = k
        t += k - k0
        counts[c] = mm
        sleeping[c] = slept
        if nl > 0:
            j = c - 1
            counts[j] += nl
            sleeping[j] = False
            if j >= ta and not in_stack[j] and _can_topple(j, counts, sleeping, kind):
                stack[top] = j
                in_stack[j] = True
                top += 1
        if nr > 0:
            j = c + 1
            counts[j] += nr
            sleeping[j] = False
            if j <= tb and not in_stack[j] and _can_topple(j, counts, sleeping, kind):
                stack[top] = j
                in_stack[j] = True
                top += 1
        if mm > 0 and not slept:
            return t, (BUDGET if t >= budget else DEPTH)
    return t, OK


@njit(cache=True, nogil=True)
def ordered_kernel(counts, sleeping, odo, kind, lo, key, S, R, J, ta, tb, strategy, strat_seed,
                   budget, depth_cap, has_ov, ov_site, ov_index, ov_code, check_order):
    """Stabilize cells [ta, tb] one toppling at a time, choosing the site by
    ``strategy`` (LEFTMOST, RIGHTMOST, CLOSEST or RANDOM).
    Returns (topplings, status)."""
    m = counts.shape[0]
    t = 0
    if strategy == RANDOM:
        members = np.empty(m, dtype=np.int64)
        pos = np.full(m, -1, dtype=np.int64)
        size = 0
        for i in range(ta, tb + 1):
            if _can_topple(i, counts, sleeping, kind):
                members[size] = i
                pos[i] = size
                size += 1
        state = strat_seed | np.uint64(1)
        while size > 0:
            if t >= budget:
                return t, BUDGET
            # xorshift64*
            state ^= state >> np.uint64(12)
            state ^= state << np.uint64(25)
            state ^= state >> np.uint64(27)
            r = (state * np.uint64(0x2545F4914F6CDD1D)) >> np.uint64(11)
            i = members[np.int64(r % np.uint64(size))]
            j = _topple_at(i, counts, sleeping, odo, kind, lo, key, S, R, J, depth_cap,
                           has_ov, ov_site, ov_index, ov_code)
            if j == _DEPTH:
                return t, DEPTH
            t += 1
            for c in (i, j):
                if c < ta or c > tb:
                    continue
                ok = _can_topple(c, counts, sleeping, kind)
                if ok and pos[c] < 0:
                    members[size] = c
                    pos[c] = size
                    size += 1
                elif not ok and pos[c] >= 0:
                    last = members[size - 1]
                    members[pos[c]] = last
                    pos[last] = pos[c]
                    pos[c] = -1
                    size -= 1
        return t, OK

    ptr = ta if strategy == LEFTMOST else tb
    while True:
        if strategy == LEFTMOST:
            while ptr <= tb and not _can_topple(ptr, counts, sleeping, kind):
                ptr += 1
            if ptr > tb:
                break
            i = ptr
        elif strategy == RIGHTMOST:
            while ptr >= ta and not _can_topple(ptr, counts, sleeping, kind):
                ptr -= 1
            if ptr < ta:
                break
            i = ptr
        else:
            i = -1
            best = 0
            for c in range(ta, tb + 1):
                if _can_topple(c, counts, sleeping, kind):
                    d = abs(lo + c)
                    # equidistant: positive side wins
                    if i < 0 or d < best or (d == best and lo + c > 0):
                        i = c
                        best = d
            if i < 0:
                break
        if t >= budget:
            return t, BUDGET
        j = _topple_at(i, counts, sleeping, odo, kind, lo, key, S, R, J, depth_cap,
                       has_ov, ov_site, ov_index, ov_code)
        if j == _DEPTH:
            return t, DEPTH
        t += 1
        if j >= 0:
            if strategy == LEFTMOST and ta <= j < ptr:
                ptr = j
            elif strategy == RIGHTMOST and ptr < j <= tb:
                ptr = j
        if check_order and strategy != CLOSEST:
            side = -1 if strategy == LEFTMOST else 1
            if order_violated(counts, sleeping, kind, ta, tb, side):
                return t, ORDER
    return t, OK


@njit(cache=True, nogil=True)
def escorted_kernel(counts, sleeping, odo, kind, lo, key, S, R, J, ia, ib, side, budget,
                    depth_cap, has_ov, ov_site, ov_index, ov_code, check_order):
    """Extremal-active stabilization of the inner cells [ia, ib] with escort.

    For side < 0 the leftmost active site is toppled and a particle leaving
    the inner cells to the left is walked by acceptable topplings until it
    reaches a sink (cell 0 or the last cell); side > 0 is the mirror image.
    Returns (topplings, escorts, status)."""
    m = counts.shape[0]
    ptr = ia if side < 0 else ib
    t = 0
    escorts = 0
    while True:
        if side < 0:
            while ptr <= ib and not _can_topple(ptr, counts, sleeping, kind):
                ptr += 1
            if ptr > ib:
                break
        else:
            while ptr >= ia and not _can_topple(ptr, counts, sleeping, kind):
                ptr -= 1
            if ptr < ia:
                break
        if t >= budget:
            return t, escorts, BUDGET
        j = _topple_at(ptr, counts, sleeping, odo, kind, lo, key, S, R, J, depth_cap,
                       has_ov, ov_site, ov_index, ov_code)
        if j == _DEPTH:
            return t, escorts, DEPTH
        t += 1
        if check_order and order_violated(counts, sleeping, kind, ia, ib, side):
            return t, escorts, ORDER
        if j < 0 or j == 0 or j == m - 1:
            continue
        if (side < 0 and j < ia) or (side > 0 and j > ib):
            escorts += 1
            p = j
            while p != 0 and p != m - 1:
                if t >= budget:
                    return t, escorts, BUDGET
                q = _topple_at(p, counts, sleeping, odo, kind, lo, key, S, R, J, depth_cap,
                               has_ov, ov_site, ov_index, ov_code)
                if q == _DEPTH:
                    return t, escorts, DEPTH
                t += 1
                if q >= 0:
                    p = q
            ptr = ia if side < 0 else ib
        elif side < 0 and j < ptr:
            ptr = j
        elif side > 0 and j > ptr:
            ptr = j
    return t, escorts, OK


@njit(cache=True, nogil=True)
def march_kernel(counts, sleeping, odo, kind, lo, key, S, R, J, start, dest, budget, depth_cap,
                 has_ov, ov_site, ov_index, ov_code):
    """Walk one particle from cell ``start`` to cell ``dest`` by acceptable
    topplings of its current cell.  Reaching cell 0 or the last cell is a
    window overflow.  Returns (topplings, status)."""
    m = counts.shape[0]
    p = start
    t = 0
    while p != dest:
        if p == 0 or p == m - 1:
            return t, OVERFLOW
        if t >= budget:
            return t, BUDGET
        q = _topple_at(p, counts, sleeping, odo, kind, lo, key, S, R, J, depth_cap,
                       has_ov, ov_site, ov_index, ov_code)
        if q == _DEPTH:
            return t, DEPTH
        t += 1
        if q >= 0:
            p = q
    return t, OK


@njit(cache=True, nogil=True)
def _exit_one(counts, sleeping, odo, stack, in_stack, n, base, S, R, budget, depth_cap):
    # cells 1..n hold V_n, cells 0 and n+1 collect killed particles
    top = 0
    for i in range(n, 0, -1):
        sleeping[i] = False
        odo[i] = 0
        in_stack[i] = False
        if counts[i] > 0:
            stack[top] = i
            in_stack[i] = True
            top += 1
    t = 0
    while top > 0:
        top -= 1
        c = stack[top]
        in_stack[c] = False
        mm = counts[c]
        if mm == 0 or sleeping[c]:
            continue
        if t >= budget:
            return t, BUDGET
        k0 = odo[c]
        k = k0
        sb = base + np.uint64(c) * C_SITE
        nl = 0
        nr = 0
        kcap = min(depth_cap, k0 + budget - t)
        while mm > 0 and k < kcap:
            k += 1
            v = _mix(sb + np.uint64(k) * GOLDEN) >> np.uint64(11)
            sl = v < S
            if sl and mm == 1:
                sleeping[c] = True
                break
            left = np.int64(v >= R)
            right = np.int64(not sl) - left
            nr += right
            nl += left
            mm -= right + left
        t += k - k0
        odo[c] = k
        counts[c] = mm
        if nl > 0:
            counts[c - 1] += nl
            sleeping[c - 1] = False
            if c > 1 and not in_stack[c - 1]:
                stack[top] = c - 1
                in_stack[c - 1] = True
                top += 1
        if nr > 0:
            counts[c + 1] += nr
            sleeping[c + 1] = False
            if c < n and not in_stack[c + 1]:
                stack[top] = c + 1
                in_stack[c + 1] = True
                top += 1
        if mm > 0 and not sleeping[c]:
            return t, (BUDGET if t >= budget else DEPTH)
    return t, OK


@njit(cache=True, nogil=True)
def batch_exit_counts(etas, keys, lo, S, R, budget, depth_cap):
    """Killed-boundary stabilization of each row of ``etas`` (active counts on
    the segment starting at site ``lo``), row r using hash key ``keys[r]``.

    Returns (exits_left, exits_right, topplings, status) arrays."""
    trials, n = etas.shape
    el = np.zeros(trials, dtype=np.int64)
    er = np.zeros(trials, dtype=np.int64)
    tops = np.zeros(trials, dtype=np.int64)
    status = np.zeros(trials, dtype=np.int64)
    counts = np.zeros(n + 2, dtype=np.int64)
    sleeping = np.zeros(n + 2, dtype=np.bool_)
    odo = np.zeros(n + 2, dtype=np.int64)
    stack = np.zeros(n + 2, dtype=np.int64)
    in_stack = np.zeros(n + 2, dtype=np.bool_)
    for r in range(trials):
        counts[0] = 0
        counts[n + 1] = 0
        for i in range(n):
            counts[i + 1] = etas[r, i]
        base = keys[r] + np.uint64(lo - 1) * C_SITE
        t, st = _exit_one(counts, sleeping, odo, stack, in_stack, n, base, S, R, budget, depth_cap)
        el[r] = counts[0]
        er[r] = counts[n + 1]
        tops[r] = t
        status[r] = st
    return el, er, tops, status
