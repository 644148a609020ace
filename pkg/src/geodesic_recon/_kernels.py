"""Compiled inner loops. All arrays use local (row=i, col=j) indexing.

Step codes: 0 is a step +(1,0), 1 is a step +(0,1), 2 means no step.
"""

import numpy as np
from numba import njit

STEP_I = 0
STEP_J = 1
NO_STEP = 2

TIE_TOL = 1e-12
NEG = -np.inf

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_OFFSET = 1 << 32


@njit(cache=True)
def _splitmix(x):
    x = x + _GOLDEN
    x = (x ^ (x >> np.uint64(30))) * _M1
    x = (x ^ (x >> np.uint64(27))) * _M2
    return x ^ (x >> np.uint64(31))


@njit(cache=True)
def sample_weights(seed, i0, j0, n, m, dist_code):
    """Counter-based weights keyed by (seed, i, j); dist 0 = Exp(1), 1 = Geometric(1/2)."""
    out = np.empty((n, m), dtype=np.float64)
    base = _splitmix(np.uint64(seed))
    for a in range(n):
        ki = _splitmix(base ^ np.uint64(i0 + a + _OFFSET))
        for b in range(m):
            h = _splitmix(ki ^ np.uint64(j0 + b + _OFFSET))
            u = (np.float64(h >> np.uint64(11)) + 0.5) * (1.0 / 9007199254740992.0)
            if dist_code == 0:
                out[a, b] = -np.log(u)
            else:
                out[a, b] = np.floor(np.log(u) / np.log(0.5)) + 1.0
    return out


@njit(cache=True)
def forward_dp(w):
    """G(corner; v) for every v of ``w``, start weight excluded, endpoint included."""
    n, m = w.shape
    g = np.empty((n, m), dtype=np.float64)
    for lev in range(n + m - 1):
        lo = max(0, lev - (m - 1))
        hi = min(lev, n - 1)
        for i in range(lo, hi + 1):
            j = lev - i
            if i == 0 and j == 0:
                g[i, j] = 0.0
                continue
            best = NEG
            if i > 0:
                best = g[i - 1, j]
            if j > 0 and g[i, j - 1] > best:
                best = g[i, j - 1]
            g[i, j] = w[i, j] + best
    return g


@njit(cache=True)
def backward_dp(w):
    """G(v; far corner) for every v of ``w`` plus the argmax first step and tie flags."""
    n, m = w.shape
    h = np.empty((n, m), dtype=np.float64)
    step = np.full((n, m), NO_STEP, dtype=np.uint8)
    tie = np.zeros((n, m), dtype=np.bool_)
    for lev in range(n + m - 2, -1, -1):
        lo = max(0, lev - (m - 1))
        hi = min(lev, n - 1)
        for i in range(lo, hi + 1):
            j = lev - i
            if i == n - 1 and j == m - 1:
                h[i, j] = 0.0
                continue
            a = NEG
            b = NEG
            if i + 1 < n:
                a = w[i + 1, j] + h[i + 1, j]
            if j + 1 < m:
                b = w[i, j + 1] + h[i, j + 1]
            if a >= b:
                h[i, j] = a
                step[i, j] = STEP_I
            else:
                h[i, j] = b
                step[i, j] = STEP_J
            if a > NEG and b > NEG and abs(a - b) <= TIE_TOL:
                tie[i, j] = True
    return h, step, tie


@njit(cache=True)
def certified_reach(step_a, step_b):
    """Level at which the rays following ``step_a`` and ``step_b`` first disagree or end."""
    n, m = step_a.shape
    reach = np.empty((n, m), dtype=np.int64)
    for lev in range(n + m - 2, -1, -1):
        lo = max(0, lev - (m - 1))
        hi = min(lev, n - 1)
        for i in range(lo, hi + 1):
            j = lev - i
            s = step_a[i, j]
            if s == NO_STEP or s != step_b[i, j]:
                reach[i, j] = lev
            elif s == STEP_I:
                reach[i, j] = reach[i + 1, j] if i + 1 < n else lev
            else:
                reach[i, j] = reach[i, j + 1] if j + 1 < m else lev
    return reach


@njit(cache=True)
def follow(step, i, j, max_len):
    """Positions (i, j) visited following step pointers from (i, j)."""
    n, m = step.shape
    out = np.empty((max_len + 1, 2), dtype=np.int64)
    k = 0
    out[0, 0] = i
    out[0, 1] = j
    while k < max_len:
        s = step[i, j]
        if s == STEP_I:
            i += 1
        elif s == STEP_J:
            j += 1
        else:
            break
        if i >= n or j >= m:
            break
        k += 1
        out[k, 0] = i
        out[k, 1] = j
    return out[: k + 1]


@njit(cache=True)
def ray_rows(step, reach, starts_i, starts_j, top_level):
    """Row index i of each start's ray at levels level(start)..top_level; -1 when unavailable."""
    n, m = step.shape
    k = starts_i.shape[0]
    out = np.full((k, top_level + 1), -1, dtype=np.int64)
    for t in range(k):
        i = starts_i[t]
        j = starts_j[t]
        while True:
            lev = i + j
            if lev > top_level:
                break
            out[t, lev] = i
            if lev >= reach[i, j]:
                break
            s = step[i, j]
            if s == STEP_I:
                i += 1
            elif s == STEP_J:
                j += 1
            else:
                break
    return out


@njit(cache=True)
def dag_forward(step1, step2, excluded, cost_i, cost_j, a, b, ia, ib):
    """Best (maximal) switching walk from (a, b) to every vertex of [a..ia] x [b..ib].

    A vertex may leave along its tree-1 or tree-2 step; a step +(1,0) out of v scores
    ``cost_i[v]`` and a step +(0,1) scores ``cost_j[v]``. Negate the costs to minimise.
    Returns values (-inf when unreachable) and flags on vertices reached optimally
    from two distinct predecessors.
    """
    n = ia - a + 1
    m = ib - b + 1
    val = np.full((n, m), NEG, dtype=np.float64)
    tie = np.zeros((n, m), dtype=np.bool_)
    if excluded[a, b]:
        return val, tie
    val[0, 0] = 0.0
    for lev in range(1, n + m - 1):
        lo = max(0, lev - (m - 1))
        hi = min(lev, n - 1)
        for i in range(lo, hi + 1):
            j = lev - i
            if excluded[a + i, b + j]:
                continue
            best = NEG
            c = 0
            if i > 0 and val[i - 1, j] > NEG:
                s1 = step1[a + i - 1, b + j]
                s2 = step2[a + i - 1, b + j]
                if s1 == STEP_I or s2 == STEP_I:
                    best = val[i - 1, j] + cost_i[a + i - 1, b + j]
                    c = 1
            if j > 0 and val[i, j - 1] > NEG:
                s1 = step1[a + i, b + j - 1]
                s2 = step2[a + i, b + j - 1]
                if s1 == STEP_J or s2 == STEP_J:
                    cand = val[i, j - 1] + cost_j[a + i, b + j - 1]
                    if c == 1 and abs(cand - best) <= TIE_TOL:
                        tie[i, j] = True
                    if cand > best:
                        best = cand
            val[i, j] = best
    return val, tie


@njit(cache=True)
def dag_backward_mincost(step1, step2, excluded, cost1, ti, tj):
    """Cheapest switching walk from every vertex to the target (ti, tj).

    Tree-2 steps cost nothing; a tree-1 step out of v costs ``cost1[v]``. When both
    trees take the same step the free edge is used. Returns cost-to-go (inf when the
    target is unreachable), the chosen first step and tie flags.
    """
    n = ti + 1
    m = tj + 1
    inf = np.inf
    c = np.full((n, m), inf, dtype=np.float64)
    first = np.full((n, m), NO_STEP, dtype=np.uint8)
    tie = np.zeros((n, m), dtype=np.bool_)
    if excluded[ti, tj]:
        return c, first, tie
    c[ti, tj] = 0.0
    for lev in range(n + m - 3, -1, -1):
        lo = max(0, lev - (m - 1))
        hi = min(lev, n - 1)
        for i in range(lo, hi + 1):
            j = lev - i
            if excluded[i, j]:
                continue
            s1 = step1[i, j]
            s2 = step2[i, j]
            best = inf
            bstep = NO_STEP
            other = inf
            # tree-2 edge
            if s2 != NO_STEP:
                ni = i + 1 if s2 == STEP_I else i
                nj = j + 1 if s2 == STEP_J else j
                if ni < n and nj < m:
                    best = c[ni, nj]
                    bstep = s2
            if s1 != NO_STEP and s1 != s2:
                ni = i + 1 if s1 == STEP_I else i
                nj = j + 1 if s1 == STEP_J else j
                if ni < n and nj < m:
                    cand = cost1[i, j] + c[ni, nj]
                    if cand < best:
                        other = best
                        best = cand
                        bstep = s1
                    else:
                        other = cand
            c[i, j] = best
            first[i, j] = bstep if best < inf else NO_STEP
            if best < inf and abs(other - best) <= TIE_TOL:
                tie[i, j] = True
    return c, first, tie


@njit(cache=True)
def dag_backward_reach(step1, step2, excluded, ti, tj):
    """Which vertices of [0..ti] x [0..tj] reach (ti, tj) along tree steps."""
    n = ti + 1
    m = tj + 1
    ok = np.zeros((n, m), dtype=np.bool_)
    if excluded[ti, tj]:
        return ok
    ok[ti, tj] = True
    for lev in range(n + m - 3, -1, -1):
        lo = max(0, lev - (m - 1))
        hi = min(lev, n - 1)
        for i in range(lo, hi + 1):
            j = lev - i
            if excluded[i, j]:
                continue
            for s in (step1[i, j], step2[i, j]):
                if s == STEP_I and i + 1 < n and ok[i + 1, j]:
                    ok[i, j] = True
                elif s == STEP_J and j + 1 < m and ok[i, j + 1]:
                    ok[i, j] = True
    return ok


@njit(cache=True)
def ray_position_at(step, top):
    """Row i where each vertex's ray crosses local level ``top``; -1 if it leaves the array first."""
    n, m = step.shape
    pos = np.full((n, m), -1, dtype=np.int64)
    top = min(top, n + m - 2)
    lo = max(0, top - (m - 1))
    hi = min(top, n - 1)
    for i in range(lo, hi + 1):
        pos[i, top - i] = i
    for lev in range(top - 1, -1, -1):
        lo = max(0, lev - (m - 1))
        hi = min(lev, n - 1)
        for i in range(lo, hi + 1):
            j = lev - i
            s = step[i, j]
            if s == STEP_I and i + 1 < n:
                pos[i, j] = pos[i + 1, j]
            elif s == STEP_J and j + 1 < m:
                pos[i, j] = pos[i, j + 1]
    return pos


@njit(cache=True)
def downcrossings(values, eps):
    """Completed passages of |values| from at least ``eps`` down to 0 (a sign change or zero)."""
    count = 0
    armed = False
    for k in range(values.shape[0]):
        v = values[k]
        if armed and (v == 0.0 or (values[k - 1] > 0.0) != (v > 0.0)):
            count += 1
            armed = False
        if abs(v) >= eps:
            armed = True
    return count
