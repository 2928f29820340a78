"""Compiled inner loops for z -> z^d + c.

Escape is tested on the squared modulus, |z|^2 > R^2, which agrees with
|z| > R including the tie |z| = R (not escaped).
"""

import numba
import numpy as np
from numba import njit, prange

# omp first: it tolerates launches from several Python threads at once
numba.config.THREADING_LAYER_PRIORITY = ["omp", "tbb", "workqueue"]


@njit(cache=True)
def ipow(z, d):
    if d == 2:
        return z * z
    result = z
    base = z
    e = d - 1
    # result starts at z, so multiply in the remaining d - 1 factors
    while e > 0:
        if e & 1:
            result = result * base
        e >>= 1
        if e > 0:
            base = base * base
    return result


@njit(cache=True)
def _abs2(z):
    return z.real * z.real + z.imag * z.imag


@njit(cache=True)
def _radius2(c, radius):
    # radius >= |c| always; taking the max keeps xi_1 = c from escaping
    # through rounding when radius is exactly |c|
    return max(radius * radius, _abs2(c))


@njit(cache=True)
def orbit_points(c, d, radius, n_max):
    """Critical orbit up to n_max or the first escape.

    Returns (points, escape_index, nonfinite) where escape_index is -1 when
    the orbit did not escape and nonfinite flags an overflow.
    """
    pts = np.empty(n_max + 1, dtype=np.complex128)
    pts[0] = 0j
    z = 0j
    r2 = _radius2(c, radius)
    last = n_max
    esc = -1
    bad = False
    for k in range(1, n_max + 1):
        z = ipow(z, d) + c
        pts[k] = z
        a2 = _abs2(z)
        if not np.isfinite(a2):
            bad = True
            last = k
            break
        if a2 > r2:
            esc = k
            last = k
            break
    return pts[: last + 1], esc, bad


@njit(cache=True)
def escape_time(c, d, n_max):
    r2 = _radius2(c, 2.0 ** (1.0 / (d - 1)))
    z = 0j
    for k in range(1, n_max + 1):
        z = ipow(z, d) + c
        if _abs2(z) > r2:
            return k
    return 0


@njit(parallel=True, cache=True)
def escape_times(cs, d, n_max):
    """Escape index per parameter, 0 meaning no escape within n_max."""
    out = np.zeros(cs.size, dtype=np.int64)
    for i in prange(cs.size):
        out[i] = escape_time(cs[i], d, n_max)
    return out


@njit(cache=True)
def advance_samples(cs, z0, d, radius, steps):
    """Iterate many parameters together from their current points.

    Row j of the result holds the points j steps after z0.  A sample is
    frozen at NaN after it passes ``radius``; ``escaped_at`` records the
    offset of that step, or -1.
    """
    m = cs.size
    out = np.empty((steps + 1, m), dtype=np.complex128)
    escaped_at = np.full(m, -1, dtype=np.int64)
    r2 = radius * radius
    nan = complex(np.nan, np.nan)
    for i in range(m):
        z = z0[i]
        out[0, i] = z
        alive = np.isfinite(z.real) and np.isfinite(z.imag)
        if not alive:
            escaped_at[i] = 0
        for j in range(1, steps + 1):
            if alive:
                z = ipow(z, d) + cs[i]
                if not _abs2(z) <= r2:
                    alive = False
                    escaped_at[i] = j
                    out[j, i] = nan
                else:
                    out[j, i] = z
            else:
                out[j, i] = nan
    return out, escaped_at


def set_threads(n: int) -> int:
    """Cap numba's worker count; returns the value actually applied."""
    n = max(1, min(int(n), numba.config.NUMBA_NUM_THREADS))
    numba.set_num_threads(n)
    return n


@njit(cache=True)
def _cycle_attracts(z, c, d, q):
    """True when the q-cycle through z has multiplier of modulus < 1."""
    m = 1.0
    w = z
    for _ in range(q):
        m *= d * abs(w) ** (d - 1)
        w = ipow(w, d) + c
    return m < 1.0


@njit(cache=True)
def membership_code(c, d, n_max, cycle_tol):
    """(code, verified) for one parameter.

    code > 0 is the escape index, 0 means no decision within n_max and -1
    means the orbit came back to a checkpoint within cycle_tol along an
    attracting cycle (counted as not escaped).  A near-return along a
    repelling cycle is ignored, since the orbit may still leave.
    ``verified`` says the five iterates after escape kept growing strictly.
    """
    r2 = _radius2(c, 2.0 ** (1.0 / (d - 1)))
    z = 0j
    saved = 0j
    saved_k = 0
    window = 8
    watch = True
    for k in range(1, n_max + 1):
        z = ipow(z, d) + c
        a2 = _abs2(z)
        if a2 > r2:
            ok = True
            w = z
            for _ in range(5):
                nxt = ipow(w, d) + c
                if not _abs2(nxt) > _abs2(w):
                    ok = False
                    break
                w = nxt
            return k, ok
        if watch and _abs2(z - saved) <= cycle_tol * cycle_tol:
            if _cycle_attracts(z, c, d, k - saved_k):
                return -1, True
            watch = False
        if k == window:
            saved = z
            saved_k = k
            window *= 2
    return 0, True


@njit(parallel=True, cache=True)
def membership_codes(cs, d, n_max, cycle_tol):
    codes = np.zeros(cs.size, dtype=np.int64)
    verified = np.ones(cs.size, dtype=np.bool_)
    for i in prange(cs.size):
        codes[i], verified[i] = membership_code(cs[i], d, n_max, cycle_tol)
    return codes, verified
