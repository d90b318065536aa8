"""Compiled per-observation loops for the soft SBM updates.

Each kernel processes one contiguous chunk of observations and adds into
chunk-local accumulators supplied by the caller. Kernels release the GIL so
chunks can run on a thread pool.
"""

import numpy as np
from numba import njit

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MUL1 = np.uint64(0xBF58476D1CE4E5B9)
_MUL2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 1.0 / (1 << 53)


@njit(cache=True, nogil=True)
def counter_uniform(key, j):
    # matches RngSpec.uniforms: splitmix64 of key + (j + 1) * golden
    z = key + np.uint64(j + 1) * _GOLDEN
    z = z + _GOLDEN
    z = (z ^ (z >> _S30)) * _MUL1
    z = (z ^ (z >> _S27)) * _MUL2
    z = z ^ (z >> _S31)
    return np.float64(z >> _S11) * _INV53


@njit(cache=True, nogil=True)
def bisect_cum(cum, u):
    # first index with cum[idx] > u; the last bin absorbs rounding
    lo = 0
    hi = cum.shape[0] - 1
    while lo < hi:
        mid = (lo + hi) >> 1
        if cum[mid] <= u:
            lo = mid + 1
        else:
            hi = mid
    return lo


@njit(cache=True, nogil=True)
def exact_chunk(users, items, ratings, hu, hv, theta, acc_u, acc_v, eta):
    """Accumulate exact responsibilities; returns (-sum log-likelihood, first bad obs or -1)."""
    k = hu.shape[1]
    l = hv.shape[1]
    w = np.empty((k, l))
    ent = 0.0
    for e in range(users.shape[0]):
        u = users[e]
        v = items[e]
        r = ratings[e]
        norm = 0.0
        for i in range(k):
            hui = hu[u, i]
            for j in range(l):
                x = hui * hv[v, j] * theta[i, j, r]
                w[i, j] = x
                norm += x
        if norm <= 0.0:
            return np.inf, e
        ent -= np.log(norm)
        inv = 1.0 / norm
        for i in range(k):
            for j in range(l):
                x = w[i, j] * inv
                acc_u[u, i] += x
                acc_v[v, j] += x
                eta[i, j, r] += x
    return ent, -1


@njit(cache=True, nogil=True)
def mc_chunk(users, items, ratings, keys_u, keys_v, cum_u, cum_v, theta, s,
             acc_u, acc_v, eta, cnt_u, cnt_v):
    """Monte-Carlo accumulation; returns the number of skipped observations."""
    si = np.empty(s, dtype=np.int64)
    sj = np.empty(s, dtype=np.int64)
    th = np.empty(s)
    skipped = 0
    for e in range(users.shape[0]):
        u = users[e]
        v = items[e]
        r = ratings[e]
        x = 0.0
        for t in range(s):
            i = bisect_cum(cum_u[u], counter_uniform(keys_u[e], t))
            j = bisect_cum(cum_v[v], counter_uniform(keys_v[e], t))
            si[t] = i
            sj[t] = j
            th[t] = theta[i, j, r]
            x += th[t]
        if x <= 0.0:
            skipped += 1
            continue
        inv = 1.0 / x
        for t in range(s):
            wgt = th[t] * inv
            acc_u[u, si[t]] += wgt
            acc_v[v, sj[t]] += wgt
            eta[si[t], sj[t], r] += wgt
        cnt_u[u] += 1
        cnt_v[v] += 1
    return skipped
