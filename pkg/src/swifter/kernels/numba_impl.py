"""Numba-compiled twins of the hot kernels.

Row-at-a-time loops instead of the vectorized numpy forms: that is the
shape numba compiles best. Signatures match ``numpy_impl`` exactly so the
backend can be swapped by the env flag without touching callers.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def _fft_pow2_inplace(a):
    """In-place iterative radix-2 transform of one complex128 row."""
    n = a.shape[0]
    # bit-reversal permutation
    j = 0
    for i in range(1, n):
        bit = n >> 1
        while j & bit:
            j ^= bit
            bit >>= 1
        j |= bit
        if i < j:
            tmp = a[i]
            a[i] = a[j]
            a[j] = tmp
    half = 1
    while half < n:
        step = -np.pi / half
        for start in range(0, n, 2 * half):
            for k in range(half):
                w = np.exp(1j * step * k)
                u = a[start + k]
                t = w * a[start + k + half]
                a[start + k] = u + t
                a[start + k + half] = u - t
        half *= 2


@njit(cache=True)
def _fft_row(x):
    """DFT of one complex128 row of any length (radix-2 or Bluestein)."""
    n = x.shape[0]
    if n & (n - 1) == 0:
        out = x.copy()
        _fft_pow2_inplace(out)
        return out
    m = 1
    while m < 2 * n - 1:
        m <<= 1
    chirp = np.empty(n, dtype=np.complex128)
    for k in range(n):
        chirp[k] = np.exp(-1j * np.pi * ((k * k) % (2 * n)) / n)
    a = np.zeros(m, dtype=np.complex128)
    for k in range(n):
        a[k] = x[k] * chirp[k]
    b = np.zeros(m, dtype=np.complex128)
    for k in range(n):
        b[k] = np.conj(chirp[k])
    for k in range(1, n):
        b[m - k] = np.conj(chirp[k])
    _fft_pow2_inplace(a)
    _fft_pow2_inplace(b)
    for i in range(m):
        a[i] = np.conj(a[i] * b[i])
    _fft_pow2_inplace(a)
    out = np.empty(n, dtype=np.complex128)
    for k in range(n):
        out[k] = np.conj(a[k]) / m * chirp[k]
    return out


@njit(cache=True)
def fft_batch(x):
    """DFT along the last axis of a (B, T) complex128 array."""
    b, n = x.shape
    out = np.empty((b, n), dtype=np.complex128)
    for i in range(b):
        out[i] = _fft_row(x[i])
    return out


@njit(cache=True)
def retention_parallel_core(q, k, v, gamma):
    """(q k^T ⊙ decay) v for one (T,H) sequence."""
    t, h = q.shape
    out = np.zeros((t, h))
    lg = np.log(gamma)
    for n in range(t):
        for m in range(n + 1):
            score = 0.0
            for d in range(h):
                score += q[n, d] * k[m, d]
            score *= np.exp((n - m) * lg)
            for d in range(h):
                out[n, d] += score * v[m, d]
    return out


@njit(cache=True)
def retention_recurrent_run(q, k, v, gamma, state, out):
    """In-place recurrence state <- gamma*state + k_t^T v_t, out_t = q_t state."""
    t, h = q.shape
    for i in range(t):
        for a in range(h):
            for b in range(h):
                state[a, b] = gamma * state[a, b] + k[i, a] * v[i, b]
        for b in range(h):
            acc = 0.0
            for a in range(h):
                acc += q[i, a] * state[a, b]
            out[i, b] = acc
