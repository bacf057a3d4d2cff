"""Pure-numpy implementations of the numeric hot kernels.

These are the fallback twins of the numba kernels in ``numba_impl``.
Every function here is a plain ndarray -> ndarray transform with no
autodiff involvement; the vectorized forms below are also what the
numba twins are checked against in the test suite.
"""

import numpy as np


def _bit_reversal(n: int) -> np.ndarray:
    """Index permutation that orders 0..n-1 by reversed bit pattern (n = 2^k)."""
    bits = n.bit_length() - 1
    rev = np.zeros(n, dtype=np.int64)
    for i in range(n):
        r = 0
        x = i
        for _ in range(bits):
            r = (r << 1) | (x & 1)
            x >>= 1
        rev[i] = r
    return rev


_REV_CACHE: dict[int, np.ndarray] = {}


def _fft_pow2(x: np.ndarray) -> np.ndarray:
    """Iterative radix-2 transform along the last axis (length must be 2^k)."""
    n = x.shape[-1]
    if n == 1:
        return x.copy()
    rev = _REV_CACHE.get(n)
    if rev is None:
        rev = _bit_reversal(n)
        _REV_CACHE[n] = rev
    a = np.ascontiguousarray(x[..., rev])
    lead = a.shape[:-1]
    half = 1
    while half < n:
        w = np.exp((-1j * np.pi / half) * np.arange(half))
        a = a.reshape(lead + (n // (2 * half), 2, half))
        even = a[..., 0, :]
        odd = a[..., 1, :] * w
        a = np.concatenate([even + odd, even - odd], axis=-1)
        half *= 2
    return a.reshape(lead + (n,))


def _ifft_pow2(x: np.ndarray) -> np.ndarray:
    return np.conj(_fft_pow2(np.conj(x))) / x.shape[-1]


def fft_batch(x: np.ndarray) -> np.ndarray:
    """DFT along the last axis for any length, input complex128.

    Power-of-two lengths go through the radix-2 path; everything else is
    handled by the Bluestein chirp construction on a padded power of two.
    """
    x = np.asarray(x, dtype=np.complex128)
    n = x.shape[-1]
    if n & (n - 1) == 0:
        return _fft_pow2(x)
    m = 1 << (2 * n - 1).bit_length()
    k = np.arange(n)
    # k^2 mod 2n keeps the chirp argument small and exact
    chirp = np.exp((-1j * np.pi / n) * ((k * k) % (2 * n)))
    a = np.zeros(x.shape[:-1] + (m,), dtype=np.complex128)
    a[..., :n] = x * chirp
    b = np.zeros(m, dtype=np.complex128)
    b[:n] = np.conj(chirp)
    b[m - n + 1 :] = np.conj(chirp)[1:][::-1]
    conv = _ifft_pow2(_fft_pow2(a) * _fft_pow2(b))
    return conv[..., :n] * chirp


def retention_parallel_core(
    q: np.ndarray, k: np.ndarray, v: np.ndarray, gamma: float
) -> np.ndarray:
    """(q k^T ⊙ decay) v for one sequence; q,k,v are (T,H)."""
    t = q.shape[0]
    idx = np.arange(t)
    delta = idx[:, None] - idx[None, :]
    decay = np.zeros((t, t))
    past = delta >= 0
    decay[past] = np.exp(delta[past] * np.log(gamma))
    return (q @ k.T * decay) @ v


def retention_recurrent_run(
    q: np.ndarray,
    k: np.ndarray,
    v: np.ndarray,
    gamma: float,
    state: np.ndarray,
    out: np.ndarray,
) -> None:
    """Sequential state recurrence: state <- gamma*state + k_t^T v_t, out_t = q_t state.

    ``state`` (H,H) and ``out`` (T,H) are updated in place so a decode
    stream can keep reusing its own buffers.
    """
    t = q.shape[0]
    for i in range(t):
        state *= gamma
        state += np.outer(k[i], v[i])
        out[i] = q[i] @ state
