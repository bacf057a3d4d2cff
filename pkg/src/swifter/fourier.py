"""DFT/FFT kernels and the parameter-less Fourier mixing layer.

``dft_1d_naive`` is the direct O(T^2) summation and stays the oracle for
everything else here. ``fft_1d`` is the fast transform (radix-2 or
Bluestein via :mod:`swifter.kernels`). ``fourier_mix`` applies a 1-D DFT
along the sequence axis, another along the hidden axis, and keeps the real
part; for the small axis lengths this library actually runs, it evaluates
through cached transform matrices (one BLAS sandwich, exactly the same
linear map), switching to the FFT path for long axes.

The real-part-of-2D-DFT map is self-adjoint, which makes its tape backward
the map itself; see ``ft_layer``.
"""

import numpy as np

from . import flops, kernels
from .autodiff import Tensor, apply_op, astensor

# axis length above which fourier_mix switches from matrix sandwich to FFT
MATRIX_PATH_MAX = 128


def dft_1d_naive(x: np.ndarray) -> np.ndarray:
    """Direct DFT by summation: out_k = sum_t x_t exp(-2*pi*i*t*k/T)."""
    x = np.asarray(x, dtype=np.complex128)
    if x.ndim != 1 or x.size < 1:
        raise ValueError("dft_1d_naive expects a 1-D array of length >= 1")
    t = x.size
    grid = np.arange(t)
    out = np.empty(t, dtype=np.complex128)
    for k in range(t):
        out[k] = np.sum(x * np.exp((-2j * np.pi * k / t) * grid))
    return out


def fft_1d(x: np.ndarray) -> np.ndarray:
    """Fast transform for any length (radix-2 for powers of two, else Bluestein)."""
    x = np.asarray(x, dtype=np.complex128)
    if x.ndim != 1 or x.size < 1:
        raise ValueError("fft_1d expects a 1-D array of length >= 1")
    return kernels.fft_batch(x[None, :])[0]


_MAT_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _dft_matrices(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Real and imaginary parts of the symmetric n x n DFT matrix."""
    cached = _MAT_CACHE.get(n)
    if cached is None:
        k = np.arange(n)
        ang = (-2.0 * np.pi / n) * np.outer(k, k)
        cached = (np.cos(ang), np.sin(ang))
        _MAT_CACHE[n] = cached
    return cached


def _fft_along(x: np.ndarray, axis: int) -> np.ndarray:
    moved = np.moveaxis(x, axis, -1)
    shape = moved.shape
    flat = np.ascontiguousarray(moved.reshape(-1, shape[-1]))
    out = kernels.fft_batch(flat).reshape(shape)
    return np.moveaxis(out, -1, axis)


def fourier_mix(x: np.ndarray) -> np.ndarray:
    """Real part of the 2-D DFT of the trailing (seq, hidden) axes.

    Because the input is real, Re(D_T X D_H) = Re(D_T) X Re(D_H) -
    Im(D_T) X Im(D_H), which is the matrix path below.
    """
    x = np.asarray(x, dtype=np.float64)
    t, h = x.shape[-2], x.shape[-1]
    if max(t, h) <= MATRIX_PATH_MAX:
        rt, it = _dft_matrices(t)
        rh, ih = _dft_matrices(h)
        return (rt @ x) @ rh - (it @ x) @ ih
    z = _fft_along(x.astype(np.complex128), -2)
    z = _fft_along(z, -1)
    return np.ascontiguousarray(z.real)


def ft_layer(a) -> Tensor:
    """Tape op for Fourier mixing. The map is self-adjoint: backward == forward."""
    a = astensor(a)
    out = fourier_mix(a.data)
    meter = flops.current_meter()
    if meter is not None:
        t, h = a.data.shape[-2], a.data.shape[-1]
        batch = int(np.prod(a.data.shape[:-2], dtype=np.int64)) if a.data.ndim > 2 else 1
        meter.fourier_mix(t, h, batch)

    def backward(g, needs):
        return (fourier_mix(g),)

    return apply_op("ft_layer", out, (a,), backward)
