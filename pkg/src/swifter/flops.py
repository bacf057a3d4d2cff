"""Deterministic FLOP accounting.

Two counting conventions are supported, switched per meter:

* ``fusion``   - multiplications and additions both count (a matmul of
                 shapes m x k @ k x n costs 2*m*k*n).
* ``backbone`` - only multiplications count (the same matmul costs m*k*n).

A Fourier mixing layer is charged 5*L*log2(L) real flops per 1-D transform
of length L under both conventions; that is the usual FFT operation count
and is applied even when the layer evaluates through precomputed transform
matrices. Transcendentals (exp, tanh, erf-style curves) count as one
multiplication each; totals are dominated by the matmul terms, so these
small per-element constants only need to be deterministic, not exact.

Counts never depend on values or timing, only on shapes, so repeated runs
of the same configuration meter identically.
"""

import math
import threading
from contextlib import contextmanager

CONVENTIONS = ("fusion", "backbone")


class FlopMeter:
    """Accumulates flops for every metered operation while installed."""

    def __init__(self, convention: str = "fusion"):
        if convention not in CONVENTIONS:
            raise ValueError(f"unknown convention {convention!r}")
        self.convention = convention
        self.total = 0.0

    def matmul(self, m: int, k: int, n: int, batch: int = 1) -> None:
        if self.convention == "fusion":
            self.total += 2.0 * m * k * n * batch
        else:
            self.total += float(m * k * n * batch)

    def elementwise(self, muls: int, adds: int = 0) -> None:
        self.total += float(muls)
        if self.convention == "fusion":
            self.total += float(adds)

    def fourier_mix(self, seq: int, hid: int, batch: int = 1) -> None:
        """One 2-D mixing: hid transforms of length seq plus seq of length hid."""
        per = 5.0 * seq * math.log2(seq) * hid if seq > 1 else 0.0
        per += 5.0 * hid * math.log2(hid) * seq if hid > 1 else 0.0
        self.total += per * batch

    def snapshot(self) -> float:
        return self.total


_local = threading.local()


def current_meter() -> FlopMeter | None:
    return getattr(_local, "meter", None)


@contextmanager
def metered(meter: FlopMeter):
    """Install ``meter`` for ops executed in this thread inside the block."""
    prev = getattr(_local, "meter", None)
    _local.meter = meter
    try:
        yield meter
    finally:
        _local.meter = prev
