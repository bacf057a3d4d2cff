"""Single-scale retention in three equivalent forms, plus cross-attention.

The parallel form (q k^T ⊙ decay) v trains on the tape; the recurrent form
carries an H x H state per layer and does O(1) work per decoded token; the
brute form is the explicit double sum and exists purely as the oracle the
other two are checked against. No output gate, no per-head scales: the
decay is a single scalar gamma and relative position enters through the
pairwise channel rotations.
"""

from dataclasses import dataclass

import numpy as np

from . import flops, kernels
from .autodiff import Tensor, apply_op, astensor, matmul, mul, softmax, transpose
from .errors import ConfigError, ContractError, DomainError, ShapeError


class RotaryPhase:
    """Per-pair rotation angles: pair d turns by t * theta_base^(-2d/H) at position t."""

    def __init__(self, hidden: int, theta_base: float = 10000.0):
        if hidden % 2 != 0:
            raise ShapeError(f"rotations need an even hidden size, got {hidden}")
        self.hidden = hidden
        self.theta_base = theta_base
        d = np.arange(hidden // 2)
        self.theta = theta_base ** (-2.0 * d / hidden)
        self._cos = np.zeros((0, hidden // 2))
        self._sin = np.zeros((0, hidden // 2))

    def tables(self, end: int) -> tuple[np.ndarray, np.ndarray]:
        """cos/sin tables for positions 0..end-1, cached and grown on demand."""
        if end > self._cos.shape[0]:
            t = np.arange(end)
            ang = t[:, None] * self.theta[None, :]
            self._cos = np.cos(ang)
            self._sin = np.sin(ang)
        return self._cos[:end], self._sin[:end]


def _rotate_data(x: np.ndarray, cos: np.ndarray, sin: np.ndarray, sign: float) -> np.ndarray:
    """Rotate adjacent channel pairs of x (..., T, H) by sign * angle(t, d)."""
    shape = x.shape
    pairs = x.reshape(shape[:-1] + (shape[-1] // 2, 2))
    a, b = pairs[..., 0], pairs[..., 1]
    s = sign * sin
    out = np.empty_like(pairs)
    out[..., 0] = a * cos - b * s
    out[..., 1] = a * s + b * cos
    return out.reshape(shape)


def apply_rotation(x, phase: RotaryPhase, conjugate: bool = False, offset: int = 0) -> Tensor:
    """Position-dependent pair rotation; ``conjugate`` negates the angles.

    ``offset`` shifts the position index, which is how recurrent decoding
    keeps using absolute positions. Rotations are isometries, so backward
    is the rotation with the opposite sign.
    """
    x = astensor(x)
    h = x.data.shape[-1]
    if h % 2 != 0:
        raise ShapeError(f"apply_rotation needs even hidden size, got {h}")
    if phase.hidden != h:
        raise ShapeError("phase was built for a different hidden size")
    t = x.data.shape[-2]
    cos, sin = phase.tables(offset + t)
    cos, sin = cos[offset : offset + t], sin[offset : offset + t]
    sign = -1.0 if conjugate else 1.0
    out = _rotate_data(x.data, cos, sin, sign)
    meter = flops.current_meter()
    if meter is not None:
        meter.elementwise(2 * x.data.size, x.data.size)

    def backward(g, needs):
        return (_rotate_data(g, cos, sin, -sign),)

    return apply_op("rotate", out, (x,), backward)


@dataclass
class DecayMask:
    """Lower-triangular gamma^(n-m) mask enforcing causal exponential decay."""

    gamma: float
    t: int
    d: np.ndarray


def decay_mask(gamma: float, t: int) -> DecayMask:
    if not (0.0 < gamma <= 1.0):
        raise DomainError(f"gamma must be in (0, 1], got {gamma}")
    if t < 1:
        raise DomainError(f"mask length must be >= 1, got {t}")
    idx = np.arange(t)
    delta = idx[:, None] - idx[None, :]
    d = np.zeros((t, t))
    past = delta >= 0
    # gamma^(n-m) as exp((n-m) ln gamma): never overflows for gamma <= 1
    d[past] = np.exp(delta[past] * np.log(gamma))
    return DecayMask(gamma=gamma, t=t, d=d)


@dataclass
class RetentionWeights:
    """The three square projections; retention itself is bias-free."""

    w_q: Tensor
    w_k: Tensor
    w_v: Tensor

    @classmethod
    def init(cls, hidden: int, rng: np.random.Generator, std: float = 0.02):
        return cls(
            w_q=Tensor(rng.normal(0.0, std, (hidden, hidden)), requires_grad=True),
            w_k=Tensor(rng.normal(0.0, std, (hidden, hidden)), requires_grad=True),
            w_v=Tensor(rng.normal(0.0, std, (hidden, hidden)), requires_grad=True),
        )

    def named(self, prefix: str):
        yield f"{prefix}.w_q", self.w_q
        yield f"{prefix}.w_k", self.w_k
        yield f"{prefix}.w_v", self.w_v


class RetentionState:
    """The H x H recurrent carrier. Size never depends on how far a decode got."""

    __slots__ = ("s", "step")

    def __init__(self, hidden: int):
        self.s = np.zeros((hidden, hidden))
        self.step = 0

    @property
    def nbytes(self) -> int:
        return self.s.nbytes

    def clone(self) -> "RetentionState":
        out = RetentionState.__new__(RetentionState)
        out.s = self.s.copy()
        out.step = self.step
        return out


def _swap_last2(t: Tensor) -> Tensor:
    nd = t.data.ndim
    axes = tuple(range(nd - 2)) + (nd - 1, nd - 2)
    return transpose(t, axes)


def retention_parallel(x, w: RetentionWeights, phase: RotaryPhase, gamma: float) -> Tensor:
    """(q k^T ⊙ decay) v over a whole sequence; differentiable, batched.

    ``x`` is (T, H) or (B, T, H). Row t of the output depends only on rows
    0..t because the decay mask zeroes every future position.
    """
    x = astensor(x)
    t = x.data.shape[-2]
    q = apply_rotation(matmul(x, w.w_q), phase)
    # same-sign rotation for k: under the real pair embedding the conjugation
    # happens inside the q.k dot product, giving scores that depend on t-m only
    k = apply_rotation(matmul(x, w.w_k), phase)
    v = matmul(x, w.w_v)
    scores = mul(matmul(q, _swap_last2(k)), decay_mask(gamma, t).d)
    return matmul(scores, v)


def retention_recurrent_step(
    x_t: np.ndarray,
    state: RetentionState,
    w: RetentionWeights,
    phase: RotaryPhase,
    gamma: float,
) -> tuple[np.ndarray, RetentionState]:
    """One decode step: state <- gamma*state + k^T v, out = q state.

    Mutates and returns ``state`` (a decode stream owns its state; beams
    clone before branching). The position used for the rotations is the
    state's own step counter, so the stream never has to pass t around.
    """
    x_t = np.asarray(x_t, dtype=np.float64)
    h = w.w_q.data.shape[0]
    if x_t.shape != (h,):
        raise ContractError(f"recurrent step consumes one ({h},) row, got {x_t.shape}")
    if state.s.shape != (h, h):
        raise ContractError("state size does not match the weights")
    pos = state.step
    row = x_t[None, :]
    q = _rotate_row(row @ w.w_q.data, phase, pos, +1.0)
    k = _rotate_row(row @ w.w_k.data, phase, pos, +1.0)
    v = row @ w.w_v.data
    out = np.empty((1, h))
    kernels.retention_recurrent_run(q, k, v, gamma, state.s, out)
    state.step = pos + 1
    meter = flops.current_meter()
    if meter is not None:
        meter.matmul(1, h, h, 4)  # q/k/v projections + state readout
        meter.elementwise(2 * h, h)  # the two rotations
        meter.elementwise(2 * h * h, h * h)  # decay + outer-product update
    return out[0], state


def _rotate_row(row: np.ndarray, phase: RotaryPhase, pos: int, sign: float) -> np.ndarray:
    cos, sin = phase.tables(pos + 1)
    return _rotate_data(row, cos[pos : pos + 1], sin[pos : pos + 1], sign)


def retention_brute(
    x: np.ndarray, w: RetentionWeights, phase: RotaryPhase, gamma: float
) -> np.ndarray:
    """Oracle: out_t = sum_{m<=t} gamma^(t-m) (q_t . k_m) v_m, written out."""
    x = np.asarray(x, dtype=np.float64)
    t, h = x.shape
    cos, sin = phase.tables(t)
    q = _rotate_data(x @ w.w_q.data, cos, sin, +1.0)
    k = _rotate_data(x @ w.w_k.data, cos, sin, +1.0)
    v = x @ w.w_v.data
    out = np.zeros((t, h))
    for n in range(t):
        for m in range(n + 1):
            out[n] += gamma ** (n - m) * float(q[n] @ k[m]) * v[m]
    return out


@dataclass
class CrossAttentionWeights:
    w_q: Tensor
    b_q: Tensor
    w_k: Tensor
    b_k: Tensor
    w_v: Tensor
    b_v: Tensor
    w_o: Tensor
    b_o: Tensor

    @classmethod
    def init(cls, hidden: int, rng: np.random.Generator, std: float = 0.02):
        def lin():
            return (
                Tensor(rng.normal(0.0, std, (hidden, hidden)), requires_grad=True),
                Tensor(np.zeros(hidden), requires_grad=True),
            )

        w_q, b_q = lin()
        w_k, b_k = lin()
        w_v, b_v = lin()
        w_o, b_o = lin()
        return cls(w_q, b_q, w_k, b_k, w_v, b_v, w_o, b_o)

    def named(self, prefix: str):
        for part in ("q", "k", "v", "o"):
            yield f"{prefix}.w_{part}", getattr(self, f"w_{part}")
            yield f"{prefix}.b_{part}", getattr(self, f"b_{part}")


def _split_heads(t: Tensor, heads: int) -> Tensor:
    *lead, n, h = t.data.shape
    t = t.reshape(tuple(lead) + (n, heads, h // heads))
    nd = t.data.ndim
    axes = tuple(range(nd - 3)) + (nd - 2, nd - 3, nd - 1)
    return transpose(t, axes)


def _merge_heads(t: Tensor) -> Tensor:
    nd = t.data.ndim
    axes = tuple(range(nd - 3)) + (nd - 2, nd - 3, nd - 1)
    t = transpose(t, axes)
    *lead, n, heads, dh = t.data.shape
    return t.reshape(tuple(lead) + (n, heads * dh))


def cross_attention(q_in, kv, w: CrossAttentionWeights, heads: int) -> Tensor:
    """Standard multi-head attention of the decoder stream over fixed features.

    ``q_in`` is (..., T, H), ``kv`` is (..., S, H); every query row sees all
    of ``kv``, scores scaled by 1/sqrt(H/heads).
    """
    q_in, kv = astensor(q_in), astensor(kv)
    h = q_in.data.shape[-1]
    if h % heads != 0:
        raise ConfigError(f"heads={heads} must divide hidden={h}")
    scale = 1.0 / np.sqrt(h // heads)
    q = _split_heads(matmul(q_in, w.w_q) + w.b_q, heads)
    k = _split_heads(matmul(kv, w.w_k) + w.b_k, heads)
    v = _split_heads(matmul(kv, w.w_v) + w.b_v, heads)
    attn = softmax(mul(matmul(q, _swap_last2(k)), scale))
    ctx = _merge_heads(matmul(attn, v))
    return matmul(ctx, w.w_o) + w.b_o
