"""Autoregressive decoding: greedy, sampled, and beam search.

All three run on the stepwise recurrent path, so per-step work does not
grow with the prefix. ``stateless_greedy`` is the re-encoding oracle: it
re-runs the teacher-forced forward on the whole growing prefix each step
and must produce exactly the same tokens as ``greedy_decode``.
"""

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor
from .errors import ConfigError
from .model import FusionModel
from .vocab import BOS, EOS


@dataclass
class DecodeResult:
    """Generated ids (EOS kept if emitted) with per-step log-probs."""

    ids: list[int]
    logprobs: list[float]
    score: float

    @property
    def words(self) -> list[int]:
        """ids with the trailing EOS stripped."""
        return self.ids[:-1] if self.ids and self.ids[-1] == EOS else list(self.ids)


def _log_softmax_row(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max()
    return z - np.log(np.exp(z).sum())


def greedy_decode(fusion: FusionModel, features, max_len: int) -> DecodeResult:
    """Argmax decoding on recurrent state; ties break toward the lowest id."""
    enc = fusion.encode(Tensor(np.asarray(features)))
    state = fusion.init_decode_state(enc)
    ids: list[int] = []
    lps: list[float] = []
    tok = BOS
    for _ in range(max_len):
        logits = fusion.decode_step(state, tok)
        lp = _log_softmax_row(logits)
        nxt = int(np.argmax(logits))  # first occurrence wins: lowest id on ties
        ids.append(nxt)
        lps.append(float(lp[nxt]))
        if nxt == EOS:
            break
        tok = nxt
    return DecodeResult(ids=ids, logprobs=lps, score=float(sum(lps)))


def stateless_greedy(fusion: FusionModel, features, max_len: int) -> DecodeResult:
    """Oracle decoding: re-run the parallel forward on the growing prefix."""
    feats = Tensor(np.asarray(features))
    prefix = [BOS]
    ids: list[int] = []
    lps: list[float] = []
    for _ in range(max_len):
        logits = fusion.forward(feats, np.asarray(prefix, dtype=np.int64)).data[-1]
        lp = _log_softmax_row(logits)
        nxt = int(np.argmax(logits))
        ids.append(nxt)
        lps.append(float(lp[nxt]))
        if nxt == EOS:
            break
        prefix.append(nxt)
    return DecodeResult(ids=ids, logprobs=lps, score=float(sum(lps)))


def sample_decode(
    fusion: FusionModel, features, max_len: int, rng: np.random.Generator
) -> DecodeResult:
    """Multinomial sampling from the per-step softmax (used by SCST)."""
    enc = fusion.encode(Tensor(np.asarray(features)))
    state = fusion.init_decode_state(enc)
    ids: list[int] = []
    lps: list[float] = []
    tok = BOS
    for _ in range(max_len):
        logits = fusion.decode_step(state, tok)
        lp = _log_softmax_row(logits)
        nxt = int(rng.choice(logits.size, p=np.exp(lp)))
        ids.append(nxt)
        lps.append(float(lp[nxt]))
        if nxt == EOS:
            break
        tok = nxt
    return DecodeResult(ids=ids, logprobs=lps, score=float(sum(lps)))


@dataclass
class _Beam:
    pending: int  # token to feed at the next step
    state: object
    ids: list = field(default_factory=list)
    logprob: float = 0.0


def beam_search(
    fusion: FusionModel,
    features,
    beam_size: int,
    max_len: int,
    length_penalty: float = 0.0,
) -> list[DecodeResult]:
    """Top-k decoding; hypotheses score logprob / len^alpha.

    Finished hypotheses (EOS, or cut at max_len) retire to a completed
    pool; each live beam owns a cloned copy of the retention states. The
    returned list is sorted by score, best first, at most ``beam_size``
    entries.
    """
    if beam_size < 1:
        raise ConfigError("beam size must be >= 1")
    if beam_size > fusion.cfg.vocab_size * max_len:
        raise ConfigError("beam size exceeds the number of reachable hypotheses")
    enc = fusion.encode(Tensor(np.asarray(features)))
    root = fusion.init_decode_state(enc)
    live = [_Beam(pending=BOS, state=root)]
    done: list[DecodeResult] = []

    def retire(ids, logprob):
        denom = max(1, len(ids)) ** length_penalty
        done.append(DecodeResult(ids=list(ids), logprobs=[], score=logprob / denom))

    for _ in range(max_len):
        if not live:
            break
        candidates = []  # (neg total logprob, beam idx, token, per-token lp)
        stepped = []
        for bi, beam in enumerate(live):
            logits = fusion.decode_step(beam.state, beam.pending)
            lp = _log_softmax_row(logits)
            stepped.append(beam)
            for tok in range(lp.size):
                candidates.append((-(beam.logprob + lp[tok]), bi, tok, lp[tok]))
        candidates.sort()  # deterministic: ties fall to lower beam idx, then lower token
        next_live = []
        for neg, bi, tok, lp_tok in candidates[: beam_size]:
            parent = stepped[bi]
            ids = parent.ids + [tok]
            total = parent.logprob + lp_tok
            if tok == EOS:
                retire(ids, total)
            else:
                next_live.append(
                    _Beam(pending=tok, state=parent.state.clone(), ids=ids, logprob=total)
                )
        live = next_live
    for beam in live:  # length cutoff: retire whatever is still running
        retire(beam.ids, beam.logprob)
    done.sort(key=lambda r: -r.score)
    return done[:beam_size]
