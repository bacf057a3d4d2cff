"""Desk-scale training: cross-entropy, self-critical reward optimization.

The SCST step samples n captions per image on the no-tape recurrent path,
scores them with CIDEr-D, and then recomputes their log-probs with one
taped teacher-forced forward, so the gradient flows only through the
log-probs. The baseline is the per-image mean of the n sample rewards;
when every sample earns the same reward the advantage is exactly zero and
so is the gradient.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tape, Tensor, log_softmax, mul, take_along_last, tensor_sum
from .checkpoint import save_checkpoint
from .cider import CiderIndex, cider_d
from .decoding import DecodeResult
from .errors import ConfigError, ContractError
from .losses import xe_loss
from .model import SwifterModel
from .vocab import BOS, EOS, PAD, Vocabulary, pad_batch


@dataclass
class TrainingConfig:
    steps: int
    lr: float = 3e-4
    batch: int = 16
    seed: int = 42
    mode: str = "xe"  # xe | scst
    scst_samples: int = 5
    optimizer: str = "sgd"  # sgd | adam
    max_len: int = 16
    eval_every: int = 0  # 0 disables accuracy early-stopping
    early_stop_acc: float | None = None

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.mode not in ("xe", "scst"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.scst_samples < 1:
            raise ConfigError("scst_samples must be >= 1")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")


class SGD:
    def __init__(self, params: list[Tensor], lr: float):
        self.params = params
        self.lr = lr

    def step(self, grads: dict) -> None:
        for p in self.params:
            g = grads.get(p)
            if g is not None:
                p.data = p.data - self.lr * g


class Adam:
    def __init__(self, params: list[Tensor], lr: float, beta1=0.9, beta2=0.98, eps=1e-9):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {id(p): np.zeros_like(p.data) for p in params}
        self.v = {id(p): np.zeros_like(p.data) for p in params}
        self.t = 0

    def step(self, grads: dict) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        corr1 = 1.0 - b1**self.t
        corr2 = 1.0 - b2**self.t
        for p in self.params:
            g = grads.get(p)
            if g is None:
                continue
            m = self.m[id(p)] = b1 * self.m[id(p)] + (1 - b1) * g
            v = self.v[id(p)] = b2 * self.v[id(p)] + (1 - b2) * (g * g)
            p.data = p.data - self.lr * (m / corr1) / (np.sqrt(v / corr2) + self.eps)


def make_optimizer(cfg: TrainingConfig, params: list[Tensor]):
    return Adam(params, cfg.lr) if cfg.optimizer == "adam" else SGD(params, cfg.lr)


def caption_to_ids(caption: str, vocab: Vocabulary) -> list[int]:
    return vocab.encode(caption, add_bos=True, add_eos=True)


def xe_batch(samples, vocab: Vocabulary, max_len: int):
    """Images plus shifted input/target id matrices for teacher forcing."""
    images = np.stack([s.image for s in samples])
    seqs = [caption_to_ids(s.caption, vocab)[: max_len + 1] for s in samples]
    inputs = pad_batch([s[:-1] for s in seqs])
    targets = pad_batch([s[1:] for s in seqs], length=inputs.shape[1])
    return images, inputs, targets


def xe_step(model: SwifterModel, images, inputs, targets, optimizer) -> float:
    with Tape() as tape:
        logits = model.forward(Tensor(images), inputs)
        loss = xe_loss(logits, targets)
    value = loss.item()
    if not np.isfinite(value):
        raise ContractError(f"non-finite training loss: {value}")
    grads = tape.backward(loss)
    optimizer.step(grads)
    return value


def token_accuracy(model: SwifterModel, samples, vocab: Vocabulary, max_len: int) -> float:
    """Teacher-forced argmax accuracy over non-PAD target positions."""
    images, inputs, targets = xe_batch(samples, vocab, max_len)
    logits = model.forward(Tensor(images), inputs).data
    pred = logits.argmax(axis=-1)
    mask = targets != PAD
    return float((pred[mask] == targets[mask]).mean())


@dataclass
class ScstResult:
    loss: float
    mean_reward: float
    grads: dict
    rewards: list = field(default_factory=list)
    sample_ids: list = field(default_factory=list)


def build_reward_index(samples, vocab: Vocabulary) -> CiderIndex:
    return CiderIndex([[vocab.encode(s.caption)] for s in samples])


def scst_step(
    model: SwifterModel,
    batch_samples,
    vocab: Vocabulary,
    cfg: TrainingConfig,
    rng: np.random.Generator,
    index: CiderIndex,
    optimizer=None,
) -> ScstResult:
    """One REINFORCE step with the mean-of-samples baseline.

    Returns the loss value, the mean sampled reward, and the gradient map;
    applies ``optimizer`` when given.
    """
    n = cfg.scst_samples
    fusion = model.fusion
    with Tape() as tape:
        all_ids, rewards, enc_list = [], [], []
        for s in batch_samples:
            feats = model.features(Tensor(s.image)) if model.backbone else Tensor(s.image)
            enc = fusion.encode(feats)
            enc_list.append(enc)
            ref = vocab.encode(s.caption)
            # sampling runs on the no-tape path over the already-computed values
            for _ in range(n):
                res = _sample_from_enc(fusion, enc.data, cfg.max_len, rng)
                all_ids.append(res.ids)
                rewards.append(cider_d(res.words, [ref], index))
        rewards_arr = np.asarray(rewards, dtype=np.float64).reshape(len(batch_samples), n)
        baseline = rewards_arr.mean(axis=1, keepdims=True)
        advantage = rewards_arr - baseline  # zero when all sample rewards tie

        loss = None
        width = max(len(ids) for ids in all_ids)
        for bi, enc in enumerate(enc_list):
            ids_group = all_ids[bi * n : (bi + 1) * n]
            inputs = pad_batch([[BOS] + ids[:-1] for ids in ids_group], length=width)
            targets = pad_batch(ids_group, length=width)
            lp = take_along_last(log_softmax(fusion.decode_parallel(enc, inputs)), targets)
            # mask by true sample length, not by token value: a sampled id may
            # coincide with PAD and must still contribute its log-prob
            mask = np.zeros((n, width))
            for i, ids in enumerate(ids_group):
                mask[i, : len(ids)] = 1.0
            seq_lp = tensor_sum(mul(lp, mask), axis=1)  # (n,)
            weights = -advantage[bi] / (n * len(batch_samples))
            term = tensor_sum(mul(seq_lp, weights))
            loss = term if loss is None else loss + term
    value = loss.item()
    grads = tape.backward(loss)
    if optimizer is not None:
        optimizer.step(grads)
    return ScstResult(
        loss=value,
        mean_reward=float(rewards_arr.mean()),
        grads=grads,
        rewards=rewards,
        sample_ids=all_ids,
    )


def _sample_from_enc(fusion, enc_data, max_len, rng):
    state = fusion.init_decode_state(Tensor(enc_data))
    ids, lps = [], []
    tok = BOS
    for _ in range(max_len):
        logits = fusion.decode_step(state, tok)
        z = logits - logits.max()
        p = np.exp(z)
        p /= p.sum()
        nxt = int(rng.choice(logits.size, p=p))
        ids.append(nxt)
        if nxt == EOS:
            break
        tok = nxt
    return DecodeResult(ids=ids, logprobs=lps, score=0.0)


def train_loop(
    model: SwifterModel,
    samples,
    vocab: Vocabulary,
    cfg: TrainingConfig,
    log_path=None,
    ckpt_path=None,
):
    """Seeded training; returns the per-step metrics list.

    Logs ``step,loss,reward`` rows (reward blank in XE mode), optionally
    writes the metrics CSV and a final checkpoint carrying the vocabulary.
    """
    rng = np.random.default_rng(cfg.seed)
    params = [t for _, t in model.named_params()]
    optimizer = make_optimizer(cfg, params)
    index = build_reward_index(samples, vocab) if cfg.mode == "scst" else None
    metrics = []
    for step in range(cfg.steps):
        idx = rng.integers(0, len(samples), size=cfg.batch)
        batch = [samples[int(i)] for i in idx]
        if cfg.mode == "xe":
            images, inputs, targets = xe_batch(batch, vocab, cfg.max_len)
            loss = xe_step(model, images, inputs, targets, optimizer)
            metrics.append({"step": step, "loss": loss, "reward": None})
        else:
            res = scst_step(model, batch, vocab, cfg, rng, index, optimizer)
            if not np.isfinite(res.loss):
                raise ContractError(f"non-finite training loss: {res.loss}")
            metrics.append({"step": step, "loss": res.loss, "reward": res.mean_reward})
        if (
            cfg.eval_every
            and cfg.early_stop_acc is not None
            and (step + 1) % cfg.eval_every == 0
        ):
            acc = token_accuracy(model, samples, vocab, cfg.max_len)
            if acc >= cfg.early_stop_acc:
                break
    if log_path is not None:
        write_metrics_csv(log_path, metrics)
    if ckpt_path is not None:
        extra = {"vocab": vocab.id_to_token[4:], "min_freq": vocab.min_freq}
        save_checkpoint(ckpt_path, model, extra=extra)
    return metrics


def write_metrics_csv(path, metrics) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["step", "loss", "reward"])
        for row in metrics:
            reward = "" if row["reward"] is None else f"{row['reward']:.17g}"
            writer.writerow([row["step"], f"{row['loss']:.17g}", reward])
