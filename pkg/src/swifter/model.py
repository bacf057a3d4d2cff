"""Encoder/decoder fusion model and the full captioner.

The encoder stack is Fourier mixing + feed-forward; the decoder stack is
retention + cross-attention over the visual features + feed-forward, all
with pre-norm residuals. Decoder layer outputs are summed through learned
per-layer projections, normalized, and fed to the classifier.

Two decode paths produce identical logits (within float64 tolerance):

* ``decode_parallel`` - teacher-forced, whole sequence at once, taped.
* ``init_decode_state`` / ``decode_step`` - one token per call, carrying an
  H x H retention state per layer plus cached cross-attention K/V, so each
  step does the same amount of work no matter how long the caption got.
"""

from dataclasses import dataclass

import numpy as np

from . import flops
from .autodiff import Tensor, astensor, gather_rows, matmul, softmax, transpose
from .backbone import SwiftBackbone, SwiftConfig
from .errors import ConfigError, ContractError, DomainError
from .fourier import ft_layer
from .nn import FeedForward, Linear, Norm
from .retention import (
    CrossAttentionWeights,
    RetentionState,
    RetentionWeights,
    RotaryPhase,
    cross_attention,
    retention_parallel,
    retention_recurrent_step,
)


@dataclass
class FusionConfig:
    vocab_size: int
    n_layers: int = 3
    hidden: int = 96
    ff_size: int = 384
    heads: int = 4
    max_len: int = 20
    gamma: float = 0.9
    d_m: int = 96
    tie_embeddings: bool = False
    theta_base: float = 10000.0

    def __post_init__(self):
        if self.hidden % 2 != 0:
            raise ConfigError("hidden size must be even (channel pairs rotate)")
        if self.hidden % self.heads != 0:
            raise ConfigError("heads must divide hidden size")
        if self.vocab_size < 4:
            raise ConfigError("vocab must hold at least the 4 special tokens")
        if not (0.0 < self.gamma <= 1.0):
            raise ConfigError("gamma must be in (0, 1]")

    def to_dict(self) -> dict:
        return {
            "vocab_size": self.vocab_size,
            "n_layers": self.n_layers,
            "hidden": self.hidden,
            "ff_size": self.ff_size,
            "heads": self.heads,
            "max_len": self.max_len,
            "gamma": self.gamma,
            "d_m": self.d_m,
            "tie_embeddings": self.tie_embeddings,
            "theta_base": self.theta_base,
        }


@dataclass
class EncoderLayer:
    norm_ft: Norm
    norm_ff: Norm
    ff: FeedForward

    @classmethod
    def init(cls, cfg: FusionConfig, rng):
        return cls(
            norm_ft=Norm.init(cfg.hidden),
            norm_ff=Norm.init(cfg.hidden),
            ff=FeedForward.init(cfg.hidden, cfg.ff_size, rng),
        )

    def forward(self, x) -> Tensor:
        x = x + ft_layer(self.norm_ft(x))
        return x + self.ff(self.norm_ff(x))

    def named(self, prefix):
        yield from self.norm_ft.named(f"{prefix}.norm_ft")
        yield from self.norm_ff.named(f"{prefix}.norm_ff")
        yield from self.ff.named(f"{prefix}.ff")


@dataclass
class DecoderLayer:
    norm_ret: Norm
    ret: RetentionWeights
    norm_ca: Norm
    ca: CrossAttentionWeights
    norm_ff: Norm
    ff: FeedForward

    @classmethod
    def init(cls, cfg: FusionConfig, rng):
        return cls(
            norm_ret=Norm.init(cfg.hidden),
            ret=RetentionWeights.init(cfg.hidden, rng),
            norm_ca=Norm.init(cfg.hidden),
            ca=CrossAttentionWeights.init(cfg.hidden, rng),
            norm_ff=Norm.init(cfg.hidden),
            ff=FeedForward.init(cfg.hidden, cfg.ff_size, rng),
        )

    def forward_parallel(self, y, enc_out, phase, cfg: FusionConfig) -> Tensor:
        d = y + retention_parallel(self.norm_ret(y), self.ret, phase, cfg.gamma)
        w = d + cross_attention(self.norm_ca(d), enc_out, self.ca, cfg.heads)
        return w + self.ff(self.norm_ff(w))

    def named(self, prefix):
        yield from self.norm_ret.named(f"{prefix}.norm_ret")
        yield from self.ret.named(f"{prefix}.ret")
        yield from self.norm_ca.named(f"{prefix}.norm_ca")
        yield from self.ca.named(f"{prefix}.ca")
        yield from self.norm_ff.named(f"{prefix}.norm_ff")
        yield from self.ff.named(f"{prefix}.ff")


class DecodeState:
    """Everything one decode stream carries between steps.

    The per-layer retention matrices are the only part that is truly
    per-stream state; the cross-attention K/V caches are read-only
    projections of the encoder output and are shared across clones.
    """

    __slots__ = ("ret", "ca_k", "ca_v")

    def __init__(self, ret, ca_k, ca_v):
        self.ret = ret
        self.ca_k = ca_k
        self.ca_v = ca_v

    @property
    def step(self) -> int:
        return self.ret[0].step

    @property
    def state_nbytes(self) -> int:
        """Bytes of per-stream decode state (the retention matrices)."""
        return sum(s.nbytes for s in self.ret)

    def clone(self) -> "DecodeState":
        return DecodeState([s.clone() for s in self.ret], self.ca_k, self.ca_v)


class FusionModel:
    def __init__(self, cfg: FusionConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.phase = RotaryPhase(cfg.hidden, cfg.theta_base)
        self.w_i = Linear.init(cfg.d_m, cfg.hidden, rng)
        self.embed = Tensor(
            rng.normal(0.0, 0.02, (cfg.vocab_size, cfg.hidden)), requires_grad=True
        )
        self.enc_layers = [EncoderLayer.init(cfg, rng) for _ in range(cfg.n_layers)]
        self.dec_layers = [DecoderLayer.init(cfg, rng) for _ in range(cfg.n_layers)]
        self.agg = [Linear.init(cfg.hidden, cfg.hidden, rng) for _ in range(cfg.n_layers)]
        # a zero-layer model is just embeddings + input/output maps
        self.agg_norm = Norm.init(cfg.hidden) if cfg.n_layers > 0 else None
        if cfg.tie_embeddings:
            self.cls_weight = None
        else:
            self.cls_weight = Tensor(
                rng.normal(0.0, 0.02, (cfg.hidden, cfg.vocab_size)), requires_grad=True
            )
        self.cls_bias = Tensor(np.zeros(cfg.vocab_size), requires_grad=True)

    def named_params(self):
        yield from self.w_i.named("fusion.w_i")
        yield "fusion.embed", self.embed
        for i, layer in enumerate(self.enc_layers):
            yield from layer.named(f"fusion.enc{i}")
        for i, layer in enumerate(self.dec_layers):
            yield from layer.named(f"fusion.dec{i}")
        for i, p in enumerate(self.agg):
            yield from p.named(f"fusion.agg{i}")
        if self.agg_norm is not None:
            yield from self.agg_norm.named("fusion.agg_norm")
        if self.cls_weight is not None:
            yield "fusion.cls_weight", self.cls_weight
        yield "fusion.cls_bias", self.cls_bias

    # ------------------------------------------------------------------
    # parallel (teacher-forced) path
    # ------------------------------------------------------------------

    def encode(self, features) -> Tensor:
        """(..., S, d_m) visual features -> (..., S, H) encoder output."""
        x = self.w_i(astensor(features))
        for layer in self.enc_layers:
            x = layer.forward(x)
        return x

    def classify(self, agg) -> Tensor:
        if self.cls_weight is not None:
            return matmul(agg, self.cls_weight) + self.cls_bias
        return matmul(agg, transpose(self.embed, (1, 0))) + self.cls_bias

    def aggregate(self, layer_outputs, normalize: bool = True) -> Tensor:
        if not layer_outputs:
            raise ContractError("aggregation needs at least one layer output")
        total = None
        for proj, y in zip(self.agg, layer_outputs):
            term = proj(y)
            total = term if total is None else total + term
        return self.agg_norm(total) if normalize else total

    def decode_parallel(self, enc_out, tokens) -> Tensor:
        """Teacher-forced logits for every position of ``tokens`` (..., T)."""
        tokens = np.asarray(tokens)
        if tokens.min() < 0 or tokens.max() >= self.cfg.vocab_size:
            raise DomainError("token id out of vocabulary range")
        y = gather_rows(self.embed, tokens)
        outputs = []
        for layer in self.dec_layers:
            y = layer.forward_parallel(y, enc_out, self.phase, self.cfg)
            outputs.append(y)
        return self.classify(self.aggregate(outputs))

    def forward(self, features, tokens) -> Tensor:
        """fusion(features, BOS-prefixed tokens) -> next-token logits (..., T, V)."""
        return self.decode_parallel(self.encode(features), tokens)

    # ------------------------------------------------------------------
    # recurrent (stepwise) path: no tape, same numbers
    # ------------------------------------------------------------------

    def init_decode_state(self, enc_out) -> DecodeState:
        """Build per-stream state from (S, H) encoder output (run encode first)."""
        enc = astensor(enc_out)
        if enc.data.ndim != 2:
            raise ContractError("decode streams are per-image: enc_out must be (S, H)")
        cfg = self.cfg
        dh = cfg.hidden // cfg.heads
        ca_k, ca_v = [], []
        for layer in self.dec_layers:
            k = (matmul(enc, layer.ca.w_k) + layer.ca.b_k).data
            v = (matmul(enc, layer.ca.w_v) + layer.ca.b_v).data
            s = enc.data.shape[0]
            ca_k.append(np.ascontiguousarray(k.reshape(s, cfg.heads, dh).transpose(1, 0, 2)))
            ca_v.append(np.ascontiguousarray(v.reshape(s, cfg.heads, dh).transpose(1, 0, 2)))
        ret = [RetentionState(cfg.hidden) for _ in self.dec_layers]
        return DecodeState(ret, ca_k, ca_v)

    def decode_step(self, state: DecodeState, token: int) -> np.ndarray:
        """Consume one token id, return the next-token logit row (V,)."""
        cfg = self.cfg
        if not (0 <= token < cfg.vocab_size):
            raise DomainError(f"token id {token} out of range")
        heads, dh = cfg.heads, cfg.hidden // cfg.heads
        scale = 1.0 / np.sqrt(dh)
        x = self.embed.data[token]
        outputs = []
        for li, layer in enumerate(self.dec_layers):
            normed = layer.norm_ret(Tensor(x[None, :])).data[0]
            r, _ = retention_recurrent_step(
                normed, state.ret[li], layer.ret, self.phase, cfg.gamma
            )
            d = x + r
            q = (matmul(layer.norm_ca(Tensor(d[None, :])), layer.ca.w_q) + layer.ca.b_q).data
            q = q.reshape(heads, 1, dh)
            scores = softmax(matmul(Tensor(q), Tensor(state.ca_k[li].transpose(0, 2, 1))) * scale)
            ctx = matmul(scores, Tensor(state.ca_v[li])).data.reshape(cfg.hidden)
            w = d + (matmul(Tensor(ctx[None, :]), layer.ca.w_o) + layer.ca.b_o).data[0]
            x = w + layer.ff(layer.norm_ff(Tensor(w[None, :]))).data[0]
            outputs.append(x)
        meter = flops.current_meter()
        if meter is not None:
            # residual adds done in raw numpy above, one H-vector per join
            meter.elementwise(0, cfg.hidden * (3 * len(self.dec_layers) + len(outputs) - 1))
        agg = None
        for proj, y in zip(self.agg, outputs):
            term = proj(Tensor(y[None, :])).data[0]
            agg = term if agg is None else agg + term
        agg = self.agg_norm(Tensor(agg[None, :]))
        return self.classify(agg).data[0]


def count_params(model) -> int:
    """Exact number of learnable scalars; ``itemize_params`` has the breakdown."""
    return sum(t.data.size for _, t in model.named_params())


def itemize_params(model) -> dict[str, int]:
    """Scalar counts grouped by the first two name components."""
    groups: dict[str, int] = {}
    for name, t in model.named_params():
        key = ".".join(name.split(".")[:2])
        groups[key] = groups.get(key, 0) + t.data.size
    return groups


class SwifterModel:
    """Backbone + fusion captioner. The backbone is optional for fusion-only use."""

    def __init__(self, fusion: FusionModel, backbone: SwiftBackbone | None = None):
        self.fusion = fusion
        self.backbone = backbone
        if backbone is not None and backbone.cfg.out_dim != fusion.cfg.d_m:
            raise ConfigError(
                f"backbone out dim {backbone.cfg.out_dim} != fusion d_m {fusion.cfg.d_m}"
            )

    @classmethod
    def init(
        cls,
        fusion_cfg: FusionConfig,
        swift_cfg: SwiftConfig | None = None,
        seed: int = 0,
    ) -> "SwifterModel":
        rng = np.random.default_rng(seed)
        backbone = SwiftBackbone(swift_cfg, rng) if swift_cfg is not None else None
        return cls(FusionModel(fusion_cfg, rng), backbone)

    def named_params(self):
        if self.backbone is not None:
            yield from self.backbone.named_params()
        yield from self.fusion.named_params()

    def features(self, img) -> Tensor:
        if self.backbone is None:
            raise ContractError("this model has no visual backbone")
        return self.backbone.forward(img)

    def forward(self, img, tokens) -> Tensor:
        return self.fusion.forward(self.features(img), tokens)


def estimate_flops(model, seq_len: int, convention: str = "fusion", n_visual: int = 49) -> int:
    """Metered flop count of one teacher-forced forward pass.

    ``model`` may be a FusionModel (synthetic features of ``n_visual``
    tokens are fed in) or a SwiftBackbone (``seq_len`` is ignored, the
    configured image size is used). The convention picks the counting
    rule; see :mod:`swifter.flops`.
    """
    if seq_len < 1:
        raise DomainError("seq_len must be >= 1")
    meter = flops.FlopMeter(convention)
    if isinstance(model, SwiftBackbone):
        img = np.zeros((model.cfg.in_channels, model.cfg.image_size, model.cfg.image_size))
        with flops.metered(meter):
            model.forward(Tensor(img))
    else:
        feats = np.zeros((n_visual, model.cfg.d_m))
        tokens = np.zeros(seq_len, dtype=np.int64)
        with flops.metered(meter):
            model.forward(Tensor(feats), tokens)
    return int(round(meter.total))
