"""Shifted-window Fourier visual backbone.

An image becomes non-overlapping patch tokens, then runs through stages of
[windowed Fourier mixing block + feed-forward block] with 2x2 patch merges
between stages. The mixing layer has no parameters: each (optionally
cyclically shifted) window is flattened to a token sequence and Fourier
mixing is applied inside it. Shifted windows use plain cyclic rolls with
wrap-around mixing accepted; the mixing layer has no masking mechanism to
exclude it.
"""

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, astensor, pad_last, reshape, roll2d, transpose
from .errors import ConfigError, ShapeError
from .fourier import ft_layer
from .nn import FeedForward, Norm, Linear


@dataclass
class WindowGrid:
    """Window geometry over an (H, W, C) map; pads up to divisibility."""

    map_h: int
    map_w: int
    channels: int
    window_h: int
    window_w: int
    shift: tuple[int, int] = (0, 0)

    def __post_init__(self):
        if self.window_h < 1 or self.window_w < 1:
            raise ConfigError("window dims must be >= 1")
        if self.window_h > self.map_h or self.window_w > self.map_w:
            raise ConfigError("window dims must not exceed map dims")
        if not (0 <= self.shift[0] < self.window_h and 0 <= self.shift[1] < self.window_w):
            raise ConfigError("shift must satisfy 0 <= shift < window dims")
        self.pad_h = (-self.map_h) % self.window_h
        self.pad_w = (-self.map_w) % self.window_w

    @property
    def padded_h(self) -> int:
        return self.map_h + self.pad_h

    @property
    def padded_w(self) -> int:
        return self.map_w + self.pad_w

    @property
    def n_windows(self) -> int:
        return (self.padded_h // self.window_h) * (self.padded_w // self.window_w)


def _check_map(a: Tensor, g: WindowGrid) -> None:
    h, w, c = a.data.shape[-3:]
    if (h, w, c) != (g.map_h, g.map_w, g.channels):
        raise ShapeError(
            f"map shape {(h, w, c)} does not match grid {(g.map_h, g.map_w, g.channels)}"
        )


def window_partition(a, g: WindowGrid) -> Tensor:
    """(..., H, W, C) -> (..., N, window_h*window_w, C), each window a token run."""
    a = astensor(a)
    _check_map(a, g)
    if g.pad_h:
        a = pad_last(a, 0, g.pad_h, axis=a.data.ndim - 3)
    if g.pad_w:
        a = pad_last(a, 0, g.pad_w, axis=a.data.ndim - 2)
    lead = a.data.shape[:-3]
    nh, nw = g.padded_h // g.window_h, g.padded_w // g.window_w
    a = reshape(a, lead + (nh, g.window_h, nw, g.window_w, g.channels))
    nd = a.data.ndim
    order = tuple(range(nd - 5)) + (nd - 5, nd - 3, nd - 4, nd - 2, nd - 1)
    a = transpose(a, order)
    return reshape(a, lead + (nh * nw, g.window_h * g.window_w, g.channels))


def window_reverse(a, g: WindowGrid) -> Tensor:
    """Inverse of window_partition (padding cropped back off)."""
    a = astensor(a)
    n, tok, c = a.data.shape[-3:]
    if n != g.n_windows or tok != g.window_h * g.window_w or c != g.channels:
        raise ShapeError("windowed shape does not match grid")
    lead = a.data.shape[:-3]
    nh, nw = g.padded_h // g.window_h, g.padded_w // g.window_w
    a = reshape(a, lead + (nh, nw, g.window_h, g.window_w, c))
    nd = a.data.ndim
    order = tuple(range(nd - 5)) + (nd - 5, nd - 3, nd - 4, nd - 2, nd - 1)
    a = transpose(a, order)
    a = reshape(a, lead + (g.padded_h, g.padded_w, c))
    if g.pad_h or g.pad_w:
        idx = (Ellipsis, slice(0, g.map_h), slice(0, g.map_w), slice(None))
        data = a.data[idx]

        def crop_backward(grad, needs):
            full = np.zeros(a.data.shape)
            full[idx] = grad
            return (full,)

        from .autodiff import apply_op

        a = apply_op("crop", np.ascontiguousarray(data), (a,), crop_backward)
    return a


def cyclic_shift(a, dy: int, dx: int) -> Tensor:
    """Roll the spatial axes of (..., H, W, C): out[i,j] = a[(i-dy) mod H, (j-dx) mod W]."""
    a = astensor(a)
    nd = a.data.ndim
    return roll2d(a, dy, dx, axes=(nd - 3, nd - 2))


def wft_layer(a, g: WindowGrid) -> Tensor:
    """Fourier mixing applied independently inside each (shifted) window."""
    a = astensor(a)
    _check_map(a, g)
    dy, dx = g.shift
    shifted = dy or dx
    if shifted:
        a = cyclic_shift(a, -dy, -dx)
    out = window_reverse(ft_layer(window_partition(a, g)), g)
    if shifted:
        out = cyclic_shift(out, dy, dx)
    return out


@dataclass
class SwiftConfig:
    """Backbone hyperparameters; defaults are the desk-scale configuration."""

    patch_size: int = 4
    embed_dim: int = 48
    stage_depths: tuple[int, ...] = (2, 2)
    window: int = 4
    shift_every_other: bool = True
    in_channels: int = 3
    image_size: int = 32
    ff_expansion: int = 4

    def __post_init__(self):
        self.stage_depths = tuple(self.stage_depths)
        if self.image_size % self.patch_size != 0:
            raise ConfigError("image size must be divisible by patch size")
        side = self.image_size // self.patch_size
        for _ in self.stage_depths[1:]:
            if side % 2 != 0:
                raise ConfigError("stage map sides must stay even for patch merging")
            side //= 2

    @property
    def out_dim(self) -> int:
        """d_m: channels double at every merge."""
        return self.embed_dim * (2 ** (len(self.stage_depths) - 1))

    @property
    def out_tokens(self) -> int:
        side = self.image_size // self.patch_size
        side >>= len(self.stage_depths) - 1
        return side * side


@dataclass
class _MixBlock:
    norm_mix: Norm
    norm_ff: Norm
    ff: FeedForward
    shift: tuple[int, int]

    def named(self, prefix: str):
        yield from self.norm_mix.named(f"{prefix}.norm_mix")
        yield from self.norm_ff.named(f"{prefix}.norm_ff")
        yield from self.ff.named(f"{prefix}.ff")


class SwiftBackbone:
    """Patch embed -> stages of mixing blocks -> flattened feature tokens."""

    def __init__(self, cfg: SwiftConfig, rng: np.random.Generator):
        self.cfg = cfg
        p = cfg.patch_size
        self.patch_proj = Linear.init(p * p * cfg.in_channels, cfg.embed_dim, rng)
        self.stages: list[list[_MixBlock]] = []
        self.merges: list[Linear] = []
        dim = cfg.embed_dim
        for si, depth in enumerate(cfg.stage_depths):
            blocks = []
            for bi in range(depth):
                use_shift = cfg.shift_every_other and bi % 2 == 1
                s = cfg.window // 2 if use_shift else 0
                blocks.append(
                    _MixBlock(
                        norm_mix=Norm.init(dim),
                        norm_ff=Norm.init(dim),
                        ff=FeedForward.init(dim, cfg.ff_expansion * dim, rng),
                        shift=(s, s),
                    )
                )
            self.stages.append(blocks)
            if si + 1 < len(cfg.stage_depths):
                self.merges.append(Linear.init(4 * dim, 2 * dim, rng))
                dim *= 2
        self.final_norm = Norm.init(dim)

    def named_params(self):
        yield from self.patch_proj.named("backbone.patch_proj")
        for si, blocks in enumerate(self.stages):
            for bi, blk in enumerate(blocks):
                yield from blk.named(f"backbone.stage{si}.block{bi}")
        for mi, merge in enumerate(self.merges):
            yield from merge.named(f"backbone.merge{mi}")
        yield from self.final_norm.named("backbone.final_norm")

    def forward(self, img) -> Tensor:
        """(C, H, W) or (B, C, H, W) image -> (..., tokens, d_m) features."""
        cfg = self.cfg
        x = patch_embed(img, self.patch_proj, cfg)  # (..., side, side, embed)
        side = cfg.image_size // cfg.patch_size
        dim = cfg.embed_dim
        for si, blocks in enumerate(self.stages):
            for blk in blocks:
                g = WindowGrid(side, side, dim, cfg.window, cfg.window, blk.shift)
                x = x + wft_layer(blk.norm_mix(x), g)
                x = x + blk.ff(blk.norm_ff(x))
            if si < len(self.merges):
                lead = x.data.shape[:-3]
                x = reshape(x, lead + (side * side, dim))
                x = patch_merge(x, self.merges[si], side, side)
                side //= 2
                dim *= 2
                x = reshape(x, lead + (side, side, dim))
        lead = x.data.shape[:-3]
        x = reshape(x, lead + (side * side, dim))
        return self.final_norm(x)


def patch_embed(img, proj: Linear, cfg: SwiftConfig) -> Tensor:
    """Non-overlapping p x p patches linearly projected; output keeps the spatial grid."""
    img = astensor(img)
    c, h, w = img.data.shape[-3:]
    p = cfg.patch_size
    if h % p or w % p:
        raise ShapeError(f"image dims {(h, w)} not divisible by patch size {p}")
    if c != cfg.in_channels:
        raise ShapeError(f"expected {cfg.in_channels} channels, got {c}")
    lead = img.data.shape[:-3]
    x = reshape(img, lead + (c, h // p, p, w // p, p))
    nd = x.data.ndim
    order = tuple(range(nd - 5)) + (nd - 4, nd - 2, nd - 3, nd - 1, nd - 5)
    x = transpose(x, order)  # (..., h/p, w/p, p, p, c)
    x = reshape(x, lead + (h // p, w // p, p * p * c))
    return proj(x)


def patch_merge(x, proj: Linear, h: int, w: int) -> Tensor:
    """Concatenate each 2x2 token neighborhood (4C) and project to 2C.

    ``x`` is (..., h*w, C) laid out row-major over an h x w grid.
    """
    x = astensor(x)
    tokens, c = x.data.shape[-2:]
    if tokens != h * w:
        raise ShapeError(f"token count {tokens} does not match grid {h}x{w}")
    if h % 2 or w % 2:
        raise ShapeError("patch merge needs even grid sides")
    lead = x.data.shape[:-2]
    x = reshape(x, lead + (h // 2, 2, w // 2, 2, c))
    nd = x.data.ndim
    order = tuple(range(nd - 5)) + (nd - 5, nd - 3, nd - 4, nd - 2, nd - 1)
    x = transpose(x, order)
    x = reshape(x, lead + ((h // 2) * (w // 2), 4 * c))
    return proj(x)


def swift_forward(backbone: SwiftBackbone, img) -> Tensor:
    """Functional alias for SwiftBackbone.forward."""
    return backbone.forward(img)
