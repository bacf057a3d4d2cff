import numpy as np
import pytest

from swifter.autodiff import Tensor, finite_diff_check, mul, tensor_sum
from swifter.backbone import (
    SwiftBackbone,
    SwiftConfig,
    WindowGrid,
    cyclic_shift,
    patch_embed,
    patch_merge,
    window_partition,
    window_reverse,
    wft_layer,
)
from swifter.errors import ConfigError, ShapeError
from swifter.fourier import fourier_mix
from swifter.nn import Linear


class TestWindowGrid:
    def test_counts(self):
        g = WindowGrid(8, 8, 3, 4, 4)
        assert g.n_windows == 4

    def test_padding_arithmetic(self):
        g = WindowGrid(6, 10, 2, 4, 4)
        assert (g.padded_h, g.padded_w) == (8, 12)
        assert g.n_windows == 6

    def test_invalid_configs(self):
        with pytest.raises(ConfigError):
            WindowGrid(4, 4, 1, 5, 4)
        with pytest.raises(ConfigError):
            WindowGrid(8, 8, 1, 4, 4, shift=(4, 0))


class TestPartition:
    def test_shape(self, rng):
        g = WindowGrid(8, 8, 5, 4, 4)
        out = window_partition(Tensor(rng.normal(size=(8, 8, 5))), g)
        assert out.data.shape == (4, 16, 5)

    def test_reverse_roundtrip(self, rng):
        g = WindowGrid(8, 8, 3, 4, 4)
        a = rng.normal(size=(8, 8, 3))
        back = window_reverse(window_partition(Tensor(a), g), g)
        assert np.array_equal(back.data, a)

    def test_padded_roundtrip(self, rng):
        g = WindowGrid(6, 6, 2, 4, 4)
        a = rng.normal(size=(6, 6, 2))
        back = window_reverse(window_partition(Tensor(a), g), g)
        assert np.array_equal(back.data, a)

    def test_locality(self, rng):
        g = WindowGrid(8, 8, 2, 4, 4)
        a = rng.normal(size=(8, 8, 2))
        w1 = window_partition(Tensor(a), g).data
        a2 = a.copy()
        a2[1, 2, 0] += 9.0  # inside window 0
        w2 = window_partition(Tensor(a2), g).data
        assert np.array_equal(w1[1:], w2[1:])
        assert not np.array_equal(w1[0], w2[0])

    def test_wrong_map_rejected(self, rng):
        g = WindowGrid(8, 8, 2, 4, 4)
        with pytest.raises(ShapeError):
            window_partition(Tensor(rng.normal(size=(4, 8, 2))), g)


class TestCyclicShift:
    def test_zero_shift_identity(self, rng):
        a = rng.normal(size=(5, 7, 2))
        assert np.array_equal(cyclic_shift(Tensor(a), 0, 0).data, a)

    def test_2x2_rotation(self):
        a = np.arange(4.0).reshape(2, 2, 1)
        out = cyclic_shift(Tensor(a), 1, 1).data
        assert np.array_equal(out[..., 0], [[3.0, 2.0], [1.0, 0.0]])

    def test_roll_semantics(self, rng):
        a = rng.normal(size=(6, 5, 3))
        out = cyclic_shift(Tensor(a), 2, 3).data
        for i in range(6):
            for j in range(5):
                assert out[i, j, 0] == a[(i - 2) % 6, (j - 3) % 5, 0]

    def test_shift_unshift_identity(self, rng):
        a = rng.normal(size=(6, 6, 2))
        out = cyclic_shift(cyclic_shift(Tensor(a), 2, 1), -2, -1).data
        assert np.array_equal(out, a)

    def test_full_period_identity(self, rng):
        a = rng.normal(size=(4, 6, 2))
        assert np.array_equal(cyclic_shift(Tensor(a), 4, 6).data, a)


class TestWft:
    def test_single_window_equals_plain_mixing(self, rng):
        g = WindowGrid(4, 4, 6, 4, 4)
        a = rng.normal(size=(4, 4, 6))
        out = wft_layer(Tensor(a), g).data
        ref = fourier_mix(a.reshape(16, 6)).reshape(4, 4, 6)
        assert np.max(np.abs(out - ref)) < 1e-12

    def test_locality_without_shift(self, rng):
        g = WindowGrid(8, 8, 2, 4, 4)
        a = rng.normal(size=(8, 8, 2))
        base = wft_layer(Tensor(a), g).data
        a2 = a.copy()
        a2[0, 0, 0] += 3.0  # window A
        out = wft_layer(Tensor(a2), g).data
        assert np.array_equal(base[4:, 4:], out[4:, 4:])  # window D untouched

    def test_per_window_naive_oracle(self, rng):
        from swifter.fourier import dft_1d_naive

        g = WindowGrid(4, 4, 3, 2, 2)
        a = rng.normal(size=(4, 4, 3))
        out = wft_layer(Tensor(a), g).data
        windows = window_partition(Tensor(a), g).data
        for wi in range(4):
            seq = windows[wi]  # (4 tokens, 3 channels)
            step1 = np.stack([dft_1d_naive(seq[:, c]) for c in range(3)], axis=1)
            ref = np.stack([dft_1d_naive(step1[t, :]) for t in range(4)], axis=0).real
            got = window_partition(Tensor(out), g).data[wi]
            assert np.max(np.abs(got - ref)) < 1e-9

    def test_shifted_then_realigned(self, rng):
        # with a shift the operation is still a bijection on positions:
        # partition/reverse and shift/unshift identities compose
        g = WindowGrid(8, 8, 2, 4, 4, shift=(2, 2))
        a = rng.normal(size=(8, 8, 2))
        out = wft_layer(Tensor(a), g).data
        assert out.shape == a.shape
        manual = cyclic_shift(
            window_reverse(
                Tensor(
                    fourier_mix(
                        window_partition(cyclic_shift(Tensor(a), -2, -2), g).data
                    )
                ),
                g,
            ),
            2,
            2,
        ).data
        assert np.array_equal(out, manual)


class TestPatchOps:
    def test_patch_embed_token_count(self, rng):
        cfg = SwiftConfig(patch_size=4, embed_dim=10, stage_depths=(1,), window=2, image_size=32)
        proj = Linear.init(4 * 4 * 3, 10, rng)
        out = patch_embed(Tensor(rng.normal(size=(3, 32, 32))), proj, cfg)
        assert out.data.shape == (8, 8, 10)

    def test_zero_image_zero_bias(self, rng):
        cfg = SwiftConfig(patch_size=4, embed_dim=6, stage_depths=(1,), window=2, image_size=16)
        proj = Linear.init(48, 6, rng)
        proj.bias.data = np.zeros(6)
        out = patch_embed(Tensor(np.zeros((3, 16, 16))), proj, cfg)
        assert np.array_equal(out.data, np.zeros((4, 4, 6)))

    def test_indivisible_rejected(self, rng):
        cfg = SwiftConfig(patch_size=4, embed_dim=6, stage_depths=(1,), window=2, image_size=16)
        proj = Linear.init(48, 6, rng)
        with pytest.raises(ShapeError):
            patch_embed(Tensor(np.zeros((3, 18, 18))), proj, cfg)

    def test_patch_embed_gradient(self, rng):
        cfg = SwiftConfig(patch_size=4, embed_dim=4, stage_depths=(1,), window=2, image_size=8)
        proj = Linear.init(48, 4, rng)
        img = Tensor(rng.normal(size=(3, 8, 8)))
        c = Tensor(rng.normal(size=(2, 2, 4)))

        def f(w):
            saved = proj.weight
            proj.weight = w
            out = tensor_sum(mul(patch_embed(img, proj, cfg), c))
            proj.weight = saved
            return out

        assert finite_diff_check(f, proj.weight) < 1e-3

    def test_patch_merge_shapes(self, rng):
        proj = Linear.init(4 * 5, 10, rng)
        out = patch_merge(Tensor(rng.normal(size=(64, 5))), proj, 8, 8)
        assert out.data.shape == (16, 10)

    def test_patch_merge_hand_oracle(self, rng):
        # 2x2 grid of C=3 tokens collapses to one 12-wide vector @ proj
        c = 3
        proj = Linear.init(4 * c, 2 * c, rng)
        x = rng.normal(size=(4, c))
        out = patch_merge(Tensor(x), proj, 2, 2).data
        gathered = np.concatenate([x[0], x[1], x[2], x[3]])  # row-major 2x2
        ref = gathered @ proj.weight.data + proj.bias.data
        assert np.allclose(out[0], ref, atol=1e-12)

    def test_odd_grid_rejected(self, rng):
        proj = Linear.init(12, 6, rng)
        with pytest.raises(ShapeError):
            patch_merge(Tensor(rng.normal(size=(9, 3))), proj, 3, 3)


class TestSwiftForward:
    def test_desk_config_shapes(self, rng):
        cfg = SwiftConfig()
        bb = SwiftBackbone(cfg, np.random.default_rng(0))
        out = bb.forward(Tensor(rng.normal(size=(3, 32, 32))))
        assert out.data.shape == (16, 96)
        assert cfg.out_dim == 96 and cfg.out_tokens == 16

    def test_deterministic(self, rng):
        bb = SwiftBackbone(SwiftConfig(), np.random.default_rng(0))
        img = rng.normal(size=(3, 32, 32))
        a = bb.forward(Tensor(img)).data
        b = bb.forward(Tensor(img)).data
        assert np.array_equal(a, b)

    def test_batched_matches_single(self, rng):
        bb = SwiftBackbone(SwiftConfig(), np.random.default_rng(0))
        imgs = rng.normal(size=(2, 3, 32, 32))
        batched = bb.forward(Tensor(imgs)).data
        for i in range(2):
            single = bb.forward(Tensor(imgs[i])).data
            assert np.array_equal(batched[i], single)

    def test_token_halving_channel_doubling(self):
        cfg = SwiftConfig(patch_size=4, embed_dim=12, stage_depths=(1, 1, 1), window=2, image_size=32)
        assert cfg.out_dim == 48  # doubled twice
        assert cfg.out_tokens == 4  # 64 tokens / 4 / 4

    def test_end_to_end_gradient_to_patch_proj(self, rng):
        cfg = SwiftConfig(patch_size=4, embed_dim=4, stage_depths=(1, 1), window=2, image_size=16)
        bb = SwiftBackbone(cfg, np.random.default_rng(5))
        img = Tensor(rng.normal(size=(3, 16, 16)))
        c = Tensor(rng.normal(size=(4, 8)))

        def f(w):
            saved = bb.patch_proj.weight
            bb.patch_proj.weight = w
            out = tensor_sum(mul(bb.forward(img), c))
            bb.patch_proj.weight = saved
            return out

        assert finite_diff_check(f, bb.patch_proj.weight) < 1e-3
