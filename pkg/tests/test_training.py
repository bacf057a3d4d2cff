import numpy as np
import pytest

from swifter.autodiff import Tape, Tensor, log_softmax, take_along_last, tensor_sum
from swifter.backbone import SwiftConfig
from swifter.checkpoint import load_checkpoint
from swifter.cider import CiderIndex, cider_d
from swifter.data import ShapeWorldSample, gen_shape_world
from swifter.errors import ConfigError, ContractError
from swifter.losses import xe_loss
from swifter.model import FusionConfig, SwifterModel
from swifter.training import (
    SGD,
    Adam,
    TrainingConfig,
    build_reward_index,
    scst_step,
    token_accuracy,
    train_loop,
    write_metrics_csv,
    xe_batch,
)
from swifter.vocab import BOS, EOS, Vocabulary


def tiny_model(seed=0, vocab_size=6, max_len=2):
    cfg = FusionConfig(
        vocab_size=vocab_size, n_layers=1, hidden=8, ff_size=12, heads=2, d_m=4,
        max_len=max_len,
    )
    return SwifterModel.init(cfg, None, seed=seed)


def fusion_sample(model, caption, seed=5):
    feats = np.random.default_rng(seed).normal(size=(2, model.fusion.cfg.d_m))
    return ShapeWorldSample(image=feats, caption=caption, seed=0)


class TestOptimizers:
    def test_sgd_lr_zero_bit_identical(self, rng):
        p = Tensor(rng.normal(size=(3, 3)), requires_grad=True)
        before = p.data.copy()
        SGD([p], lr=0.0).step({p: rng.normal(size=(3, 3))})
        assert np.array_equal(p.data, before)

    def test_adam_lr_zero_bit_identical(self, rng):
        p = Tensor(rng.normal(size=(3, 3)), requires_grad=True)
        before = p.data.copy()
        Adam([p], lr=0.0).step({p: rng.normal(size=(3, 3))})
        assert np.array_equal(p.data, before)

    def test_sgd_descends(self, rng):
        p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
        SGD([p], lr=0.1).step({p: np.array([1.0, 1.0])})
        assert np.allclose(p.data, [0.9, -2.1])

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            TrainingConfig(steps=1, lr=0.0)
        with pytest.raises(ConfigError):
            TrainingConfig(steps=1, mode="nope")
        with pytest.raises(ConfigError):
            TrainingConfig(steps=1, scst_samples=0)


class TestScst:
    def test_tied_rewards_zero_gradient_exactly(self):
        model = tiny_model(seed=1)
        # classifier pinned to one word: every sample is identical, rewards tie
        model.fusion.cls_bias.data = np.zeros(6)
        model.fusion.cls_bias.data[4] = 1e4
        vocab = Vocabulary(["w1", "w2"], 1)
        sample = fusion_sample(model, "w1 w2")
        index = CiderIndex([[vocab.encode("w1 w2")], [vocab.encode("w2 w2")]])
        cfg = TrainingConfig(steps=1, batch=1, seed=0, mode="scst", scst_samples=3, max_len=2)
        res = scst_step(model, [sample], vocab, cfg, np.random.default_rng(0), index)
        assert len(set(res.rewards)) == 1
        for g in res.grads.values():
            assert np.all(g == 0.0)

    def test_positive_advantage_raises_sample_logprob(self):
        model = tiny_model(seed=2)
        vocab = Vocabulary(["w1", "w2"], 1)
        sample = fusion_sample(model, "w1 w2")
        index = CiderIndex([[vocab.encode("w1 w2")], [vocab.encode("w2 w2")]])
        cfg = TrainingConfig(steps=1, batch=1, seed=0, mode="scst", scst_samples=4, max_len=2)
        rng = np.random.default_rng(3)
        res = scst_step(model, [sample], vocab, cfg, rng, index)
        rewards = np.asarray(res.rewards)
        assert rewards.std() > 0  # seed chosen so samples differ
        best = int(rewards.argmax())
        ids = res.sample_ids[best]

        def seq_logprob():
            inputs = np.asarray([BOS] + ids[:-1], dtype=np.int64)[None, :]
            targets = np.asarray(ids, dtype=np.int64)[None, :]
            feats = Tensor(sample.image)
            lp = take_along_last(
                log_softmax(model.fusion.decode_parallel(model.fusion.encode(feats), inputs)),
                targets,
            )
            return tensor_sum(lp).item()

        before = seq_logprob()
        SGD([t for _, t in model.named_params()], lr=1e-3).step(res.grads)
        assert seq_logprob() > before

    def test_expected_gradient_matches_enumeration(self):
        """REINFORCE oracle: average SCST gradient over many seeded steps vs
        the exhaustive-enumeration gradient of expected reward.

        With the mean-of-n-samples baseline the estimator's expectation is
        -(1 - 1/n) * grad E[r]; enumeration covers every decodable sequence
        (V=6, max_len=2). K is fixed, so the comparison is deterministic.
        """
        n = 2
        model = tiny_model(seed=21)
        fusion = model.fusion
        vocab = Vocabulary(["w1", "w2"], 1)
        sample = fusion_sample(model, "w1 w2")
        ref = vocab.encode("w1 w2")
        index = CiderIndex([[ref], [vocab.encode("w2 w2")]])
        feats = sample.image
        v = fusion.cfg.vocab_size
        params = [t for _, t in model.named_params()]

        def outcomes():
            for t1 in range(v):
                if t1 == EOS:
                    yield [t1]
                else:
                    for t2 in range(v):
                        yield [t1, t2]

        def reward(ids):
            words = ids[:-1] if ids and ids[-1] == EOS else ids
            return cider_d(words, [ref], index)

        def seq_logprob_grads(ids):
            inputs = np.asarray([BOS] + ids[:-1], dtype=np.int64)[None, :]
            targets = np.asarray(ids, dtype=np.int64)[None, :]
            with Tape() as tape:
                lp = take_along_last(
                    log_softmax(fusion.decode_parallel(fusion.encode(Tensor(feats)), inputs)),
                    targets,
                )
                total = tensor_sum(lp)
            grads = tape.backward(total)
            return total.item(), grads

        analytic = {id(p): np.zeros_like(p.data) for p in params}
        mass = 0.0
        for ids in outcomes():
            lp, grads = seq_logprob_grads(ids)
            p = np.exp(lp)
            mass += p
            r = reward(ids)
            for prm in params:
                g = grads.get(prm)
                if g is not None:
                    analytic[id(prm)] += p * r * g
        assert mass == pytest.approx(1.0, abs=1e-9)

        cfg = TrainingConfig(
            steps=1, batch=1, seed=0, mode="scst", scst_samples=n, max_len=2, lr=1.0
        )
        rng = np.random.default_rng(123)
        acc = {id(p): np.zeros_like(p.data) for p in params}
        k = 4000
        for _ in range(k):
            res = scst_step(model, [sample], vocab, cfg, rng, index)
            for prm in params:
                g = res.grads.get(prm)
                if g is not None:
                    acc[id(prm)] += g
        scale = -(1.0 - 1.0 / n)
        num = den = 0.0
        for prm in params:
            mc = acc[id(prm)] / k
            an = scale * analytic[id(prm)]
            num += np.sum((mc - an) ** 2)
            den += np.sum(an**2)
        assert np.sqrt(num / den) < 0.05


class TestTrainLoop:
    def _setup(self):
        samples = gen_shape_world(8, 17)
        vocab = Vocabulary.build([s.caption for s in samples], 1)
        fusion_cfg = FusionConfig(
            vocab_size=len(vocab), n_layers=1, hidden=16, ff_size=32, heads=2,
            d_m=12, max_len=12,
        )
        swift_cfg = SwiftConfig(patch_size=8, embed_dim=6, stage_depths=(1, 1), window=2)
        return samples, vocab, fusion_cfg, swift_cfg

    def test_same_seed_identical_curves(self):
        samples, vocab, fusion_cfg, swift_cfg = self._setup()
        curves = []
        for _ in range(2):
            model = SwifterModel.init(fusion_cfg, swift_cfg, seed=4)
            cfg = TrainingConfig(steps=4, batch=4, seed=9, optimizer="adam", max_len=12)
            curves.append([m["loss"] for m in train_loop(model, samples, vocab, cfg)])
        assert curves[0] == curves[1]

    def test_loss_decreases(self):
        samples, vocab, fusion_cfg, swift_cfg = self._setup()
        model = SwifterModel.init(fusion_cfg, swift_cfg, seed=4)
        cfg = TrainingConfig(steps=12, batch=8, seed=9, optimizer="adam", lr=1e-3, max_len=12)
        metrics = train_loop(model, samples, vocab, cfg)
        assert metrics[-1]["loss"] < metrics[0]["loss"]

    def test_checkpoint_roundtrip_validation_loss(self, tmp_path):
        samples, vocab, fusion_cfg, swift_cfg = self._setup()
        model = SwifterModel.init(fusion_cfg, swift_cfg, seed=4)
        cfg = TrainingConfig(steps=3, batch=4, seed=9, optimizer="adam", max_len=12)
        train_loop(model, samples, vocab, cfg, ckpt_path=tmp_path / "m.swft")
        loaded, extra = load_checkpoint(tmp_path / "m.swft")
        assert extra["vocab"] == vocab.id_to_token[4:]
        for _, t in model.named_params():
            t.data = t.data.astype(np.float32).astype(np.float64)
        images, inputs, targets = xe_batch(samples, vocab, 12)
        a = xe_loss(model.forward(Tensor(images), inputs), targets).item()
        b = xe_loss(loaded.forward(Tensor(images), inputs), targets).item()
        assert a == b

    def test_non_finite_loss_aborts(self):
        samples, vocab, fusion_cfg, swift_cfg = self._setup()
        model = SwifterModel.init(fusion_cfg, swift_cfg, seed=4)
        model.fusion.embed.data[:] = np.nan
        cfg = TrainingConfig(steps=1, batch=2, seed=0, max_len=12)
        with pytest.raises(ContractError):
            train_loop(model, samples, vocab, cfg)

    def test_early_stop(self):
        samples, vocab, fusion_cfg, swift_cfg = self._setup()
        model = SwifterModel.init(fusion_cfg, swift_cfg, seed=4)
        cfg = TrainingConfig(
            steps=500, batch=8, seed=9, optimizer="adam", lr=3e-3, max_len=12,
            eval_every=10, early_stop_acc=0.5,
        )
        metrics = train_loop(model, samples, vocab, cfg)
        assert len(metrics) < 500
        assert token_accuracy(model, samples, vocab, 12) >= 0.5

    def test_metrics_csv_format(self, tmp_path):
        rows = [
            {"step": 0, "loss": 1.5, "reward": None},
            {"step": 1, "loss": 1.25, "reward": 3.5},
        ]
        path = tmp_path / "log.csv"
        write_metrics_csv(path, rows)
        lines = path.read_text().splitlines()
        assert lines[0] == "step,loss,reward"
        assert lines[1] == "0,1.5,"
        assert lines[2] == "1,1.25,3.5"


def test_build_reward_index_counts_images(shape_world_small):
    samples, vocab = shape_world_small
    index = build_reward_index(samples, vocab)
    assert index.n_images == len(samples)
