import numpy as np
import pytest

from swifter.backbone import SwiftConfig
from swifter.data import gen_shape_world
from swifter.model import FusionConfig, FusionModel, SwifterModel
from swifter.vocab import Vocabulary


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_fusion():
    """Small but fully wired fusion model for fast equivalence tests."""
    cfg = FusionConfig(
        vocab_size=13, n_layers=2, hidden=16, ff_size=32, heads=4, d_m=12, max_len=10
    )
    return FusionModel(cfg, np.random.default_rng(7))


@pytest.fixture
def tiny_swifter():
    """End-to-end model small enough for finite differences."""
    fusion_cfg = FusionConfig(
        vocab_size=11, n_layers=1, hidden=8, ff_size=16, heads=2, d_m=8, max_len=8
    )
    swift_cfg = SwiftConfig(
        patch_size=4, embed_dim=4, stage_depths=(1, 1), window=2, image_size=16
    )
    return SwifterModel.init(fusion_cfg, swift_cfg, seed=3)


@pytest.fixture(scope="session")
def shape_world_small():
    samples = gen_shape_world(12, 99)
    vocab = Vocabulary.build([s.caption for s in samples], 1)
    return samples, vocab
