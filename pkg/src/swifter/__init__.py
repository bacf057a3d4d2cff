"""SwiFTeR: Fourier-mixing windowed backbone + retention caption decoder.

A desk-scale numpy library with its own autodiff tape, dual-formulation
retention decoding, synthetic end-to-end training, and a benchmark CLI
that demonstrates the linear-vs-quadratic decode scaling and the constant
decode-state memory of the recurrent path.
"""

from .autodiff import Tape, Tensor, finite_diff_check
from .backbone import SwiftBackbone, SwiftConfig
from .checkpoint import load_checkpoint, save_checkpoint
from .fourier import dft_1d_naive, fft_1d, fourier_mix, ft_layer
from .model import FusionConfig, FusionModel, SwifterModel, count_params, estimate_flops
from .retention import (
    DecayMask,
    RetentionState,
    RetentionWeights,
    RotaryPhase,
    decay_mask,
    retention_brute,
    retention_parallel,
    retention_recurrent_step,
)
from .vocab import Vocabulary

__version__ = "0.1.0"

__all__ = [
    "Tape",
    "Tensor",
    "finite_diff_check",
    "SwiftBackbone",
    "SwiftConfig",
    "load_checkpoint",
    "save_checkpoint",
    "dft_1d_naive",
    "fft_1d",
    "fourier_mix",
    "ft_layer",
    "FusionConfig",
    "FusionModel",
    "SwifterModel",
    "count_params",
    "estimate_flops",
    "DecayMask",
    "RetentionState",
    "RetentionWeights",
    "RotaryPhase",
    "decay_mask",
    "retention_brute",
    "retention_parallel",
    "retention_recurrent_step",
    "Vocabulary",
    "__version__",
]
