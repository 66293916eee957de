"""Trainable image steganography with progressive multi-scale convolutions.

The package splits into payload/image plumbing (:mod:`progsteg.payload`),
reusable network blocks (:mod:`progsteg.blocks`), the encoder/decoder/critic
networks (:mod:`progsteg.models`), differentiable losses and metrics
(:mod:`progsteg.losses`), the adversarial trainer and ablation registry
(:mod:`progsteg.training`), the evaluation harness
(:mod:`progsteg.evaluation`) and a command-line front end
(:mod:`progsteg.cli`).
"""

from .blocks import DenseBlockConfig, PmcbConfig
from .losses import LossWeights, MsSsimParams, SsimParams
from .models import Critic, Decoder, Encoder, ModelConfig, count_parameters
from .training import TrainConfig, VARIANT_NAMES, build_model

__version__ = "0.1.0"

__all__ = [
    "PmcbConfig",
    "DenseBlockConfig",
    "SsimParams",
    "MsSsimParams",
    "LossWeights",
    "ModelConfig",
    "Encoder",
    "Decoder",
    "Critic",
    "count_parameters",
    "TrainConfig",
    "VARIANT_NAMES",
    "build_model",
    "__version__",
]
