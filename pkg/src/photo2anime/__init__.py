"""Style-guided photo-to-anime face translation: model, training loop, and metrics."""

from .discriminator import DiscOutput, Domain, DoubleBranchDiscriminator, FeatureTaps
from .errors import (
    CheckpointError,
    ConfigurationError,
    ContractViolation,
    InvalidInputError,
    NumericError,
    Photo2AnimeError,
    ShapeError,
)
from .evaluation import extract_features, fid, lpips_diversity
from .generator import Generator, GeneratorConfig
from .losses import LossReport, LossWeights, discriminator_objective, generator_objective
from .trainer import TrainConfig, fit, load_checkpoint, load_generator, save_checkpoint

__version__ = "0.1.0"

__all__ = [
    "CheckpointError",
    "ConfigurationError",
    "ContractViolation",
    "DiscOutput",
    "Domain",
    "DoubleBranchDiscriminator",
    "FeatureTaps",
    "Generator",
    "GeneratorConfig",
    "InvalidInputError",
    "LossReport",
    "LossWeights",
    "NumericError",
    "Photo2AnimeError",
    "ShapeError",
    "TrainConfig",
    "discriminator_objective",
    "extract_features",
    "fid",
    "fit",
    "generator_objective",
    "load_checkpoint",
    "load_generator",
    "lpips_diversity",
    "save_checkpoint",
    "__version__",
]
