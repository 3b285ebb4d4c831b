"""Sequence-based visual place recognition toolkit.

A learned dual-LSTM matcher plus classical sequence-filtering baselines
(similarity matrices, local contrast enhancement, constant-velocity line
search, delta descriptors) and a precision-recall / latency evaluation
harness, all built on numpy.
"""

__version__ = "0.1.0"

from .core import (
    DescriptorSequence,
    FormatError,
    MatchScores,
    ModelConfig,
    NumericsError,
    PoseSequence,
    PrCurve,
    SeqPlaceError,
    TrainConfig,
    ValidationError,
    seeded_rng,
)

__all__ = [
    "DescriptorSequence",
    "FormatError",
    "MatchScores",
    "ModelConfig",
    "NumericsError",
    "PoseSequence",
    "PrCurve",
    "SeqPlaceError",
    "TrainConfig",
    "ValidationError",
    "seeded_rng",
    "__version__",
]
