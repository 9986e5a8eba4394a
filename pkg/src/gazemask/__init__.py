"""Missingness-aware BiLSTM classification of gaze recordings into trait tertiles."""
from ._backend import BACKEND
from .core import (
    TRAITS,
    AugmentedFrame,
    AugmentedSequence,
    FeatureFrame,
    GazeSample,
    NormalizationStats,
    RecordingConfig,
    SessionSeries,
    TertileLabel,
    TraitProfile,
    Window,
)
from .errors import GazemaskError
from .featurize import FeatureVariant
from .split import Protocol, WindowingConfig

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "TRAITS",
    "AugmentedFrame",
    "AugmentedSequence",
    "FeatureFrame",
    "FeatureVariant",
    "GazeSample",
    "GazemaskError",
    "NormalizationStats",
    "Protocol",
    "RecordingConfig",
    "SessionSeries",
    "TertileLabel",
    "TraitProfile",
    "Window",
    "WindowingConfig",
    "__version__",
]
