"""Coherent-mode reconstruction of thermal light from intensity frames."""
from .core import (
    CovKind,
    DegenerateError,
    FlatCovariance,
    FrameStack,
    InsufficientDataError,
    PixelGrid,
    ShapeError,
    ValidationError,
    cut_1d,
    flat_index,
    fold_vector,
    unfold_image,
    unflat_index,
)
from .modes import ModeSet, decompose, fidelity, match_modes, reconstruct_intensity, schmidt_number
from .pipeline import Reconstruction, reconstruct
from .stats import DarkCov, NoFilter, StatsConfig, Threshold, covariance, denoise, mean_intensity, siegert_invert

__version__ = "0.1.0"
