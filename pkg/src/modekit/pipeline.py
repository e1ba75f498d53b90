"""Frames -> covariance -> |G1| -> modes, with the scalars worth reporting."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import DegenerateError, FlatCovariance, FrameStack, fold_vector
from .modes import ModeSet, decompose, schmidt_number
from .stats import MeanIntensity, StatsConfig, denoise, siegert_invert, streaming_moments


@dataclass(eq=False)
class Reconstruction:
    modes: ModeSet
    mean: MeanIntensity
    clamped_fraction: float
    g1: Optional[FlatCovariance] = None

    def summary(self, truncate: int = 200) -> dict:
        w = self.modes.weights
        return {
            "n_modes": int(len(self.modes)),
            "K": schmidt_number(self.modes),
            f"K_{truncate}": schmidt_number(self.modes, truncate),
            "clamped_fraction": self.clamped_fraction,
            "eigen_clamped": int(self.modes.clamped_count),
            "weights": [float(x) for x in w[: min(len(w), truncate)]],
        }


def reconstruct(stack: FrameStack, cfg: StatsConfig = StatsConfig(), n_modes: Optional[int] = None,
                method: str = "auto", keep_g1: bool = False) -> Reconstruction:
    """Run the full reconstruction on a frame stack.

    Works in place on a single ``N x N`` buffer after the covariance pass, so
    peak memory stays close to one matrix. ``keep_g1`` returns the filtered
    ``|G1|`` (only meaningful with the iterative solver, since the dense
    solver overwrites it).
    """
    mean_vec, cov_data = streaming_moments(stack, cfg)
    mean = MeanIntensity(stack.grid, fold_vector(stack.grid, mean_vec).copy())
    if not np.any(cov_data):
        raise DegenerateError("covariance is identically zero")
    cov = FlatCovariance(stack.grid, cov_data)
    g1 = siegert_invert(cov, mean, cfg, inplace=True)
    g1 = denoise(g1, cfg, inplace=True)
    if not np.any(g1.data):
        raise DegenerateError("|G1| is identically zero after filtering")
    modes = decompose(g1, n_modes=n_modes, method=method, overwrite=not keep_g1)
    return Reconstruction(modes, mean, float(g1.clamped_fraction), g1 if keep_g1 else None)
