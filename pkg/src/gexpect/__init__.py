"""Sublinear (G-)expectation as an upper expectation over volatility-controlled martingale laws."""
from __future__ import annotations

__version__ = "0.1.0"

from .uncertainty import ThetaSet, generator_G, sigma_bounds  # noqa: E402

__all__ = ["ThetaSet", "generator_G", "sigma_bounds", "__version__"]
