"""Robin-Laplacian spectra on planar domains with a blunted quadratic cusp."""

from .asymptotics import CuspParams, ModelConstants, classify_regime
from .config import RunConfig, parse_config

__all__ = ["CuspParams", "ModelConstants", "classify_regime", "RunConfig", "parse_config"]
__version__ = "0.1.0"
