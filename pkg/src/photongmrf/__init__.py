"""Bayesian reconstruction of photon-limited images and videos.

A hidden gamma Markov random field prior couples neighbouring intensities in
space (and optionally time); a Metropolis-within-Gibbs sampler targets the
posterior under Poisson (photon counting) or Bernoulli (single-photon,
saturating) detectors.
"""

__version__ = "0.1.0"

from .core import DataValidationError, Geometry, NumericalError  # noqa: E402
from .observation import ObservationModel, simulate  # noqa: E402
from .sampler import ChainSummary, SamplerConfig, run_chain  # noqa: E402

__all__ = [
    "DataValidationError",
    "Geometry",
    "NumericalError",
    "ObservationModel",
    "simulate",
    "SamplerConfig",
    "ChainSummary",
    "run_chain",
    "__version__",
]
