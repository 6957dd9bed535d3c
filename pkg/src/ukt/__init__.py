"""Uncertainty-aware knowledge tracing.

Student interaction histories are embedded as diagonal Gaussians (mean =
knowledge level, covariance = uncertainty), knowledge-state transitions are
tracked with self-attention scored by negative 2-Wasserstein distances, and
robustness to response noise (lucky guesses, careless slips) is trained in
through a contrastive loss over rule-corrupted sequences.

Everything runs on a small numpy tensor engine with tape-based reverse-mode
differentiation (``ukt.tensor``), so the full pipeline is self-contained and
desk-scale.
"""

from . import tensor
from .errors import (
    ConfigError,
    DataError,
    DomainError,
    NumericError,
    ParseError,
    ShapeError,
    UktError,
    UsageError,
)

__version__ = "0.1.0"

__all__ = [
    "tensor",
    "UktError",
    "UsageError",
    "ConfigError",
    "ShapeError",
    "DomainError",
    "DataError",
    "ParseError",
    "NumericError",
    "__version__",
]
