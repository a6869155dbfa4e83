"""Greedy multi-resource allocation driven by a learned outage predictor.

Subpackages: channel synthesis and labelled datasets (`channel`), the
recurrent classifier with exact gradients (`predictor`), confusion-matrix
losses including the batch-level outage-rate objective (`losses`), the
closed-form outage expression and empirical estimators (`analysis`), the
greedy policy and Monte Carlo engine (`allocator`), mini-batch ADAM
training and the replicate protocol (`trainer`), and the experiment CLI
(`cli`).
"""

from . import allocator, analysis, channel, cli, losses, predictor, trainer
from .errors import ConfigError, DataFormatError, DegenerateEstimateError

__version__ = "0.1.0"

__all__ = [
    "allocator",
    "analysis",
    "channel",
    "cli",
    "losses",
    "predictor",
    "trainer",
    "ConfigError",
    "DataFormatError",
    "DegenerateEstimateError",
    "__version__",
]
