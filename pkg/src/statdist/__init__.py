"""Stationary-distribution estimation from a fixed batch of transitions.

A correction ratio between the stationary law and the unknown probe
distribution is learned from sampled pairs by variational power iteration;
exact dense solvers for finite chains double as oracles, and benchmark
environments provide ground truth end to end.
"""

from . import baselines, data, environments, metrics, models, tabular, vpm

__version__ = "0.1.0"

__all__ = [
    "baselines",
    "data",
    "environments",
    "metrics",
    "models",
    "tabular",
    "vpm",
    "__version__",
]
