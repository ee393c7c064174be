"""Desk-scale flow-matching and mean-flow generative enhancement of noisy signals."""

__version__ = "0.1.0"

from . import autodiff, checkpoint, flow_path, frontend, metrics, network, sampler, training

__all__ = [
    "__version__",
    "autodiff",
    "checkpoint",
    "flow_path",
    "frontend",
    "metrics",
    "network",
    "sampler",
    "training",
]
