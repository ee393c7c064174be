"""Inference: Euler integration and interval stepping over [1, 0].

Both samplers draw the start point from N(y, sigma^2 I), divide [0, 1]
into ``nfe`` equal sub-intervals and walk them from the noisy end down to
the clean end.  The Euler sampler steps with the instantaneous field at
the sub-interval's upper end; the interval sampler asks the network for
the average field over each sub-interval, which collapses to the one-call
shortcut  x1 - u(x1, 0, 1, y)  at nfe=1.

``enhance`` wraps a sampler for a whole complex spectrogram: frames are
packed to the network's (frames, 2*bins) layout, integrated as one batch
(so the call count stays exactly nfe), and unpacked.  Per-utterance
generators are derived as seed XOR utterance index, keeping corpus runs
reproducible while decorrelating the prior draws.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .frontend import pack_spec, unpack_spec
from .network import NetworkError, VelocityNetwork


@dataclass(frozen=True)
class SamplerConfig:
    nfe: int = 1
    seed: int = 0
    sigma: float = 0.5

    def __post_init__(self):
        if self.nfe < 1:
            raise ValueError(f"nfe must be at least 1, got {self.nfe}")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")


def _draw_prior(y: np.ndarray, cfg: SamplerConfig, rng: np.random.Generator) -> np.ndarray:
    return y + cfg.sigma * rng.standard_normal(y.shape)


def euler_flow_sample(
    net: VelocityNetwork,
    y: np.ndarray,
    cfg: SamplerConfig,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Euler integration of the instantaneous field from t=1 down to t=0."""
    rng = rng or np.random.Generator(np.random.PCG64(cfg.seed))
    n = cfg.nfe
    x = _draw_prior(y, cfg, rng)
    for i in range(n - 1, -1, -1):
        t_i = (i + 1) / n
        x = x + (-1.0 / n) * net.forward(x, t_i, t_i, y).data
    return x


def meanflow_sample(
    net: VelocityNetwork,
    y: np.ndarray,
    cfg: SamplerConfig,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Interval stepping with the average field over each sub-interval."""
    if net.config.mode != "meanflow":
        raise NetworkError("interval sampler needs a mean-flow network")
    rng = rng or np.random.Generator(np.random.PCG64(cfg.seed))
    n = cfg.nfe
    x = _draw_prior(y, cfg, rng)
    for i in range(n - 1, -1, -1):
        r_i, t_i = i / n, (i + 1) / n
        x = x + (r_i - t_i) * net.forward(x, r_i, t_i, y).data
    return x


def enhance(
    net: VelocityNetwork,
    noisy_spec: np.ndarray,
    cfg: SamplerConfig,
    utt_index: int = 0,
) -> np.ndarray:
    """Enhance one complex spectrogram; deterministic given (seed, utt_index)."""
    if noisy_spec.shape[0] != net.config.n_bins:
        raise NetworkError(
            f"spectrogram has {noisy_spec.shape[0]} bins, network expects {net.config.n_bins}"
        )
    rng = np.random.Generator(np.random.PCG64(cfg.seed ^ utt_index))
    y = pack_spec(noisy_spec)
    if net.config.mode == "meanflow":
        x = meanflow_sample(net, y, cfg, rng)
    else:
        x = euler_flow_sample(net, y, cfg, rng)
    return unpack_spec(x)
