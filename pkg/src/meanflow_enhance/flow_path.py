"""Gaussian conditional probability path between clean data and noisy prior.

The path interpolates a clean sample ``x0`` (time 0) and a prior draw
``x1 ~ N(y, sigma^2 I)`` around the noisy observation ``y`` (time 1), with
mean ``(1-t) x0 + t y`` and standard deviation ``t * sigma``.  Under this
schedule the sampled state simplifies to a straight interpolation
``x_t = (1-t) x0 + t x1`` and the conditional velocity target to
``(x_t - mean_t) / t + (y - x0)``; the general schedule-driven forms are
kept alongside so alternative (mean, std) pairs can be checked against the
specialised ones.

The velocity target divides by ``t``, so ``t`` is clamped away from zero by
``t_floor``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class PathError(ValueError):
    """Contract violation in path sampling (bad t, mismatched shapes)."""


@dataclass(frozen=True)
class PathConfig:
    """Hyperparameters of the Gaussian path."""

    sigma: float = 0.5
    t_floor: float = 1e-5

    def __post_init__(self):
        if not self.sigma > 0:
            raise PathError(f"sigma must be positive, got {self.sigma}")
        if not 0 < self.t_floor <= 1e-3:
            raise PathError(f"t_floor must be in (0, 1e-3], got {self.t_floor}")


@dataclass(frozen=True)
class PathSample:
    """One drawn training point: state, time, velocity target, prior draw."""

    x_t: np.ndarray
    t: float
    v_target: np.ndarray
    x1: np.ndarray


def _check_pair(x0: np.ndarray, y: np.ndarray) -> None:
    if x0.shape != y.shape:
        raise PathError(f"clean/noisy shapes differ: {x0.shape} vs {y.shape}")


def mean_schedule(x0: np.ndarray, y: np.ndarray, t: float) -> np.ndarray:
    """Path mean (1-t)*x0 + t*y."""
    _check_pair(x0, y)
    return (1.0 - t) * x0 + t * y


def std_schedule(t: float, cfg: PathConfig) -> float:
    """Path standard deviation t*sigma."""
    return t * cfg.sigma


def sample_prior(y: np.ndarray, cfg: PathConfig, rng: np.random.Generator) -> np.ndarray:
    """Draw x1 = y + sigma * eps with eps ~ N(0, I)."""
    return y + cfg.sigma * rng.standard_normal(y.shape)


def sample_xt(
    x0: np.ndarray, y: np.ndarray, x1: np.ndarray, t: float, cfg: PathConfig
) -> np.ndarray:
    """State at time t.  For this schedule the path is (1-t)*x0 + t*x1.

    The form is exact at both endpoints: t=0 returns x0 and t=1 returns x1
    bit-for-bit, because the vanished term is multiplied by a true zero.
    """
    _check_pair(x0, y)
    if not cfg.t_floor <= t <= 1.0:
        raise PathError(f"t={t} outside [{cfg.t_floor}, 1]")
    return (1.0 - t) * x0 + t * x1


def conditional_velocity(
    x_t: np.ndarray, x0: np.ndarray, y: np.ndarray, t: float, cfg: PathConfig
) -> np.ndarray:
    """Velocity target (x_t - mean_t)/t + (y - x0); singular below t_floor."""
    _check_pair(x0, y)
    if t < cfg.t_floor:
        raise PathError(f"t={t} below floor {cfg.t_floor}; velocity is singular at 0")
    return (x_t - mean_schedule(x0, y, t)) / t + (y - x0)


def draw_t(rng: np.random.Generator, cfg: PathConfig) -> float:
    """Uniform time in (t_floor, 1]."""
    return 1.0 - (1.0 - cfg.t_floor) * rng.random()


def sample_path(
    x0: np.ndarray, y: np.ndarray, t: float, cfg: PathConfig, rng: np.random.Generator
) -> PathSample:
    """Draw the prior point and assemble (x_t, t, velocity target)."""
    x1 = sample_prior(y, cfg, rng)
    x_t = sample_xt(x0, y, x1, t, cfg)
    return PathSample(x_t=x_t, t=t, v_target=conditional_velocity(x_t, x0, y, t, cfg), x1=x1)


# ---------------------------------------------------------------------------
# General schedule forms (used to cross-check the specialised ones)
# ---------------------------------------------------------------------------


def general_sample_xt(x0, y, x1, t, mean_fn, std_fn):
    """Schedule-agnostic state: (std_t/std_1) * (x1 - mean_1) + mean_t."""
    return (std_fn(t) / std_fn(1.0)) * (x1 - mean_fn(x0, y, 1.0)) + mean_fn(x0, y, t)


def general_conditional_velocity(x_t, x0, y, t, mean_fn, std_fn, mean_dot_fn, std_dot_fn):
    """Schedule-agnostic velocity: (std'_t/std_t) * (x_t - mean_t) + mean'_t."""
    return (std_dot_fn(t) / std_fn(t)) * (x_t - mean_fn(x0, y, t)) + mean_dot_fn(x0, y, t)
