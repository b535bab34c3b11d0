"""Desk-scale reference sampler for the Gaussian noising chain and its
parameterized reverse, on flat vectors.

This module documents the generative math the image-edit backend embodies and
backs the property tests; it learns nothing. The forward chain draws
x_t ~ N(sqrt(1-beta_t) x_{t-1}, beta_t I); the reverse chain draws
x_{t-1} ~ N(mean, diag(cov)) with caller-supplied mean/cov functions.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


@dataclass(frozen=True)
class NoiseSchedule:
    betas: tuple[float, ...]

    def __post_init__(self):
        if len(self.betas) < 1:
            raise ValueError("schedule needs at least one step")
        if any(not (0.0 < b < 1.0) for b in self.betas):
            raise ValueError(f"every beta must lie in (0, 1), got {self.betas}")

    @property
    def steps(self) -> int:
        return len(self.betas)

    def signal_coefficient(self, t: int) -> float:
        """prod_{s<=t} sqrt(1 - beta_s): the surviving fraction of the input after t steps."""
        out = 1.0
        for beta in self.betas[:t]:
            out *= np.sqrt(1.0 - beta)
        return float(out)

    def noise_variance(self, t: int) -> float:
        """Marginal noise variance after t steps from a deterministic start."""
        return 1.0 - self.signal_coefficient(t) ** 2


def forward_step(x_prev: np.ndarray, beta_t: float, rng: np.random.Generator) -> np.ndarray:
    """One noising step: sqrt(1-beta_t) x_prev + sqrt(beta_t) eps, eps standard normal."""
    if not (0.0 <= beta_t <= 1.0):
        raise ValueError(f"beta_t must lie in [0, 1], got {beta_t}")
    x_prev = np.asarray(x_prev, dtype=np.float64)
    eps = rng.standard_normal(x_prev.shape)
    return np.sqrt(1.0 - beta_t) * x_prev + np.sqrt(beta_t) * eps


def forward_marginal(
    x0: np.ndarray,
    schedule: NoiseSchedule,
    t: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Sample x_t by composing forward_step t times from x0."""
    if not (1 <= t <= schedule.steps):
        raise ValueError(f"t must lie in [1, {schedule.steps}], got {t}")
    x = np.asarray(x0, dtype=np.float64)
    for beta in schedule.betas[:t]:
        x = forward_step(x, beta, rng)
    return x


def reverse_step(
    x_t: np.ndarray,
    mean: np.ndarray,
    cov_diag: np.ndarray,
    rng: np.random.Generator,
) -> np.ndarray:
    """One denoising step: sample N(mean, diag(cov_diag)).

    mean and cov_diag come from the caller (the learned parameters' role);
    x_t fixes the expected shape.
    """
    x_t = np.asarray(x_t, dtype=np.float64)
    mean = np.broadcast_to(np.asarray(mean, dtype=np.float64), x_t.shape)
    cov_diag = np.broadcast_to(np.asarray(cov_diag, dtype=np.float64), x_t.shape)
    if np.any(cov_diag < 0):
        raise ValueError("covariance diagonal must be non-negative")
    eps = rng.standard_normal(x_t.shape)
    return mean + np.sqrt(cov_diag) * eps


def reverse_chain(
    x_terminal: np.ndarray,
    schedule: NoiseSchedule,
    mean_fn: Callable[[np.ndarray, int], np.ndarray],
    cov_fn: Callable[[np.ndarray, int], np.ndarray],
    rng: np.random.Generator,
) -> np.ndarray:
    """Apply reverse_step from t = T down to t = 1."""
    x = np.asarray(x_terminal, dtype=np.float64)
    for t in range(schedule.steps, 0, -1):
        x = reverse_step(x, mean_fn(x, t), cov_fn(x, t), rng)
    return x


def marginal_statistics_demo(
    schedule: NoiseSchedule,
    x0_value: float = 1.0,
    dimension: int = 4,
    trajectories: int = 20000,
    seed: int = 0,
) -> list[dict]:
    """Monte Carlo vs closed-form marginal mean/std per step, for the demo subcommand."""
    rng = np.random.default_rng(seed)
    x0 = np.full(dimension, x0_value)
    rows = []
    samples = np.tile(x0, (trajectories, 1))
    for t, beta in enumerate(schedule.betas, start=1):
        eps = rng.standard_normal(samples.shape)
        samples = np.sqrt(1.0 - beta) * samples + np.sqrt(beta) * eps
        rows.append({
            "t": t,
            "beta": beta,
            "mc_mean": float(samples.mean()),
            "closed_form_mean": schedule.signal_coefficient(t) * x0_value,
            "mc_std": float(samples.std()),
            "closed_form_std": float(np.sqrt(schedule.noise_variance(t))),
        })
    return rows
