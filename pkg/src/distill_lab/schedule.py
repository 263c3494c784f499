"""Diffusion noise schedule: signal scaling alpha(t), noise scale sigma(t), time grids.

The schedule is variance preserving with a scaled-linear beta ramp.  Discrete
training indices exist only inside this module; everything downstream works
with continuous time t in [0, 1], where t = 0 is clean data and t = 1 is the
noisiest level.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["Schedule", "TimeGrid", "alpha_at", "sigma_at", "make_grid", "T_CLEAN_EPS"]

# Sampling grids stop here instead of 0 so noise predictions stay defined;
# states below this time are treated as clean.
T_CLEAN_EPS = 1e-4


def _scaled_linear_betas(beta_start: float, beta_end: float, n: int) -> np.ndarray:
    return np.linspace(beta_start**0.5, beta_end**0.5, n) ** 2


@dataclass(frozen=True)
class Schedule:
    """Cumulative signal schedule with continuous-time interpolation.

    ``log_alpha_bar[i]`` holds log of the cumulative product of (1 - beta)
    after i discrete steps, with entry 0 pinned to exactly 0 so alpha(0) = 1.
    Continuous t interpolates log alpha_bar linearly between the knots.
    """

    beta_start: float = 0.00085
    beta_end: float = 0.012
    n_train_steps: int = 1000
    log_alpha_bar: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if not (0.0 < self.beta_start < self.beta_end < 1.0):
            raise ValueError(
                f"need 0 < beta_start < beta_end < 1, got {self.beta_start}, {self.beta_end}"
            )
        if self.n_train_steps < 1:
            raise ValueError("n_train_steps must be positive")
        betas = _scaled_linear_betas(self.beta_start, self.beta_end, self.n_train_steps)
        log_ab = np.concatenate([[0.0], np.cumsum(np.log1p(-betas))])
        object.__setattr__(self, "log_alpha_bar", log_ab)

    def alpha(self, t):
        return alpha_at(self, t)

    def sigma(self, t):
        return sigma_at(self, t)


def _check_time(t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if np.any(t < 0.0) or np.any(t > 1.0):
        raise ValueError(f"time must lie in [0, 1], got {t}")
    return t


def alpha_at(schedule: Schedule, t):
    """Signal level alpha(t) in (0, 1]; alpha(0) = 1 exactly, strictly decreasing."""
    t = _check_time(t)
    n = schedule.n_train_steps
    knots = np.arange(n + 1, dtype=float)
    log_a = np.interp(t * n, knots, schedule.log_alpha_bar)
    out = np.exp(log_a)
    return out if out.ndim else float(out)


def sigma_at(schedule: Schedule, t):
    """Noise-to-signal ratio sigma(t) = sqrt(1 - alpha) / sqrt(alpha); sigma(0) = 0."""
    a = alpha_at(schedule, t)
    return np.sqrt((1.0 - np.asarray(a)) / np.asarray(a)) if np.ndim(a) else float(
        np.sqrt((1.0 - a) / a)
    )


@dataclass(frozen=True)
class TimeGrid:
    """Strictly decreasing sequence of times in [0, 1]."""

    times: np.ndarray

    def __post_init__(self) -> None:
        times = np.asarray(self.times, dtype=float)
        if times.ndim != 1 or times.size < 2:
            raise ValueError("a time grid needs at least two entries")
        if np.any(times < 0.0) or np.any(times > 1.0):
            raise ValueError("grid times must lie in [0, 1]")
        if np.any(np.diff(times) >= 0.0):
            raise ValueError("grid times must be strictly decreasing")
        object.__setattr__(self, "times", times)

    @property
    def n_steps(self) -> int:
        return self.times.size - 1


def make_grid(n_steps: int, t_max: float, t_min: float) -> TimeGrid:
    """Uniformly spaced decreasing grid from t_max to t_min inclusive, n_steps segments."""
    if n_steps < 1:
        raise ValueError("n_steps must be at least 1")
    if not (0.0 <= t_min < t_max <= 1.0):
        raise ValueError(f"need 0 <= t_min < t_max <= 1, got t_min={t_min}, t_max={t_max}")
    return TimeGrid(np.linspace(t_max, t_min, n_steps + 1))
