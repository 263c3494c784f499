"""Deterministic DDIM sampling and inversion by forward Euler in sigma.

States are kept in the rescaled variable x_bar(t) = x(t) / sqrt(alpha(t));
one Euler step moves x_bar by the guided noise prediction times the change in
sigma.  Inversion integrates the same update with time increasing, optionally
under a different guidance scale than the forward direction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .oracle import Prompt
from .schedule import T_CLEAN_EPS, TimeGrid, alpha_at, sigma_at

__all__ = ["DiffusionState", "Trajectory", "ddim_step", "ddim_sample", "ddim_invert"]


@dataclass(frozen=True)
class DiffusionState:
    """A point on a diffusion trajectory in rescaled coordinates."""

    x_bar: np.ndarray
    t: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "x_bar", np.asarray(self.x_bar, dtype=float))
        if not (0.0 <= self.t <= 1.0):
            raise ValueError(f"state time must lie in [0, 1], got {self.t}")

    def x(self, model) -> np.ndarray:
        """Unscaled sample x(t) = sqrt(alpha(t)) * x_bar."""
        return np.sqrt(alpha_at(model.schedule, self.t)) * self.x_bar


@dataclass(frozen=True)
class Trajectory:
    """Visited states plus the noise prediction evaluated at each of them.

    ``noise_preds[i]`` is the guided prediction at ``states[i]``; at a terminal
    state with t = 0 the prediction is stored as zeros (the exact zero-noise
    limit, and it never enters an update because sigma(0) = 0).
    """

    states: tuple[DiffusionState, ...]
    noise_preds: tuple[np.ndarray, ...]

    def __post_init__(self) -> None:
        if len(self.states) != len(self.noise_preds):
            raise ValueError("noise_preds must align one-to-one with states")
        times = [s.t for s in self.states]
        diffs = np.diff(times)
        if not (np.all(diffs < 0.0) or np.all(diffs > 0.0)):
            raise ValueError("trajectory times must be strictly monotone")

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.states])


def _predict(model, x_bar: np.ndarray, t: float, prompt: Prompt, gamma: float) -> np.ndarray:
    a = alpha_at(model.schedule, t)
    return model.cfg_noise(np.sqrt(a) * x_bar, t, prompt, gamma)


def ddim_step(
    state: DiffusionState, tau: float, model, prompt: Prompt, gamma: float
) -> DiffusionState:
    """One denoising Euler step from t to t - tau."""
    if tau < 0.0:
        raise ValueError(f"tau must be nonnegative, got {tau}")
    t_next = state.t - tau
    if t_next < 0.0:
        raise ValueError(f"step target {t_next} is below zero")
    if tau == 0.0:
        return state
    sched = model.schedule
    eps = _predict(model, state.x_bar, state.t, prompt, gamma)
    x_bar = state.x_bar + eps * (sigma_at(sched, t_next) - sigma_at(sched, state.t))
    return DiffusionState(x_bar, t_next)


def ddim_sample(
    x_bar_init: np.ndarray, grid: TimeGrid, model, prompt: Prompt, gamma: float
) -> Trajectory:
    """Integrate the sampling update along a decreasing grid, recording predictions."""
    times = grid.times
    x_bar = np.asarray(x_bar_init, dtype=float)
    states = [DiffusionState(x_bar, float(times[0]))]
    preds = [_predict(model, x_bar, float(times[0]), prompt, gamma)]
    for t_cur, t_next in zip(times[:-1], times[1:]):
        sched = model.schedule
        x_bar = x_bar + preds[-1] * (sigma_at(sched, float(t_next)) - sigma_at(sched, float(t_cur)))
        states.append(DiffusionState(x_bar, float(t_next)))
        if t_next > 0.0:
            preds.append(_predict(model, x_bar, float(t_next), prompt, gamma))
        else:
            preds.append(np.zeros_like(x_bar))
    return Trajectory(tuple(states), tuple(preds))


def ddim_invert(
    x0: np.ndarray,
    t_target: float,
    n_steps: int,
    model,
    prompt: Prompt,
    gamma_inv: float,
) -> tuple[DiffusionState, np.ndarray]:
    """Integrate the update with increasing time from a clean sample to t_target.

    Returns the terminal state and the noise implied by it:
    (x(t) - sqrt(alpha) x0) / sqrt(1 - alpha), which in rescaled coordinates is
    (x_bar - x0) / sigma(t_target).  Predictions at times below the clean
    clamp are evaluated at the clamp, where they are defined.
    """
    if not (0.0 < t_target <= 1.0):
        raise ValueError(f"t_target must lie in (0, 1], got {t_target}")
    if n_steps < 1:
        raise ValueError("inversion needs at least one step")
    sched = model.schedule
    times = np.linspace(0.0, t_target, n_steps + 1)
    x_bar = np.asarray(x0, dtype=float)
    for t_cur, t_next in zip(times[:-1], times[1:]):
        t_eval = max(float(t_cur), T_CLEAN_EPS)
        eps = _predict(model, x_bar, t_eval, prompt, gamma_inv)
        x_bar = x_bar + eps * (sigma_at(sched, float(t_next)) - sigma_at(sched, float(t_cur)))
    state = DiffusionState(x_bar, float(t_target))
    noise = (x_bar - np.asarray(x0, dtype=float)) / sigma_at(sched, float(t_target))
    return state, noise
