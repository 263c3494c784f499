"""Change of variables to single-step denoised images and its exact identities.

The denoised variable is x0(t) = x_bar(t) - sigma(t) * eps(x(t)).  In this
variable one DDIM step becomes: renoise x0 with the current prediction, take a
fresh prediction at the lower level, and subtract sigma times the prediction
difference.  ``equivalence_check`` verifies that identity on recorded
trajectories; ``fixed_point_residual`` measures how far a candidate noise
vector is from solving the renoising consistency equation; and
``ode_identity_check`` verifies the continuous-time form, where the velocity
of x0 equals minus sigma times the time derivative of the prediction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .oracle import Prompt
from .sampler import DiffusionState, Trajectory
from .schedule import alpha_at, sigma_at

__all__ = [
    "X0State",
    "to_x0",
    "x0_update",
    "fixed_point_residual",
    "equivalence_check",
    "ode_identity_check",
    "EquivalenceReport",
    "OdeIdentityReport",
]


@dataclass(frozen=True)
class X0State:
    """Single-step denoised image at time t.

    ``kappa`` is the noise whose re-addition reconstructs the noisy state the
    denoised image came from; None at t = 0 where no prediction was taken.
    """

    x0: np.ndarray
    t: float
    kappa: np.ndarray | None = None


def to_x0(state: DiffusionState, model, prompt: Prompt, gamma: float) -> X0State:
    """Denoise a state with a single prediction step; identity at t = 0."""
    if state.t == 0.0:
        return X0State(state.x_bar.copy(), 0.0, None)
    sched = model.schedule
    eps = model.cfg_noise(state.x(model), state.t, prompt, gamma)
    x0 = state.x_bar - sigma_at(sched, state.t) * eps
    return X0State(x0, state.t, eps)


def x0_update(
    x0state: X0State, tau: float, kappa: np.ndarray, model, prompt: Prompt, gamma: float
) -> X0State:
    """One denoised-image update: renoise with kappa to t - tau, predict, correct.

    Returns x0 - sigma(t - tau) * (prediction - kappa) at time t - tau, where
    the prediction is taken at the renoised point
    sqrt(alpha(t - tau)) x0 + sqrt(1 - alpha(t - tau)) kappa.
    """
    kappa = np.asarray(kappa, dtype=float)
    if kappa.shape != x0state.x0.shape:
        raise ValueError(f"kappa shape {kappa.shape} does not match x0 {x0state.x0.shape}")
    t_next = x0state.t - tau
    if t_next < 0.0:
        raise ValueError(f"update target {t_next} is below zero")
    if t_next == 0.0:
        return X0State(x0state.x0.copy(), 0.0, kappa)
    sched = model.schedule
    a = alpha_at(sched, t_next)
    x_next = np.sqrt(a) * x0state.x0 + np.sqrt(1.0 - a) * kappa
    pred = model.cfg_noise(x_next, t_next, prompt, gamma)
    x0 = x0state.x0 - sigma_at(sched, t_next) * (pred - kappa)
    return X0State(x0, t_next, pred)


def fixed_point_residual(
    x0: np.ndarray, eps: np.ndarray, t: float, model, prompt: Prompt, gamma: float
) -> float:
    """Renoising consistency error of eps at level t, rescaled to denoised units.

    The raw noise-space residual || eps - prediction(renoise(x0, eps)) || is
    multiplied by sigma(t), the sensitivity of x0 to the noise at fixed x_bar,
    and normalized per coordinate so curves are dimension independent.
    """
    if not (0.0 < t < 1.0):
        raise ValueError(f"t must lie in (0, 1), got {t}")
    x0 = np.asarray(x0, dtype=float)
    eps = np.asarray(eps, dtype=float)
    a = alpha_at(model.schedule, t)
    x = np.sqrt(a) * x0 + np.sqrt(1.0 - a) * eps
    pred = model.cfg_noise(x, t, prompt, gamma)
    return float(
        sigma_at(model.schedule, t) * np.linalg.norm(eps - pred) / np.sqrt(eps.size)
    )


@dataclass(frozen=True)
class EquivalenceReport:
    max_abs_deviation: float
    per_step: np.ndarray  # deviation for each consecutive pair

    @property
    def passed(self) -> bool:
        return bool(self.max_abs_deviation <= 1e-10)


def equivalence_check(
    trajectory: Trajectory, model, prompt: Prompt, gamma: float
) -> EquivalenceReport:
    """Verify that the denoised-image update reproduces the recorded trajectory.

    For each consecutive pair of states, x0 at the lower time computed from
    the trajectory must equal x0 at the higher time minus sigma(lower) times
    the difference of recorded predictions.  This is an algebraic identity of
    the stepping rule, so deviations measure only floating-point noise.
    """
    if len(trajectory.states) < 2:
        raise ValueError("need at least two states to compare")
    sched = model.schedule
    states, preds = trajectory.states, trajectory.noise_preds
    devs = np.empty(len(states) - 1)
    for i in range(len(states) - 1):
        hi, lo = states[i], states[i + 1]
        sig_hi = sigma_at(sched, hi.t)
        sig_lo = sigma_at(sched, lo.t)
        x0_hi = hi.x_bar - sig_hi * preds[i]
        x0_lo = lo.x_bar - sig_lo * preds[i + 1]
        predicted = x0_hi - sig_lo * (preds[i + 1] - preds[i])
        devs[i] = np.max(np.abs(predicted - x0_lo))
    return EquivalenceReport(float(devs.max()), devs)


@dataclass(frozen=True)
class OdeIdentityReport:
    max_rel_error: float
    per_point: np.ndarray  # relative error at each interior checked state
    times: np.ndarray


def ode_identity_check(
    trajectory: Trajectory, model, prompt: Prompt, gamma: float, fd_step: float = 1e-4
) -> OdeIdentityReport:
    """Finite-difference check that dx0/dt = -sigma(t) * d(prediction)/dt.

    At each interior state, neighbors at t +- fd_step are produced by single
    Euler substeps from that state, and both sides of the identity are formed
    by central differences.  The Euler substeps carry O(fd_step^2) local
    error, so the check converges at first order in fd_step.
    """
    if len(trajectory.states) - 1 < 200:
        raise ValueError("ode identity check needs a dense trajectory (>= 200 steps)")
    if fd_step <= 0.0:
        raise ValueError("fd_step must be positive")
    sched = model.schedule
    errors: list[float] = []
    times: list[float] = []
    for i in range(1, len(trajectory.states) - 1):
        state = trajectory.states[i]
        t = state.t
        if t - fd_step <= 0.0 or t + fd_step >= 1.0:
            continue
        pred_here = trajectory.noise_preds[i]
        sig = sigma_at(sched, t)

        def probe(t_probe: float) -> tuple[np.ndarray, np.ndarray]:
            x_bar = state.x_bar + pred_here * (sigma_at(sched, t_probe) - sig)
            probe_state = DiffusionState(x_bar, t_probe)
            eps = model.cfg_noise(probe_state.x(model), t_probe, prompt, gamma)
            return x_bar - sigma_at(sched, t_probe) * eps, eps

        x0_plus, eps_plus = probe(t + fd_step)
        x0_minus, eps_minus = probe(t - fd_step)
        lhs = (x0_plus - x0_minus) / (2.0 * fd_step)
        rhs = -sig * (eps_plus - eps_minus) / (2.0 * fd_step)
        scale = max(np.linalg.norm(lhs), np.linalg.norm(rhs), 1e-12)
        errors.append(float(np.linalg.norm(lhs - rhs) / scale))
        times.append(t)
    if not errors:
        raise ValueError("no interior states admit a +-fd_step neighborhood")
    per_point = np.array(errors)
    return OdeIdentityReport(float(per_point.max()), per_point, np.array(times))
