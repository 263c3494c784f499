"""Strategies for producing the noise term of the denoised-image update.

A candidate noise vector should solve the renoising consistency equation
eps = prediction(sqrt(alpha) x0 + sqrt(1 - alpha) eps); how well each strategy
approximates a solution is what separates plain score distillation from its
inversion-based variant.  Strategies: fresh or fixed Gaussian draws, Picard
iteration, gradient descent on the squared residual, and DDIM inversion, plus
a closed-form reference available on single-Gaussian models.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .oracle import MixtureModel, Prompt
from .reparam import fixed_point_residual
from .sampler import DiffusionState, ddim_invert
from .schedule import alpha_at

__all__ = [
    "KappaDivergenceError",
    "RandomResampled",
    "RandomFixed",
    "FixedPointIteration",
    "GradientDescent",
    "DdimInversion",
    "ExactGaussian",
    "EntropyTerm",
    "solve_kappa",
    "solve_kappa_with_state",
    "add_entropy",
    "closed_form_kappa",
    "picard_contraction_factor",
    "inversion_step_count",
    "residual_sweep",
    "SweepRow",
]

# Iterates whose norm exceeds this many times sqrt(dimension) abort the solve.
DIVERGENCE_FACTOR = 1e3


class KappaDivergenceError(RuntimeError):
    """An iterative noise solve left the plausible region and was aborted."""


@dataclass(frozen=True)
class RandomResampled:
    """Fresh standard Gaussian draw on every call."""

    label = "random-resampled"


@dataclass(frozen=True)
class RandomFixed:
    """One standard Gaussian draw per (dimension, seed), reused forever."""

    seed: int = 0
    label = "random-fixed"


@dataclass(frozen=True)
class FixedPointIteration:
    """Picard iteration of the consistency equation from a Gaussian start."""

    steps: int = 10
    label = "fixed-point"

    def __post_init__(self) -> None:
        if self.steps < 1:
            raise ValueError("iterative strategies need steps >= 1")


@dataclass(frozen=True)
class GradientDescent:
    """Descent on the squared noise residual from a Gaussian start.

    The rate is halved whenever a trial step would increase the objective, so
    the objective is non-increasing across the outer steps.
    """

    steps: int = 10
    rate: float = 0.1
    label = "gradient-descent"

    def __post_init__(self) -> None:
        if self.steps < 1:
            raise ValueError("iterative strategies need steps >= 1")
        if self.rate <= 0.0:
            raise ValueError("rate must be positive")


@dataclass(frozen=True)
class DdimInversion:
    """Integrate the sampling update backward from the clean image to level t.

    ``step_rule`` is either the string "int(10t)" (ten steps at t = 1, fewer
    for smaller t, never below one) or a fixed positive step count.
    """

    gamma_inv: float = -7.5
    step_rule: str | int = "int(10t)"
    label = "ddim-inversion"

    def __post_init__(self) -> None:
        if isinstance(self.step_rule, str):
            if self.step_rule != "int(10t)":
                raise ValueError(f"unknown step rule {self.step_rule!r}")
        elif self.step_rule < 1:
            raise ValueError("fixed step counts must be >= 1")


@dataclass(frozen=True)
class ExactGaussian:
    """Closed-form fixed point; valid only for single-component models."""

    label = "exact-gaussian"


KappaStrategy = (
    RandomResampled | RandomFixed | FixedPointIteration | GradientDescent | DdimInversion | ExactGaussian
)


@dataclass(frozen=True)
class EntropyTerm:
    """Gaussian perturbation weight * sqrt(1 - alpha(t)) added to the solved noise."""

    weight: float = 0.3
    enabled: bool = True

    def __post_init__(self) -> None:
        if self.weight < 0.0:
            raise ValueError("entropy weight must be nonnegative")


_fixed_draw_cache: dict[tuple[int, int], np.ndarray] = {}


def _fixed_draw(dim: int, seed: int) -> np.ndarray:
    key = (dim, seed)
    if key not in _fixed_draw_cache:
        _fixed_draw_cache[key] = np.random.default_rng(seed).standard_normal(dim)
    return _fixed_draw_cache[key]


def inversion_step_count(strategy: DdimInversion, t: float) -> int:
    if isinstance(strategy.step_rule, int):
        return strategy.step_rule
    return max(1, int(10.0 * t))


def closed_form_kappa(x0: np.ndarray, t: float, model: MixtureModel) -> np.ndarray:
    """Exact solution of the consistency equation for a single-Gaussian model.

    For data N(mu, s^2 I) the prediction is affine and the unique solution is
    sqrt(alpha (1 - alpha)) (x0 - mu) / (alpha s^2).
    """
    if len(model.components) != 1:
        raise ValueError("closed-form noise requires a single-component model")
    comp = model.components[0]
    if comp.mean is None:
        raise ValueError("closed-form noise requires a fixed component mean")
    a = alpha_at(model.schedule, t)
    return math.sqrt(a * (1.0 - a)) * (np.asarray(x0, dtype=float) - comp.mean) / (a * comp.variance)


def picard_contraction_factor(t: float, variance: float, schedule) -> float:
    """Contraction factor of Picard iteration on a single-Gaussian model:
    (1 - alpha) / (alpha s^2 + 1 - alpha)."""
    a = alpha_at(schedule, t)
    return (1.0 - a) / (a * variance + (1.0 - a))


def _guard(eps: np.ndarray, strategy) -> None:
    if not np.all(np.isfinite(eps)) or np.linalg.norm(eps) > DIVERGENCE_FACTOR * math.sqrt(eps.size):
        raise KappaDivergenceError(f"{strategy.label} iterate left the plausible region")


def solve_kappa(
    x0: np.ndarray,
    t: float,
    model,
    prompt: Prompt,
    strategy: KappaStrategy,
    gamma_fwd: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Produce a noise vector for x0 at level t by the given strategy."""
    kappa, _ = solve_kappa_with_state(x0, t, model, prompt, strategy, gamma_fwd, rng)
    return kappa


def solve_kappa_with_state(
    x0: np.ndarray,
    t: float,
    model,
    prompt: Prompt,
    strategy: KappaStrategy,
    gamma_fwd: float,
    rng: np.random.Generator,
) -> tuple[np.ndarray, DiffusionState | None]:
    """As solve_kappa, also returning the inversion endpoint when one exists."""
    if not (0.0 < t <= 0.98):
        raise ValueError(f"noise solves are restricted to t in (0, 0.98], got {t}")
    x0 = np.asarray(x0, dtype=float)
    dim = x0.size

    if isinstance(strategy, RandomResampled):
        return rng.standard_normal(dim), None

    if isinstance(strategy, RandomFixed):
        return _fixed_draw(dim, strategy.seed).copy(), None

    if isinstance(strategy, ExactGaussian):
        return closed_form_kappa(x0, t, model), None

    if isinstance(strategy, DdimInversion):
        n = inversion_step_count(strategy, t)
        state, noise = ddim_invert(x0, t, n, model, prompt, strategy.gamma_inv)
        return noise, state

    a = alpha_at(model.schedule, t)
    root_a, root_one_minus_a = math.sqrt(a), math.sqrt(1.0 - a)

    def renoised_prediction(eps: np.ndarray) -> np.ndarray:
        return model.cfg_noise(root_a * x0 + root_one_minus_a * eps, t, prompt, gamma_fwd)

    eps = rng.standard_normal(dim)

    if isinstance(strategy, FixedPointIteration):
        for _ in range(strategy.steps):
            eps = renoised_prediction(eps)
            _guard(eps, strategy)
        return eps, None

    if isinstance(strategy, GradientDescent):
        def objective(e: np.ndarray) -> float:
            r = e - renoised_prediction(e)
            return float(r @ r)

        def gradient(e: np.ndarray) -> np.ndarray:
            x = root_a * x0 + root_one_minus_a * e
            jac = model.cfg_noise_jacobian(x, t, prompt, gamma_fwd)
            r = e - model.cfg_noise(x, t, prompt, gamma_fwd)
            return 2.0 * (r - root_one_minus_a * (jac.T @ r))

        rate = strategy.rate
        f_cur = objective(eps)
        for _ in range(strategy.steps):
            g = gradient(eps)
            trial = eps - rate * g
            f_trial = objective(trial)
            halvings = 0
            while f_trial > f_cur and halvings < 30:
                rate *= 0.5
                trial = eps - rate * g
                f_trial = objective(trial)
                halvings += 1
            if f_trial <= f_cur:
                eps, f_cur = trial, f_trial
            _guard(eps, strategy)
        return eps, None

    raise TypeError(f"unknown strategy {strategy!r}")


def add_entropy(
    kappa: np.ndarray, t: float, term: EntropyTerm, rng: np.random.Generator, schedule
) -> np.ndarray:
    """Perturb a solved noise vector: kappa + weight * sqrt(1 - alpha(t)) * fresh Gaussian."""
    kappa = np.asarray(kappa, dtype=float)
    if not term.enabled or term.weight == 0.0:
        return kappa
    a = alpha_at(schedule, t)
    return kappa + term.weight * math.sqrt(1.0 - a) * rng.standard_normal(kappa.size)


@dataclass(frozen=True)
class SweepRow:
    strategy: str
    t: float
    mean_residual: float
    std_residual: float
    diverged_fraction: float


def residual_sweep(
    strategies: list[KappaStrategy],
    t_grid,
    model,
    prompt: Prompt,
    gamma_fwd: float,
    n_samples: int,
    rng: np.random.Generator,
) -> list[SweepRow]:
    """Mean and spread of the consistency residual per (strategy, time).

    For each cell, n_samples clean points are drawn from the data mixture,
    the strategy solves a noise vector for each, and the rescaled residual is
    recorded.  Diverged solves are excluded from the statistics and counted
    in ``diverged_fraction``.
    """
    rows: list[SweepRow] = []
    for strategy in strategies:
        for t in np.asarray(t_grid.times if hasattr(t_grid, "times") else t_grid, dtype=float):
            t = float(t)
            x0s = model.sample_x0(n_samples, prompt, rng)
            residuals: list[float] = []
            diverged = 0
            for x0 in x0s:
                try:
                    eps = solve_kappa(x0, t, model, prompt, strategy, gamma_fwd, rng)
                except KappaDivergenceError:
                    diverged += 1
                    continue
                residuals.append(fixed_point_residual(x0, eps, t, model, prompt, gamma_fwd))
            if residuals:
                arr = np.array(residuals)
                mean = float(arr.mean())
                std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
            else:
                mean, std = float("nan"), float("nan")
            rows.append(SweepRow(strategy.label, t, mean, std, diverged / n_samples))
    return rows
