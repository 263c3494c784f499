"""Score-distillation driving loops over canvas parameters.

Each iteration renders a view, brings it to a noise level with some noise
vector, takes a guided prediction there, and pulls the scaled difference
between prediction and injected noise back through the renderer.  The plain
variant draws the noise fresh every step; the inversion variant solves for it
so consecutive steps stay on a consistent denoising trajectory.  Updates are
plain gradient descent so noise handling is the only moving part.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .kappa import (
    DdimInversion,
    EntropyTerm,
    KappaDivergenceError,
    KappaStrategy,
    RandomResampled,
    add_entropy,
    solve_kappa_with_state,
)
from .oracle import Prompt
from .reparam import fixed_point_residual
from .schedule import T_CLEAN_EPS, alpha_at, sigma_at

__all__ = [
    "UniformRandomT",
    "LinearAnnealT",
    "UniformTau",
    "FixedTau",
    "CachedPrediction",
    "GuidanceConfig",
    "StepResult",
    "RunRecord",
    "sds_step",
    "sdi_step",
    "run_distillation",
    "guidance_variance_probe",
    "T_LEVEL_MAX",
    "N_VIEW_ANGLES",
]

# Noise solves and renoising stay at or below this level; sigma blows up above it.
T_LEVEL_MAX = 0.98
# Views are drawn from this many discrete angles, matching the data model's buckets.
N_VIEW_ANGLES = 360
TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class UniformRandomT:
    """Draw t uniformly in (0, 1) each iteration (clamped to the usable range)."""


@dataclass(frozen=True)
class LinearAnnealT:
    t_hi: float = 1.0
    t_lo: float = 0.2

    def at(self, i: int, n_iters: int) -> float:
        if n_iters <= 1:
            return self.t_hi
        return self.t_hi + (self.t_lo - self.t_hi) * i / (n_iters - 1)


@dataclass(frozen=True)
class UniformTau:
    max_tau: float = 1.0 / 30.0


@dataclass(frozen=True)
class FixedTau:
    value: float


@dataclass(frozen=True)
class CachedPrediction:
    """Reuse the previous iteration's prediction as the noise term.

    Only meaningful inside a run, where the loop maintains the cache; with an
    identity renderer and unit learning rate the iterates then follow a
    denoising trajectory exactly.
    """

    label = "cached-prediction"


@dataclass(frozen=True)
class GuidanceConfig:
    mode: str  # "sds" | "sdi" | "ism"
    gamma_fwd: float
    kappa_strategy: KappaStrategy | CachedPrediction
    entropy: EntropyTerm
    noise_term: str = "full"  # "full" | "interval"
    t_schedule: UniformRandomT | LinearAnnealT = field(default_factory=UniformRandomT)
    tau_rule: UniformTau | FixedTau = field(default_factory=UniformTau)

    def __post_init__(self) -> None:
        if self.mode not in ("sds", "sdi", "ism"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.noise_term not in ("full", "interval"):
            raise ValueError(f"unknown noise term {self.noise_term!r}")
        if self.mode == "sds":
            if not isinstance(self.kappa_strategy, RandomResampled) or self.noise_term != "full":
                raise ValueError("sds mode requires a fresh random noise term")
        if self.mode == "ism":
            if not isinstance(self.kappa_strategy, DdimInversion) or self.kappa_strategy.gamma_inv != 0.0:
                raise ValueError("ism mode requires unconditional inversion (gamma_inv = 0)")
        if self.noise_term == "interval" and not isinstance(self.kappa_strategy, DdimInversion):
            raise ValueError("the interval noise term requires the inversion strategy")

    @property
    def gamma_inv(self) -> float | None:
        if isinstance(self.kappa_strategy, DdimInversion):
            return self.kappa_strategy.gamma_inv
        return None

    # -- canonical configurations ------------------------------------------

    @staticmethod
    def sds(gamma: float = 100.0) -> "GuidanceConfig":
        return GuidanceConfig(
            mode="sds",
            gamma_fwd=gamma,
            kappa_strategy=RandomResampled(),
            entropy=EntropyTerm(enabled=False),
            noise_term="full",
            t_schedule=UniformRandomT(),
        )

    @staticmethod
    def sdi(
        gamma_fwd: float = 7.5,
        gamma_inv: float = -7.5,
        entropy: EntropyTerm | None = None,
        kappa_strategy: KappaStrategy | CachedPrediction | None = None,
    ) -> "GuidanceConfig":
        return GuidanceConfig(
            mode="sdi",
            gamma_fwd=gamma_fwd,
            kappa_strategy=(
                kappa_strategy if kappa_strategy is not None else DdimInversion(gamma_inv=gamma_inv)
            ),
            entropy=entropy if entropy is not None else EntropyTerm(weight=0.3, enabled=True),
            noise_term="full",
            t_schedule=LinearAnnealT(1.0, 0.2),
        )

    @staticmethod
    def ism(gamma_fwd: float = 7.5) -> "GuidanceConfig":
        return GuidanceConfig(
            mode="ism",
            gamma_fwd=gamma_fwd,
            kappa_strategy=DdimInversion(gamma_inv=0.0),
            entropy=EntropyTerm(enabled=False),
            noise_term="interval",
            t_schedule=LinearAnnealT(1.0, 0.2),
        )


@dataclass(frozen=True)
class StepResult:
    gradient: np.ndarray
    noise: np.ndarray       # the noise vector injected at the render
    prediction: np.ndarray  # the guided prediction at the renoised point


def _renoise(render: np.ndarray, noise: np.ndarray, a: float) -> np.ndarray:
    return math.sqrt(a) * render + math.sqrt(1.0 - a) * noise


def sds_step(
    params: np.ndarray,
    renderer,
    angle: float,
    t: float,
    model,
    prompt: Prompt,
    gamma: float,
    rng: np.random.Generator,
) -> StepResult:
    """Plain score-distillation gradient with a fresh Gaussian noise draw."""
    if not (0.0 < t < 1.0):
        raise ValueError(f"t must lie in (0, 1), got {t}")
    render = renderer.render(params, angle)
    eps = rng.standard_normal(render.size)
    a = alpha_at(model.schedule, t)
    x = _renoise(render, eps, a)
    pred = model.cfg_noise(x, t, prompt, gamma)
    guidance = sigma_at(model.schedule, t) * (pred - eps)
    return StepResult(renderer.pullback(params, angle, guidance), eps, pred)


def sdi_step(
    params: np.ndarray,
    renderer,
    angle: float,
    t: float,
    tau: float,
    model,
    prompt: Prompt,
    config: GuidanceConfig,
    rng: np.random.Generator,
    cached_noise: np.ndarray | None = None,
) -> StepResult:
    """Inversion-style gradient: the noise term is solved at level t + tau.

    Raises KappaDivergenceError when the configured solve aborts; the run
    loop records such iterations as skipped.
    """
    if t <= 0.0 or t + tau > T_LEVEL_MAX:
        raise ValueError(f"need 0 < t and t + tau <= {T_LEVEL_MAX}, got t={t}, tau={tau}")
    render = renderer.render(params, angle)
    level = t + tau

    endpoint = None
    if isinstance(config.kappa_strategy, CachedPrediction):
        if cached_noise is None:
            raise ValueError("cached-prediction steps need the previous prediction")
        kappa = cached_noise
    else:
        kappa, endpoint = solve_kappa_with_state(
            render, level, model, prompt, config.kappa_strategy, config.gamma_fwd, rng
        )
    kappa = add_entropy(kappa, level, config.entropy, rng, model.schedule)

    if config.noise_term == "interval":
        noise_term = model.cfg_noise(
            endpoint.x(model), level, prompt, config.kappa_strategy.gamma_inv
        )
    else:
        noise_term = kappa

    a = alpha_at(model.schedule, t)
    x = _renoise(render, kappa, a)
    pred = model.cfg_noise(x, t, prompt, config.gamma_fwd)
    guidance = sigma_at(model.schedule, t) * (pred - noise_term)
    return StepResult(renderer.pullback(params, angle, guidance), kappa, pred)


@dataclass
class RunRecord:
    """Per-iteration diagnostics plus the final parameters of one run."""

    t: np.ndarray
    tau: np.ndarray
    angle: np.ndarray
    guidance_rms: np.ndarray
    residual: np.ndarray
    rel_error: np.ndarray
    skipped: np.ndarray
    final_params: np.ndarray
    params_trace: list[np.ndarray] | None = None

    @property
    def n_iters(self) -> int:
        return self.t.size


def run_distillation(
    config: GuidanceConfig,
    renderer,
    model,
    prompt: Prompt,
    n_iters: int,
    learning_rate: float = 1e-2,
    rng: np.random.Generator | None = None,
    reference_field: np.ndarray | None = None,
    x_bar_init: np.ndarray | None = None,
    trace_params: bool = False,
) -> RunRecord:
    """Drive canvas parameters by per-view guidance for n_iters iterations.

    The time level follows the configured schedule (fresh uniform draw for the
    plain mode, a linear anneal for inversion modes), the view angle is drawn
    uniformly from the discrete buckets, and tau follows the configured rule.
    ``reference_field`` enables a per-iteration relative error diagnostic;
    ``x_bar_init`` seeds cached-prediction runs.
    """
    if n_iters < 1:
        raise ValueError("n_iters must be at least 1")
    rng = rng if rng is not None else np.random.default_rng(0)
    params = renderer.new_params()

    cached: np.ndarray | None = None
    if isinstance(config.kappa_strategy, CachedPrediction):
        if x_bar_init is None:
            raise ValueError("cached-prediction runs need x_bar_init")
        # Seed the cache and the parameters from the initial noisy state at the
        # first iteration's solve level: params start as its one-step denoising.
        if isinstance(config.tau_rule, FixedTau) and isinstance(config.t_schedule, LinearAnnealT):
            level0 = config.t_schedule.at(0, n_iters) + config.tau_rule.value
        else:
            raise ValueError("cached-prediction runs need a linear anneal and a fixed tau")
        a0 = alpha_at(model.schedule, level0)
        cached = model.cfg_noise(math.sqrt(a0) * x_bar_init, level0, prompt, config.gamma_fwd)
        params = x_bar_init - sigma_at(model.schedule, level0) * cached

    t_rec = np.empty(n_iters)
    tau_rec = np.empty(n_iters)
    angle_rec = np.empty(n_iters)
    guidance_rec = np.full(n_iters, np.nan)
    residual_rec = np.full(n_iters, np.nan)
    rel_err_rec = np.full(n_iters, np.nan)
    skipped = np.zeros(n_iters, dtype=bool)
    trace: list[np.ndarray] | None = [params.copy()] if trace_params else None
    view_conditioned = any(c.view_means is not None for c in getattr(model, "components", ()))

    for i in range(n_iters):
        if isinstance(config.tau_rule, FixedTau):
            tau = config.tau_rule.value
        else:
            tau = rng.uniform(0.0, config.tau_rule.max_tau)
        if isinstance(config.t_schedule, UniformRandomT):
            t = rng.uniform(0.0, 1.0)
        else:
            t = config.t_schedule.at(i, n_iters)
        t = min(t, T_LEVEL_MAX - tau)
        t = max(t, T_CLEAN_EPS)
        angle = TWO_PI * rng.integers(0, N_VIEW_ANGLES) / N_VIEW_ANGLES
        view_prompt = replace(prompt, view=angle) if view_conditioned else prompt

        try:
            if config.mode == "sds":
                step = sds_step(
                    params, renderer, angle, t, model, view_prompt, config.gamma_fwd, rng
                )
                level = t
            else:
                step = sdi_step(
                    params, renderer, angle, t, tau, model, view_prompt, config, rng,
                    cached_noise=cached,
                )
                level = t + tau
                cached = step.prediction
        except KappaDivergenceError:
            skipped[i] = True
            t_rec[i], tau_rec[i], angle_rec[i] = t, tau, angle
            continue

        t_rec[i], tau_rec[i], angle_rec[i] = t, tau, angle
        guidance_rec[i] = float(np.sqrt(np.mean(step.gradient**2)))
        if 0.0 < level < 1.0:
            residual_rec[i] = fixed_point_residual(
                renderer.render(params, angle), step.noise, level, model, view_prompt,
                config.gamma_fwd,
            )

        params = params - learning_rate * step.gradient
        if not np.all(np.isfinite(params)):
            raise FloatingPointError(
                f"canvas became non-finite at iteration {i} (t={t:.4f}, angle={angle:.4f})"
            )

        if reference_field is not None:
            diff = renderer.field(params) - reference_field
            rel_err_rec[i] = float(
                np.linalg.norm(diff) / max(np.linalg.norm(reference_field), 1e-300)
            )
        if trace is not None:
            trace.append(params.copy())

    return RunRecord(
        t=t_rec,
        tau=tau_rec,
        angle=angle_rec,
        guidance_rms=guidance_rec,
        residual=residual_rec,
        rel_error=rel_err_rec,
        skipped=skipped,
        final_params=params,
        params_trace=trace,
    )


def guidance_variance_probe(
    params: np.ndarray,
    renderer,
    angle: float,
    t: float,
    model,
    prompt: Prompt,
    configs: dict[str, GuidanceConfig],
    n_draws: int,
    rng: np.random.Generator,
) -> dict[str, np.ndarray]:
    """Per-coordinate variance of the pulled-back guidance at a fixed canvas.

    Each named configuration is evaluated n_draws times with fresh randomness
    (tau pinned to zero so every draw targets the same level); the result maps
    the name to the per-coordinate variance of the gradient.
    """
    if n_draws < 2:
        raise ValueError("need at least two draws to estimate a variance")
    out: dict[str, np.ndarray] = {}
    for name, config in configs.items():
        grads = []
        for _ in range(n_draws):
            if config.mode == "sds":
                step = sds_step(params, renderer, angle, t, model, prompt, config.gamma_fwd, rng)
            else:
                step = sdi_step(params, renderer, angle, t, 0.0, model, prompt, config, rng)
            grads.append(step.gradient.ravel())
        out[name] = np.var(np.stack(grads), axis=0, ddof=1)
    return out
