"""Prompt-conditioned Gaussian-mixture data model with an exact denoiser.

The mixture stands in for a trained noise-prediction network: because the
data distribution is an explicit Gaussian mixture, the posterior mean of the
clean sample given a noisy one is available in closed form, and the implied
noise prediction is the exact minimizer of the denoising score-matching loss.
Classifier-free guidance combines the conditional and unconditional branches
of the same model.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field

import numpy as np

from .schedule import Schedule, alpha_at

__all__ = [
    "Prompt",
    "NULL_PROMPT",
    "Component",
    "MixtureModel",
    "posterior_mean",
    "predict_noise",
    "cfg_noise",
    "load_mixture",
    "mixture_from_config",
]

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class Prompt:
    """Conditioning request: ``tag=None`` is the unconditional branch.

    ``view`` carries a camera angle for view-conditioned components; it is
    kept on unconditional prompts too, since the camera is part of the query
    even when the class label is marginalized out.
    """

    tag: str | None = None
    view: float | None = None

    def unconditioned(self) -> "Prompt":
        return Prompt(tag=None, view=self.view)


NULL_PROMPT = Prompt()


@dataclass(frozen=True)
class Component:
    """One isotropic Gaussian component of the data mixture.

    Exactly one of ``mean`` / ``view_means`` is set.  ``view_means`` holds one
    mean per angle bucket for view-conditioned data (row i is the mean for
    bucket i of a uniform subdivision of [0, 2pi)).
    """

    weight: float
    variance: float
    label: str
    mean: np.ndarray | None = None
    view_means: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.weight <= 0.0:
            raise ValueError("component weight must be positive")
        if self.variance <= 0.0:
            raise ValueError("component variance must be positive")
        if (self.mean is None) == (self.view_means is None):
            raise ValueError("give exactly one of mean / view_means")
        if self.mean is not None:
            object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float))
        else:
            object.__setattr__(self, "view_means", np.asarray(self.view_means, dtype=float))

    @property
    def dim(self) -> int:
        if self.mean is not None:
            return self.mean.size
        return self.view_means.shape[1]

    def mean_for(self, prompt: Prompt) -> np.ndarray:
        if self.mean is not None:
            return self.mean
        if prompt.view is None:
            raise ValueError(
                f"component '{self.label}' is view-conditioned; prompt must carry a view angle"
            )
        n_buckets = self.view_means.shape[0]
        idx = int(np.floor((prompt.view % TWO_PI) / TWO_PI * n_buckets + 0.5)) % n_buckets
        return self.view_means[idx]


@dataclass(frozen=True)
class MixtureModel:
    """Gaussian mixture bound to a noise schedule.

    All queries are pure; the model is safe to share across threads.  Noising
    a component N(mu, s^2 I) to level t gives the Gaussian marginal
    N(sqrt(a) mu, (a s^2 + 1 - a) I) with a = alpha(t); responsibilities are
    computed in the log domain so queries stay stable near t = 0.
    """

    components: tuple[Component, ...]
    dimension: int
    schedule: Schedule = field(default_factory=Schedule)

    def __post_init__(self) -> None:
        comps = tuple(self.components)
        if not comps:
            raise ValueError("mixture needs at least one component")
        for c in comps:
            if c.dim != self.dimension:
                raise ValueError(
                    f"component '{c.label}' has dimension {c.dim}, expected {self.dimension}"
                )
        totals: dict[str, float] = {}
        for c in comps:
            totals[c.label] = totals.get(c.label, 0.0) + c.weight
        for label, total in totals.items():
            if abs(total - 1.0) > 1e-9:
                raise ValueError(f"weights for label '{label}' sum to {total}, expected 1")
        object.__setattr__(self, "components", comps)

    @property
    def labels(self) -> tuple[str, ...]:
        seen: list[str] = []
        for c in self.components:
            if c.label not in seen:
                seen.append(c.label)
        return tuple(seen)

    # -- branch selection ---------------------------------------------------

    def _branch(self, prompt: Prompt) -> tuple[list[Component], np.ndarray]:
        """Components and normalized weights for a prompt.

        The unconditional branch marginalizes over all labels with a uniform
        label prior (per-label weights each sum to one, so dividing by the
        grand total is exactly that prior).
        """
        if prompt.tag is None:
            comps = list(self.components)
        else:
            comps = [c for c in self.components if c.label == prompt.tag]
            if not comps:
                raise ValueError(f"no components labeled '{prompt.tag}'")
        w = np.array([c.weight for c in comps])
        return comps, w / w.sum()

    def _noisy_stats(self, x: np.ndarray, t: float, prompt: Prompt):
        """Per-component responsibilities and linear-posterior factors at level t."""
        x = self._check_x(x)
        a = alpha_at(self.schedule, float(t))
        comps, weights = self._branch(prompt)
        root_a = math.sqrt(a)
        means = np.stack([c.mean_for(prompt) for c in comps])          # (K, D)
        variances = np.array([c.variance for c in comps])              # (K,)
        v = a * variances + (1.0 - a)                                  # noisy marginal variances
        d = x[None, :] - root_a * means                                # (K, D)
        sq = np.einsum("kd,kd->k", d, d)
        log_lik = -0.5 * sq / v - 0.5 * self.dimension * np.log(TWO_PI * v)
        log_resp = np.log(weights) + log_lik
        log_resp_norm = log_resp - _logsumexp(log_resp)
        resp = np.exp(log_resp_norm)
        return a, root_a, means, variances, v, d, resp, log_resp

    def _check_x(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dimension,):
            raise ValueError(f"expected a vector of length {self.dimension}, got shape {x.shape}")
        return x

    # -- denoiser queries ---------------------------------------------------

    def posterior_mean(self, x: np.ndarray, t: float, prompt: Prompt = NULL_PROMPT) -> np.ndarray:
        """E[x0 | x(t) = x, prompt]: responsibility-weighted per-component conditional means."""
        a, root_a, means, variances, v, d, resp, _ = self._noisy_stats(x, t, prompt)
        gain = root_a * variances / v                                  # (K,)
        cond_means = means + gain[:, None] * d                         # (K, D)
        return resp @ cond_means

    def predict_noise(self, x: np.ndarray, t: float, prompt: Prompt = NULL_PROMPT) -> np.ndarray:
        """Exact noise prediction (x - sqrt(a) * posterior_mean) / sqrt(1 - a); rejects t = 0."""
        t = float(t)
        if t <= 0.0:
            raise ValueError("noise prediction is undefined at t = 0 (zero noise scale)")
        a, root_a, means, variances, v, d, resp, _ = self._noisy_stats(x, t, prompt)
        # (x - sqrt(a) m) collapses to sum_k r_k d_k (1 - a s_k^2 / v_k) = sum_k r_k d_k (1-a)/v_k
        return math.sqrt(1.0 - a) * (resp / v) @ d

    def cfg_noise(self, x: np.ndarray, t: float, prompt: Prompt, gamma: float) -> np.ndarray:
        """Guided prediction: unconditional plus gamma times the conditional delta."""
        if prompt.tag is None:
            if gamma != 0.0:
                raise ValueError("guidance with a null prompt requires gamma = 0")
            return self.predict_noise(x, t, prompt)
        eps_uncond = self.predict_noise(x, t, prompt.unconditioned())
        if gamma == 0.0:
            return eps_uncond
        eps_cond = self.predict_noise(x, t, prompt)
        return eps_uncond + gamma * (eps_cond - eps_uncond)

    def log_density(self, x: np.ndarray, t: float, prompt: Prompt = NULL_PROMPT) -> float:
        """Log density of the mixture noised to level t, evaluated at x."""
        *_, log_resp = self._noisy_stats(x, t, prompt)
        return float(_logsumexp(log_resp))

    def noise_jacobian(self, x: np.ndarray, t: float, prompt: Prompt = NULL_PROMPT) -> np.ndarray:
        """Jacobian of predict_noise with respect to x (symmetric, (D, D))."""
        t = float(t)
        if t <= 0.0:
            raise ValueError("noise prediction is undefined at t = 0")
        a, root_a, means, variances, v, d, resp, _ = self._noisy_stats(x, t, prompt)
        q = d / v[:, None]                                             # (K, D)
        q_bar = resp @ q
        ident = np.eye(self.dimension)
        spread = np.einsum("k,kd,ke->de", resp, q, q) - np.outer(q_bar, q_bar)
        return math.sqrt(1.0 - a) * ((resp / v).sum() * ident - spread)

    def cfg_noise_jacobian(
        self, x: np.ndarray, t: float, prompt: Prompt, gamma: float
    ) -> np.ndarray:
        """Jacobian of cfg_noise with respect to x."""
        if prompt.tag is None:
            if gamma != 0.0:
                raise ValueError("guidance with a null prompt requires gamma = 0")
            return self.noise_jacobian(x, t, prompt)
        j_uncond = self.noise_jacobian(x, t, prompt.unconditioned())
        if gamma == 0.0:
            return j_uncond
        j_cond = self.noise_jacobian(x, t, prompt)
        return j_uncond + gamma * (j_cond - j_uncond)

    def sample_x0(self, n: int, prompt: Prompt, rng: np.random.Generator) -> np.ndarray:
        """Draw n clean samples from the branch selected by the prompt; shape (n, D)."""
        comps, weights = self._branch(prompt)
        idx = rng.choice(len(comps), size=n, p=weights)
        out = np.empty((n, self.dimension))
        for i, k in enumerate(idx):
            c = comps[k]
            out[i] = c.mean_for(prompt) + math.sqrt(c.variance) * rng.standard_normal(
                self.dimension
            )
        return out


def _logsumexp(a: np.ndarray) -> float:
    m = np.max(a)
    return m + np.log(np.sum(np.exp(a - m)))


# -- module-level functional forms -------------------------------------------


def posterior_mean(model: MixtureModel, x, t: float, prompt: Prompt = NULL_PROMPT) -> np.ndarray:
    return model.posterior_mean(x, t, prompt)


def predict_noise(model: MixtureModel, x, t: float, prompt: Prompt = NULL_PROMPT) -> np.ndarray:
    return model.predict_noise(x, t, prompt)


def cfg_noise(model: MixtureModel, x, t: float, prompt: Prompt, gamma: float) -> np.ndarray:
    return model.cfg_noise(x, t, prompt, gamma)


# -- plain-text mixture configuration -----------------------------------------
#
# Format (INI dialect)::
#
#     [mixture]
#     dimension = 2
#     view_buckets = 360          ; only consulted for template references
#
#     [component.left]
#     weight = 0.5
#     mean = -1.0 0.0             ; inline vector, or  template:disk
#     variance = 0.25
#     label = blob

_MIXTURE_KEYS = {"dimension", "view_buckets"}
_COMPONENT_KEYS = {"weight", "mean", "variance", "label"}


def mixture_from_config(
    cp: configparser.ConfigParser, schedule: Schedule | None = None
) -> MixtureModel:
    if not cp.has_section("mixture"):
        raise ValueError("mixture configuration needs a [mixture] section")
    unknown = [f"mixture.{k}" for k in cp["mixture"] if k not in _MIXTURE_KEYS]
    dimension = cp.getint("mixture", "dimension")
    view_buckets = cp.getint("mixture", "view_buckets", fallback=360)

    components: list[Component] = []
    for section in cp.sections():
        if not section.startswith("component."):
            continue
        sec = cp[section]
        unknown += [f"{section}.{k}" for k in sec if k not in _COMPONENT_KEYS]
        missing = _COMPONENT_KEYS - set(sec)
        if missing:
            raise ValueError(f"[{section}] is missing keys: {sorted(missing)}")
        mean_text = sec["mean"].strip()
        kwargs: dict = {
            "weight": float(sec["weight"]),
            "variance": float(sec["variance"]),
            "label": sec["label"].strip(),
        }
        if mean_text.startswith("template:"):
            from . import renderer  # deferred: renderer is a leaf module

            name = mean_text.split(":", 1)[1].strip()
            template = renderer.make_template(name, dimension)
            kwargs["view_means"] = renderer.template_projection_table(template, view_buckets)
        else:
            mean = np.array([float(tok) for tok in mean_text.split()])
            kwargs["mean"] = mean
        components.append(Component(**kwargs))

    if unknown:
        raise ValueError(f"unknown mixture configuration keys: {sorted(unknown)}")
    if not components:
        raise ValueError("mixture configuration defines no [component.*] sections")
    return MixtureModel(
        components=tuple(components),
        dimension=dimension,
        schedule=schedule if schedule is not None else Schedule(),
    )


def load_mixture(text_or_path: str, schedule: Schedule | None = None) -> MixtureModel:
    """Build a mixture from INI text, or from a file path ending in .ini/.cfg."""
    cp = configparser.ConfigParser()
    if text_or_path.endswith((".ini", ".cfg")):
        with open(text_or_path, "r", encoding="utf-8") as fh:
            cp.read_file(fh)
    else:
        cp.read_string(text_or_path)
    return mixture_from_config(cp, schedule)
