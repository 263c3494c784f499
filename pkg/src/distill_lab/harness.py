"""Experiment orchestration: plain-text configs, named suites, CSV/SVG reports.

Every suite is deterministic given (config, seed): tables are emitted with a
stable float formatting and the manifest records a hash of the normalized
config, so reruns are byte-identical.  Unknown configuration keys fail loudly
and exhaustively rather than being silently ignored.
"""

from __future__ import annotations

import configparser
import hashlib
import io
import os
from dataclasses import dataclass, field

import numpy as np

from . import charts
from .distill import GuidanceConfig, run_distillation
from .kappa import (
    DdimInversion,
    ExactGaussian,
    FixedPointIteration,
    GradientDescent,
    RandomFixed,
    RandomResampled,
    residual_sweep,
)
from .oracle import Component, MixtureModel, Prompt, mixture_from_config
from .renderer import (
    IdentityRenderer,
    TomographicRenderer,
    canvas_csv_text,
    canvas_pgm_text,
    make_template,
)
from .reparam import equivalence_check, ode_identity_check
from .sampler import ddim_invert, ddim_sample
from .schedule import T_CLEAN_EPS, Schedule, make_grid, sigma_at

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "Table",
    "ReportBundle",
    "run_experiment",
    "emit_report",
    "EXPERIMENT_NAMES",
    "demo_mixture_2d",
    "multimodal_mixture_8d",
    "single_gaussian_1d",
    "tomographic_mixture",
    "builtin_model",
    "strategy_from_name",
    "CFG_INVERSION_STRATEGIES",
]

EXPERIMENT_NAMES = (
    "equivalence",
    "residual-sweep",
    "cfg-inversion-sweep",
    "inversion-steps",
    "ode-check",
    "distill-compare",
    "roundtrip-2d",
)

# The four (gamma_inv, gamma_fwd) pairings compared for inversion quality.
CFG_INVERSION_STRATEGIES = ((7.5, 7.5), (0.0, 0.0), (0.0, 7.5), (-7.5, 7.5))


class ConfigError(ValueError):
    """Invalid or unknown experiment configuration content."""


# -- built-in data models ------------------------------------------------------


def single_gaussian_1d(
    mean: float = 0.5, variance: float = 1.0, schedule: Schedule | None = None
) -> MixtureModel:
    """One-component 1D model; the closed-form reference lives here."""
    return MixtureModel(
        components=(Component(weight=1.0, variance=variance, label="point", mean=np.array([mean])),),
        dimension=1,
        schedule=schedule or Schedule(),
    )


def demo_mixture_2d(schedule: Schedule | None = None) -> MixtureModel:
    """Two separated blobs in 2D with distinct labels; prompts select one."""
    return MixtureModel(
        components=(
            Component(weight=1.0, variance=0.16, label="left", mean=np.array([-1.2, 0.0])),
            Component(weight=1.0, variance=0.16, label="right", mean=np.array([1.2, 0.6])),
        ),
        dimension=2,
        schedule=schedule or Schedule(),
    )


def multimodal_mixture_8d(schedule: Schedule | None = None) -> MixtureModel:
    """Four well-separated modes in 8D, two per label; conditioning is informative."""
    rng = np.random.default_rng(20240517)
    means = rng.normal(scale=1.6, size=(4, 8))
    comps = []
    for k, label in enumerate(("even", "even", "odd", "odd")):
        comps.append(
            Component(weight=0.5, variance=0.09, label=label, mean=means[k])
        )
    return MixtureModel(components=tuple(comps), dimension=8, schedule=schedule or Schedule())


def tomographic_mixture(
    n: int = 64,
    variance: float = 0.0025,
    n_buckets: int = 360,
    schedule: Schedule | None = None,
    names: tuple[str, ...] = ("disk", "square", "annulus", "two-bars"),
) -> MixtureModel:
    """View-conditioned model: one component per template, means are its projections."""
    comps = []
    for name in names:
        table = _template_projection_cached(name, n, n_buckets)
        comps.append(Component(weight=1.0, variance=variance, label=name, view_means=table))
    return MixtureModel(components=tuple(comps), dimension=n, schedule=schedule or Schedule())


_projection_cache: dict[tuple[str, int, int], np.ndarray] = {}


def _template_projection_cached(name: str, n: int, n_buckets: int) -> np.ndarray:
    from .renderer import template_projection_table

    key = (name, n, n_buckets)
    if key not in _projection_cache:
        _projection_cache[key] = template_projection_table(make_template(name, n), n_buckets)
    return _projection_cache[key]


def builtin_model(name: str, schedule: Schedule | None = None) -> tuple[MixtureModel, Prompt]:
    """Named data models used by the suites; returns (model, default prompt)."""
    if name == "gaussian-1d":
        return single_gaussian_1d(schedule=schedule), Prompt("point")
    if name == "demo-2d":
        return demo_mixture_2d(schedule=schedule), Prompt("left")
    if name == "multimodal-8d":
        return multimodal_mixture_8d(schedule=schedule), Prompt("even")
    if name == "tomo-64":
        return tomographic_mixture(schedule=schedule), Prompt("disk", view=0.0)
    raise ConfigError(f"unknown builtin model {name!r}")


def strategy_from_name(name: str, gamma_inv: float = -7.5):
    name = name.strip()
    if name == "random-resampled":
        return RandomResampled()
    if name == "random-fixed":
        return RandomFixed()
    if name == "fixed-point":
        return FixedPointIteration()
    if name == "gradient-descent":
        return GradientDescent()
    if name == "ddim-inversion":
        return DdimInversion(gamma_inv=gamma_inv)
    if name == "exact-gaussian":
        return ExactGaussian()
    raise ConfigError(f"unknown kappa strategy {name!r}")


# -- configuration -------------------------------------------------------------

_SCHEMA: dict[str, set[str]] = {
    "experiment": {"name", "seed", "out"},
    "schedule": {"beta_start", "beta_end", "n_train_steps"},
    "model": {"builtin", "prompt"},
    "mixture": {"dimension", "view_buckets"},
    "grid": {"t_min", "t_max", "t_points", "samples"},
    "guidance": {"gamma", "gamma_inv", "strategies", "entropy_weight", "entropy_enabled"},
    "sampling": {"steps", "trajectories", "t_max", "t_min"},
    "inversion": {"step_counts", "t_target"},
    "ode": {"steps", "t_start", "fd_step", "tolerance"},
    "distill": {"iters", "lr", "template", "renderer", "modes", "canvas_n"},
    "roundtrip": {"step_counts", "t_target"},
    "report": {"svg"},
}
_COMPONENT_KEYS = {"weight", "mean", "variance", "label"}


@dataclass
class ExperimentConfig:
    """Parsed, validated experiment description plus its normalized text."""

    name: str
    seed: int
    out_dir: str
    cp: configparser.ConfigParser = field(repr=False)
    normalized: str = field(repr=False, default="")

    @staticmethod
    def from_text(text: str, overrides: dict[str, str] | None = None) -> "ExperimentConfig":
        cp = configparser.ConfigParser()
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse configuration: {exc}") from exc
        for key, value in (overrides or {}).items():
            if not cp.has_section("experiment"):
                cp.add_section("experiment")
            cp.set("experiment", key, value)
        _validate(cp)
        name = cp.get("experiment", "name")
        if name not in EXPERIMENT_NAMES:
            raise ConfigError(
                f"unknown experiment {name!r}; expected one of {', '.join(EXPERIMENT_NAMES)}"
            )
        if not cp.has_option("experiment", "seed"):
            raise ConfigError("experiment.seed is mandatory")
        seed = cp.getint("experiment", "seed")
        out_dir = cp.get("experiment", "out", fallback="report")
        buf = io.StringIO()
        cp.write(buf)
        return ExperimentConfig(name=name, seed=seed, out_dir=out_dir, cp=cp, normalized=buf.getvalue())

    @staticmethod
    def from_file(path: str, overrides: dict[str, str] | None = None) -> "ExperimentConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return ExperimentConfig.from_text(fh.read(), overrides)

    @staticmethod
    def default(name: str, seed: int, out_dir: str = "report") -> "ExperimentConfig":
        return ExperimentConfig.from_text(
            f"[experiment]\nname = {name}\nseed = {seed}\nout = {out_dir}\n"
        )

    # typed accessors with experiment defaults
    def get(self, section: str, key: str, fallback):
        if self.cp.has_option(section, key):
            raw = self.cp.get(section, key)
            if isinstance(fallback, bool):
                return raw.strip().lower() in ("1", "true", "yes", "on")
            if isinstance(fallback, int):
                return int(raw)
            if isinstance(fallback, float):
                return float(raw)
            return raw
        return fallback

    def schedule(self) -> Schedule:
        return Schedule(
            beta_start=self.get("schedule", "beta_start", 0.00085),
            beta_end=self.get("schedule", "beta_end", 0.012),
            n_train_steps=self.get("schedule", "n_train_steps", 1000),
        )

    def model_and_prompt(self) -> tuple[MixtureModel, Prompt]:
        schedule = self.schedule()
        if self.cp.has_section("mixture"):
            model = mixture_from_config(self.cp, schedule)
            prompt_tag = self.get("model", "prompt", model.labels[0])
            return model, Prompt(prompt_tag if prompt_tag != "null" else None)
        default_builtin = {
            "equivalence": "demo-2d",
            "residual-sweep": "multimodal-8d",
            "cfg-inversion-sweep": "multimodal-8d",
            "inversion-steps": "multimodal-8d",
            "ode-check": "gaussian-1d",
            "distill-compare": "tomo-64",
            "roundtrip-2d": "demo-2d",
        }[self.name]
        builtin = self.get("model", "builtin", default_builtin)
        model, prompt = builtin_model(builtin, schedule)
        tag = self.get("model", "prompt", prompt.tag)
        return model, Prompt(None if tag == "null" else tag, view=prompt.view)


def _validate(cp: configparser.ConfigParser) -> None:
    problems: list[str] = []
    if not cp.has_section("experiment"):
        raise ConfigError("configuration needs an [experiment] section")
    for section in cp.sections():
        if section.startswith("component."):
            allowed = _COMPONENT_KEYS
        elif section in _SCHEMA:
            allowed = _SCHEMA[section]
        else:
            problems.append(f"[{section}] (unknown section)")
            continue
        for key in cp[section]:
            if key not in allowed:
                problems.append(f"{section}.{key}")
    if problems:
        raise ConfigError("unknown configuration keys: " + ", ".join(sorted(problems)))


# -- report bundle -------------------------------------------------------------


@dataclass
class Table:
    name: str
    header: tuple[str, ...]
    rows: list[tuple]


@dataclass
class ChartSpec:
    name: str
    title: str
    xlabel: str
    ylabel: str
    series: dict[str, tuple[np.ndarray, np.ndarray]]
    logy: bool = False


@dataclass
class ReportBundle:
    experiment: str
    seed: int
    config_text: str
    tables: list[Table]
    charts: list[ChartSpec] = field(default_factory=list)
    passed: bool = True
    notes: list[str] = field(default_factory=list)
    extra_files: dict[str, bytes] = field(default_factory=dict)

    @property
    def config_sha256(self) -> str:
        return hashlib.sha256(self.config_text.encode("utf-8")).hexdigest()


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def emit_report(bundle: ReportBundle, path: str, svg: bool = False) -> list[str]:
    """Write the bundle under ``path``; returns the relative file names written."""
    os.makedirs(path, exist_ok=True)
    written: list[str] = []
    for table in bundle.tables:
        fname = f"{table.name}.csv"
        target = os.path.join(path, fname)
        try:
            with open(target, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(",".join(table.header) + "\n")
                for row in table.rows:
                    fh.write(",".join(_fmt(v) for v in row) + "\n")
        except OSError as exc:
            raise OSError(f"cannot write report table to {target}: {exc}") from exc
        written.append(fname)
    if svg:
        for chart in bundle.charts:
            fname = f"{chart.name}.svg"
            with open(os.path.join(path, fname), "w", encoding="utf-8", newline="\n") as fh:
                fh.write(
                    charts.line_chart_svg(
                        chart.series, chart.title, chart.xlabel, chart.ylabel, chart.logy
                    )
                )
            written.append(fname)
    for fname, blob in bundle.extra_files.items():
        with open(os.path.join(path, fname), "wb") as fh:
            fh.write(blob)
        written.append(fname)
    manifest = [
        "# distill-lab report manifest",
        f"experiment = {bundle.experiment}",
        f"seed = {bundle.seed}",
        f"passed = {'true' if bundle.passed else 'false'}",
        f"config_sha256 = {bundle.config_sha256}",
        f"distill_lab_version = {_version()}",
        f"numpy_version = {np.__version__}",
        "",
        "[config]",
        bundle.config_text.rstrip("\n"),
    ]
    if bundle.notes:
        manifest.insert(7, "notes = " + " | ".join(bundle.notes))
    with open(os.path.join(path, "manifest.txt"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(manifest) + "\n")
    written.append("manifest.txt")
    return written


def _version() -> str:
    try:
        from importlib.metadata import version

        return version("distill-lab")
    except Exception:
        return "unknown"


# -- named experiments ----------------------------------------------------------


def run_experiment(config: ExperimentConfig) -> ReportBundle:
    runner = {
        "equivalence": _run_equivalence,
        "residual-sweep": _run_residual_sweep,
        "cfg-inversion-sweep": _run_cfg_inversion_sweep,
        "inversion-steps": _run_inversion_steps,
        "ode-check": _run_ode_check,
        "distill-compare": _run_distill_compare,
        "roundtrip-2d": _run_roundtrip_2d,
    }[config.name]
    return runner(config)


def _bundle(config: ExperimentConfig) -> ReportBundle:
    return ReportBundle(
        experiment=config.name, seed=config.seed, config_text=config.normalized, tables=[]
    )


def _noisy_start(model, prompt, t_max: float, rng: np.random.Generator) -> np.ndarray:
    """Draw x_bar(t_max) from the exact noisy marginal of the data model."""
    x0 = model.sample_x0(1, prompt, rng)[0]
    return x0 + sigma_at(model.schedule, t_max) * rng.standard_normal(model.dimension)


def _run_equivalence(config: ExperimentConfig) -> ReportBundle:
    model, prompt = config.model_and_prompt()
    gamma = config.get("guidance", "gamma", 7.5)
    steps = config.get("sampling", "steps", 30)
    n_traj = config.get("sampling", "trajectories", 20)
    t_max = config.get("sampling", "t_max", 1.0)
    rng = np.random.default_rng(config.seed)
    grid = make_grid(steps, t_max, T_CLEAN_EPS)
    rows = []
    worst = 0.0
    for k in range(n_traj):
        x_bar = _noisy_start(model, prompt, t_max, rng)
        traj = ddim_sample(x_bar, grid, model, prompt, gamma)
        report = equivalence_check(traj, model, prompt, gamma)
        worst = max(worst, report.max_abs_deviation)
        rows.append((k, report.max_abs_deviation, report.passed))
    bundle = _bundle(config)
    bundle.tables.append(Table("equivalence", ("trajectory", "max_abs_deviation", "passed"), rows))
    bundle.passed = worst <= 1e-10
    bundle.notes.append(f"max deviation {worst:.3e} over {n_traj} trajectories")
    return bundle


def _sweep_grid(config: ExperimentConfig) -> np.ndarray:
    t_min = config.get("grid", "t_min", 0.05)
    t_max = config.get("grid", "t_max", 0.98)
    t_points = config.get("grid", "t_points", 10)
    return np.linspace(t_min, t_max, t_points)


def _run_residual_sweep(config: ExperimentConfig) -> ReportBundle:
    model, prompt = config.model_and_prompt()
    gamma = config.get("guidance", "gamma", 7.5)
    gamma_inv = config.get("guidance", "gamma_inv", -gamma)
    names = config.get(
        "guidance",
        "strategies",
        "random-resampled, random-fixed, fixed-point, gradient-descent, ddim-inversion",
    )
    strategies = [strategy_from_name(n, gamma_inv) for n in names.split(",")]
    samples = config.get("grid", "samples", 64)
    ts = _sweep_grid(config)
    rng = np.random.default_rng(config.seed)
    rows_raw = residual_sweep(strategies, ts, model, prompt, gamma, samples, rng)
    rows = [
        (r.strategy, r.t, r.mean_residual, r.std_residual, r.diverged_fraction) for r in rows_raw
    ]
    bundle = _bundle(config)
    bundle.tables.append(
        Table(
            "residuals",
            ("strategy", "t", "mean_residual", "std_residual", "diverged_fraction"),
            rows,
        )
    )
    series: dict[str, tuple[np.ndarray, np.ndarray]] = {}
    for strategy in strategies:
        pick = [r for r in rows_raw if r.strategy == strategy.label]
        series[strategy.label] = (
            np.array([r.t for r in pick]),
            np.array([r.mean_residual for r in pick]),
        )
    bundle.charts.append(
        ChartSpec("residuals", "noise residual by strategy", "t", "residual", series, logy=True)
    )
    return bundle


def _run_cfg_inversion_sweep(config: ExperimentConfig) -> ReportBundle:
    model, prompt = config.model_and_prompt()
    samples = config.get("grid", "samples", 64)
    ts = _sweep_grid(config)
    rng = np.random.default_rng(config.seed)
    rows = []
    series: dict[str, tuple[np.ndarray, np.ndarray]] = {}
    for gamma_inv, gamma_fwd in CFG_INVERSION_STRATEGIES:
        means = []
        for t in ts:
            sweep = residual_sweep(
                [DdimInversion(gamma_inv=gamma_inv)],
                np.array([t]),
                model,
                prompt,
                gamma_fwd,
                samples,
                rng,
            )[0]
            rows.append(
                (gamma_inv, gamma_fwd, sweep.t, sweep.mean_residual, sweep.std_residual,
                 sweep.diverged_fraction)
            )
            means.append(sweep.mean_residual)
        series[f"inv={gamma_inv:g} fwd={gamma_fwd:g}"] = (ts, np.array(means))
    bundle = _bundle(config)
    bundle.tables.append(
        Table(
            "cfg_inversion",
            ("gamma_inv", "gamma_fwd", "t", "mean_residual", "std_residual", "diverged_fraction"),
            rows,
        )
    )
    bundle.charts.append(
        ChartSpec(
            "cfg_inversion", "inversion guidance pairings", "t", "residual", series, logy=True
        )
    )
    return bundle


def _run_inversion_steps(config: ExperimentConfig) -> ReportBundle:
    model, prompt = config.model_and_prompt()
    gamma = config.get("guidance", "gamma", 7.5)
    gamma_inv = config.get("guidance", "gamma_inv", -gamma)
    counts = [int(s) for s in config.get("inversion", "step_counts", "1, 2, 5, 10, 20").split(",")]
    samples = config.get("grid", "samples", 64)
    ts = _sweep_grid(config)
    rng = np.random.default_rng(config.seed)
    rows = []
    means = []
    for n in counts:
        sweep = residual_sweep(
            [DdimInversion(gamma_inv=gamma_inv, step_rule=n)],
            ts,
            model,
            prompt,
            gamma,
            samples,
            rng,
        )
        mean = float(np.mean([r.mean_residual for r in sweep]))
        std = float(np.mean([r.std_residual for r in sweep]))
        evals = n * (1 if gamma_inv == 0.0 else 2)
        rows.append((n, mean, std, evals))
        means.append(mean)
    bundle = _bundle(config)
    bundle.tables.append(
        Table(
            "inversion_steps",
            ("n_steps", "mean_residual", "std_residual", "denoiser_evals_per_solve"),
            rows,
        )
    )
    bundle.charts.append(
        ChartSpec(
            "inversion_steps",
            "residual versus inversion steps",
            "steps",
            "residual",
            {"residual": (np.array(counts, dtype=float), np.array(means))},
            logy=True,
        )
    )
    monotone = all(means[i + 1] <= means[i] * 1.05 for i in range(len(means) - 1))
    bundle.notes.append(f"residual non-increasing in steps: {monotone}")
    return bundle


def _run_ode_check(config: ExperimentConfig) -> ReportBundle:
    model, prompt = config.model_and_prompt()
    gamma = config.get("guidance", "gamma", 1.0)
    steps = config.get("ode", "steps", 500)
    t_start = config.get("ode", "t_start", 0.95)
    fd_step = config.get("ode", "fd_step", 1e-4)
    tolerance = config.get("ode", "tolerance", 1e-3)
    rng = np.random.default_rng(config.seed)
    grid = make_grid(steps, t_start, T_CLEAN_EPS)
    x_bar = _noisy_start(model, prompt, t_start, rng)
    traj = ddim_sample(x_bar, grid, model, prompt, gamma)
    report = ode_identity_check(traj, model, prompt, gamma, fd_step)
    bundle = _bundle(config)
    bundle.tables.append(
        Table(
            "ode_identity",
            ("t", "rel_error"),
            list(zip(report.times, report.per_point)),
        )
    )
    bundle.charts.append(
        ChartSpec(
            "ode_identity",
            "velocity identity error",
            "t",
            "relative error",
            {"rel_error": (report.times, report.per_point)},
            logy=True,
        )
    )
    bundle.passed = report.max_rel_error <= tolerance
    bundle.notes.append(f"max relative error {report.max_rel_error:.3e} (tolerance {tolerance:g})")
    return bundle


def _run_distill_compare(config: ExperimentConfig) -> ReportBundle:
    schedule = config.schedule()
    template_name = config.get("distill", "template", "disk")
    renderer_kind = config.get("distill", "renderer", "tomo")
    n_iters = config.get("distill", "iters", 2000)
    lr = config.get("distill", "lr", 1e-2)
    canvas_n = config.get("distill", "canvas_n", 64)
    gamma = config.get("guidance", "gamma", 7.5)
    gamma_inv = config.get("guidance", "gamma_inv", -gamma)
    modes = [m.strip() for m in config.get("distill", "modes", "sds, sdi").split(",")]

    if renderer_kind == "tomo":
        model = tomographic_mixture(n=canvas_n, schedule=schedule)
        prompt = Prompt(template_name, view=0.0)
        renderer = TomographicRenderer(canvas_n)
        reference = make_template(template_name, canvas_n).grid
    elif renderer_kind == "identity":
        model, prompt = builtin_model(config.get("model", "builtin", "demo-2d"), schedule)
        renderer = IdentityRenderer(model.dimension)
        reference = None
    else:
        raise ConfigError(f"unknown renderer {renderer_kind!r}")

    bundle = _bundle(config)
    summary_rows = []
    for mode in modes:
        if mode == "sds":
            guidance = GuidanceConfig.sds(gamma=gamma)
        elif mode == "sdi":
            guidance = GuidanceConfig.sdi(gamma_fwd=gamma, gamma_inv=gamma_inv)
        elif mode == "ism":
            guidance = GuidanceConfig.ism(gamma_fwd=gamma)
        else:
            raise ConfigError(f"unknown distillation mode {mode!r}")
        rng = np.random.default_rng(config.seed)
        record = run_distillation(
            guidance,
            renderer,
            model,
            prompt,
            n_iters=n_iters,
            learning_rate=lr,
            rng=rng,
            reference_field=reference,
        )
        iters = np.arange(record.n_iters)
        bundle.tables.append(
            Table(
                f"run_{mode}",
                ("iteration", "t", "tau", "angle", "guidance_rms", "residual", "rel_error",
                 "skipped"),
                list(
                    zip(
                        iters,
                        record.t,
                        record.tau,
                        record.angle,
                        record.guidance_rms,
                        record.residual,
                        record.rel_error,
                        record.skipped,
                    )
                ),
            )
        )
        final_err = (
            float(record.rel_error[~np.isnan(record.rel_error)][-1])
            if reference is not None
            else float("nan")
        )
        summary_rows.append(
            (mode, final_err, float(np.nanmean(record.residual)), float(record.skipped.mean()))
        )
        if renderer_kind == "tomo":
            bundle.extra_files[f"canvas_{mode}.csv"] = canvas_csv_text(record.final_params).encode()
            bundle.extra_files[f"canvas_{mode}.pgm"] = canvas_pgm_text(record.final_params).encode()
        if reference is not None:
            keep = ~np.isnan(record.rel_error)
            bundle.charts.append(
                ChartSpec(
                    f"rel_error_{mode}",
                    f"{mode} reconstruction error",
                    "iteration",
                    "relative error",
                    {mode: (iters[keep].astype(float), record.rel_error[keep])},
                )
            )
    bundle.tables.insert(
        0,
        Table(
            "summary",
            ("mode", "final_rel_error", "mean_residual", "skipped_fraction"),
            summary_rows,
        ),
    )
    return bundle


def _run_roundtrip_2d(config: ExperimentConfig) -> ReportBundle:
    model, prompt = config.model_and_prompt()
    steps = [int(s) for s in config.get("roundtrip", "step_counts", "50").split(",")]
    t_target = config.get("roundtrip", "t_target", 1.0)
    samples = config.get("grid", "samples", 32)
    rng = np.random.default_rng(config.seed)
    rows = []
    for gamma_inv, gamma_fwd in CFG_INVERSION_STRATEGIES:
        for n in steps:
            errors = []
            x0s = model.sample_x0(samples, prompt, rng)
            for x0 in x0s:
                state, _ = ddim_invert(x0, t_target, n, model, prompt, gamma_inv)
                grid = make_grid(n, t_target, 0.0)
                traj = ddim_sample(state.x_bar, grid, model, prompt, gamma_fwd)
                errors.append(float(np.linalg.norm(traj.states[-1].x_bar - x0)))
            arr = np.array(errors)
            rows.append((gamma_inv, gamma_fwd, n, float(arr.mean()), float(arr.std(ddof=1))))
    bundle = _bundle(config)
    bundle.tables.append(
        Table(
            "roundtrip",
            ("gamma_inv", "gamma_fwd", "n_steps", "mean_error", "std_error"),
            rows,
        )
    )
    return bundle
