"""Command line entry points for sampling, inversion, sweeps, and suites.

Exit codes: 0 on success, 1 when an assertion-style check fails, 2 on
configuration errors.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .distill import GuidanceConfig, run_distillation
from .harness import (
    EXPERIMENT_NAMES,
    ConfigError,
    ExperimentConfig,
    ReportBundle,
    Table,
    builtin_model,
    emit_report,
    run_experiment,
    strategy_from_name,
    tomographic_mixture,
)
from .kappa import residual_sweep
from .oracle import Prompt, load_mixture
from .renderer import (
    IdentityRenderer,
    TomographicRenderer,
    make_template,
    save_canvas_csv,
    save_canvas_pgm,
)
from .reparam import equivalence_check, ode_identity_check
from .sampler import ddim_invert, ddim_sample
from .schedule import T_CLEAN_EPS, make_grid, sigma_at


def _model_args(p: argparse.ArgumentParser) -> None:
    p.add_argument(
        "--mixture",
        default="demo-2d",
        help="builtin model name (demo-2d, multimodal-8d, gaussian-1d, tomo-64) or a .ini path",
    )
    p.add_argument("--prompt", default=None, help="prompt label; 'null' for unconditional")


def _resolve_model(args):
    if args.mixture.endswith((".ini", ".cfg")):
        model = load_mixture(args.mixture)
        prompt = Prompt(model.labels[0])
    else:
        model, prompt = builtin_model(args.mixture)
    if args.prompt is not None:
        prompt = Prompt(None if args.prompt == "null" else args.prompt, view=prompt.view)
    return model, prompt


def _write_trajectory_csv(path: str, traj) -> None:
    dim = traj.states[0].x_bar.size
    header = ["step", "t"] + [f"x{i}" for i in range(dim)]
    lines = [",".join(header)]
    for k, state in enumerate(traj.states):
        cells = [str(k), repr(float(state.t))] + [repr(float(v)) for v in state.x_bar]
        lines.append(",".join(cells))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def _cmd_sample(args) -> int:
    model, prompt = _resolve_model(args)
    rng = np.random.default_rng(args.seed)
    x0 = model.sample_x0(1, prompt, rng)[0]
    x_bar = x0 + sigma_at(model.schedule, args.t_max) * rng.standard_normal(model.dimension)
    grid = make_grid(args.steps, args.t_max, max(args.t_min, T_CLEAN_EPS))
    traj = ddim_sample(x_bar, grid, model, prompt, args.gamma)
    if args.out:
        _write_trajectory_csv(args.out, traj)
    terminal = traj.states[-1].x_bar
    print(f"sampled {args.steps} steps; terminal state {np.array2string(terminal, precision=5)}")
    return 0


def _cmd_invert(args) -> int:
    model, prompt = _resolve_model(args)
    rng = np.random.default_rng(args.seed)
    x0 = model.sample_x0(1, prompt, rng)[0]
    state, noise = ddim_invert(x0, args.t_target, args.steps, model, prompt, args.gamma_inv)
    if args.out:
        header = ["coordinate", "x0", "x_bar_t", "implied_noise"]
        lines = [",".join(header)]
        for i in range(model.dimension):
            lines.append(
                ",".join(
                    [str(i), repr(float(x0[i])), repr(float(state.x_bar[i])), repr(float(noise[i]))]
                )
            )
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
    print(
        f"inverted to t={args.t_target:g} in {args.steps} steps; "
        f"implied noise rms {float(np.sqrt(np.mean(noise**2))):.5f}"
    )
    return 0


def _cmd_residuals(args) -> int:
    model, prompt = _resolve_model(args)
    rng = np.random.default_rng(args.seed)
    strategies = [strategy_from_name(s, args.gamma_inv) for s in args.strategies.split(",")]
    ts = np.linspace(args.t_min, args.t_max, args.t_points)
    rows = residual_sweep(strategies, ts, model, prompt, args.gamma, args.samples, rng)
    header = "strategy,t,mean_residual,std_residual,diverged_fraction"
    lines = [header] + [
        f"{r.strategy},{repr(r.t)},{repr(r.mean_residual)},{repr(r.std_residual)},"
        f"{repr(r.diverged_fraction)}"
        for r in rows
    ]
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        print(f"wrote {len(rows)} rows to {args.out}")
    else:
        print(text, end="")
    return 0


def _cmd_equivalence(args) -> int:
    model, prompt = _resolve_model(args)
    rng = np.random.default_rng(args.seed)
    grid = make_grid(args.steps, 1.0, T_CLEAN_EPS)
    worst = 0.0
    rows = []
    for k in range(args.trajectories):
        x0 = model.sample_x0(1, prompt, rng)[0]
        x_bar = x0 + sigma_at(model.schedule, 1.0) * rng.standard_normal(model.dimension)
        traj = ddim_sample(x_bar, grid, model, prompt, args.gamma)
        report = equivalence_check(traj, model, prompt, args.gamma)
        rows.append((k, report.max_abs_deviation))
        worst = max(worst, report.max_abs_deviation)
    if args.out:
        lines = ["trajectory,max_abs_deviation"] + [f"{k},{repr(d)}" for k, d in rows]
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
    ok = worst <= 1e-10
    print(f"{'PASS' if ok else 'FAIL'}: max deviation {worst:.3e} over {args.trajectories} trajectories")
    return 0 if ok else 1


def _cmd_ode_check(args) -> int:
    model, prompt = _resolve_model(args)
    rng = np.random.default_rng(args.seed)
    grid = make_grid(args.steps, args.t_start, T_CLEAN_EPS)
    x0 = model.sample_x0(1, prompt, rng)[0]
    x_bar = x0 + sigma_at(model.schedule, args.t_start) * rng.standard_normal(model.dimension)
    traj = ddim_sample(x_bar, grid, model, prompt, args.gamma)
    report = ode_identity_check(traj, model, prompt, args.gamma, args.fd_step)
    if args.out:
        lines = ["t,rel_error"] + [
            f"{repr(float(t))},{repr(float(e))}" for t, e in zip(report.times, report.per_point)
        ]
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
    ok = report.max_rel_error <= args.tolerance
    print(f"{'PASS' if ok else 'FAIL'}: max relative error {report.max_rel_error:.3e}")
    return 0 if ok else 1


def _cmd_distill(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    if args.renderer == "tomo":
        model = tomographic_mixture(n=args.canvas_n)
        prompt = Prompt(args.template, view=0.0)
        renderer = TomographicRenderer(args.canvas_n)
        reference = make_template(args.template, args.canvas_n).grid
    else:
        model, prompt = builtin_model(args.mixture if args.mixture != "tomo-64" else "demo-2d")
        renderer = IdentityRenderer(model.dimension)
        reference = None
    if args.mode == "sds":
        config = GuidanceConfig.sds(gamma=args.gamma)
    elif args.mode == "sdi":
        config = GuidanceConfig.sdi(gamma_fwd=args.gamma, gamma_inv=args.gamma_inv)
    else:
        config = GuidanceConfig.ism(gamma_fwd=args.gamma)
    record = run_distillation(
        config,
        renderer,
        model,
        prompt,
        n_iters=args.iters,
        learning_rate=args.lr,
        rng=rng,
        reference_field=reference,
    )
    rows = list(
        zip(
            range(record.n_iters),
            record.t,
            record.tau,
            record.angle,
            record.guidance_rms,
            record.residual,
            record.rel_error,
            record.skipped,
        )
    )
    bundle = ReportBundle(
        experiment="distill",
        seed=args.seed,
        config_text=(
            f"[cli]\nmode = {args.mode}\nrenderer = {args.renderer}\n"
            f"gamma = {args.gamma}\ngamma_inv = {args.gamma_inv}\niters = {args.iters}\n"
            f"lr = {args.lr}\nseed = {args.seed}\n"
        ),
        tables=[
            Table(
                "run",
                ("iteration", "t", "tau", "angle", "guidance_rms", "residual", "rel_error",
                 "skipped"),
                rows,
            )
        ],
    )
    emit_report(bundle, args.out, svg=args.svg)
    if args.renderer == "tomo":
        save_canvas_csv(record.final_params, os.path.join(args.out, "canvas.csv"))
        save_canvas_pgm(record.final_params, os.path.join(args.out, "canvas.pgm"))
    if reference is not None:
        final = record.rel_error[~np.isnan(record.rel_error)]
        err = float(final[-1]) if final.size else float("nan")
        print(f"{args.mode}: final relative error {err:.4f} "
              f"({int(record.skipped.sum())} skipped iterations)")
    else:
        print(f"{args.mode}: finished {record.n_iters} iterations")
    return 0


def _cmd_suite(args) -> int:
    overrides: dict[str, str] = {}
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    if args.out is not None:
        overrides["out"] = args.out
    if args.name is not None:
        overrides["name"] = args.name
    if args.config:
        config = ExperimentConfig.from_file(args.config, overrides)
    else:
        if args.name is None:
            raise ConfigError("suite needs --name or --config")
        config = ExperimentConfig.default(
            args.name, args.seed if args.seed is not None else 0, args.out or "report"
        )
    bundle = run_experiment(config)
    written = emit_report(bundle, config.out_dir, svg=args.svg)
    for note in bundle.notes:
        print(note)
    print(f"{'PASS' if bundle.passed else 'FAIL'}: wrote {', '.join(written)} to {config.out_dir}")
    return 0 if bundle.passed else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="distill-lab",
        description="score distillation and DDIM sampling laboratory on closed-form denoisers",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", help="run the deterministic sampler")
    _model_args(p)
    p.add_argument("--steps", type=int, default=30)
    p.add_argument("--gamma", type=float, default=7.5)
    p.add_argument("--t-max", type=float, default=1.0)
    p.add_argument("--t-min", type=float, default=T_CLEAN_EPS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="trajectory CSV path")
    p.set_defaults(fn=_cmd_sample)

    p = sub.add_parser("invert", help="integrate the sampler backward from a clean sample")
    _model_args(p)
    p.add_argument("--steps", type=int, default=10)
    p.add_argument("--gamma-inv", type=float, default=-7.5)
    p.add_argument("--t-target", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=_cmd_invert)

    p = sub.add_parser("residuals", help="noise-consistency residual sweep over strategies")
    _model_args(p)
    p.add_argument(
        "--strategies",
        default="random-resampled,random-fixed,fixed-point,gradient-descent,ddim-inversion",
    )
    p.add_argument("--t-min", type=float, default=0.05)
    p.add_argument("--t-max", type=float, default=0.98)
    p.add_argument("--t-points", type=int, default=10)
    p.add_argument("--samples", type=int, default=64)
    p.add_argument("--gamma", type=float, default=7.5)
    p.add_argument("--gamma-inv", type=float, default=-7.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=_cmd_residuals)

    p = sub.add_parser("equivalence", help="check the denoised-update identity on trajectories")
    _model_args(p)
    p.add_argument("--steps", type=int, default=30)
    p.add_argument("--trajectories", type=int, default=20)
    p.add_argument("--gamma", type=float, default=7.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=_cmd_equivalence)

    p = sub.add_parser("ode-check", help="finite-difference check of the velocity identity")
    _model_args(p)
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--t-start", type=float, default=0.95)
    p.add_argument("--fd-step", type=float, default=1e-4)
    p.add_argument("--tolerance", type=float, default=1e-3)
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=_cmd_ode_check)

    p = sub.add_parser("distill", help="run one distillation loop")
    _model_args(p)
    p.add_argument("--mode", choices=("sds", "sdi", "ism"), default="sdi")
    p.add_argument("--renderer", choices=("identity", "tomo"), default="tomo")
    p.add_argument("--template", default="disk")
    p.add_argument("--canvas-n", type=int, default=64)
    p.add_argument("--iters", type=int, default=2000)
    p.add_argument("--lr", type=float, default=1e-2)
    p.add_argument("--gamma", type=float, default=7.5)
    p.add_argument("--gamma-inv", type=float, default=-7.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--svg", action="store_true")
    p.add_argument("--out", default="run")
    p.set_defaults(fn=_cmd_distill)

    p = sub.add_parser("suite", help="run a named experiment suite")
    p.add_argument("--name", choices=EXPERIMENT_NAMES, default=None)
    p.add_argument("--config", default=None, help="experiment configuration file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--svg", action="store_true")
    p.set_defaults(fn=_cmd_suite)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
