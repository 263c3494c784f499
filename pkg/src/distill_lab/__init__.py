"""Desk-scale laboratory for score distillation and deterministic diffusion sampling.

Everything runs against closed-form Gaussian-mixture denoisers, so the exact
identities connecting plain score distillation, its inversion-based variant,
and deterministic sampling can be verified numerically to machine precision.
"""

from .schedule import Schedule, TimeGrid, alpha_at, make_grid, sigma_at
from .oracle import MixtureModel, Component, Prompt, NULL_PROMPT, load_mixture
from .sampler import DiffusionState, Trajectory, ddim_invert, ddim_sample, ddim_step
from .reparam import (
    X0State,
    equivalence_check,
    fixed_point_residual,
    ode_identity_check,
    to_x0,
    x0_update,
)
from .kappa import (
    DdimInversion,
    EntropyTerm,
    ExactGaussian,
    FixedPointIteration,
    GradientDescent,
    KappaDivergenceError,
    RandomFixed,
    RandomResampled,
    add_entropy,
    closed_form_kappa,
    residual_sweep,
    solve_kappa,
)
from .renderer import (
    Canvas,
    IdentityRenderer,
    Template,
    TomographicRenderer,
    make_template,
    project,
    project_adjoint,
    template_projection_table,
)
from .distill import (
    GuidanceConfig,
    RunRecord,
    guidance_variance_probe,
    run_distillation,
    sdi_step,
    sds_step,
)
from .harness import ExperimentConfig, ReportBundle, emit_report, run_experiment

__version__ = "0.1.0"
