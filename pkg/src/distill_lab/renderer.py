"""Orthographic line-integral renderer for square grids, with an exact adjoint.

A canvas is an unconstrained N x N parameter grid squashed through a sigmoid
into [0, 1] before projection.  A view at angle theta integrates the squashed
field along N parallel rays (N bilinear samples per ray on the [-1, 1]^2
domain, zero outside, normalized by the sample count), so the projection is a
dense linear map of the squashed field and its transpose is available exactly.
Template shapes define the reference occupancy fields whose per-view
projections serve as data means elsewhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Canvas",
    "Template",
    "TEMPLATE_NAMES",
    "squash",
    "squash_grad",
    "project",
    "project_adjoint",
    "project_field",
    "backproject_field",
    "make_template",
    "template_projection_table",
    "TomographicRenderer",
    "IdentityRenderer",
    "canvas_csv_text",
    "canvas_pgm_text",
    "save_canvas_csv",
    "save_canvas_pgm",
]

TWO_PI = 2.0 * math.pi


def squash(grid: np.ndarray) -> np.ndarray:
    """Smooth squashing of raw canvas values into (0, 1)."""
    return 1.0 / (1.0 + np.exp(-np.asarray(grid, dtype=float)))


def squash_grad(grid: np.ndarray) -> np.ndarray:
    s = squash(grid)
    return s * (1.0 - s)


@dataclass
class Canvas:
    """Unconstrained N x N parameter grid; squashed to [0, 1] before projection."""

    grid: np.ndarray

    def __post_init__(self) -> None:
        self.grid = np.asarray(self.grid, dtype=float)
        if self.grid.ndim != 2 or self.grid.shape[0] != self.grid.shape[1]:
            raise ValueError("canvas grid must be square")
        if self.grid.shape[0] < 8:
            raise ValueError("canvas side must be at least 8")
        if not np.all(np.isfinite(self.grid)):
            raise ValueError("canvas grid must be finite")

    @property
    def n(self) -> int:
        return self.grid.shape[0]


@dataclass(frozen=True)
class Template:
    """Named reference occupancy field with values in [0, 1]."""

    name: str
    grid: np.ndarray


def _axis_coords(n: int) -> np.ndarray:
    """Pixel-center coordinates on [-1, 1]."""
    return -1.0 + (2.0 * np.arange(n) + 1.0) / n


def _ray_stencil(theta: float, n: int, samples_per_ray: int | None = None):
    """Bilinear gather stencil for all rays of one view.

    Rays run along (-sin, cos) at offsets along (cos, sin); both offsets and
    sample positions sit at pixel-center spacing so axis-aligned views hit
    grid nodes exactly.  Returns row indices, column indices, and weights of
    shape (rays, samples, 4); weights of samples falling outside the grid are
    zero.
    """
    theta = float(theta) % TWO_PI
    m = samples_per_ray if samples_per_ray is not None else n
    offsets = _axis_coords(n)
    positions = -1.0 + (2.0 * np.arange(m) + 1.0) / m
    nx, ny = math.cos(theta), math.sin(theta)
    dx, dy = -math.sin(theta), math.cos(theta)
    x = offsets[:, None] * nx + positions[None, :] * dx  # (n, m)
    y = offsets[:, None] * ny + positions[None, :] * dy

    fx = (x + 1.0) * n / 2.0 - 0.5  # fractional column index
    fy = (y + 1.0) * n / 2.0 - 0.5  # fractional row index
    jx0 = np.floor(fx).astype(int)
    iy0 = np.floor(fy).astype(int)
    wx1 = fx - jx0
    wy1 = fy - iy0

    rows = np.stack([iy0, iy0, iy0 + 1, iy0 + 1], axis=-1)
    cols = np.stack([jx0, jx0 + 1, jx0, jx0 + 1], axis=-1)
    weights = np.stack(
        [(1 - wy1) * (1 - wx1), (1 - wy1) * wx1, wy1 * (1 - wx1), wy1 * wx1], axis=-1
    )
    valid = (rows >= 0) & (rows < n) & (cols >= 0) & (cols < n)
    weights = np.where(valid, weights, 0.0)
    rows = np.clip(rows, 0, n - 1)
    cols = np.clip(cols, 0, n - 1)
    return rows, cols, weights


def project_field(values: np.ndarray, theta: float, samples_per_ray: int | None = None) -> np.ndarray:
    """Linear projection stage applied to an already-squashed field."""
    values = np.asarray(values, dtype=float)
    n = values.shape[0]
    rows, cols, weights = _ray_stencil(theta, n, samples_per_ray)
    gathered = (weights * values[rows, cols]).sum(axis=-1)  # (rays, samples)
    return gathered.mean(axis=1)


def backproject_field(cotangent: np.ndarray, theta: float, n: int) -> np.ndarray:
    """Exact transpose of project_field applied to a per-ray cotangent."""
    cotangent = np.asarray(cotangent, dtype=float)
    if cotangent.shape != (n,):
        raise ValueError(f"cotangent must have shape ({n},), got {cotangent.shape}")
    rows, cols, weights = _ray_stencil(theta, n)
    m = weights.shape[1]
    contrib = weights * (cotangent[:, None, None] / m)
    out = np.zeros((n, n))
    np.add.at(out, (rows.ravel(), cols.ravel()), contrib.ravel())
    return out


def project(canvas: Canvas, theta: float) -> np.ndarray:
    """View of a canvas: rays through the sigmoid-squashed grid."""
    return project_field(squash(canvas.grid), theta)


def project_adjoint(canvas: Canvas, theta: float, cotangent: np.ndarray) -> np.ndarray:
    """Transpose-Jacobian of project at this canvas, including the sigmoid factor."""
    back = backproject_field(cotangent, theta, canvas.n)
    return squash_grad(canvas.grid) * back


# -- templates ----------------------------------------------------------------

TEMPLATE_NAMES = ("disk", "square", "annulus", "two-bars")


def make_template(name: str, n: int = 64) -> Template:
    """Binary occupancy grids for the built-in reference shapes."""
    coords = _axis_coords(n)
    x, y = np.meshgrid(coords, coords, indexing="xy")
    r = np.sqrt(x**2 + y**2)
    if name == "disk":
        grid = (r <= 0.6).astype(float)
    elif name == "square":
        grid = ((np.abs(x) <= 0.5) & (np.abs(y) <= 0.5)).astype(float)
    elif name == "annulus":
        grid = ((r >= 0.35) & (r <= 0.6)).astype(float)
    elif name == "two-bars":
        bars = ((np.abs(x + 0.4) <= 0.15) | (np.abs(x - 0.4) <= 0.15)) & (np.abs(y) <= 0.8)
        grid = bars.astype(float)
    else:
        raise ValueError(f"unknown template {name!r}; choose from {TEMPLATE_NAMES}")
    return Template(name, grid)


def template_projection_table(template: Template, n_angles: int) -> np.ndarray:
    """Projections of a template at n_angles uniform angles; shape (n_angles, N).

    Template grids already live in [0, 1], so only the linear stage applies.
    """
    if n_angles < 1:
        raise ValueError("n_angles must be at least 1")
    angles = TWO_PI * np.arange(n_angles) / n_angles
    return np.stack([project_field(template.grid, th) for th in angles])


# -- renderer frontends used by the distillation loop --------------------------


class TomographicRenderer:
    """Grid parameters rendered as 1D views; gradients flow through the exact adjoint."""

    def __init__(self, n: int = 64):
        self.n = n

    def new_params(self) -> np.ndarray:
        return np.zeros((self.n, self.n))

    def render(self, params: np.ndarray, theta: float) -> np.ndarray:
        return project_field(squash(params), theta)

    def pullback(self, params: np.ndarray, theta: float, cotangent: np.ndarray) -> np.ndarray:
        return squash_grad(params) * backproject_field(cotangent, theta, self.n)

    def field(self, params: np.ndarray) -> np.ndarray:
        """Squashed density field, the quantity compared against templates."""
        return squash(params)


class IdentityRenderer:
    """Flat parameter vector rendered as itself; the image-generation analog."""

    def __init__(self, dim: int):
        self.dim = dim

    def new_params(self) -> np.ndarray:
        return np.zeros(self.dim)

    def render(self, params: np.ndarray, theta: float) -> np.ndarray:
        return np.asarray(params, dtype=float)

    def pullback(self, params: np.ndarray, theta: float, cotangent: np.ndarray) -> np.ndarray:
        return np.asarray(cotangent, dtype=float)

    def field(self, params: np.ndarray) -> np.ndarray:
        return np.asarray(params, dtype=float)


# -- canvas serialization ------------------------------------------------------


def canvas_csv_text(canvas_or_grid) -> str:
    grid = canvas_or_grid.grid if isinstance(canvas_or_grid, Canvas) else np.asarray(canvas_or_grid)
    return "\n".join(",".join(repr(float(v)) for v in row) for row in grid) + "\n"


def canvas_pgm_text(canvas_or_grid, is_field: bool = False) -> str:
    """8-bit ASCII portable graymap; raw canvases are squashed unless is_field."""
    grid = canvas_or_grid.grid if isinstance(canvas_or_grid, Canvas) else np.asarray(canvas_or_grid)
    field = grid if is_field else squash(grid)
    levels = np.clip(np.round(field * 255.0), 0, 255).astype(int)
    n_rows, n_cols = levels.shape
    lines = ["P2", f"{n_cols} {n_rows}", "255"]
    lines += [" ".join(str(v) for v in row) for row in levels]
    return "\n".join(lines) + "\n"


def save_canvas_csv(canvas_or_grid, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(canvas_csv_text(canvas_or_grid))


def save_canvas_pgm(canvas_or_grid, path: str, is_field: bool = False) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(canvas_pgm_text(canvas_or_grid, is_field))
