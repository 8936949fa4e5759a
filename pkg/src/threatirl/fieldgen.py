"""Procedural threat fields on a uniform grid.

Static fields are an offset plus a sum of Gaussian radial basis functions.
Dynamic fields interpolate linearly between two static fields over time.
Field values are stored as ``values[t, cell]`` with cells in row-major order,
row 0 at the bottom (smallest y) and column 0 at the left (smallest x).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field as dc_field
from pathlib import Path
from typing import Any

import numpy as np

from .seeding import substream

FORMAT_VERSION = "1.0"


class FieldError(ValueError):
    """Invalid grid or field parameters."""


@dataclass(frozen=True)
class GridSpec:
    rows: int = 25
    cols: int = 25
    extent_min: tuple[float, float] = (-1.0, -1.0)
    extent_max: tuple[float, float] = (1.0, 1.0)
    n_time_steps: int = 1
    dt: float = 1.0

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1 or self.rows * self.cols < 2:
            raise FieldError(f"grid needs at least 2 cells, got {self.rows}x{self.cols}")
        if self.n_time_steps < 1:
            raise FieldError("n_time_steps must be positive")
        if self.dt <= 0:
            raise FieldError("dt must be positive")
        if not all(lo < hi for lo, hi in zip(self.extent_min, self.extent_max)):
            raise FieldError("extent_min must be below extent_max componentwise")
        object.__setattr__(self, "extent_min", tuple(float(v) for v in self.extent_min))
        object.__setattr__(self, "extent_max", tuple(float(v) for v in self.extent_max))

    @property
    def n_cells(self) -> int:
        return self.rows * self.cols

    @property
    def is_static(self) -> bool:
        return self.n_time_steps == 1

    @property
    def spacing(self) -> tuple[float, float]:
        """(dx, dy) between adjacent grid points."""
        dx = (self.extent_max[0] - self.extent_min[0]) / max(self.cols - 1, 1)
        dy = (self.extent_max[1] - self.extent_min[1]) / max(self.rows - 1, 1)
        return dx, dy

    @property
    def diagonal(self) -> float:
        return float(np.hypot(self.extent_max[0] - self.extent_min[0],
                              self.extent_max[1] - self.extent_min[1]))

    def cell(self, row: int, col: int) -> int:
        return row * self.cols + col

    def row_col(self, cell: int) -> tuple[int, int]:
        return divmod(int(cell), self.cols)

    def coords(self) -> np.ndarray:
        """Workspace coordinates of every cell, shape (n_cells, 2)."""
        xs = np.linspace(self.extent_min[0], self.extent_max[0], self.cols)
        ys = np.linspace(self.extent_min[1], self.extent_max[1], self.rows)
        gx, gy = np.meshgrid(xs, ys)
        return np.column_stack([gx.ravel(), gy.ravel()])

    def nearest_cell(self, point) -> int:
        d = np.linalg.norm(self.coords() - np.asarray(point, dtype=float), axis=1)
        return int(np.argmin(d))

    def with_time_steps(self, n_time_steps: int) -> "GridSpec":
        return GridSpec(self.rows, self.cols, self.extent_min, self.extent_max,
                        n_time_steps, self.dt)


@dataclass
class ThreatField:
    grid: GridSpec
    values: np.ndarray
    seed: int | None = None
    rbf_meta: dict[str, Any] | None = dc_field(default=None, repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[None, :]
        expected = (self.grid.n_time_steps, self.grid.n_cells)
        if v.shape != expected:
            raise FieldError(f"values shape {v.shape} != {expected}")
        if not np.all(np.isfinite(v)) or v.min() <= 0:
            raise FieldError("threat field must be finite and strictly positive")
        self.values = v

    @property
    def is_static(self) -> bool:
        return self.grid.is_static

    def slice_at(self, t: int) -> np.ndarray:
        return self.values[min(int(t), self.grid.n_time_steps - 1)]


def sample_field(field: ThreatField, cell: int, t: int = 0) -> float:
    """Threat at ``cell`` and time step ``t``; times past the horizon see the last slice."""
    if not 0 <= cell < field.grid.n_cells:
        raise FieldError(f"cell {cell} out of range [0, {field.grid.n_cells})")
    if t < 0:
        raise FieldError("time step must be non-negative")
    return float(field.values[min(t, field.grid.n_time_steps - 1), cell])


def rbf_values(coords: np.ndarray, offset: float, centers, widths, coeffs) -> np.ndarray:
    """c(x) = offset + sum_k a_k exp(-|x - mu_k|^2 / (2 sigma_k^2))."""
    out = np.full(len(coords), float(offset))
    for mu, sigma, a in zip(np.asarray(centers, float), np.asarray(widths, float),
                            np.asarray(coeffs, float)):
        r2 = np.sum((coords - mu) ** 2, axis=1)
        out += a * np.exp(-r2 / (2.0 * sigma**2))
    return out


def _rbf_slice(rng: np.random.Generator, grid: GridSpec, n_rbf: int, offset: float,
               coeff_range: tuple[float, float] | None, width_range: tuple[float, float],
               max_attempts: int = 100) -> tuple[np.ndarray, dict]:
    if coeff_range is None:
        coeff_range = (-0.9 * offset / max(n_rbf, 1), 5.0)
    lo, hi = coeff_range
    if lo > hi:
        raise FieldError("coeff_range must be an ordered interval")
    coords = grid.coords()
    span = np.subtract(grid.extent_max, grid.extent_min)
    centers = rng.uniform(grid.extent_min, grid.extent_max, size=(n_rbf, 2))
    widths = rng.uniform(width_range[0], width_range[1], size=n_rbf) * float(span.mean())
    floor = 0.05 * offset
    for _ in range(max_attempts):
        coeffs = rng.uniform(lo, hi, size=n_rbf)
        values = rbf_values(coords, offset, centers, widths, coeffs)
        if values.min() >= floor:
            meta = {"offset": offset, "centers": centers.tolist(),
                    "widths": widths.tolist(), "coeffs": coeffs.tolist()}
            return values, meta
    raise FieldError(f"could not draw a positive field in {max_attempts} attempts; "
                     f"narrow coeff_range {coeff_range}")


def generate_static_field(seed: int, grid: GridSpec | None = None, n_rbf: int = 10,
                          coeff_range: tuple[float, float] | None = None,
                          offset: float = 1.0,
                          width_range: tuple[float, float] = (0.1, 0.5)) -> ThreatField:
    """Random RBF field with a single time slice.

    Coefficients are drawn from ``coeff_range`` (default ``(-0.9*offset/n_rbf, 5)``)
    and redrawn whenever the sampled grid minimum falls below ``0.05*offset``.
    """
    grid = grid or GridSpec()
    if offset <= 0:
        raise FieldError("offset must be positive")
    if n_rbf < 0:
        raise FieldError("n_rbf must be non-negative")
    static_grid = grid.with_time_steps(1)
    values, meta = _rbf_slice(substream(seed, "field"), static_grid, n_rbf, offset,
                              coeff_range, width_range)
    return ThreatField(static_grid, values[None, :], seed=seed, rbf_meta=meta)


def interpolate_fields(a: np.ndarray, b: np.ndarray, n_time_steps: int) -> np.ndarray:
    """Stack of ``n_time_steps`` slices going linearly from ``a`` to ``b``."""
    lam = np.linspace(0.0, 1.0, n_time_steps)[:, None]
    out = (1.0 - lam) * a[None, :] + lam * b[None, :]
    out[0], out[-1] = a, b
    return out


def generate_dynamic_field(seed: int, grid: GridSpec, n_rbf: int = 10,
                           coeff_range: tuple[float, float] | None = None,
                           offset: float = 1.0,
                           width_range: tuple[float, float] = (0.1, 0.5)) -> ThreatField:
    """Linear interpolation in time between two independent static RBF fields."""
    if grid.n_time_steps < 2:
        raise FieldError("dynamic fields need n_time_steps >= 2")
    static_grid = grid.with_time_steps(1)
    a, meta_a = _rbf_slice(substream(seed, "field"), static_grid, n_rbf, offset,
                           coeff_range, width_range)
    b, meta_b = _rbf_slice(substream(seed, "field_b"), static_grid, n_rbf, offset,
                           coeff_range, width_range)
    values = interpolate_fields(a, b, grid.n_time_steps)
    return ThreatField(grid, values, seed=seed, rbf_meta={"start": meta_a, "end": meta_b})


def central_blob_field(grid: GridSpec | None = None, amplitude: float = 8.0,
                       width: float = 0.35, offset: float = 1.0,
                       center=(0.0, 0.0)) -> ThreatField:
    """A single high-threat Gaussian in the middle of the workspace."""
    grid = (grid or GridSpec()).with_time_steps(1)
    values = rbf_values(grid.coords(), offset, [center], [width], [amplitude])
    meta = {"offset": offset, "centers": [list(center)], "widths": [width],
            "coeffs": [amplitude]}
    return ThreatField(grid, values[None, :], seed=None, rbf_meta=meta)


def field_to_dict(field: ThreatField) -> dict:
    g = field.grid
    return {
        "format_version": FORMAT_VERSION,
        "grid": {**asdict(g), "extent_min": list(g.extent_min), "extent_max": list(g.extent_max)},
        "values": [s.reshape(g.rows, g.cols).tolist() for s in field.values],
        "seed": field.seed,
        "rbf_meta": field.rbf_meta,
    }


def check_format_version(doc: dict, what: str) -> None:
    version = str(doc.get("format_version", ""))
    if version.split(".")[0] != FORMAT_VERSION.split(".")[0]:
        raise FieldError(f"unsupported {what} format_version {version!r}")


def field_from_dict(doc: dict) -> ThreatField:
    check_format_version(doc, "field")
    g = doc["grid"]
    grid = GridSpec(int(g["rows"]), int(g["cols"]), tuple(g["extent_min"]),
                    tuple(g["extent_max"]), int(g["n_time_steps"]), float(g["dt"]))
    values = np.asarray(doc["values"], dtype=float).reshape(grid.n_time_steps, grid.n_cells)
    return ThreatField(grid, values, seed=doc.get("seed"), rbf_meta=doc.get("rbf_meta"))


def save_field(field: ThreatField, path: str | Path) -> None:
    Path(path).write_text(json.dumps(field_to_dict(field)))


def load_field(path: str | Path) -> ThreatField:
    return field_from_dict(json.loads(Path(path).read_text()))
