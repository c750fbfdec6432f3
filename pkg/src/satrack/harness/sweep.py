"""Parameter sweeps over ``a``, ``eps``, ``eps_star`` and ``d`` with log-log scaling fits."""

from __future__ import annotations

import copy
import itertools
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..errors import ConfigError, NumericalError
from ..simulate import run_ensemble
from .config import SWEEP_AXES, build_experiment, validate_document, with_axis
from .pipeline import analyze


@dataclass(frozen=True)
class SweepSpec:
    """Cartesian grid over one or more axes.

    When ``T_end`` is set the horizon of every cell is ``N = round(T_end / a)``.
    """

    axes: dict
    replicas: int
    base: dict
    T_end: Optional[float] = None
    with_bounds: bool = True

    def __post_init__(self):
        if not self.axes:
            raise ConfigError("a sweep needs at least one axis")
        clean = {}
        for name, grid in self.axes.items():
            if name not in SWEEP_AXES:
                raise ConfigError(f"unknown sweep axis {name!r}; choose from {SWEEP_AXES}")
            g = [float(v) for v in grid]
            if not g or any(not (v > 0) or not math.isfinite(v) for v in g):
                raise ConfigError(f"sweep axis {name!r} needs a nonempty grid of positive values")
            if any(b <= a for a, b in zip(g, g[1:])):
                raise ConfigError(f"sweep axis {name!r} must be strictly increasing")
            clean[name] = tuple(g)
        object.__setattr__(self, "axes", clean)
        if self.replicas < 1:
            raise ConfigError("sweep replicas must be >= 1")
        if self.T_end is not None and not (self.T_end > 0):
            raise ConfigError("sweep T_end must be positive")
        validate_document(self.base)

    @classmethod
    def from_document(cls, doc):
        sw = doc.get("sweep")
        if not sw:
            raise ConfigError("config has no sweep section")
        base = copy.deepcopy(doc)
        base.pop("sweep")
        return cls(
            axes=dict(sw.get("axes", {})),
            replicas=int(sw.get("replicas", doc["sim"].get("replicas", 200))),
            base=base,
            T_end=sw.get("T_end"),
            with_bounds=bool(sw.get("with_bounds", True)),
        )

    def cells(self):
        names = list(self.axes)
        return [dict(zip(names, vals)) for vals in itertools.product(*self.axes.values())]

    def cell_document(self, values):
        doc = copy.deepcopy(self.base)
        for name, v in values.items():
            doc = with_axis(doc, name, v)
        if self.T_end is not None:
            doc["sim"].pop("horizon_N", None)
            doc["sim"]["T_end"] = float(self.T_end)
        doc["sim"]["replicas"] = int(self.replicas)
        return doc


@dataclass
class Cell:
    values: dict
    rms: float = math.nan
    bound: float = math.nan
    margin: float = math.nan
    all_time_ok: Optional[bool] = None
    error: Optional[str] = None
    t: Optional[np.ndarray] = field(default=None, repr=False)
    rms_path: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def failed(self):
        return self.error is not None


@dataclass(frozen=True)
class ScalingFit:
    axis: str
    slope: float
    stderr: float
    n_points: int


@dataclass
class SweepResult:
    spec: SweepSpec
    cells: list
    fits: dict

    def table(self):
        names = list(self.spec.axes)
        header = [*names, "stationary_rms", "bound_total", "margin", "all_time_ok", "status"]
        rows = []
        for c in self.cells:
            ok = "" if c.all_time_ok is None else int(c.all_time_ok)
            rows.append([*(c.values[n] for n in names), c.rms, c.bound, c.margin, ok,
                         "failed: " + c.error if c.failed else "ok"])
        return header, rows

    def fit_table(self):
        header = ["axis", "slope", "stderr", "n_points"]
        rows = [[f.axis, f.slope, f.stderr, f.n_points] for f in self.fits.values()]
        return header, rows


def fit_scaling(x, y):
    """OLS slope of ``log y`` on ``log x`` and its standard error.

    Returns
    -------
    (slope, stderr) : tuple of float
        ``stderr`` is 0 for two points or an exact power law.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) != len(y) or len(x) < 2:
        raise ConfigError("fit_scaling needs at least two (x, y) points")
    if np.any(x <= 0) or np.any(y <= 0):
        raise ConfigError("fit_scaling needs positive data")
    lx, ly = np.log(x), np.log(y)
    if np.ptp(lx) == 0:
        raise ConfigError("fit_scaling needs distinct x values")
    X = np.column_stack([np.ones_like(lx), lx])
    coef, *_ = np.linalg.lstsq(X, ly, rcond=None)
    resid = ly - X @ coef
    dof = len(x) - 2
    if dof == 0:
        return float(coef[1]), 0.0
    s2 = float(resid @ resid) / dof
    sxx = float(np.sum((lx - lx.mean()) ** 2))
    return float(coef[1]), math.sqrt(s2 / sxx)


def spans_decade(grid):
    return len(grid) >= 2 and max(grid) / min(grid) >= 10.0 * (1 - 1e-12)


def run_cell(spec, values, threads=1):
    cell = Cell(dict(values))
    try:
        exp = build_experiment(spec.cell_document(values))
        if spec.with_bounds:
            an = analyze(exp, threads=threads)
            s = an.summary
            cell.bound = an.report.total
            cell.margin = an.report.total - s.stationary_rms()
            cell.all_time_ok = an.verdict.passed
        else:
            s = run_ensemble(exp.model, exp.noise, exp.perturbation, exp.sim, exp.replicas,
                             threads=threads)
        cell.rms = s.stationary_rms()
        cell.t, cell.rms_path = s.t, s.rms
    except NumericalError as exc:
        cell.error = str(exc)
    return cell


def _fit_axis(spec, cells, axis):
    """Fit along ``axis`` with the other axes held at their first grid value."""
    others = {n: g[0] for n, g in spec.axes.items() if n != axis}
    pts = [(c.values[axis], c.rms) for c in cells
           if not c.failed and c.rms > 0 and all(c.values[n] == v for n, v in others.items())]
    if len(pts) < 2:
        return None
    slope, se = fit_scaling(*zip(*pts))
    return ScalingFit(axis, slope, se, len(pts))


def run_sweep(spec, threads=1):
    """Run every cell; a failed cell is recorded and the sweep continues.

    Cells are run in grid order with their own seeds from the base config, so
    the result is a deterministic function of the SweepSpec.
    """
    cells = [run_cell(spec, v, threads) for v in spec.cells()]
    fits = {}
    for axis, grid in spec.axes.items():
        if spans_decade(grid):
            f = _fit_axis(spec, cells, axis)
            if f is not None:
                fits[axis] = f
    return SweepResult(spec, cells, fits)
