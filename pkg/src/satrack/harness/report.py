"""CSV tables, deterministic SVG plots and a manifest for sweep results."""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from ..errors import ConfigError  # noqa: E402

SVG_SALT = "satrack"


def write_csv(path, header, rows):
    """UTF-8 CSV with a header row; floats use ``repr`` so output is exact and ``.``-decimal."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, float) else v for v in r])


def _ensure_dir(out_dir):
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out_dir}: {exc}") from None
    if not os.access(out_dir, os.W_OK):
        raise ConfigError(f"output directory {out_dir} is not writable")


def _axis_points(result, axis):
    spec = result.spec
    others = {n: g[0] for n, g in spec.axes.items() if n != axis}
    pts = [c for c in result.cells
           if not c.failed and all(c.values[n] == v for n, v in others.items())]
    return sorted(pts, key=lambda c: c.values[axis])


def plot_axis(result, axis, path):
    """Log-log plot of stationary RMS against ``axis`` with the bound overlaid."""
    cells = _axis_points(result, axis)
    x = [c.values[axis] for c in cells]
    rms = [c.rms for c in cells]
    bound = [c.bound for c in cells]
    plt.rcParams["svg.hashsalt"] = SVG_SALT
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.loglog(x, rms, "o-", label="empirical RMS")
    if any(math.isfinite(b) for b in bound):
        ax.loglog(x, bound, "s--", label="bound")
    fit = result.fits.get(axis)
    title = f"error vs {axis}"
    if fit is not None:
        title += f" (slope {fit.slope:.3f} +/- {fit.stderr:.3f})"
    ax.set_title(title)
    ax.set_xlabel(axis)
    ax.set_ylabel("stationary RMS")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def _sha256(path):
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def emit_report(result, out_dir):
    """Write ``sweep_cells.csv``, ``scaling_fits.csv``, one ``plot_<axis>.svg`` per axis
    and ``manifest.json``; returns the list of written paths.

    ``result`` may be ``None`` for an empty sweep, which gives header-only CSVs.
    """
    _ensure_dir(out_dir)
    files = []
    cells_path = os.path.join(out_dir, "sweep_cells.csv")
    fits_path = os.path.join(out_dir, "scaling_fits.csv")
    if result is None:
        write_csv(cells_path, ["stationary_rms", "bound_total", "margin", "all_time_ok", "status"], [])
        write_csv(fits_path, ["axis", "slope", "stderr", "n_points"], [])
        files += [cells_path, fits_path]
    else:
        write_csv(cells_path, *result.table())
        write_csv(fits_path, *result.fit_table())
        files += [cells_path, fits_path]
        for axis in result.spec.axes:
            if _axis_points(result, axis):
                path = os.path.join(out_dir, f"plot_{axis}.svg")
                plot_axis(result, axis, path)
                files.append(path)
    manifest = {os.path.basename(p): _sha256(p) for p in files}
    mpath = os.path.join(out_dir, "manifest.json")
    with open(mpath, "w", encoding="utf-8") as fh:
        json.dump({"files": manifest}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return files + [mpath]
