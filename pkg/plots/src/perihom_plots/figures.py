"""Deterministic figures from sweep CSVs and push-forward VTK dumps.

Every figure is a pure rendering: data, fitted constants, and errors all come
from the artifact files.  Styles are pinned so a given platform reproduces
byte-identical images.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

SWEEP_COLUMNS = ("eps", "maxL2", "HepsNorm", "Jmass_drift", "E_bulk", "E_surf",
                 "E_Jweighted", "shift_fit_c1", "shift_fit_c2", "wall_ms")
SHIFT_COLUMNS = ("eps", "lx", "ly", "h", "dist", "norm_dJu", "init_term",
                 "fit_c1", "fit_c2")

_STYLE = {
    "figure.figsize": (5.2, 3.9),
    "figure.dpi": 120,
    "savefig.dpi": 120,
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.35,
    "svg.hashsalt": "perihom-plots",
}


class SchemaError(ValueError):
    """Input artifact does not match the expected schema; carries the column diff."""

    def __init__(self, message, missing=(), extra=()):
        self.missing = tuple(missing)
        self.extra = tuple(extra)
        detail = message
        if missing:
            detail += f"; missing columns: {', '.join(missing)}"
        if extra:
            detail += f"; unexpected columns: {', '.join(extra)}"
        super().__init__(detail)


@dataclass(frozen=True)
class FigureSpec:
    """One figure request: input artifact, figure kind, output image path."""

    input_path: str
    kind: str
    output_path: str

    def __post_init__(self):
        if self.kind not in FIGURE_KINDS:
            raise ValueError(f"unknown figure kind {self.kind!r}; "
                             f"known: {', '.join(sorted(FIGURE_KINDS))}")


def read_csv_columns(path, expected) -> dict:
    """Parse a fixed-schema CSV into float column arrays; diff the header on mismatch."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path} is empty", missing=expected) from None
        rows = [row for row in reader if row]
    missing = [c for c in expected if c not in header]
    extra = [c for c in header if c not in expected]
    if missing or extra:
        raise SchemaError(f"{path} does not match the schema", missing=missing, extra=extra)
    if not rows:
        raise SchemaError(f"{path} has no data rows", missing=())
    idx = {c: header.index(c) for c in expected}
    return {c: np.array([float(r[idx[c]]) for r in rows]) for c in expected}


def read_vtk_points(path) -> tuple:
    """Points, triangles and the first nodal scalar field of a legacy-VTK dump."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    if len(lines) < 5 or "vtk DataFile" not in lines[0] or lines[3] != "DATASET UNSTRUCTURED_GRID":
        raise SchemaError(f"{path} is not a legacy-VTK unstructured grid")
    i = 4
    n_pts = int(lines[i].split()[1])
    pts = np.array([[float(v) for v in lines[i + 1 + j].split()[:2]] for j in range(n_pts)])
    i += 1 + n_pts
    n_cells = int(lines[i].split()[1])
    tris = np.array([[int(v) for v in lines[i + 1 + j].split()[1:4]] for j in range(n_cells)])
    i += 1 + n_cells
    i += 1 + n_cells   # CELL_TYPES block
    values = None
    if i < len(lines) and lines[i].startswith("POINT_DATA"):
        values = np.array([float(v) for v in lines[i + 3:i + 3 + n_pts]])
    return pts, tris, values


# ---------------------------------------------------------------------------
# figure kinds
# ---------------------------------------------------------------------------

def _fig_error_decay(path, out):
    data = read_csv_columns(path, SWEEP_COLUMNS)
    fig, ax = plt.subplots()
    for col, marker in (("E_bulk", "o"), ("E_surf", "s"), ("E_Jweighted", "^")):
        ax.loglog(data["eps"], data[col], marker=marker, label=col)
    ax.set_xlabel("lattice parameter")
    ax.set_ylabel("two-scale error")
    ax.set_title("homogenization error decay")
    ax.legend()
    fig.savefig(out, metadata=_png_metadata(out))
    plt.close(fig)


def _fig_energy_uniformity(path, out):
    data = read_csv_columns(path, SWEEP_COLUMNS)
    x = np.arange(len(data["eps"]))
    width = 0.38
    fig, ax = plt.subplots()
    ax.bar(x - width / 2, data["maxL2"], width, label="max L2")
    ax.bar(x + width / 2, data["HepsNorm"], width, label="trajectory norm")
    ax.set_xticks(x, [f"{e:g}" for e in data["eps"]])
    ax.set_xlabel("lattice parameter")
    ax.set_title("energy-norm uniformity across the sweep")
    ax.legend()
    fig.savefig(out, metadata=_png_metadata(out))
    plt.close(fig)


def _fig_shift_fit(path, out):
    data = read_csv_columns(path, SHIFT_COLUMNS)
    eps = data["eps"][0]
    c1, c2 = data["fit_c1"][0], data["fit_c2"][0]
    fig, ax = plt.subplots()
    ax.plot(data["dist"], data["norm_dJu"] - data["init_term"], "o", label="measured - initial")
    d = np.linspace(0.0, data["dist"].max() * 1.1, 50)
    ax.plot(d, c1 * d + c2 * np.sqrt(eps), "-",
            label=f"fit: {c1:.3g} d + {c2:.3g} sqrt(eps)")
    ax.set_xlabel("shift distance |l eps|")
    ax.set_ylabel("interior shift norm")
    ax.set_title(f"shift differences, eps = {eps:g}")
    ax.legend()
    fig.savefig(out, metadata=_png_metadata(out))
    plt.close(fig)


def _fig_deformed_cell(path, out):
    pts, tris, values = read_vtk_points(path)
    fig, ax = plt.subplots(figsize=(4.4, 4.0))
    if values is not None:
        tpc = ax.tripcolor(pts[:, 0], pts[:, 1], tris, values, shading="gouraud")
        fig.colorbar(tpc, ax=ax, shrink=0.85)
    ax.triplot(pts[:, 0], pts[:, 1], tris, color="k", linewidth=0.25, alpha=0.5)
    ax.set_aspect("equal")
    ax.set_title("deformed cell")
    fig.savefig(out, metadata=_png_metadata(out))
    plt.close(fig)


FIGURE_KINDS = {
    "error-decay": _fig_error_decay,
    "energy-uniformity": _fig_energy_uniformity,
    "shift-fit": _fig_shift_fit,
    "deformed-cell": _fig_deformed_cell,
}


def _png_metadata(out):
    # strip the creator software string; PNG output then has no varying chunk
    if str(out).endswith(".png"):
        return {"Software": None}
    if str(out).endswith(".svg"):
        return {"Date": None}
    return None


def plot(spec: FigureSpec) -> str:
    """Render one figure; returns the output path."""
    with plt.rc_context(_STYLE):
        FIGURE_KINDS[spec.kind](spec.input_path, spec.output_path)
    return spec.output_path
