"""Deterministic artifact writers: legacy VTK, plain-text mesh dumps, CSV traces."""

from __future__ import annotations

import os

import numpy as np


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def write_vtk(path, nodes: np.ndarray, triangles: np.ndarray, point_data: dict | None = None,
              title: str = "perihom mesh") -> None:
    """Legacy-VTK ASCII unstructured grid with optional nodal scalar fields."""
    lines = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID",
             f"POINTS {len(nodes)} double"]
    for p in nodes:
        lines.append(f"{_fmt(p[0])} {_fmt(p[1])} 0")
    lines.append(f"CELLS {len(triangles)} {4 * len(triangles)}")
    for t in triangles:
        lines.append(f"3 {t[0]} {t[1]} {t[2]}")
    lines.append(f"CELL_TYPES {len(triangles)}")
    lines.extend(["5"] * len(triangles))
    if point_data:
        lines.append(f"POINT_DATA {len(nodes)}")
        for name, values in point_data.items():
            lines.append(f"SCALARS {name} double 1")
            lines.append("LOOKUP_TABLE default")
            lines.extend(_fmt(v) for v in values)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_mesh_text(path, mesh) -> None:
    """Plain node/element listing in the deterministic construction order."""
    lines = [f"# nodes {mesh.num_nodes}"]
    for p in mesh.nodes:
        lines.append(f"{_fmt(p[0])} {_fmt(p[1])}")
    lines.append(f"# triangles {len(mesh.triangles)}")
    for t in mesh.triangles:
        lines.append(f"{t[0]} {t[1]} {t[2]}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_norm_trace(path, sol) -> None:
    """Per-step norm trace of a trajectory (columns: t, L2, epsH1, Jmass)."""
    lines = ["t,L2,epsH1,Jmass"]
    for m, t in enumerate(sol.times):
        lines.append(f"{_fmt(t)},{_fmt(sol.l2[m])},{_fmt(sol.eps_h1[m])},{_fmt(sol.jmass[m])}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_cell_trace(path, traj) -> None:
    lines = ["t,L2,Jmass"]
    for m, t in enumerate(traj.times):
        lines.append(f"{_fmt(t)},{_fmt(traj.l2[m])},{_fmt(traj.jmass[m])}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_shift_table(path, table) -> None:
    """Shift rows plus the fitted constants (repeated per row, self-contained)."""
    c1, c2 = table.fit()
    lines = ["eps,lx,ly,h,dist,norm_dJu,init_term,fit_c1,fit_c2"]
    for r in table.rows:
        lines.append(",".join([_fmt(table.eps), str(r.ell[0]), str(r.ell[1]),
                               _fmt(table.h), _fmt(r.dist), _fmt(r.norm), _fmt(r.init_norm),
                               _fmt(c1), _fmt(c2)]))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def dump_matrix(path, op) -> None:
    """Sparse matrix in coordinate text format (row col value), for debugging."""
    matrix = op.matrix.tocoo() if hasattr(op, "matrix") else op.tocoo()
    lines = [f"% coordinate {matrix.shape[0]} {matrix.shape[1]} {matrix.nnz}"]
    order = np.lexsort((matrix.col, matrix.row))
    for i in order:
        lines.append(f"{matrix.row[i]} {matrix.col[i]} {_fmt(matrix.data[i])}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def run_layout(output_dir: str, run_id: str) -> dict:
    """Create out/<run-id>/{meshes,fields,reports} and return the paths."""
    base = os.path.join(output_dir, run_id)
    layout = {
        "base": base,
        "meshes": os.path.join(base, "meshes"),
        "fields": os.path.join(base, "fields"),
        "reports": os.path.join(base, "reports"),
    }
    for p in layout.values():
        os.makedirs(p, exist_ok=True)
    return layout
