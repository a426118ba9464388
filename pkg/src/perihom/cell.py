"""The two-scale limit problem: independent evolving cell problems per macro point.

Each macroscopic sample point carries one parabolic problem on the fixed
reference cell with periodic boundary conditions, the Jacobian-weighted time
term, and the nonlinear interface flux.  The macro point enters only through
the displacement amplitude, so the problems are fully decoupled and run
embarrassingly parallel; results land in preassigned slots, which keeps the
aggregate bitwise deterministic under any schedule.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from perihom.fem import PeriodicMap, assemble_weighted_mass
from perihom.geometry import CellMesh, build_reference_cell, lattice_cells
from perihom.micro import TransformCoefficients, TransientStepper
from perihom.transform import TransformSpec, eval_transform


@dataclass(frozen=True)
class MacroSampling:
    """Macro sample points; mode A aligns them with the lattice-cell centers."""

    points: np.ndarray          # (P, 2)
    mode: str                   # "anchors" | "grid" | "custom"
    eps: float | None = None    # comparison lattice parameter for mode A

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return len(self.points)

    @staticmethod
    def anchors(eps: float, rect) -> "MacroSampling":
        """Mode A: the centers eps*(k + 1/2) of every lattice cell (one per cell)."""
        cells = lattice_cells(eps, rect)
        return MacroSampling(points=eps * (cells + 0.5), mode="anchors", eps=eps)

    @staticmethod
    def uniform_grid(rect, n: int) -> "MacroSampling":
        """Mode B: an n x n grid of interior points."""
        x0, x1, y0, y1 = rect
        gx = x0 + (x1 - x0) * (np.arange(n) + 0.5) / n
        gy = y0 + (y1 - y0) * (np.arange(n) + 0.5) / n
        xx, yy = np.meshgrid(gx, gy, indexing="ij")
        return MacroSampling(points=np.column_stack([xx.ravel(), yy.ravel()]), mode="grid")


@dataclass
class CellTrajectory:
    """One evolving-cell solution: nodal time series on the reference cell."""

    x_macro: np.ndarray
    times: np.ndarray
    fields: np.ndarray              # (M+1, Nt)
    l2: np.ndarray
    jmass: np.ndarray
    balance_residuals: np.ndarray


@dataclass
class TwoScaleSolution:
    """All cell trajectories of a macro sampling, on one shared mesh and time grid."""

    sampling: MacroSampling
    mesh: CellMesh
    times: np.ndarray
    trajectories: list

    def field_array(self) -> np.ndarray:
        """(P, M+1, Nt) stack of all trajectories."""
        return np.stack([tr.fields for tr in self.trajectories])


def run_cell(cfg, x_k, cell_mesh: CellMesh | None = None,
             periodic: PeriodicMap | None = None,
             transform_spec: TransformSpec | None = None) -> CellTrajectory:
    """Integrate the limit problem at one macro sample point."""
    if cell_mesh is None:
        cell_mesh = build_reference_cell(cfg.cell_spec())
    if periodic is None:
        periodic = PeriodicMap(cell_mesh)
    spec = transform_spec if transform_spec is not None else cfg.transform_spec()
    x_k = np.asarray(x_k, dtype=float)

    coeffs = TransformCoefficients(spec, cell_mesh, q_spec=cfg.q_spec(), x_macro=x_k)
    stepper = TransientStepper(
        cell_mesh, coeffs, cfg.kinetics("f"), cfg.kinetics("g"), eps_scaling="cell",
        periodic=periodic, solver_tol=cfg.solver_tol, max_iter=cfg.max_iter,
        fp_sweeps=cfg.fp_sweeps, fp_tol=cfg.fp_tol, gamma_tag="GAMMA")

    n_steps = cfg.num_steps
    tau = cfg.tau
    times = tau * np.arange(n_steps + 1)
    u0_val = float(cfg.initial_spec()(x_k[None, :])[0])
    u = np.full(cell_mesh.num_nodes, u0_val)

    M1 = assemble_weighted_mass(cell_mesh)
    fields = np.empty((n_steps + 1, cell_mesh.num_nodes))
    l2 = np.empty(n_steps + 1)
    jmass = np.empty(n_steps + 1)
    balance = np.empty(n_steps)

    def record(m, vals):
        l2[m] = np.sqrt(max(vals @ (M1 @ vals), 0.0))
        MJ = stepper.level_ops(times[m])[0]
        jmass[m] = float(np.sum(MJ @ vals))

    fields[0] = u
    record(0, u)
    for m in range(n_steps):
        u, diag = stepper.step(u, times[m], times[m + 1])
        fields[m + 1] = u
        balance[m] = diag.balance_residual
        record(m + 1, u)
    return CellTrajectory(x_macro=x_k, times=times, fields=fields, l2=l2,
                          jmass=jmass, balance_residuals=balance)


def run_macro(cfg, sampling: MacroSampling,
              cell_mesh: CellMesh | None = None) -> TwoScaleSolution:
    """Solve every cell problem of the sampling; parallel over points, slot-deterministic."""
    if len(sampling) == 0:
        raise ValueError("empty macro sampling")
    if cell_mesh is None:
        cell_mesh = build_reference_cell(cfg.cell_spec())
    periodic = PeriodicMap(cell_mesh)
    spec = cfg.transform_spec()

    def solve_point(idx):
        return idx, run_cell(cfg, sampling.points[idx], cell_mesh=cell_mesh,
                             periodic=periodic, transform_spec=spec)

    results: list = [None] * len(sampling)
    if cfg.threads <= 1:
        for i in range(len(sampling)):
            results[i] = solve_point(i)[1]
    else:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            for idx, traj in pool.map(solve_point, range(len(sampling))):
                results[idx] = traj
    times = results[0].times
    return TwoScaleSolution(sampling=sampling, mesh=cell_mesh, times=times,
                            trajectories=results)


@dataclass
class PushForward:
    """A cell field carried onto the deformed cell configuration."""

    points: np.ndarray
    values: np.ndarray
    hole_radius: float
    t: float


def push_forward(traj: CellTrajectory, spec: TransformSpec, mesh: CellMesh,
                 t: float) -> PushForward:
    """Map the reference-cell nodes by the evolving-cell diffeomorphism at time t."""
    idx = int(np.argmin(np.abs(traj.times - t)))
    if abs(traj.times[idx] - t) > 1e-12:
        raise ValueError(f"t = {t} is not on the trajectory time grid")
    S, _, _ = eval_transform(spec, "limit", t, mesh.nodes, x_macro=traj.x_macro)
    om = float(spec.omega(t, traj.x_macro[None, :])[0])
    return PushForward(points=S, values=traj.fields[idx].copy(),
                       hole_radius=spec.hole_radius - om, t=t)
