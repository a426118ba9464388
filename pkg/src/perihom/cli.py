"""Command-line entry point: subcommand dispatch over a validated JSON config.

Exit codes: 0 ok, 1 a verification check failed under --strict, 2 usage or
runtime error.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from perihom import io
from perihom.cell import MacroSampling, push_forward, run_macro
from perihom.config import RunConfig, dump_config, parse_config
from perihom.errors import ConfigError
from perihom.geometry import build_perforated_mesh, build_reference_cell
from perihom.micro import run_micro
from perihom.transform import validate_transform
from perihom.unfolding import (UnfoldedField, adjoint_residual, average,
                               boundary_isometry_residual, gradient_identity_check,
                               isometry_residual, unfold)
from perihom.verify import convergence_sweep

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_ERROR = 2

OPERATOR_TOL = 1e-12


def _layout(cfg: RunConfig, name: str) -> dict:
    run_id = f"{name}-{cfg.fingerprint()}"
    paths = io.run_layout(cfg.output_dir, run_id)
    dump_config(cfg, os.path.join(paths["base"], "config-echo.json"))
    return paths


def cmd_run_micro(cfg: RunConfig, args) -> int:
    eps = args.eps if args.eps is not None else cfg.eps_list[0]
    paths = _layout(cfg, f"micro-eps{eps:g}")
    sol = run_micro(cfg, eps)
    io.write_norm_trace(os.path.join(paths["reports"], "norms.csv"), sol)
    io.write_mesh_text(os.path.join(paths["meshes"], "perforated.txt"), sol.mesh)
    io.write_vtk(os.path.join(paths["meshes"], "perforated.vtk"), sol.mesh.nodes,
                 sol.mesh.triangles)
    every = max(1, sol.num_steps // 8)
    for m in range(0, sol.num_steps + 1, every):
        io.write_vtk(os.path.join(paths["fields"], f"u_{m:04d}.vtk"), sol.mesh.nodes,
                     sol.mesh.triangles, point_data={"u": sol.fields[m]})
    np.savez_compressed(os.path.join(paths["fields"], "trajectory.npz"),
                        times=sol.times, fields=sol.fields)
    print(f"micro run eps={eps}: {sol.num_steps} steps, {sol.mesh.num_nodes} nodes")
    print(f"artifacts in {paths['base']}")
    return EXIT_OK


def cmd_run_macro(cfg: RunConfig, args) -> int:
    eps = args.eps if args.eps is not None else cfg.eps_list[0]
    paths = _layout(cfg, f"macro-eps{eps:g}")
    sampling = MacroSampling.anchors(eps, cfg.domain())
    sol = run_macro(cfg, sampling)
    spec = cfg.transform_spec()
    for i, traj in enumerate(sol.trajectories):
        io.write_cell_trace(os.path.join(paths["reports"], f"cell_{i:04d}.csv"), traj)
    # deformed snapshot of the first cell at the final time
    pf = push_forward(sol.trajectories[0], spec, sol.mesh, float(sol.times[-1]))
    io.write_vtk(os.path.join(paths["fields"], "cell0_deformed.vtk"), pf.points,
                 sol.mesh.triangles, point_data={"u": pf.values})
    io.write_vtk(os.path.join(paths["fields"], "cell0_reference.vtk"), sol.mesh.nodes,
                 sol.mesh.triangles, point_data={"u": sol.trajectories[0].fields[-1]})
    print(f"macro run: {len(sampling)} cell problems on eps={eps} anchors")
    print(f"artifacts in {paths['base']}")
    return EXIT_OK


def cmd_sweep(cfg: RunConfig, args) -> int:
    paths = _layout(cfg, "sweep")
    report = convergence_sweep(cfg)
    report.to_csv(os.path.join(paths["reports"], "sweep.csv"))
    for eps, table in report.shift_tables.items():
        io.write_shift_table(os.path.join(paths["reports"], f"shifts_eps{eps:g}.csv"), table)
    print(report.summary())
    print(f"artifacts in {paths['base']}")
    if report.failures:
        return EXIT_ERROR
    if args.strict:
        es = [r.E_bulk for r in report.rows]
        monotone = all(b < a for a, b in zip(es, es[1:]))
        if not monotone:
            print("strict check failed: two-scale error not monotone decreasing")
            return EXIT_CHECK_FAILED
    return EXIT_OK


def cmd_verify_transform(cfg: RunConfig, args) -> int:
    paths = _layout(cfg, "verify-transform")
    spec = cfg.transform_spec()
    report = validate_transform(spec, cfg.eps_list, rect=cfg.domain(), q_spec=cfg.q_spec())
    report.to_csv(os.path.join(paths["reports"], "assumptions.csv"))
    for row in report.rows:
        status = "ok " if row.ok else "FAIL"
        print(f"[{status}] {row.check:28s} eps={row.epsilon:<8g} value={row.value:.6e} "
              f"bound={row.bound:.6e}")
    if args.strict and not report.ok():
        return EXIT_CHECK_FAILED
    return EXIT_OK


def cmd_verify_operators(cfg: RunConfig, args) -> int:
    eps = args.eps if args.eps is not None else cfg.eps_list[0]
    template = build_reference_cell(cfg.cell_spec())
    mesh = build_perforated_mesh(eps, template, cfg.domain())
    rng = np.random.default_rng(2023)
    u = rng.standard_normal(mesh.num_nodes)
    v = rng.standard_normal(mesh.num_nodes)
    phi = UnfoldedField(values=rng.standard_normal(mesh.global_of.shape), eps=eps)
    checks = {
        "unfold_isometry": isometry_residual(mesh, u, v),
        "boundary_isometry": boundary_isometry_residual(mesh, u, v),
        "average_adjointness": adjoint_residual(mesh, u, phi),
        "average_left_inverse": float(np.abs(average(mesh, unfold(mesh, u)) - u).max()),
        "gradient_identity": gradient_identity_check(mesh, u),
    }
    worst = 0.0
    for name, value in checks.items():
        status = "ok " if value <= OPERATOR_TOL else "FAIL"
        print(f"[{status}] {name:22s} eps={eps:<8g} residual={value:.3e}")
        worst = max(worst, value)
    if args.strict and worst > OPERATOR_TOL:
        return EXIT_CHECK_FAILED
    return EXIT_OK


def cmd_export(cfg: RunConfig, args) -> int:
    paths = _layout(cfg, "export")
    template = build_reference_cell(cfg.cell_spec())
    io.write_mesh_text(os.path.join(paths["meshes"], "template.txt"), template)
    io.write_vtk(os.path.join(paths["meshes"], "template.vtk"), template.nodes,
                 template.triangles)
    for eps in cfg.eps_list:
        mesh = build_perforated_mesh(eps, template, cfg.domain())
        io.write_vtk(os.path.join(paths["meshes"], f"perforated_eps{eps:g}.vtk"),
                     mesh.nodes, mesh.triangles)
    print(f"meshes exported to {paths['meshes']}")
    return EXIT_OK


_COMMANDS = {
    "run-micro": cmd_run_micro,
    "run-macro": cmd_run_macro,
    "sweep": cmd_sweep,
    "verify-transform": cmd_verify_transform,
    "verify-operators": cmd_verify_operators,
    "export": cmd_export,
}


def dispatch(command: str, cfg: RunConfig, args) -> int:
    if command not in _COMMANDS:
        print(f"unknown subcommand {command!r}", file=sys.stderr)
        return EXIT_ERROR
    return _COMMANDS[command](cfg, args)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="perihom",
        description="two-scale simulation of transport in evolving perforated media")
    parser.add_argument("command", choices=sorted(_COMMANDS))
    parser.add_argument("--config", default=None, help="JSON config file (defaults apply if omitted)")
    parser.add_argument("--eps", type=float, default=None, help="lattice parameter override")
    parser.add_argument("--strict", action="store_true",
                        help="exit 1 when a verification check fails")
    args = parser.parse_args(argv)

    try:
        cfg = parse_config(args.config) if args.config else RunConfig()
    except ConfigError as exc:
        for violation in exc.violations:
            print(f"config error: {violation}", file=sys.stderr)
        return EXIT_ERROR
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return EXIT_ERROR

    try:
        return dispatch(args.command, cfg, args)
    except ConfigError as exc:
        for violation in exc.violations:
            print(f"config error: {violation}", file=sys.stderr)
        return EXIT_ERROR
    except Exception as exc:   # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
