"""Command line front end: solve, estimate, verify, and report.

Subcommands: run, estimate, verify, convergence, mesh-info; common
flags --config, --out, --threads, --seed.  Exit codes: 0 success,
1 usage or configuration defect, 2 solver failure, 3 validation
failure.  All outputs are plain files (CSV, JSON, legacy ASCII VTK)
built fully in memory before anything touches disk, so a failing
command leaves no partial outputs.  Every file carries the tool
version and the configuration hash: CSV and field files as a leading
comment line, VTK in the title line, JSON as the first key.
"""

import argparse
import json
import math
import os
import sys

import numpy as np

from . import __version__
from .config import ConfigError, parse_config
from .estimator import CSV_COLUMNS, estimate_trajectory
from .fem import FeSpace, mass_matrix, stiffness_matrix
from .mesh import generate_structured, uniform_refine, mesh_metrics, \
    domain_diameter
from .problem import derived_constants, friedrichs_bound, \
    validate_assumptions
from .stepper import SolverFailure, TimePartition, run
from .verification import (STUDY_COLUMNS, convergence_study,
                           friedrichs_eig, manufactured_case,
                           residual_decomposition_check)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_SOLVER = 2
EXIT_VALIDATION = 3

UNIT_SQUARE = (0.0, 0.0, 1.0, 1.0)


def _fmt(v):
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return "%.17g" % float(v)


def _header(cfg):
    return "convdiff %s config=sha256:%s" % (__version__, cfg.hash)


class _Files:
    """Deferred writer: collect (relative path, text) pairs, flush once
    the command has fully succeeded."""

    def __init__(self, out_dir):
        self.out_dir = out_dir
        self.entries = []

    def add(self, rel, text):
        self.entries.append((rel, text))

    def csv(self, rel, cfg, columns, rows):
        lines = ["# " + _header(cfg), ",".join(columns)]
        for row in rows:
            lines.append(",".join(_fmt(v) for v in row))
        self.add(rel, "\n".join(lines) + "\n")

    def json(self, rel, cfg, payload):
        doc = {"header": _header(cfg)}
        doc.update(payload)
        self.add(rel, json.dumps(doc, indent=2) + "\n")

    def flush(self):
        for rel, text in self.entries:
            path = os.path.join(self.out_dir, rel)
            os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
            with open(path, "w") as fh:
                fh.write(text)


def _vtk_snapshot(cfg, space, values, t):
    mesh = space.mesh
    nv = mesh.n_vertices
    lines = ["# vtk DataFile Version 3.0",
             "%s t=%s" % (_header(cfg), _fmt(float(t))),
             "ASCII", "DATASET POLYDATA",
             "POINTS %d float" % nv]
    for x, y in mesh.vertices:
        lines.append("%s %s 0" % (_fmt(x), _fmt(y)))
    nt = mesh.n_triangles
    lines.append("POLYGONS %d %d" % (nt, 4 * nt))
    for i, j, k in mesh.triangles:
        lines.append("3 %d %d %d" % (i, j, k))
    lines += ["POINT_DATA %d" % nv, "SCALARS u float 1",
              "LOOKUP_TABLE default"]
    # vertex dofs come first for either degree
    for v in values[:nv]:
        lines.append(_fmt(v))
    return "\n".join(lines) + "\n"


def _field_dump(cfg, space, values):
    lines = ["# " + _header(cfg), "x,y,u"]
    pts = space.dof_points
    for (x, y), v in zip(pts, values):
        lines.append("%s,%s,%s" % (_fmt(x), _fmt(y), _fmt(v)))
    return "\n".join(lines) + "\n"


def _build_mesh(cfg):
    mesh = generate_structured(UNIT_SQUARE, cfg.mesh_n)
    if cfg.mesh_refine:
        mesh = uniform_refine(mesh, cfg.mesh_refine)
    return mesh


def _constants_for(cfg, mesh, times):
    if cfg.friedrichs == "eigen":
        c_f = friedrichs_eig(FeSpace(mesh, 1))
    else:
        c_f = friedrichs_bound(mesh)
    return derived_constants(cfg.problem, c_f, mesh, times)


def _validate(cfg, mesh, times, err):
    report = validate_assumptions(cfg.problem, mesh, times)
    if not report.passed:
        for c in report.checks:
            if not c.passed:
                print("validation failed: %s (worst %s)"
                      % (c.assumption, _fmt(c.worst_value)), file=err)
        return None
    return report


def _validation_payload(cfg, report):
    d = report.as_dict()
    d["fd_derivative_fields"] = list(cfg.fd_derivative_fields)
    return d


def _solve(cfg):
    mesh = _build_mesh(cfg)
    times = TimePartition(cfg.time_nodes())
    constants = _constants_for(cfg, mesh, times)
    traj = run(cfg.problem, mesh, times, params=cfg.params,
               stab=cfg.stab, policy=cfg.policy, degree=cfg.degree,
               constants=constants, solver_kind=cfg.solver_kind,
               solver_tol=cfg.solver_tol, picard_tol=cfg.picard_tol,
               picard_max_iter=cfg.picard_max)
    return traj


def _trajectory_rows(traj):
    rows = []
    nodes = traj.times.nodes
    p = traj.problem
    for n, (sp, u) in enumerate(zip(traj.spaces, traj.states)):
        M = mass_matrix(sp)
        E = p.epsilon * stiffness_matrix(sp) + p.beta * M
        v = u.values
        tau = float(nodes[n] - nodes[n - 1]) if n else 0.0
        d = traj.diagnostics[n - 1] if n else None
        rows.append([n, float(nodes[n]), tau, sp.mesh.n_vertices,
                     sp.mesh.n_triangles, sp.n_dofs,
                     d.picard_iterations if d else 0,
                     d.residual if d else 0.0,
                     math.sqrt(max(float(v @ (M @ v)), 0.0)),
                     math.sqrt(max(float(v @ (E @ v)), 0.0))])
    return rows


TRAJECTORY_COLUMNS = ["n", "t_n", "tau_n", "n_vertices", "n_triangles",
                      "n_dofs", "picard_iterations", "solver_residual",
                      "u_l2", "u_energy"]


def cmd_run(cfg, out_dir, threads=1, seed=0, err=None):
    err = err or sys.stderr
    mesh = _build_mesh(cfg)
    times = TimePartition(cfg.time_nodes())
    report = _validate(cfg, mesh, times, err)
    if report is None:
        return EXIT_VALIDATION
    try:
        traj = _solve(cfg)
    except SolverFailure as exc:
        print("solver failure: %s" % exc, file=err)
        return EXIT_SOLVER
    files = _Files(out_dir)
    pre = cfg.output.prefix
    files.csv(pre + "_trajectory.csv", cfg, TRAJECTORY_COLUMNS,
              _trajectory_rows(traj))
    files.json(pre + "_validation.json", cfg,
               _validation_payload(cfg, report))
    for n, (sp, u) in enumerate(zip(traj.spaces, traj.states)):
        t = float(traj.times.nodes[n])
        if cfg.output.fields:
            files.add("%s_fields/u_%04d.csv" % (pre, n),
                      _field_dump(cfg, sp, u.values))
        if cfg.output.vtk:
            files.add("%s_vtk/u_%04d.vtk" % (pre, n),
                      _vtk_snapshot(cfg, sp, u.values, t))
    files.flush()
    return EXIT_OK


def cmd_estimate(cfg, out_dir, threads=1, seed=0, err=None):
    err = err or sys.stderr
    mesh = _build_mesh(cfg)
    times = TimePartition(cfg.time_nodes())
    report = _validate(cfg, mesh, times, err)
    if report is None:
        return EXIT_VALIDATION
    try:
        traj = _solve(cfg)
    except SolverFailure as exc:
        print("solver failure: %s" % exc, file=err)
        return EXIT_SOLVER
    est = estimate_trajectory(traj)
    files = _Files(out_dir)
    pre = cfg.output.prefix
    files.csv(pre + "_estimate.csv", cfg, CSV_COLUMNS,
              [s.csv_values() for s in est.steps])
    files.json(pre + "_report.json", cfg, est.as_dict())
    files.flush()
    return EXIT_OK


def _study_rows(rows):
    return [[r[c] for c in STUDY_COLUMNS] for r in rows]


def cmd_verify(cfg, out_dir, threads=1, seed=0, err=None):
    err = err or sys.stderr
    if cfg.verify is None:
        print("verify needs a [verify] section with a case id",
              file=err)
        return EXIT_USAGE
    vo = cfg.verify
    case = manufactured_case(vo.case, epsilon=vo.epsilon,
                             T=cfg.problem.T)
    rows = convergence_study(case, vo.levels, n0=vo.n0,
                             theta=cfg.params.theta, tau0=vo.tau0,
                             tau_power=vo.tau_power, stab=cfg.stab,
                             degree=cfg.degree, threads=threads,
                             extra_refine=vo.extra_refine)
    from .verification import case_residual
    from .mesh import generate_structured as _gs
    from .stepper import run as _run
    mesh = _gs(UNIT_SQUARE, vo.n0)
    steps = max(1, int(round(case.problem.T / vo.tau0)))
    traj = _run(case.problem, mesh,
                TimePartition.uniform(case.problem.T, steps),
                params=cfg.params, stab=cfg.stab, degree=cfg.degree)
    worst = 0.0
    for n in range(1, len(traj.states)):
        worst = max(worst, residual_decomposition_check(
            traj, n, samples=20, seed=seed))
    checks = [
        ["case_strong_residual", case_residual(case), 1e-10],
        ["residual_decomposition_max", worst, 1e-10],
    ]
    checks = [row + ["true" if row[1] <= row[2] else "false"]
              for row in checks]
    files = _Files(out_dir)
    pre = cfg.output.prefix
    files.csv(pre + "_study.csv", cfg, STUDY_COLUMNS, _study_rows(rows))
    files.csv(pre + "_checks.csv", cfg,
              ["check", "value", "threshold", "passed"], checks)
    files.flush()
    if not all(row[3] == "true" for row in checks):
        print("verification checks failed", file=err)
        return EXIT_VALIDATION
    return EXIT_OK


def cmd_convergence(cfg, out_dir, levels=None, threads=1, seed=0,
                    err=None):
    err = err or sys.stderr
    if cfg.verify is None:
        print("convergence needs a [verify] section with a case id",
              file=err)
        return EXIT_USAGE
    vo = cfg.verify
    case = manufactured_case(vo.case, epsilon=vo.epsilon,
                             T=cfg.problem.T)
    rows = convergence_study(case, levels or vo.levels, n0=vo.n0,
                             theta=cfg.params.theta, tau0=vo.tau0,
                             tau_power=vo.tau_power, stab=cfg.stab,
                             degree=cfg.degree, threads=threads,
                             extra_refine=vo.extra_refine)
    files = _Files(out_dir)
    files.csv(cfg.output.prefix + "_study.csv", cfg, STUDY_COLUMNS,
              _study_rows(rows))
    files.flush()
    return EXIT_OK


def cmd_mesh_info(cfg, out_dir, threads=1, seed=0, err=None):
    err = err or sys.stderr
    mesh = _build_mesh(cfg)
    met = mesh_metrics(mesh)
    space = FeSpace(mesh, cfg.degree)
    payload = {
        "n_vertices": int(mesh.n_vertices),
        "n_triangles": int(mesh.n_triangles),
        "n_boundary_vertices": int(np.count_nonzero(
            mesh.boundary_vertex)),
        "n_dofs": int(space.n_dofs),
        "n_free_dofs": int(np.count_nonzero(space.free)),
        "h_max": float(met.h_max),
        "h_min": float(met.h_min),
        "shape_max": float(met.shape),
        "total_area": float(mesh.areas().sum()),
        "domain_diameter": float(domain_diameter(mesh)),
        "friedrichs_diameter_bound": float(friedrichs_bound(mesh)),
    }
    files = _Files(out_dir)
    files.json(cfg.output.prefix + "_mesh.json", cfg, payload)
    files.flush()
    return EXIT_OK


class _ArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print("%s: error: %s" % (self.prog, message), file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser():
    parser = _ArgumentParser(
        prog="convdiff",
        description="Adaptive space-time solver for non-stationary "
                    "convection-diffusion with a posteriori error "
                    "estimation.")
    parser.add_argument("--version", action="version",
                        version="convdiff " + __version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("run", "estimate", "verify", "convergence",
                 "mesh-info"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True,
                       help="path to the INI configuration")
        p.add_argument("--out", default="out",
                       help="output directory (default: out)")
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--seed", type=int, default=0,
                       help="seed for sampled checks")
        if name == "convergence":
            p.add_argument("--levels", type=int, default=None)
    return parser


_COMMANDS = {"run": cmd_run, "estimate": cmd_estimate,
             "verify": cmd_verify, "mesh-info": cmd_mesh_info}


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = parse_config(args.config)
    except FileNotFoundError:
        print("config file not found: %s" % args.config,
              file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print("config error: %s" % exc, file=sys.stderr)
        return EXIT_USAGE
    if args.threads < 1:
        print("--threads must be at least 1", file=sys.stderr)
        return EXIT_USAGE
    if args.command == "convergence":
        return cmd_convergence(cfg, args.out, levels=args.levels,
                               threads=args.threads, seed=args.seed)
    return _COMMANDS[args.command](cfg, args.out, threads=args.threads,
                                   seed=args.seed)


if __name__ == "__main__":
    sys.exit(main())
