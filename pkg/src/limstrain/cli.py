"""Command line runner: check-law, solve, diagnose, sweep, oracle-compare.

Everything a run produces lands in one output directory: comma-separated
tables with a header row, text field files, and a manifest echoing the fully
resolved configuration.  Outputs are deterministic: rerunning the same
config and seed reproduces every table byte for byte.

Exit codes: 0 success, 2 configuration error, 3 solver failure, 4 oracle
mismatch beyond tolerance.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

__all__ = ["main"]

_COMMANDS = ("check-law", "solve", "diagnose", "sweep", "oracle-compare")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="limstrain",
        description="Solvers and diagnostics for strain-limited elliptic systems.")
    parser.add_argument("--config", required=True, help="path to a TOML run config")
    parser.add_argument("--command", required=True, choices=_COMMANDS)
    parser.add_argument("--out", default=None,
                        help="output directory (overrides config and LIMSTRAIN_OUT)")
    parser.add_argument("--seed", type=int, default=None, help="seed override")
    parser.add_argument("--threads", type=int, default=None,
                        help="BLAS/OpenMP thread cap (overrides LIMSTRAIN_THREADS)")
    args = parser.parse_args(argv)

    threads = args.threads
    if threads is None and os.environ.get("LIMSTRAIN_THREADS"):
        try:
            threads = int(os.environ["LIMSTRAIN_THREADS"])
        except ValueError:
            print("error: LIMSTRAIN_THREADS is not an integer", file=sys.stderr)
            return 2
    if threads is not None:
        # must land in the environment before the numeric stack spins up its pools
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(threads)

    from .errors import ConfigError, LimstrainError, OracleFailure

    try:
        from .config import load_config

        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.resolved["seed"] = int(args.seed)
        if threads is not None:
            cfg.resolved["threads"] = threads
        outdir = args.out or os.environ.get("LIMSTRAIN_OUT") or cfg.output_dir
        out = Path(outdir)
        out.mkdir(parents=True, exist_ok=True)
        _dispatch(cfg, args.command, out)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OracleFailure as exc:
        print(f"oracle mismatch: {exc}", file=sys.stderr)
        return 4
    except LimstrainError as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return 3
    return 0


def _dispatch(cfg, command: str, out: Path) -> None:
    _write_manifest(cfg, command, out)
    if command == "check-law":
        _run_check_law(cfg, out)
    elif command == "solve":
        _run_solve(cfg, out)
    elif command == "diagnose":
        problem, sols = _run_solve(cfg, out)
        _run_diagnose(cfg, problem, sols, out)
    elif command == "sweep":
        _run_sweep(cfg, out)
    elif command == "oracle-compare":
        _run_oracle_compare(cfg, out)


# ---------------------------------------------------------------------------
# table and manifest plumbing


def _cell(v) -> str:
    import numpy as np

    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if v is None:
        return ""
    return str(v)


def write_table(path: Path, header, rows) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_cell(v) for v in row) + "\n")


def _write_manifest(cfg, command: str, out: Path) -> None:
    from . import __version__
    from .config import dump_toml

    doc = dict(cfg.resolved)
    doc["run"] = {"package": "limstrain", "version": __version__, "command": command}
    with open(out / "manifest.toml", "w", newline="\n") as fh:
        fh.write(dump_toml(doc))


# ---------------------------------------------------------------------------
# commands


def _run_check_law(cfg, out: Path) -> None:
    from .constitutive import StructureSampler, check_structure

    chk = cfg.resolved["check"]
    law = cfg.build_law()
    sampler = StructureSampler(dim=int(chk["dim"]), symmetric=bool(chk["symmetric"]),
                               radius=float(chk["radius"]), n_radii=int(chk["n_radii"]),
                               n_directions=int(chk["n_directions"]), seed=cfg.seed)
    report = check_structure(law, sampler)
    write_table(out / "structure_report.csv", ("check", "value"), report.rows())


def _run_solve(cfg, out: Path):
    from .diagnostics import apriori_monitor
    from .formats import write_field, write_mesh, write_tensor_field
    from .solver import continuation_solve
    from .variational import duality_gap

    problem = cfg.build_problem()
    schedule = cfg.schedule(problem.mesh.dim)
    sols = continuation_solve(problem, schedule=schedule,
                              reg_tol=float(cfg.resolved["solver"]["reg_tol"]),
                              **cfg.solver_options())
    trace = apriori_monitor(sols)

    write_table(out / "solve_report.csv",
                ("n", "newton_iters", "final_residual", "damping_events",
                 "relation_defect", "regularization_l1"),
                [(s.n, s.report.newton_iters, s.report.final_residual,
                  s.report.damping_events, s.report.relation_defect,
                  s.report.regularization_l1) for s in sols])
    write_table(out / "apriori.csv",
                ("n", "t_l1", "t_holder", "strain_norm", "reg_l1", "growth_flag"),
                [(int(n), t1, th, sn, rl, trace.growth_flag)
                 for n, t1, th, sn, rl in zip(trace.n, trace.t_l1, trace.t_holder,
                                              trace.strain_norm, trace.reg_l1)])

    terminal = sols[-1]
    rep = duality_gap(problem, terminal.u, terminal.T)
    write_table(out / "duality.csv",
                ("gap", "fenchel_defect", "equilibrium_defect",
                 "primal_value", "dual_value", "finite"),
                [(rep.gap, rep.fenchel_defect, rep.equilibrium_defect,
                  rep.primal_value, rep.dual_value, rep.finite)])

    if cfg.resolved["output"]["fields"]:
        write_mesh(problem.mesh, out / "mesh.txt")
        write_field(terminal.u, out / "u.txt")
        write_tensor_field(terminal.T, out / "T.txt")
    return problem, sols


def interior_bump(space):
    """Deterministic vector test field vanishing on every boundary node."""
    import numpy as np

    from .discretization import Field

    mesh = space.mesh
    lo = mesh.vertices.min(axis=0)
    hi = mesh.vertices.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    t = (mesh.vertices - lo) / span
    bump = np.prod(4.0 * t * (1.0 - t), axis=1)
    bump[mesh.boundary_vertices()] = 0.0
    vals = np.repeat(bump[:, None], space.n_components, axis=1)
    return Field(space, vals)


def _run_diagnose(cfg, problem, sols, out: Path) -> dict:
    import numpy as np

    from .constitutive import tensor_norm
    from .diagnostics import (
        boundary_defect,
        default_radius_ladder,
        direction_fields,
        maximal_function,
        renorm_residual,
        stress_quantile_ladder,
    )
    from .potentials import alpha_limit

    dia = cfg.resolved["diagnostics"]
    terminal = sols[-1]
    mesh = problem.mesh
    T = terminal.T

    w = interior_bump(problem.space)
    ladder = stress_quantile_ladder(T, tuple(dia["k_quantiles"]))
    rows = []
    for k in ladder:
        rep = renorm_residual(T, problem.f, w, k, kind=problem.kind)
        rows.append((rep.k, rep.residual, rep.transport_magnitude,
                     rep.equilibrium_residual, rep.quad_tolerance))
    write_table(out / "renorm.csv",
                ("k", "residual", "transport", "equilibrium_residual", "quad_tolerance"),
                rows)

    radii = dia["radii"]
    if radii is None:
        radii = default_radius_ladder(mesh, n_radii=int(dia["n_radii"]))
    smap = maximal_function(tensor_norm(T.values)[:, 0], mesh, radii)
    write_table(out / "maximal_map.csv",
                ("vertex", *(f"x{i}" for i in range(mesh.dim)), "max_value",
                 "exponent", "r_squared", "flag", "nearest_tag", "is_boundary"),
                [(v, *mesh.vertices[v], smap.max_value[v], smap.exponent[v],
                  smap.r_squared[v], smap.flag[v], smap.nearest_tag[v],
                  bool(smap.is_boundary[v]))
                 for v in range(mesh.n_vertices)])
    summary = {
        "interior_concentrating": smap.count("concentrating", interior_only=True),
        "boundary_concentrating": (smap.count("concentrating")
                                   - smap.count("concentrating", interior_only=True)),
        "suspicious": smap.count("suspicious"),
        "clean": smap.count("clean"),
        "max_exponent": float(np.max(smap.exponent)),
    }
    write_table(out / "maximal_summary.csv", tuple(summary), [tuple(summary.values())])

    bd = boundary_defect(problem, T)
    write_table(out / "boundary_defect.csv", ("facet", "defect"),
                [(int(fi), d) for fi, d in zip(bd.facet_indices, bd.defects)])
    write_table(out / "boundary_defect_summary.csv",
                ("total_variation", "identically_absent"),
                [(bd.total_variation, bd.identically_absent)])

    eps = sorted((float(f) * mesh.min_diameter for f in dia["eps_factors"]), reverse=True)
    alpha = alpha_limit(problem.law) if getattr(problem.law, "is_radial", False) else 1.0
    dirs = direction_fields(T, terminal.u, eps, kind=problem.kind, alpha=alpha)
    succ_T = dirs.successive_l1(mesh, "stress")
    succ_E = dirs.successive_l1(mesh, "strain")
    write_table(out / "directions.csv",
                ("eps", "pair_l1", "successive_stress_l1", "successive_strain_l1"),
                [(dirs.eps[i], dirs.pair_l1[i],
                  succ_T[i - 1] if i > 0 else 0.0,
                  succ_E[i - 1] if i > 0 else 0.0)
                 for i in range(len(eps))])
    return summary


def _run_sweep(cfg, out: Path) -> None:
    rows = []
    for a in cfg.resolved["sweep"]["a_values"]:
        sub = out / f"a_{a:g}"
        sub.mkdir(parents=True, exist_ok=True)
        problem = cfg.build_problem(a=float(a))
        from .solver import continuation_solve

        sols = continuation_solve(problem, schedule=cfg.schedule(problem.mesh.dim),
                                  reg_tol=float(cfg.resolved["solver"]["reg_tol"]),
                                  **cfg.solver_options())
        summary = _run_diagnose(cfg, problem, sols, sub)
        rows.append((float(a), summary["interior_concentrating"],
                     summary["boundary_concentrating"], summary["suspicious"],
                     summary["clean"], summary["max_exponent"]))
    write_table(out / "concentration_summary.csv",
                ("a", "interior_concentrating", "boundary_concentrating",
                 "suspicious", "clean", "max_exponent"), rows)


def _run_oracle_compare(cfg, out: Path) -> None:
    import numpy as np

    from .errors import ConfigError, OracleFailure
    from .oracles import oracle_1d
    from .solver import continuation_solve

    geo = cfg.resolved["geometry"]
    if geo["kind"] != "interval":
        raise ConfigError("oracle-compare requires geometry.kind = 'interval'")
    if list(geo["dirichlet"]) != ["left"]:
        raise ConfigError("oracle-compare requires dirichlet = ['left'] "
                          "(the closed form fixes the left end and loads the right)")
    problem = cfg.build_problem()
    data = cfg.resolved["data"]

    def _const_scalar(spec, name):
        if spec is None:
            return 0.0
        arr = np.asarray(spec, dtype=float).reshape(-1)
        if arr.size != 1:
            raise ConfigError(f"oracle-compare needs constant scalar data.{name}")
        return float(arr[0])

    c = _const_scalar(data["f"], "f")
    g1 = _const_scalar(data["g"], "g")
    u_left = _const_scalar(data["u0"], "u0")
    oracle = oracle_1d(problem.law, c, dirichlet_left=u_left, neumann_right=g1)

    sols = continuation_solve(problem, schedule=cfg.schedule(1),
                              reg_tol=float(cfg.resolved["solver"]["reg_tol"]),
                              **cfg.solver_options())
    t_tol = float(cfg.resolved["oracle"]["t_l1_tol"])
    u_tol = float(cfg.resolved["oracle"]["u_linf_tol"])
    rows = []
    for s in sols:
        x_c = s.T.points[:, 0, 0]
        t_err = float(np.sum(s.T.weights[:, 0]
                             * np.abs(s.T.values[:, 0, 0, 0] - oracle.T_exact(x_c))))
        u_err = float(np.max(np.abs(s.u.values[:, 0]
                                    - oracle.u_exact(problem.mesh.vertices[:, 0]))))
        rows.append((s.n, t_err, u_err, t_tol, u_tol,
                     t_err <= t_tol and u_err <= u_tol))
    write_table(out / "oracle_compare.csv",
                ("n", "t_l1_err", "u_linf_err", "t_tol", "u_tol", "ok"), rows)
    last = rows[-1]
    if not last[-1]:
        raise OracleFailure(
            f"terminal iterate disagrees with the closed form: "
            f"t_l1_err={last[1]:.3e} (tol {t_tol:g}), "
            f"u_linf_err={last[2]:.3e} (tol {u_tol:g})")


if __name__ == "__main__":
    sys.exit(main())
