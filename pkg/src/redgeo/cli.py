"""Scenario runner: configuration ingestion, orchestration, report emission.

Every subcommand reads a flat key-value config describing the flow and grid,
executes one task, writes report.json (plus data.csv where applicable) into
the output directory and exits 0 when all asserted checks pass, 2 on a check
failure and 1 on a usage or configuration error.  Reports are serialized with
sorted keys and repr floats, so identical configs and seeds give byte-identical
artifacts.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import suite as suite_mod
from .backward_heat import (SOLUTION_KINDS, exact_solution, fd_residual,
                            heat_solution_metadata, heat_solution_to_csv,
                            solve_backward_heat, verify_f_w_identities)
from .k_scaling import ForwardScaleFlow, k_trace_harnack_check, kfrdv_check
from .lgeodesic import (LGeodesicError, SampledCurve, reduced_field,
                        reduced_field_report, reduced_field_to_csv,
                        solve_minimal_l_geodesic, variational_refine)
from .model_flows import (FlowDomainError, ModelSpaceSpec, SpaceTimePoint,
                          flow_from_config, parse_keyvalue)
from .quantities import verify_derivative_formulas
from .sz_harness import (build_cutoff, estimate_constants, gradient_estimate_check,
                         liouville_sweep, rhs_factor)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_CHECK_FAILED = 2


class ConfigError(ValueError):
    pass


def _write_report(out_dir: Path, payload: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "report.json", "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _grid_from_config(cfg: dict, flow):
    try:
        rho = np.linspace(float(cfg["grid.rho_min"]), float(cfg["grid.rho_max"]),
                          int(cfg["grid.rho_nodes"]))
        tau = np.linspace(float(cfg.get("grid.tau_min", cfg["tau.min"])),
                          float(cfg.get("grid.tau_max", cfg["tau.max"])),
                          int(cfg["grid.tau_nodes"]))
    except KeyError as exc:
        raise ConfigError(f"missing grid key {exc}") from exc
    if len(rho) < 2 or len(tau) < 2:
        raise ConfigError("grids must have at least 2 nodes per direction")
    if tau[0] <= 0:
        raise ConfigError("grid.tau_min must be positive")
    return rho, tau


def _heat_kind_from_config(cfg: dict):
    name = cfg.get("heat.kind")
    if name is None:
        raise ConfigError("missing heat.kind")
    if name == "constant":
        return SOLUTION_KINDS[name](value=float(cfg.get("heat.value", 1.0)))
    if name == "linear_line":
        return SOLUTION_KINDS[name](slope=float(cfg.get("heat.slope", 1.0)),
                                    offset=float(cfg.get("heat.offset", 0.0)))
    if name == "exp_line":
        return SOLUTION_KINDS[name]()
    if name == "eigen":
        return SOLUTION_KINDS[name](shift=float(cfg.get("heat.shift", 0.0)))
    raise ConfigError(f"unknown heat.kind {name!r}")


def _load(args):
    cfg = parse_keyvalue(args.config)
    flow = flow_from_config(cfg, base_dir=Path(args.config).parent)
    return cfg, flow


# -- tasks ----------------------------------------------------------------------

def task_reduced_field(args) -> int:
    cfg, flow = _load(args)
    rho, tau = _grid_from_config(cfg, flow)
    fld = reduced_field(flow, rho, tau, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    reduced_field_to_csv(fld, out / "data.csv")
    report = reduced_field_report(fld)
    report["task"] = "reduced-field"
    report["pass"] = not fld.failures
    _write_report(out, report)
    return EXIT_OK if report["pass"] else EXIT_CHECK_FAILED


def task_lgeodesic(args) -> int:
    cfg, flow = _load(args)
    target = SpaceTimePoint(float(args.target_rho), float(args.target_tau))
    geo_fi = solve_minimal_l_geodesic(flow, target)
    geo_sh = solve_minimal_l_geodesic(flow, target, method="shooting")
    s = np.linspace(0.0, np.sqrt(target.tau), 257)[1:]
    init = SampledCurve(taus=s ** 2, rhos=target.rho * s / np.sqrt(target.tau), order=1)
    geo_var = variational_refine(flow, init)
    lengths = {"first_integral": geo_fi.l_length, "shooting": geo_sh.l_length,
               "variational": geo_var.l_length}
    scale = max(abs(v) for v in lengths.values()) or 1.0
    spread = (max(lengths.values()) - min(lengths.values())) / scale
    report = {
        "task": "lgeodesic", "target": {"rho": target.rho, "tau": target.tau},
        "lengths": lengths, "relative_spread": spread,
        "first_integral": geo_fi.first_integral, "drift": geo_fi.drift,
        "pass": spread <= 1e-4,
    }
    _write_report(Path(args.out), report)
    return EXIT_OK if report["pass"] else EXIT_CHECK_FAILED


def task_heat_solve(args) -> int:
    cfg, flow = _load(args)
    rho, tau = _grid_from_config(cfg, flow)
    kind = _heat_kind_from_config(cfg)
    if args.numeric:
        terminal = lambda r: kind(flow, r, np.full_like(r, tau[-1]))
        boundary = None
        if not (flow.model.kappa == 1 and abs(rho[0]) < 1e-12
                and abs(rho[-1] - np.pi) < 1e-12):
            boundary = lambda t: (float(kind(flow, rho[0], t)), float(kind(flow, rho[-1], t)))
        sol = solve_backward_heat(flow, terminal, rho, tau, boundary=boundary)
        ok = sol.max_principle_ok and sol.residual_max <= 10.0 * sol.residual_budget
    else:
        sol = exact_solution(flow, kind, rho, tau)
        ok = sol.residual_max <= 1e-8
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    heat_solution_to_csv(sol, out / "data.csv")
    report = heat_solution_metadata(sol)
    report["task"] = "heat-solve"
    report["pass"] = bool(ok)
    _write_report(out, report)
    return EXIT_OK if ok else EXIT_CHECK_FAILED


def task_identity_check(args) -> int:
    cfg, flow = _load(args)
    rho, tau = _grid_from_config(cfg, flow)
    fld = reduced_field(flow, rho, tau, seed=args.seed)
    convention = str(cfg.get("muller.convention", "definition"))
    conventions = ["definition", "remark"] if convention == "both" else [convention]
    payload = {"task": "identity-check", "reports": {}}
    ok = True
    for conv in conventions:
        rep = verify_derivative_formulas(flow, fld, K=args.K, convention=conv)
        payload["reports"][conv] = rep.to_dict()
        if conv == "definition":
            ok = rep.all_pass
    payload["pass"] = bool(ok)
    _write_report(Path(args.out), payload)
    return EXIT_OK if ok else EXIT_CHECK_FAILED


def task_grad_check(args) -> int:
    cfg, flow = _load(args)
    rho, tau = _grid_from_config(cfg, flow)
    fld = reduced_field(flow, rho, tau, seed=args.seed)
    kind = _heat_kind_from_config(cfg)
    sol = exact_solution(flow, kind, rho, tau)
    if args.A is not None:
        region = (fld.dfrak <= args.R) & (tau[:, None] <= args.T)
        if not np.any(region):
            raise ConfigError("region Q_{R,T} misses the grid")
        sol = sol.scaled(float(args.A) / float(np.max(sol.values[region])))
        bound = float(args.A)
    else:
        bound = sol.bound_A
    rep = gradient_estimate_check(flow, sol, fld, R=args.R, T=args.T, K=args.K, A=bound)
    payload = rep.to_dict()
    payload["task"] = "grad-check"
    _write_report(Path(args.out), payload)
    if rep.status == "inapplicable":
        return EXIT_OK
    return EXIT_OK if rep.passed else EXIT_CHECK_FAILED


def task_liouville_sweep(args) -> int:
    cfg, flow = _load(args)
    kind = _heat_kind_from_config(cfg)
    xs = np.linspace(float(cfg.get("grid.rho_min", -2.0)), float(cfg.get("grid.rho_max", 2.0)), 41)
    t_lo = float(cfg.get("grid.tau_min", max(float(cfg["tau.min"]), 0.5)))
    t_hi = float(cfg.get("grid.tau_max", min(float(cfg["tau.max"]), t_lo + 2.0)))
    sol = exact_solution(flow, kind, xs, np.linspace(t_lo, t_hi, 33))
    probe = SpaceTimePoint(float(args.probe_rho), float(args.probe_tau))
    r_list = [float(x) for x in args.r_list.split(",")]
    rep = liouville_sweep(flow, sol, r_list, probe)
    payload = rep.to_dict()
    payload["task"] = "liouville-sweep"
    payload["pass"] = all(rep.sound)
    _write_report(Path(args.out), payload)
    return EXIT_OK if payload["pass"] else EXIT_CHECK_FAILED


def task_scaling_check(args) -> int:
    R, T, K = args.R, args.T, args.K
    # the curvature term is scale-invariant; halving concerns 1/R + 1/sqrt(T)
    part = rhs_factor(R, T, 0.0)
    part_scaled = rhs_factor(2.0 * R, 4.0 * T, 0.0)
    exact = part_scaled == 0.5 * part
    payload = {
        "task": "scaling-check", "R": R, "T": T, "K": K,
        "factor": rhs_factor(R, T, K),
        "factor_2R_4T": rhs_factor(2.0 * R, 4.0 * T, K),
        "geometry_part": part, "geometry_part_2R_4T": part_scaled,
        "halving_exact": exact,
        "pass": exact,
    }
    _write_report(Path(args.out), payload)
    return EXIT_OK if payload["pass"] else EXIT_CHECK_FAILED


def _forward_flow_from_config(cfg: dict) -> ForwardScaleFlow:
    model = ModelSpaceSpec(n=int(cfg["model.n"]), kappa=int(cfg["model.kappa"]))
    return ForwardScaleFlow(model, K=float(cfg.get("forward.K", 0.0)),
                            a0=float(cfg.get("forward.a0", 1.0)),
                            t_domain=(float(cfg["forward.t_min"]), float(cfg["forward.t_max"])))


def task_harnack_check(args) -> int:
    cfg = parse_keyvalue(args.config)
    fwd = _forward_flow_from_config(cfg)
    lo, hi = fwd.t_domain
    t_grid = np.linspace(max(lo, 1e-2 * (hi - lo)) if not args.ancient else lo,
                         hi - 1e-3 * (hi - lo), int(args.t_grid))
    v_mags = tuple(float(x) for x in args.v_grid.split(","))
    rep = k_trace_harnack_check(fwd, t_grid, v_mags, ancient=args.ancient)
    rep["task"] = "harnack-check"
    _write_report(Path(args.out), rep)
    return EXIT_OK if rep["pass"] else EXIT_CHECK_FAILED


def task_kfrdv_check(args) -> int:
    cfg, flow = _load(args)
    v_mags = tuple(float(x) for x in args.v_grid.split(","))
    rep = kfrdv_check(flow, v_mags=v_mags)
    rep["task"] = "kfrdv-check"
    _write_report(Path(args.out), rep)
    return EXIT_OK if rep["pass"] else EXIT_CHECK_FAILED


def task_suite(args) -> int:
    indices = [int(x) for x in args.only.split(",")] if args.only else None
    results = suite_mod.run_all(indices)
    for res in results:
        print(res.line())
    payload = {
        "task": "suite",
        "results": [{"index": r.index, "title": r.title, "pass": r.passed,
                     "seconds": r.seconds, "details": _jsonable(r.details)}
                    for r in results],
        "pass": all(r.passed for r in results),
    }
    _write_report(Path(args.out), payload)
    return EXIT_OK if payload["pass"] else EXIT_CHECK_FAILED


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


# -- entry point -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="redgeo",
                                     description="reduced-geometry scenario runner")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", required=True, help="key-value scenario config")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=0, help="seed for multi-start scans")

    p = sub.add_parser("reduced-field", help="length/reduced-distance field on a grid")
    common(p)
    p.set_defaults(func=task_reduced_field)

    p = sub.add_parser("lgeodesic", help="three-solver agreement at one target")
    common(p)
    p.add_argument("--target-rho", type=float, required=True)
    p.add_argument("--target-tau", type=float, required=True)
    p.set_defaults(func=task_lgeodesic)

    p = sub.add_parser("heat-solve", help="catalog or numeric heat solution")
    common(p)
    p.add_argument("--numeric", action="store_true", help="method-of-lines solve")
    p.set_defaults(func=task_heat_solve)

    p = sub.add_parser("identity-check", help="derivative-formula verification")
    common(p)
    p.add_argument("--K", type=float, default=0.0)
    p.set_defaults(func=task_identity_check)

    p = sub.add_parser("grad-check", help="local gradient estimate on Q regions")
    common(p)
    p.add_argument("--R", type=float, required=True)
    p.add_argument("--T", type=float, required=True)
    p.add_argument("--K", type=float, default=0.0)
    p.add_argument("--A", type=float, default=None,
                   help="rescale the solution so its sup over Q_{R,T} is A")
    p.set_defaults(func=task_grad_check)

    p = sub.add_parser("liouville-sweep", help="nested-region classification")
    common(p)
    p.add_argument("--r-list", default="4,8,16,32")
    p.add_argument("--probe-rho", type=float, required=True)
    p.add_argument("--probe-tau", type=float, required=True)
    p.set_defaults(func=task_liouville_sweep)

    p = sub.add_parser("scaling-check", help="exact halving of the estimate factor")
    common(p, config=False)
    p.add_argument("--R", type=float, required=True)
    p.add_argument("--T", type=float, required=True)
    p.add_argument("--K", type=float, default=0.0)
    p.set_defaults(func=task_scaling_check)

    p = sub.add_parser("harnack-check", help="trace Harnack scan of a forward flow")
    common(p)
    p.add_argument("--t-grid", type=int, default=200)
    p.add_argument("--v-grid", default="0,0.5,1,2")
    p.add_argument("--ancient", action="store_true")
    p.set_defaults(func=task_harnack_check)

    p = sub.add_parser("kfrdv-check", help="closed-form identities of K-shifted flows")
    common(p)
    p.add_argument("--v-grid", default="0,0.5,1,2")
    p.set_defaults(func=task_kfrdv_check)

    p = sub.add_parser("suite", help="run the acceptance battery")
    common(p, config=False)
    p.add_argument("--only", default=None, help="comma list of criterion indices")
    p.set_defaults(func=task_suite)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except (ConfigError, FlowDomainError, LGeodesicError, FileNotFoundError,
            KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
