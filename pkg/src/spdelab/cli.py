"""Command-line front end: one subcommand per pipeline stage.

Every run writes a manifest.json with the canonical config hash into its
output directory, so artifacts are reproducible bit-for-bit from
(config, seed).  Exit codes: 0 success, 2 config error, 3 numerical failure
(with a diagnostics file where possible).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import _svgplot
from .action import action_of, minimize_action
from .config import RunConfig, manifest
from .errors import ConfigError, SpdelabError
from .evolvers import integrate_controlled, integrate_spde, simulate_ensemble, solve_skeleton
from .grid_kernel import default_estimate_times, fit_kernel_estimates, save_eigenvalues_csv
from .ldp_lab import convergence_experiment, estimate_event, fit_rate, tightness_probe
from .coefficients import validate_assumptions
from .stochastics import Control, control_to_csv, sample_brownian

SUBCOMMANDS = ("simulate", "skeleton", "controlled", "minimize-action", "mc-estimate",
               "fit-rate", "converge", "tightness", "verify-kernel", "validate-coeffs")


def _write_json(path: Path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, default=_jsonable)


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return str(obj)


def _prepare(cfg: RunConfig, subcommand: str):
    out = Path(cfg.resolved["output"]["dir"])
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "manifest.json", manifest(cfg, {"subcommand": subcommand}))
    return out


def _stamp(cfg: RunConfig, payload: dict) -> dict:
    payload["config_hash"] = cfg.config_hash()
    payload["seed"] = cfg.resolved["run"]["seed"]
    return payload


def _bias_control(cfg: RunConfig, op, c, xi, tg, workers):
    from .stochastics import control_from_csv

    bias = cfg.resolved["estimate"].get("bias", "none")
    if bias == "none":
        return None
    if isinstance(bias, str) and bias.startswith("csv:"):
        return control_from_csv(bias[4:])
    if bias == "minimize":
        av = minimize_action(op, c, xi, cfg.target(), tg, cfg.minimize_options(),
                             rho=cfg.resolved["run"]["rho"])
        if not av.feasible:
            raise SpdelabError("bias minimization declared the target infeasible")
        return av.control
    raise ConfigError("estimate.bias", f"unknown bias spec {bias!r}")


# ---------------------------------------------------------------------------
# Subcommand handlers
# ---------------------------------------------------------------------------

def _cmd_verify_kernel(cfg: RunConfig, workers: int) -> int:
    out = _prepare(cfg, "verify-kernel")
    op = cfg.operator()
    times = default_estimate_times(op)
    reports = {f"p{p:g}": fit_kernel_estimates(op, p, times).to_dict() for p in (1, 2)}
    _write_json(out / "kernel_report.json", reports)
    save_eigenvalues_csv(op, out / "eigenvalues.csv")
    lam1 = reports["p1"]["lambda_p"]
    print(f"verify-kernel: lambda_1 = {lam1:.4f}; "
          f"all bounds pass: {all(all(r['passes'].values()) for r in reports.values())}")
    return 0


def _cmd_validate_coeffs(cfg: RunConfig, workers: int) -> int:
    out = _prepare(cfg, "validate-coeffs")
    c = cfg.coefficients()
    report = validate_assumptions(c, T=cfg.resolved["run"]["T"])
    report.save_json(out / "validation.json")
    print(f"validate-coeffs: all assumptions pass: {report.all_pass}")
    return 0


def _cmd_simulate(cfg: RunConfig, workers: int) -> int:
    out = _prepare(cfg, "simulate")
    op, c = cfg.operator(), cfg.coefficients()
    run = cfg.resolved["run"]
    tg = cfg.time_grid()
    xi = cfg.initial_field(op.grid)
    if run["n_paths"] == 1:
        path = sample_brownian(c.k, tg, run["seed"])
        fld, diag = integrate_spde(op, c, xi, run["eps"], path, rho=run["rho"])
        fld.to_csv(out / "field.csv")
        _write_json(out / "summary.json", {"sup_rho": fld.sup_lp_norm(),
                                           "diagnostics": vars(diag)})
    else:
        res = simulate_ensemble(op, c, xi, run["eps"], tg, run["n_paths"],
                                run["seed"], rho=run["rho"], n_workers=workers)
        finite = res.sup_rho[~res.blown]
        _write_json(out / "summary.json", {
            "n_paths": res.n_paths, "n_blowups": res.n_blowups,
            "mean_sup_rho": float(np.mean(finite)) if finite.size else None,
            "max_sup_rho": float(np.max(finite)) if finite.size else None,
        })
        np.savetxt(out / "terminal_mean.csv",
                   np.column_stack([op.grid.interior_coords(),
                                    res.terminal.mean(axis=0)]),
                   delimiter=",", header=",".join(
                       [f"x{i + 1}" for i in range(op.grid.dim)] + ["mean_value"]),
                   comments="")
    print(f"simulate: wrote artifacts to {out}")
    return 0


def _cmd_skeleton(cfg: RunConfig, workers: int) -> int:
    out = _prepare(cfg, "skeleton")
    op, c = cfg.operator(), cfg.coefficients()
    tg = cfg.time_grid()
    xi = cfg.initial_field(op.grid)
    phi = cfg.control(tg, c.k)
    fld, diag = solve_skeleton(op, c, xi, phi, rho=cfg.resolved["run"]["rho"])
    fld.to_csv(out / "field.csv")
    _write_json(out / "summary.json", {"sup_rho": fld.sup_lp_norm(),
                                       "diagnostics": vars(diag)})
    print(f"skeleton: converged in {diag.picard_sweeps} sweeps")
    return 0


def _cmd_controlled(cfg: RunConfig, workers: int) -> int:
    out = _prepare(cfg, "controlled")
    op, c = cfg.operator(), cfg.coefficients()
    run = cfg.resolved["run"]
    tg = cfg.time_grid()
    xi = cfg.initial_field(op.grid)
    phi = cfg.control(tg, c.k)
    path = sample_brownian(c.k, tg, run["seed"])
    fld, diag = integrate_controlled(op, c, xi, run["eps"], path, phi, rho=run["rho"])
    fld.to_csv(out / "field.csv")
    _write_json(out / "summary.json", {"sup_rho": fld.sup_lp_norm(),
                                       "diagnostics": vars(diag)})
    print(f"controlled: sup-rho norm {fld.sup_lp_norm():.6g}")
    return 0


def _cmd_minimize_action(cfg: RunConfig, workers: int) -> int:
    out = _prepare(cfg, "minimize-action")
    op, c = cfg.operator(), cfg.coefficients()
    tg = cfg.time_grid()
    xi = cfg.initial_field(op.grid)
    av = minimize_action(op, c, xi, cfg.target(), tg, cfg.minimize_options(),
                         rho=cfg.resolved["run"]["rho"])
    _write_json(out / "action.json", {
        "value": av.value, "feasible": av.feasible,
        "residual": av.diagnostics.get("residual"),
        "rounds": av.diagnostics.get("rounds"),
    })
    trace = av.diagnostics.get("trace", [])
    if trace:
        np.savetxt(out / "trace.csv", np.asarray(trace, dtype=float), delimiter=",",
                   header="iteration,action,residual", comments="")
    if av.feasible:
        control_to_csv(av.control, out / "beta.csv")
        av.trajectory.to_csv(out / "psi.csv")
    print(f"minimize-action: value = {av.value:.6g} (feasible: {av.feasible})")
    return 0


def _cmd_mc_estimate(cfg: RunConfig, workers: int) -> int:
    out = _prepare(cfg, "mc-estimate")
    op, c = cfg.operator(), cfg.coefficients()
    run = cfg.resolved["run"]
    tg = cfg.time_grid()
    xi = cfg.initial_field(op.grid)
    method = cfg.resolved["estimate"]["method"]
    bias = _bias_control(cfg, op, c, xi, tg, workers) if method == "importance" else None
    est = estimate_event(op, c, xi, run["eps"], cfg.target(), run["n_paths"],
                         method, bias, time_grid=tg, seed=run["seed"],
                         rho=run["rho"], n_workers=workers)
    _write_json(out / "estimate.json", _stamp(cfg, est.to_dict()))
    print(f"mc-estimate: p_hat = {est.p_hat:.4g} +/- {est.stderr:.2g} ({method})")
    return 0


def _cmd_fit_rate(cfg: RunConfig, workers: int) -> int:
    out = _prepare(cfg, "fit-rate")
    op, c = cfg.operator(), cfg.coefficients()
    run = cfg.resolved["run"]
    if not run["eps_grid"]:
        raise ConfigError("run.eps_grid", "fit-rate needs an eps grid")
    tg = cfg.time_grid()
    xi = cfg.initial_field(op.grid)
    method = cfg.resolved["estimate"]["method"]
    bias = _bias_control(cfg, op, c, xi, tg, workers) if method == "importance" else None
    estimates = []
    for i, eps in enumerate(run["eps_grid"]):
        estimates.append(estimate_event(
            op, c, xi, eps, cfg.target(), run["n_paths"], method, bias,
            time_grid=tg, seed=run["seed"] + i, rho=run["rho"], n_workers=workers))
    fit = fit_rate(estimates)
    payload = _stamp(cfg, fit.to_dict())
    payload["estimates"] = [e.to_dict() for e in estimates]
    if bias is not None:
        payload["minimizer_action"] = action_of(bias)
    _write_json(out / "rate.json", payload)
    np.savetxt(out / "rate.csv",
               np.column_stack([fit.eps_grid,
                                [e.p_hat for e in estimates],
                                [e.stderr for e in estimates],
                                fit.minus_eps_log_p, fit.fitted]),
               delimiter=",", header="eps,p_hat,stderr,minus_eps_log_p,fitted",
               comments="")
    _svgplot.line_plot(out / "rate.svg", fit.eps_grid,
                       [fit.minus_eps_log_p, fit.fitted],
                       labels=["-eps log p", "affine fit"],
                       title="Rate scaling", xlabel="eps", ylabel="-eps log p")
    print(f"fit-rate: intercept = {fit.intercept:.4g}, slope = {fit.slope:.4g}")
    return 0


def _cmd_converge(cfg: RunConfig, workers: int) -> int:
    out = _prepare(cfg, "converge")
    op, c = cfg.operator(), cfg.coefficients()
    run = cfg.resolved["run"]
    conv = cfg.resolved["converge"]
    if not run["eps_grid"]:
        raise ConfigError("run.eps_grid", "converge needs an eps grid")
    tg = cfg.time_grid()
    xi0 = cfg.initial_field(op.grid)
    bump = 4.0 * np.prod(
        [(op.grid.interior_coords()[:, ax] - op.grid.extents[ax][0])
         / (op.grid.extents[ax][1] - op.grid.extents[ax][0])
         * (1 - (op.grid.interior_coords()[:, ax] - op.grid.extents[ax][0])
            / (op.grid.extents[ax][1] - op.grid.extents[ax][0]))
         for ax in range(op.grid.dim)], axis=0)
    scale = float(conv["xi_perturbation"])
    phi_val = np.atleast_1d(np.asarray(conv["phi_value"], dtype=float))
    if phi_val.size != c.k:
        raise ConfigError("converge.phi_value", f"needs k={c.k} components")

    table = convergence_experiment(
        op, c,
        xi_family=lambda e: xi0 + scale * e * bump,
        phi_family=lambda e: Control.constant(phi_val, tg),
        eps_grid=run["eps_grid"], time_grid=tg, n_paths=run["n_paths"],
        seed=run["seed"], rho=run["rho"], gamma=conv["gamma"], n_workers=workers)
    np.savetxt(out / "converge.csv",
               np.asarray([[r.eps, r.noise_level, r.mean_distance, r.stderr, r.n]
                           for r in table.rows]),
               delimiter=",", header="eps,noise_level,mean_distance,stderr,n",
               comments="")
    pos = [r for r in table.rows if r.eps > 0 and r.mean_distance > 0]
    if len(pos) >= 2:
        _svgplot.line_plot(out / "converge.svg",
                           [r.eps for r in pos], [[r.mean_distance for r in pos]],
                           labels=["mean sup-distance"], title="Convergence to the skeleton",
                           xlabel="eps", ylabel="distance", logx=True, logy=True)
    _write_json(out / "converge.json", _stamp(cfg, table.to_dict()))
    print(f"converge: distances {[round(r.mean_distance, 6) for r in table.rows]}")
    return 0


def _cmd_tightness(cfg: RunConfig, workers: int) -> int:
    out = _prepare(cfg, "tightness")
    op, c = cfg.operator(), cfg.coefficients()
    run = cfg.resolved["run"]
    if not run["eps_grid"]:
        raise ConfigError("run.eps_grid", "tightness needs an eps grid")
    tg = cfg.time_grid()
    xi = cfg.initial_field(op.grid)
    table = tightness_probe(op, c, xi, run["eps_grid"],
                            cfg.resolved["tightness"]["C_grid"], run["n_paths"],
                            time_grid=tg, seed=run["seed"], rho=run["rho"],
                            n_workers=workers)
    rows = []
    for i, eps in enumerate(table.eps_grid):
        for j, C in enumerate(table.C_grid):
            rows.append([eps, C, table.p_hat[i, j]])
    np.savetxt(out / "tightness.csv", np.asarray(rows), delimiter=",",
               header="eps,C,p_hat", comments="")
    _write_json(out / "tightness.json", _stamp(cfg, table.to_dict()))
    print(f"tightness: sup over eps at largest C = {table.sup_over_eps[-1]:.4g}")
    return 0


_HANDLERS = {
    "verify-kernel": _cmd_verify_kernel,
    "validate-coeffs": _cmd_validate_coeffs,
    "simulate": _cmd_simulate,
    "skeleton": _cmd_skeleton,
    "controlled": _cmd_controlled,
    "minimize-action": _cmd_minimize_action,
    "mc-estimate": _cmd_mc_estimate,
    "fit-rate": _cmd_fit_rate,
    "converge": _cmd_converge,
    "tightness": _cmd_tightness,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spdelab",
        description="Small-noise large-deviation laboratory for semilinear SPDEs")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="TOML config file")
        p.add_argument("--seed", type=int, default=None, help="override run.seed")
        p.add_argument("--out", default=None, help="override output.dir")
        p.add_argument("--workers", type=int, default=1, help="worker threads")
        p.add_argument("--override", action="append", default=[],
                       metavar="KEY=VALUE", help="dotted config override")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        overrides = {}
        for item in args.override:
            if "=" not in item:
                raise ConfigError("override", f"expected KEY=VALUE, got {item!r}")
            key, _, value = item.partition("=")
            overrides[key] = value
        cfg = RunConfig.load(args.config, overrides=overrides,
                             seed=args.seed, out=args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        return _HANDLERS[args.subcommand](cfg, max(1, args.workers))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except SpdelabError as exc:
        out = Path(cfg.resolved["output"]["dir"])
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "error.json",
                    {"error": type(exc).__name__, "message": str(exc)})
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
