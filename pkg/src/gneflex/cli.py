"""Command-line interface.

Subcommands: ``run`` executes the distributed solver and writes a
trajectory plus a summary; ``oracle`` solves the same problem with the
full-information reference and writes a certificate; ``tune`` prints the
derived constants and step sizes; ``compare`` runs both solvers and writes
an agreement report. Exit status is nonzero on non-convergence or an
infeasible problem; a diagnostic summary is still written in those cases.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import solver as sv
from .config import RunConfig, resolve_config
from .errors import ConvergenceError, GneflexError, InfeasibleError, TuningError
from .game import GameModel
from .market import build_feasible_set, check_feasibility, clearing_price, load_adjustment
from .oracle import solve_vgne
from .tuning import GainSet, assemble_phi, averagedness, cocoercivity_constants, default_gains


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gneflex",
        description="Distributed equilibrium seeking for demand-response bidding",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, func, doc in (
        ("run", cmd_run, "execute the distributed solver"),
        ("oracle", cmd_oracle, "solve with the centralized reference"),
        ("tune", cmd_tune, "print derived constants and step sizes"),
        ("compare", cmd_compare, "run both solvers and report agreement"),
    ):
        p = sub.add_parser(name, help=doc)
        p.add_argument("--config", required=True, help="config file path or packaged name")
        p.add_argument("--out", default=None, help="output directory (default from config)")
        p.add_argument("--seed", type=int, default=None, help="override solver.seed")
        p.add_argument("--tol", type=float, default=None, help="override solver.tol")
        p.add_argument("--max-iter", type=int, default=None, help="override solver.max_iter")
        p.add_argument(
            "--force", action="store_true",
            help="run with explicit gains even if they fail the certification checks",
        )
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except GneflexError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


# ---------------------------------------------------------------------------
# shared plumbing


def _load(args) -> RunConfig:
    cfg = resolve_config(args.config)
    return cfg.with_overrides(seed=args.seed, tol=args.tol, max_iter=args.max_iter)


def _prepare(cfg: RunConfig, force: bool):
    inst = cfg.instance()
    graph = cfg.graph()
    fs = build_feasible_set(inst)
    gm = GameModel(inst, fs)
    mode = cfg.gains_mode()
    if mode == "auto":
        report = cocoercivity_constants(inst, graph)
        gains = default_gains(report, fs, graph)
        return inst, graph, fs, gm, gains, report
    gains = mode
    if force:
        return inst, graph, fs, gm, gains, None
    report = cocoercivity_constants(inst, graph, kappa=gains.kappa)
    view = assemble_phi(gains, fs, graph)
    lam_min = 1.0 / view.lambda_max_phi_inv
    if lam_min <= 1.0 / (2.0 * report.eps):
        raise TuningError(
            "explicit gains fail the averagedness certification "
            f"(lambda_min(Phi)={lam_min:.6g} <= {1.0 / (2.0 * report.eps):.6g}); "
            "pass --force to run anyway"
        )
    xi = report.eps * lam_min
    gains = GainSet(
        kappa=gains.kappa, tau=gains.tau, upsilon=gains.upsilon, rho=gains.rho,
        delta=gains.delta, eta=gains.eta, xi=xi, theta=averagedness(xi),
    )
    return inst, graph, fs, gm, gains, report


def _out_dir(args, cfg: RunConfig) -> Path:
    out = Path(args.out) if args.out else Path(cfg.outputs["directory"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _gains_line(gains: GainSet) -> str:
    return json.dumps(gains.to_dict(), sort_keys=True)


def _write_json(path: Path, payload: dict):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_plot_manifest(path: Path, cfg_hash: str, gains: GainSet, n_agents: int):
    lines = [
        "# Series layout for plotting trajectory.csv with any external tool.",
        f"config_hash: {cfg_hash}",
        f"gains: {_gains_line(gains)}",
        "file: trajectory.csv",
        "x_column: k",
        "x_label: iteration",
        "plot: bids",
        "  y_label: bid (kWh)",
        "  series: " + ",".join(f"beta_{i + 1}" for i in range(n_agents)),
        "plot: aggregate_estimates",
        "  y_label: average-bid estimate (kWh)",
        "  series: " + ",".join(f"sigma_{i + 1}" for i in range(n_agents)),
        "plot: residuals",
        "  y_scale: log",
        "  y_label: residual",
        "  series: " + ",".join(f"res_{k}" for k in sv.Trajectory.RESIDUAL_KEYS),
    ]
    path.write_text("\n".join(lines) + "\n")


def _run_distributed(cfg: RunConfig, inst, graph, fs, gains):
    settings = cfg.solver
    state = sv.init(
        inst, fs, graph, gains,
        seed=settings["seed"] if settings["init"] == "random" else None,
    )
    record = settings["record_stride"] if cfg.outputs["trajectory"] else 0
    start = time.perf_counter()
    result = sv.run(
        state,
        tol=settings["tol"],
        max_iter=settings["max_iter"],
        record_stride=record,
    )
    runtime = time.perf_counter() - start
    return result, runtime


def _distributed_summary(cfg: RunConfig, inst, fs, gains, result, runtime) -> dict:
    final = result.state
    metrics = sv.residuals(final)
    report = check_feasibility(fs, final.beta, tol=1e-6 * (1.0 + float(np.abs(fs.d).max())))
    slack = fs.d - fs.A_tilde @ final.beta
    active = np.where(slack <= 1e-4 * (1.0 + np.abs(fs.d).max()))[0]
    return {
        "config_hash": cfg.hash(),
        "engine": sv.available_engines()[-1],
        "gains": gains.to_dict(),
        "stop": {
            "converged": result.stop.converged,
            "reason": result.stop.reason,
            "iterations": result.stop.iterations,
            "residual": result.stop.residual,
        },
        "residuals": metrics,
        "beta": final.beta.tolist(),
        "sigma": final.sigma.tolist(),
        "multiplier_mean": np.maximum(final.lam.mean(axis=0), 0.0).tolist(),
        "price": clearing_price(inst, final.beta),
        "load_adjustment": load_adjustment(inst, final.beta).tolist(),
        "feasible": report.feasible,
        "active_rows": [int(i) for i in active],
        "runtime_s": runtime,
    }


# ---------------------------------------------------------------------------
# commands


def cmd_run(args) -> int:
    cfg = _load(args)
    inst, graph, fs, gm, gains, _ = _prepare(cfg, args.force)
    out = _out_dir(args, cfg)
    result, runtime = _run_distributed(cfg, inst, graph, fs, gains)
    summary = _distributed_summary(cfg, inst, fs, gains, result, runtime)
    summary["command"] = "run"
    _write_json(out / "summary.json", summary)
    if result.trajectory is not None:
        result.trajectory.to_csv(
            out / "trajectory.csv",
            metadata={"config_hash": cfg.hash(), "gains": _gains_line(gains)},
        )
        _write_plot_manifest(out / "plot_manifest.txt", cfg.hash(), gains, inst.n_agents)
    ok = result.stop.converged and summary["feasible"]
    print(
        f"run: {'converged' if result.stop.converged else 'NOT converged'} "
        f"after {result.stop.iterations} rounds "
        f"(residual {result.stop.residual:.3e}); outputs in {out}"
    )
    return 0 if ok else 1


def cmd_oracle(args) -> int:
    cfg = _load(args)
    inst, graph, fs, gm, gains, _ = _prepare(cfg, args.force)
    out = _out_dir(args, cfg)
    try:
        start = time.perf_counter()
        cert = solve_vgne(gm, tol=cfg.solver["tol"])
        runtime = time.perf_counter() - start
    except (ConvergenceError, InfeasibleError) as exc:
        _write_json(
            out / "summary.json",
            {"command": "oracle", "config_hash": cfg.hash(), "error": str(exc)},
        )
        print(f"oracle failed: {exc}", file=sys.stderr)
        return 1
    payload = cert.to_dict()
    payload.update(
        {
            "config_hash": cfg.hash(),
            "gains": gains.to_dict(),
            "price": clearing_price(inst, cert.beta_star),
            "load_adjustment": load_adjustment(inst, cert.beta_star).tolist(),
            "runtime_s": runtime,
        }
    )
    _write_json(out / "certificate.json", payload)
    print(
        f"oracle: bids {np.round(cert.beta_star, 6).tolist()} "
        f"(equilibrium-condition residual {cert.kkt_residual:.3e}); outputs in {out}"
    )
    return 0


def cmd_tune(args) -> int:
    cfg = _load(args)
    inst, graph, fs, gm, gains, report = _prepare(cfg, args.force)
    if report is None:
        report = cocoercivity_constants(inst, graph, kappa=gains.kappa)
    view = assemble_phi(gains, fs, graph)

    def vec(v):
        return "[" + ", ".join(f"{x:.6g}" for x in np.atleast_1d(v)) + "]"

    lines = [
        f"config_hash: {cfg.hash()}",
        f"agents: {inst.n_agents}  coupling_rows: {fs.n_rows}",
        "",
        "cocoercivity report",
        f"  mu:           {vec(report.mu)}",
        f"  ell:          {vec(report.ell)}",
        f"  gamma:        {report.gamma:.6g}",
        f"  uniformity gap (>=0 required): {report.uniformity_gap:.6g}",
        f"  kappa interval: ({report.kappa_interval[0]:.6g}, {report.kappa_interval[1]:.6g})",
        f"  kappa:        {report.kappa:.6g}",
        f"  eps_bar:      {vec(report.eps_bar)}",
        f"  eps_under:    {vec(report.eps_under)}",
        f"  eps_tilde:    {report.eps_tilde:.6g}",
        f"  eps:          {report.eps:.6g}",
        "",
        "gain set",
        f"  tau:     {vec(gains.tau)}",
        f"  upsilon: {vec(gains.upsilon)}",
        f"  rho:     {vec(gains.rho)}",
        f"  delta:   {vec(gains.delta)}",
        f"  eta:     {vec(gains.eta)}",
        f"  xi:      {gains.xi:.6g}",
        f"  theta:   {gains.theta:.6g}",
        "",
        "preconditioner",
        f"  dimension: {view.dim}",
        f"  lambda_min: {1.0 / view.lambda_max_phi_inv:.6g}"
        f"  (threshold 1/(2 eps) = {1.0 / (2.0 * report.eps):.6g})",
    ]
    print("\n".join(lines))
    return 0


def cmd_compare(args) -> int:
    cfg = _load(args)
    inst, graph, fs, gm, gains, _ = _prepare(cfg, args.force)
    out = _out_dir(args, cfg)

    result, runtime = _run_distributed(cfg, inst, graph, fs, gains)
    summary = _distributed_summary(cfg, inst, fs, gains, result, runtime)
    summary["command"] = "compare"

    oracle_error = None
    try:
        cert = solve_vgne(gm, tol=min(cfg.solver["tol"], 1e-8))
    except (ConvergenceError, InfeasibleError) as exc:
        cert = None
        oracle_error = str(exc)

    if cert is not None:
        lam_mean = np.maximum(result.state.lam.mean(axis=0), 0.0)
        summary["oracle"] = cert.to_dict()
        summary["agreement"] = {
            "bid_gap_inf": float(np.abs(result.state.beta - cert.beta_star).max()),
            "multiplier_gap_inf": float(np.abs(lam_mean - cert.gamma2).max()),
            "kkt_distributed": summary["residuals"]["kkt"],
            "kkt_oracle": cert.kkt_residual,
        }
        cert_payload = cert.to_dict()
        cert_payload["config_hash"] = cfg.hash()
        cert_payload["gains"] = gains.to_dict()
        _write_json(out / "certificate.json", cert_payload)
    else:
        summary["oracle_error"] = oracle_error

    _write_json(out / "summary.json", summary)
    if result.trajectory is not None:
        result.trajectory.to_csv(
            out / "trajectory.csv",
            metadata={"config_hash": cfg.hash(), "gains": _gains_line(gains)},
        )
        _write_plot_manifest(out / "plot_manifest.txt", cfg.hash(), gains, inst.n_agents)

    if cert is None or not result.stop.converged:
        print(f"compare: failed (distributed converged={result.stop.converged}, "
              f"oracle error={oracle_error})", file=sys.stderr)
        return 1
    agreement = summary["agreement"]
    print(
        f"compare: bid gap {agreement['bid_gap_inf']:.3e}, "
        f"multiplier gap {agreement['multiplier_gap_inf']:.3e}, "
        f"equilibrium residuals {agreement['kkt_distributed']:.3e} (distributed) / "
        f"{agreement['kkt_oracle']:.3e} (oracle); outputs in {out}"
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
