"""Command-line front end.

Subcommands: ``run`` (single trajectory), ``experiment`` (gain-scale by
probe-mode ensemble matrix), ``meanflow`` (field grid, flow trajectory,
equilibrium report), ``equilibrium`` (report only), and ``probe-check``
(probe-law diagnostics).  All outputs are CSV/JSON written under one
directory together with a manifest sufficient to reproduce them
bit-identically.

Exit codes: 0 success, 2 invalid configuration, 3 divergence-guard trip,
4 solver non-convergence.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .config import (
    ConfigError,
    build_base_noise,
    build_gain,
    build_objective,
    build_schedule,
    canonical_json,
    config_hash,
    get_varsigma,
    load_config,
    validate_config,
)
from .core import DivergenceGuard, run, sample_theta0
from .ensemble import run_ensemble_cell, scaling_fit
from .exploration import ProbeGenerator, derive_seed, regeneration_test
from .meanflow import MeanFieldEvaluator, SolverError, bias_sweep, find_equilibrium, integrate_flow
from .objectives import bisect_root

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_SOLVER = 4

MODES = ("iid", "zigzag")


def _fmt(x) -> str:
    # 17 significant digits: round-trip exact for doubles
    return format(float(x), ".17g")


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([c if isinstance(c, str) else _fmt(c) for c in row])


def _write_json(path: Path, payload) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _write_manifest(out: Path, command: str, cfg: dict, outputs: list[str], seeds) -> None:
    _write_json(
        out / "manifest.json",
        {
            "tool": "spsa-lab",
            "version": __version__,
            "command": command,
            "config": cfg,
            "config_hash": config_hash(cfg),
            "outputs": sorted(outputs),
            "seeds": seeds,
        },
    )


def _resolve_workers(args, cfg: dict) -> int:
    if args.workers is not None:
        return args.workers
    env = os.environ.get("SPSA_LAB_WORKERS")
    if env is not None:
        try:
            n = int(env)
        except ValueError as exc:
            raise ConfigError(f"SPSA_LAB_WORKERS must be an integer, got {env!r}") from exc
        if n < 1:
            raise ConfigError(f"SPSA_LAB_WORKERS must be >= 1, got {n}")
        return n
    return cfg.get("workers", 4)


def _prepare(args, command: str):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg["seed.master"] = args.seed
    validate_config(cfg, command)
    out = Path(args.out) if args.out else Path(cfg.get("output.dir", "spsa_lab_out"))
    return cfg, out


def _deterministic_method(cfg: dict) -> str:
    if "meanflow.method" in cfg:
        return cfg["meanflow.method"]
    return "two_point" if cfg["probe.base"] == "rademacher" else "quadrature"


def cmd_run(args) -> int:
    cfg, out = _prepare(args, "run")
    objective = build_objective(cfg)
    schedule = build_schedule(cfg)
    gain = build_gain(cfg, objective)
    base = build_base_noise(cfg, objective.dim)
    guard = DivergenceGuard(cfg.get("run.guard_threshold", 1e6))
    seed = derive_seed(cfg["seed.master"], "run", 0)
    rng = np.random.Generator(np.random.Philox(key=seed))
    if "run.theta0" in cfg:
        theta0 = np.asarray(cfg["run.theta0"], dtype=float)
        if theta0.size != objective.dim:
            raise ConfigError(
                f"config key 'run.theta0' has dimension {theta0.size}, objective has {objective.dim}"
            )
    else:
        theta0 = sample_theta0(cfg["run.theta0_box"], rng, objective.dim)
    probe = ProbeGenerator(base, mode=cfg["probe.mode"], varsigma=get_varsigma(cfg), seed=seed, rng=rng)

    record = run(
        objective,
        schedule,
        gain,
        probe,
        theta0,
        cfg["run.N"],
        guard=guard,
        stride=cfg.get("run.stride", 1),
        algorithm=cfg.get("run.algorithm", "1spsa"),
        seed=seed,
        config_hash=config_hash(cfg),
    )

    out.mkdir(parents=True, exist_ok=True)
    header = ["n"] + [f"theta_{i}" for i in range(objective.dim)] + ["alpha", "eps", "objective"]
    rows = []
    for k, idx in enumerate(record.record_indices):
        rows.append(
            [int(idx), *record.thetas[k], record.alpha_trace[k], record.gain_trace[k], record.objective_trace[k]]
        )
    _write_csv(out / "trajectory.csv", header, rows)
    summary = {
        "n_steps": record.n_steps,
        "diverged_at": record.diverged_at,
        "theta_final": [float(x) for x in record.theta_final],
        "seed": seed,
    }
    _write_json(out / "run_summary.json", summary)
    _write_manifest(out, "run", cfg, ["trajectory.csv", "run_summary.json"], {"run": seed})
    return EXIT_DIVERGED if record.diverged else EXIT_OK


def cmd_experiment(args) -> int:
    cfg, out = _prepare(args, "experiment")
    objective = build_objective(cfg)
    schedule = build_schedule(cfg)
    base = build_base_noise(cfg, objective.dim)
    varsigma = get_varsigma(cfg)
    guard = DivergenceGuard(cfg.get("run.guard_threshold", 1e6))
    algorithm = cfg.get("run.algorithm", "1spsa")
    eps_grid = [float(e) for e in cfg["ensemble.eps_grid"]]
    master = cfg["seed.master"]
    workers = _resolve_workers(args, cfg)

    def make_statistic(mode: str, eps: float):
        gain = build_gain(cfg, objective, eps_bullet=eps)
        if cfg["ensemble.statistic"] == "grad":
            return gain, objective.grad_batch
        evaluator = MeanFieldEvaluator(
            objective=objective,
            gain=gain,
            base=base,
            mode=mode,
            varsigma=varsigma,
            method=_deterministic_method(cfg),
        )
        return gain, evaluator.value_batch

    def run_cell(task):
        mode, eps_index = task
        eps = eps_grid[eps_index]
        gain, stat = make_statistic(mode, eps)
        return run_ensemble_cell(
            objective,
            schedule,
            base,
            mode,
            varsigma,
            gain,
            eps,
            cfg["ensemble.M"],
            cfg["ensemble.N"],
            cfg["ensemble.N0"],
            cfg["ensemble.theta0_box"],
            stat,
            master,
            eps_index=eps_index,
            guard=guard,
            algorithm=algorithm,
        )

    tasks = [(mode, i) for mode in MODES for i in range(len(eps_grid))]
    with ThreadPoolExecutor(max_workers=max(1, min(workers, len(tasks)))) as pool:
        cells = dict(zip(tasks, pool.map(run_cell, tasks)))

    out.mkdir(parents=True, exist_ok=True)
    rows = []
    seeds = {}
    scaling = {}
    for mode in MODES:
        eps_ok, var_ok = [], []
        for i, eps in enumerate(eps_grid):
            cell = cells[(mode, i)]
            if cell.m_effective >= 2:
                sv, bias = cell.scaled_var_trace, cell.mean_bias_norm
            else:
                sv = bias = float("nan")
            rows.append([_fmt(eps), mode, str(cell.m_effective), sv, bias])
            seeds.setdefault(mode, {})[_fmt(eps)] = cell.seeds
            if cell.m_effective == cell.m_total:
                eps_ok.append(eps)
                var_ok.append(cell.scaled_var_trace)
        if len(eps_ok) < 3:
            print(
                f"error: divergence left fewer than 3 complete gain values for mode {mode}",
                file=sys.stderr,
            )
            return EXIT_SOLVER
        fit = scaling_fit(eps_ok, var_ok)
        scaling[mode] = {
            "slope": fit.loglog_slope,
            "intercept": fit.loglog_intercept,
            "r_squared": fit.r_squared,
        }
    _write_csv(
        out / "ensemble.csv",
        ["eps_bullet", "mode", "M_effective", "scaled_var_trace", "mean_bias_norm"],
        rows,
    )
    _write_json(out / "scaling.json", scaling)
    _write_manifest(out, "experiment", cfg, ["ensemble.csv", "scaling.json"], seeds)
    return EXIT_OK


def _build_evaluator(cfg: dict, eps_bullet: float | None = None) -> MeanFieldEvaluator:
    objective = build_objective(cfg)
    gain = build_gain(cfg, objective, eps_bullet=eps_bullet)
    base = build_base_noise(cfg, objective.dim)
    return MeanFieldEvaluator(
        objective=objective,
        gain=gain,
        base=base,
        mode=cfg.get("probe.mode", "iid"),
        varsigma=get_varsigma(cfg),
        method=cfg["meanflow.method"],
        mc_samples=cfg.get("meanflow.mc_samples", 100_000),
        seed=cfg.get("seed.master", 0),
    )


def _equilibrium_payload(cfg: dict, evaluator: MeanFieldEvaluator) -> dict:
    objective = evaluator.objective
    if "meanflow.theta_init" in cfg:
        theta_init = np.asarray(cfg["meanflow.theta_init"], dtype=float)
    elif objective.known_optimum is not None:
        theta_init = objective.known_optimum
    else:
        theta_init = np.zeros(objective.dim)
    report = find_equilibrium(evaluator, theta_init, tol=cfg.get("meanflow.tol", 1e-10))
    payload = {
        "theta_star": [float(x) for x in report.theta_star],
        "residual": report.residual_norm,
        "eigs": [float(x) for x in report.eigen_real_parts],
        "bias": report.bias_to_opt,
        "bias_to_origin": report.bias_to_origin,
    }
    if "meanflow.eps_sweep" in cfg:
        if objective.dim != 1:
            raise ConfigError("config key 'meanflow.eps_sweep' needs a one-dimensional objective")
        ref = bisect_root(lambda x: float(objective.grad(np.array([x]))[0]), -1.0, 1.0)
        biases, slope = bias_sweep(
            lambda eb: _build_evaluator(cfg, eps_bullet=eb),
            cfg["meanflow.eps_sweep"],
            np.array([ref]),
            tol=cfg.get("meanflow.tol", 1e-10),
        )
        payload["bias_sweep"] = {
            "eps": [float(e) for e in cfg["meanflow.eps_sweep"]],
            "bias": [float(b) for b in biases],
            "slope": slope,
        }
    return payload


def cmd_meanflow(args) -> int:
    cfg, out = _prepare(args, "meanflow")
    evaluator = _build_evaluator(cfg)
    lo, hi, npts = cfg["meanflow.grid"]
    grid = np.linspace(lo, hi, int(npts))
    try:
        payload = _equilibrium_payload(cfg, evaluator)
    except SolverError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER

    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for theta in grid:
        val, err = evaluator.evaluate(np.array([theta]))
        rows.append([theta, val[0], err[0]])
    _write_csv(out / "fbar_grid.csv", ["theta", "fbar", "stderr"], rows)
    outputs = ["fbar_grid.csv", "eq_report.json"]

    if "meanflow.flow_theta0" in cfg:
        flow = integrate_flow(
            evaluator,
            cfg["meanflow.flow_theta0"],
            cfg.get("meanflow.flow_t_end", 1.0),
            cfg.get("meanflow.flow_dt", 1e-3),
        )
        dim = evaluator.objective.dim
        _write_csv(
            out / "flow_mean.csv",
            ["t"] + [f"theta_{i}" for i in range(dim)],
            [[t, *state] for t, state in zip(flow.times, flow.states)],
        )
        outputs.append("flow_mean.csv")

    _write_json(out / "eq_report.json", payload)
    _write_manifest(out, "meanflow", cfg, outputs, {})
    return EXIT_OK


def cmd_equilibrium(args) -> int:
    cfg, out = _prepare(args, "equilibrium")
    evaluator = _build_evaluator(cfg)
    try:
        payload = _equilibrium_payload(cfg, evaluator)
    except SolverError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "eq_report.json", payload)
    _write_manifest(out, "equilibrium", cfg, ["eq_report.json"], {})
    return EXIT_OK


def cmd_probe_check(args) -> int:
    cfg, out = _prepare(args, "probe-check")
    dim = 1 if "objective.kind" not in cfg else build_objective(cfg).dim
    base = build_base_noise(cfg, dim)
    seed = derive_seed(cfg["seed.master"], "probe-check")
    gen = ProbeGenerator(base, mode=cfg["probe.mode"], varsigma=get_varsigma(cfg), seed=seed)
    report = gen.moment_diagnostics(cfg.get("probe_check.samples", 100_000))
    payload = {
        "sample_count": report.sample_count,
        "mean": [float(x) for x in report.mean_vec],
        "third_moment_max_abs": report.third_moment_max_abs,
        "covariance": [[float(v) for v in row] for row in report.covariance],
        "covariance_closed_form": [[float(v) for v in row] for row in gen.probe_covariance()],
        "covariance_error": report.covariance_error,
        "probe_bound": gen.probe_bound,
        "regeneration_p": None,
    }
    if cfg["probe.mode"] == "zigzag":
        b = base.bound
        payload["regeneration_p"] = regeneration_test(
            gen,
            np.full(dim, b),
            np.full(dim, -b),
            cfg.get("probe_check.regen_samples", 10_000),
        )
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "probe_report.json", payload)
    _write_manifest(out, "probe-check", cfg, ["probe_report.json"], {"probe": seed})
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spsa-lab",
        description="Gradient-free optimization experiments with stabilized single-sample updates",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn, helptext in (
        ("run", cmd_run, "run one trajectory and write its record"),
        ("experiment", cmd_experiment, "run the gain-scale by probe-mode ensemble matrix"),
        ("meanflow", cmd_meanflow, "tabulate the mean field, integrate its flow, report the equilibrium"),
        ("equilibrium", cmd_equilibrium, "locate the mean-field equilibrium and report its spectrum"),
        ("probe-check", cmd_probe_check, "probe-law moment diagnostics"),
    ):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", required=True, help="path to a flat dotted-key JSON config")
        p.add_argument("--out", default=None, help="output directory (default: output.dir or spsa_lab_out)")
        p.add_argument("--seed", type=int, default=None, help="override seed.master")
        p.add_argument("--workers", type=int, default=None, help="worker pool size (env SPSA_LAB_WORKERS)")
        p.set_defaults(fn=fn)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
