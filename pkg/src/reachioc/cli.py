"""Command-line front end.

Subcommands cover the full workflow: solve one reaching problem at given
weights, estimate weights from synthetic noisy data with either strategy,
run the noise-robustness sweep, run the timing benchmark, and verify all
analytic derivatives against finite differences.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from .checks import run_all_checks
from .cost_basis import basis_values
from .experiments import (
    ExperimentConfig,
    add_noise,
    export_estimation_result,
    generate_ground_truth,
    load_config,
    noise_sweep,
    save_manifest,
    timing_benchmark,
)
from .ioc import (
    IocDataset,
    IocExample,
    bilevel_ioc,
    inner_loop,
    random_simplex_theta,
    rest_initial_point,
    single_level_ioc,
    theta_gauge,
)
from .kkt import KktPoint
from .transcription import unpack, write_trajectory_csv


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="YAML configuration; defaults reproduce the reference task")
    parser.add_argument("--seed", type=int, help="override the master seed")
    parser.add_argument("--out", help="override the output directory")


def _load(args) -> ExperimentConfig:
    config = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    if args.out is not None:
        config = dataclasses.replace(config, out_dir=args.out)
    return config


def _parse_floats(text: str, count: int, what: str) -> np.ndarray:
    values = np.array([float(v) for v in text.split(",")])
    if values.size != count:
        raise SystemExit(f"{what} needs {count} comma-separated values, got {values.size}")
    return values


def _noisy_dataset(config: ExperimentConfig, sigma: np.ndarray):
    ground_truth = generate_ground_truth(config)
    rng = np.random.default_rng(np.random.SeedSequence((config.seed, 0, 0)))
    if np.all(sigma == 0.0):
        example = ground_truth
    else:
        example = add_noise(ground_truth, sigma, rng)
    theta0 = random_simplex_theta(rng)
    dataset = IocDataset(examples=(example,), horizon=config.horizon, arm=config.arm)
    return dataset, theta0, ground_truth


def cmd_solve_ocp(args) -> int:
    config = _load(args)
    theta = (
        _parse_floats(args.theta, 5, "--theta")
        if args.theta
        else np.asarray(config.theta_true)
    )
    theta = theta_gauge(theta)
    dataset = IocDataset(
        examples=(
            IocExample(env=config.environment, observed=np.zeros(config.horizon.dim_z)),
        ),
        horizon=config.horizon,
        arm=config.arm,
    )
    warm = None
    if args.start == "rest":
        z0, nu0 = rest_initial_point(config.environment, config.horizon)
        warm = [KktPoint(z=z0, nu=nu0, residual_norm=float("inf"))]
    result = inner_loop(
        theta, dataset, warm_starts=warm, options=config.inner_options, phase="warm_start"
    )
    os.makedirs(config.out_dir, exist_ok=True)
    csv_path = os.path.join(config.out_dir, "trajectory.csv")
    write_trajectory_csv(
        csv_path, unpack(result.points[0].z, config.horizon), config.horizon
    )
    report = result.reports[0]
    summary = {
        "theta": [float(t) for t in theta],
        "status": report.status,
        "iterations": report.iterations,
        "final_stationarity": report.final_stationarity,
        "final_feasibility": report.final_feasibility,
        "basis_values": [
            float(v) for v in basis_values(result.points[0].z, config.horizon, config.arm)
        ],
        "trajectory_csv": csv_path,
    }
    summary_path = os.path.join(config.out_dir, "solve.json")
    with open(summary_path, "w") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    save_manifest(config, os.path.join(config.out_dir, "manifest.yaml"))
    print(f"solved in {report.iterations} iterations; wrote {csv_path}")
    return 0


def _cmd_estimate(args, method: str) -> int:
    config = _load(args)
    sigma = (
        _parse_floats(args.sigma_deg, 2, "--sigma-deg")
        if args.sigma_deg
        else np.asarray(config.sigma_deg)
    )
    dataset, theta0, ground_truth = _noisy_dataset(config, sigma)
    if method == "single-level":
        result = single_level_ioc(
            dataset,
            theta0,
            outer_options=config.outer_options,
            inner_options=config.inner_options,
        )
    else:
        result = bilevel_ioc(
            dataset,
            theta0,
            inner_options=config.inner_options,
            simplex_tol=config.simplex_tol,
            simplex_max_evals=config.simplex_max_evals,
        )
    paths = export_estimation_result(result, dataset, config.out_dir, config)
    theta_text = ", ".join(f"{t:.4f}" for t in result.theta_hat)
    print(f"{method} estimate: theta = ({theta_text}), loss = {result.loss:.3e}")
    print(f"wrote {paths['summary']}")
    for warning in result.warnings:
        print(f"warning: {warning}")
    return 0


def cmd_ioc_single(args) -> int:
    return _cmd_estimate(args, "single-level")


def cmd_ioc_bilevel(args) -> int:
    return _cmd_estimate(args, "bilevel")


def cmd_noise_sweep(args) -> int:
    config = _load(args)
    result = noise_sweep(config, out_dir=config.out_dir)
    converged = sum(1 for c in result.cells if c.status == "converged")
    print(f"{converged}/{len(result.cells)} cells converged; artifacts in {config.out_dir}")
    return 0


def cmd_bench(args) -> int:
    config = _load(args)
    if args.levels:
        config = dataclasses.replace(config, bench_levels=args.levels)
    report = timing_benchmark(config, out_dir=config.out_dir)
    print(
        f"mean single-level {report.mean_single_time:.3f} s, "
        f"mean bilevel {report.mean_bilevel_time:.3f} s, "
        f"speedup {report.speedup:.1f}x over {len(report.rows)} levels"
    )
    return 0


def cmd_check_derivatives(args) -> int:
    results = run_all_checks(seed=args.seed or 0, points=args.points)
    width = max(len(r.name) for r in results)
    failures = 0
    for r in results:
        verdict = "pass" if r.passed else "FAIL"
        failures += 0 if r.passed else 1
        print(
            f"{r.name:<{width}}  {verdict}  max error {r.max_error:.3e} "
            f"(tol {r.tol:.0e}, {r.points} points, {r.seconds:.2f} s)"
        )
    total = sum(r.seconds for r in results)
    print(f"{len(results) - failures}/{len(results)} suites passed in {total:.1f} s")
    return 1 if failures else 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="reachioc",
        description="Inverse optimal control of planar reaching movements.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve-ocp", help="solve one reaching problem at fixed weights")
    p.add_argument(
        "--start",
        choices=("interp", "rest"),
        default="interp",
        help="initial guess: straight joint-space line or the motionless arm",
    )
    _add_common(p)
    p.add_argument("--theta", help="five comma-separated weights (default: theta_true)")
    p.set_defaults(fn=cmd_solve_ocp)

    for name, fn in (("ioc-single", cmd_ioc_single), ("ioc-bilevel", cmd_ioc_bilevel)):
        p = sub.add_parser(name, help=f"estimate weights from synthetic data ({name[4:]})")
        _add_common(p)
        p.add_argument(
            "--sigma-deg",
            help="per-joint noise in degrees, e.g. '1,1'; '0,0' keeps the data noiseless",
        )
        p.set_defaults(fn=fn)

    p = sub.add_parser("noise-sweep", help="run the full noise-robustness grid")
    _add_common(p)
    p.set_defaults(fn=cmd_noise_sweep)

    p = sub.add_parser("bench", help="time both estimation strategies")
    _add_common(p)
    p.add_argument("--levels", choices=("diagonal", "full"))
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("check-derivatives", help="verify derivatives against finite differences")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--points", type=int, default=120)
    p.set_defaults(fn=cmd_check_derivatives)

    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
