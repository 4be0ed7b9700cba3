"""Experiment drivers: synthetic data, noise-robustness sweep, timing bench.

A single YAML-serializable configuration describes the arm, the task, the
true weights, the noise grid, the solver settings, and the master seed.  Its
defaults reproduce the reference reaching task: unit links reaching from
q_init = (-pi/2 + 0.1, -0.1) to p_goal = (1.5, 0.6) over 1.2 s on 120 Euler
steps, with all five cost weights at 0.2 and eleven log-spaced noise levels
from 0.1 to 10 degrees per joint.

Every sweep cell draws its noise and its random starting weights from a
seed sequence spawned from (master seed, cell index, repetition), so any
cell can be reproduced in isolation and the whole sweep is deterministic.
The sweep CSV contains no timing columns; wall times go to a separate file
so repeated runs produce byte-identical result tables.
"""

from __future__ import annotations

import csv
import json
import os
import time
from dataclasses import asdict, dataclass, field

import numpy as np
import yaml

from . import __version__
from .arm import ArmParams
from .cost_basis import N_BASES
from .ioc import (
    InnerSolveFailure,
    IocDataset,
    IocExample,
    IocResult,
    bilevel_ioc,
    cumulative_loss,
    default_initial_point,
    inner_loop,
    random_simplex_theta,
    single_level_ioc,
    theta_gauge,
)
from .solvers import SolverOptions
from .svgplot import heatmap_svg
from .transcription import EnvironmentParams, Horizon, unpack, write_trajectory_csv


@dataclass
class ExperimentConfig:
    arm: ArmParams = field(default_factory=ArmParams)
    horizon: Horizon = field(default_factory=Horizon)
    environment: EnvironmentParams = field(
        default_factory=lambda: EnvironmentParams(
            q_init=np.array([-np.pi / 2 + 0.1, -0.1]), p_goal=np.array([1.5, 0.6])
        )
    )
    theta_true: tuple = (0.2, 0.2, 0.2, 0.2, 0.2)
    sigma1_deg: tuple = tuple(np.logspace(-1.0, 1.0, 11))
    sigma2_deg: tuple = tuple(np.logspace(-1.0, 1.0, 11))
    sigma_deg: tuple = (1.0, 1.0)  # noise level for single estimation runs
    seed: int = 20526
    repetitions: int = 1
    out_dir: str = "results"
    bench_levels: str = "diagonal"  # diagonal | full
    inner_options: SolverOptions = field(default_factory=SolverOptions)
    outer_options: SolverOptions = field(
        default_factory=lambda: SolverOptions(tol_stat=1e-6, tol_feas=1e-8, max_iter=300)
    )
    simplex_tol: float = 1e-6
    simplex_max_evals: int = 2000

    def __post_init__(self) -> None:
        theta = np.asarray(self.theta_true, dtype=float)
        if theta.shape != (N_BASES,) or not np.all(np.isfinite(theta)):
            raise ValueError(f"theta_true must be {N_BASES} finite weights")
        for name in ("sigma1_deg", "sigma2_deg"):
            sig = np.asarray(getattr(self, name), dtype=float)
            if sig.ndim != 1 or sig.size == 0 or np.any(sig <= 0.0):
                raise ValueError(f"{name} must be a nonempty list of positive levels")
            object.__setattr__(self, name, tuple(float(s) for s in sig))
        object.__setattr__(self, "theta_true", tuple(float(t) for t in theta))
        object.__setattr__(self, "sigma_deg", tuple(float(s) for s in self.sigma_deg))
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        if self.bench_levels not in ("diagonal", "full"):
            raise ValueError("bench_levels must be 'diagonal' or 'full'")

    def to_dict(self) -> dict:
        return {
            "arm": {
                "lengths": list(self.arm.lengths),
                "com_offsets": list(self.arm.com_offsets),
                "masses": list(self.arm.masses),
                "inertias": list(self.arm.inertias),
                "gravity": self.arm.gravity,
            },
            "horizon": {
                "t0": self.horizon.t0,
                "tf": self.horizon.tf,
                "samples": self.horizon.samples,
            },
            "environment": {
                "q_init": [float(v) for v in self.environment.q_init],
                "p_goal": [float(v) for v in self.environment.p_goal],
            },
            "theta_true": list(self.theta_true),
            "sigma1_deg": list(self.sigma1_deg),
            "sigma2_deg": list(self.sigma2_deg),
            "sigma_deg": list(self.sigma_deg),
            "seed": self.seed,
            "repetitions": self.repetitions,
            "out_dir": self.out_dir,
            "bench_levels": self.bench_levels,
            "inner_options": _options_dict(self.inner_options),
            "outer_options": _options_dict(self.outer_options),
            "simplex_tol": self.simplex_tol,
            "simplex_max_evals": self.simplex_max_evals,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        kwargs: dict = {}
        if "arm" in data:
            arm = dict(data["arm"])
            for key in ("lengths", "com_offsets", "masses", "inertias"):
                if key in arm:
                    arm[key] = tuple(arm[key])
            kwargs["arm"] = ArmParams(**arm)
        if "horizon" in data:
            kwargs["horizon"] = Horizon(**data["horizon"])
        if "environment" in data:
            env = data["environment"]
            kwargs["environment"] = EnvironmentParams(
                q_init=np.asarray(env["q_init"], dtype=float),
                p_goal=np.asarray(env["p_goal"], dtype=float),
            )
        for key in (
            "theta_true",
            "sigma1_deg",
            "sigma2_deg",
            "sigma_deg",
            "seed",
            "repetitions",
            "out_dir",
            "bench_levels",
            "simplex_tol",
            "simplex_max_evals",
        ):
            if key in data:
                kwargs[key] = data[key]
        for key in ("inner_options", "outer_options"):
            if key in data:
                kwargs[key] = SolverOptions(**data[key])
        return cls(**kwargs)


def _options_dict(options: SolverOptions) -> dict:
    return asdict(options)


def load_config(path: str) -> ExperimentConfig:
    with open(path) as fh:
        data = yaml.safe_load(fh)
    if not isinstance(data, dict):
        raise ValueError(f"{path} does not contain a configuration mapping")
    data.pop("version", None)
    return ExperimentConfig.from_dict(data)


def save_manifest(config: ExperimentConfig, path: str) -> None:
    """Write the fully resolved configuration; feeding it back reruns identically."""
    payload = config.to_dict()
    payload["version"] = __version__
    with open(path, "w") as fh:
        yaml.safe_dump(payload, fh, sort_keys=True)


def generate_ground_truth(config: ExperimentConfig) -> IocExample:
    """Solve the reaching problem at the true weights; package as an example."""
    theta = theta_gauge(np.asarray(config.theta_true))
    dataset = IocDataset(
        examples=(
            IocExample(env=config.environment, observed=np.zeros(config.horizon.dim_z)),
        ),
        horizon=config.horizon,
        arm=config.arm,
    )
    result = inner_loop(theta, dataset, options=config.inner_options, phase="warm_start")
    return IocExample(
        env=config.environment,
        observed=result.points[0].z,
        provenance={
            "kind": "ground_truth",
            "theta_true": [float(t) for t in theta],
            "residual_norm": result.points[0].residual_norm,
        },
    )


def add_noise(example: IocExample, sigma_deg, rng) -> IocExample:
    """Perturb the observed position knots with joint-wise Gaussian noise.

    ``sigma_deg`` holds one positive standard deviation per joint, in
    degrees; velocities and accelerations stay untouched.  ``rng`` is a
    Generator or a seed.
    """
    sigma = np.asarray(sigma_deg, dtype=float)
    if sigma.shape != (2,) or np.any(sigma <= 0.0) or not np.all(np.isfinite(sigma)):
        raise ValueError("sigma_deg must be two positive finite levels")
    rng = np.random.default_rng(rng)
    observed = example.observed.copy()
    n_q = observed.size // 6 + 1  # 6N coordinates imply N+1 position knots
    noise = rng.standard_normal((n_q, 2)) * np.radians(sigma)
    observed[: 2 * n_q] += noise.ravel()
    provenance = dict(example.provenance)
    provenance.update({"kind": "noisy", "sigma_deg": [float(s) for s in sigma]})
    return IocExample(env=example.env, observed=observed, provenance=provenance)


def trajectory_rmse_deg(z_a: np.ndarray, z_b: np.ndarray, horizon: Horizon) -> float:
    """Root-mean-square joint-angle difference over all position knots, degrees."""
    n_pos = 2 * horizon.n_q
    diff = np.asarray(z_a)[:n_pos] - np.asarray(z_b)[:n_pos]
    return float(np.degrees(np.sqrt(np.mean(diff**2))))


@dataclass
class SweepCell:
    sigma1_deg: float
    sigma2_deg: float
    rep: int
    status: str
    iterations: int
    loss: float
    theta_error: float
    rmse_deg: float
    theta_hat: np.ndarray
    wall_time: float
    noisy_observed: np.ndarray | None = None
    recovered: np.ndarray | None = None


@dataclass
class SweepResult:
    config: ExperimentConfig
    ground_truth: IocExample
    cells: list[SweepCell]

    def rmse_grid(self) -> np.ndarray:
        """First-repetition RMSE per cell, shape (len(sigma1), len(sigma2))."""
        n1, n2 = len(self.config.sigma1_deg), len(self.config.sigma2_deg)
        grid = np.full((n1, n2), np.nan)
        for cell in self.cells:
            if cell.rep == 0:
                i = self.config.sigma1_deg.index(cell.sigma1_deg)
                j = self.config.sigma2_deg.index(cell.sigma2_deg)
                grid[i, j] = cell.rmse_deg
        return grid

    def theta_error_grid(self) -> np.ndarray:
        n1, n2 = len(self.config.sigma1_deg), len(self.config.sigma2_deg)
        grid = np.full((n1, n2), np.nan)
        for cell in self.cells:
            if cell.rep == 0:
                i = self.config.sigma1_deg.index(cell.sigma1_deg)
                j = self.config.sigma2_deg.index(cell.sigma2_deg)
                grid[i, j] = cell.theta_error
        return grid


def _run_cell(
    config: ExperimentConfig,
    ground_truth: IocExample,
    sigma: tuple[float, float],
    cell_index: int,
    rep: int,
) -> SweepCell:
    rng = np.random.default_rng(np.random.SeedSequence((config.seed, cell_index, rep)))
    noisy = add_noise(ground_truth, sigma, rng)
    theta0 = random_simplex_theta(rng)
    dataset = IocDataset(examples=(noisy,), horizon=config.horizon, arm=config.arm)
    theta_true = theta_gauge(np.asarray(config.theta_true))

    started = time.perf_counter()
    try:
        result = single_level_ioc(
            dataset,
            theta0,
            outer_options=config.outer_options,
            inner_options=config.inner_options,
        )
        status = result.report.status
        iterations = result.report.iterations
        loss = result.loss
        theta_hat = result.theta_hat
        theta_error = float(np.linalg.norm(theta_hat - theta_true))
        rmse = trajectory_rmse_deg(
            result.predictions[0].z, ground_truth.observed, config.horizon
        )
        recovered = result.predictions[0].z
    except InnerSolveFailure as failure:
        status = f"failed_{failure.phase}_{failure.report.status}"
        iterations = failure.report.iterations
        loss = np.nan
        theta_hat = np.full(N_BASES, np.nan)
        theta_error = np.nan
        rmse = np.nan
        recovered = None
    wall = time.perf_counter() - started

    return SweepCell(
        sigma1_deg=sigma[0],
        sigma2_deg=sigma[1],
        rep=rep,
        status=status,
        iterations=iterations,
        loss=loss,
        theta_error=theta_error,
        rmse_deg=rmse,
        theta_hat=theta_hat,
        wall_time=wall,
        noisy_observed=noisy.observed,
        recovered=recovered,
    )


def noise_sweep(config: ExperimentConfig, out_dir: str | None = None) -> SweepResult:
    """Estimate weights over the full noise grid; optionally export artifacts."""
    ground_truth = generate_ground_truth(config)
    n2 = len(config.sigma2_deg)
    cells = []
    for i, s1 in enumerate(config.sigma1_deg):
        for j, s2 in enumerate(config.sigma2_deg):
            for rep in range(config.repetitions):
                cells.append(
                    _run_cell(config, ground_truth, (s1, s2), i * n2 + j, rep)
                )
    result = SweepResult(config=config, ground_truth=ground_truth, cells=cells)
    if out_dir is not None:
        export_sweep_artifacts(result, out_dir)
    return result


_SWEEP_COLUMNS = [
    "sigma1_deg",
    "sigma2_deg",
    "rep",
    "status",
    "iterations",
    "loss",
    "theta_error",
    "rmse_deg",
    "theta_hat_1",
    "theta_hat_2",
    "theta_hat_3",
    "theta_hat_4",
    "theta_hat_5",
]


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)


def write_sweep_csv(result: SweepResult, path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_SWEEP_COLUMNS)
        for cell in result.cells:
            writer.writerow(
                [
                    _fmt(cell.sigma1_deg),
                    _fmt(cell.sigma2_deg),
                    cell.rep,
                    cell.status,
                    cell.iterations,
                    _fmt(cell.loss),
                    _fmt(cell.theta_error),
                    _fmt(cell.rmse_deg),
                ]
                + [_fmt(float(t)) for t in cell.theta_hat]
            )


def write_timing_csv(result: SweepResult, path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sigma1_deg", "sigma2_deg", "rep", "status", "wall_time"])
        for cell in result.cells:
            writer.writerow(
                [
                    _fmt(cell.sigma1_deg),
                    _fmt(cell.sigma2_deg),
                    cell.rep,
                    cell.status,
                    _fmt(cell.wall_time),
                ]
            )


def _overlay_csv(result: SweepResult, cell: SweepCell, path: str) -> None:
    """True, noisy, initial-guess, and recovered position knots, side by side."""
    horizon = result.config.horizon
    times = horizon.times()
    q_true = unpack(result.ground_truth.observed, horizon).q
    q_noisy = unpack(cell.noisy_observed, horizon).q
    z_init, _ = default_initial_point(result.ground_truth.env, horizon, result.config.arm)
    q_init = unpack(z_init, horizon).q
    q_rec = unpack(cell.recovered, horizon).q
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["t"]
            + [f"q{j}_{kind}" for kind in ("true", "noisy", "initial", "recovered") for j in (1, 2)]
        )
        for k in range(horizon.n_q):
            writer.writerow(
                [_fmt(float(times[k]))]
                + [_fmt(float(v)) for q in (q_true, q_noisy, q_init, q_rec) for v in q[k]]
            )


def export_sweep_artifacts(result: SweepResult, out_dir: str) -> dict[str, str]:
    """Write the sweep CSV, timing CSV, heatmap SVGs, overlays, and manifest."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {}

    paths["sweep_csv"] = os.path.join(out_dir, "noise_sweep.csv")
    write_sweep_csv(result, paths["sweep_csv"])
    paths["timing_csv"] = os.path.join(out_dir, "noise_sweep_timing.csv")
    write_timing_csv(result, paths["timing_csv"])

    config = result.config
    for name, grid, label in (
        ("rmse", result.rmse_grid(), "trajectory RMSE [deg]"),
        ("theta_error", result.theta_error_grid(), "|theta_hat - theta_true|"),
    ):
        svg = heatmap_svg(
            grid,
            np.asarray(config.sigma1_deg),
            np.asarray(config.sigma2_deg),
            title=f"Noise robustness: {label}",
            x_label="joint-1 noise sigma [deg]",
            y_label="joint-2 noise sigma [deg]",
            value_label=label,
        )
        path = os.path.join(out_dir, f"heatmap_{name}.svg")
        with open(path, "w") as fh:
            fh.write(svg)
        paths[f"heatmap_{name}"] = path

    good = [c for c in result.cells if c.rep == 0 and c.recovered is not None]
    if good:
        ranked = sorted(good, key=lambda c: c.rmse_deg)
        for tag, cell in (
            ("median_rmse", ranked[(len(ranked) - 1) // 2]),
            ("max_rmse", ranked[-1]),
        ):
            path = os.path.join(out_dir, f"overlay_{tag}.csv")
            _overlay_csv(result, cell, path)
            paths[f"overlay_{tag}"] = path

    paths["manifest"] = os.path.join(out_dir, "manifest.yaml")
    save_manifest(result.config, paths["manifest"])
    return paths


@dataclass
class BenchRow:
    sigma1_deg: float
    sigma2_deg: float
    single_status: str
    single_time: float
    single_iterations: int
    single_loss: float
    bilevel_status: str
    bilevel_time: float
    bilevel_evaluations: int
    bilevel_loss: float
    agreement_rmse_deg: float


@dataclass
class TimingReport:
    rows: list[BenchRow]
    mean_single_time: float
    mean_bilevel_time: float
    speedup: float


def timing_benchmark(config: ExperimentConfig, out_dir: str | None = None) -> TimingReport:
    """Run both estimation strategies on matched noisy datasets and time them.

    Covers the diagonal (equal per-joint noise) of the configured grid, or
    the full grid with ``bench_levels: full``.  Each cell reuses the sweep's
    seed derivation, so both strategies see exactly the sweep's data.
    """
    ground_truth = generate_ground_truth(config)
    n2 = len(config.sigma2_deg)
    if config.bench_levels == "full":
        pairs = [
            (i, j) for i in range(len(config.sigma1_deg)) for j in range(n2)
        ]
    else:
        pairs = [
            (i, j)
            for i, s1 in enumerate(config.sigma1_deg)
            for j, s2 in enumerate(config.sigma2_deg)
            if s1 == s2
        ]

    rows = []
    for i, j in pairs:
        sigma = (config.sigma1_deg[i], config.sigma2_deg[j])
        rng = np.random.default_rng(np.random.SeedSequence((config.seed, i * n2 + j, 0)))
        noisy = add_noise(ground_truth, sigma, rng)
        theta0 = random_simplex_theta(rng)
        dataset = IocDataset(examples=(noisy,), horizon=config.horizon, arm=config.arm)

        def timed(fn) -> tuple[IocResult | None, str, float]:
            start = time.perf_counter()
            try:
                res = fn()
                status = res.report.status
            except InnerSolveFailure as failure:
                res = None
                status = f"failed_{failure.phase}_{failure.report.status}"
            return res, status, time.perf_counter() - start

        single, single_status, single_time = timed(
            lambda: single_level_ioc(
                dataset,
                theta0,
                outer_options=config.outer_options,
                inner_options=config.inner_options,
            )
        )
        bilevel, bilevel_status, bilevel_time = timed(
            lambda: bilevel_ioc(
                dataset,
                theta0,
                inner_options=config.inner_options,
                simplex_tol=config.simplex_tol,
                simplex_max_evals=config.simplex_max_evals,
            )
        )
        agreement = (
            trajectory_rmse_deg(
                single.predictions[0].z, bilevel.predictions[0].z, config.horizon
            )
            if single is not None and bilevel is not None
            else np.nan
        )
        rows.append(
            BenchRow(
                sigma1_deg=sigma[0],
                sigma2_deg=sigma[1],
                single_status=single_status,
                single_time=single_time,
                single_iterations=single.report.iterations if single else 0,
                single_loss=single.loss if single else np.nan,
                bilevel_status=bilevel_status,
                bilevel_time=bilevel_time,
                bilevel_evaluations=bilevel.report.iterations if bilevel else 0,
                bilevel_loss=bilevel.loss if bilevel else np.nan,
                agreement_rmse_deg=agreement,
            )
        )

    both = [
        r for r in rows if r.single_status == "converged" and r.bilevel_status == "converged"
    ]
    mean_single = float(np.mean([r.single_time for r in both])) if both else np.nan
    mean_bilevel = float(np.mean([r.bilevel_time for r in both])) if both else np.nan
    report = TimingReport(
        rows=rows,
        mean_single_time=mean_single,
        mean_bilevel_time=mean_bilevel,
        speedup=mean_bilevel / mean_single if both else np.nan,
    )
    if out_dir is not None:
        export_bench_artifacts(report, config, out_dir)
    return report


def export_bench_artifacts(
    report: TimingReport, config: ExperimentConfig, out_dir: str
) -> dict[str, str]:
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, "bench.csv")
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [
                "sigma1_deg",
                "sigma2_deg",
                "single_status",
                "single_time",
                "single_iterations",
                "single_loss",
                "bilevel_status",
                "bilevel_time",
                "bilevel_evaluations",
                "bilevel_loss",
                "agreement_rmse_deg",
            ]
        )
        for r in report.rows:
            writer.writerow(
                [
                    _fmt(r.sigma1_deg),
                    _fmt(r.sigma2_deg),
                    r.single_status,
                    _fmt(r.single_time),
                    r.single_iterations,
                    _fmt(r.single_loss),
                    r.bilevel_status,
                    _fmt(r.bilevel_time),
                    r.bilevel_evaluations,
                    _fmt(r.bilevel_loss),
                    _fmt(r.agreement_rmse_deg),
                ]
            )
    summary_path = os.path.join(out_dir, "bench_summary.json")
    with open(summary_path, "w") as fh:
        json.dump(
            {
                "mean_single_time": report.mean_single_time,
                "mean_bilevel_time": report.mean_bilevel_time,
                "speedup": report.speedup,
                "levels": len(report.rows),
            },
            fh,
            indent=2,
        )
        fh.write("\n")
    manifest_path = os.path.join(out_dir, "bench_manifest.yaml")
    save_manifest(config, manifest_path)
    return {"csv": csv_path, "summary": summary_path, "manifest": manifest_path}


def export_estimation_result(
    result: IocResult,
    dataset: IocDataset,
    out_dir: str,
    config: ExperimentConfig,
) -> dict[str, str]:
    """Write recovered trajectories, the weight estimate, and the manifest."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {}
    for i, point in enumerate(result.predictions):
        path = os.path.join(out_dir, f"recovered_{i}.csv")
        write_trajectory_csv(path, unpack(point.z, dataset.horizon), dataset.horizon)
        paths[f"recovered_{i}"] = path
    summary = {
        "method": result.method,
        "theta_hat": [float(t) for t in result.theta_hat],
        "loss": result.loss,
        "status": result.report.status,
        "iterations": result.report.iterations,
        "final_stationarity": result.report.final_stationarity,
        "final_feasibility": result.report.final_feasibility,
        "warnings": result.warnings,
        "residual_norms": [p.residual_norm for p in result.predictions],
    }
    paths["summary"] = os.path.join(out_dir, "estimate.json")
    with open(paths["summary"], "w") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    paths["manifest"] = os.path.join(out_dir, "manifest.yaml")
    save_manifest(config, paths["manifest"])
    return paths
