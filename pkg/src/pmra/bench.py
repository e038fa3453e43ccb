"""Monte Carlo noise sweeps comparing the estimators, with CSV output.

Every trial draws its own ground truth and batch from seeds derived from
``(master seed, sigma index, trial index)``, so trials are reproducible
independently of execution order or worker count.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
import os
import statistics
import time
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .estimators import EMConfig, em_fit, fit_M, fit_T
from .lm import OptConfig
from .model import generate
from .moments import (
    cosine_matrix,
    debias,
    empirical_moments,
    mean_coefficient,
    population_cosine_moments,
    population_moments,
    to_cosine,
)
from .recovery import RecoveryError, reconstruct, recover_magnitudes
from .signal import Signal, SpectralForm, check_p, dft, orbit_distance

log = logging.getLogger(__name__)

METHODS = ("em", "fit_T", "fit_M", "algorithm1")
SCHEMA_VERSION = 1
RECORD_FIELDS = (
    "sigma",
    "trial_index",
    "method",
    "orbit_error",
    "runtime_seconds",
    "iterations",
    "objective",
    "d_err_T3",
    "d_err_M3",
)
SUMMARY_FIELDS = (
    "sigma",
    "method",
    "trials",
    "median_error",
    "mse",
    "median_runtime",
    "median_iterations",
    "median_d_err_T3",
    "median_d_err_M3",
)


class ConfigError(ValueError):
    pass


def log_grid(lo: float, hi: float, count: int) -> tuple[float, ...]:
    if count == 1:
        return (float(lo),)
    return tuple(float(s) for s in np.geomspace(lo, hi, count))


@dataclass(frozen=True)
class ExperimentConfig:
    p: int = 13
    n: int = 20_000
    sigma_grid: tuple[float, ...] = log_grid(0.05, 1.0, 10)
    trials: int = 20
    methods: tuple[str, ...] = METHODS
    seed: int = 0
    output_path: str | None = None
    em: EMConfig = EMConfig()
    opt: OptConfig = OptConfig()
    workers: int = 1
    # wall-clock runtimes are the only nondeterministic column; off writes zeros
    timing: bool = True
    keep_traces: bool = False

    def __post_init__(self):
        try:
            check_p(self.p)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        grid = tuple(float(s) for s in self.sigma_grid)
        object.__setattr__(self, "sigma_grid", grid)
        object.__setattr__(self, "methods", tuple(self.methods))
        if not grid:
            raise ConfigError("sigma grid is empty")
        if any(s <= 0 for s in grid) or any(b <= a for a, b in zip(grid, grid[1:])):
            raise ConfigError("sigma grid must be strictly positive and increasing")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if self.n < 1:
            raise ConfigError("n must be >= 1")
        unknown = set(self.methods) - set(METHODS)
        if unknown or not self.methods:
            raise ConfigError(f"unknown methods {sorted(unknown)}; choose from {METHODS}")


PRESETS = {
    "desk": ExperimentConfig(),
    "paper": ExperimentConfig(sigma_grid=log_grid(0.05, 1.0, 20), trials=100),
}


@dataclass
class TrialRecord:
    sigma: float
    trial_index: int
    method: str
    orbit_error: float
    runtime_seconds: float
    iterations: int
    objective: float
    d_err_T3: float
    d_err_M3: float
    # not written to CSV: per-start objective traces (EM log-likelihoods, LM costs)
    traces: list[list[float]] | None = field(default=None, repr=False, compare=False)

    def row(self) -> list[str]:
        out = []
        for name in RECORD_FIELDS:
            v = getattr(self, name)
            out.append(format(v, ".17g") if isinstance(v, float) else str(v))
        return out


# --- ground truth ---------------------------------------------------------


def trial_seeds(master: int, sigma_index: int, trial_index: int) -> dict[str, int]:
    ss = np.random.SeedSequence(entropy=int(master), spawn_key=(int(sigma_index), int(trial_index)))
    state = ss.generate_state(4, np.uint64)
    return dict(zip(("signal", "batch", "em", "opt"), (int(s) for s in state)))


def is_generic(theta, min_magnitude: float = 0.02, separation: float = 1e-3) -> bool:
    """Magnitude floor and no degeneracy flag when recovering from exact moments."""
    h = dft(theta)
    q = (len(h) - 1) // 2
    if np.min(np.abs(h[1 : q + 1])) <= min_magnitude:
        return False
    try:
        _, trace = reconstruct(population_moments(theta), separation=separation)
    except RecoveryError:
        return False
    return not trace.degenerate


def generic_signal(p: int, rng: np.random.Generator, min_magnitude: float = 0.02, max_tries: int = 10_000) -> Signal:
    """Unit-norm Gaussian signal, resampled until it satisfies the recovery hypotheses."""
    for _ in range(max_tries):
        x = rng.standard_normal(p)
        x /= np.linalg.norm(x)
        if is_generic(x, min_magnitude):
            return Signal(x)
    raise RuntimeError(f"no generic signal found in {max_tries} draws")


# --- trials ---------------------------------------------------------------


def relative_error(estimate: np.ndarray, truth: np.ndarray) -> float:
    return float(np.linalg.norm(estimate - truth) / np.linalg.norm(truth))


def _run_algorithm1(deb):
    cm = to_cosine(deb, cosine_matrix(deb.p))
    r = recover_magnitudes(cm)
    floor = 1e-3 * float(np.max(r)) if np.max(r) > 0 else 1e-8
    est, trace = reconstruct(deb, r_min=floor)
    return est, float(np.min(trace.candidate_residuals))


def _mean_only(deb) -> Signal:
    q = deb.q
    return SpectralForm(deb.p, mean_coefficient(deb.t1), np.zeros(q), np.zeros(q)).to_signal()


def run_trial(cfg: ExperimentConfig, sigma_index: int, trial_index: int) -> list[TrialRecord]:
    sigma = cfg.sigma_grid[sigma_index]
    seeds = trial_seeds(cfg.seed, sigma_index, trial_index)
    truth = generic_signal(cfg.p, np.random.default_rng(seeds["signal"]))
    batch = generate(truth, cfg.n, sigma, seeds["batch"])
    deb = debias(empirical_moments(batch), sigma)

    pop = population_moments(truth)
    d_t3 = relative_error(deb.t3, pop.t3)
    d_m3 = relative_error(to_cosine(deb).m3, population_cosine_moments(truth).m3)

    records = []
    for method in cfg.methods:
        start = time.perf_counter()
        traces = None
        if method == "em":
            fit = em_fit(batch, sigma, dataclasses.replace(cfg.em, seed=seeds["em"]))
            est, iters, obj, traces = fit.estimate, fit.iterations, fit.objective, fit.start_traces
        elif method in ("fit_T", "fit_M"):
            opt = dataclasses.replace(cfg.opt, seed=seeds["opt"])
            fit = fit_T(deb, opt) if method == "fit_T" else fit_M(deb, cosine_matrix(cfg.p), opt)
            est, iters, obj, traces = fit.estimate, fit.iterations, fit.objective, fit.start_traces
        else:
            try:
                est, obj = _run_algorithm1(deb)
            except RecoveryError as exc:
                log.debug("algorithm1 failed at sigma=%g trial=%d: %s", sigma, trial_index, exc)
                est, obj = _mean_only(deb), float("nan")
            iters = 0
        elapsed = time.perf_counter() - start if cfg.timing else 0.0
        records.append(
            TrialRecord(
                sigma=sigma,
                trial_index=trial_index,
                method=method,
                orbit_error=orbit_distance(est, truth),
                runtime_seconds=float(elapsed),
                iterations=int(iters),
                objective=float(obj),
                d_err_T3=d_t3,
                d_err_M3=d_m3,
                traces=traces if cfg.keep_traces else None,
            )
        )
    return records


def _run_job(args):
    cfg, si, ti = args
    return run_trial(cfg, si, ti)


def check_writable(path: str | os.PathLike) -> None:
    path = Path(path)
    parent = path.parent if str(path.parent) else Path(".")
    if not parent.is_dir():
        raise ConfigError(f"output directory {parent} does not exist")
    if path.exists() and not os.access(path, os.W_OK):
        raise ConfigError(f"output file {path} is not writable")
    if not path.exists() and not os.access(parent, os.W_OK):
        raise ConfigError(f"output directory {parent} is not writable")


def run_experiment(cfg: ExperimentConfig) -> list[TrialRecord]:
    """Run every (sigma, trial) job, sort the records and write them as CSV."""
    if cfg.output_path is not None:
        check_writable(cfg.output_path)
    jobs = [(cfg, si, ti) for si in range(len(cfg.sigma_grid)) for ti in range(cfg.trials)]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            chunks = list(pool.map(_run_job, jobs))
    else:
        chunks = []
        for job in jobs:
            chunks.append(_run_job(job))
            log.info("sigma=%.4g trial=%d done", cfg.sigma_grid[job[1]], job[2])
    order = {m: i for i, m in enumerate(cfg.methods)}
    records = sorted(
        (r for chunk in chunks for r in chunk),
        key=lambda r: (r.sigma, r.trial_index, order[r.method]),
    )
    if cfg.output_path is not None:
        write_records(records, cfg.output_path)
    return records


# --- CSV ------------------------------------------------------------------


def write_records(records: Iterable[TrialRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# pmra trial records, schema {SCHEMA_VERSION}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RECORD_FIELDS)
        for r in records:
            w.writerow(r.row())


def read_records(path) -> list[TrialRecord]:
    with open(path, newline="") as fh:
        rows = csv.DictReader(line for line in fh if not line.startswith("#"))
        if rows.fieldnames is None or tuple(rows.fieldnames) != RECORD_FIELDS:
            raise ValueError(f"{path}: unexpected header {rows.fieldnames}")
        return [
            TrialRecord(
                sigma=float(row["sigma"]),
                trial_index=int(row["trial_index"]),
                method=row["method"],
                orbit_error=float(row["orbit_error"]),
                runtime_seconds=float(row["runtime_seconds"]),
                iterations=int(row["iterations"]),
                objective=float(row["objective"]),
                d_err_T3=float(row["d_err_T3"]),
                d_err_M3=float(row["d_err_M3"]),
            )
            for row in rows
        ]


# --- analysis -------------------------------------------------------------


def summarize(records: Sequence[TrialRecord]) -> list[dict]:
    """Median error, MSE, median runtime and diagnostics per (sigma, method)."""
    if not records:
        raise ValueError("no records to summarize")
    groups: dict[tuple[float, str], list[TrialRecord]] = defaultdict(list)
    for r in records:
        groups[(r.sigma, r.method)].append(r)
    rows = []
    for (sigma, method), rs in sorted(groups.items()):
        errs = [r.orbit_error for r in rs]
        rows.append(
            {
                "sigma": sigma,
                "method": method,
                "trials": len(rs),
                "median_error": statistics.median(errs),
                "mse": float(np.mean(np.square(errs))),
                "median_runtime": statistics.median(r.runtime_seconds for r in rs),
                "median_iterations": statistics.median(r.iterations for r in rs),
                "median_d_err_T3": statistics.median(r.d_err_T3 for r in rs),
                "median_d_err_M3": statistics.median(r.d_err_M3 for r in rs),
            }
        )
    return rows


def write_summary(rows: Sequence[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# pmra summary, schema {SCHEMA_VERSION}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_FIELDS)
        for row in rows:
            w.writerow([format(row[k], ".17g") if isinstance(row[k], float) else row[k] for k in SUMMARY_FIELDS])


def fit_scaling_slope(records: Sequence[TrialRecord], method: str, sigma_range: tuple[float, float]) -> float:
    """OLS slope of log(mean squared orbit error) against log(sigma) over ``sigma_range``."""
    lo, hi = sigma_range
    lo, hi = lo * (1 - 1e-12), hi * (1 + 1e-12)
    by_sigma: dict[float, list[float]] = defaultdict(list)
    for r in records:
        if r.method == method and lo <= r.sigma <= hi:
            by_sigma[r.sigma].append(r.orbit_error)
    if not by_sigma:
        raise ValueError(f"no {method} records with sigma in [{sigma_range[0]}, {sigma_range[1]}]")
    if len(by_sigma) < 3:
        raise ValueError(f"need at least 3 sigma levels for a slope, found {len(by_sigma)}")
    sig = np.array(sorted(by_sigma))
    mse = np.array([np.mean(np.square(by_sigma[s])) for s in sig])
    slope, _ = np.polyfit(np.log(sig), np.log(mse), 1)
    return float(slope)
