"""Seeded multi-trial sweeps, CSV emission and assumption diagnostics."""
from __future__ import annotations

import csv
import hashlib
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .core import STREAM_DIAGNOSE, ExperimentConfig, rng_stream
from .datagen import generate_population, ground_truth_for
from .federation import METHOD_RULES, run_algorithm, warm_radius
from .metrics import TrialRecord
from .model import DiagnosticsReport, estimate_assumptions, get_model
from .threestage import run_three_stage

log = logging.getLogger(__name__)

METHODS = ("brifca_median", "brifca_trimmed", "ifca_fedavg", "three_stage")

# Simulation settings (a)-(d): cluster count and machine count.
SETTINGS = {"a": (2, 80), "b": (5, 200), "c": (10, 400), "d": (15, 600)}
DEFAULT_DIMENSIONS = (20, 50, 100, 200, 500)

RAW_COLUMNS = ("setting", "method", "d", "k", "m", "trial", "iteration",
               "dist", "cluster_accuracy", "elapsed_ms")
SUMMARY_COLUMNS = ("setting", "method", "d", "k", "m", "trials", "failed",
                   "mean_dist", "stderr_dist", "mean_cluster_accuracy")


def setting_label(k: int, m: int) -> str:
    for label, km in SETTINGS.items():
        if km == (k, m):
            return label
    return f"k{k}m{m}"


def trial_seed(base_seed: int, k: int, m: int, d: int, trial: int) -> int:
    """64-bit trial seed from the cell's content, so every method sees the same data."""
    blob = f"{base_seed}:{k}:{m}:{d}:{trial}".encode()
    return int.from_bytes(hashlib.sha256(blob).digest()[:8], "little")


@dataclass(frozen=True)
class SweepSpec:
    base: ExperimentConfig
    out: Path
    dims: tuple[int, ...] = ()
    settings: tuple[tuple[int, int], ...] = ()
    methods: tuple[str, ...] = METHODS
    trials: int = 50
    parallelism: int = 1
    timing: bool = False

    def cells(self) -> list[tuple[int, int, int]]:
        """(k, m, d) triples in sweep order."""
        settings = self.settings or ((self.base.k, self.base.m),)
        dims = self.dims or (self.base.d,)
        return [(k, m, d) for k, m in settings for d in dims]


@dataclass(frozen=True)
class TrialTask:
    config: ExperimentConfig
    method: str
    trial: int
    timing: bool = False


@dataclass
class TrialOutcome:
    task: TrialTask
    record: TrialRecord | None = None
    error: str | None = None


def run_trial(config: ExperimentConfig, method: str, timing: bool = False) -> TrialRecord:
    """One seeded run of `method` on freshly generated data."""
    config.validate()
    truth = ground_truth_for(config)
    workers = generate_population(config, truth)
    if method == "three_stage":
        record, _ = run_three_stage(config, truth, workers, timing=timing)
        return record
    if method not in METHOD_RULES:
        raise ValueError(f"unknown method {method!r}")
    return run_algorithm(config, truth, workers, METHOD_RULES[method](config),
                         method=method, timing=timing)


def _execute(task: TrialTask) -> TrialOutcome:
    try:
        return TrialOutcome(task, run_trial(task.config, task.method, task.timing))
    except Exception as exc:  # per-trial failures are recorded, the sweep continues
        return TrialOutcome(task, error=f"{type(exc).__name__}: {exc}")


def _fmt(x: float) -> str:
    return repr(float(x))


def _check_writable(out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    probe = out / ".write_probe"
    probe.write_text("")
    probe.unlink()


def build_tasks(spec: SweepSpec) -> list[TrialTask]:
    tasks = []
    for k, m, d in spec.cells():
        for method in spec.methods:
            for trial in range(spec.trials):
                cfg = replace(spec.base, k=k, m=m, d=d,
                              seed=trial_seed(spec.base.seed, k, m, d, trial))
                tasks.append(TrialTask(cfg, method, trial, spec.timing))
    return tasks


def run_sweep(spec: SweepSpec) -> tuple[list[dict], list[TrialOutcome]]:
    """Run every (setting, d, method, trial) cell and write raw.csv and summary.csv.

    Returns the summary rows and the failed outcomes.
    """
    if spec.trials < 1:
        raise ValueError("trials must be positive")
    unknown = set(spec.methods) - set(METHODS)
    if unknown:
        raise ValueError(f"unknown methods {sorted(unknown)}")
    out = Path(spec.out)
    _check_writable(out)
    tasks = build_tasks(spec)
    for task in tasks[:: max(1, spec.trials * len(spec.methods))]:
        task.config.validate()
        _warn_conditions(task.config)

    if spec.parallelism > 1:
        with ProcessPoolExecutor(max_workers=spec.parallelism) as pool:
            outcomes = list(pool.map(_execute, tasks, chunksize=1))
    else:
        outcomes = []
        for i, task in enumerate(tasks):
            outcomes.append(_execute(task))
            log.info("trial %d/%d done (%s d=%d)", i + 1, len(tasks), task.method, task.config.d)

    failed = [o for o in outcomes if o.error is not None]
    for o in failed:
        log.error("trial failed: method=%s d=%d trial=%d: %s",
                  o.task.method, o.task.config.d, o.task.trial, o.error)
    _write_raw(out / "raw.csv", outcomes)
    summary = summarize(outcomes)
    _write_rows(out / "summary.csv", SUMMARY_COLUMNS, summary)
    return summary, failed


def _write_rows(path: Path, columns, rows) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\r\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([row[c] for c in columns])


def _write_raw(path: Path, outcomes: list[TrialOutcome]) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\r\n")
        writer.writerow(RAW_COLUMNS)
        for o in outcomes:
            if o.record is None:
                continue
            cfg = o.task.config
            label = setting_label(cfg.k, cfg.m)
            for row in o.record.rows:
                writer.writerow([label, o.task.method, cfg.d, cfg.k, cfg.m, o.task.trial,
                                 row.iteration, _fmt(row.dist), _fmt(row.cluster_accuracy),
                                 _fmt(row.elapsed_ms)])


def summarize(outcomes: list[TrialOutcome]) -> list[dict]:
    """Mean and standard error of the final dist per (setting, method, d) cell."""
    cells: dict[tuple, list[TrialOutcome]] = {}
    for o in outcomes:
        cfg = o.task.config
        cells.setdefault((cfg.k, cfg.m, o.task.method, cfg.d), []).append(o)
    rows = []
    for (k, m, method, d), group in cells.items():
        done = [o.record for o in group if o.record is not None]
        finals = np.array([r.final_dist for r in done])
        accs = np.array([r.final_accuracy for r in done])
        n = len(finals)
        rows.append({
            "setting": setting_label(k, m), "method": method, "d": d, "k": k, "m": m,
            "trials": n, "failed": len(group) - n,
            "mean_dist": _fmt(finals.mean()) if n else "nan",
            "stderr_dist": _fmt(finals.std(ddof=1) / math.sqrt(n)) if n > 1 else "nan",
            "mean_cluster_accuracy": _fmt(accs.mean()) if n else "nan",
        })
    return rows


@dataclass
class Condition:
    name: str
    passed: bool
    detail: str


@dataclass
class Diagnosis:
    report: DiagnosticsReport
    conditions: list[Condition] = field(default_factory=list)

    @property
    def warnings(self) -> list[Condition]:
        return [c for c in self.conditions if not c.passed]


def check_conditions(config: ExperimentConfig, report: DiagnosticsReport | None = None) -> list[Condition]:
    """Checkable parts of the convergence preconditions; never blocks a run."""
    truth = ground_truth_for(config)
    p = min(truth.cluster_sizes) / config.m
    alpha = config.byzantine_count / config.m
    out = []
    ratio = 4 * alpha / p
    out.append(Condition("byzantine_fraction", ratio <= config.beta,
                         f"4*alpha/p = {ratio:.4g} vs beta = {config.beta:.4g}"))
    n_min = min(config.machine_sizes[: config.honest_count])
    if report is not None and truth.k > 1 and report.lambda_hat > 0:
        need = config.k * report.eta2_hat / (report.lambda_hat**2 * truth.delta**4)
        out.append(Condition("samples_per_machine", n_min >= need,
                             f"n_min = {n_min} vs k*eta2/(lambda^2 Delta^4) = {need:.4g}"))
        out.append(Condition("step_size", config.gamma <= 1.0 / report.L_hat + 1e-12,
                             f"gamma = {config.gamma:.4g} vs 1/L_hat = {1.0 / report.L_hat:.4g}"))
    out.append(Condition("warm_init_radius", truth.k == 1 or truth.delta > 0,
                         f"Delta = {truth.delta:.4g}, warm radius = {warm_radius(truth, config.space):.4g}"))
    if config.resampling:
        per = n_min // (2 * config.T) if config.T else n_min
        out.append(Condition("resampling_subset", per >= 1, f"{per} samples per resampled subset"))
    return out


def _warn_conditions(config: ExperimentConfig) -> None:
    for c in check_conditions(config):
        if not c.passed:
            log.warning("precondition %s not met (k=%d d=%d): %s", c.name, config.k, config.d, c.detail)


def diagnose(config: ExperimentConfig, probe_count: int = 8, samples: int = 10_000,
             stream=None) -> Diagnosis:
    """Estimate the distributional constants and report pass/warn per condition."""
    config.validate()
    truth = ground_truth_for(config)
    model = get_model(config.model)
    rng = rng_stream(config.seed, (STREAM_DIAGNOSE,))
    report = estimate_assumptions(model, truth, probe_count, rng, sigma2=config.sigma2, samples=samples)
    diag = Diagnosis(report, check_conditions(config, report))
    if stream is not None:
        print(f"eta2_hat={report.eta2_hat:.6g} nu2_hat={report.nu2_hat:.6g} "
              f"skew_hat={report.skew_hat:.6g} lambda_hat={report.lambda_hat:.6g} "
              f"L_hat={report.L_hat:.6g}", file=stream)
        for c in diag.conditions:
            print(f"{'pass' if c.passed else 'warn'} {c.name}: {c.detail}", file=stream)
    return diag
