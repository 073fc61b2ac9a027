"""Run experiment specs: replications, sweeps and CSV reports."""

from __future__ import annotations

import csv
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence, Union

from .capacity import workload_for_intensity
from .config import ExperimentSpec, PolicyEntry, ValidationError
from .engine import SimulationSetup, run
from .model import Exponential, JobType, ServerSpec
from .policies import InvariantViolation
from .processes import BatchPoisson, Poisson, RenewalLogNormal
from .trace import load_trace, synthetic_trace, type_demands

log = logging.getLogger(__name__)

SUMMARY_COLUMNS = ["name", "policy", "axis", "replication", "mean_queue", "max_queue",
                   "stall_fraction", "resets", "seed"]
TIMESERIES_COLUMNS = ["event", "time", "total_queue"]
THREADS_ENV = "STALLSCHED_THREADS"


def threads_from_env(default: Optional[int] = None) -> int:
    """Worker cap from ``STALLSCHED_THREADS`` (falls back to the CPU count)."""
    raw = os.environ.get(THREADS_ENV, "").strip()
    if raw:
        try:
            value = int(raw)
        except ValueError:
            raise ValidationError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None
        if value < 1:
            raise ValidationError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
        return value
    return default or os.cpu_count() or 1


@dataclass(frozen=True)
class ReplicationResult:
    policy: str
    axis: str
    replication: int
    seed: int
    mean_queue: float
    max_queue: int
    stall_fraction: float
    resets: int
    timeseries: tuple[tuple[int, float, int], ...]


@dataclass
class ExperimentReport:
    name: str
    results: list[ReplicationResult]

    def means(self) -> dict[tuple[str, str], float]:
        """Cross-replication mean of the mean queue, keyed by (policy, axis)."""
        groups: dict[tuple[str, str], list[float]] = {}
        for r in self.results:
            groups.setdefault((r.policy, r.axis), []).append(r.mean_queue)
        return {k: sum(v) / len(v) for k, v in groups.items()}


# ----------------------------------------------------------------------------
# building simulation inputs


def servers_of(spec: ExperimentSpec) -> list[ServerSpec]:
    return [ServerSpec(i, cap) for i, cap in enumerate(spec.capacities)]


def arrival_rates(spec: ExperimentSpec) -> list[float]:
    """Per-type arrival rates; traffic intensities are converted via the capacity region."""
    a = spec.arrivals
    if a.rates is not None:
        return list(a.rates)
    try:
        return workload_for_intensity(a.zeta, a.direction, servers_of(spec), list(spec.demands), list(spec.service))
    except ValueError as exc:
        raise ValidationError(f"cannot place the workload: {exc}") from None


def trace_path(spec: ExperimentSpec, seed: int, out_dir: Path) -> Path:
    t = spec.arrivals.trace
    if t.path is not None:
        p = Path(t.path)
        return p if p.is_absolute() else Path(spec.base_dir) / p
    return out_dir / "traces" / f"synthetic_{t.synthetic_rows}_{seed}.csv"


def prepare_traces(spec: ExperimentSpec, seeds: Sequence[int], out_dir: Path) -> None:
    """Generate the synthetic traces a spec needs (one per replication seed)."""
    t = spec.arrivals.trace
    if spec.arrivals.law != "trace" or t.synthetic_rows is None:
        return
    for seed in seeds:
        path = trace_path(spec, seed, out_dir)
        if not path.exists():
            path.parent.mkdir(parents=True, exist_ok=True)
            tmp = path.with_suffix(".tmp")
            synthetic_trace(tmp, t.synthetic_rows, seed=seed, rate=t.synthetic_rate,
                            duration_sigma=t.synthetic_duration_sigma)
            tmp.replace(path)


def build_setup(spec: ExperimentSpec, entry: PolicyEntry, seed: int, out_dir: Path) -> SimulationSetup:
    servers = servers_of(spec)
    a = spec.arrivals
    if a.law == "trace":
        path = trace_path(spec, seed, out_dir)
        try:
            stream = load_trace(path, window=a.trace.window, below_floor=a.trace.below_floor)
        except (OSError, ValueError) as exc:
            raise ValidationError(f"cannot load trace {path}: {exc}") from None
        means = stream.mean_durations()
        jobs = [JobType(j, d, 0.0, Exponential(1.0 / means[j])) for j, d in enumerate(type_demands())]
        arrivals = stream
    else:
        if a.law == "batch":
            law = BatchPoisson(a.batch_rate, a.batch)
            rates = law.type_rates()
            arrivals = law
        else:
            rates = arrival_rates(spec)
            arrivals = Poisson(tuple(rates)) if a.law == "poisson" else RenewalLogNormal(tuple(rates), a.sigma)
        jobs = [JobType(j, d, r, s) for j, (d, r, s) in enumerate(zip(spec.demands, rates, spec.service))]
    setup = SimulationSetup(
        servers=servers,
        job_types=jobs,
        policy=entry.config,
        arrivals=arrivals,
        event_budget=spec.budget_for(entry),
        seed=seed,
        warmup_fraction=spec.warmup_fraction,
        check_invariants=spec.check_invariants,
    )
    try:
        setup.validate()
    except ValueError as exc:
        raise ValidationError(str(exc)) from None
    return setup


# ----------------------------------------------------------------------------
# execution


@dataclass(frozen=True)
class _Task:
    spec: ExperimentSpec
    policy_index: int
    replication: int
    axis: str
    out_dir: str


def _execute(task: _Task):
    spec = task.spec
    entry = spec.policies[task.policy_index]
    seed = spec.seed + task.replication
    try:
        setup = build_setup(spec, entry, seed, Path(task.out_dir))
        result = run(setup)
    except InvariantViolation as exc:
        # the state dump does not survive pickling as an exception attribute
        return ("invariant", str(exc), exc.state)
    except ValidationError as exc:
        return ("validation", str(exc), None)
    s = result.summary
    return ("ok", ReplicationResult(
        policy=entry.label,
        axis=task.axis,
        replication=task.replication,
        seed=seed,
        mean_queue=s.mean_queue,
        max_queue=s.max_queue,
        stall_fraction=s.stall_fraction,
        resets=s.resets,
        timeseries=tuple(result.timeseries(spec.timeseries_points)),
    ), None)


def _run_tasks(tasks: list[_Task], threads: int) -> list[ReplicationResult]:
    if threads <= 1 or len(tasks) <= 1:
        outcomes = [_execute(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=min(threads, len(tasks))) as pool:
            outcomes = list(pool.map(_execute, tasks))
    results = []
    for kind, payload, state in outcomes:
        if kind == "invariant":
            raise InvariantViolation(payload, state)
        if kind == "validation":
            raise ValidationError(payload)
        results.append(payload)
    return results


def _axis_label(value: Optional[float]) -> str:
    if value is None:
        return ""
    return str(int(value)) if float(value).is_integer() else repr(float(value))


def spec_at(spec: ExperimentSpec, axis: str, value: float) -> ExperimentSpec:
    """The experiment with one sweep coordinate applied.

    On the servers axis explicit arrival rates scale with the server count;
    rates given by a traffic intensity are recomputed from the new fleet, which
    scales them the same way. Trace replays keep their arrivals.
    """
    if axis == "servers":
        new = spec.with_servers(int(value))
        a = spec.arrivals
        if a.rates is not None:
            factor = int(value) / sum(n for n, _ in spec.groups)
            new = replace(new, arrivals=replace(a, rates=tuple(r * factor for r in a.rates)))
        return new
    if axis == "zeta":
        if spec.arrivals.zeta is None:
            raise ValidationError("the zeta axis needs zeta and direction in [arrivals]")
        return replace(spec, arrivals=replace(spec.arrivals, zeta=float(value)))
    raise ValidationError(f"unknown sweep axis {axis!r}")


def _tasks_for(spec: ExperimentSpec, axis: str, out_dir: Path) -> list[_Task]:
    prepare_traces(spec, [spec.seed + i for i in range(spec.replications)], out_dir)
    return [_Task(spec, p, i, axis, str(out_dir))
            for p in range(len(spec.policies)) for i in range(spec.replications)]


def run_experiment(spec: ExperimentSpec, out_dir: Union[str, Path], threads: Optional[int] = None) -> ExperimentReport:
    """Run every policy and replication of ``spec`` and write the CSV reports."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    threads = threads if threads is not None else threads_from_env()
    results = _run_tasks(_tasks_for(spec, "", out_dir), threads)
    report = ExperimentReport(spec.name, results)
    write_outputs(report, spec, out_dir)
    return report


def sweep(spec: ExperimentSpec, out_dir: Union[str, Path], axis: Optional[str] = None,
          values: Optional[Sequence[float]] = None, threads: Optional[int] = None) -> ExperimentReport:
    """Run ``spec`` at every point of a sweep axis; one summary row group per point and policy."""
    if axis is None:
        if spec.sweep is None:
            raise ValidationError("no sweep axis given and the experiment has no [sweep] section")
        axis = spec.sweep.axis
    if values is None:
        if spec.sweep is None or spec.sweep.axis != axis:
            raise ValidationError(f"no values given for the {axis} axis")
        values = spec.sweep.values
    if not values:
        raise ValidationError("sweep needs at least one value")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    threads = threads if threads is not None else threads_from_env()
    tasks = []
    for v in values:
        tasks.extend(_tasks_for(spec_at(spec, axis, v), _axis_label(v), out_dir))
    results = _run_tasks(tasks, threads)
    report = ExperimentReport(spec.name, results)
    write_outputs(report, spec, out_dir, axis)
    return report


# ----------------------------------------------------------------------------
# CSV output


def _fmt(x: float) -> str:
    return repr(float(x))


def summary_rows(report: ExperimentReport, base_seed: int) -> list[list[str]]:
    rows = []
    order: list[tuple[str, str]] = []
    for r in report.results:
        if (r.policy, r.axis) not in order:
            order.append((r.policy, r.axis))
    for policy, axis in order:
        group = [r for r in report.results if r.policy == policy and r.axis == axis]
        for r in group:
            rows.append([report.name, policy, axis, str(r.replication), _fmt(r.mean_queue), str(r.max_queue),
                         _fmt(r.stall_fraction), str(r.resets), str(r.seed)])
        n = len(group)
        rows.append([report.name, policy, axis, "mean",
                     _fmt(sum(r.mean_queue for r in group) / n),
                     _fmt(sum(r.max_queue for r in group) / n),
                     _fmt(sum(r.stall_fraction for r in group) / n),
                     _fmt(sum(r.resets for r in group) / n),
                     str(base_seed)])
    return rows


def write_timeseries(path: Path, rows: Sequence[tuple[int, float, int]]) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TIMESERIES_COLUMNS)
        for event, time, total in rows:
            w.writerow([event, _fmt(time), total])


def write_outputs(report: ExperimentReport, spec: ExperimentSpec, out_dir: Path,
                  axis_name: Optional[str] = None) -> Path:
    """Write ``summary.csv`` and ``<policy>[/<axis>]/timeseries_<rep>.csv``; return the summary path."""
    summary = out_dir / "summary.csv"
    with summary.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        w.writerows(summary_rows(report, spec.seed))
    for r in report.results:
        d = out_dir / r.policy
        if r.axis:
            d = d / f"{axis_name or 'axis'}_{r.axis}"
        d.mkdir(parents=True, exist_ok=True)
        write_timeseries(d / f"timeseries_{r.replication}.csv", r.timeseries)
    return summary


def read_summary(path: Union[str, Path]) -> list[dict]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != SUMMARY_COLUMNS:
            raise ValidationError(f"{path}: expected columns {','.join(SUMMARY_COLUMNS)}")
        return list(reader)
