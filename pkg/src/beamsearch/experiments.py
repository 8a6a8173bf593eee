"""
Monte Carlo experiments: convergence curves, hitting-time scaling in N,
asynchronous update sweeps and improvement-probability estimates.

Every experiment is a pure function of (config, master_seed). Per-run seeds
are derived with ``numpy.random.SeedSequence`` spawn keys, runs may be
fanned out to worker processes, and results are always collected in run
order, so the worker count never changes the output.
"""

from __future__ import annotations

import concurrent.futures
import csv
import hashlib
import json
import math
import os
import pickle
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .model import (
    Objective,
    PhaseState,
    SnrObjective,
    UpdateSchedule,
    UsageError,
    check_origin_interior,
    make_rng,
    sample_channels,
)
from .search import SearchConfig, Trace, run

__all__ = [
    "ExperimentError",
    "LinearFit",
    "RunRecord",
    "ConditionSummary",
    "MonteCarloResult",
    "ScalingResult",
    "AsyncSweepResult",
    "derive_seeds",
    "worker_count",
    "snr_factory",
    "monte_carlo_convergence",
    "scaling_study",
    "async_sweep",
    "improvement_probability_estimate",
    "linear_fit",
    "summarize",
    "write_runs_csv",
    "write_summary_csv",
    "RUNS_COLUMNS",
    "SUMMARY_COLUMNS",
    "WORKERS_ENV",
]

WORKERS_ENV = "BEAMSEARCH_WORKERS"

RUNS_COLUMNS = ("run_id", "seed", "N", "rho", "hit_index", "final_f")
SUMMARY_COLUMNS = (
    "condition", "count", "non_converged", "convergence_fraction", "mean", "std",
    "stderr", "min", "max", "slope", "intercept", "r_squared",
)

# spawn-key tags keeping the seed families of different purposes apart
_RUN_KEY = 0
_CHANNEL_KEY = 1


class ExperimentError(RuntimeError):
    """An experiment cell produced no usable result."""

    def __init__(self, message, cell=None):
        super().__init__(message)
        self.cell = cell


def derive_seeds(master_seed: int, count: int, *key: int) -> list[int]:
    """``count`` 64-bit seeds from ``master_seed``, separated by spawn ``key``."""
    ss = np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(k) for k in key))
    return [int(s) for s in ss.generate_state(int(count), dtype=np.uint64)]


def worker_count() -> int:
    value = os.environ.get(WORKERS_ENV)
    if value:
        try:
            n = int(value)
        except ValueError:
            raise UsageError(f"{WORKERS_ENV} must be an integer, got {value!r}") from None
        if n < 1:
            raise UsageError(f"{WORKERS_ENV} must be >= 1, got {n}")
        return n
    return os.cpu_count() or 1


def _run_task(task):
    config, seed = task
    return run(config, seed)


def _picklable(obj) -> bool:
    try:
        pickle.dumps(obj)
    except Exception:
        return False
    return True


def _run_all(tasks, workers=None) -> list[Trace]:
    """Run (config, seed) tasks; result order always follows ``tasks``."""
    workers = worker_count() if workers is None else int(workers)
    if workers > 1 and len(tasks) > 1 and _picklable(tasks[0]):
        chunk = max(1, len(tasks) // (4 * workers))
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_run_task, tasks, chunksize=chunk))
    return [_run_task(t) for t in tasks]


def _fingerprint(payload: dict) -> str:
    blob = json.dumps(payload, sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def snr_factory(n: int, rng) -> SnrObjective:
    """Unit-power SNR objective on a fresh CN(0, 1) channel."""
    return SnrObjective(sample_channels(n, rng))


# Results
# =======

@dataclass(frozen=True)
class LinearFit:
    slope: float
    intercept: float
    r_squared: float

    def predict(self, x):
        return self.slope * np.asarray(x, dtype=float) + self.intercept


@dataclass(frozen=True)
class RunRecord:
    """One row of ``runs.csv``."""

    run_id: int
    seed: int
    n: int
    rho: float
    hit_index: Optional[int]
    final_f: float

    def row(self):
        return (
            self.run_id, self.seed, self.n, _fmt(self.rho),
            "" if self.hit_index is None else self.hit_index, _fmt(self.final_f),
        )


@dataclass(frozen=True)
class ConditionSummary:
    """One row of ``summary.csv``; fit columns are empty except on fit rows."""

    condition: str
    count: int
    non_converged: int
    convergence_fraction: Optional[float] = None
    mean: Optional[float] = None
    std: Optional[float] = None
    stderr: Optional[float] = None
    min: Optional[float] = None
    max: Optional[float] = None
    slope: Optional[float] = None
    intercept: Optional[float] = None
    r_squared: Optional[float] = None

    def row(self):
        return (
            self.condition, self.count, self.non_converged,
            *(_fmt(getattr(self, c)) for c in SUMMARY_COLUMNS[3:]),
        )


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return x


def summarize(condition: str, values: Sequence[Optional[float]], hits: bool = True) -> ConditionSummary:
    """
    Mean, std (ddof=1), standard error, min and max over the non-None entries.

    With ``hits`` the entries are hitting times and None marks a run that
    never converged; the converged share goes in ``convergence_fraction``.
    """
    finite = np.array([v for v in values if v is not None], dtype=float)
    missing = len(values) - finite.size
    fraction = finite.size / len(values) if hits and len(values) else None
    if finite.size == 0:
        return ConditionSummary(condition, 0, missing, fraction)
    std = float(finite.std(ddof=1)) if finite.size > 1 else 0.0
    return ConditionSummary(
        condition, int(finite.size), missing, fraction,
        mean=float(finite.mean()), std=std, stderr=std / math.sqrt(finite.size),
        min=float(finite.min()), max=float(finite.max()),
    )


@dataclass(frozen=True, eq=False)
class MonteCarloResult:
    """
    Independent runs of one configuration.

    ``convergence_fraction_by_iter[n]`` is the fraction of runs whose hit
    index is at most n, over n = 0..budget.
    """

    traces: Optional[tuple]
    hit_times: tuple
    final_values: tuple
    convergence_fraction_by_iter: np.ndarray
    config_fingerprint: str
    seeds: tuple
    budget: int
    origin_interior: object = True

    @property
    def runs(self) -> int:
        return len(self.hit_times)

    @property
    def final_convergence_fraction(self) -> float:
        return float(self.convergence_fraction_by_iter[-1])

    @property
    def non_converged(self) -> int:
        return sum(h is None for h in self.hit_times)

    @property
    def mean_hit_time(self) -> Optional[float]:
        return summarize("", self.hit_times).mean

    def mean_value_curve(self) -> np.ndarray:
        """
        Average f(theta[n]) across runs for n = 0..budget.

        Runs that stopped early are extended with their last value, which is a
        lower bound on what they would have reached.
        """
        if self.traces is None:
            raise UsageError("traces were not kept")
        curves = np.empty((len(self.traces), self.budget + 1))
        for row, tr in zip(curves, self.traces):
            row[: len(tr)] = tr.values
            row[len(tr):] = tr.values[-1]
        return curves.mean(axis=0)

    def records(self, n: int, rho: float) -> list[RunRecord]:
        return [
            RunRecord(i, s, n, rho, h, f)
            for i, (s, h, f) in enumerate(zip(self.seeds, self.hit_times, self.final_values))
        ]

    def same_as(self, other: "MonteCarloResult") -> bool:
        """Bitwise equality of everything but the kept traces' object identity."""
        if (self.hit_times, self.seeds, self.config_fingerprint) != (other.hit_times, other.seeds, other.config_fingerprint):
            return False
        if not np.array_equal(self.convergence_fraction_by_iter, other.convergence_fraction_by_iter):
            return False
        if np.array(self.final_values).tobytes() != np.array(other.final_values).tobytes():
            return False
        if (self.traces is None) != (other.traces is None):
            return False
        if self.traces is not None:
            return all(
                a.values.tobytes() == b.values.tobytes() and np.array_equal(a.accepted, b.accepted)
                for a, b in zip(self.traces, other.traces)
            )
        return True


@dataclass(frozen=True)
class ScalingResult:
    n_values: tuple
    mean_hit_times: tuple
    fit: LinearFit
    counts: tuple
    non_converged: tuple
    summaries: tuple
    records: tuple
    config_fingerprint: str


@dataclass(frozen=True)
class AsyncSweepResult:
    """
    Hitting times per update percentage rho, paired by run index.

    ``hit_times[rho][i]`` used the same seed (and channel) for every rho.
    """

    rho_values: tuple
    means: dict
    summaries: dict
    hit_times: dict
    records: tuple
    config_fingerprint: str

    def paired_difference(self, rho_a: float, rho_b: float) -> tuple[float, float]:
        """
        Mean and standard error of hit(rho_a) - hit(rho_b) over runs that
        converged under both.
        """
        pairs = [
            (a, b) for a, b in zip(self.hit_times[rho_a], self.hit_times[rho_b])
            if a is not None and b is not None
        ]
        if len(pairs) < 2:
            raise UsageError("need at least two paired runs")
        d = np.array([a - b for a, b in pairs], dtype=float)
        return float(d.mean()), float(d.std(ddof=1) / math.sqrt(d.size))


# Experiments
# ===========

def monte_carlo_convergence(
    config: SearchConfig,
    runs: int,
    master_seed: int,
    keep_traces: bool = True,
    workers: Optional[int] = None,
) -> MonteCarloResult:
    """
    Repeat the search ``runs`` times on one configuration.

    Runs differ in their seeds only (initial point, perturbations, masks).
    A perturbation model whose range does not surround the origin is
    allowed, with a warning: nothing guarantees convergence then.
    """
    if int(runs) < 1:
        raise UsageError(f"runs must be >= 1, got {runs}")
    origin_ok = check_origin_interior(config.perturbation, n=config.dimension)
    if origin_ok is False:
        warnings.warn("perturbation range does not contain a neighbourhood of the origin", stacklevel=2)
    seeds = derive_seeds(master_seed, runs, _RUN_KEY)
    traces = _run_all([(config, s) for s in seeds], workers)

    budget = config.budget
    hits = tuple(t.hit_index for t in traces)
    hit_arr = np.array([budget + 1 if h is None else h for h in hits])
    counts = np.bincount(hit_arr, minlength=budget + 2)[: budget + 1]
    fraction = np.cumsum(counts) / len(traces)
    fraction.setflags(write=False)

    payload = {"experiment": "converge", "config": config.describe(), "runs": int(runs), "seed": int(master_seed)}
    return MonteCarloResult(
        traces=tuple(traces) if keep_traces else None,
        hit_times=hits,
        final_values=tuple(t.final_value for t in traces),
        convergence_fraction_by_iter=fraction,
        config_fingerprint=_fingerprint(payload),
        seeds=tuple(seeds),
        budget=budget,
        origin_interior=origin_ok,
    )


def _config_for(base: SearchConfig, objective: Objective, schedule=None) -> SearchConfig:
    if isinstance(base.initial_state, PhaseState):
        raise UsageError("a fixed initial state cannot be reused across dimensions or channels")
    changes = {"objective": objective}
    if schedule is not None:
        changes["schedule"] = schedule
    return base.with_(**changes)


def scaling_study(
    base_config: SearchConfig,
    n_values: Sequence[int],
    runs_per_n: int,
    channels_per_n: int,
    master_seed: int,
    objective_factory: Callable[[int, np.random.Generator], Objective] = snr_factory,
    workers: Optional[int] = None,
) -> ScalingResult:
    """
    Mean hitting time as a function of the number of transmitters.

    For each N, ``channels_per_n`` objectives are drawn from
    ``objective_factory(N, rng)`` and searched ``runs_per_n`` times each;
    converged hitting times are pooled into one mean per N and a least
    squares line is fitted through (N, mean).

    Raises
    ------
    ExperimentError
        If some (N, channel) cell has no converged run.
    """
    n_values = [int(n) for n in n_values]
    if len(n_values) < 2:
        raise UsageError("a linear fit needs at least two values of N")
    if any(b <= a for a, b in zip(n_values, n_values[1:])):
        raise UsageError("n_values must be strictly increasing")
    if n_values[0] < 2:
        raise UsageError("every N must be >= 2")
    if int(runs_per_n) < 1 or int(channels_per_n) < 1:
        raise UsageError("runs_per_n and channels_per_n must be >= 1")
    if base_config.perturbation.dimension is not None:
        raise UsageError("scaling needs a perturbation model usable at any N (scalar shift)")

    tasks, cells = [], []
    for n in n_values:
        ch_seeds = derive_seeds(master_seed, channels_per_n, _CHANNEL_KEY, n)
        for c, ch_seed in enumerate(ch_seeds):
            config = _config_for(base_config, objective_factory(n, make_rng(ch_seed)))
            for s in derive_seeds(master_seed, runs_per_n, _RUN_KEY, n, c):
                tasks.append((config, s))
                cells.append((n, c))
    traces = _run_all(tasks, workers)

    rho = base_config.schedule.rho
    by_cell: dict = {}
    records = []
    for i, ((n, c), (_, s), tr) in enumerate(zip(cells, tasks, traces)):
        by_cell.setdefault((n, c), []).append(tr.hit_index)
        records.append(RunRecord(i, s, n, rho, tr.hit_index, tr.final_value))
    for (n, c), hits in by_cell.items():
        if all(h is None for h in hits):
            raise ExperimentError(f"no run converged for N={n}, channel {c}", cell={"N": n, "channel": c})

    summaries = []
    for n in n_values:
        pooled = [h for c in range(channels_per_n) for h in by_cell[(n, c)]]
        summaries.append(summarize(f"N={n}", pooled))
    means = [s.mean for s in summaries]
    fit = linear_fit(list(zip(n_values, means)))
    summaries.append(ConditionSummary(
        "fit", sum(s.count for s in summaries), sum(s.non_converged for s in summaries),
        slope=fit.slope, intercept=fit.intercept, r_squared=fit.r_squared,
    ))
    payload = {
        "experiment": "scaling", "config": base_config.describe(), "n_values": n_values,
        "runs_per_n": int(runs_per_n), "channels_per_n": int(channels_per_n), "seed": int(master_seed),
        "factory": getattr(objective_factory, "__qualname__", repr(objective_factory)),
    }
    return ScalingResult(
        n_values=tuple(n_values),
        mean_hit_times=tuple(means),
        fit=fit,
        counts=tuple(s.count for s in summaries[:-1]),
        non_converged=tuple(s.non_converged for s in summaries[:-1]),
        summaries=tuple(summaries),
        records=tuple(records),
        config_fingerprint=_fingerprint(payload),
    )


def async_sweep(
    base_config: SearchConfig,
    rho_values: Sequence[float],
    runs_per_rho: int,
    master_seed: int,
    objective_factory: Optional[Callable[[int, np.random.Generator], Objective]] = None,
    workers: Optional[int] = None,
) -> AsyncSweepResult:
    """
    Mean hitting time for each percentage ``rho`` of updating transmitters.

    Run i uses the same seed for every rho (common random numbers). With an
    ``objective_factory``, run i also gets its own channel, again shared
    across rho; otherwise all runs search ``base_config.objective``.
    The iteration budget scales as 1/p unless ``max_iterations`` is set.
    """
    rho_values = [float(r) for r in rho_values]
    if not rho_values:
        raise UsageError("rho_values is empty")
    if int(runs_per_rho) < 1:
        raise UsageError(f"runs_per_rho must be >= 1, got {runs_per_rho}")
    schedules = [UpdateSchedule.from_rho(r) for r in rho_values]

    n = base_config.dimension
    seeds = derive_seeds(master_seed, runs_per_rho, _RUN_KEY)
    if objective_factory is None:
        objectives = [base_config.objective] * len(seeds)
    else:
        objectives = [objective_factory(n, make_rng(s)) for s in derive_seeds(master_seed, runs_per_rho, _CHANNEL_KEY)]

    tasks = [
        (_config_for(base_config, obj, sched), s)
        for sched in schedules
        for obj, s in zip(objectives, seeds)
    ]
    traces = _run_all(tasks, workers)

    hit_times, summaries, means, records = {}, {}, {}, []
    for k, rho in enumerate(rho_values):
        block = traces[k * len(seeds): (k + 1) * len(seeds)]
        hits = [t.hit_index for t in block]
        if all(h is None for h in hits):
            raise ExperimentError(f"no run converged for rho={rho}", cell={"rho": rho})
        hit_times[rho] = tuple(hits)
        summaries[rho] = summarize(f"rho={_fmt(rho)}", hits)
        means[rho] = summaries[rho].mean
        for i, (s, t) in enumerate(zip(seeds, block)):
            records.append(RunRecord(k * len(seeds) + i, s, n, rho, t.hit_index, t.final_value))

    payload = {
        "experiment": "async-sweep", "config": base_config.describe(), "rho_values": rho_values,
        "runs": int(runs_per_rho), "seed": int(master_seed),
        "factory": None if objective_factory is None else getattr(objective_factory, "__qualname__", repr(objective_factory)),
    }
    return AsyncSweepResult(
        rho_values=tuple(rho_values),
        means=means,
        summaries=summaries,
        hit_times=hit_times,
        records=tuple(records),
        config_fingerprint=_fingerprint(payload),
    )


def improvement_probability_estimate(theta, config: SearchConfig, samples: int, rng, n_iter: int = 1) -> float:
    """
    Fraction of sampled (masked, transformed) perturbations that strictly
    improve the objective at a fixed point ``theta``.

    Perturbations are drawn before masks from ``rng``, so two calls with
    equal seeds and different schedules share their perturbations.
    """
    if int(samples) < 1:
        raise UsageError(f"samples must be >= 1, got {samples}")
    state = theta if isinstance(theta, PhaseState) else PhaseState(theta)
    obj = config.objective
    n = obj.dimension
    if state.n != n:
        raise UsageError(f"theta has dimension {state.n}, objective has {n}")
    rng = make_rng(rng)
    f0 = obj.evaluate(state.theta)
    deltas = config.perturbation.draw(rng, n, size=int(samples), n_iter=n_iter)
    if config.schedule.kind != "synchronous":
        deltas = deltas * config.schedule.draw(rng, n, size=int(samples))
    values = obj.evaluate_batch(state.theta + deltas)
    return float(np.count_nonzero(values > f0)) / int(samples)


def linear_fit(points) -> LinearFit:
    """
    Ordinary least squares line through (x, y) points.

    r_squared = 1 - SS_res / SS_tot, taken as 1 when all y are equal.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise UsageError("points must be a sequence of (x, y) pairs")
    x, y = pts[:, 0], pts[:, 1]
    if np.unique(x).size < 2:
        raise UsageError("a line fit needs at least two distinct x values")
    xm, ym = x.mean(), y.mean()
    sxx = np.sum((x - xm) ** 2)
    slope = float(np.sum((x - xm) * (y - ym)) / sxx)
    intercept = float(ym - slope * xm)
    ss_tot = float(np.sum((y - ym) ** 2))
    ss_res = float(np.sum((y - (slope * x + intercept)) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return LinearFit(slope, intercept, float(min(1.0, max(0.0, r2))))


# CSV output
# ==========

def write_runs_csv(records, fh) -> int:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(RUNS_COLUMNS)
    count = 0
    for r in records:
        writer.writerow(r.row())
        count += 1
    return count


def write_summary_csv(summaries, fh) -> int:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(SUMMARY_COLUMNS)
    count = 0
    for s in summaries:
        writer.writerow(s.row())
        count += 1
    return count
