"""
Command-line front end.

    beamsearch converge --runs 50 --seed 1 --out results/fig1
    beamsearch scaling --config study.cfg --rho 50

One experiment per invocation. Settings come from a flat ``key = value``
config file (see docs/config.md) with command-line flags taking precedence.
Every invocation writes ``runs.csv``, ``summary.csv``, ``manifest.txt`` and,
if asked, one ``trace_<run_id>.csv`` per run.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import math
import os
import sys
import time
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np

from . import __version__
from .experiments import (
    ConditionSummary,
    ExperimentError,
    RunRecord,
    async_sweep,
    derive_seeds,
    improvement_probability_estimate,
    monte_carlo_convergence,
    scaling_study,
    summarize,
    worker_count,
    write_runs_csv,
    write_summary_csv,
)
from .model import (
    ModPiQuadraticObjective,
    Objective,
    PerturbationModel,
    PhaseState,
    SnrObjective,
    UpdateSchedule,
    UsageError,
    make_rng,
    sample_channels,
)
from .search import SearchConfig, SearchError, StopCriterion, run

__all__ = [
    "SpecError",
    "ExperimentSpec",
    "EXPERIMENTS",
    "OBJECTIVES",
    "register_objective",
    "parse_spec",
    "serialize_spec",
    "build_config",
    "execute",
    "main",
]

EXPERIMENTS = ("run", "converge", "scaling", "async-sweep", "improve-prob")

# spawn-key tags for seeds drawn by the CLI itself
_CHANNEL_KEY = 11
_SHIFT_KEY = 12
_STATE_KEY = 13

OUTPUT_FILES = ("runs.csv", "summary.csv", "manifest.txt")


class SpecError(UsageError):
    """Invalid experiment settings."""


def _snr(n: int, rng, spec) -> Objective:
    return SnrObjective(sample_channels(n, rng), spec.signal_power, spec.noise_power)


def _modpi(n: int, rng, spec) -> Objective:
    return ModPiQuadraticObjective(n)


# name -> factory(n, rng, spec); extend with register_objective
OBJECTIVES: dict[str, Callable] = {"snr": _snr, "modpi": _modpi}


def register_objective(name: str, factory: Callable) -> None:
    """Make ``objective = name`` available; ``factory(n, rng, spec)`` returns an Objective."""
    if not name or any(c in name for c in " ,#="):
        raise SpecError(f"invalid objective name {name!r}")
    OBJECTIVES[name] = factory


@dataclass(frozen=True)
class ExperimentSpec:
    """
    Validated settings of one CLI experiment.

    Angles are given in degrees here and converted to radians when the
    search configuration is built.
    """

    experiment: str = "converge"
    objective: str = "snr"
    n: int = 200
    n_values: tuple = (25, 50, 100, 150, 200)
    delta0_deg: float = 5.0
    shift_deg: Union[float, str] = 0.0
    shift_spread: float = 0.5
    shift_draw: str = "independent"
    rho: float = 100.0
    rho_values: tuple = (25.0, 50.0, 75.0, 100.0)
    alpha: float = 0.9
    epsilon: Optional[float] = None
    runs: int = 50
    channels: int = 5
    samples: int = 10000
    budget: Optional[int] = None
    seed: int = 0
    initializer: str = "uniform"
    halt_on_hit: bool = True
    signal_power: float = 1.0
    noise_power: float = 1.0
    traces: bool = False
    out: Optional[str] = None
    overwrite: bool = False

    def __post_init__(self):
        _normalize(self)
        _validate(self)

    @property
    def delta0(self) -> float:
        return math.radians(self.delta0_deg)

    @property
    def stop_rule(self) -> StopCriterion:
        if self.epsilon is not None:
            return StopCriterion.epsilon_region(self.epsilon)
        return StopCriterion.alpha_threshold(self.alpha)

    def replace(self, **changes) -> "ExperimentSpec":
        return dataclasses.replace(self, **changes)

    def fingerprint(self) -> str:
        """Hash of every setting that affects the numbers produced."""
        text = serialize_spec(self, exclude=("out", "overwrite", "traces"))
        return hashlib.sha256(text.encode()).hexdigest()[:12]


_FIELDS = {f.name: f for f in fields(ExperimentSpec)}


_FLOAT_KEYS = ("delta0_deg", "shift_spread", "rho", "alpha", "signal_power", "noise_power")
_INT_KEYS = ("n", "runs", "channels", "samples", "seed")


def _normalize(spec: ExperimentSpec) -> None:
    """Coerce numeric fields so equal settings serialize identically."""
    def put(key, value):
        object.__setattr__(spec, key, value)

    try:
        for key in _FLOAT_KEYS:
            put(key, float(getattr(spec, key)))
        for key in _INT_KEYS:
            value = getattr(spec, key)
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(key)
            put(key, int(value))
        put("n_values", tuple(int(v) for v in spec.n_values))
        put("rho_values", tuple(float(v) for v in spec.rho_values))
        if spec.epsilon is not None:
            put("epsilon", float(spec.epsilon))
        if spec.budget is not None:
            put("budget", int(spec.budget))
        if not isinstance(spec.shift_deg, str):
            put("shift_deg", float(spec.shift_deg))
    except (TypeError, ValueError) as exc:
        raise SpecError(f"invalid numeric setting: {exc}") from None


def _fail(key, value, accepted):
    raise SpecError(f"{key} = {value!r} is out of range; accepted: {accepted}")


def _validate(spec: ExperimentSpec) -> None:
    if spec.experiment not in EXPERIMENTS:
        _fail("experiment", spec.experiment, " | ".join(EXPERIMENTS))
    if spec.objective not in OBJECTIVES:
        _fail("objective", spec.objective, " | ".join(OBJECTIVES))
    if spec.n < 1:
        _fail("n", spec.n, "integer >= 1")
    if not (0 < spec.delta0_deg <= 180):
        _fail("delta0_deg", spec.delta0_deg, "(0, 180] degrees")
    if isinstance(spec.shift_deg, str):
        if spec.shift_deg != "random":
            _fail("shift_deg", spec.shift_deg, "a number of degrees or 'random'")
    elif not math.isfinite(spec.shift_deg):
        _fail("shift_deg", spec.shift_deg, "finite degrees")
    if spec.shift_draw not in ("independent", "common"):
        _fail("shift_draw", spec.shift_draw, "independent | common")
    if not (0 < spec.shift_spread <= 1):
        _fail("shift_spread", spec.shift_spread, "(0, 1]")
    if not (0 < spec.rho <= 100):
        _fail("rho", spec.rho, "(0, 100]")
    if not spec.rho_values or any(not (0 < r <= 100) for r in spec.rho_values):
        _fail("rho_values", spec.rho_values, "non-empty list with every value in (0, 100]")
    if not (0 < spec.alpha <= 1):
        _fail("alpha", spec.alpha, "(0, 1]")
    if spec.epsilon is not None and not (spec.epsilon > 0 and math.isfinite(spec.epsilon)):
        _fail("epsilon", spec.epsilon, "positive real or none")
    for key in ("runs", "channels", "samples"):
        if getattr(spec, key) < 1:
            _fail(key, getattr(spec, key), "integer >= 1")
    if spec.budget is not None and spec.budget < 1:
        _fail("budget", spec.budget, "integer >= 1 or none")
    if spec.seed < 0:
        _fail("seed", spec.seed, "integer >= 0")
    if spec.initializer not in ("uniform", "zeros"):
        _fail("initializer", spec.initializer, "uniform | zeros")
    for key in ("signal_power", "noise_power"):
        v = getattr(spec, key)
        if not (v > 0 and math.isfinite(v)):
            _fail(key, v, "positive real")
    if spec.experiment == "scaling":
        nv = spec.n_values
        if len(nv) < 2:
            _fail("n_values", nv, "at least two values (a line fit needs two points)")
        if any(v < 2 for v in nv) or any(b <= a for a, b in zip(nv, nv[1:])):
            _fail("n_values", nv, "strictly increasing integers >= 2")
        if spec.shift_deg == "random":
            _fail("shift_deg", spec.shift_deg, "a fixed number of degrees for scaling studies")


# Config text
# ===========

def _parse_bool(text: str) -> bool:
    t = text.lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(text)


def _convert(key: str, text: str):
    text = text.strip()
    try:
        if key in ("n_values",):
            return tuple(int(v) for v in text.split(",") if v.strip())
        if key in ("rho_values",):
            return tuple(float(v) for v in text.split(",") if v.strip())
        if key in ("epsilon",):
            return None if text.lower() == "none" else float(text)
        if key in ("budget",):
            return None if text.lower() == "none" else int(text)
        if key in ("out",):
            return None if text.lower() == "none" else text
        if key == "shift_deg":
            return "random" if text.lower() == "random" else float(text)
        if key in ("n", "runs", "channels", "samples", "seed"):
            return int(text)
        if key in ("halt_on_hit", "traces", "overwrite"):
            return _parse_bool(text)
        if key in ("experiment", "objective", "initializer", "shift_draw"):
            return text
        return float(text)
    except ValueError:
        raise SpecError(f"cannot read {key} = {text!r}") from None


def _norm_key(key: str) -> str:
    return key.strip().lower().replace("-", "_")


def parse_config_text(text: str) -> dict:
    """``key = value`` lines into a dict of typed values; ``#`` starts a comment."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SpecError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = line.split("=", 1)
        key = _norm_key(key)
        if key not in _FIELDS:
            raise SpecError(f"line {lineno}: unknown key {key!r}")
        values[key] = _convert(key, value)
    return values


def parse_spec(source: Optional[str] = None, flags: Optional[dict] = None, experiment: Optional[str] = None) -> ExperimentSpec:
    """
    Build a validated ExperimentSpec.

    Parameters
    ----------
    source : str, optional
        Config text; missing keys take the defaults of the simulation setup
        (N = 200, delta0 = 5 degrees, alpha = 0.9, synchronous, SNR).
    flags : dict, optional
        Overrides, applied after ``source``; None values are ignored.
    experiment : str, optional
        Experiment kind, overriding both.
    """
    values = parse_config_text(source) if source else {}
    for key, value in (flags or {}).items():
        key = _norm_key(key)
        if key not in _FIELDS:
            raise SpecError(f"unknown key {key!r}")
        if value is None:
            continue
        values[key] = _convert(key, value) if isinstance(value, str) else value
    if experiment is not None:
        values["experiment"] = experiment
    return ExperimentSpec(**values)


def _text(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(_text(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def serialize_spec(spec: ExperimentSpec, exclude: Sequence[str] = ()) -> str:
    """Config text that ``parse_spec`` reads back into an equal spec."""
    return "".join(
        f"{f.name} = {_text(getattr(spec, f.name))}\n"
        for f in fields(spec)
        if f.name not in exclude
    )


# Experiment wiring
# =================

def _objective_factory(spec: ExperimentSpec):
    make = OBJECTIVES[spec.objective]

    def factory(n, rng):
        return make(n, rng, spec)

    factory.__qualname__ = f"objective:{spec.objective}"
    return factory


def build_config(spec: ExperimentSpec, n: Optional[int] = None, rho: Optional[float] = None) -> SearchConfig:
    """
    Search configuration for ``spec`` at dimension ``n``.

    The channel (and a random shift, if requested) is drawn from seeds derived
    from ``spec.seed``, so the same spec always yields the same objective.
    """
    n = spec.n if n is None else n
    rho = spec.rho if rho is None else rho
    ch_seed, = derive_seeds(spec.seed, 1, _CHANNEL_KEY, n)
    objective = _objective_factory(spec)(n, make_rng(ch_seed))
    if spec.shift_deg == "random":
        sh_seed, = derive_seeds(spec.seed, 1, _SHIFT_KEY, n)
        model = PerturbationModel.random_shift(
            spec.delta0, n, make_rng(sh_seed), spread=spec.shift_spread, common=spec.shift_draw == "common",
        )
    elif spec.shift_deg:
        model = PerturbationModel.shifted(spec.delta0, math.radians(spec.shift_deg))
    else:
        model = PerturbationModel.symmetric(spec.delta0)
    return SearchConfig(
        objective=objective,
        perturbation=model,
        schedule=UpdateSchedule.from_rho(rho),
        initial_state=spec.initializer,
        max_iterations=spec.budget,
        stop_rule=spec.stop_rule,
        halt_on_hit=spec.halt_on_hit,
    )


@dataclass
class _Outcome:
    records: list
    summaries: list
    expected_rows: int
    traces: list = field(default_factory=list)
    fingerprint: str = ""
    notes: list = field(default_factory=list)


def _do_converge(spec: ExperimentSpec, runs: int) -> _Outcome:
    config = build_config(spec)
    res = monte_carlo_convergence(config, runs, spec.seed, keep_traces=True)
    summary = summarize(f"N={spec.n},rho={_text(float(spec.rho))}", res.hit_times)
    out = _Outcome(res.records(spec.n, spec.rho), [summary], runs, fingerprint=res.config_fingerprint)
    out.traces = list(enumerate(res.traces))
    out.notes.append(f"convergence_fraction={res.final_convergence_fraction!r}")
    if res.origin_interior is False:
        out.notes.append("warning=perturbation range excludes a neighbourhood of the origin")
    return out


def _do_scaling(spec: ExperimentSpec) -> _Outcome:
    base = build_config(spec, n=spec.n_values[0])
    res = scaling_study(base, spec.n_values, spec.runs, spec.channels, spec.seed, objective_factory=_objective_factory(spec))
    expected = len(spec.n_values) * spec.runs * spec.channels
    return _Outcome(list(res.records), list(res.summaries), expected, fingerprint=res.config_fingerprint)


def _do_async(spec: ExperimentSpec) -> _Outcome:
    base = build_config(spec)
    res = async_sweep(base, spec.rho_values, spec.runs, spec.seed, objective_factory=_objective_factory(spec))
    summaries = [res.summaries[r] for r in res.rho_values]
    expected = len(spec.rho_values) * spec.runs
    return _Outcome(list(res.records), summaries, expected, fingerprint=res.config_fingerprint)


def _do_improve(spec: ExperimentSpec) -> _Outcome:
    """Improvement probability at ``runs`` random points that have not converged."""
    config = build_config(spec)
    obj, stop = config.objective, config.stop_rule
    records, estimates = [], []
    for i, seed in enumerate(derive_seeds(spec.seed, spec.runs, _STATE_KEY)):
        rng = make_rng(seed)
        for _ in range(1000):
            theta = PhaseState.uniform(obj.dimension, rng)
            f = obj.evaluate(theta)
            if not stop.satisfied(f, obj.global_max_value):
                break
        else:
            raise ExperimentError(f"could not draw a non-converged state for run {i}", cell={"run": i})
        estimates.append(improvement_probability_estimate(theta, config, spec.samples, rng))
        records.append(RunRecord(i, seed, spec.n, spec.rho, None, f))
    # runs.csv rows carry f at each sampled state; hit_index stays empty
    summary = summarize(f"improve_prob,N={spec.n},rho={_text(float(spec.rho))}", estimates, hits=False)
    return _Outcome(records, [summary], spec.runs, fingerprint=config.fingerprint())


def _run_experiment(spec: ExperimentSpec) -> _Outcome:
    if spec.experiment == "run":
        return _do_converge(spec, 1)
    if spec.experiment == "converge":
        return _do_converge(spec, spec.runs)
    if spec.experiment == "scaling":
        return _do_scaling(spec)
    if spec.experiment == "async-sweep":
        return _do_async(spec)
    return _do_improve(spec)


def default_out_dir(spec: ExperimentSpec) -> Path:
    return Path("results") / f"{spec.experiment}-{spec.fingerprint()}"


def _write_manifest(path: Path, spec: ExperimentSpec, lines: list) -> None:
    body = serialize_spec(spec)
    meta = "".join(f"# {ln}\n" for ln in lines)
    path.write_text(
        "# beamsearch manifest; rerun with: beamsearch "
        f"{spec.experiment} --config manifest.txt --out <new dir>\n" + body + meta,
        encoding="utf-8",
    )


def _clear_outputs(out: Path) -> None:
    for name in OUTPUT_FILES:
        (out / name).unlink(missing_ok=True)
    for p in out.glob("trace_*.csv"):
        p.unlink()


def execute(spec: ExperimentSpec, stream=None) -> int:
    """
    Run ``spec`` and write its output directory.

    Returns 0 on success, 1 when the experiment fails (only ``manifest.txt``
    is written, naming the failed cell) and 2 when the output directory
    exists and ``overwrite`` is off.
    """
    stream = sys.stdout if stream is None else stream
    out = Path(spec.out) if spec.out else default_out_dir(spec)
    if out.exists() and not spec.overwrite:
        print(f"error: output directory {out} exists; pass --overwrite to replace it", file=sys.stderr)
        return 2
    out.mkdir(parents=True, exist_ok=True)
    _clear_outputs(out)

    meta = [f"version={__version__}", f"spec_fingerprint={spec.fingerprint()}", f"workers={worker_count()}"]
    start = time.perf_counter()
    try:
        outcome = _run_experiment(spec)
    except (ExperimentError, SearchError) as exc:
        cell = getattr(exc, "cell", None)
        _write_manifest(out / "manifest.txt", spec, meta + [
            "status=failed", f"error={exc}", f"failed_cell={cell}",
            f"wall_time_s={time.perf_counter() - start:.3f}",
        ])
        print(f"error: {exc}", file=sys.stderr)
        return 1
    wall = time.perf_counter() - start

    with open(out / "runs.csv", "w", newline="", encoding="utf-8") as fh:
        n_rows = write_runs_csv(outcome.records, fh)
    with open(out / "summary.csv", "w", newline="", encoding="utf-8") as fh:
        write_summary_csv(outcome.summaries, fh)
    if spec.traces or spec.experiment == "run":
        for run_id, tr in outcome.traces:
            with open(out / f"trace_{run_id}.csv", "w", newline="", encoding="utf-8") as fh:
                tr.to_csv(fh, fingerprint=outcome.fingerprint, seed=tr.seed)

    lines = meta + [
        "status=ok",
        f"config_fingerprint={outcome.fingerprint}",
        f"runs_csv_rows={n_rows}",
        f"expected_rows={outcome.expected_rows}",
    ]
    if n_rows != outcome.expected_rows:
        lines.append(f"row_discrepancy={outcome.expected_rows - n_rows}")
    lines += outcome.notes
    lines.append(f"wall_time_s={wall:.3f}")
    _write_manifest(out / "manifest.txt", spec, lines)

    for s in outcome.summaries:
        if s.slope is not None:
            print(f"{s.condition}: slope={s.slope:.4g} intercept={s.intercept:.4g} r2={s.r_squared:.4f}", file=stream)
        elif s.mean is not None:
            print(f"{s.condition}: mean={s.mean:.6g} stderr={s.stderr:.3g} count={s.count} "
                  f"non_converged={s.non_converged}", file=stream)
        else:
            print(f"{s.condition}: no converged runs ({s.non_converged})", file=stream)
    for note in outcome.notes:
        print(note, file=stream)
    print(f"wrote {out}", file=stream)
    return 0


# Argument parsing
# ================

_FLAGS = [
    ("--n", int, "number of transmitters N"),
    ("--n-values", str, "comma-separated N values (scaling)"),
    ("--rho", float, "percentage of transmitters updating per slot, (0, 100]"),
    ("--rho-values", str, "comma-separated rho values (async-sweep)"),
    ("--alpha", float, "convergence threshold as a fraction of the optimum"),
    ("--epsilon", float, "use the epsilon-region criterion instead of alpha"),
    ("--delta0-deg", float, "perturbation half-width in degrees"),
    ("--shift-deg", str, "perturbation shift in degrees, or 'random'"),
    ("--objective", str, "objective name (snr, modpi or a registered plugin)"),
    ("--runs", int, "runs per condition (states for improve-prob)"),
    ("--channels", int, "channel draws per N (scaling)"),
    ("--samples", int, "perturbations per state (improve-prob)"),
    ("--budget", int, "iteration budget per run"),
    ("--seed", int, "master seed"),
    ("--out", str, "output directory"),
]


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="beamsearch", description="One-bit feedback random search experiments.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="experiment", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="key = value config file")
        for flag, typ, help_ in _FLAGS:
            p.add_argument(flag, type=typ, help=help_)
        p.add_argument("--traces", action="store_true", default=None, help="write trace_<run_id>.csv files")
        p.add_argument("--overwrite", action="store_true", default=None, help="replace an existing output directory")
        p.add_argument("--continue-after-hit", dest="halt_on_hit", action="store_false", default=None,
                       help="keep iterating after the criterion is met")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _parser().parse_args(argv)
    flags = {k: v for k, v in vars(args).items() if k not in ("experiment", "config")}
    try:
        source = args.config.read_text(encoding="utf-8") if args.config else None
        spec = parse_spec(source, flags, experiment=args.experiment)
    except (OSError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return execute(spec)


if __name__ == "__main__":
    sys.exit(main())
