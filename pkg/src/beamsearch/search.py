"""
Local random search with one-bit (keep / discard) feedback.

Each slot perturbs the current phases, evaluates the objective once at the
candidate and keeps the candidate only if it is strictly better.
"""

from __future__ import annotations

import hashlib
import io
import json
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Union

import numpy as np

from .model import (
    Objective,
    PerturbationModel,
    PhaseState,
    UpdateSchedule,
    UsageError,
)

__all__ = [
    "SearchError",
    "StopCriterion",
    "SearchConfig",
    "Trace",
    "step",
    "run",
    "run_streams",
    "in_epsilon_region",
    "hitting_time",
    "first_hit",
]

# Perturbations and masks are drawn this many slots at a time.
BLOCK = 512


class SearchError(RuntimeError):
    """A run hit a non-finite objective value."""


@dataclass(frozen=True)
class StopCriterion:
    """
    When a search point counts as converged.

    ``alpha``: f >= alpha * f_max. ``epsilon``: f > f_max - epsilon.
    ``budget``: never; the run only ends when the iteration budget does.
    """

    kind: str = "alpha"
    alpha: Optional[float] = 0.9
    epsilon: Optional[float] = None

    def __post_init__(self):
        if self.kind == "alpha":
            if self.alpha is None or not (0.0 < self.alpha <= 1.0):
                raise UsageError(f"alpha must lie in (0, 1], got {self.alpha}")
        elif self.kind == "epsilon":
            if self.epsilon is None or not (self.epsilon > 0 and math.isfinite(self.epsilon)):
                raise UsageError(f"epsilon must be positive, got {self.epsilon}")
        elif self.kind != "budget":
            raise UsageError(f"unknown stop criterion {self.kind!r}")

    @classmethod
    def alpha_threshold(cls, alpha: float) -> "StopCriterion":
        return cls("alpha", alpha=alpha)

    @classmethod
    def epsilon_region(cls, epsilon: float) -> "StopCriterion":
        return cls("epsilon", alpha=None, epsilon=epsilon)

    @classmethod
    def budget_only(cls) -> "StopCriterion":
        return cls("budget", alpha=None)

    @property
    def needs_global_max(self) -> bool:
        return self.kind != "budget"

    def satisfied(self, values, global_max):
        """Elementwise test of objective value(s) against the criterion."""
        values = np.asarray(values, dtype=float)
        if self.kind == "alpha":
            return values >= self.alpha * global_max
        if self.kind == "epsilon":
            return values > global_max - self.epsilon
        return np.zeros(values.shape, dtype=bool)

    def describe(self) -> dict:
        return {"kind": self.kind, "alpha": self.alpha, "epsilon": self.epsilon}


@dataclass(frozen=True)
class SearchConfig:
    """
    Everything one run needs besides its random streams.

    Parameters
    ----------
    objective : Objective
    perturbation : PerturbationModel
    schedule : UpdateSchedule, default synchronous
    initial_state : PhaseState or {'uniform', 'zeros'}, default 'uniform'
    max_iterations : int, optional
        Defaults to ceil(200 * N / p).
    stop_rule : StopCriterion, default alpha = 0.9
    halt_on_hit : bool, default True
        Stop as soon as the criterion holds; False keeps iterating to the
        budget (full convergence curves).
    """

    objective: Objective
    perturbation: PerturbationModel
    schedule: UpdateSchedule = field(default_factory=UpdateSchedule.synchronous)
    initial_state: Union[PhaseState, str] = "uniform"
    max_iterations: Optional[int] = None
    stop_rule: StopCriterion = field(default_factory=StopCriterion)
    halt_on_hit: bool = True

    def __post_init__(self):
        n = self.objective.dimension
        if not self.perturbation.accepts(n):
            raise UsageError(f"perturbation has dimension {self.perturbation.dimension}, objective has {n}")
        if isinstance(self.initial_state, PhaseState):
            if self.initial_state.n != n:
                raise UsageError(f"initial state has dimension {self.initial_state.n}, objective has {n}")
        elif self.initial_state not in ("uniform", "zeros"):
            raise UsageError(f"unknown initializer {self.initial_state!r}")
        if self.max_iterations is not None and int(self.max_iterations) < 1:
            raise UsageError(f"max_iterations must be >= 1, got {self.max_iterations}")
        if self.stop_rule.needs_global_max and self.objective.global_max_value is None:
            raise UsageError("this stop criterion needs an objective with a known global maximum")

    @property
    def dimension(self) -> int:
        return self.objective.dimension

    @property
    def budget(self) -> int:
        if self.max_iterations is not None:
            return int(self.max_iterations)
        return int(math.ceil(200 * self.dimension / self.schedule.update_probability))

    @property
    def threshold_value(self) -> Optional[float]:
        return self.objective.global_max_value

    def with_(self, **changes) -> "SearchConfig":
        return replace(self, **changes)

    def describe(self) -> dict:
        init = self.initial_state
        if isinstance(init, PhaseState):
            init = "state:" + hashlib.sha256(init.theta.astype("<f8").tobytes()).hexdigest()[:16]
        return {
            "objective": self.objective.describe(),
            "perturbation": self.perturbation.describe(),
            "schedule": self.schedule.describe(),
            "initial_state": init,
            "budget": self.budget,
            "stop_rule": self.stop_rule.describe(),
            "halt_on_hit": self.halt_on_hit,
        }

    def fingerprint(self) -> str:
        blob = json.dumps(self.describe(), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:12]


@dataclass(frozen=True, eq=False)
class Trace:
    """
    Record of one run: f(theta[n]) for n = 0..T and whether slot n was kept.

    ``accepted[0]`` is always False (no perturbation precedes the initial point).
    """

    values: np.ndarray
    accepted: np.ndarray
    final_state: PhaseState
    hit_index: Optional[int]
    stop_rule: StopCriterion
    global_max: Optional[float]
    seed: Optional[int] = None

    def __len__(self):
        return self.values.size

    @property
    def final_value(self) -> float:
        return float(self.values[-1])

    @property
    def converged(self) -> bool:
        return self.hit_index is not None

    def to_csv(self, fh=None, fingerprint: str = "", seed=None) -> Optional[str]:
        """
        Write ``iter,f_value,accepted`` rows after one ``#`` comment line.

        Values use ``repr`` so the file round-trips bit for bit. Returns the
        text when ``fh`` is None.
        """
        seed = self.seed if seed is None else seed
        out = io.StringIO() if fh is None else fh
        out.write(f"# fingerprint={fingerprint} seed={seed}\n")
        out.write("iter,f_value,accepted\n")
        for i, (v, a) in enumerate(zip(self.values.tolist(), self.accepted.tolist())):
            out.write(f"{i},{v!r},{int(a)}\n")
        if fh is None:
            return out.getvalue()
        return None

    @classmethod
    def read_csv_values(cls, text: str) -> tuple[np.ndarray, np.ndarray]:
        """Parse the rows written by ``to_csv`` back into (values, accepted)."""
        rows = [ln for ln in text.splitlines() if ln and not ln.startswith("#")][1:]
        vals = np.array([float(r.split(",")[1]) for r in rows])
        acc = np.array([r.split(",")[2] == "1" for r in rows])
        return vals, acc


def step(theta, perturbation, objective: Objective, current_value: Optional[float] = None):
    """
    One keep-if-strictly-better update.

    Parameters
    ----------
    theta : PhaseState or array_like
    perturbation : array_like
        Already transformed and masked.
    objective : Objective
    current_value : float, optional
        Cached f(theta); evaluated here if missing.

    Returns
    -------
    (PhaseState, bool)
        The new point and whether the candidate was kept.
    """
    state = theta if isinstance(theta, PhaseState) else PhaseState(theta)
    d = np.asarray(perturbation, dtype=float)
    if d.shape != state.theta.shape:
        raise UsageError(f"perturbation shape {d.shape} does not match state {state.theta.shape}")
    if current_value is None:
        current_value = objective.evaluate(state.theta)
    candidate = state.theta + d
    value = objective.evaluate(candidate)
    if not math.isfinite(value):
        raise SearchError(f"objective returned {value} at a candidate point")
    if value > current_value:
        return PhaseState(candidate), True
    return state, False


def in_epsilon_region(theta, objective: Objective, epsilon: float) -> bool:
    """Whether f(theta) > f_max - epsilon."""
    if objective.global_max_value is None:
        raise UsageError("objective has no known global maximum")
    if not (epsilon > 0):
        raise UsageError(f"epsilon must be positive, got {epsilon}")
    return bool(objective.evaluate(theta) > objective.global_max_value - epsilon)


def first_hit(values, stop_rule: StopCriterion, global_max) -> Optional[int]:
    """Index of the first value meeting ``stop_rule``, or None."""
    hits = np.flatnonzero(stop_rule.satisfied(values, global_max))
    return int(hits[0]) if hits.size else None


def hitting_time(trace, stop_rule: Optional[StopCriterion] = None, global_max=None) -> Optional[int]:
    """
    First iteration at which the stop criterion holds.

    Accepts a Trace (using its own criterion and optimum) or a raw sequence
    of values together with ``stop_rule`` and ``global_max``.
    """
    if isinstance(trace, Trace):
        stop_rule = trace.stop_rule if stop_rule is None else stop_rule
        global_max = trace.global_max if global_max is None else global_max
        values = trace.values
    else:
        values = trace
    if stop_rule is None or (stop_rule.needs_global_max and global_max is None):
        raise UsageError("need a threshold stop rule and a global maximum")
    return first_hit(values, stop_rule, global_max)


def _streams(rng):
    """Independent generators for the initial point, perturbations and masks."""
    if isinstance(rng, np.random.Generator):
        children = rng.spawn(3)
    else:
        ss = rng if isinstance(rng, np.random.SeedSequence) else np.random.SeedSequence(rng)
        children = [np.random.Generator(np.random.PCG64(s)) for s in ss.spawn(3)]
    return children


def run(config: SearchConfig, rng=None) -> Trace:
    """
    Run the search from ``config``.

    ``rng`` may be an int seed, a SeedSequence or a Generator. The initial
    point, the perturbations and the update masks come from three separate
    child streams, so schedules sharing a seed see the same perturbations.
    """
    init_rng, pert_rng, mask_rng = _streams(rng)
    seed = int(rng) if isinstance(rng, (int, np.integer)) else None
    return run_streams(config, init_rng, pert_rng, mask_rng, seed=seed)


def run_streams(config: SearchConfig, init_rng, pert_rng, mask_rng, seed=None) -> Trace:
    obj = config.objective
    n = obj.dimension
    model = config.perturbation
    schedule = config.schedule
    stop = config.stop_rule
    gmax = obj.global_max_value
    budget = config.budget

    if isinstance(config.initial_state, PhaseState):
        theta = config.initial_state.theta.copy()
    elif config.initial_state == "zeros":
        theta = np.zeros(n)
    else:
        theta = init_rng.uniform(-math.pi, math.pi, size=n)

    f = obj._value(theta)
    if not math.isfinite(f):
        raise SearchError(f"objective returned {f} at the initial point")
    values = np.empty(budget + 1)
    accepted = np.zeros(budget + 1, dtype=bool)
    values[0] = f

    if stop.kind == "alpha":
        target, strict = stop.alpha * gmax, False
    elif stop.kind == "epsilon":
        target, strict = gmax - stop.epsilon, True
    else:
        target, strict = math.inf, False

    def met(v):
        return v > target if strict else v >= target

    hit = 0 if met(f) else None
    last = 0
    synchronous = schedule.kind == "synchronous"
    per_slot = model.time_varying
    evaluate = obj._value

    if not (hit is not None and config.halt_on_hit):
        deltas = masks = None
        k = BLOCK
        for it in range(1, budget + 1):
            if per_slot:
                d = model.draw(pert_rng, n, n_iter=it)
                if not synchronous:
                    d = d * schedule.draw(mask_rng, n)
            else:
                if k == BLOCK:
                    deltas = model.draw(pert_rng, n, size=BLOCK, n_iter=it)
                    if not synchronous:
                        masks = schedule.draw(mask_rng, n, size=BLOCK)
                        deltas *= masks
                    k = 0
                d = deltas[k]
                k += 1
            candidate = theta + d
            fc = evaluate(candidate)
            if not math.isfinite(fc):
                raise SearchError(f"objective returned {fc} at iteration {it}")
            if fc > f:
                theta, f = candidate, fc
                accepted[it] = True
            values[it] = f
            last = it
            if hit is None and met(f):
                hit = it
                if config.halt_on_hit:
                    break

    values = values[: last + 1].copy()
    accepted = accepted[: last + 1].copy()
    values.setflags(write=False)
    accepted.setflags(write=False)
    return Trace(values, accepted, PhaseState(theta), hit, stop, gmax, seed)
