"""
Channels, objective functions, perturbation measures and update schedules.

Angles are radians throughout. Phase vectors are kept unwrapped; objectives
that care about periodicity reduce their inputs themselves.
"""

from __future__ import annotations

import abc
import hashlib
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "UsageError",
    "ChannelRealization",
    "PhaseState",
    "Objective",
    "SnrObjective",
    "ModPiQuadraticObjective",
    "TransformedObjective",
    "PerturbationModel",
    "UpdateSchedule",
    "evaluate_snr",
    "snr_global_max",
    "evaluate_mod_quadratic",
    "sample_channels",
    "sample_perturbation",
    "check_origin_interior",
    "sample_mask",
    "make_rng",
    "UNDECIDABLE",
]

HALF_PI = 0.5 * math.pi

# Returned by check_origin_interior when the support of G_n is not declared.
UNDECIDABLE = "undecidable"


class UsageError(ValueError):
    """Invalid arguments or inconsistent dimensions."""


def make_rng(seed=None) -> np.random.Generator:
    """PCG64 generator from an int, a SeedSequence or an existing Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.PCG64(seed))


def _as_vector(values, name: str) -> np.ndarray:
    arr = np.array(values, dtype=float, copy=True)
    if arr.ndim != 1:
        raise UsageError(f"{name} must be a 1-D vector, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


def _array_digest(arr: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(arr, dtype="<f8").tobytes()).hexdigest()[:16]


# Channel and search point
# ========================

@dataclass(frozen=True, eq=False)
class ChannelRealization:
    """
    Flat-fading gains h_i = a_i exp(j phi_i) from N transmitters to the receiver.

    Parameters
    ----------
    gains : array_like
        Nonnegative amplitudes a_i.
    phases : array_like
        Channel phases phi_i in radians.
    """

    gains: np.ndarray
    phases: np.ndarray

    def __post_init__(self):
        gains = _as_vector(self.gains, "gains")
        phases = _as_vector(self.phases, "phases")
        if gains.size < 1:
            raise UsageError("a channel needs at least one transmitter")
        if gains.shape != phases.shape:
            raise UsageError(f"gains and phases differ in length ({gains.size} != {phases.size})")
        if not np.all(np.isfinite(gains)) or np.any(gains < 0):
            raise UsageError("gains must be finite and nonnegative")
        if not np.all(np.isfinite(phases)):
            raise UsageError("phases must be finite")
        object.__setattr__(self, "gains", gains)
        object.__setattr__(self, "phases", phases)

    @property
    def n(self) -> int:
        return self.gains.size

    @property
    def coefficients(self) -> np.ndarray:
        return self.gains * np.exp(1j * self.phases)

    def __eq__(self, other):
        if not isinstance(other, ChannelRealization):
            return NotImplemented
        return np.array_equal(self.gains, other.gains) and np.array_equal(self.phases, other.phases)

    def __hash__(self):
        return hash((_array_digest(self.gains), _array_digest(self.phases)))


@dataclass(frozen=True, eq=False)
class PhaseState:
    """Total received phases theta_i = phi_i + psi_i, unwrapped."""

    theta: np.ndarray

    def __post_init__(self):
        theta = _as_vector(self.theta, "theta")
        if not np.all(np.isfinite(theta)):
            raise UsageError("theta must be finite")
        object.__setattr__(self, "theta", theta)

    @property
    def n(self) -> int:
        return self.theta.size

    def beamformer_phases(self, channel: ChannelRealization) -> np.ndarray:
        """Transmitter-side phases psi_i = theta_i - phi_i."""
        if channel.n != self.n:
            raise UsageError(f"dimension mismatch: state has {self.n}, channel has {channel.n}")
        return self.theta - channel.phases

    @classmethod
    def zeros(cls, n: int) -> "PhaseState":
        return cls(np.zeros(n))

    @classmethod
    def uniform(cls, n: int, rng) -> "PhaseState":
        """Uniform random phases on [-pi, pi)^n."""
        return cls(make_rng(rng).uniform(-math.pi, math.pi, size=n))

    def __eq__(self, other):
        if not isinstance(other, PhaseState):
            return NotImplemented
        return np.array_equal(self.theta, other.theta)

    def __hash__(self):
        return hash(_array_digest(self.theta))


def _theta_array(theta) -> np.ndarray:
    if isinstance(theta, PhaseState):
        return theta.theta
    return np.asarray(theta, dtype=float)


# Objectives
# ==========

class Objective(abc.ABC):
    """
    Deterministic function of the phase vector, to be maximized.

    Subclasses implement ``_value`` on a raw float array. ``global_max_value``
    is the optimum f(theta*) when it is known in closed form, else None.
    """

    dimension: int
    global_max_value: Optional[float] = None

    @abc.abstractmethod
    def _value(self, theta: np.ndarray) -> float:
        ...

    def evaluate(self, theta) -> float:
        theta = _theta_array(theta)
        if theta.shape != (self.dimension,):
            raise UsageError(f"expected a phase vector of length {self.dimension}, got shape {theta.shape}")
        return self._value(theta)

    __call__ = evaluate

    def evaluate_batch(self, thetas: np.ndarray) -> np.ndarray:
        """Values for each row of a (k, N) array."""
        thetas = np.asarray(thetas, dtype=float)
        return np.array([self._value(row) for row in thetas])

    def describe(self) -> dict:
        """JSON-able parameters used for config fingerprints."""
        return {"kind": type(self).__name__, "dimension": self.dimension}


class SnrObjective(Objective):
    """
    Receiver SNR  P_s |sum_i a_i exp(j theta_i)|^2 / sigma^2.

    Parameters
    ----------
    channel : ChannelRealization
    signal_power : float, default 1.0
        P_s, must be positive.
    noise_power : float, default 1.0
        sigma^2, must be positive.
    """

    def __init__(self, channel: ChannelRealization, signal_power: float = 1.0, noise_power: float = 1.0):
        if not (signal_power > 0 and math.isfinite(signal_power)):
            raise UsageError(f"signal_power must be positive, got {signal_power}")
        if not (noise_power > 0 and math.isfinite(noise_power)):
            raise UsageError(f"noise_power must be positive, got {noise_power}")
        self.channel = channel
        self.signal_power = float(signal_power)
        self.noise_power = float(noise_power)
        self.dimension = channel.n
        self._scale = self.signal_power / self.noise_power
        self.global_max_value = snr_global_max(self)

    def _value(self, theta):
        a = self.channel.gains
        re = a @ np.cos(theta)
        im = a @ np.sin(theta)
        return float(self._scale * (re * re + im * im))

    def evaluate_batch(self, thetas):
        thetas = np.asarray(thetas, dtype=float)
        re = np.cos(thetas) @ self.channel.gains
        im = np.sin(thetas) @ self.channel.gains
        return self._scale * (re * re + im * im)

    def describe(self):
        return {
            "kind": "snr",
            "dimension": self.dimension,
            "gains": _array_digest(self.channel.gains),
            "phases": _array_digest(self.channel.phases),
            "signal_power": self.signal_power,
            "noise_power": self.noise_power,
        }


class ModPiQuadraticObjective(Objective):
    """sum_i (pi/2)^2 - ((theta_i mod pi) - pi/2)^2, maximal where every theta_i = pi/2 mod pi."""

    def __init__(self, dimension: int):
        if int(dimension) < 1:
            raise UsageError(f"dimension must be >= 1, got {dimension}")
        self.dimension = int(dimension)
        # N (pi/2)^2, accumulated exactly as evaluate() would at theta_i = pi/2
        self.global_max_value = float(_mod_quadratic_terms(np.full(self.dimension, HALF_PI)).sum())

    def _value(self, theta):
        return float(_mod_quadratic_terms(theta).sum())

    def evaluate_batch(self, thetas):
        return _mod_quadratic_terms(np.asarray(thetas, dtype=float)).sum(axis=-1)

    def describe(self):
        return {"kind": "modpi", "dimension": self.dimension}


def _mod_quadratic_terms(theta):
    r = np.mod(theta, math.pi)
    # np.mod rounds tiny negatives up to exactly pi
    r = np.where(r >= math.pi, 0.0, r)
    return HALF_PI**2 - (r - HALF_PI) ** 2


class TransformedObjective(Objective):
    """h(f(theta)) for a strictly increasing h; keeps the maximizers of f."""

    def __init__(self, base: Objective, transform: Callable[[float], float], name: str = "transform"):
        self.base = base
        self.transform = transform
        self.name = name
        self.dimension = base.dimension
        gmax = base.global_max_value
        self.global_max_value = None if gmax is None else float(transform(gmax))

    def _value(self, theta):
        return float(self.transform(self.base._value(theta)))

    def evaluate_batch(self, thetas):
        return np.array([self.transform(v) for v in self.base.evaluate_batch(thetas)], dtype=float)

    def describe(self):
        return {"kind": "transformed", "name": self.name, "base": self.base.describe()}


def evaluate_snr(theta, obj: SnrObjective) -> float:
    """SNR at phase vector ``theta``; raises UsageError on bad dimension or non-finite input."""
    theta = _theta_array(theta)
    if not np.all(np.isfinite(theta)):
        raise UsageError("theta must be finite")
    return obj.evaluate(theta)


def snr_global_max(obj: SnrObjective) -> float:
    """P_s (sum a_i)^2 / sigma^2, reached when all received phases coincide."""
    a = obj.channel.gains
    # same dot-product accumulation as the evaluation at theta = 0
    total = a @ np.ones_like(a)
    return float(obj.signal_power / obj.noise_power * (total * total))


def evaluate_mod_quadratic(theta) -> float:
    theta = _theta_array(theta)
    if not np.all(np.isfinite(theta)):
        raise UsageError("theta must be finite")
    return float(_mod_quadratic_terms(theta).sum())


def sample_channels(n: int, rng) -> ChannelRealization:
    """
    Draw i.i.d. CN(0, 1) channel coefficients for ``n`` transmitters.

    Real and imaginary parts are independent N(0, 1/2); the result is stored
    as Rayleigh amplitudes with E[a^2] = 1 and phases in [-pi, pi).
    """
    if int(n) < 1:
        raise UsageError(f"need at least one transmitter, got n={n}")
    rng = make_rng(rng)
    h = rng.normal(0.0, math.sqrt(0.5), size=(int(n), 2))
    gains = np.hypot(h[:, 0], h[:, 1])
    phases = np.arctan2(h[:, 1], h[:, 0])
    # arctan2 returns pi for (negative, +0); fold into [-pi, pi)
    phases = np.where(phases >= math.pi, -math.pi, phases)
    return ChannelRealization(gains, phases)


# Perturbations
# =============

@dataclass(frozen=True, eq=False)
class PerturbationModel:
    """
    Uniform box measure plus an optional transformation of the samples.

    The measure is U[-delta0 + c, delta0 + c]^N with shift ``c`` (a scalar or a
    per-coordinate vector). The transformation ``transform(delta, n_iter)``
    defaults to the identity; custom transforms must declare their range as
    ``support`` = (lower, upper) for the origin check to be decidable.

    Parameters
    ----------
    delta0 : float
        Half-width of the box, radians.
    shift : float or array_like, default 0.0
        Center of the box, radians.
    transform : callable, optional
        G_n applied to each sample; receives the (k, N) or (N,) sample array
        and the iteration index.
    support : tuple of array_like, optional
        Declared per-coordinate bounds of the transformed range.
    time_varying : bool, default False
        Whether the transform depends on the iteration index.
    """

    delta0: float
    shift: object = 0.0
    transform: Optional[Callable[[np.ndarray, int], np.ndarray]] = None
    support: Optional[tuple] = None
    time_varying: bool = False
    name: str = "uniform"

    def __post_init__(self):
        if not (self.delta0 > 0 and math.isfinite(self.delta0)):
            raise UsageError(f"delta0 must be positive, got {self.delta0}")
        shift = np.array(self.shift, dtype=float)
        if shift.ndim > 1 or not np.all(np.isfinite(shift)):
            raise UsageError("shift must be a finite scalar or vector")
        shift.setflags(write=False)
        object.__setattr__(self, "delta0", float(self.delta0))
        object.__setattr__(self, "shift", shift)
        if self.support is not None:
            lo, hi = (np.asarray(b, dtype=float) for b in self.support)
            if np.any(lo > hi):
                raise UsageError("support lower bound exceeds upper bound")
            object.__setattr__(self, "support", (lo, hi))

    @classmethod
    def symmetric(cls, delta0: float) -> "PerturbationModel":
        return cls(delta0)

    @classmethod
    def shifted(cls, delta0: float, shift) -> "PerturbationModel":
        return cls(delta0, shift=shift, name="shifted")

    @classmethod
    def random_shift(cls, delta0: float, n: int, rng, spread: float = 0.5, common: bool = False) -> "PerturbationModel":
        """
        Shifted box with the shift drawn once from U(-spread*delta0, spread*delta0).

        By default every coordinate gets its own shift. With ``common`` one
        scalar shift is drawn and used for all coordinates.
        """
        rng = make_rng(rng)
        if common:
            c = rng.uniform(-spread * delta0, spread * delta0)
        else:
            c = rng.uniform(-spread * delta0, spread * delta0, size=int(n))
        return cls(delta0, shift=c, name="shifted")

    @property
    def dimension(self) -> Optional[int]:
        """Fixed dimension when the shift is a vector, else None (any N)."""
        return None if self.shift.ndim == 0 else self.shift.size

    def accepts(self, n: int) -> bool:
        return self.dimension is None or self.dimension == n

    def box(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        """Per-coordinate bounds of the untransformed measure."""
        c = np.broadcast_to(self.shift, (n,))
        return c - self.delta0, c + self.delta0

    def draw(self, rng: np.random.Generator, n: int, size: Optional[int] = None, n_iter: int = 0) -> np.ndarray:
        """Transformed samples; shape (n,) or (size, n)."""
        shape = (n,) if size is None else (size, n)
        delta = rng.uniform(-self.delta0, self.delta0, size=shape)
        if self.shift.ndim or self.shift != 0.0:
            delta += self.shift
        if self.transform is not None:
            delta = np.asarray(self.transform(delta, n_iter), dtype=float)
        return delta

    def range_bounds(self, n: int, n_iter: int = 0):
        """Bounds of the transformed range, or None when they are unknown."""
        if self.transform is None:
            return self.box(n)
        if self.support is not None:
            lo, hi = self.support
            return np.broadcast_to(lo, (n,)), np.broadcast_to(hi, (n,))
        return None

    def describe(self) -> dict:
        d = {"kind": self.name, "delta0": self.delta0}
        if self.shift.ndim:
            d["shift"] = _array_digest(self.shift)
        else:
            d["shift"] = float(self.shift)
        if self.transform is not None:
            d["transform"] = getattr(self.transform, "__qualname__", repr(self.transform))
        return d


def sample_perturbation(model: PerturbationModel, n_iter: int, rng, n: Optional[int] = None) -> np.ndarray:
    """One transformed perturbation G_n(delta) for iteration ``n_iter``."""
    n = model.dimension if n is None else n
    if n is None:
        raise UsageError("dimension required for a model with scalar shift")
    if not model.accepts(n):
        raise UsageError(f"model has dimension {model.dimension}, asked for {n}")
    return model.draw(make_rng(rng), n, n_iter=n_iter)


def check_origin_interior(model: PerturbationModel, n_iter: int = 0, n: Optional[int] = None):
    """
    True iff the transformed range contains a ball around zero.

    For a box this means lower_i < 0 < upper_i in every coordinate. Returns
    ``UNDECIDABLE`` when a custom transform declares no support.
    """
    n = model.dimension if n is None else n
    if n is None:
        n = 1  # scalar-shift boxes are the same in every coordinate
    bounds = model.range_bounds(n, n_iter)
    if bounds is None:
        return UNDECIDABLE
    lo, hi = bounds
    return bool(np.all(lo < 0) and np.all(hi > 0))


# Update schedules
# ================

@dataclass(frozen=True)
class UpdateSchedule:
    """
    Which transmitters perturb their phase in a slot.

    ``synchronous``: everyone, every slot. ``asynchronous``: each transmitter
    independently with probability ``update_probability``.
    """

    kind: str = "synchronous"
    update_probability: float = 1.0

    def __post_init__(self):
        if self.kind not in ("synchronous", "asynchronous"):
            raise UsageError(f"unknown schedule kind {self.kind!r}")
        p = float(self.update_probability)
        if not (0.0 < p <= 1.0):
            raise UsageError(f"update probability must lie in (0, 1], got {p}")
        if self.kind == "synchronous" and p != 1.0:
            raise UsageError("a synchronous schedule updates with probability 1")
        object.__setattr__(self, "update_probability", p)

    @classmethod
    def synchronous(cls) -> "UpdateSchedule":
        return cls()

    @classmethod
    def asynchronous(cls, p: float) -> "UpdateSchedule":
        return cls("asynchronous", p)

    @classmethod
    def from_rho(cls, rho: float) -> "UpdateSchedule":
        """Schedule for rho percent of transmitters updating; rho=100 is synchronous."""
        if not (0.0 < rho <= 100.0):
            raise UsageError(f"rho must lie in (0, 100], got {rho}")
        return cls.synchronous() if rho == 100 else cls.asynchronous(rho / 100.0)

    @property
    def rho(self) -> float:
        return 100.0 * self.update_probability

    def draw(self, rng: np.random.Generator, n: int, size: Optional[int] = None) -> np.ndarray:
        shape = (n,) if size is None else (size, n)
        if self.kind == "synchronous":
            return np.ones(shape)
        return (rng.random(shape) < self.update_probability).astype(float)

    def describe(self) -> dict:
        return {"kind": self.kind, "p": self.update_probability}


def sample_mask(schedule: UpdateSchedule, n: int, rng) -> np.ndarray:
    """0/1 vector of transmitters that perturb this slot."""
    if int(n) < 1:
        raise UsageError(f"n must be >= 1, got {n}")
    return schedule.draw(make_rng(rng), int(n))
