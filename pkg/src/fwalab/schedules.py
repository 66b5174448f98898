"""Learning-rate schedules and checkpoint-averaging schemes.

Schedules map a 1-based step index t to a positive step size. Averaging
schemes describe which iterates the final (or running) model average uses:

* ``sgd``  -- the last iterate only (window of 1),
* ``fwa``  -- the plain mean of the last k iterates (tail averaging),
* ``lawa`` -- the mean of k checkpoints taken every d steps, anchored at the
  evaluation step (steps T, T-d, ..., T-(k-1)d),
* ``swa``  -- the mean of every iterate produced so far (window = T).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import ConfigError


class LearningRateSchedule:
    def rate(self, t: int) -> float:
        raise NotImplementedError

    def _check_t(self, t: int) -> int:
        t = int(t)
        if t < 1:
            raise ValueError(f"step index must be >= 1, got {t}")
        return t


@dataclass(frozen=True)
class Constant(LearningRateSchedule):
    alpha: float

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError(f"alpha must be > 0, got {self.alpha}")

    def rate(self, t: int) -> float:
        self._check_t(t)
        return self.alpha


@dataclass(frozen=True)
class InverseT(LearningRateSchedule):
    """alpha_t = c / t."""

    c: float

    def __post_init__(self):
        if self.c <= 0:
            raise ValueError(f"c must be > 0, got {self.c}")

    def rate(self, t: int) -> float:
        return self.c / self._check_t(t)


@dataclass(frozen=True)
class InverseSqrtT(LearningRateSchedule):
    """alpha_t = c / sqrt(t)."""

    c: float

    def __post_init__(self):
        if self.c <= 0:
            raise ValueError(f"c must be > 0, got {self.c}")

    def rate(self, t: int) -> float:
        return self.c / math.sqrt(self._check_t(t))


@dataclass(frozen=True)
class StepDecay(LearningRateSchedule):
    """Piecewise decay over ``num_steps`` equal fractions of a run.

    Stage j (0-based) uses ``start / sqrt(j + 1)``, so e.g. start=0.4 over 4
    stages gives 0.4, 0.283, 0.231, 0.2. ``end`` names the target rate and
    must equal ``start / sqrt(num_steps)``; ``total_steps`` is the run length
    the stages are spread over.
    """

    start: float
    end: float
    num_steps: int
    total_steps: int

    def __post_init__(self):
        if self.start <= 0 or self.end <= 0:
            raise ValueError("start and end rates must be > 0")
        if self.num_steps < 1:
            raise ValueError(f"num_steps must be >= 1, got {self.num_steps}")
        if self.total_steps < self.num_steps:
            raise ConfigError(
                f"total_steps={self.total_steps} cannot hold {self.num_steps} decay stages"
            )
        implied = self.start / math.sqrt(self.num_steps)
        if not math.isclose(self.end, implied, rel_tol=1e-6):
            raise ConfigError(
                f"end={self.end} inconsistent with start/sqrt(num_steps)={implied:.6g}; "
                "the staged rule is alpha = start/sqrt(stage+1)"
            )

    def stage(self, t: int) -> int:
        t = self._check_t(t)
        if t > self.total_steps:
            t = self.total_steps
        return min((t - 1) * self.num_steps // self.total_steps, self.num_steps - 1)

    def rate(self, t: int) -> float:
        return self.start / math.sqrt(self.stage(t) + 1)


def rate_at(schedule: LearningRateSchedule, t: int) -> float:
    """Step size at 1-based step t."""
    return schedule.rate(t)


def make_schedule(spec: dict, total_steps: int | None = None) -> LearningRateSchedule:
    """Build a schedule from config keys (lr.kind plus its parameters)."""
    kind = spec.get("kind")
    if kind == "constant":
        return Constant(float(spec["alpha"]))
    if kind == "inverse_t":
        return InverseT(float(spec["c"]))
    if kind == "inverse_sqrt":
        return InverseSqrtT(float(spec["c"]))
    if kind == "step_decay":
        if total_steps is None:
            raise ConfigError("step_decay schedule needs the run length (total steps)")
        return StepDecay(
            float(spec["start"]), float(spec["end"]), int(spec["steps"]), int(total_steps)
        )
    raise ConfigError(f"unknown lr.kind {kind!r}")


@dataclass(frozen=True)
class AveragingScheme:
    """Which checkpoints get averaged, and with which weights.

    ``rho`` is an optional per-position weight sequence of length k (oldest
    position first); when omitted all kept checkpoints weigh 1, which is the
    only form the CLI exposes. The average is always sum(rho_i * w_i) / k.
    """

    kind: str  # "sgd" | "fwa" | "lawa" | "swa"
    k: int = 1
    d: int = 1
    rho: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind not in ("sgd", "fwa", "lawa", "swa"):
            raise ValueError(f"unknown averaging kind {self.kind!r}")
        if self.k < 1 or self.d < 1:
            raise ValueError("k and d must be >= 1")
        if self.kind == "sgd" and (self.k != 1 or self.d != 1):
            raise ValueError("sgd scheme is fixed at k=1, d=1")
        if self.kind in ("fwa", "swa") and self.d != 1:
            raise ValueError(f"{self.kind} has no checkpoint interval; d must be 1")
        if self.rho is not None:
            rho = tuple(float(r) for r in self.rho)
            if len(rho) != self.k:
                raise ValueError(f"rho has length {len(rho)}, expected k={self.k}")
            if any(r < 0 for r in rho) or not any(r > 0 for r in rho):
                raise ValueError("rho must be nonnegative with at least one positive entry")
            object.__setattr__(self, "rho", rho)

    @classmethod
    def sgd(cls):
        return cls("sgd", k=1, d=1)

    @classmethod
    def fwa(cls, k: int):
        return cls("fwa", k=k, d=1)

    @classmethod
    def lawa(cls, k: int, d: int):
        return cls("lawa", k=k, d=d)

    @classmethod
    def swa(cls):
        return cls("swa", k=1, d=1)

    def window_size(self, T: int) -> int:
        """Number of trailing iterates needed to evaluate the average at T."""
        if self.kind == "swa":
            return T
        if self.kind == "lawa":
            return (self.k - 1) * self.d + 1
        return self.k

    def min_steps(self) -> int:
        if self.kind == "lawa":
            return self.k * self.d
        return self.k

    def label(self) -> str:
        if self.kind == "fwa":
            return f"fwa_k{self.k}"
        if self.kind == "lawa":
            return f"lawa_k{self.k}_d{self.d}"
        return self.kind


def checkpoint_mask(scheme: AveragingScheme, T: int) -> list[tuple[int, float]]:
    """The (step, weight) pairs the final average at step T combines.

    SGD keeps only step T; FWA keeps T-k+1..T; LAWA keeps T-(k-1)d..T in
    strides of d; SWA keeps 1..T. Weights default to 1 everywhere.
    """
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    need = scheme.min_steps() if scheme.kind != "swa" else 1
    if T < need:
        raise ConfigError(
            f"scheme {scheme.label()} needs at least T={need} steps, got T={T}"
        )
    if scheme.kind == "swa":
        steps = range(1, T + 1)
        weights = [1.0] * T
    else:
        steps = range(T - (scheme.k - 1) * scheme.d, T + 1, scheme.d)
        weights = list(scheme.rho) if scheme.rho is not None else [1.0] * scheme.k
    return list(zip(steps, weights))


def make_scheme(spec: dict) -> AveragingScheme:
    """Build a scheme from config keys (avg.kind, avg.k, avg.d)."""
    kind = spec.get("kind")
    if kind == "sgd":
        return AveragingScheme.sgd()
    if kind == "swa":
        return AveragingScheme.swa()
    if kind == "fwa":
        return AveragingScheme.fwa(int(spec["k"]))
    if kind == "lawa":
        return AveragingScheme.lawa(int(spec["k"]), int(spec.get("d", 1)))
    raise ConfigError(f"unknown avg.kind {kind!r}")
