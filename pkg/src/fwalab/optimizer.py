"""SGD training loop with checkpoint-window averaging.

The loop is deliberately plain: w_t = w_{t-1} - alpha_t * mean-batch-gradient,
optionally rescaled onto an l2 ball. Sampling uses its own RNG stream derived
from the run seed, independent of the data values, so two runs on same-size
datasets draw identical index sequences -- the coupling the twin-dataset
stability protocol relies on.

Averaging comes in two forms that must agree (and are tested against each
other): the direct mean over the checkpoint mask, and an O(k)-memory
incremental recursion that subtracts the window of recent step updates from
the previous average (:class:`IncrementalTailAverager`).
"""

from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import dataclass
from typing import Iterator, NamedTuple

import numpy as np

from .data import Dataset
from .errors import ConfigError, NumericError
from .models import LossModel
from .schedules import AveragingScheme, LearningRateSchedule, checkpoint_mask

DEFAULT_HISTORY_BUDGET = 200_000  # scalars; full trajectories kept only below this

SAMPLING_KINDS = ("with_replacement", "permutation")


@dataclass(frozen=True)
class RunConfig:
    seed: int
    epochs: int = 1
    batch_size: int = 1
    T: int | None = None  # explicit step count; otherwise epochs * ceil(n/batch)
    sampling: str = "with_replacement"
    projection_radius: float | None = None
    history_budget: int = DEFAULT_HISTORY_BUDGET

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.T is None and self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.T is not None and self.T < 1:
            raise ValueError(f"T must be >= 1, got {self.T}")
        if self.sampling not in SAMPLING_KINDS:
            raise ValueError(f"sampling must be one of {SAMPLING_KINDS}, got {self.sampling!r}")
        if self.projection_radius is not None and self.projection_radius <= 0:
            raise ValueError("projection_radius must be > 0 when set")

    def steps_per_epoch(self, n: int) -> int:
        return -(-n // self.batch_size)

    def total_steps(self, n: int) -> int:
        if self.T is not None:
            return self.T
        return self.epochs * self.steps_per_epoch(n)


def project_to_ball(w: np.ndarray, radius: float) -> np.ndarray:
    """Rescale onto the l2 ball of the given radius when outside it."""
    nrm = float(np.linalg.norm(w))
    if nrm <= radius:
        return w
    return w * (radius / nrm)


def sgd_step(model: LossModel, w, X_batch, y_batch, alpha: float,
             projection_radius: float | None = None) -> np.ndarray:
    """One update w - alpha * grad_batch, optionally projected."""
    if alpha <= 0:
        raise ValueError(f"alpha must be > 0, got {alpha}")
    g = model.grad_batch(w, X_batch, y_batch)
    if not np.all(np.isfinite(g)):
        raise NumericError("non-finite gradient in sgd_step")
    w_new = np.asarray(w, dtype=np.float64) - alpha * g
    if projection_radius is not None:
        w_new = project_to_ball(w_new, projection_radius)
    return w_new


class StepRecord(NamedTuple):
    t: int                    # 1-based step index
    w: np.ndarray             # iterate after the step (post-projection)
    alpha: float
    batch_indices: np.ndarray
    batch_loss: float         # loss at the pre-step iterate on this batch
    grad_norm: float
    update_term: np.ndarray   # alpha * gradient (pre-projection)


class SgdRun:
    """A single seeded training run, exposed as a stream of step records."""

    def __init__(self, model: LossModel, dataset: Dataset, lr: LearningRateSchedule,
                 cfg: RunConfig, w0: np.ndarray | None = None):
        if dataset.n < 1:
            raise ValueError("dataset must be nonempty")
        if dataset.feature_dim != model.input_dim:
            raise ValueError(
                f"dataset feature_dim {dataset.feature_dim} != model input_dim {model.input_dim}"
            )
        self.model = model
        self.dataset = dataset
        self.lr = lr
        self.cfg = cfg
        self.T = cfg.total_steps(dataset.n)
        self.steps_per_epoch = cfg.steps_per_epoch(dataset.n)
        init_seq, sample_seq = np.random.SeedSequence(cfg.seed).spawn(2)
        self._sample_rng = np.random.default_rng(sample_seq)
        if w0 is None:
            self.w0 = model.init_params(np.random.default_rng(init_seq))
        else:
            self.w0 = np.asarray(w0, dtype=np.float64).copy()
            if self.w0.shape != (model.param_dim,):
                raise ValueError(
                    f"w0 has shape {self.w0.shape}, model expects ({model.param_dim},)"
                )

    def _batch_indices(self, t: int) -> np.ndarray:
        n = self.dataset.n
        b = self.cfg.batch_size
        if self.cfg.sampling == "with_replacement":
            return self._sample_rng.integers(0, n, size=min(b, n))
        pos = (t - 1) % self.steps_per_epoch
        if pos == 0:
            self._perm = self._sample_rng.permutation(n)
        return self._perm[pos * b : pos * b + b]

    def steps(self) -> Iterator[StepRecord]:
        w = self.w0
        X, y = self.dataset.X, self.dataset.y
        radius = self.cfg.projection_radius
        for t in range(1, self.T + 1):
            idx = self._batch_indices(t)
            Xb, yb = X[idx], y[idx]
            alpha = self.lr.rate(t)
            loss = self.model.loss_batch(w, Xb, yb)
            g = self.model.grad_batch(w, Xb, yb)
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient at step {t}")
            update = alpha * g
            w = w - update
            if radius is not None:
                w = project_to_ball(w, radius)
            yield StepRecord(t, w, alpha, idx, loss, float(np.linalg.norm(g)), update)


class OnlineAverage:
    """Running checkpoint average for one scheme, queryable at any step.

    Semantics are anchored at the current step: FWA averages the last
    min(k, t) iterates, LAWA averages iterates t, t-d, ... (as many of the k
    as exist yet), SWA averages everything so far, SGD is the iterate itself.
    Before the window fills, the average is over whatever checkpoints exist,
    so early-training queries are always defined.
    """

    def __init__(self, scheme: AveragingScheme):
        self.scheme = scheme
        self.t = 0
        kind = scheme.kind
        if kind == "sgd":
            self._last = None
        elif kind == "swa":
            self._sum = None
        else:
            self._buf: deque = deque(maxlen=scheme.window_size(10**18))
            if kind == "fwa" and scheme.rho is None:
                self._wsum = None

    def push(self, w: np.ndarray) -> None:
        self.t += 1
        kind = self.scheme.kind
        if kind == "sgd":
            self._last = w
        elif kind == "swa":
            self._sum = w.copy() if self._sum is None else self._sum + w
        else:
            if kind == "fwa" and self.scheme.rho is None:
                if self._wsum is None:
                    self._wsum = w.copy()
                else:
                    if len(self._buf) == self._buf.maxlen:
                        self._wsum = self._wsum - self._buf[0]
                    self._wsum = self._wsum + w
            self._buf.append(w)

    @property
    def value(self) -> np.ndarray:
        if self.t == 0:
            raise ValueError("no iterates pushed yet")
        kind = self.scheme.kind
        if kind == "sgd":
            return self._last
        if kind == "swa":
            return self._sum / self.t
        if kind == "fwa":
            if self.scheme.rho is None:
                return self._wsum / len(self._buf)
            rho = self.scheme.rho[-len(self._buf):]
            acc = sum(r * w for r, w in zip(rho, self._buf))
            return acc / len(self._buf)
        # lawa: gather strided positions from the iterate buffer
        d = self.scheme.d
        count = min(self.scheme.k, (len(self._buf) - 1) // d + 1)
        picks = [self._buf[-1 - j * d] for j in range(count)]
        return np.mean(picks, axis=0)


class IncrementalTailAverager:
    """O(k)-memory running mean of the last k iterates.

    Feeds on (iterate, step-update) pairs. During warmup (first k steps) it
    accumulates the weighted iterate sum directly; afterwards it maintains
    the average by subtracting 1/k times the weighted sum of the k most
    recent update terms (alpha_i * grad_i), which equals sliding the direct
    window mean forward by one step.
    """

    def __init__(self, k: int, rho: tuple[float, ...] | None = None):
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        self.k = k
        self.rho = tuple(float(r) for r in rho) if rho is not None else (1.0,) * k
        if len(self.rho) != k:
            raise ValueError(f"rho has length {len(self.rho)}, expected {k}")
        self.steps_seen = 0
        self._updates: deque = deque(maxlen=k)
        self._avg: np.ndarray | None = None
        self._warm_sum: np.ndarray | None = None

    @property
    def warmed_up(self) -> bool:
        return self.steps_seen >= self.k

    @property
    def average(self) -> np.ndarray:
        if not self.warmed_up:
            raise ValueError(
                f"average undefined before warmup ({self.steps_seen}/{self.k} iterates seen)"
            )
        return self._avg

    def push(self, w: np.ndarray, update_term: np.ndarray) -> None:
        """Feed the iterate produced by one step and that step's alpha*grad."""
        if self.warmed_up:
            self.apply_update(update_term)
            return
        self.steps_seen += 1
        self._updates.append(np.asarray(update_term, dtype=np.float64))
        contrib = self.rho[self.steps_seen - 1] * np.asarray(w, dtype=np.float64)
        self._warm_sum = contrib if self._warm_sum is None else self._warm_sum + contrib
        if self.steps_seen == self.k:
            self._avg = self._warm_sum / self.k
            self._warm_sum = None

    def apply_update(self, update_term: np.ndarray) -> None:
        """Advance the warmed-up average by one step using only alpha*grad."""
        if not self.warmed_up:
            raise ValueError("incremental update invoked before warmup")
        self.steps_seen += 1
        self._updates.append(np.asarray(update_term, dtype=np.float64))
        delta = self.rho[0] * self._updates[0]
        for j in range(1, self.k):
            delta = delta + self.rho[j] * self._updates[j]
        self._avg = self._avg - delta / self.k


@dataclass
class Trajectory:
    """Recorded run: a trailing window (or all) of iterates plus scalar logs."""

    iterates: np.ndarray        # (m, param_dim); last row is w_T
    first_step: int             # step index of iterates[0] (0 means w_0 kept)
    step_count: int             # T
    losses: np.ndarray          # (T,) batch loss at the pre-step iterate
    lrs: np.ndarray             # (T,)
    grad_norms: np.ndarray      # (T,)
    full_history: bool
    update_terms: np.ndarray | None = None  # (T, param_dim) when recorded

    @property
    def retained_window(self) -> int:
        return self.iterates.shape[0]

    @property
    def final(self) -> np.ndarray:
        return self.iterates[-1]

    def iterate_at(self, step: int) -> np.ndarray:
        if not self.first_step <= step <= self.step_count:
            raise ValueError(
                f"step {step} outside retained window [{self.first_step}, {self.step_count}]"
            )
        return self.iterates[step - self.first_step]


class TrainResult(NamedTuple):
    trajectory: Trajectory
    final_average: np.ndarray


def train(model: LossModel, dataset: Dataset, lr: LearningRateSchedule, cfg: RunConfig,
          scheme: AveragingScheme, record_update_terms: bool = False) -> TrainResult:
    """Run T seeded SGD steps and average the scheme's checkpoint mask.

    Full trajectories are kept only while (T+1) * param_dim stays under
    cfg.history_budget; otherwise just the trailing window the scheme needs.
    SWA under a capped history falls back to a running mean (same value up to
    rounding). Deterministic bit-for-bit given (seed, config, data).
    """
    run = SgdRun(model, dataset, lr, cfg)
    T = run.T
    mask = checkpoint_mask(scheme, T)  # validates T against the scheme window

    keep_all = (T + 1) * model.param_dim <= cfg.history_budget
    window = T + 1 if keep_all else max(scheme.window_size(T), 1)
    buf: deque = deque(maxlen=window)
    buf.append(run.w0)
    losses = np.empty(T)
    lrs = np.empty(T)
    grad_norms = np.empty(T)
    updates = np.empty((T, model.param_dim)) if record_update_terms else None
    swa_sum = np.zeros(model.param_dim) if scheme.kind == "swa" and not keep_all else None

    for rec in run.steps():
        buf.append(rec.w)
        losses[rec.t - 1] = rec.batch_loss
        lrs[rec.t - 1] = rec.alpha
        grad_norms[rec.t - 1] = rec.grad_norm
        if updates is not None:
            updates[rec.t - 1] = rec.update_term
        if swa_sum is not None:
            swa_sum += rec.w

    iterates = np.stack(buf)
    first_step = T + 1 - len(buf)
    traj = Trajectory(iterates, first_step, T, losses, lrs, grad_norms,
                      full_history=keep_all, update_terms=updates)

    if swa_sum is not None:
        final_avg = swa_sum / T
    else:
        acc = np.zeros(model.param_dim)
        for step, weight in mask:
            acc += weight * traj.iterate_at(step)
        final_avg = acc / len(mask)
    return TrainResult(traj, final_avg)


def export_trajectory(traj: Trajectory, path, snapshots_path=None) -> None:
    """Write the scalar log CSV (step, train_loss, lr, grad_norm).

    With ``snapshots_path``, also writes one row per retained iterate:
    step followed by the comma-separated weights.
    """
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["step", "train_loss", "lr", "grad_norm"])
        for t in range(1, traj.step_count + 1):
            writer.writerow([t, repr(float(traj.losses[t - 1])),
                             repr(float(traj.lrs[t - 1])),
                             repr(float(traj.grad_norms[t - 1]))])
    if snapshots_path is not None:
        with open(snapshots_path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["step"] + [f"w{j}" for j in range(traj.iterates.shape[1])])
            for i in range(traj.retained_window):
                writer.writerow([traj.first_step + i]
                                + [repr(float(v)) for v in traj.iterates[i]])
