"""Twin-dataset stability protocol and expansivity probes.

The protocol: build two datasets differing in one sample, train on both with
the same seed (same initialization, same index stream), and track how far the
two models drift apart. Distance uses the normalized metric
sqrt(||w - w'||^2 / (||w||^2 + ||w'||^2)); generalization error is the
absolute train/test error gap of the first run's model. Both are recorded
per epoch for each averaging scheme, measured between the *averaged* models.

Expansivity probes check the two update-map properties numerically: a convex
smooth loss with step alpha <= 2/beta gives a non-expansive map (ratio <= 1),
and any smooth loss gives at most a (1 + alpha*beta)-expansive one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .bounds import sample_ball
from .data import Dataset, TwinPair, make_twin
from .errors import NumericError
from .models import LogisticRegression, LossModel
from .optimizer import OnlineAverage, RunConfig, SgdRun
from .schedules import AveragingScheme, LearningRateSchedule


def parameter_distance(w: np.ndarray, w_prime: np.ndarray) -> float:
    """sqrt(||w - w'||^2 / (||w||^2 + ||w'||^2)); 0 when both are zero."""
    w = np.asarray(w, dtype=np.float64)
    w_prime = np.asarray(w_prime, dtype=np.float64)
    if w.shape != w_prime.shape:
        raise ValueError(f"shape mismatch: {w.shape} vs {w_prime.shape}")
    denom = float(w @ w + w_prime @ w_prime)
    if denom == 0.0:
        return 0.0
    return math.sqrt(float(np.sum((w - w_prime) ** 2)) / denom)


def error_measures(model: LossModel, w, train: Dataset, test: Dataset) -> tuple[float, float]:
    """(train error, test error): mean loss for regression, 0-1 for classification."""
    if train.n < 1 or test.n < 1:
        raise ValueError("train and test sets must be nonempty")
    if isinstance(model, LogisticRegression):
        tr = float(np.mean(model.predict(w, train.X) != train.y))
        te = float(np.mean(model.predict(w, test.X) != test.y))
        return tr, te
    return model.loss_batch(w, train.X, train.y), model.loss_batch(w, test.X, test.y)


def generalization_error(model: LossModel, w, train: Dataset, test: Dataset) -> float:
    """|train error - test error| for the given parameters."""
    tr, te = error_measures(model, w, train, test)
    return abs(tr - te)


@dataclass
class StabilityReport:
    """Per-epoch stability series for one averaging scheme and seed."""

    scheme: AveragingScheme
    seed: int
    parameter_distances: np.ndarray   # (epochs,)
    generalization_errors: np.ndarray
    train_errors: np.ndarray
    test_errors: np.ndarray

    def __post_init__(self):
        lengths = {len(self.parameter_distances), len(self.generalization_errors),
                   len(self.train_errors), len(self.test_errors)}
        if len(lengths) != 1:
            raise ValueError("all series must have the same (epoch) length")
        if np.any(self.parameter_distances < 0) or \
                np.any(self.parameter_distances > math.sqrt(2.0) + 1e-12):
            raise ValueError("parameter distances must lie in [0, sqrt(2)]")


@dataclass
class TwinRunResult:
    """Raw material of one coupled twin training run."""

    pair: TwinPair
    epoch_steps: np.ndarray                     # step index at each epoch end
    averages_s: dict                            # scheme label -> (epochs, p) array
    averages_sp: dict
    first_touch_step: int | None                # first step whose batch hits the edit
    touched: np.ndarray                         # (T,) bool per step
    iterates_s: np.ndarray | None = None        # (T+1, p) when collected
    iterates_sp: np.ndarray | None = None
    batch_history: list | None = None           # per-step index arrays when collected


def run_twin_pair(model: LossModel, pair: TwinPair, lr: LearningRateSchedule,
                  cfg: RunConfig, schemes: list[AveragingScheme],
                  collect_trajectories: bool = False) -> TwinRunResult:
    """Train on S and S' with a shared seed, tracking per-epoch scheme averages.

    Both runs draw the same index stream (the sampling RNG depends only on
    the seed and the dataset size), so iterates coincide exactly until the
    first step whose batch contains the differing index.
    """
    run_s = SgdRun(model, pair.s, lr, cfg)
    run_sp = SgdRun(model, pair.s_prime, lr, cfg)
    T, spe = run_s.T, run_s.steps_per_epoch
    epoch_steps = [t for t in range(spe, T + 1, spe)]
    if not epoch_steps or epoch_steps[-1] != T:
        epoch_steps.append(T)
    epoch_set = set(epoch_steps)
    epoch_steps = np.asarray(epoch_steps)

    avg_s = {s.label(): OnlineAverage(s) for s in schemes}
    avg_sp = {s.label(): OnlineAverage(s) for s in schemes}
    snaps_s: dict[str, list] = {lbl: [] for lbl in avg_s}
    snaps_sp: dict[str, list] = {lbl: [] for lbl in avg_sp}
    touched = np.zeros(T, dtype=bool)
    first_touch = None
    iters_s = [run_s.w0] if collect_trajectories else None
    iters_sp = [run_sp.w0] if collect_trajectories else None
    batches = [] if collect_trajectories else None

    j = pair.differing_index
    for rec_s, rec_sp in zip(run_s.steps(), run_sp.steps()):
        t = rec_s.t
        hit = bool(np.any(rec_s.batch_indices == j))
        touched[t - 1] = hit
        if hit and first_touch is None:
            first_touch = t
        for lbl in avg_s:
            avg_s[lbl].push(rec_s.w)
            avg_sp[lbl].push(rec_sp.w)
        if collect_trajectories:
            iters_s.append(rec_s.w)
            iters_sp.append(rec_sp.w)
            batches.append(rec_s.batch_indices)
        if t in epoch_set:
            for lbl in avg_s:
                snaps_s[lbl].append(avg_s[lbl].value)
                snaps_sp[lbl].append(avg_sp[lbl].value)

    return TwinRunResult(
        pair=pair,
        epoch_steps=epoch_steps,
        averages_s={lbl: np.stack(v) for lbl, v in snaps_s.items()},
        averages_sp={lbl: np.stack(v) for lbl, v in snaps_sp.items()},
        first_touch_step=first_touch,
        touched=touched,
        iterates_s=np.stack(iters_s) if collect_trajectories else None,
        iterates_sp=np.stack(iters_sp) if collect_trajectories else None,
        batch_history=batches,
    )


def run_stability_experiment(model: LossModel, base: Dataset, test: Dataset,
                             lr: LearningRateSchedule, cfg: RunConfig,
                             schemes: list[AveragingScheme]) -> list[StabilityReport]:
    """Full protocol: twin the base set, train coupled, report per scheme.

    Deterministic given cfg.seed, which drives both the twin construction and
    the training runs.
    """
    if not schemes:
        raise ValueError("need at least one averaging scheme")
    pair = make_twin(base, seed=cfg.seed)
    twin = run_twin_pair(model, pair, lr, cfg, schemes)
    reports = []
    for scheme in schemes:
        lbl = scheme.label()
        ws, wsp = twin.averages_s[lbl], twin.averages_sp[lbl]
        E = ws.shape[0]
        dist = np.empty(E)
        gen = np.empty(E)
        tr_err = np.empty(E)
        te_err = np.empty(E)
        for e in range(E):
            dist[e] = parameter_distance(ws[e], wsp[e])
            tr_err[e], te_err[e] = error_measures(model, ws[e], pair.s, test)
            gen[e] = abs(tr_err[e] - te_err[e])
        reports.append(StabilityReport(scheme, cfg.seed, dist, gen, tr_err, te_err))
    return reports


@dataclass(frozen=True)
class ExpansivityProbe:
    """Max expansion ratio of one full-batch gradient update over random pairs."""

    model: LossModel
    alpha: float
    beta_hat: float
    num_pairs: int
    max_ratio: float
    nonexpansive_applies: bool  # convex model with alpha <= 2/beta_hat


def probe_expansivity(model: LossModel, dataset: Dataset, alpha: float,
                      num_pairs: int, seed: int, beta_hat: float,
                      strict: bool = True) -> ExpansivityProbe:
    """Apply one gradient step to random pairs and measure the expansion ratio.

    Pairs are standard-normal points rescaled into the unit ball (the region
    beta_hat should be estimated on). For a convex model with
    alpha <= 2/beta_hat the map must be non-expansive (ratio <= 1 + 1e-8);
    any model must stay within 1 + alpha*beta_hat + 1e-8. With ``strict``
    a violation raises NumericError.
    """
    if num_pairs < 1:
        raise ValueError(f"num_pairs must be >= 1, got {num_pairs}")
    if alpha <= 0 or beta_hat <= 0:
        raise ValueError("alpha and beta_hat must be > 0")
    rng = np.random.default_rng(seed)
    pts = sample_ball(rng, model.param_dim, 2 * num_pairs, 1.0)
    max_ratio = 0.0
    for i in range(num_pairs):
        u, v = pts[2 * i], pts[2 * i + 1]
        dist = float(np.linalg.norm(u - v))
        if dist == 0.0:
            continue
        gu = model.grad_batch(u, dataset.X, dataset.y)
        gv = model.grad_batch(v, dataset.X, dataset.y)
        moved = float(np.linalg.norm((u - alpha * gu) - (v - alpha * gv)))
        max_ratio = max(max_ratio, moved / dist)

    nonexp = model.convex and alpha <= 2.0 / beta_hat + 1e-12
    limit = 1.0 + 1e-8 if nonexp else 1.0 + alpha * beta_hat + 1e-8
    if strict and max_ratio > limit:
        kind = "non-expansiveness" if nonexp else "(1 + alpha*beta)-expansiveness"
        raise NumericError(
            f"{kind} violated: max ratio {max_ratio:.12g} > {limit:.12g} "
            f"(alpha={alpha}, beta_hat={beta_hat})"
        )
    return ExpansivityProbe(model, alpha, beta_hat, num_pairs, max_ratio, nonexp)


def realized_step_smoothness(model: LossModel, dataset: Dataset,
                             iterates_a: np.ndarray, iterates_b: np.ndarray,
                             batch_history: list) -> float:
    """Max per-step batch-gradient difference ratio along a twin trajectory.

    This is the smoothness actually exercised by the coupled runs, so taking
    the max with a probe-based estimate gives a constant that is valid for
    the trajectory region by construction.
    """
    best = 0.0
    for t, idx in enumerate(batch_history, start=1):
        wa, wb = iterates_a[t - 1], iterates_b[t - 1]
        dist = float(np.linalg.norm(wa - wb))
        if dist == 0.0:
            continue
        ga = model.grad_batch(wa, dataset.X[idx], dataset.y[idx])
        gb = model.grad_batch(wb, dataset.X[idx], dataset.y[idx])
        best = max(best, float(np.linalg.norm(ga - gb)) / dist)
    return best


def averaged_window_expansion_check(iterates_a: np.ndarray, iterates_b: np.ndarray,
                                    touched: np.ndarray, k: int, c: float,
                                    beta_hat: float) -> tuple[int, float]:
    """Check the averaged-window expansion inequality along twin trajectories.

    For constant steps alpha = c/T the last-iterate gap must satisfy
    ||w_t - w'_t|| <= exp(c * beta * k / T) * mean of the last k gaps,
    provided every transition inside the window used the same sample in both
    runs (a window that contains the differing-sample step gets an extra
    bounded term the inequality does not cover, so those anchors are skipped).

    Returns (number of anchors checked, max violation amount); the inequality
    holds when the violation stays within numerical slack.
    """
    T = iterates_a.shape[0] - 1
    if not 1 <= k <= T:
        raise ValueError(f"k must satisfy 1 <= k <= T, got k={k}, T={T}")
    gaps = np.linalg.norm(iterates_a - iterates_b, axis=1)  # index t = step t
    factor = math.exp(c * beta_hat * k / T)
    checked = 0
    worst = -math.inf
    for tau in range(k, T + 1):
        # transitions tau-k+2 .. tau must be same-sample in both runs
        if k > 1 and np.any(touched[tau - k + 1 : tau]):
            continue
        window_mean = float(np.mean(gaps[tau - k + 1 : tau + 1]))
        worst = max(worst, gaps[tau] - factor * window_mean)
        checked += 1
    return checked, worst
