"""Problem-constant estimation and closed-form bound evaluation.

``ProblemConstants`` holds the four quantities every bound is written in:
a gradient-norm bound L, a smoothness constant beta, a stochastic-gradient
second-moment bound G, and a domain diameter D, together with the dataset
size n. Estimates are maxima over random probes (so they upper-bound the
probed region) except where a closed form exists: for linear-regression MSE
the per-sample smoothness is exactly 2 * max_i ||x~_i||^2.

Evaluators cover the uniform-stability bounds (general weighted, constant
step, and the two non-convex order forms) and the convergence bounds for the
last iterate, tail averages, interval (strided) averages, and general
weighted averages. Non-convex results carry explicit prefactors only where
the derivation supplies one; otherwise they are flagged order-only so
consumers compare exponents, not absolute values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .errors import ConfigError, DomainError
from .models import LinearRegressionMSE, LossModel, append_bias
from .schedules import LearningRateSchedule

_ALPHA_SLACK = 1e-12  # tolerance on the alpha <= 2/beta non-expansiveness condition


@dataclass(frozen=True)
class ProblemConstants:
    L: float      # max per-sample gradient norm
    beta: float   # smoothness constant
    G: float      # second-moment bound on stochastic gradients (max >= rms)
    D: float      # diameter of the feasible region
    n: int        # dataset size
    source: str = "empirical"  # "closed_form" when beta comes from a formula

    def __post_init__(self):
        for name in ("L", "beta", "G", "D"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ConfigError(f"constant {name} must be positive and finite, got {v}")
        if self.n < 1:
            raise ConfigError(f"n must be >= 1, got {self.n}")


@dataclass(frozen=True)
class BoundResult:
    name: str
    value: float
    params: dict = field(default_factory=dict)
    assumption_violated: bool = False  # step size exceeded 2/beta somewhere
    order_only: bool = False           # no explicit prefactor; exponent is the content


def sample_ball(rng: np.random.Generator, dim: int, count: int, radius: float) -> np.ndarray:
    """Standard-normal points rescaled onto the ball when their norm exceeds radius."""
    pts = rng.standard_normal((count, dim))
    norms = np.linalg.norm(pts, axis=1)
    scale = np.minimum(1.0, radius / np.maximum(norms, 1e-300))
    return pts * scale[:, None]


def closed_form_smoothness(model: LossModel, dataset: Dataset) -> float:
    """Exact per-sample smoothness 2 * max ||x~||^2 for linear-regression MSE."""
    if not isinstance(model, LinearRegressionMSE):
        raise ValueError("closed-form smoothness only exists for linear regression MSE")
    Xb = append_bias(dataset.X)
    return float(2.0 * np.max(np.einsum("ij,ij->i", Xb, Xb)))


def estimate_constants(
    model: LossModel,
    dataset: Dataset,
    probe_region_radius: float,
    num_probes: int,
    seed: int,
    projection_radius: float | None = None,
    reference_iterates: np.ndarray | None = None,
) -> ProblemConstants:
    """Estimate (L, beta, G, D) for one problem instance.

    L and G are the max per-sample gradient norm over random parameter probes
    (the max dominates the rms Assumption needs, so bounds stay valid). beta
    is the closed form for linear regression and the max per-sample
    gradient-difference ratio over probe pairs otherwise. D is twice the
    projection radius when projection is on, the observed iterate diameter of
    a reference run when one is supplied, and twice the probe radius as a
    last resort.
    """
    if num_probes < 100:
        raise ValueError(f"num_probes must be >= 100, got {num_probes}")
    if probe_region_radius <= 0:
        raise ValueError("probe_region_radius must be > 0")
    if float(np.max(np.abs(dataset.X))) == 0.0:
        raise ConfigError("degenerate dataset: all feature rows are zero")

    rng = np.random.default_rng(seed)
    probes = sample_ball(rng, model.param_dim, num_probes, probe_region_radius)

    max_grad = 0.0
    for w in probes:
        norms = np.linalg.norm(model.per_sample_grads(w, dataset.X, dataset.y), axis=1)
        max_grad = max(max_grad, float(norms.max()))

    if isinstance(model, LinearRegressionMSE):
        beta = closed_form_smoothness(model, dataset)
        source = "closed_form"
    else:
        beta = 0.0
        for i in range(0, num_probes - 1, 2):
            u, v = probes[i], probes[i + 1]
            dist = float(np.linalg.norm(u - v))
            if dist == 0.0:
                continue
            diffs = model.per_sample_grads(u, dataset.X, dataset.y) - \
                model.per_sample_grads(v, dataset.X, dataset.y)
            beta = max(beta, float(np.linalg.norm(diffs, axis=1).max()) / dist)
        source = "empirical"

    if projection_radius is not None:
        D = 2.0 * projection_radius
    elif reference_iterates is not None:
        D = observed_diameter(np.asarray(reference_iterates, dtype=np.float64))
    else:
        D = 2.0 * probe_region_radius

    return ProblemConstants(L=max_grad, beta=beta, G=max_grad, D=D,
                            n=dataset.n, source=source)


def observed_diameter(points: np.ndarray, cap: int = 1024) -> float:
    """Max pairwise distance over a point set (deterministically subsampled when large)."""
    if points.ndim != 2 or points.shape[0] < 2:
        raise ValueError("need at least two points")
    if points.shape[0] > cap:
        idx = np.linspace(0, points.shape[0] - 1, cap).astype(int)
        points = points[idx]
    sq = np.einsum("ij,ij->i", points, points)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (points @ points.T)
    return float(math.sqrt(max(float(d2.max()), 0.0)))


# ---------------------------------------------------------------------------
# minimizer oracles for suboptimality measurements
# ---------------------------------------------------------------------------

def least_squares_minimizer(dataset: Dataset) -> np.ndarray:
    """Exact empirical-risk minimizer for linear-regression MSE."""
    Xb = append_bias(dataset.X)
    w, *_ = np.linalg.lstsq(Xb, dataset.y, rcond=None)
    return w


def full_batch_minimizer(model: LossModel, dataset: Dataset, alpha: float,
                         max_steps: int, tol: float = 1e-10, seed: int = 0) -> np.ndarray:
    """Long-horizon full-batch gradient descent; stops when ||grad|| <= tol."""
    w = model.init_params(np.random.default_rng(seed))
    for _ in range(max_steps):
        g = model.grad_batch(w, dataset.X, dataset.y)
        if float(np.linalg.norm(g)) <= tol:
            break
        w = w - alpha * g
    return w


def minimizer_oracle(model: LossModel, dataset: Dataset, run_budget: int = 10_000,
                     alpha: float | None = None) -> np.ndarray:
    """w* for suboptimality: closed form for linear regression, GD otherwise."""
    if isinstance(model, LinearRegressionMSE):
        return least_squares_minimizer(dataset)
    if alpha is None:
        consts = estimate_constants(model, dataset, probe_region_radius=2.0,
                                    num_probes=100, seed=0)
        alpha = 1.0 / consts.beta
    return full_batch_minimizer(model, dataset, alpha, 10 * run_budget)


# ---------------------------------------------------------------------------
# stability bounds
# ---------------------------------------------------------------------------

def _check_k(k, T) -> None:
    if not 1 <= k <= T:
        raise ValueError(f"k must satisfy 1 <= k <= T, got k={k}, T={T}")


def stability_convex_weighted(consts: ProblemConstants, T: int, k: int,
                              rho, lr: LearningRateSchedule) -> BoundResult:
    """General weighted uniform-stability bound for convex losses.

    Exact evaluation of (2 L^2 / (n k)) * (sum_{t=1..k} sum_{i=1..t} rho_i a_i
    + sum_{t=k+1..T} sum_{i=t-k+1..t} rho_{i-(t-k)} a_i). Steps whose rate
    exceeds 2/beta violate the non-expansiveness condition; the bound is
    still evaluated but flagged.
    """
    _check_k(k, T)
    rho = np.asarray(rho, dtype=np.float64)
    if rho.shape != (k,):
        raise ValueError(f"rho must have length k={k}, got shape {rho.shape}")
    if np.any(rho < 0) or not np.any(rho > 0):
        raise ValueError("rho must be nonnegative with at least one positive entry")
    alphas = np.array([lr.rate(t) for t in range(1, T + 1)])
    violated = bool(np.any(alphas > 2.0 / consts.beta + _ALPHA_SLACK))

    idx = np.arange(1, k + 1)
    part1 = float(np.sum((k - idx + 1) * rho * alphas[:k]))
    prefix = np.concatenate([[0.0], np.cumsum(alphas)])  # prefix[m] = sum_{u<=m} alpha_u
    part2 = float(np.sum(rho * (prefix[T - k + idx] - prefix[idx])))
    value = 2.0 * consts.L**2 / (consts.n * k) * (part1 + part2)
    return BoundResult("convex_weighted", value, {"T": T, "k": k},
                       assumption_violated=violated)


def stability_convex_constant(consts: ProblemConstants, T: int, k: int,
                              alpha: float) -> BoundResult:
    """Constant-step convex stability bound (2 alpha L^2 / n) * (T - k/2)."""
    _check_k(k, T)
    if alpha <= 0:
        raise ValueError(f"alpha must be > 0, got {alpha}")
    violated = alpha > 2.0 / consts.beta + _ALPHA_SLACK
    value = 2.0 * alpha * consts.L**2 / consts.n * (T - k / 2.0)
    return BoundResult("convex_constant", value, {"T": T, "k": k, "alpha": alpha},
                       assumption_violated=violated)


def nonconvex_constant_exponent(c: float, beta: float, k: float) -> float:
    """Growth exponent c*beta / (c*beta + k) of the constant-step non-convex bound."""
    if c <= 0 or beta <= 0 or k < 1:
        raise ValueError("need c > 0, beta > 0, k >= 1")
    cb = c * beta
    return cb / (cb + k)


def stability_nonconvex_constant(consts: ProblemConstants, T: int, k: float,
                                 c: float) -> BoundResult:
    """Non-convex stability bound for constant steps alpha <= c/T, with its
    explicit prefactor: (1 + 1/(c beta))/(n-1) * (2 c L^2 (1 + k e^{c beta})/k)^{k/(c beta + k)}.
    """
    if consts.n < 2:
        raise DomainError("non-convex bound needs n >= 2 (its prefactor divides by n-1)")
    exponent = nonconvex_constant_exponent(c, consts.beta, k)
    cb = c * consts.beta
    base = 2.0 * c * consts.L**2 * (1.0 + k * math.exp(cb)) / k
    prefactor = (1.0 + 1.0 / cb) / (consts.n - 1) * base ** (k / (cb + k))
    value = prefactor * T**exponent
    return BoundResult("nonconvex_constant", value,
                       {"T": T, "k": k, "c": c, "exponent": exponent})


def decay_validity_interval(c: float, beta: float) -> tuple[float, float]:
    """Open interval of admissible k for the decaying-step non-convex bound."""
    cb = c * beta
    if not 0.0 < cb < 1.0:
        raise DomainError(f"decaying-step bound requires c*beta in (0, 1), got {cb:.6g}")
    return 1.0, (1.0 + math.sqrt(1.0 + 4.0 * cb)) / 2.0


def nonconvex_decay_exponent(c: float, beta: float, k: float) -> float:
    """Growth exponent (k c b + c^2 b^2) / (2 k c b + c^2 b^2 + k^2 (1 - c b))."""
    cb = c * beta
    return (k * cb + cb * cb) / (2.0 * k * cb + cb * cb + k * k * (1.0 - cb))


def stability_nonconvex_decaying(consts: ProblemConstants, T: int, k: float,
                                 c: float) -> BoundResult:
    """Non-convex stability bound for decaying steps alpha_t <= c/t (order form).

    Valid only for c*beta in (0,1) and k strictly inside the open interval
    (1, (1 + sqrt(1 + 4 c beta))/2); outside it raises DomainError naming the
    violated condition. No explicit prefactor exists for this case, so the
    value is T^exponent / n flagged order-only; params also record whether
    the averaged bound beats the k=1 decaying bound (k^2 - k > cb/(1 - cb)),
    which no admissible (c beta, k) satisfies.
    """
    lo, hi = decay_validity_interval(c, consts.beta)
    if not lo < k < hi:
        raise DomainError(
            f"k={k} outside the validity interval ({lo}, {hi:.6g}) for c*beta="
            f"{c * consts.beta:.6g}"
        )
    cb = c * consts.beta
    exponent = nonconvex_decay_exponent(c, consts.beta, k)
    tighter = k * k - k > cb / (1.0 - cb)
    value = T**exponent / consts.n
    return BoundResult("nonconvex_decaying", value,
                       {"T": T, "k": k, "c": c, "exponent": exponent,
                        "tighter_than_sgd": tighter},
                       order_only=True)


# ---------------------------------------------------------------------------
# convergence bounds (convex, steps c/sqrt(t), projected domain)
# ---------------------------------------------------------------------------

def _noise_scale(consts: ProblemConstants, c: float) -> float:
    if c <= 0:
        raise ValueError(f"c must be > 0, got {c}")
    return consts.D**2 / c + 2.0 * c * consts.G**2


def convergence_tail_average(consts: ProblemConstants, T: int, k: float,
                             c: float) -> BoundResult:
    """Expected-suboptimality bound (2 + log(T/2k)) / sqrt(T) * (D^2/c + 2 c G^2)."""
    if T <= 1:
        raise DomainError(f"bound requires T > 1, got {T}")
    if not 1 <= k <= T / 2:
        raise DomainError(f"k must satisfy 1 <= k <= T/2, got k={k}, T={T}")
    value = (2.0 + math.log(T / (2.0 * k))) / math.sqrt(T) * _noise_scale(consts, c)
    return BoundResult("tail_average_convergence", value, {"T": T, "k": k, "c": c})


def convergence_last_iterate(consts: ProblemConstants, T: int, c: float) -> BoundResult:
    """Last-iterate bound (2 + log T) / sqrt(T) * (D^2/c + 2 c G^2)."""
    if T <= 1:
        raise DomainError(f"bound requires T > 1, got {T}")
    value = (2.0 + math.log(T)) / math.sqrt(T) * _noise_scale(consts, c)
    return BoundResult("last_iterate_convergence", value, {"T": T, "c": c})


def convergence_interval_average(consts: ProblemConstants, T: int, k: float,
                                 d: int, c: float) -> BoundResult:
    """Strided-average bound (2d + d log(T/2kd)) / sqrt(T) * (D^2/c + 2 c G^2)."""
    if d < 1:
        raise DomainError(f"interval d must be >= 1, got {d}")
    if T % d != 0:
        raise ConfigError(f"T={T} must be divisible by the interval d={d}")
    if T // d <= 1:
        raise DomainError(f"need more than one epoch of length d: T={T}, d={d}")
    if not 1 <= k * d <= T / 2:
        raise DomainError(f"k*d must satisfy 1 <= k*d <= T/2, got k={k}, d={d}, T={T}")
    value = (2.0 * d + d * math.log(T / (2.0 * k * d))) / math.sqrt(T) * _noise_scale(consts, c)
    return BoundResult("interval_average_convergence", value,
                       {"T": T, "k": k, "d": d, "c": c})


def convergence_weighted(consts: ProblemConstants, T: int, k: int, rho,
                         lr: LearningRateSchedule) -> BoundResult:
    """General weighted convergence bound with ||w_t - w||^2 replaced by D^2.

    Three terms: the leading rho_1 D^2 / (2 k alpha_{T-k+1}), the telescoping
    coefficient differences over the window (zero for uniform weights and a
    constant rate), and the noise term (G^2 / 2k) sum rho alpha. Requires a
    positive, non-increasing rate over the averaging window.
    """
    if not 1 <= k <= T / 2:
        raise DomainError(f"k must satisfy 1 <= k <= T/2, got k={k}, T={T}")
    rho = np.asarray(rho, dtype=np.float64)
    if rho.shape != (k,):
        raise ValueError(f"rho must have length k={k}, got shape {rho.shape}")
    if np.any(rho < 0) or not np.any(rho > 0):
        raise ValueError("rho must be nonnegative with at least one positive entry")
    alphas = np.array([lr.rate(t) for t in range(T - k + 1, T + 1)])
    if np.any(alphas <= 0):
        raise ValueError("learning rates must be positive")
    if np.any(np.diff(alphas) > _ALPHA_SLACK):
        raise DomainError("increasing learning rate breaks the telescoping argument")

    D2, G2 = consts.D**2, consts.G**2
    edge = rho[0] * D2 / (2.0 * k * alphas[0])
    tele = D2 / (2.0 * k) * float(np.sum(rho[1:] / alphas[1:] - rho[:-1] / alphas[:-1]))
    noise = G2 / (2.0 * k) * float(np.sum(rho * alphas))
    return BoundResult("weighted_convergence", edge + tele + noise, {"T": T, "k": k})
