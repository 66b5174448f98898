"""Dataset construction: CSV ingestion, synthetic regression, twin pairs.

A :class:`Dataset` stores features as an (n, d) matrix and targets as an
(n,) vector; rows are samples. Twin pairs (two datasets differing in exactly
one sample) implement the leave-one-out replacement protocol used by the
stability experiments: remove one random sample from the base set, then
overwrite one random position of the reduced set with the removed sample.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, CsvParseError


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray  # (n, feature_dim)
    y: np.ndarray  # (n,)
    ground_truth: dict | None = field(default=None, compare=False)

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.float64)
        if X.ndim != 2:
            raise ValueError(f"features must be a 2-d matrix, got shape {X.shape}")
        if y.ndim != 1 or y.shape[0] != X.shape[0]:
            raise ValueError(f"targets shape {y.shape} does not match {X.shape[0]} rows")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ValueError("dataset contains non-finite entries")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.X.shape[1]

    def sample(self, i: int) -> tuple[np.ndarray, float]:
        return self.X[i], float(self.y[i])

    def __len__(self) -> int:
        return self.n


@dataclass(frozen=True)
class TwinPair:
    """Two equal-size datasets differing in exactly one sample."""

    s: Dataset
    s_prime: Dataset
    differing_index: int

    def __post_init__(self):
        if self.s.n != self.s_prime.n:
            raise ValueError("twin datasets must have equal size")
        same = np.all(self.s.X == self.s_prime.X, axis=1) & (self.s.y == self.s_prime.y)
        diff = np.flatnonzero(~same)
        if diff.size != 1 or diff[0] != self.differing_index:
            raise ValueError(
                f"twin datasets must differ at exactly index {self.differing_index}, "
                f"found differences at {diff.tolist()}"
            )


def l1_normalize_rows(dataset: Dataset) -> Dataset:
    """Divide each feature row by its l1 norm; all-zero rows are left unchanged."""
    norms = np.abs(dataset.X).sum(axis=1)
    scale = np.where(norms > 0.0, norms, 1.0)
    return Dataset(dataset.X / scale[:, None], dataset.y, dataset.ground_truth)


def load_csv(path, target_column: str, l1_normalize: bool = False) -> Dataset:
    """Load a numeric CSV with a header row; one column is the target.

    Raises FileNotFoundError for a missing file, :class:`CsvParseError` for a
    non-numeric cell (with row/column context) and :class:`ConfigError` when
    the target column is absent.
    """
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvParseError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if target_column not in header:
            raise ConfigError(
                f"{path}: target column {target_column!r} not in header {header}"
            )
        tcol = header.index(target_column)
        rows = []
        for rownum, row in enumerate(reader, start=2):
            if not row:
                continue
            vals = []
            for colnum, cell in enumerate(row):
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise CsvParseError(
                        f"{path}: non-numeric cell {cell!r} at row {rownum}, "
                        f"column {header[colnum] if colnum < len(header) else colnum}"
                    ) from None
            if len(vals) != len(header):
                raise CsvParseError(
                    f"{path}: row {rownum} has {len(vals)} cells, header has {len(header)}"
                )
            rows.append(vals)
    if not rows:
        raise CsvParseError(f"{path}: no data rows")
    arr = np.asarray(rows, dtype=np.float64)
    y = arr[:, tcol]
    X = np.delete(arr, tcol, axis=1)
    ds = Dataset(X, y)
    return l1_normalize_rows(ds) if l1_normalize else ds


def save_csv(dataset: Dataset, path, target_column: str = "target") -> None:
    """Persist in the same format ``load_csv`` accepts."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"x{j}" for j in range(dataset.feature_dim)] + [target_column])
        for i in range(dataset.n):
            writer.writerow([repr(v) for v in dataset.X[i]] + [repr(float(dataset.y[i]))])


def gen_synthetic_regression(
    dim: int, n: int, noise_std: float, seed: int, l1_normalize: bool = False
) -> Dataset:
    """Linear-plus-noise regression data, the stand-in for a real tabular task.

    Features are uniform on [-1, 1]^dim, targets are ``x @ w_star + b_star``
    plus Gaussian noise. The ground-truth coefficients are drawn from the seed
    and recorded on the returned dataset. With ``l1_normalize``, feature rows
    are rescaled *before* targets are computed, so the ground truth stays exact.
    """
    if dim < 1:
        raise ValueError(f"dim must be >= 1, got {dim}")
    if n < 2:
        raise ValueError(f"n must be >= 2, got {n}")
    if noise_std < 0:
        raise ValueError(f"noise_std must be >= 0, got {noise_std}")
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1.0, 1.0, (n, dim))
    if l1_normalize:
        norms = np.abs(X).sum(axis=1)
        X = X / np.where(norms > 0.0, norms, 1.0)[:, None]
    w_star = rng.uniform(-1.0, 1.0, dim)
    b_star = float(rng.uniform(-1.0, 1.0))
    y = X @ w_star + b_star
    if noise_std > 0:
        y = y + rng.normal(0.0, noise_std, n)
    gt = {"w_star": w_star, "b_star": b_star, "noise_std": float(noise_std), "seed": int(seed)}
    return Dataset(X, y, ground_truth=gt)


def train_test_split(dataset: Dataset, seed: int, test_fraction: float = 0.2):
    """Deterministic seeded shuffle split; returns (train, test)."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError(f"test_fraction must be in (0, 1), got {test_fraction}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(dataset.n)
    n_test = max(1, int(round(dataset.n * test_fraction)))
    if n_test >= dataset.n:
        raise ValueError("split leaves no training data")
    test_idx, train_idx = perm[:n_test], perm[n_test:]
    gt = dataset.ground_truth
    return (
        Dataset(dataset.X[train_idx], dataset.y[train_idx], gt),
        Dataset(dataset.X[test_idx], dataset.y[test_idx], gt),
    )


def make_twin(base: Dataset, seed: int) -> TwinPair:
    """Build two datasets of size n-1 differing in exactly one sample.

    One random sample is deleted from ``base`` to form S; S' is S with one
    random position overwritten by the deleted sample. Positions where the
    overwrite would reproduce the deleted sample are rejected and redrawn, so
    the pair always differs (required for the replace-one protocol to mean
    anything).
    """
    if base.n < 2:
        raise ValueError(f"need at least 2 samples to form a twin pair, got {base.n}")
    rng = np.random.default_rng(seed)
    removed = int(rng.integers(base.n))
    keep = np.delete(np.arange(base.n), removed)
    X_s, y_s = base.X[keep], base.y[keep]
    rx, ry = base.X[removed], base.y[removed]

    differs = ~(np.all(X_s == rx, axis=1) & (y_s == ry))
    if not differs.any():
        raise ValueError("all remaining samples equal the removed one; twin pair impossible")
    while True:
        j = int(rng.integers(X_s.shape[0]))
        if differs[j]:
            break
    X_sp = X_s.copy()
    y_sp = y_s.copy()
    X_sp[j] = rx
    y_sp[j] = ry
    return TwinPair(Dataset(X_s, y_s), Dataset(X_sp, y_sp), j)
