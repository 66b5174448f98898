"""Experiment configuration: a TOML file plus CLI flag overrides.

The grammar (documented in the README) uses one table per concern:

    [model]    kind, hidden_width
    [dataset]  synthetic generator params or a CSV path + target column
    [lr]       kind plus its parameters
    [[avg]]    one table per averaging scheme in the sweep
    [run]      seeds, epochs, batch_size, sampling, projection_radius, workers
    [bounds]   grid for the bound audit (T, k_grid, d_grid, c, alpha, constants)
    [output]   dir, snapshots
    [asserts]  enabled, checks

Flags override file values; the resolved dictionary is written verbatim into
the run manifest so every output is reproducible from the manifest alone.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .data import Dataset, gen_synthetic_regression, l1_normalize_rows, load_csv, train_test_split
from .errors import ConfigError
from .models import LossModel, make_model
from .optimizer import DEFAULT_HISTORY_BUDGET, RunConfig
from .schedules import AveragingScheme, LearningRateSchedule, make_schedule, make_scheme


@dataclass
class ExperimentConfig:
    model: dict = field(default_factory=dict)
    dataset: dict = field(default_factory=dict)
    lr: dict = field(default_factory=dict)
    avg: list = field(default_factory=list)
    seeds: list = field(default_factory=lambda: [0])
    epochs: int = 1
    batch_size: int = 1
    T: int | None = None
    sampling: str = "with_replacement"
    projection_radius: float | None = None
    history_budget: int = DEFAULT_HISTORY_BUDGET
    workers: int = 1
    out_dir: Path = Path("out")
    snapshots: bool = False
    asserts_enabled: bool = False
    checks: list = field(default_factory=list)
    bounds: dict = field(default_factory=dict)

    def resolved(self) -> dict:
        """Plain dict for the manifest (everything needed to reproduce)."""
        return {
            "model": dict(self.model),
            "dataset": dict(self.dataset),
            "lr": dict(self.lr),
            "avg": [dict(a) for a in self.avg],
            "run": {
                "seeds": list(self.seeds),
                "epochs": self.epochs,
                "batch_size": self.batch_size,
                "T": self.T,
                "sampling": self.sampling,
                "projection_radius": self.projection_radius,
                "workers": self.workers,
            },
            "bounds": dict(self.bounds),
            "output": {"dir": str(self.out_dir), "snapshots": self.snapshots},
            "asserts": {"enabled": self.asserts_enabled, "checks": list(self.checks)},
        }

    # -- builders --------------------------------------------------------
    def build_datasets(self) -> tuple[Dataset, Dataset | None]:
        """(train, test); test is None when test_fraction is 0."""
        ds = dict(self.dataset)
        test_fraction = float(ds.get("test_fraction", 0.0))
        split_seed = int(ds.get("split_seed", 1234))
        if ds.get("path"):
            data = load_csv(ds["path"], ds.get("target_column", "target"),
                            l1_normalize=bool(ds.get("l1_normalize", False)))
        elif ds.get("synthetic", True):
            data = gen_synthetic_regression(
                dim=int(ds.get("dim", 10)),
                n=int(ds.get("n", 1000)),
                noise_std=float(ds.get("noise_std", 0.1)),
                seed=int(ds.get("seed", 7)),
                l1_normalize=bool(ds.get("l1_normalize", False)),
            )
        else:
            raise ConfigError("dataset section needs either a path or synthetic=true")
        if test_fraction > 0:
            return train_test_split(data, seed=split_seed, test_fraction=test_fraction)
        return data, None

    def build_model(self, feature_dim: int) -> LossModel:
        kind = self.model.get("kind", "linear_regression")
        return make_model(kind, feature_dim, int(self.model.get("hidden_width", 8)))

    def build_lr(self, total_steps: int) -> LearningRateSchedule:
        if not self.lr:
            raise ConfigError("missing [lr] section")
        return make_schedule(self.lr, total_steps=total_steps)

    def build_schemes(self) -> list[AveragingScheme]:
        if not self.avg:
            raise ConfigError("missing [[avg]] scheme tables")
        return [make_scheme(a) for a in self.avg]

    def run_config(self, seed: int) -> RunConfig:
        return RunConfig(
            seed=int(seed),
            epochs=self.epochs,
            batch_size=self.batch_size,
            T=self.T,
            sampling=self.sampling,
            projection_radius=self.projection_radius,
            history_budget=self.history_budget,
        )


def load_config(path=None, overrides: dict | None = None) -> ExperimentConfig:
    """Parse the TOML file (if any) and apply CLI overrides on top."""
    raw: dict = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                raw = tomllib.load(fh)
        except FileNotFoundError:
            raise
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    cfg = ExperimentConfig()
    cfg.model = dict(raw.get("model", {}))
    cfg.dataset = dict(raw.get("dataset", {}))
    cfg.lr = dict(raw.get("lr", {}))
    cfg.avg = [dict(a) for a in raw.get("avg", [])]
    run = raw.get("run", {})
    cfg.seeds = [int(s) for s in run.get("seeds", [0])]
    cfg.epochs = int(run.get("epochs", 1))
    cfg.batch_size = int(run.get("batch_size", 1))
    cfg.T = int(run["T"]) if "T" in run else None
    cfg.sampling = str(run.get("sampling", "with_replacement"))
    if "projection_radius" in run:
        cfg.projection_radius = float(run["projection_radius"])
    cfg.history_budget = int(run.get("history_budget", DEFAULT_HISTORY_BUDGET))
    cfg.workers = int(run.get("workers", 1))
    out = raw.get("output", {})
    cfg.out_dir = Path(out.get("dir", "out"))
    cfg.snapshots = bool(out.get("snapshots", False))
    asserts = raw.get("asserts", {})
    cfg.asserts_enabled = bool(asserts.get("enabled", False))
    cfg.checks = list(asserts.get("checks", []))
    cfg.bounds = dict(raw.get("bounds", {}))

    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key == "out":
            cfg.out_dir = Path(value)
        elif key == "seeds":
            cfg.seeds = [int(s) for s in value]
        elif key == "workers":
            cfg.workers = int(value)
        else:
            raise ConfigError(f"unknown override {key!r}")
    if not cfg.seeds:
        raise ConfigError("need at least one seed")
    return cfg
