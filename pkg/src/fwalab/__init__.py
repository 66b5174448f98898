"""SGD with finite weight averaging: training, stability, and bound audits."""

from .data import Dataset, TwinPair, gen_synthetic_regression, load_csv, make_twin
from .models import LinearRegressionMSE, LogisticRegression, TinyMLP, make_model
from .optimizer import IncrementalTailAverager, OnlineAverage, RunConfig, SgdRun, train
from .schedules import (
    AveragingScheme,
    Constant,
    InverseSqrtT,
    InverseT,
    StepDecay,
    checkpoint_mask,
    rate_at,
)

__all__ = [
    "AveragingScheme",
    "Constant",
    "Dataset",
    "IncrementalTailAverager",
    "InverseSqrtT",
    "InverseT",
    "LinearRegressionMSE",
    "LogisticRegression",
    "OnlineAverage",
    "RunConfig",
    "SgdRun",
    "StepDecay",
    "TinyMLP",
    "TwinPair",
    "checkpoint_mask",
    "gen_synthetic_regression",
    "load_csv",
    "make_model",
    "make_twin",
    "rate_at",
    "train",
]
