"""Experiment runners behind the CLI commands.

Every runner writes tidy CSVs plus a ``run.json`` manifest holding the
resolved configuration and any derived quantities (ground truth, estimated
constants, check outcomes). Nothing time- or host-dependent goes into the
outputs, so a rerun with the same config and seeds is byte-identical.

Sweep cells (one seed each) are independent; with ``workers > 1`` they run
in a process pool and results are merged in seed order, which keeps the
output deterministic regardless of scheduling.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import bounds as bnd
from .config import ExperimentConfig
from .data import Dataset, save_csv
from .errors import ConfigError, DomainError
from .models import LinearRegressionMSE, LossModel, append_bias
from .optimizer import OnlineAverage, SgdRun, train, export_trajectory
from .schedules import AveragingScheme, Constant
from .stability import run_stability_experiment


class CommandResult(NamedTuple):
    files: list
    ok: bool
    checks: dict


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _write_manifest(out_dir: Path, command: str, cfg: ExperimentConfig, derived: dict) -> Path:
    path = out_dir / "run.json"
    payload = {"command": command, "config": cfg.resolved(), "derived": derived}
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _majority_needed(total: int) -> int:
    return max(1, math.ceil(0.8 * total))


def _scheme_cols(scheme: AveragingScheme, T: int) -> tuple[int, int]:
    k = T if scheme.kind == "swa" else scheme.k
    return k, scheme.d


class _RiskEvaluator:
    """Full-batch empirical risk; quadratic-form fast path for linear MSE."""

    def __init__(self, model: LossModel, dataset: Dataset):
        self._model = model
        self._dataset = dataset
        if isinstance(model, LinearRegressionMSE):
            Xb = append_bias(dataset.X)
            n = dataset.n
            self._A = Xb.T @ Xb / n
            self._b = Xb.T @ dataset.y / n
            self._c0 = float(np.mean(dataset.y**2))
        else:
            self._A = None

    def __call__(self, w: np.ndarray) -> float:
        if self._A is not None:
            return float(w @ self._A @ w - 2.0 * (self._b @ w) + self._c0)
        return self._model.loss_batch(w, self._dataset.X, self._dataset.y)


# ---------------------------------------------------------------------------
# gen-data
# ---------------------------------------------------------------------------

def run_gen_data(cfg: ExperimentConfig) -> CommandResult:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train_ds, test_ds = cfg.build_datasets()
    files = []
    path = out / "dataset.csv"
    save_csv(train_ds, path)
    files.append(path)
    if test_ds is not None:
        tpath = out / "dataset_test.csv"
        save_csv(test_ds, tpath)
        files.append(tpath)
    derived = {"n_train": train_ds.n, "n_test": test_ds.n if test_ds else 0,
               "feature_dim": train_ds.feature_dim}
    if train_ds.ground_truth:
        gt = train_ds.ground_truth
        derived["ground_truth"] = {
            "w_star": [float(v) for v in gt["w_star"]],
            "b_star": gt["b_star"],
            "noise_std": gt["noise_std"],
            "seed": gt["seed"],
        }
    files.append(_write_manifest(out, "gen-data", cfg, derived))
    return CommandResult(files, True, {})


# ---------------------------------------------------------------------------
# train (single run, trajectory export)
# ---------------------------------------------------------------------------

def run_train(cfg: ExperimentConfig) -> CommandResult:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train_ds, _ = cfg.build_datasets()
    model = cfg.build_model(train_ds.feature_dim)
    schemes = cfg.build_schemes()
    run_cfg = cfg.run_config(cfg.seeds[0])
    T = run_cfg.total_steps(train_ds.n)
    lr = cfg.build_lr(T)
    result = train(model, train_ds, lr, run_cfg, schemes[0])
    files = [out / "trajectory.csv"]
    snap = out / "snapshots.csv" if cfg.snapshots else None
    export_trajectory(result.trajectory, files[0], snapshots_path=snap)
    if snap is not None:
        files.append(snap)
    derived = {
        "scheme": schemes[0].label(),
        "T": T,
        "final_average": [float(v) for v in result.final_average],
        "final_loss": model.loss_batch(result.final_average, train_ds.X, train_ds.y),
    }
    files.append(_write_manifest(out, "train", cfg, derived))
    return CommandResult(files, True, {})


# ---------------------------------------------------------------------------
# convergence experiment
# ---------------------------------------------------------------------------

def _convergence_seed_cell(payload):
    """One seed of the convergence sweep; returns per-step rows and finals."""
    model, dataset, lr, run_cfg, schemes, w_star = payload
    risk = _RiskEvaluator(model, dataset)
    f_star = risk(w_star)
    run = SgdRun(model, dataset, lr, run_cfg)
    averagers = [OnlineAverage(s) for s in schemes]
    labels = [s.label() for s in schemes]
    cols = [_scheme_cols(s, run.T) for s in schemes]
    rows = []
    finals = {}
    for rec in run.steps():
        for s, av, lbl, (k, d) in zip(schemes, averagers, labels, cols):
            av.push(rec.w)
            sub = risk(av.value) - f_star
            rows.append((rec.t, lbl, k, d, run_cfg.seed, sub, rec.batch_loss))
            if rec.t == run.T:
                finals[lbl] = sub
    return run_cfg.seed, rows, finals


def run_convergence_cmd(cfg: ExperimentConfig) -> CommandResult:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train_ds, _ = cfg.build_datasets()
    model = cfg.build_model(train_ds.feature_dim)
    schemes = cfg.build_schemes()
    run_cfg0 = cfg.run_config(cfg.seeds[0])
    T = run_cfg0.total_steps(train_ds.n)
    lr = cfg.build_lr(T)
    w_star = bnd.minimizer_oracle(model, train_ds, run_budget=T)

    payloads = [(model, train_ds, lr, cfg.run_config(seed), schemes, w_star)
                for seed in cfg.seeds]
    results = _map_cells(_convergence_seed_cell, payloads, cfg.workers)

    rows = []
    finals_by_seed = {}
    for seed, cell_rows, finals in sorted(results, key=lambda r: r[0]):
        rows.extend(cell_rows)
        finals_by_seed[seed] = finals
    files = [out / "convergence.csv"]
    _write_csv(files[0],
               ["step", "scheme", "k", "d", "seed", "suboptimality", "train_loss"],
               rows)

    summary_rows = []
    for seed in sorted(finals_by_seed):
        finals = finals_by_seed[seed]
        order = sorted(finals, key=lambda lbl: (finals[lbl], lbl))
        ranks = {lbl: i + 1 for i, lbl in enumerate(order)}
        for s in schemes:
            lbl = s.label()
            k, d = _scheme_cols(s, T)
            summary_rows.append((seed, lbl, k, d, finals[lbl], ranks[lbl]))
    summary = out / "convergence_summary.csv"
    _write_csv(summary, ["seed", "scheme", "k", "d", "final_suboptimality", "rank"],
               summary_rows)
    files.append(summary)

    checks = _eval_convergence_checks(cfg, schemes, finals_by_seed)
    ok = all(c["passed"] for c in checks.values()) if cfg.asserts_enabled else True
    derived = {
        "T": T,
        "w_star": [float(v) for v in w_star],
        "f_star": _RiskEvaluator(model, train_ds)(w_star),
        "checks": checks,
    }
    files.append(_write_manifest(out, "convergence", cfg, derived))
    return CommandResult(files, ok, checks)


def _eval_convergence_checks(cfg, schemes, finals_by_seed) -> dict:
    labels = [s.label() for s in schemes]
    fwa_labels = [l for l in labels if l.startswith("fwa_")]
    lawa = sorted([s for s in schemes if s.kind == "lawa"], key=lambda s: s.d)
    checks = {}
    seeds = sorted(finals_by_seed)
    need = _majority_needed(len(seeds))

    def record(name, per_seed_ok):
        hits = sum(per_seed_ok)
        checks[name] = {"passed": hits >= need, "seeds_satisfied": hits,
                        "seeds_total": len(seeds)}

    for name in cfg.checks:
        if name == "fwa_below_sgd" and "sgd" in labels and fwa_labels:
            record(name, [all(finals_by_seed[s][f] < finals_by_seed[s]["sgd"]
                              for f in fwa_labels) for s in seeds])
        elif name == "swa_above_finite" and "swa" in labels and fwa_labels:
            record(name, [all(finals_by_seed[s]["swa"] > finals_by_seed[s][f]
                              for f in fwa_labels) for s in seeds])
        elif name == "nondecreasing_in_d" and len(lawa) >= 2:
            ordered = [s.label() for s in lawa]
            record(name, [all(finals_by_seed[s][a] <= finals_by_seed[s][b]
                              for a, b in zip(ordered, ordered[1:])) for s in seeds])
    return checks


# ---------------------------------------------------------------------------
# stability experiment
# ---------------------------------------------------------------------------

def _stability_seed_cell(payload):
    model, base, test, lr, run_cfg, schemes = payload
    reports = run_stability_experiment(model, base, test, lr, run_cfg, schemes)
    return run_cfg.seed, reports


def run_stability_cmd(cfg: ExperimentConfig) -> CommandResult:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    base, test = cfg.build_datasets()
    if test is None:
        raise ConfigError("stability experiments need dataset.test_fraction > 0")
    model = cfg.build_model(base.feature_dim)
    schemes = cfg.build_schemes()
    n_twin = base.n - 1
    run_cfg0 = cfg.run_config(cfg.seeds[0])
    T = run_cfg0.total_steps(n_twin)
    lr = cfg.build_lr(T)

    payloads = [(model, base, test, lr, cfg.run_config(seed), schemes)
                for seed in cfg.seeds]
    results = _map_cells(_stability_seed_cell, payloads, cfg.workers)

    rows = []
    finals_by_seed: dict = {}
    for seed, reports in sorted(results, key=lambda r: r[0]):
        finals_by_seed[seed] = {}
        for rep in reports:
            lbl = rep.scheme.label()
            k, d = _scheme_cols(rep.scheme, T)
            for e in range(len(rep.parameter_distances)):
                rows.append((e + 1, lbl, k, d, rep.parameter_distances[e],
                             rep.generalization_errors[e], rep.train_errors[e],
                             rep.test_errors[e], seed))
            finals_by_seed[seed][lbl] = {
                "distance": float(rep.parameter_distances[-1]),
                "gen_error": float(rep.generalization_errors[-1]),
            }
    files = [out / "stability.csv"]
    _write_csv(files[0],
               ["epoch", "scheme", "k", "d", "param_distance", "gen_error",
                "train_loss", "test_loss", "seed"],
               rows)

    summary_rows = []
    for seed in sorted(finals_by_seed):
        for s in schemes:
            lbl = s.label()
            k, d = _scheme_cols(s, T)
            fin = finals_by_seed[seed][lbl]
            summary_rows.append((seed, lbl, k, d, fin["distance"], fin["gen_error"]))
    summary = out / "stability_summary.csv"
    _write_csv(summary,
               ["seed", "scheme", "k", "d", "final_param_distance", "final_gen_error"],
               summary_rows)
    files.append(summary)

    checks = _eval_stability_checks(cfg, finals_by_seed)
    ok = all(c["passed"] for c in checks.values()) if cfg.asserts_enabled else True
    files.append(_write_manifest(out, "stability", cfg, {"T": T, "checks": checks}))
    return CommandResult(files, ok, checks)


def _eval_stability_checks(cfg, finals_by_seed) -> dict:
    checks = {}
    seeds = sorted(finals_by_seed)
    need = _majority_needed(len(seeds))

    def record(name, per_seed_ok):
        hits = sum(per_seed_ok)
        checks[name] = {"passed": hits >= need, "seeds_satisfied": hits,
                        "seeds_total": len(seeds)}

    for name in cfg.checks:
        if name.startswith("distance_ordering:"):
            labels = name.split(":", 1)[1].split(">=")
            record(name, [all(finals_by_seed[s][a]["distance"]
                              >= finals_by_seed[s][b]["distance"]
                              for a, b in zip(labels, labels[1:])) for s in seeds])
        elif name.startswith("gen_le:"):
            a, b = name.split(":", 1)[1].split("<=")
            record(name, [finals_by_seed[s][a]["gen_error"]
                          <= finals_by_seed[s][b]["gen_error"] for s in seeds])
    return checks


# ---------------------------------------------------------------------------
# bounds audit
# ---------------------------------------------------------------------------

def _load_constants(cfg: ExperimentConfig) -> bnd.ProblemConstants:
    spec = cfg.bounds
    if spec.get("constants_file"):
        with open(spec["constants_file"]) as fh:
            vals = json.load(fh)
        return bnd.ProblemConstants(
            L=float(vals["L"]), beta=float(vals["beta"]), G=float(vals["G"]),
            D=float(vals["D"]), n=int(vals["n"]),
            source=str(vals.get("source", "file")),
        )
    if spec.get("estimate", False):
        train_ds, _ = cfg.build_datasets()
        model = cfg.build_model(train_ds.feature_dim)
        return bnd.estimate_constants(
            model, train_ds,
            probe_region_radius=float(spec.get("probe_radius", 2.0)),
            num_probes=int(spec.get("num_probes", 200)),
            seed=int(spec.get("probe_seed", 0)),
            projection_radius=cfg.projection_radius,
        )
    raise ConfigError("bounds audit needs bounds.constants_file or bounds.estimate=true")


def run_bounds_audit(cfg: ExperimentConfig) -> CommandResult:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    spec = cfg.bounds
    consts = _load_constants(cfg)
    T = int(spec.get("T", 10_000))
    k_grid = [int(k) for k in spec.get("k_grid", [1, 10, 100])]
    d_grid = [int(d) for d in spec.get("d_grid", [1, 5, 10])]
    c = float(spec.get("c", 0.5))
    alpha = float(spec.get("alpha", 0.01))
    lr = Constant(alpha)

    rows = []

    def add(name, fn, params):
        label = "sgd-equivalent" if params.get("k") == 1 else ""
        try:
            res = fn()
            rows.append((name, params.get("k", ""), params.get("d", ""), T,
                         res.value, res.params.get("exponent", ""),
                         int(res.assumption_violated), int(res.order_only),
                         "ok", label))
        except (DomainError, ConfigError) as exc:
            rows.append((name, params.get("k", ""), params.get("d", ""), T,
                         "", "", "", "", f"domain_error: {exc}", label))

    for k in k_grid:
        rho = np.ones(k)
        add("convex_weighted",
            lambda k=k, rho=rho: bnd.stability_convex_weighted(consts, T, k, rho, lr),
            {"k": k})
        add("convex_constant",
            lambda k=k: bnd.stability_convex_constant(consts, T, k, alpha), {"k": k})
        add("nonconvex_constant",
            lambda k=k: bnd.stability_nonconvex_constant(consts, T, k, c), {"k": k})
        add("nonconvex_decaying",
            lambda k=k: bnd.stability_nonconvex_decaying(consts, T, k, c), {"k": k})
        add("tail_average_convergence",
            lambda k=k: bnd.convergence_tail_average(consts, T, k, c), {"k": k})
        add("weighted_convergence",
            lambda k=k, rho=rho: bnd.convergence_weighted(consts, T, k, rho, lr),
            {"k": k})
        for d in d_grid:
            add("interval_average_convergence",
                lambda k=k, d=d: bnd.convergence_interval_average(consts, T, k, d, c),
                {"k": k, "d": d})
    add("last_iterate_convergence",
        lambda: bnd.convergence_last_iterate(consts, T, c), {})

    files = [out / "bounds_audit.csv"]
    _write_csv(files[0],
               ["bound", "k", "d", "T", "value", "exponent",
                "assumption_violated", "order_only", "status", "label"],
               rows)

    inv_rows, inv_ok = _bound_invariants(consts, T, k_grid, d_grid, c, alpha)
    inv_file = out / "bounds_invariants.csv"
    _write_csv(inv_file, ["invariant", "passed", "detail"], inv_rows)
    files.append(inv_file)

    checks = {}
    if "invariants" in cfg.checks:
        checks["invariants"] = {"passed": inv_ok, "seeds_satisfied": int(inv_ok),
                                "seeds_total": 1}
    ok = all(c["passed"] for c in checks.values()) if cfg.asserts_enabled else True
    derived = {"constants": {"L": consts.L, "beta": consts.beta, "G": consts.G,
                             "D": consts.D, "n": consts.n, "source": consts.source},
               "checks": checks}
    files.append(_write_manifest(out, "bounds", cfg, derived))
    return CommandResult(files, ok, checks)


def _bound_invariants(consts, T, k_grid, d_grid, c, alpha):
    rows = []

    def check(name, passed, detail=""):
        rows.append((name, int(bool(passed)), detail))

    full = bnd.stability_convex_constant(consts, T, T, alpha).value
    swa_form = alpha * consts.L**2 * T / consts.n
    check("convex_constant_k_eq_T_is_swa_form",
          math.isclose(full, swa_form, rel_tol=1e-12),
          f"{full} vs {swa_form}")

    ks = [k for k in k_grid if 1 <= k <= T // 2]
    tail_vs_interval = all(
        math.isclose(bnd.convergence_interval_average(consts, T, k, 1, c).value,
                     bnd.convergence_tail_average(consts, T, k, c).value, rel_tol=1e-12)
        for k in ks if T % 1 == 0)
    check("interval_d1_equals_tail", tail_vs_interval)

    exp_k1 = bnd.nonconvex_constant_exponent(c, consts.beta, 1)
    cb = c * consts.beta
    check("nonconvex_exponent_k1", math.isclose(exp_k1, cb / (1 + cb), rel_tol=1e-15))

    vals = [bnd.stability_convex_constant(consts, T, k, alpha).value
            for k in sorted(set(k_grid))]
    check("convex_constant_decreasing_in_k",
          all(a > b for a, b in zip(vals, vals[1:])))

    conv = [bnd.convergence_tail_average(consts, T, k, c).value for k in ks]
    check("tail_convergence_decreasing_in_k",
          all(a > b for a, b in zip(conv, conv[1:])))

    for k in ks:
        dvals = [bnd.convergence_interval_average(consts, T, k, d, c).value
                 for d in sorted(set(d_grid)) if T % d == 0 and 2 * k * d <= T]
        if len(dvals) >= 2:
            check(f"interval_increasing_in_d_k{k}",
                  all(a < b for a, b in zip(dvals, dvals[1:])))

    exps = [bnd.nonconvex_constant_exponent(c, consts.beta, k) for k in sorted(set(k_grid))]
    check("nonconvex_exponent_decreasing_in_k",
          all(a > b for a, b in zip(exps, exps[1:])))

    k0 = min(k_grid)
    gen = bnd.stability_convex_weighted(consts, T, k0, np.ones(k0), Constant(alpha)).value
    cor = bnd.stability_convex_constant(consts, T, k0, alpha).value
    gap = alpha * consts.L**2 / consts.n
    check("weighted_minus_constant_gap", math.isclose(gen - cor, gap, rel_tol=1e-9),
          f"{gen - cor} vs {gap}")

    return rows, all(r[1] for r in rows)


def _map_cells(fn, payloads, workers: int):
    if workers <= 1 or len(payloads) <= 1:
        return [fn(p) for p in payloads]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, payloads))
