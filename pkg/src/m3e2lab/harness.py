"""Training loop, replication grid, and result aggregation.

A sweep walks (setting variant x data seed x model repetition x estimator),
where data seeds and repetition indices double as the seeds themselves, and
emits one record per fit with the per-treatment estimates, the run-level
mean absolute error, and the fit wall-clock. Records merge in a fixed
(setting, data seed, model seed, estimator) order regardless of worker
scheduling, so a sweep with fixed seeds is reproducible byte for byte
(modulo the wall-clock column, which can be zeroed for strict comparisons).
"""

from __future__ import annotations

import csv
import os
import time
from dataclasses import dataclass, field, replace
from multiprocessing import get_context
from pathlib import Path

import numpy as np

from . import model
from .baseline import ols_tau
from .datagen import CopulaConfig, Dataset, GwasConfig, gen_copula, gen_gwas, single_treatment_view
from .engine import OptimizerState, backward, no_grad, optimizer_step
from .errors import DivergenceError, ParameterError
from .stats import SeededRng

WORKERS_ENV = "M3E2LAB_WORKERS"


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 200
    epochs: int = 100
    optimizer: str = "adam"
    model_seed: int = 1

    def __post_init__(self):
        if self.lr <= 0:
            raise ParameterError("learning rate must be > 0")
        if self.batch_size < 1:
            raise ParameterError("batch size must be >= 1")
        if self.epochs < 0:
            raise ParameterError("epochs must be >= 0")
        if self.optimizer not in ("sgd", "adam"):
            raise ParameterError("optimizer must be 'sgd' or 'adam'")


def train(params: model.M3E2Params, ds: Dataset, cfg: TrainConfig):
    """Minibatch optimization of the composite loss; returns (params, history).

    The dataset is shuffled with the model seed and split 80/20; batches are
    drawn from the training part, the held-out part only monitors the loss.
    History has one row per epoch with the averaged training components and
    the validation total.
    """
    rng = np.random.default_rng(cfg.model_seed)
    perm = rng.permutation(ds.n)
    n_train = max(1, int(ds.n * 0.8))
    train_idx, val_idx = perm[:n_train], perm[n_train:]
    state = OptimizerState(mode=cfg.optimizer, lr=cfg.lr)
    named = params.named()
    history = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(train_idx)
        sums = {"loss": 0.0, "loss_y": 0.0, "loss_t": 0.0, "loss_a": 0.0, "loss_reg": 0.0}
        n_batches = 0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            out = model.forward(params, ds.x_low[idx], ds.x_high[idx], ds.t[idx])
            loss, parts = model.total_loss(out, ds.y[idx], ds.t[idx], ds.x_high[idx], params)
            value = loss.item()
            if not np.isfinite(value):
                raise DivergenceError(f"non-finite training loss at epoch {epoch}")
            grads_by_tensor = backward(loss)
            grads = {name: grads_by_tensor[t] for name, t in named.items() if t in grads_by_tensor}
            optimizer_step(named, grads, state)
            sums["loss"] += value
            for key, part in parts.items():
                sums[key] += part
            n_batches += 1
        row = {"epoch": epoch, **{k: v / n_batches for k, v in sums.items()}}
        if len(val_idx):
            with no_grad():
                out = model.forward(params, ds.x_low[val_idx], ds.x_high[val_idx], ds.t[val_idx])
                val_loss, _ = model.total_loss(out, ds.y[val_idx], ds.t[val_idx], ds.x_high[val_idx], params)
            row["val_loss"] = val_loss.item()
        else:
            row["val_loss"] = float("nan")
        history.append(row)
    return params, history


def mae(tau_true, tau_hat) -> float:
    """Mean absolute error between true and estimated effects."""
    tau_true = np.asarray(tau_true, dtype=np.float64)
    tau_hat = np.asarray(tau_hat, dtype=np.float64)
    if tau_true.shape != tau_hat.shape:
        raise ParameterError(f"effect vectors differ in length: {tau_true.shape} vs {tau_hat.shape}")
    return float(np.mean(np.abs(tau_true - tau_hat)))


# ---------------------------------------------------------------------------
# settings grid


@dataclass(frozen=True)
class Setting:
    """One dataset configuration of the benchmark grid."""

    id: str
    dataset: str  # "gwas" | "copula"
    n: int
    n_cov: int  # gwas: total SNP columns; copula: confounder-source columns
    n_treat: int


def default_grid() -> list[Setting]:
    """The benchmark grid: sample-size, covariate, and treatment sweeps."""
    grid = []
    for n in (2000, 4000, 6000):
        grid.append(Setting(f"a-n{n}", "gwas", n, 1000, 5))
    for cov in (100, 500, 1000):
        grid.append(Setting(f"b-v{cov}", "gwas", 6000, cov + 5, 5))
    for k in (3, 6, 9):
        grid.append(Setting(f"c-k{k}", "gwas", 6000, 500 + k, k))
    for n in (2500, 5000, 10000):
        grid.append(Setting(f"d-n{n}", "copula", n, 10, 4))
    for s in (5, 25, 125):
        grid.append(Setting(f"e-s{s}", "copula", 10000, s, 4))
    return grid


def make_dataset(setting: Setting, seed: int) -> Dataset:
    if setting.dataset == "gwas":
        return gen_gwas(GwasConfig(n=setting.n, n_cov=setting.n_cov, n_treat=setting.n_treat, seed=seed))
    if setting.dataset == "copula":
        return gen_copula(CopulaConfig(n=setting.n, s=setting.n_cov, k=setting.n_treat, seed=seed))
    raise ParameterError(f"unknown dataset kind {setting.dataset!r}")


# ---------------------------------------------------------------------------
# estimators


def fit_m3e2(ds: Dataset, model_seed: int, model_opts: dict | None = None, train_cfg: TrainConfig | None = None) -> np.ndarray:
    cfg = model.M3E2Config(
        n_treat=ds.n_treat,
        treatment_kind=ds.treatment_kind,
        outcome_kind=ds.outcome_kind,
        **(model_opts or {}),
    )
    params = model.init_params(cfg, ds.x_low.shape[1], ds.x_high.shape[1], SeededRng(model_seed))
    train_cfg = replace(train_cfg or TrainConfig(), model_seed=model_seed)
    params, _ = train(params, ds, train_cfg)
    return model.extract_tau(params)


def fit_ols(ds: Dataset, model_seed: int, model_opts=None, train_cfg=None) -> np.ndarray:
    return ols_tau(ds)


@dataclass(frozen=True)
class Estimator:
    name: str
    fit: callable
    single_treatment: bool = False


ESTIMATORS = {
    "m3e2": Estimator("m3e2", fit_m3e2),
    "ols": Estimator("ols", fit_ols),
}


def fit_single_treatment(estimator: Estimator, ds: Dataset, model_seed: int, model_opts=None, train_cfg=None) -> np.ndarray:
    """Apply a single-treatment estimator once per treatment and assemble tau.

    Each pass sees one treatment column, with the remaining treatments moved
    into the covariates.
    """
    taus = []
    for k in range(ds.n_treat):
        view = single_treatment_view(ds, k)
        taus.append(float(estimator.fit(view, model_seed, model_opts, train_cfg)[0]))
    return np.array(taus)


def run_estimator(name: str, ds: Dataset, model_seed: int, model_opts=None, train_cfg=None) -> np.ndarray:
    if name not in ESTIMATORS:
        raise ParameterError(f"unknown estimator {name!r}; available: {sorted(ESTIMATORS)}")
    est = ESTIMATORS[name]
    if est.single_treatment and ds.n_treat > 1:
        return fit_single_treatment(est, ds, model_seed, model_opts, train_cfg)
    return est.fit(ds, model_seed, model_opts, train_cfg)


# ---------------------------------------------------------------------------
# replication records


@dataclass(frozen=True)
class RunRecord:
    """One (dataset, setting, seeds, estimator) fit and its error."""

    dataset: str
    setting: str
    data_seed: int
    model_seed: int
    estimator: str
    tau_true: tuple
    tau_hat: tuple
    mae: float
    runtime_s: float

    def __post_init__(self):
        expected = mae(self.tau_true, self.tau_hat)
        if abs(self.mae - expected) > 1e-12:
            raise ParameterError(f"record mae {self.mae} does not match its effects ({expected})")

    @classmethod
    def make(cls, ds, setting_id, data_seed, model_seed, estimator, tau_hat, runtime_s):
        return cls(
            dataset=ds.name,
            setting=setting_id,
            data_seed=data_seed,
            model_seed=model_seed,
            estimator=estimator,
            tau_true=tuple(float(v) for v in ds.tau_true),
            tau_hat=tuple(float(v) for v in tau_hat),
            mae=mae(ds.tau_true, tau_hat),
            runtime_s=float(runtime_s),
        )


def _record_key(rec: RunRecord):
    return (rec.setting, rec.data_seed, rec.model_seed, rec.estimator)


def _run_one_data_seed(job) -> list[RunRecord]:
    setting, data_seed, estimators, reps, model_opts, train_cfg = job
    ds = make_dataset(setting, data_seed)
    records = []
    for model_seed in range(1, reps + 1):
        for name in estimators:
            start = time.perf_counter()
            tau_hat = run_estimator(name, ds, model_seed, model_opts, train_cfg)
            elapsed = time.perf_counter() - start
            records.append(RunRecord.make(ds, setting.id, data_seed, model_seed, name, tau_hat, elapsed))
    return records


def run_replications(
    setting: Setting,
    estimators=("m3e2", "ols"),
    n_data_seeds: int = 4,
    reps: int = 20,
    model_opts: dict | None = None,
    train_cfg: TrainConfig | None = None,
    workers: int = 1,
) -> list[RunRecord]:
    """All (data seed x repetition x estimator) fits for one setting.

    Data seeds run 1..n_data_seeds and model seeds 1..reps; both index the
    replication directly. Jobs may fan out over a process pool, one per data
    seed; the output order is independent of scheduling.
    """
    if n_data_seeds < 1 or reps < 1:
        raise ParameterError("need n_data_seeds >= 1 and reps >= 1")
    for name in estimators:
        if name not in ESTIMATORS:
            raise ParameterError(f"unknown estimator {name!r}; available: {sorted(ESTIMATORS)}")
    jobs = [
        (setting, data_seed, tuple(estimators), reps, model_opts, train_cfg)
        for data_seed in range(1, n_data_seeds + 1)
    ]
    if workers > 1 and len(jobs) > 1:
        with get_context("fork").Pool(min(workers, len(jobs))) as pool:
            chunks = pool.map(_run_one_data_seed, jobs)
    else:
        chunks = [_run_one_data_seed(job) for job in jobs]
    records = [rec for chunk in chunks for rec in chunk]
    records.sort(key=_record_key)
    return records


def default_workers() -> int:
    value = os.environ.get(WORKERS_ENV)
    if value:
        return max(1, int(value))
    return os.cpu_count() or 1


def sweep(
    settings: list[Setting],
    estimators=("m3e2", "ols"),
    n_data_seeds: int = 4,
    reps: int = 20,
    model_opts: dict | None = None,
    train_cfg: TrainConfig | None = None,
    workers: int | None = None,
) -> list[RunRecord]:
    """run_replications over a list of settings, merged in grid order."""
    workers = default_workers() if workers is None else workers
    records = []
    for setting in settings:
        records.extend(
            run_replications(setting, estimators, n_data_seeds, reps, model_opts, train_cfg, workers)
        )
    return records


# ---------------------------------------------------------------------------
# aggregation


@dataclass(frozen=True)
class AggregateRow:
    dataset: str
    setting: str
    estimator: str
    mean_mae: float
    ci95: float | None  # 1.96 * sd / sqrt(runs); None with fewer than 2 runs
    mean_runtime_s: float
    n_runs: int


def aggregate(records: list[RunRecord]) -> list[AggregateRow]:
    """Per-(setting, estimator) mean error with a 95% confidence half-width."""
    groups: dict[tuple, list[RunRecord]] = {}
    for rec in records:
        groups.setdefault((rec.setting, rec.estimator), []).append(rec)
    rows = []
    for (setting, estimator), group in sorted(groups.items()):
        maes = np.array([rec.mae for rec in group])
        if len(maes) >= 2:
            ci = float(1.96 * maes.std(ddof=1) / np.sqrt(len(maes)))
        else:
            ci = None
        dataset = group[0].dataset.split("_")[0]
        rows.append(
            AggregateRow(
                dataset=dataset,
                setting=setting,
                estimator=estimator,
                mean_mae=float(maes.mean()),
                ci95=ci,
                mean_runtime_s=float(np.mean([rec.runtime_s for rec in group])),
                n_runs=len(maes),
            )
        )
    return rows


# ---------------------------------------------------------------------------
# CSV interfaces


RESULTS_HEADER = "dataset,setting,data_seed,model_seed,estimator,k,tau_true,tau_hat,mae,runtime_s"
AGGREGATE_HEADER = "dataset,setting,estimator,mean_mae,ci95,mean_runtime_s,n_runs"


def write_results_csv(records: list[RunRecord], path, zero_runtime: bool = False) -> Path:
    """One row per treatment per run; the run-level mae repeats on each row.

    ``zero_runtime`` writes 0.0 in the wall-clock column so two sweeps with
    equal seeds produce byte-identical files.
    """
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(RESULTS_HEADER + "\n")
        for rec in records:
            runtime = 0.0 if zero_runtime else rec.runtime_s
            for k in range(len(rec.tau_true)):
                fh.write(
                    f"{rec.dataset},{rec.setting},{rec.data_seed},{rec.model_seed},{rec.estimator},"
                    f"{k},{rec.tau_true[k]!r},{rec.tau_hat[k]!r},{rec.mae!r},{runtime!r}\n"
                )
    return path


def read_results_csv(path) -> list[RunRecord]:
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != RESULTS_HEADER.split(","):
            raise ParameterError(f"{path}: unexpected results header {reader.fieldnames}")
        runs: dict[tuple, dict] = {}
        for row in reader:
            key = (row["dataset"], row["setting"], int(row["data_seed"]), int(row["model_seed"]), row["estimator"])
            run = runs.setdefault(key, {"taus": {}, "mae": float(row["mae"]), "runtime": float(row["runtime_s"])})
            run["taus"][int(row["k"])] = (float(row["tau_true"]), float(row["tau_hat"]))
    records = []
    for (dataset, setting, data_seed, model_seed, estimator), run in runs.items():
        ks = sorted(run["taus"])
        records.append(
            RunRecord(
                dataset=dataset,
                setting=setting,
                data_seed=data_seed,
                model_seed=model_seed,
                estimator=estimator,
                tau_true=tuple(run["taus"][k][0] for k in ks),
                tau_hat=tuple(run["taus"][k][1] for k in ks),
                mae=run["mae"],
                runtime_s=run["runtime"],
            )
        )
    records.sort(key=_record_key)
    return records


def write_aggregate_csv(rows: list[AggregateRow], path) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(AGGREGATE_HEADER + "\n")
        for row in rows:
            ci = "" if row.ci95 is None else repr(row.ci95)
            fh.write(
                f"{row.dataset},{row.setting},{row.estimator},{row.mean_mae!r},{ci},"
                f"{row.mean_runtime_s!r},{row.n_runs}\n"
            )
    return path
