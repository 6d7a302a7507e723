"""Synthetic benchmark generators with known treatment effects, plus file ingestion.

Two generators are provided. The GWAS-style generator simulates binary
SNP covariates from a low-rank allele-frequency model, picks a handful of
causal columns as treatments, and builds a continuous outcome from the
causal signal, a cluster-level intercept, and heteroscedastic noise, with
the three parts rescaled to fixed variance shares. The copula-style
generator draws a latent confounder as the first principal-component score
of independent normals, loads four continuous treatments on it, and maps
them through a fixed nonlinear outcome formula whose average partial
derivatives (the ground-truth effects) are evaluated by a seeded
Monte-Carlo oracle.

A CSV loader ingests external single-treatment benchmarks, and
``single_treatment_view`` re-expresses one treatment of a multi-treatment
dataset as the only treatment, moving the others into the covariates.
"""

from __future__ import annotations

import csv
import json
import re
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .errors import DataFormatError, ParameterError, UnsupportedError
from .stats import SeededRng, first_pc_scores, kmeans, pca_components, sample, stddev

GWAS_BASE_ROWS = 200
GWAS_BASE_COMPONENTS = 3
GWAS_FREQ_CLIP = (0.01, 0.99)
TAU_ORACLE_SEED = 20_240_001
TAU_ORACLE_DRAWS = 1_000_000
TAU_ORACLE_STEP = 1e-3


@dataclass(frozen=True)
class Dataset:
    """One benchmark instance: covariate splits, treatments, outcome, truth."""

    x_low: np.ndarray
    x_high: np.ndarray
    t: np.ndarray
    y: np.ndarray
    tau_true: np.ndarray
    treatment_kind: str
    outcome_kind: str
    name: str

    def __post_init__(self):
        n = self.y.shape[0]
        if self.x_low.shape[0] != n or self.x_high.shape[0] != n or self.t.shape[0] != n:
            raise ParameterError("all dataset blocks must have the same number of rows")
        if self.t.ndim != 2 or self.t.shape[1] < 1:
            raise ParameterError("treatment matrix must be n x K with K >= 1")
        if self.treatment_kind == "binary" and not np.isin(self.t, (0.0, 1.0)).all():
            raise ParameterError("binary treatments must contain only 0/1")
        if self.tau_true.shape != (self.t.shape[1],) or not np.isfinite(self.tau_true).all():
            raise ParameterError("tau_true must be a finite length-K vector")

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def n_treat(self) -> int:
        return self.t.shape[1]


@dataclass(frozen=True)
class GwasConfig:
    n: int
    n_cov: int
    n_treat: int
    v_gene: float = 0.4
    v_group: float = 0.4
    v_noise: float = 0.2
    seed: int = 1

    def __post_init__(self):
        if abs(self.v_gene + self.v_group + self.v_noise - 1.0) > 1e-9:
            raise ParameterError("variance shares v_gene + v_group + v_noise must sum to 1")
        if min(self.v_gene, self.v_group, self.v_noise) <= 0:
            raise ParameterError("variance shares must be positive")
        if not self.n_treat < self.n_cov:
            raise ParameterError(f"n_treat ({self.n_treat}) must be < n_cov ({self.n_cov})")
        if self.n < 3:
            raise ParameterError("n must be at least 3 (three outcome clusters)")
        if self.n_treat < 1:
            raise ParameterError("n_treat must be >= 1")


@dataclass(frozen=True)
class CopulaConfig:
    n: int
    s: int = 10
    k: int = 4
    sigma_t: float = 1.0
    sigma_y: float = 0.5
    gamma: float = 1.0
    b: tuple = field(default=(1.0, 1.0, 1.0, 1.0))

    seed: int = 1

    def __post_init__(self):
        if self.sigma_t <= 0:
            raise ParameterError("sigma_t must be > 0")
        if self.sigma_y < 0 or self.gamma < 0:
            raise ParameterError("sigma_y and gamma must be >= 0")
        if self.n < 2 or self.s < 1:
            raise ParameterError("need n >= 2 and s >= 1")
        object.__setattr__(self, "b", tuple(float(v) for v in self.b))
        if len(self.b) != self.k:
            raise ParameterError(f"b must have one loading per treatment ({self.k})")


# ---------------------------------------------------------------------------
# GWAS-style generator


def _gwas_base_matrix(n_cov: int, rng: SeededRng) -> np.ndarray:
    # low-rank base: principal axes of a seeded normal matrix, plus an
    # intercept row of ones (the real reference panel is not shipped)
    raw = sample(rng, ("normal", 0.0, 1.0), GWAS_BASE_ROWS * n_cov).reshape(GWAS_BASE_ROWS, n_cov)
    comps = pca_components(raw, GWAS_BASE_COMPONENTS)
    return np.vstack([comps, np.ones(n_cov)])


def gwas_components(cfg: GwasConfig) -> dict:
    """Run the generator and expose its internal pieces alongside the dataset."""
    rng = SeededRng(cfg.seed)
    base = _gwas_base_matrix(cfg.n_cov, rng)

    loadings = np.empty((cfg.n, base.shape[0]))
    loadings[:, :GWAS_BASE_COMPONENTS] = 0.9 * sample(
        rng, ("uniform", 0.0, 0.5), cfg.n * GWAS_BASE_COMPONENTS
    ).reshape(cfg.n, GWAS_BASE_COMPONENTS)
    loadings[:, GWAS_BASE_COMPONENTS] = 0.05

    freq = np.clip(loadings @ base, *GWAS_FREQ_CLIP)
    x = sample(rng, ("binomial", freq.ravel()), freq.size).reshape(cfg.n, cfg.n_cov)

    treat_cols = np.sort(rng.gen.choice(cfg.n_cov, size=cfg.n_treat, replace=False))
    tau = np.zeros(cfg.n_cov)
    tau[treat_cols] = sample(rng, ("normal", 0.0, 0.5), cfg.n_treat)

    signal = x @ tau

    clusters = kmeans(x, 3, rng)
    group_base = sample(rng, ("normal", 0.0, 1.0), 3)
    group = group_base[clusters]
    cluster_sd = sample(rng, ("inv_gamma", 3.0, 1.0), 3)
    noise = rng.gen.normal(0.0, cluster_sd[clusters])

    # rescale intercepts and noise to the configured variance shares
    signal_sd = stddev(signal)
    group = (signal_sd / np.sqrt(cfg.v_gene)) * (np.sqrt(cfg.v_group) / stddev(group)) * group
    noise = (signal_sd / np.sqrt(cfg.v_gene)) * (np.sqrt(cfg.v_noise) / stddev(noise)) * noise

    y = signal + group + noise

    keep = np.setdiff1d(np.arange(cfg.n_cov), treat_cols)
    ds = Dataset(
        x_low=np.empty((cfg.n, 0)),
        x_high=x[:, keep],
        t=x[:, treat_cols],
        y=y,
        tau_true=tau[treat_cols],
        treatment_kind="binary",
        outcome_kind="continuous",
        name=f"gwas_n{cfg.n}_c{cfg.n_cov}_k{cfg.n_treat}_s{cfg.seed}",
    )
    return {
        "dataset": ds,
        "freq": freq,
        "tau_full": tau,
        "treat_cols": treat_cols,
        "signal": signal,
        "group": group,
        "noise": noise,
        "clusters": clusters,
    }


def gen_gwas(cfg: GwasConfig) -> Dataset:
    """Simulate the SNP benchmark; treatments are removed from the covariates."""
    return gwas_components(cfg)["dataset"]


# ---------------------------------------------------------------------------
# copula-style generator


def _copula_outcome_from_treatments(t: np.ndarray) -> np.ndarray:
    t1, t2, t3, t4 = t[:, 0], t[:, 1], t[:, 2], t[:, 3]
    return 3.0 * t1 - t2 + np.where(t3 > 0, t3, 0.7 * t3) - 0.06 * t4 - 4.0 * t1**2


def _copula_treatments(cfg: CopulaConfig, n: int, rng: SeededRng) -> tuple[np.ndarray, np.ndarray]:
    u = sample(rng, ("normal", 0.0, 1.0), n * cfg.s).reshape(n, cfg.s)
    c = first_pc_scores(u)
    noise = sample(rng, ("normal", 0.0, cfg.sigma_t), n * cfg.k).reshape(n, cfg.k)
    t = np.outer(c, np.asarray(cfg.b)) + noise
    return u, c, t


@lru_cache(maxsize=32)
def copula_tau_oracle(
    s: int, k: int, sigma_t: float, b: tuple, draws: int = TAU_ORACLE_DRAWS, step: float = TAU_ORACLE_STEP
) -> tuple:
    """Average partial derivative of the outcome formula for each treatment.

    Monte-Carlo estimate with central differences, on a fixed seed so the
    ground truth is a property of the generating process, not of any one
    sampled dataset. The confounder score of independent standard-normal
    sources is itself standard normal along the principal axis, so the
    oracle draws it directly.
    """
    if k != 4:
        raise UnsupportedError(
            "the outcome formula 3*t1 - t2 + kinked t3 - 0.06*t4 - 4*t1^2 is defined for exactly 4 treatments"
        )
    rng = SeededRng(TAU_ORACLE_SEED)
    c = sample(rng, ("normal", 0.0, 1.0), draws)
    noise = sample(rng, ("normal", 0.0, sigma_t), draws * k).reshape(draws, k)
    t = np.outer(c, np.asarray(b, dtype=np.float64)) + noise
    taus = []
    for j in range(k):
        bumped = t.copy()
        bumped[:, j] += step
        plus = _copula_outcome_from_treatments(bumped)
        bumped[:, j] -= 2.0 * step
        minus = _copula_outcome_from_treatments(bumped)
        taus.append(float(np.mean((plus - minus) / (2.0 * step))))
    return tuple(taus)


def copula_components(cfg: CopulaConfig) -> dict:
    """Run the generator and expose its internal pieces alongside the dataset."""
    if cfg.k != 4:
        raise UnsupportedError(
            "the outcome formula 3*t1 - t2 + kinked t3 - 0.06*t4 - 4*t1^2 is defined for exactly 4 treatments"
        )
    rng = SeededRng(cfg.seed)
    u, c, t = _copula_treatments(cfg, cfg.n, rng)
    if cfg.sigma_y > 0:
        y_noise = sample(rng, ("normal", 0.0, cfg.sigma_y), cfg.n)
    else:
        y_noise = np.zeros(cfg.n)
    y_conf = cfg.gamma * c
    y_treat = _copula_outcome_from_treatments(t)
    tau = np.array(copula_tau_oracle(cfg.s, cfg.k, cfg.sigma_t, cfg.b))
    ds = Dataset(
        x_low=u,
        x_high=np.empty((cfg.n, 0)),
        t=t,
        y=y_noise + y_conf + y_treat,
        tau_true=tau,
        treatment_kind="continuous",
        outcome_kind="continuous",
        name=f"copula_n{cfg.n}_c{cfg.s}_k{cfg.k}_s{cfg.seed}",
    )
    return {"dataset": ds, "confounder": c, "y_noise": y_noise, "y_conf": y_conf, "y_treat": y_treat}


def gen_copula(cfg: CopulaConfig) -> Dataset:
    """Simulate the continuous-treatment benchmark with a nonlinear outcome."""
    return copula_components(cfg)["dataset"]


# ---------------------------------------------------------------------------
# external single-treatment files


_X_COL = re.compile(r"^x(\d+)$")


def load_single_treatment_csv(path) -> Dataset:
    """Load a `t,y,mu0,mu1,x0..x{p-1}` file as a K=1 dataset.

    The ground-truth effect is mean(mu1 - mu0). Covariates go to x_low.
    """
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        rows = list(reader)

    missing = [c for c in ("t", "y", "mu0", "mu1") if c not in header]
    x_indices = sorted(int(m.group(1)) for h in header if (m := _X_COL.match(h)))
    if x_indices != list(range(len(x_indices))):
        gaps = sorted(set(range(max(x_indices) + 1)) - set(x_indices)) if x_indices else []
        missing.extend(f"x{i}" for i in gaps)
    if not x_indices:
        missing.append("x0")
    if missing:
        raise DataFormatError(f"{path}: missing column(s): {', '.join(missing)}")
    if not rows:
        raise DataFormatError(f"{path}: no data rows")

    col_of = {name: header.index(name) for name in header}
    data = np.empty((len(rows), len(header)))
    for i, row in enumerate(rows):
        line_no = i + 2  # 1-based, after the header line
        if len(row) != len(header):
            raise DataFormatError(f"{path}: row {line_no} has {len(row)} fields, expected {len(header)}")
        for j, cell in enumerate(row):
            try:
                data[i, j] = float(cell)
            except ValueError:
                raise DataFormatError(f"{path}: row {line_no}: non-numeric value {cell!r}") from None

    t = data[:, col_of["t"]].reshape(-1, 1)
    y = data[:, col_of["y"]]
    tau = float(np.mean(data[:, col_of["mu1"]] - data[:, col_of["mu0"]]))
    x_low = data[:, [col_of[f"x{i}"] for i in x_indices]]
    kind = "binary" if np.isin(t, (0.0, 1.0)).all() else "continuous"
    return Dataset(
        x_low=x_low,
        x_high=np.empty((len(rows), 0)),
        t=t,
        y=y,
        tau_true=np.array([tau]),
        treatment_kind=kind,
        outcome_kind="continuous",
        name=path.stem,
    )


def single_treatment_view(ds: Dataset, k: int) -> Dataset:
    """Dataset where treatment ``k`` is the only treatment.

    The remaining treatment columns are appended to x_low, so single-treatment
    estimators can condition on them as covariates.
    """
    if not 0 <= k < ds.n_treat:
        raise ParameterError(f"treatment index {k} out of range for K={ds.n_treat}")
    if ds.n_treat == 1:
        return ds
    others = [j for j in range(ds.n_treat) if j != k]
    return Dataset(
        x_low=np.concatenate([ds.x_low, ds.t[:, others]], axis=1),
        x_high=ds.x_high,
        t=ds.t[:, [k]],
        y=ds.y,
        tau_true=ds.tau_true[[k]],
        treatment_kind=ds.treatment_kind,
        outcome_kind=ds.outcome_kind,
        name=f"{ds.name}[t{k}]",
    )


# ---------------------------------------------------------------------------
# export


def _fmt(value: float) -> str:
    return repr(float(value))


def save_dataset_csv(ds: Dataset, csv_path, config_echo: dict | None = None) -> tuple[Path, Path]:
    """Write `y,t0..,xlow0..,xhigh0..` plus a JSON sidecar with the ground truth.

    Returns (csv path, metadata path). Output is byte-deterministic for a
    given dataset.
    """
    csv_path = Path(csv_path)
    header = (
        ["y"]
        + [f"t{j}" for j in range(ds.n_treat)]
        + [f"xlow{j}" for j in range(ds.x_low.shape[1])]
        + [f"xhigh{j}" for j in range(ds.x_high.shape[1])]
    )
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for i in range(ds.n):
            cells = [_fmt(ds.y[i])]
            cells += [_fmt(v) for v in ds.t[i]]
            cells += [_fmt(v) for v in ds.x_low[i]]
            cells += [_fmt(v) for v in ds.x_high[i]]
            fh.write(",".join(cells) + "\n")
    meta_path = csv_path.with_suffix(".meta.json")
    meta = {
        "name": ds.name,
        "tau_true": [float(v) for v in ds.tau_true],
        "treatment_kind": ds.treatment_kind,
        "outcome_kind": ds.outcome_kind,
        "n": ds.n,
        "n_treat": ds.n_treat,
        "config": config_echo or {},
    }
    with open(meta_path, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return csv_path, meta_path
