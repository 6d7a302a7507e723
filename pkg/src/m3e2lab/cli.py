"""Config-driven command line: generate datasets, train, sweep the grid, report.

Configs are YAML with four blocks (dataset, model, train, replication); the
schema is strict, so unknown keys and invalid enum values are rejected
rather than silently ignored. Replication counts double as seeds: four
dataset replications use data seeds 1, 2, 3, 4, and the model repetitions
use model seeds 1..B the same way.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import yaml

from . import harness, model
from .datagen import CopulaConfig, GwasConfig, gen_copula, gen_gwas, load_single_treatment_csv, save_dataset_csv
from .errors import ConfigError
from .stats import SeededRng

DATASET_KINDS = ("gwas", "copula", "csv")
TYPE_VALUES = ("binary", "continuous")
SETTING_LETTERS = ("a", "b", "c", "d", "e")

LOSS_HISTORY_HEADER = "epoch,loss,loss_y,loss_t,loss_a,loss_reg,val_loss"


@dataclass(frozen=True)
class DatasetBlock:
    name: str
    n: int | None = None
    n_cov: int | None = None
    n_treat: int | None = None
    seed: int = 1
    v_gene: float = 0.4
    v_group: float = 0.4
    v_noise: float = 0.2
    sigma_t: float = 1.0
    sigma_y: float = 0.5
    gamma: float = 1.0
    b: tuple | None = None
    path: str | None = None


@dataclass(frozen=True)
class ModelBlock:
    num_exp: int = 4
    units_exp: int = 4
    hidden1: int = 64
    hidden2: int = 8
    type_treatment: str = "binary"
    type_target: str = "continuous"
    loss_target: float = 1.0
    loss_da: float = 1.0
    loss_treat: float = 1.0
    loss_reg: float = 1.0
    use_lvm: bool = True


@dataclass(frozen=True)
class TrainBlock:
    lr: float = 1e-3
    batch: int = 200
    epochs: int = 100
    optimizer: str = "adam"


@dataclass(frozen=True)
class ReplicationBlock:
    n_data_seeds: int = 4
    b: int = 20
    out_dir: str = "results"
    settings: tuple = SETTING_LETTERS
    estimators: tuple = ("m3e2", "ols")
    zero_runtime: bool = False


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetBlock
    model: ModelBlock
    train: TrainBlock
    replication: ReplicationBlock


_DATASET_KEYS = {
    "gwas": {"name", "n", "n_cov", "n_treat", "seed", "v_gene", "v_group", "v_noise"},
    "copula": {"name", "n", "n_cov", "n_treat", "seed", "sigma_t", "sigma_y", "gamma", "b"},
    "csv": {"name", "path"},
}
_DATASET_REQUIRED = {"gwas": {"n", "n_cov", "n_treat"}, "copula": {"n"}, "csv": {"path"}}
_TYPE_DEFAULTS = {
    "gwas": ("binary", "continuous"),
    "copula": ("continuous", "continuous"),
    "csv": ("binary", "continuous"),
}


def _check_keys(block: dict, allowed: set, where: str):
    unknown = sorted(set(block) - allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")


def _require(block: dict, keys: set, where: str):
    missing = sorted(keys - set(block))
    if missing:
        raise ConfigError(f"missing required key(s) in {where}: {', '.join(missing)}")


def _check_enum(value, allowed, where: str):
    if value not in allowed:
        raise ConfigError(f"{where} must be one of {list(allowed)}, got {value!r}")
    return value


def parse_config(path) -> ExperimentConfig:
    """Load and validate a YAML experiment config, filling documented defaults."""
    with open(path, encoding="utf-8") as fh:
        raw = yaml.safe_load(fh)
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    _check_keys(raw, {"dataset", "model", "train", "replication"}, "config")
    _require(raw, {"dataset"}, "config")

    ds_raw = dict(raw["dataset"] or {})
    _require(ds_raw, {"name"}, "dataset")
    name = _check_enum(ds_raw["name"], DATASET_KINDS, "dataset.name")
    _check_keys(ds_raw, _DATASET_KEYS[name], "dataset")
    _require(ds_raw, _DATASET_REQUIRED[name], "dataset")
    if "b" in ds_raw and ds_raw["b"] is not None:
        ds_raw["b"] = tuple(float(v) for v in ds_raw["b"])
    dataset = DatasetBlock(**ds_raw)

    model_raw = dict(raw.get("model") or {})
    _check_keys(model_raw, {f.name for f in ModelBlock.__dataclass_fields__.values()}, "model")
    default_treatment, default_target = _TYPE_DEFAULTS[name]
    model_raw.setdefault("type_treatment", default_treatment)
    model_raw.setdefault("type_target", default_target)
    model_block = ModelBlock(**model_raw)
    _check_enum(model_block.type_treatment, TYPE_VALUES, "model.type_treatment")
    _check_enum(model_block.type_target, TYPE_VALUES, "model.type_target")

    train_raw = dict(raw.get("train") or {})
    _check_keys(train_raw, {f.name for f in TrainBlock.__dataclass_fields__.values()}, "train")
    train_block = TrainBlock(**train_raw)
    _check_enum(train_block.optimizer, ("sgd", "adam"), "train.optimizer")

    rep_raw = dict(raw.get("replication") or {})
    _check_keys(rep_raw, {f.name for f in ReplicationBlock.__dataclass_fields__.values()}, "replication")
    if "settings" in rep_raw:
        rep_raw["settings"] = tuple(rep_raw["settings"])
    if "estimators" in rep_raw:
        rep_raw["estimators"] = tuple(rep_raw["estimators"])
    rep_block = ReplicationBlock(**rep_raw)
    for letter in rep_block.settings:
        _check_enum(letter, SETTING_LETTERS, "replication.settings entry")
    for est in rep_block.estimators:
        _check_enum(est, tuple(harness.ESTIMATORS), "replication.estimators entry")

    return ExperimentConfig(dataset=dataset, model=model_block, train=train_block, replication=rep_block)


def write_config(cfg: ExperimentConfig, path) -> Path:
    """Serialize a config so that parse_config reads it back equal."""
    ds = {k: v for k, v in asdict(cfg.dataset).items() if k in _DATASET_KEYS[cfg.dataset.name] and v is not None}
    if "b" in ds:
        ds["b"] = list(ds["b"])
    rep = asdict(cfg.replication)
    rep["settings"] = list(rep["settings"])
    rep["estimators"] = list(rep["estimators"])
    payload = {"dataset": ds, "model": asdict(cfg.model), "train": asdict(cfg.train), "replication": rep}
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(payload, fh, sort_keys=True)
    return path


# ---------------------------------------------------------------------------
# commands


def _build_dataset(cfg: ExperimentConfig):
    ds = cfg.dataset
    if ds.name == "gwas":
        return gen_gwas(
            GwasConfig(
                n=ds.n, n_cov=ds.n_cov, n_treat=ds.n_treat, v_gene=ds.v_gene, v_group=ds.v_group,
                v_noise=ds.v_noise, seed=ds.seed,
            )
        )
    if ds.name == "copula":
        kwargs = dict(n=ds.n, seed=ds.seed, sigma_t=ds.sigma_t, sigma_y=ds.sigma_y, gamma=ds.gamma)
        if ds.n_cov is not None:
            kwargs["s"] = ds.n_cov
        if ds.n_treat is not None:
            kwargs["k"] = ds.n_treat
        if ds.b is not None:
            kwargs["b"] = ds.b
        if "k" in kwargs and ds.b is None:
            kwargs["b"] = tuple(1.0 for _ in range(kwargs["k"]))
        return gen_copula(CopulaConfig(**kwargs))
    return load_single_treatment_csv(ds.path)


def _cmd_generate(cfg: ExperimentConfig, out_dir: Path) -> list[Path]:
    if cfg.dataset.name == "csv":
        raise ConfigError("generate needs a synthetic dataset (gwas or copula)")
    ds = _build_dataset(cfg)
    csv_path, meta_path = save_dataset_csv(ds, out_dir / f"{ds.name}.csv", asdict(cfg.dataset))
    return [csv_path, meta_path]


def _cmd_train(cfg: ExperimentConfig, out_dir: Path) -> list[Path]:
    ds = _build_dataset(cfg)
    mb = cfg.model
    m3e2_cfg = model.M3E2Config(
        n_treat=ds.n_treat,
        num_experts=mb.num_exp,
        units_exp=mb.units_exp,
        hidden1=mb.hidden1,
        hidden2=mb.hidden2,
        treatment_kind=mb.type_treatment,
        outcome_kind=mb.type_target,
        loss_target=mb.loss_target,
        loss_treat=mb.loss_treat,
        loss_da=mb.loss_da,
        loss_reg=mb.loss_reg,
        use_lvm=mb.use_lvm,
    )
    train_cfg = harness.TrainConfig(
        lr=cfg.train.lr, batch_size=cfg.train.batch, epochs=cfg.train.epochs,
        optimizer=cfg.train.optimizer, model_seed=1,
    )
    params = model.init_params(m3e2_cfg, ds.x_low.shape[1], ds.x_high.shape[1], SeededRng(train_cfg.model_seed))
    params, history = harness.train(params, ds, train_cfg)
    ckpt_path, manifest_path = model.save_checkpoint(params, out_dir / "checkpoint.npz")
    history_path = out_dir / "loss_history.csv"
    with open(history_path, "w", encoding="utf-8") as fh:
        fh.write(LOSS_HISTORY_HEADER + "\n")
        for row in history:
            fh.write(
                f"{row['epoch']},{row['loss']!r},{row['loss_y']!r},{row['loss_t']!r},"
                f"{row['loss_a']!r},{row['loss_reg']!r},{row['val_loss']!r}\n"
            )
    return [ckpt_path, manifest_path, history_path]


def _cmd_sweep(cfg: ExperimentConfig, out_dir: Path) -> list[Path]:
    rep = cfg.replication
    settings = [s for s in harness.default_grid() if s.id.split("-")[0] in rep.settings]
    mb = cfg.model
    model_opts = {
        "num_experts": mb.num_exp, "units_exp": mb.units_exp, "hidden1": mb.hidden1, "hidden2": mb.hidden2,
        "loss_target": mb.loss_target, "loss_treat": mb.loss_treat, "loss_da": mb.loss_da,
        "loss_reg": mb.loss_reg, "use_lvm": mb.use_lvm,
    }
    train_cfg = harness.TrainConfig(
        lr=cfg.train.lr, batch_size=cfg.train.batch, epochs=cfg.train.epochs, optimizer=cfg.train.optimizer
    )
    records = harness.sweep(
        settings, rep.estimators, n_data_seeds=rep.n_data_seeds, reps=rep.b,
        model_opts=model_opts, train_cfg=train_cfg,
    )
    return [harness.write_results_csv(records, out_dir / "results.csv", zero_runtime=rep.zero_runtime)]


def _cmd_report(cfg: ExperimentConfig, out_dir: Path) -> list[Path]:
    results_path = out_dir / "results.csv"
    if not results_path.exists():
        raise ConfigError(f"no results file at {results_path}; run sweep first")
    records = harness.read_results_csv(results_path)
    if not records:
        raise ConfigError(f"no records in {results_path}")
    rows = harness.aggregate(records)
    return [harness.write_aggregate_csv(rows, out_dir / "aggregate.csv")]


_COMMANDS = {"generate": _cmd_generate, "train": _cmd_train, "sweep": _cmd_sweep, "report": _cmd_report}


def dispatch(command: str, cfg: ExperimentConfig, out_dir=None) -> int:
    """Run one command; returns 0 iff all artifacts were written."""
    if command not in _COMMANDS:
        print(f"unknown command {command!r}", file=sys.stderr)
        return 2
    out = Path(out_dir) if out_dir is not None else Path(cfg.replication.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        artifacts = _COMMANDS[command](cfg, out)
    except Exception as exc:  # surface the path/cause, fail nonzero
        print(f"{command} failed: {exc}", file=sys.stderr)
        return 1
    for artifact in artifacts:
        print(artifact)
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="m3e2lab", description="Multi-treatment effect estimation lab")
    parser.add_argument("command", choices=sorted(_COMMANDS))
    parser.add_argument("--config", required=True, help="YAML experiment config")
    parser.add_argument("--out", default=None, help="output directory (overrides replication.out_dir)")
    parser.add_argument("--data-seeds", type=int, default=None, help="override replication.n_data_seeds")
    parser.add_argument("--reps", type=int, default=None, help="override replication.b")
    args = parser.parse_args(argv)
    try:
        cfg = parse_config(args.config)
    except (ConfigError, OSError, yaml.YAMLError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    if args.data_seeds is not None:
        cfg = replace(cfg, replication=replace(cfg.replication, n_data_seeds=args.data_seeds))
    if args.reps is not None:
        cfg = replace(cfg, replication=replace(cfg.replication, b=args.reps))
    return dispatch(args.command, cfg, out_dir=args.out)


if __name__ == "__main__":
    sys.exit(main())
