"""Multi-gate mixture-of-experts network for simultaneous treatment effects.

High-dimensional covariates are compressed by a linear autoencoder
(two-layer encoder and decoder with a relu between the layers); the latent
code concatenated with the low-dimensional covariates feeds a bank of
shared single-layer relu experts. Each treatment owns a softmax gate that
mixes the experts and a linear head whose output drives that treatment's
assignment prediction, so the head representation is pushed to carry
exactly the information relevant for the assignment. The final layer is
linear in the observed treatments plus the mean head output, and its
per-treatment coefficients are the estimated effects.

The training objective combines the outcome loss, one assignment loss per
treatment, the autoencoder reconstruction loss, and an L2 penalty on the
weight matrices, each with its own weight.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import engine
from .engine import Tensor, bce, col, concat_cols, matmul, mse, relu, rmse, sigmoid, softmax_rows, square, sum_all, transpose
from .errors import ParameterError, ShapeError
from .stats import SeededRng

KINDS = ("binary", "continuous")


@dataclass(frozen=True)
class M3E2Config:
    n_treat: int
    num_experts: int = 4
    units_exp: int = 4
    hidden1: int = 64
    hidden2: int = 8
    treatment_kind: str = "binary"
    outcome_kind: str = "continuous"
    loss_target: float = 1.0  # outcome loss weight
    loss_treat: float = 1.0  # summed assignment-loss weight
    loss_da: float = 1.0  # reconstruction loss weight
    loss_reg: float = 1.0  # L2 weight
    use_lvm: bool = True

    def __post_init__(self):
        if self.n_treat < 1 or self.num_experts < 1:
            raise ParameterError("need at least one treatment and one expert")
        if min(self.units_exp, self.hidden1, self.hidden2) < 1:
            raise ParameterError("layer widths must be >= 1")
        if min(self.loss_target, self.loss_treat, self.loss_da, self.loss_reg) < 0:
            raise ParameterError("loss weights must be >= 0")
        if self.treatment_kind not in KINDS or self.outcome_kind not in KINDS:
            raise ParameterError(f"treatment/outcome kind must be one of {KINDS}")


class M3E2Params:
    """All trainable tensors of one network, addressable by name."""

    def __init__(self, cfg: M3E2Config, c_low: int, c_high: int, tensors: dict[str, Tensor]):
        self.cfg = cfg
        self.c_low = c_low
        self.c_high = c_high
        self.tensors = tensors

    @property
    def has_lvm(self) -> bool:
        return self.cfg.use_lvm and self.c_high > 0

    @property
    def expert_width(self) -> int:
        """Width of the expert/gate input: latent code plus x_low columns."""
        return (self.cfg.hidden2 if self.has_lvm else self.c_high) + self.c_low

    def named(self) -> dict[str, Tensor]:
        return self.tensors

    def weight_names(self) -> list[str]:
        return [n for n in self.tensors if not n.endswith("_b")]

    def size(self) -> int:
        return sum(t.data.size for t in self.tensors.values())


def init_params(cfg: M3E2Config, c_low: int, c_high: int, rng: SeededRng) -> M3E2Params:
    """Uniform(-a, a) weights with a = sqrt(6/(fan_in+fan_out)); zero biases.

    The outcome layer starts at zero so the effect estimates start at zero.
    """
    if c_low < 0 or c_high < 0 or c_low + c_high == 0:
        raise ParameterError("need at least one covariate column")
    tensors: dict[str, Tensor] = {}

    def glorot(name, fan_in, fan_out):
        a = np.sqrt(6.0 / (fan_in + fan_out))
        tensors[name] = Tensor(rng.gen.uniform(-a, a, size=(fan_in, fan_out)), trainable=True)

    def zeros(name, shape):
        tensors[name] = Tensor(np.zeros(shape), trainable=True)

    use_lvm = cfg.use_lvm and c_high > 0
    if use_lvm:
        glorot("enc1_w", c_high, cfg.hidden1)
        zeros("enc1_b", (1, cfg.hidden1))
        glorot("enc2_w", cfg.hidden1, cfg.hidden2)
        zeros("enc2_b", (1, cfg.hidden2))
        glorot("dec1_w", cfg.hidden2, cfg.hidden1)
        zeros("dec1_b", (1, cfg.hidden1))
        glorot("dec2_w", cfg.hidden1, c_high)
        zeros("dec2_b", (1, c_high))
    d = (cfg.hidden2 if use_lvm else c_high) + c_low
    for e in range(cfg.num_experts):
        glorot(f"exp{e}_w", d, cfg.units_exp)
        zeros(f"exp{e}_b", (1, cfg.units_exp))
    for k in range(cfg.n_treat):
        # gate weights are stored experts x input-width
        a = np.sqrt(6.0 / (d + cfg.num_experts))
        tensors[f"gate{k}"] = Tensor(rng.gen.uniform(-a, a, size=(cfg.num_experts, d)), trainable=True)
        glorot(f"head{k}_w", cfg.units_exp, 1)
        zeros(f"head{k}_b", (1, 1))
    zeros("out_w", (cfg.n_treat + 1, 1))
    zeros("out_b", (1, 1))
    return M3E2Params(cfg, c_low, c_high, tensors)


def _const(x, width_hint=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def _shared_pass(params: M3E2Params, x_low, x_high) -> dict:
    cfg = params.cfg
    p = params.tensors
    x_low = _const(x_low)
    x_high = _const(x_high)
    if x_low.cols != params.c_low or x_high.cols != params.c_high:
        raise ShapeError(
            f"covariate widths ({x_low.cols}, {x_high.cols}) do not match the "
            f"parameters ({params.c_low}, {params.c_high})"
        )

    x_rec = None
    if params.has_lvm:
        latent = matmul(relu(matmul(x_high, p["enc1_w"]) + p["enc1_b"]), p["enc2_w"]) + p["enc2_b"]
        x_rec = matmul(relu(matmul(latent, p["dec1_w"]) + p["dec1_b"]), p["dec2_w"]) + p["dec2_b"]
        expert_in = concat_cols([latent, x_low]) if params.c_low else latent
    else:
        blocks = [b for b in (x_high, x_low) if b.cols > 0]
        expert_in = concat_cols(blocks) if len(blocks) > 1 else blocks[0]

    experts = [relu(matmul(expert_in, p[f"exp{e}_w"]) + p[f"exp{e}_b"]) for e in range(cfg.num_experts)]

    gates, scores, props = [], [], []
    for k in range(cfg.n_treat):
        gate = softmax_rows(matmul(expert_in, transpose(p[f"gate{k}"])))
        gates.append(gate)
        mix = mul_mix(gate, experts)
        score = matmul(mix, p[f"head{k}_w"]) + p[f"head{k}_b"]
        scores.append(score)
        props.append(sigmoid(score) if cfg.treatment_kind == "binary" else score)

    pooled = scores[0]
    for score in scores[1:]:
        pooled = pooled + score
    pooled = pooled * (1.0 / cfg.n_treat)
    return {"p_hat": props, "scores": scores, "gates": gates, "pooled": pooled, "x_rec": x_rec}


def mul_mix(gate: Tensor, experts: list[Tensor]) -> Tensor:
    """Per-sample convex combination of the expert outputs."""
    mix = engine.mul(col(gate, 0), experts[0])
    for e in range(1, len(experts)):
        mix = mix + engine.mul(col(gate, e), experts[e])
    return mix


def _outcome(params: M3E2Params, t_observed: Tensor, pooled: Tensor) -> Tensor:
    stacked = concat_cols([t_observed, pooled])
    return matmul(stacked, params.tensors["out_w"]) + params.tensors["out_b"]


def forward(params: M3E2Params, x_low, x_high, t_observed) -> dict:
    """Full training-time pass.

    Returns y_hat, the per-treatment assignment predictions p_hat, the
    reconstruction x_rec (None without the autoencoder), the pooled head
    output, and the gate matrices.
    """
    t_observed = _const(t_observed)
    if t_observed.cols != params.cfg.n_treat:
        raise ShapeError(f"treatment matrix has {t_observed.cols} columns, expected {params.cfg.n_treat}")
    out = _shared_pass(params, x_low, x_high)
    out["y_hat"] = _outcome(params, t_observed, out["pooled"])
    return out


def total_loss(outputs: dict, y, t_observed, x_high, params: M3E2Params) -> tuple[Tensor, dict]:
    """Weighted sum of the four loss components for one batch.

    Returns the taped scalar plus a dict of the component values. The L2
    term divides by the batch size and covers weight matrices only.
    """
    cfg = params.cfg
    y = _const(y)
    t_observed = _const(t_observed)
    x_high = _const(x_high)
    n = y.rows

    if cfg.outcome_kind == "continuous":
        loss_y = rmse(outputs["y_hat"], y)
    else:
        # raw outcome scores are logits; squash before the cross-entropy
        loss_y = bce(sigmoid(outputs["y_hat"]), y)

    loss_t = None
    for k in range(cfg.n_treat):
        target = col(t_observed, k)
        if cfg.treatment_kind == "binary":
            term = bce(outputs["p_hat"][k], target)
        else:
            term = rmse(outputs["p_hat"][k], target)
        loss_t = term if loss_t is None else loss_t + term

    loss_a = mse(outputs["x_rec"], x_high) if outputs["x_rec"] is not None else None

    reg = None
    for name in params.weight_names():
        term = sum_all(square(params.tensors[name]))
        reg = term if reg is None else reg + term
    reg = reg * (cfg.loss_reg / (2.0 * n))

    total = loss_y * cfg.loss_target + loss_t * cfg.loss_treat + reg
    if loss_a is not None:
        total = total + loss_a * cfg.loss_da
    parts = {
        "loss_y": loss_y.item(),
        "loss_t": loss_t.item(),
        "loss_a": loss_a.item() if loss_a is not None else 0.0,
        "loss_reg": reg.item(),
    }
    return total, parts


def extract_tau(params: M3E2Params) -> np.ndarray:
    """Estimated effect of each treatment: the treatment coefficients of the outcome layer."""
    return params.tensors["out_w"].data[: params.cfg.n_treat, 0].copy()


def predict(params: M3E2Params, x_low, x_high, t_observed=None) -> np.ndarray:
    """Outcome prediction; untaped.

    Without observed treatments the assignment predictions stand in
    (thresholded at 0.5 for binary treatments).
    """
    with engine.no_grad():
        rep = _shared_pass(params, x_low, x_high)
        if t_observed is None:
            cols = [p.data for p in rep["p_hat"]]
            if params.cfg.treatment_kind == "binary":
                cols = [(c > 0.5).astype(np.float64) for c in cols]
            t_observed = Tensor(np.concatenate(cols, axis=1))
        else:
            t_observed = _const(t_observed)
        y_hat = _outcome(params, t_observed, rep["pooled"])
    return y_hat.data[:, 0].copy()


# ---------------------------------------------------------------------------
# checkpointing


def save_checkpoint(params: M3E2Params, path) -> tuple[Path, Path]:
    """Binary dump of the named tensors plus a JSON manifest; bit-exact on reload."""
    path = Path(path)
    np.savez(path, **{name: t.data for name, t in params.tensors.items()})
    if path.suffix != ".npz":
        path = path.with_suffix(path.suffix + ".npz")
    manifest_path = path.with_suffix(".manifest.json")
    manifest = {
        "names": list(params.tensors),
        "shapes": {name: list(t.data.shape) for name, t in params.tensors.items()},
        "config": asdict(params.cfg),
        "c_low": params.c_low,
        "c_high": params.c_high,
    }
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path, manifest_path


def load_checkpoint(path) -> M3E2Params:
    path = Path(path)
    manifest_path = path.with_suffix(".manifest.json")
    with open(manifest_path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    cfg = M3E2Config(**manifest["config"])
    with np.load(path) as arrays:
        tensors = {name: Tensor(arrays[name], trainable=True) for name in manifest["names"]}
    return M3E2Params(cfg, manifest["c_low"], manifest["c_high"], tensors)
