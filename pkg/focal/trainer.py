"""Model configuration, parameter initialisation, AdamW training with early stopping, evaluation."""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from focal import ndmath as nd
from focal.events import append_event
from focal.fusion import (
    BRANCH_MODES,
    FUSION_VARIANTS,
    RESIDUAL_VARIANTS,
    FocalParams,
    ForwardResult,
    GraphPlan,
    ModelShape,
    build_plan,
    focal_forward,
    param_specs,
)
from focal.hetgraph import HetGraph
from focal.objective import (
    AslConfig,
    MetricsReport,
    asl_loss,
    bce_loss,
    consistency_loss,
    metrics,
    metrics_to_dict,
    predict,
    total_loss,
)
from focal.settings import ConfigError, load_json_object, max_threads, merge_known, write_json
from focal.synthgen import DEFAULT_METAPATHS

LOSSES = ("asl", "bce")
ABLATION_MODES = (
    "full",
    "coa_only",
    "aoa_only",
    "single_gate",
    "sum_fusion",
    "concat_fusion",
    "fixed_residual",
    "no_asl",
    "no_consist",
)
SWEEP_KEYS = ("lambda_consist", "hidden_dim", "metapaths")
ALL_METAPATHS = "all"

DEFAULT_FOCAL: dict[str, Any] = {
    "hidden_dim": 16,
    "out_dim": 16,
    "num_layers": 2,
    "coa_heads": 8,
    "aoa_heads": 2,
    "dropout": 0.5,
    "lr": 0.003,
    "weight_decay": 0.0005,
    "batch_size": 5120,
    "patience": 60,
    "max_epoch": 500,
    "fanout": 5,
    "use_fanout": False,
    "lambda_consist": 0.05,
    "threshold": 0.5,
    "seed": 0,
    "metapaths": DEFAULT_METAPATHS,
    "asl_gamma_pos": 0.0,
    "asl_gamma_neg": 4.0,
    "asl_clip": 0.05,
    "leaky_slope": 0.01,
    "semantic_dim": 0,
    "branch_mode": "full",
    "fusion": "gated",
    "residual": "adaptive",
    "loss": "asl",
}


class DivergenceError(RuntimeError):
    def __init__(self, epoch: int, detail: str) -> None:
        super().__init__(f"training diverged at epoch {epoch}: {detail}")
        self.epoch = epoch


@dataclass(frozen=True)
class FocalConfig:
    hidden_dim: int = 16
    out_dim: int = 16
    num_layers: int = 2
    coa_heads: int = 8
    aoa_heads: int = 2
    dropout: float = 0.5
    lr: float = 0.003
    weight_decay: float = 0.0005
    batch_size: int = 5120
    patience: int = 60
    max_epoch: int = 500
    fanout: int = 5
    use_fanout: bool = False
    lambda_consist: float = 0.05
    threshold: float = 0.5
    seed: int = 0
    metapaths: tuple[tuple[str, ...], ...] = field(default_factory=lambda: tuple(tuple(p) for p in DEFAULT_METAPATHS))
    asl_gamma_pos: float = 0.0
    asl_gamma_neg: float = 4.0
    asl_clip: float = 0.05
    leaky_slope: float = 0.01
    semantic_dim: int = 0
    branch_mode: str = "full"
    fusion: str = "gated"
    residual: str = "adaptive"
    loss: str = "asl"

    def __post_init__(self) -> None:
        try:
            paths = tuple(tuple(str(step) for step in path) for path in self.metapaths)
        except TypeError as exc:
            raise ConfigError("focal.metapaths must be a list of relation-name lists") from exc
        object.__setattr__(self, "metapaths", paths)
        self.validate()

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> FocalConfig:
        return cls(**merge_known(DEFAULT_FOCAL, data, section="focal"))

    @classmethod
    def from_file(cls, path: Path | str) -> FocalConfig:
        return cls.from_dict(load_json_object(Path(path)))

    def to_dict(self) -> dict[str, Any]:
        data = asdict(self)
        data["metapaths"] = [list(p) for p in self.metapaths]
        return data

    @property
    def asl(self) -> AslConfig:
        return AslConfig(self.asl_gamma_pos, self.asl_gamma_neg, self.asl_clip)

    def validate(self) -> None:
        positive = ("hidden_dim", "num_layers", "coa_heads", "aoa_heads", "batch_size", "patience", "fanout")
        for key in positive:
            if getattr(self, key) < 1:
                raise ConfigError(f"focal.{key} must be >= 1, got {getattr(self, key)}")
        if self.out_dim != self.hidden_dim:
            raise ConfigError(f"focal.out_dim ({self.out_dim}) must equal hidden_dim ({self.hidden_dim})")
        for key in ("coa_heads", "aoa_heads"):
            if self.hidden_dim % getattr(self, key):
                raise ConfigError(f"focal.hidden_dim {self.hidden_dim} is not divisible by {key}={getattr(self, key)}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"focal.dropout must lie in [0, 1), got {self.dropout}")
        if self.lr < 0 or self.weight_decay < 0:
            raise ConfigError("focal.lr and focal.weight_decay must be >= 0")
        if self.max_epoch < 0:
            raise ConfigError("focal.max_epoch must be >= 0")
        if self.lambda_consist < 0:
            raise ConfigError(f"focal.lambda_consist must be >= 0, got {self.lambda_consist}")
        if not 0.0 < self.threshold < 1.0:
            raise ConfigError(f"focal.threshold must lie in (0, 1), got {self.threshold}")
        if self.seed < 0:
            raise ConfigError("focal.seed must be a non-negative integer")
        if self.leaky_slope < 0 or self.semantic_dim < 0:
            raise ConfigError("focal.leaky_slope and focal.semantic_dim must be >= 0")
        if not self.metapaths or any(not path for path in self.metapaths):
            raise ConfigError("focal.metapaths must list at least one non-empty relation sequence")
        for key, allowed in (
            ("branch_mode", BRANCH_MODES),
            ("fusion", FUSION_VARIANTS),
            ("residual", RESIDUAL_VARIANTS),
            ("loss", LOSSES),
        ):
            if getattr(self, key) not in allowed:
                raise ConfigError(f"focal.{key} must be one of {', '.join(allowed)}, got {getattr(self, key)!r}")
        try:
            AslConfig(self.asl_gamma_pos, self.asl_gamma_neg, self.asl_clip)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val: dict[str, float]


@dataclass
class TrainReport:
    epochs: list[EpochRecord]
    best_epoch: int
    best_val_micro_f1: float
    epochs_run: int
    stopped_early: bool
    test: MetricsReport | None
    wall_time: float = field(default=0.0, compare=False)

    def to_dict(self) -> dict[str, Any]:
        return {
            "epochs": [asdict(e) for e in self.epochs],
            "best_epoch": self.best_epoch,
            "best_val_micro_f1": self.best_val_micro_f1,
            "epochs_run": self.epochs_run,
            "stopped_early": self.stopped_early,
            "test": None if self.test is None else metrics_to_dict(self.test),
            "wall_time": self.wall_time,
        }


# -- parameters ------------------------------------------------------------------


def init_params(cfg: FocalConfig, shape: ModelShape, rng: np.random.Generator) -> FocalParams:
    """Xavier-uniform weight matrices, zero biases and zero relation log-weights."""
    values = {}
    for spec in param_specs(cfg, shape):
        if spec.fans is None:
            values[spec.name] = np.zeros(spec.shape)
        else:
            bound = nd.xavier_bound(*spec.fans)
            values[spec.name] = rng.uniform(-bound, bound, size=spec.shape)
    return FocalParams(values)


def save_params(params: FocalParams, path: Path | str) -> None:
    write_json(Path(path), params.to_dict())


def load_params(path: Path | str) -> FocalParams:
    try:
        return FocalParams.from_dict(load_json_object(Path(path)))
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def seed_streams(seed: int) -> tuple[np.random.Generator, np.random.Generator, np.random.Generator]:
    """Independent Philox streams for init, dropout and batching/sampling."""
    init, drop, batch = (np.random.Generator(np.random.Philox(s)) for s in np.random.SeedSequence(seed).spawn(3))
    return init, drop, batch


# -- optimisation -------------------------------------------------------------------


class AdamW:
    """Adam with decoupled weight decay: p -= lr * (m_hat / (sqrt(v_hat) + eps) + wd * p)."""

    def __init__(
        self,
        lr: float,
        weight_decay: float = 0.0,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ) -> None:
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: FocalParams, grads: dict[str, np.ndarray]) -> None:
        self.step_count += 1
        t = self.step_count
        for name in params.names():
            grad = grads[name]
            m = self.m.get(name, np.zeros_like(grad))
            v = self.v.get(name, np.zeros_like(grad))
            m = self.beta1 * m + (1.0 - self.beta1) * grad
            v = self.beta2 * v + (1.0 - self.beta2) * grad * grad
            self.m[name], self.v[name] = m, v
            m_hat = m / (1.0 - self.beta1**t)
            v_hat = v / (1.0 - self.beta2**t)
            value = params.values[name]
            params.values[name] = value - self.lr * (m_hat / (np.sqrt(v_hat) + self.eps) + self.weight_decay * value)


def loss_and_grads(
    params: FocalParams,
    plan: GraphPlan,
    cfg: FocalConfig,
    nodes: np.ndarray,
    *,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> tuple[float, dict[str, np.ndarray], ForwardResult]:
    result = focal_forward(params, plan, cfg, nodes, training=training, rng=rng)
    loss = objective_value(result, plan.graph.labels[nodes], cfg)
    by_id = nd.backward(result.tape, loss)
    grads = {name: by_id[var.id] for name, var in result.leaves.items()}
    return float(loss.value), grads, result


def objective_value(result: ForwardResult, labels: np.ndarray, cfg: FocalConfig) -> nd.Var:
    if cfg.loss == "bce":
        base = bce_loss(result.logits, labels)
    else:
        base = asl_loss(result.logits, labels, cfg.asl)
    consist = None
    if cfg.branch_mode == "full" and cfg.lambda_consist > 0 and result.h_coa is not None and result.h_aoa is not None:
        consist = consistency_loss(result.h_coa, result.h_aoa)
    return total_loss(base, consist, cfg.lambda_consist)


def _batches(train_idx: np.ndarray, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    if train_idx.size <= batch_size:
        return [train_idx]
    order = rng.permutation(train_idx)
    return [np.sort(order[i : i + batch_size]) for i in range(0, order.size, batch_size)]


def train(g: HetGraph, cfg: FocalConfig) -> tuple[FocalParams, TrainReport]:
    train_idx = g.splits.train
    val_idx = g.splits.val
    if train_idx.size == 0 or val_idx.size == 0:
        raise ValueError("training needs non-empty train and val splits")
    started = time.perf_counter()
    init_rng, drop_rng, batch_rng = seed_streams(cfg.seed)
    params = init_params(cfg, ModelShape.from_graph(g, cfg.metapaths), init_rng)
    full_plan = build_plan(g, cfg.metapaths)
    sample = cfg.use_fanout and g.total_nodes > cfg.batch_size
    optimizer = AdamW(cfg.lr, cfg.weight_decay)
    append_event(
        "train_started",
        {"seed": cfg.seed, "params": params.num_values(), "train": int(train_idx.size), "val": int(val_idx.size)},
    )

    best = params.copy()
    best_epoch, best_f1 = 0, -math.inf
    records: list[EpochRecord] = []
    stale = 0
    stopped_early = False
    for epoch in range(1, cfg.max_epoch + 1):
        plan = build_plan(g, cfg.metapaths, fanout=cfg.fanout, rng=batch_rng) if sample else full_plan
        losses = []
        for batch in _batches(train_idx, cfg.batch_size, batch_rng):
            try:
                loss, grads, _ = loss_and_grads(params, plan, cfg, batch, training=True, rng=drop_rng)
            except nd.NumericalError as exc:
                append_event("train_diverged", {"epoch": epoch, "detail": str(exc)})
                raise DivergenceError(epoch, str(exc)) from exc
            if not math.isfinite(loss):
                append_event("train_diverged", {"epoch": epoch, "detail": f"loss {loss}"})
                raise DivergenceError(epoch, f"loss became {loss}")
            optimizer.step(params, grads)
            losses.append(loss)
        val = evaluate_plan(params, full_plan, cfg, val_idx)
        record = EpochRecord(epoch, float(np.mean(losses)), metrics_to_dict(val))
        records.append(record)
        append_event("epoch_completed", {"epoch": epoch, "train_loss": record.train_loss, "val_micro_f1": val.micro_f1})
        if val.micro_f1 > best_f1:
            best_f1, best_epoch, stale = val.micro_f1, epoch, 0
            best = params.copy()
        else:
            stale += 1
            if stale >= cfg.patience:
                stopped_early = True
                append_event("early_stopped", {"epoch": epoch, "best_epoch": best_epoch})
                break

    test = evaluate_plan(best, full_plan, cfg, g.splits.test) if g.splits.test.size else None
    report = TrainReport(
        epochs=records,
        best_epoch=best_epoch,
        best_val_micro_f1=best_f1 if records else 0.0,
        epochs_run=len(records),
        stopped_early=stopped_early,
        test=test,
        wall_time=time.perf_counter() - started,
    )
    append_event(
        "train_completed",
        {
            "epochs_run": report.epochs_run,
            "best_epoch": best_epoch,
            "test_micro_f1": None if test is None else test.micro_f1,
        },
    )
    return best, report


# -- evaluation ---------------------------------------------------------------------


def evaluate_plan(params: FocalParams, plan: GraphPlan, cfg: FocalConfig, nodes: np.ndarray) -> MetricsReport:
    nodes = np.asarray(nodes, dtype=np.int64)
    if nodes.size == 0:
        raise ValueError("cannot evaluate on an empty split")
    result = focal_forward(params, plan, cfg, nodes)
    return metrics(plan.graph.labels[nodes], predict(result.logits.value, cfg.threshold))


def evaluate(params: FocalParams, g: HetGraph, cfg: FocalConfig, split: str) -> MetricsReport:
    return evaluate_plan(params, build_plan(g, cfg.metapaths), cfg, g.splits.get(split))


def ablation_mode(cfg: FocalConfig, mode: str) -> FocalConfig:
    if mode == "full":
        return cfg
    if mode in ("coa_only", "aoa_only"):
        return replace(cfg, branch_mode=mode, lambda_consist=0.0)
    overrides = {
        "single_gate": {"fusion": "single_gate"},
        "sum_fusion": {"fusion": "sum"},
        "concat_fusion": {"fusion": "concat"},
        "fixed_residual": {"residual": "fixed"},
        "no_asl": {"loss": "bce"},
        "no_consist": {"lambda_consist": 0.0},
    }
    if mode not in overrides:
        raise ConfigError(f"unknown ablation mode {mode!r}; expected one of {', '.join(ABLATION_MODES)}")
    return replace(cfg, **overrides[mode])


def metapath_name(path: Sequence[str]) -> str:
    return "/".join(path)


def metapath_subset(cfg: FocalConfig, choice: str) -> tuple[tuple[str, ...], ...]:
    """``all`` keeps every configured meta-path; any other name keeps just that one."""
    if choice == ALL_METAPATHS:
        return cfg.metapaths
    by_name = {metapath_name(path): path for path in cfg.metapaths}
    if choice not in by_name:
        names = ", ".join([ALL_METAPATHS, *by_name])
        raise ConfigError(f"unknown meta-path {choice!r}; expected one of {names}")
    return (by_name[choice],)


def sweep(g: HetGraph, cfg: FocalConfig, key: str, values: Sequence[Any]) -> list[dict[str, Any]]:
    """Train once per value of ``key``; rows keep the input order.

    ``metapaths`` values name a single configured meta-path (relations joined by ``/``) or ``all``.
    """
    if key not in SWEEP_KEYS:
        raise ConfigError(f"cannot sweep {key!r}; expected one of {', '.join(SWEEP_KEYS)}")
    configs = []
    for value in values:
        if key == "hidden_dim":
            configs.append((int(value), replace(cfg, hidden_dim=int(value), out_dim=int(value))))
        elif key == "metapaths":
            configs.append((str(value), replace(cfg, metapaths=metapath_subset(cfg, str(value)))))
        else:
            configs.append((float(value), replace(cfg, lambda_consist=float(value))))

    def run(item: tuple[Any, FocalConfig]) -> dict[str, Any]:
        label, variant = item
        _, report = train(g, variant)
        return {
            key: label,
            "best_val_micro_f1": report.best_val_micro_f1,
            "test": None if report.test is None else metrics_to_dict(report.test),
        }

    with ThreadPoolExecutor(max_workers=max_threads()) as pool:
        return list(pool.map(run, configs))
