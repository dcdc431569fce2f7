"""Training objective (asymmetric loss + branch consistency) and multi-label metrics."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from focal import ndmath as nd
from focal.events import append_event

DEFAULT_THRESHOLD = 0.5


@dataclass(frozen=True)
class AslConfig:
    gamma_pos: float = 0.0
    gamma_neg: float = 4.0
    clip: float = 0.05

    def __post_init__(self) -> None:
        if self.gamma_pos < 0 or self.gamma_neg < 0:
            raise ValueError(f"ASL focusing exponents must be >= 0, got {self.gamma_pos}, {self.gamma_neg}")
        if not 0.0 <= self.clip < 1.0:
            raise ValueError(f"ASL probability margin must lie in [0, 1), got {self.clip}")


def _check_labels(logits: nd.Var, labels: np.ndarray) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.float64)
    if logits.shape != labels.shape:
        raise nd.ShapeError(f"logits {logits.shape} and labels {labels.shape} differ")
    if labels.ndim != 2 or labels.shape[0] == 0:
        raise nd.ShapeError(f"loss needs a non-empty (n, C) batch, got {labels.shape}")
    return labels


def asl_loss(logits: nd.Var, labels: np.ndarray, cfg: AslConfig | None = None) -> nd.Var:
    """Mean over nodes of the per-label asymmetric loss summed over labels.

    Positives: ``(1 - p)^gamma_pos * -log p``. Negatives use the shifted
    probability ``p_m = max(p - clip, 0)``: ``p_m^gamma_neg * -log(1 - p_m)``.
    """
    cfg = cfg or AslConfig()
    y = _check_labels(logits, labels)
    n = y.shape[0]
    neg_z = nd.scale(logits, -1.0)
    pos_term = nd.mul(nd.power(nd.sigmoid(neg_z), cfg.gamma_pos), nd.log1p_exp(neg_z))
    if cfg.clip == 0.0:
        p_m = nd.sigmoid(logits)
        neg_log = nd.log1p_exp(logits)
    else:
        p_m = nd.relu(nd.add_scalar(nd.sigmoid(logits), -cfg.clip))
        # 1 - p_m >= clip, so the log is safe
        neg_log = nd.scale(nd.log(nd.rsub_scalar(1.0, p_m)), -1.0)
    neg_term = nd.mul(nd.power(p_m, cfg.gamma_neg), neg_log)
    per_entry = nd.add(nd.mul(pos_term, y), nd.mul(neg_term, 1.0 - y))
    return nd.scale(nd.sum_all(per_entry), 1.0 / n)


def bce_loss(logits: nd.Var, labels: np.ndarray) -> nd.Var:
    y = _check_labels(logits, labels)
    per_entry = nd.add(
        nd.mul(nd.log1p_exp(nd.scale(logits, -1.0)), y),
        nd.mul(nd.log1p_exp(logits), 1.0 - y),
    )
    return nd.scale(nd.sum_all(per_entry), 1.0 / y.shape[0])


def consistency_loss(h_coa: nd.Var, h_aoa: nd.Var) -> nd.Var:
    """Mean of 1 - cos over rows; a zero row counts as maximally inconsistent (contributes 1)."""
    cos, zero = nd.cosine_rows(h_coa, h_aoa)
    if zero.any():
        append_event("consistency_zero_vector", {"rows": int(zero.sum()), "total": int(zero.size)})
    return nd.rsub_scalar(1.0, nd.mean_all(cos))


def total_loss(asl: nd.Var, consist: nd.Var | None, lam: float) -> nd.Var:
    if lam < 0:
        raise ValueError(f"consistency weight must be >= 0, got {lam}")
    if consist is None or lam == 0.0:
        return asl
    return nd.add(asl, nd.scale(consist, lam))


def predict(logits: np.ndarray, threshold: float = DEFAULT_THRESHOLD) -> np.ndarray:
    """Multi-hot prediction: positive where sigmoid(z) >= threshold."""
    return (nd.sigmoid_value(logits) >= threshold).astype(np.int8)


# -- metrics -------------------------------------------------------------------


@dataclass(frozen=True)
class MetricsReport:
    micro_f1: float
    macro_f1: float
    sample_f1: float
    hamming_loss: float
    subset_accuracy: float
    micro_precision: float
    micro_recall: float
    macro_precision: float
    macro_recall: float


METRIC_NAMES = tuple(f.name for f in fields(MetricsReport))


def _ratio(num: np.ndarray, den: np.ndarray, empty: float) -> np.ndarray:
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    return np.where(den > 0, num / np.where(den > 0, den, 1.0), empty)


def metrics(y_true: np.ndarray, y_pred: np.ndarray) -> MetricsReport:
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if y_true.shape != y_pred.shape or y_true.ndim != 2:
        raise nd.ShapeError(f"metrics: y_true {y_true.shape} and y_pred {y_pred.shape} must be equal (n, C) matrices")
    if y_true.shape[0] == 0:
        raise ValueError("metrics: no rows to score")
    for name, arr in (("y_true", y_true), ("y_pred", y_pred)):
        if not np.isin(arr, (0, 1)).all():
            raise ValueError(f"metrics: {name} has non-binary entries")
    t = y_true.astype(bool)
    p = y_pred.astype(bool)
    tp = (t & p).sum(axis=0)
    fp = (~t & p).sum(axis=0)
    fn = (t & ~p).sum(axis=0)
    TP, FP, FN = tp.sum(), fp.sum(), fn.sum()

    row_tp = (t & p).sum(axis=1)
    row_den = t.sum(axis=1) + p.sum(axis=1)
    return MetricsReport(
        micro_f1=float(_ratio(2 * TP, 2 * TP + FP + FN, 0.0)),
        macro_f1=float(_ratio(2 * tp, 2 * tp + fp + fn, 0.0).mean()),
        sample_f1=float(_ratio(2 * row_tp, row_den, 1.0).mean()),
        hamming_loss=float((t != p).mean()),
        subset_accuracy=float((t == p).all(axis=1).mean()),
        micro_precision=float(_ratio(TP, TP + FP, 0.0)),
        micro_recall=float(_ratio(TP, TP + FN, 0.0)),
        macro_precision=float(_ratio(tp, tp + fp, 0.0).mean()),
        macro_recall=float(_ratio(tp, tp + fn, 0.0).mean()),
    )


def metrics_to_dict(report: MetricsReport) -> dict[str, float]:
    return asdict(report)


def metrics_from_dict(data: dict[str, float]) -> MetricsReport:
    missing = [name for name in METRIC_NAMES if name not in data]
    if missing:
        raise ValueError(f"metrics document is missing {', '.join(missing)}")
    return MetricsReport(**{name: float(data[name]) for name in METRIC_NAMES})


def metrics_to_text(report: MetricsReport) -> str:
    return "".join(f"{name}={value!r}\n" for name, value in metrics_to_dict(report).items())
