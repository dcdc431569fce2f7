"""Planted-structure generator for heterogeneous multi-label graphs.

Three node types: ``item`` (targets), ``anchor`` (primary) and ``context``
(secondary). Every anchor carries one label prototype and an item's labels
are exactly the labels of its anchors, plus the label of at most one rare
decisive context. Background contexts carry no label signal.

Randomness comes from numpy's Philox counter-based bit generator, seeded
through ``SeedSequence(seed).spawn(4)``: one child stream each for
prototypes, structure, feature noise and the split shuffle, in that order.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Any

import numpy as np

from focal.events import append_event
from focal.hetgraph import SPLIT_NAMES, HetGraph, Relation, Splits
from focal.settings import ConfigError, merge_known

TARGET, ANCHOR, CONTEXT = 0, 1, 2
NODE_TYPES = ("item", "anchor", "context")
RELATIONS = (
    Relation("item-anchor", TARGET, ANCHOR, primary=True),
    Relation("anchor-item", ANCHOR, TARGET, primary=True),
    Relation("item-context", TARGET, CONTEXT, primary=False),
    Relation("context-item", CONTEXT, TARGET, primary=False),
)
DEFAULT_METAPATHS = [["item-anchor"], ["item-anchor", "anchor-item"]]
SPLIT_FRACTIONS = (0.70, 0.15)

DEFAULT_SYNTH: dict[str, Any] = {
    "seed": 0,
    "num_targets": 500,
    "num_labels": 5,
    "primary_degree": 3.0,
    "secondary_degree": 30.0,
    "rare_rate": 0.1,
    "label_cardinality": 2.0,
    "feature_dims": [16, 16, 16],
    "noise_std": 0.1,
    "anchors_per_label": 4,
    "decisive_per_label": 2,
    "num_contexts": 200,
}


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    num_targets: int = 500
    num_labels: int = 5
    primary_degree: float = 3.0
    secondary_degree: float = 30.0
    # per-target probability of linking one decisive context
    rare_rate: float = 0.1
    label_cardinality: float = 2.0
    feature_dims: tuple[int, int, int] = field(default=(16, 16, 16))
    noise_std: float = 0.1
    anchors_per_label: int = 4
    decisive_per_label: int = 2
    num_contexts: int = 200

    def __post_init__(self) -> None:
        object.__setattr__(self, "feature_dims", tuple(int(d) for d in self.feature_dims))
        self.validate()

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> SynthConfig:
        merged = merge_known(DEFAULT_SYNTH, data, section="synth")
        return cls(**merged)

    def to_dict(self) -> dict[str, Any]:
        data = asdict(self)
        data["feature_dims"] = list(self.feature_dims)
        return data

    @property
    def num_anchors(self) -> int:
        return self.num_labels * self.anchors_per_label

    @property
    def num_decisive(self) -> int:
        return self.num_labels * self.decisive_per_label

    def validate(self) -> None:
        for key in ("num_targets", "num_labels", "anchors_per_label", "decisive_per_label", "num_contexts"):
            if getattr(self, key) < 0:
                raise ConfigError(f"synth.{key} must be >= 0")
        if self.seed < 0:
            raise ConfigError("synth.seed must be a non-negative integer")
        if self.num_labels < 1:
            raise ConfigError("synth.num_labels must be >= 1")
        if self.anchors_per_label < 1:
            raise ConfigError("synth.anchors_per_label must be >= 1")
        if self.primary_degree < 0 or self.secondary_degree < 0:
            raise ConfigError("synth degrees must be >= 0")
        if not 0.0 <= self.rare_rate <= 1.0:
            raise ConfigError(f"synth.rare_rate must lie in [0, 1], got {self.rare_rate}")
        if not 1.0 <= self.label_cardinality <= self.num_labels:
            raise ConfigError(
                f"synth.label_cardinality must lie in [1, num_labels={self.num_labels}], got {self.label_cardinality}"
            )
        if self.noise_std < 0:
            raise ConfigError("synth.noise_std must be >= 0")
        if len(self.feature_dims) != 3 or any(d < 1 for d in self.feature_dims):
            raise ConfigError("synth.feature_dims must list three positive widths (item, anchor, context)")
        if self.rare_rate > 0 and self.decisive_per_label < 1:
            raise ConfigError("synth.decisive_per_label must be >= 1 when rare_rate > 0")
        if self.num_contexts < self.num_decisive:
            raise ConfigError(
                f"synth.num_contexts ({self.num_contexts}) must cover the {self.num_decisive} decisive contexts"
            )


def _streams(seed: int) -> list[np.random.Generator]:
    return [np.random.Generator(np.random.Philox(child)) for child in np.random.SeedSequence(seed).spawn(4)]


def planted_prototypes(cfg: SynthConfig) -> list[np.ndarray]:
    """Per-type label prototypes (C x d_type); row k is the signal for label k."""
    rng = _streams(cfg.seed)[0]
    return [rng.standard_normal((cfg.num_labels, dim)) for dim in cfg.feature_dims]


def anchor_labels(cfg: SynthConfig) -> np.ndarray:
    return np.arange(cfg.num_anchors) % cfg.num_labels


def context_labels(cfg: SynthConfig) -> np.ndarray:
    """Label carried by each context; background contexts get -1."""
    labels = np.full(cfg.num_contexts, -1, dtype=np.int64)
    labels[: cfg.num_decisive] = np.arange(cfg.num_decisive) % cfg.num_labels
    return labels


def generate(cfg: SynthConfig) -> HetGraph:
    prototypes = planted_prototypes(cfg)
    _, structure, noise, shuffle = _streams(cfg.seed)
    c = cfg.num_labels
    a_labels = anchor_labels(cfg)
    anchors_by_label = [np.flatnonzero(a_labels == k) for k in range(c)]
    c_labels = context_labels(cfg)
    background = np.arange(cfg.num_decisive, cfg.num_contexts)

    extra_prob = (cfg.label_cardinality - 1.0) / (c - 1) if c > 1 else 0.0
    labels = np.zeros((cfg.num_targets, c), dtype=np.int8)
    anchor_edges: list[tuple[int, int]] = []
    context_edges: list[tuple[int, int]] = []
    for t in range(cfg.num_targets):
        k_t = 1 + int(structure.binomial(c - 1, extra_prob)) if c > 1 else 1
        label_set = np.sort(structure.choice(c, size=k_t, replace=False))
        n_t = max(k_t, int(structure.poisson(cfg.primary_degree)))
        picks = [int(structure.choice(anchors_by_label[k])) for k in label_set]
        pool = np.concatenate([anchors_by_label[k] for k in label_set])
        picks.extend(int(a) for a in structure.choice(pool, size=n_t - k_t, replace=True))
        anchor_edges.extend((t, a) for a in picks)
        labels[t, label_set] = 1

        if cfg.rare_rate > 0 and structure.random() < cfg.rare_rate:
            decisive = int(structure.integers(cfg.num_decisive))
            context_edges.append((t, decisive))
            labels[t, c_labels[decisive]] = 1
        m_t = int(structure.poisson(cfg.secondary_degree))
        if m_t and background.size:
            context_edges.extend((t, int(s)) for s in structure.choice(background, size=m_t, replace=True))

    counts = (cfg.num_targets, cfg.num_anchors, cfg.num_contexts)
    features = [noise.normal(0.0, cfg.noise_std, (counts[TARGET], cfg.feature_dims[TARGET]))]
    anchor_noise = noise.normal(0.0, cfg.noise_std, (counts[ANCHOR], cfg.feature_dims[ANCHOR]))
    features.append(prototypes[ANCHOR][a_labels] + anchor_noise)
    context_signal = np.zeros((cfg.num_contexts, cfg.feature_dims[CONTEXT]))
    context_signal[: cfg.num_decisive] = prototypes[CONTEXT][c_labels[: cfg.num_decisive]]
    features.append(context_signal + noise.normal(0.0, cfg.noise_std, context_signal.shape))

    fwd_anchor = np.array(anchor_edges, dtype=np.int64).reshape(-1, 2)
    fwd_context = np.array(context_edges, dtype=np.int64).reshape(-1, 2)
    edges = (fwd_anchor, fwd_anchor[:, ::-1], fwd_context, fwd_context[:, ::-1])

    order = shuffle.permutation(cfg.num_targets)
    n_train = int(round(SPLIT_FRACTIONS[0] * cfg.num_targets))
    n_val = int(round(SPLIT_FRACTIONS[1] * cfg.num_targets))
    splits = Splits(
        np.sort(order[:n_train]),
        np.sort(order[n_train : n_train + n_val]),
        np.sort(order[n_train + n_val :]),
    )
    g = HetGraph(
        node_type_names=NODE_TYPES,
        node_counts=counts,
        relations=RELATIONS,
        edges=tuple(np.ascontiguousarray(e) for e in edges),
        features=tuple(features),
        target_type=TARGET,
        labels=labels,
        splits=splits,
        feature_dims=cfg.feature_dims,
    )
    append_event("graph_generated", {"seed": cfg.seed, "node_counts": list(counts), "edges": int(len(anchor_edges))})
    return g


def describe(g: HetGraph) -> dict[str, Any]:
    labels = g.labels.astype(np.float64)
    per_node = labels.sum(axis=1) if labels.size else np.zeros(0)
    return {
        "node_counts": {name: g.node_counts[tid] for tid, name in enumerate(g.node_type_names)},
        "edge_counts": {rel.name: int(g.edges[rid].shape[0]) for rid, rel in enumerate(g.relations)},
        "primary_relations": [rel.name for rel in g.relations if rel.primary],
        "target_type": g.node_type_names[g.target_type],
        "num_labels": g.num_labels,
        "label_density": float(labels.mean()) if labels.size else 0.0,
        "mean_label_cardinality": float(per_node.mean()) if per_node.size else 0.0,
        "split_sizes": {name: int(g.splits.get(name).size) for name in SPLIT_NAMES},
    }
