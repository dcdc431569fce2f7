"""Immutable heterogeneous graph model and its JSON file format.

Nodes are addressed per type (``type_id``, ``index``); the model code also uses
global ids, which lay the types out back to back in schema order. Edges are
directed ``src -> dst`` and the message flows in the same direction, so the
coverage neighbourhood of a node is its in-neighbourhood.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from focal.events import append_event

FORMAT_VERSION = 1
SPLIT_NAMES = ("train", "val", "test")


class GraphFormatError(ValueError):
    pass


class GraphValidationError(ValueError):
    pass


class MetaPathError(ValueError):
    pass


@dataclass(frozen=True)
class Relation:
    name: str
    src: int
    dst: int
    primary: bool = False


@dataclass(frozen=True, order=True)
class NodeRef:
    type_id: int
    index: int


@dataclass(frozen=True)
class MetaPath:
    relation_ids: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.relation_ids)


@dataclass(frozen=True)
class Splits:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def get(self, name: str) -> np.ndarray:
        if name not in SPLIT_NAMES:
            raise ValueError(f"unknown split {name!r}; expected one of {', '.join(SPLIT_NAMES)}")
        return getattr(self, name)

    def sizes(self) -> dict[str, int]:
        return {name: int(self.get(name).size) for name in SPLIT_NAMES}


def _frozen_array(data: Any, dtype: Any, shape_hint: tuple[int, ...] | None = None) -> np.ndarray:
    arr = np.array(data, dtype=dtype)
    if shape_hint is not None and arr.size == 0 and int(np.prod(shape_hint)) == 0:
        arr = arr.reshape(shape_hint)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class HetGraph:
    node_type_names: tuple[str, ...]
    node_counts: tuple[int, ...]
    relations: tuple[Relation, ...]
    edges: tuple[np.ndarray, ...]
    features: tuple[np.ndarray, ...]
    target_type: int
    labels: np.ndarray
    splits: Splits
    feature_dims: tuple[int, ...] = field(default=())

    def __post_init__(self) -> None:
        names = tuple(self.node_type_names)
        counts = tuple(int(c) for c in self.node_counts)
        dims = tuple(int(d) for d in self.feature_dims) or tuple(
            int(np.shape(f)[1]) if np.ndim(f) == 2 else 0 for f in self.features
        )
        object.__setattr__(self, "node_type_names", names)
        object.__setattr__(self, "node_counts", counts)
        object.__setattr__(self, "feature_dims", dims)
        object.__setattr__(self, "relations", tuple(self.relations))
        object.__setattr__(
            self, "edges", tuple(_frozen_array(e, np.int64, (0, 2)) for e in self.edges)
        )
        hints = [
            (counts[i] if i < len(counts) else 0, dims[i] if i < len(dims) else 0) for i in range(len(self.features))
        ]
        object.__setattr__(
            self, "features", tuple(_frozen_array(f, np.float64, hint) for f, hint in zip(self.features, hints))
        )
        object.__setattr__(self, "labels", _frozen_array(self.labels, np.int8, (0, 0)))
        object.__setattr__(
            self,
            "splits",
            Splits(*(_frozen_array(self.splits.get(n), np.int64, (0,)) for n in SPLIT_NAMES)),
        )
        self.validate()

    # -- schema lookups -----------------------------------------------------

    @property
    def num_types(self) -> int:
        return len(self.node_type_names)

    @property
    def num_labels(self) -> int:
        return int(self.labels.shape[1])

    @property
    def target_count(self) -> int:
        return self.node_counts[self.target_type]

    @property
    def total_nodes(self) -> int:
        return int(sum(self.node_counts))

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate(([0], np.cumsum(self.node_counts)[:-1])).astype(np.int64)

    def global_id(self, ref: NodeRef) -> int:
        return int(self.offsets[ref.type_id]) + ref.index

    def type_id(self, name: str) -> int:
        try:
            return self.node_type_names.index(name)
        except ValueError as exc:
            raise GraphValidationError(f"unknown node type {name!r}") from exc

    def relation_id(self, name: str) -> int:
        for rid, rel in enumerate(self.relations):
            if rel.name == name:
                return rid
        raise MetaPathError(f"unknown relation {name!r}")

    def metapath(self, relation_names: Sequence[str]) -> MetaPath:
        path = MetaPath(tuple(self.relation_id(name) for name in relation_names))
        check_metapath(self, path)
        return path

    def metapath_names(self, path: MetaPath) -> list[str]:
        return [self.relations[rid].name for rid in path.relation_ids]

    def is_primary_path(self, path: MetaPath) -> bool:
        return all(self.relations[rid].primary for rid in path.relation_ids)

    # -- derived graphs -----------------------------------------------------

    def with_relations(self, extra: Iterable[tuple[Relation, np.ndarray]]) -> HetGraph:
        """Copy of the graph with extra relations (and their edges) appended."""
        relations = list(self.relations)
        edges = list(self.edges)
        for relation, rel_edges in extra:
            relations.append(relation)
            edges.append(np.asarray(rel_edges, dtype=np.int64).reshape(-1, 2))
        return replace(self, relations=tuple(relations), edges=tuple(edges))

    def with_features(self, type_id: int, matrix: np.ndarray) -> HetGraph:
        features = list(self.features)
        features[type_id] = np.asarray(matrix, dtype=np.float64)
        return replace(self, features=tuple(features))

    # -- validation ---------------------------------------------------------

    def validate(self) -> None:
        if self.num_types == 0:
            raise GraphValidationError("graph declares no node types")
        if len(set(self.node_type_names)) != self.num_types:
            raise GraphValidationError("node type names must be unique")
        if len(self.node_counts) != self.num_types:
            raise GraphValidationError(
                f"counts has {len(self.node_counts)} entries for {self.num_types} node types"
            )
        if any(c < 0 for c in self.node_counts):
            raise GraphValidationError("node counts must be non-negative")
        if not 0 <= self.target_type < self.num_types:
            raise GraphValidationError(f"target type id {self.target_type} is not a declared type")
        names = [rel.name for rel in self.relations]
        if len(set(names)) != len(names):
            raise GraphValidationError("relation names must be unique")
        if len(self.edges) != len(self.relations):
            raise GraphValidationError(f"{len(self.edges)} edge lists for {len(self.relations)} relations")
        for rid, rel in enumerate(self.relations):
            for side, tid in (("src", rel.src), ("dst", rel.dst)):
                if not 0 <= tid < self.num_types:
                    raise GraphValidationError(f"relation {rel.name!r} {side} type id {tid} is not declared")
            self._validate_edges(rel, self.edges[rid])
        if len(self.features) != self.num_types:
            raise GraphValidationError(f"{len(self.features)} feature matrices for {self.num_types} node types")
        for tid, feats in enumerate(self.features):
            tname = self.node_type_names[tid]
            if feats.ndim != 2 or feats.shape[0] != self.node_counts[tid]:
                raise GraphValidationError(
                    f"features of type {tname!r} have shape {feats.shape}, expected ({self.node_counts[tid]}, d)"
                )
            if feats.shape[1] != self.feature_dims[tid]:
                raise GraphValidationError(
                    f"features of type {tname!r} have width {feats.shape[1]}, declared {self.feature_dims[tid]}"
                )
            bad = np.argwhere(~np.isfinite(feats))
            if bad.size:
                row, col = bad[0]
                raise GraphValidationError(f"features of type {tname!r} row {row} column {col} is not finite")
        if self.labels.ndim != 2 or self.labels.shape[0] != self.target_count:
            raise GraphValidationError(
                f"labels have shape {self.labels.shape}, expected ({self.target_count}, C)"
            )
        if self.labels.size and not np.isin(self.labels, (0, 1)).all():
            raise GraphValidationError("labels must be multi-hot (entries 0 or 1)")
        seen: dict[int, str] = {}
        for name in SPLIT_NAMES:
            idx = self.splits.get(name)
            if idx.ndim != 1:
                raise GraphValidationError(f"split {name!r} must be a flat index list")
            if idx.size and (idx.min() < 0 or idx.max() >= self.target_count):
                raise GraphValidationError(f"split {name!r} has indices outside the {self.target_count} target nodes")
            if np.unique(idx).size != idx.size:
                raise GraphValidationError(f"split {name!r} lists a node twice")
            for node in idx.tolist():
                if node in seen:
                    raise GraphValidationError(f"node {node} is in both {seen[node]!r} and {name!r} splits")
                seen[node] = name

    def _validate_edges(self, rel: Relation, rel_edges: np.ndarray) -> None:
        if rel_edges.ndim != 2 or rel_edges.shape[1] != 2:
            raise GraphValidationError(f"relation {rel.name!r} edges must be (src, dst) pairs")
        for col, tid in ((0, rel.src), (1, rel.dst)):
            count = self.node_counts[tid]
            bad = np.flatnonzero((rel_edges[:, col] < 0) | (rel_edges[:, col] >= count))
            if bad.size:
                row = int(bad[0])
                side = "src" if col == 0 else "dst"
                raise GraphValidationError(
                    f"relation {rel.name!r} edge row {row}: {side} index {int(rel_edges[row, col])} out of range "
                    f"for type {self.node_type_names[tid]!r} ({count} nodes)"
                )

    # -- equality -----------------------------------------------------------

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, HetGraph):
            return NotImplemented
        return (
            self.node_type_names == other.node_type_names
            and self.node_counts == other.node_counts
            and self.relations == other.relations
            and self.target_type == other.target_type
            and self.feature_dims == other.feature_dims
            and all(np.array_equal(a, b) for a, b in zip(self.edges, other.edges, strict=True))
            and all(np.array_equal(a, b) for a, b in zip(self.features, other.features, strict=True))
            and np.array_equal(self.labels, other.labels)
            and self.labels.shape == other.labels.shape
            and all(np.array_equal(self.splits.get(n), other.splits.get(n)) for n in SPLIT_NAMES)
        )

    __hash__ = None  # type: ignore[assignment]


# -- neighbourhoods -----------------------------------------------------------


def _check_target(g: HetGraph, t: int) -> None:
    if not 0 <= t < g.target_count:
        raise GraphValidationError(f"target node {t} out of range ({g.target_count} target nodes)")


def check_metapath(g: HetGraph, path: MetaPath) -> None:
    if not path.relation_ids:
        raise MetaPathError("meta-path must contain at least one relation")
    current = g.target_type
    for step, rid in enumerate(path.relation_ids):
        if not 0 <= rid < len(g.relations):
            raise MetaPathError(f"meta-path step {step}: relation id {rid} is not declared")
        rel = g.relations[rid]
        if rel.src != current:
            expected = g.node_type_names[current]
            raise MetaPathError(
                f"meta-path step {step}: relation {rel.name!r} starts at {g.node_type_names[rel.src]!r}, "
                f"expected {expected!r}"
            )
        current = rel.dst


def coverage_neighborhood(g: HetGraph, t: int) -> list[tuple[int, NodeRef]]:
    """Typed one-hop in-neighbours of target node ``t``, duplicates kept, in relation/edge order."""
    _check_target(g, t)
    out: list[tuple[int, NodeRef]] = []
    for rid, rel in enumerate(g.relations):
        if rel.dst != g.target_type:
            continue
        rel_edges = g.edges[rid]
        for src in rel_edges[rel_edges[:, 1] == t, 0].tolist():
            out.append((rid, NodeRef(rel.src, int(src))))
    return out


def _step(pairs: np.ndarray, rel_edges: np.ndarray, dst_count: int) -> np.ndarray:
    """Advance (start, current) pairs along one relation; deduplicated and sorted."""
    if pairs.size == 0 or rel_edges.size == 0:
        return np.empty((0, 2), dtype=np.int64)
    order = np.argsort(rel_edges[:, 0], kind="stable")
    src_sorted = rel_edges[order, 0]
    dst_sorted = rel_edges[order, 1]
    lo = np.searchsorted(src_sorted, pairs[:, 1], side="left")
    hi = np.searchsorted(src_sorted, pairs[:, 1], side="right")
    counts = hi - lo
    total = int(counts.sum())
    if total == 0:
        return np.empty((0, 2), dtype=np.int64)
    firsts = np.cumsum(counts) - counts
    positions = np.repeat(lo, counts) + (np.arange(total) - np.repeat(firsts, counts))
    starts = np.repeat(pairs[:, 0], counts)
    keys = np.unique(starts * max(dst_count, 1) + dst_sorted[positions])
    return np.stack([keys // max(dst_count, 1), keys % max(dst_count, 1)], axis=1)


def metapath_pairs(g: HetGraph, path: MetaPath, starts: np.ndarray | None = None) -> np.ndarray:
    """All (target index, terminal index) pairs reachable along ``path``, sorted and unique."""
    check_metapath(g, path)
    if starts is None:
        starts = np.arange(g.target_count, dtype=np.int64)
    starts = np.asarray(starts, dtype=np.int64)
    pairs = np.stack([starts, starts], axis=1)
    for rid in path.relation_ids:
        rel = g.relations[rid]
        pairs = _step(pairs, g.edges[rid], g.node_counts[rel.dst])
    return pairs


def metapath_neighborhood(g: HetGraph, path: MetaPath, t: int) -> frozenset[int]:
    _check_target(g, t)
    pairs = metapath_pairs(g, path, np.array([t]))
    return frozenset(int(x) for x in pairs[:, 1])


def path_terminal_type(g: HetGraph, path: MetaPath) -> int:
    return g.relations[path.relation_ids[-1]].dst


# -- file format --------------------------------------------------------------


def graph_to_dict(g: HetGraph) -> dict[str, Any]:
    return {
        "format_version": FORMAT_VERSION,
        "schema": {
            "node_types": list(g.node_type_names),
            "target_type": g.node_type_names[g.target_type],
            "feature_dims": {name: g.feature_dims[tid] for tid, name in enumerate(g.node_type_names)},
            "relations": [
                {
                    "name": rel.name,
                    "src": g.node_type_names[rel.src],
                    "dst": g.node_type_names[rel.dst],
                    "primary": rel.primary,
                }
                for rel in g.relations
            ],
        },
        "counts": {name: g.node_counts[tid] for tid, name in enumerate(g.node_type_names)},
        "features": {name: g.features[tid].tolist() for tid, name in enumerate(g.node_type_names)},
        "edges": {rel.name: g.edges[rid].tolist() for rid, rel in enumerate(g.relations)},
        "labels": {
            "target_type": g.node_type_names[g.target_type],
            "num_labels": g.num_labels,
            "rows": g.labels.tolist(),
        },
        "splits": {name: g.splits.get(name).tolist() for name in SPLIT_NAMES},
    }


def _section(doc: dict[str, Any], key: str, kind: type) -> Any:
    if key not in doc:
        raise GraphFormatError(f"graph document is missing section {key!r}")
    value = doc[key]
    if not isinstance(value, kind):
        raise GraphFormatError(f"graph section {key!r} must be a {kind.__name__}")
    return value


def graph_from_dict(doc: dict[str, Any]) -> HetGraph:
    if not isinstance(doc, dict):
        raise GraphFormatError("graph document must be a JSON object")
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise GraphFormatError(f"unsupported format_version {version!r} (expected {FORMAT_VERSION})")
    schema = _section(doc, "schema", dict)
    counts = _section(doc, "counts", dict)
    features = _section(doc, "features", dict)
    edges = _section(doc, "edges", dict)
    labels = _section(doc, "labels", dict)
    splits = _section(doc, "splits", dict)
    try:
        type_names = [str(name) for name in schema["node_types"]]
        type_index = {name: tid for tid, name in enumerate(type_names)}
        target = type_index[schema["target_type"]]
        dims_doc = schema.get("feature_dims", {})
        relations = [
            Relation(str(r["name"]), type_index[r["src"]], type_index[r["dst"]], bool(r.get("primary", False)))
            for r in schema["relations"]
        ]
        node_counts = [int(counts[name]) for name in type_names]
        dims = [int(dims_doc.get(name, len(features[name][0]) if features.get(name) else 0)) for name in type_names]
        feature_mats = []
        for tid, name in enumerate(type_names):
            mat = np.array(features[name], dtype=np.float64)
            feature_mats.append(mat.reshape(node_counts[tid], dims[tid]) if mat.size == 0 else mat)
        edge_lists = [np.array(edges.get(rel.name, []), dtype=np.int64).reshape(-1, 2) for rel in relations]
        if labels.get("target_type", schema["target_type"]) != schema["target_type"]:
            raise GraphFormatError("labels.target_type disagrees with schema.target_type")
        num_labels = int(labels["num_labels"])
        label_rows = np.array(labels["rows"], dtype=np.int64)
        if label_rows.size == 0:
            label_rows = label_rows.reshape(0, num_labels)
        split_sets = Splits(*(np.array(splits.get(name, []), dtype=np.int64) for name in SPLIT_NAMES))
    except KeyError as exc:
        raise GraphFormatError(f"graph document is missing or references unknown key {exc}") from exc
    except (TypeError, ValueError) as exc:
        if isinstance(exc, GraphFormatError):
            raise
        raise GraphFormatError(f"graph document is malformed: {exc}") from exc
    if label_rows.ndim != 2 or label_rows.shape[1] != num_labels:
        raise GraphValidationError(f"labels rows must each have exactly {num_labels} entries")
    return HetGraph(
        node_type_names=tuple(type_names),
        node_counts=tuple(node_counts),
        relations=tuple(relations),
        edges=tuple(edge_lists),
        features=tuple(feature_mats),
        target_type=target,
        labels=label_rows,
        splits=split_sets,
        feature_dims=tuple(dims),
    )


def load_graph(path: Path | str) -> HetGraph:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise GraphFormatError(f"{path}: not a JSON document ({exc})") from exc
    g = graph_from_dict(doc)
    append_event(
        "graph_loaded",
        {"path": str(path), "node_counts": list(g.node_counts), "relations": len(g.relations)},
    )
    return g


def save_graph(g: HetGraph, path: Path | str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # json writes floats with repr, which round-trips every f64 exactly
    path.write_text(json.dumps(graph_to_dict(g), ensure_ascii=False) + "\n", encoding="utf-8")
    append_event("graph_saved", {"path": str(path)})
