"""Full forward pass: input projection, parallel COA/AOA, role-guided fusion, residual, classifier."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any, Iterator, Sequence

import numpy as np

from focal import ndmath as nd
from focal.aoa import AnchorPlan, aoa_layer, build_anchor_plan, primary_metapaths
from focal.coa import CoveragePlan, build_coverage_plan, coa_layer
from focal.hetgraph import HetGraph, MetaPath, MetaPathError

if TYPE_CHECKING:
    from focal.trainer import FocalConfig

PARAMS_FORMAT_VERSION = 1
FUSION_VARIANTS = ("gated", "single_gate", "sum", "concat")
RESIDUAL_VARIANTS = ("adaptive", "fixed")
BRANCH_MODES = ("full", "coa_only", "aoa_only")
FIXED_RESIDUAL_ALPHA = 0.5


# -- parameters ----------------------------------------------------------------


class FocalParams:
    """Named float64 parameter arrays. Matrices are stored (in x out)."""

    def __init__(self, values: dict[str, np.ndarray]) -> None:
        self.values = {name: np.array(value, dtype=np.float64) for name, value in values.items()}

    def __getitem__(self, name: str) -> np.ndarray:
        return self.values[name]

    def __contains__(self, name: object) -> bool:
        return name in self.values

    def __iter__(self) -> Iterator[str]:
        return iter(self.values)

    def __len__(self) -> int:
        return len(self.values)

    def names(self) -> list[str]:
        return list(self.values)

    def num_values(self) -> int:
        return int(sum(v.size for v in self.values.values()))

    def bind(self, tape: nd.Tape) -> dict[str, nd.Var]:
        return {name: tape.leaf(value, name=name) for name, value in self.values.items()}

    def copy(self) -> FocalParams:
        return FocalParams({name: value.copy() for name, value in self.values.items()})

    def equals(self, other: FocalParams) -> bool:
        return self.names() == other.names() and all(
            np.array_equal(self.values[n], other.values[n]) for n in self.values
        )

    def with_relations(self, num_relations: int) -> FocalParams:
        """Pad every relation-weight table with zero rows up to ``num_relations``."""
        out = self.copy()
        for name, value in out.values.items():
            if name.endswith(".coa.rho") and value.shape[0] < num_relations:
                pad = np.zeros((num_relations - value.shape[0], value.shape[1]))
                out.values[name] = np.concatenate([value, pad], axis=0)
        return out

    def to_dict(self) -> dict[str, Any]:
        return {
            "format_version": PARAMS_FORMAT_VERSION,
            "params": {
                name: {"shape": list(value.shape), "data": value.ravel().tolist()}
                for name, value in self.values.items()
            },
        }

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> FocalParams:
        if doc.get("format_version") != PARAMS_FORMAT_VERSION:
            raise ValueError(f"unsupported params format_version {doc.get('format_version')!r}")
        params = doc.get("params")
        if not isinstance(params, dict):
            raise ValueError("params document has no 'params' object")
        values = {}
        for name, entry in params.items():
            try:
                values[name] = np.array(entry["data"], dtype=np.float64).reshape(entry["shape"])
            except (KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"parameter {name!r} is malformed: {exc}") from exc
        return cls(values)


def coa_names(layer: int) -> tuple[str, str, str, str]:
    prefix = f"layer{layer}.coa"
    return f"{prefix}.wq", f"{prefix}.wk", f"{prefix}.wv", f"{prefix}.rho"


def path_names(layer: int, path: int) -> tuple[str, str, str]:
    prefix = f"layer{layer}.aoa.path{path}"
    return f"{prefix}.w", f"{prefix}.a_dst", f"{prefix}.a_src"


def semantic_names(layer: int) -> tuple[str, str, str]:
    prefix = f"layer{layer}.aoa"
    return f"{prefix}.ws", f"{prefix}.bs", f"{prefix}.q"


@dataclass(frozen=True)
class ModelShape:
    node_type_names: tuple[str, ...]
    feature_dims: tuple[int, ...]
    num_relations: int
    num_primary_paths: int
    num_labels: int

    @classmethod
    def from_graph(cls, g: HetGraph, metapaths: Sequence[Sequence[str]]) -> ModelShape:
        paths = [g.metapath(names) for names in metapaths]
        return cls(
            node_type_names=g.node_type_names,
            feature_dims=g.feature_dims,
            num_relations=len(g.relations),
            num_primary_paths=len(primary_metapaths(g, paths)),
            num_labels=g.num_labels,
        )


@dataclass(frozen=True)
class ParamSpec:
    name: str
    shape: tuple[int, ...]
    # xavier fan sizes, or None for a zero-initialised tensor
    fans: tuple[int, int] | None


def param_specs(cfg: FocalConfig, shape: ModelShape) -> list[ParamSpec]:
    """Every parameter in draw order. The order never depends on the relation count."""
    d = cfg.hidden_dim
    d_sem = cfg.semantic_dim or d
    d_head = d // cfg.aoa_heads

    def matrix(name: str, rows: int, cols: int) -> ParamSpec:
        return ParamSpec(name, (rows, cols), (rows, cols))

    def zeros(name: str, rows: int, cols: int) -> ParamSpec:
        return ParamSpec(name, (rows, cols), None)

    specs = [matrix(f"proj.{name}", dim, d) for name, dim in zip(shape.node_type_names, shape.feature_dims)]
    for layer in range(1, cfg.num_layers + 1):
        wq, wk, wv, rho = coa_names(layer)
        specs += [matrix(wq, d, d), matrix(wk, d, d), matrix(wv, d, d), zeros(rho, shape.num_relations, cfg.coa_heads)]
        for p in range(shape.num_primary_paths):
            w, a_dst, a_src = path_names(layer, p)
            specs += [
                matrix(w, d, d),
                ParamSpec(a_dst, (1, d), (2 * d_head, 1)),
                ParamSpec(a_src, (1, d), (2 * d_head, 1)),
            ]
        ws, bs, q = semantic_names(layer)
        specs += [matrix(ws, d, d_sem), zeros(bs, 1, d_sem), matrix(q, d_sem, 1)]
        prefix = f"layer{layer}.fusion"
        for gate_name in ("g1", "g2", "a"):
            specs += [matrix(f"{prefix}.w{gate_name}", 2 * d, d), zeros(f"{prefix}.b{gate_name}", 1, d)]
        if cfg.fusion == "concat":
            specs += [matrix(f"{prefix}.wcat", 2 * d, d), zeros(f"{prefix}.bcat", 1, d)]
    specs += [matrix("cls.w", d, shape.num_labels), zeros("cls.b", 1, shape.num_labels)]
    return specs


# -- plan ----------------------------------------------------------------------


@dataclass(frozen=True)
class GraphPlan:
    """Everything the forward pass needs from a graph, precomputed once."""

    graph: HetGraph
    metapaths: tuple[MetaPath, ...]
    coverage: CoveragePlan
    anchors: tuple[AnchorPlan, ...]

    @property
    def num_nodes(self) -> int:
        return self.graph.total_nodes

    @property
    def target_offset(self) -> int:
        return int(self.graph.offsets[self.graph.target_type])

    def target_rows(self, nodes: np.ndarray | None = None) -> np.ndarray:
        if nodes is None:
            nodes = np.arange(self.graph.target_count)
        return self.target_offset + np.asarray(nodes, dtype=np.int64)


def build_plan(
    g: HetGraph,
    metapaths: Sequence[Sequence[str]],
    *,
    fanout: int | None = None,
    rng: np.random.Generator | None = None,
) -> GraphPlan:
    paths = tuple(g.metapath(names) for names in metapaths)
    anchors = tuple(build_anchor_plan(g, p) for p in primary_metapaths(g, paths))
    return GraphPlan(g, paths, build_coverage_plan(g, fanout=fanout, rng=rng), anchors)


# -- fusion and residual ------------------------------------------------------------


def gate(h_coa: nd.Var, h_aoa: nd.Var, w: nd.Var, b: nd.Var) -> nd.Var:
    return nd.sigmoid(nd.add(nd.matmul(nd.concat_cols([h_coa, h_aoa]), w), b))


def fuse(g1: nd.Var | np.ndarray, g2: nd.Var | np.ndarray, h_coa: nd.Var, h_aoa: nd.Var) -> nd.Var:
    """h_fuse = g1 * h_COA + g2 * h_AOA (elementwise)."""
    if h_coa.shape != h_aoa.shape:
        raise nd.ShapeError(f"fuse: h_COA {h_coa.shape} and h_AOA {h_aoa.shape} differ")
    return nd.add(nd.mul(h_coa, g1), nd.mul(h_aoa, g2))


def adaptive_residual(h_fuse: nd.Var, h_prev: nd.Var, wa: nd.Var, ba: nd.Var) -> tuple[nd.Var, nd.Var]:
    """(alpha * h_fuse + (1 - alpha) * h_prev, alpha) with alpha = sigmoid(W_a [h_fuse || h_prev] + b_a)."""
    if h_fuse.shape != h_prev.shape:
        raise nd.ShapeError(f"residual: h_fuse {h_fuse.shape} and h_prev {h_prev.shape} differ")
    alpha = gate(h_fuse, h_prev, wa, ba)
    mixed = nd.add(h_prev, nd.mul(alpha, nd.sub(h_fuse, h_prev)))
    return mixed, alpha


def fixed_residual(h_fuse: nd.Var, h_prev: nd.Var) -> nd.Var:
    return nd.add(nd.scale(h_fuse, FIXED_RESIDUAL_ALPHA), nd.scale(h_prev, 1.0 - FIXED_RESIDUAL_ALPHA))


# -- forward ------------------------------------------------------------------------


@dataclass
class LayerTrace:
    h_prev: np.ndarray
    h_coa: np.ndarray | None
    h_aoa: np.ndarray | None
    g1: np.ndarray | None
    g2: np.ndarray | None
    h_fuse: np.ndarray
    alpha: np.ndarray | None
    h_out: np.ndarray
    coa_weights: np.ndarray | None = None
    aoa_weights: list[np.ndarray] = field(default_factory=list)
    beta: np.ndarray | None = None


@dataclass
class ForwardResult:
    tape: nd.Tape
    leaves: dict[str, nd.Var]
    logits: nd.Var
    rows: np.ndarray
    h_coa: nd.Var | None
    h_aoa: nd.Var | None
    traces: list[LayerTrace]


def _value(x: nd.Var | None) -> np.ndarray | None:
    return None if x is None else x.value


def focal_forward(
    params: FocalParams,
    plan: GraphPlan,
    cfg: FocalConfig,
    nodes: np.ndarray | None = None,
    *,
    training: bool = False,
    rng: np.random.Generator | None = None,
    tape: nd.Tape | None = None,
    leaves: dict[str, nd.Var] | None = None,
) -> ForwardResult:
    """Logits for target ``nodes`` (default: all targets) plus last-layer branch outputs and traces.

    Every node of every type is updated at every layer. ``h_coa``/``h_aoa`` in the
    result are the last layer's branch outputs restricted to the requested rows.
    """
    if cfg.branch_mode not in BRANCH_MODES:
        raise ValueError(f"unknown branch_mode {cfg.branch_mode!r}")
    if cfg.branch_mode != "coa_only" and not plan.anchors:
        raise MetaPathError("no primary meta-path configured; AOA needs at least one")
    if training and cfg.dropout > 0 and rng is None:
        raise ValueError("training with dropout needs an rng")
    if leaves is not None:
        tape = next(iter(leaves.values())).tape
        p = leaves
    else:
        tape = tape or nd.Tape()
        p = params.bind(tape)
    g = plan.graph
    heads_c, heads_a = cfg.coa_heads, cfg.aoa_heads
    slope = cfg.leaky_slope

    h = nd.concat_rows(
        [nd.matmul(tape.constant(g.features[tid]), p[f"proj.{name}"]) for tid, name in enumerate(g.node_type_names)]
    )
    traces: list[LayerTrace] = []
    h_coa = h_aoa = None
    for layer in range(1, cfg.num_layers + 1):
        h_prev = h
        trace_extra: dict[str, Any] = {}
        h_coa = h_aoa = None
        if cfg.branch_mode != "aoa_only":
            wq, wk, wv, rho = (p[n] for n in coa_names(layer))
            h_coa, coa_alpha = coa_layer(h_prev, wq, wk, wv, rho, plan.coverage, heads_c)
            trace_extra["coa_weights"] = coa_alpha.value
        if cfg.branch_mode != "coa_only":
            path_params = [tuple(p[n] for n in path_names(layer, i)) for i in range(len(plan.anchors))]
            ws, bs, q = (p[n] for n in semantic_names(layer))
            h_aoa, aoa_alphas, beta = aoa_layer(h_prev, path_params, ws, bs, q, plan.anchors, heads_a, slope)
            trace_extra["aoa_weights"] = [a.value for a in aoa_alphas]
            trace_extra["beta"] = beta.value

        prefix = f"layer{layer}.fusion"
        g1 = g2 = None
        if h_coa is None:
            h_fuse = h_aoa
        elif h_aoa is None:
            h_fuse = h_coa
        elif cfg.fusion == "gated":
            g1 = gate(h_coa, h_aoa, p[f"{prefix}.wg1"], p[f"{prefix}.bg1"])
            g2 = gate(h_coa, h_aoa, p[f"{prefix}.wg2"], p[f"{prefix}.bg2"])
            h_fuse = fuse(g1, g2, h_coa, h_aoa)
        elif cfg.fusion == "single_gate":
            g1 = gate(h_coa, h_aoa, p[f"{prefix}.wg1"], p[f"{prefix}.bg1"])
            g2 = nd.rsub_scalar(1.0, g1)
            h_fuse = fuse(g1, g2, h_coa, h_aoa)
        elif cfg.fusion == "sum":
            h_fuse = nd.add(h_coa, h_aoa)
        elif cfg.fusion == "concat":
            cat = nd.concat_cols([h_coa, h_aoa])
            h_fuse = nd.add(nd.matmul(cat, p[f"{prefix}.wcat"]), p[f"{prefix}.bcat"])
        else:
            raise ValueError(f"unknown fusion variant {cfg.fusion!r}")

        alpha = None
        if cfg.residual == "adaptive":
            h, alpha = adaptive_residual(h_fuse, h_prev, p[f"{prefix}.wa"], p[f"{prefix}.ba"])
        elif cfg.residual == "fixed":
            h = fixed_residual(h_fuse, h_prev)
        else:
            raise ValueError(f"unknown residual variant {cfg.residual!r}")
        if training and cfg.dropout > 0:
            h = nd.dropout(h, cfg.dropout, rng)

        g2_value = _value(g2)
        if g2 is None and cfg.fusion == "sum" and h_coa is not None and h_aoa is not None:
            g2_value = np.ones(h_fuse.shape)
        traces.append(
            LayerTrace(
                h_prev=h_prev.value,
                h_coa=_value(h_coa),
                h_aoa=_value(h_aoa),
                g1=_value(g1),
                g2=g2_value,
                h_fuse=h_fuse.value,
                alpha=_value(alpha),
                h_out=h.value,
                **trace_extra,
            )
        )

    rows = plan.target_rows(nodes)
    logits = nd.add(nd.matmul(nd.gather_rows(h, rows), p["cls.w"]), p["cls.b"])
    return ForwardResult(
        tape=tape,
        leaves=p,
        logits=logits,
        rows=rows,
        h_coa=None if h_coa is None else nd.gather_rows(h_coa, rows),
        h_aoa=None if h_aoa is None else nd.gather_rows(h_aoa, rows),
        traces=traces,
    )


def gate_floor(trace: LayerTrace, node: int) -> float:
    """gamma_v = min_k g2[v, k], the guaranteed share of h_AOA kept in h_fuse."""
    if trace.g2 is None:
        raise ValueError("this layer has no AOA gate (single-branch model)")
    return float(trace.g2[node].min())
