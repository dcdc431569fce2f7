"""Anchoring-oriented attention over meta-path neighbourhoods.

Node level: per primary meta-path ``P`` and head ``i``,
``e(t, s) = LeakyReLU(a_dst_i . (W h(t))_i + a_src_i . (W h(s))_i)``, softmax over
``N_P(t)``, output ``concat_i sum_s alpha W h(s)``. Semantic level: ``u_P(t) =
q . tanh(W_s z_P(t) + b_s)``, ``beta = softmax_P(u)``, output ``sum_P beta_P z_P``.

Only target nodes have meta-path neighbourhoods. Every other node, and every
target whose neighbourhood is empty, attends to itself.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from focal import ndmath as nd
from focal.coa import head_blocks
from focal.hetgraph import HetGraph, MetaPath, MetaPathError, metapath_pairs, path_terminal_type


@dataclass(frozen=True)
class AnchorPlan:
    """(dst, src) pairs over global ids for one meta-path, sorted by dst."""

    path: MetaPath
    src: np.ndarray
    dst: np.ndarray
    segments: nd.Segments

    @property
    def num_pairs(self) -> int:
        return int(self.src.size)


def primary_metapaths(g: HetGraph, paths: Sequence[MetaPath]) -> list[MetaPath]:
    return [p for p in paths if g.is_primary_path(p)]


def build_anchor_plan(g: HetGraph, path: MetaPath) -> AnchorPlan:
    n = g.total_nodes
    offsets = g.offsets
    pairs = metapath_pairs(g, path)
    dst = pairs[:, 0] + offsets[g.target_type]
    src = pairs[:, 1] + offsets[path_terminal_type(g, path)]
    lonely = np.flatnonzero(np.bincount(dst, minlength=n) == 0)
    dst = np.concatenate([dst, lonely])
    src = np.concatenate([src, lonely])
    order = np.argsort(dst, kind="stable")
    return AnchorPlan(path, src[order], dst[order], nd.Segments.from_ids(dst[order], n))


def node_attention(
    h: nd.Var,
    w: nd.Var,
    a_dst: nd.Var,
    a_src: nd.Var,
    plan: AnchorPlan,
    heads: int,
    slope: float = nd.LEAKY_RELU_SLOPE,
) -> tuple[nd.Var, nd.Var]:
    """Single meta-path AOA for every node: (z_P N x d_out, pair weights E x heads)."""
    width = w.shape[1]
    if w.shape[0] != h.shape[1]:
        raise nd.ShapeError(f"aoa: embeddings have width {h.shape[1]} but W_P expects {w.shape[0]}")
    for name, vec in (("a_dst", a_dst), ("a_src", a_src)):
        if vec.shape != (1, width):
            raise nd.ShapeError(f"aoa: {name} has shape {vec.shape}, expected (1, {width})")
    block = head_blocks(width, heads)
    wh = nd.matmul(h, w)
    score_dst = nd.matmul(nd.mul(wh, a_dst), block)
    score_src = nd.matmul(nd.mul(wh, a_src), block)
    e = nd.leaky_relu(nd.add(nd.gather_rows(score_dst, plan.dst), nd.gather_rows(score_src, plan.src)), slope)
    alpha = nd.segment_softmax(e, plan.segments)
    messages = nd.mul(nd.matmul(alpha, block.T), nd.gather_rows(wh, plan.src))
    return nd.segment_sum(messages, plan.segments), alpha


def semantic_attention(zs: Sequence[nd.Var], ws: nd.Var, bs: nd.Var, q: nd.Var) -> tuple[nd.Var, nd.Var]:
    """Combine per-path embeddings with node-wise softmax weights: (output, beta N x |P|)."""
    if not zs:
        raise MetaPathError("semantic attention needs at least one meta-path")
    scores = [nd.matmul(nd.tanh(nd.add(nd.matmul(z, ws), bs)), q) for z in zs]
    beta = nd.softmax_rows(nd.concat_cols(scores))
    out = nd.mul(zs[0], nd.column(beta, 0))
    for p in range(1, len(zs)):
        out = nd.add(out, nd.mul(zs[p], nd.column(beta, p)))
    return out, beta


def aoa_layer(
    h: nd.Var,
    path_params: Sequence[tuple[nd.Var, nd.Var, nd.Var]],
    ws: nd.Var,
    bs: nd.Var,
    q: nd.Var,
    plans: Sequence[AnchorPlan],
    heads: int,
    slope: float = nd.LEAKY_RELU_SLOPE,
) -> tuple[nd.Var, list[nd.Var], nd.Var]:
    if not plans:
        raise MetaPathError("AOA requires at least one primary meta-path")
    if len(path_params) != len(plans):
        raise nd.ShapeError(f"aoa: {len(path_params)} parameter sets for {len(plans)} meta-paths")
    zs, weights = [], []
    for (w, a_dst, a_src), plan in zip(path_params, plans):
        z, alpha = node_attention(h, w, a_dst, a_src, plan, heads, slope)
        zs.append(z)
        weights.append(alpha)
    out, beta = semantic_attention(zs, ws, bs, q)
    return out, weights, beta


# -- per-node views ------------------------------------------------------------


def _single_plan(neighbours: Sequence[int], node: int) -> AnchorPlan:
    src = np.array(sorted(neighbours) if neighbours else [node], dtype=np.int64)
    return AnchorPlan(
        MetaPath(()),
        src,
        np.full(src.size, node, dtype=np.int64),
        nd.Segments.from_ids(np.zeros(src.size, dtype=np.int64), 1),
    )


def aoa_attention(
    w: np.ndarray,
    a_dst: np.ndarray,
    a_src: np.ndarray,
    h_prev: np.ndarray,
    neighbourhood: Sequence[int],
    node: int,
    heads: int,
    slope: float = nd.LEAKY_RELU_SLOPE,
) -> tuple[np.ndarray, np.ndarray]:
    """AOA output and weights for global node ``node`` over ``neighbourhood`` (global ids, ascending)."""
    tape = nd.Tape()
    z, alpha = node_attention(
        tape.constant(h_prev),
        tape.constant(w),
        tape.constant(np.reshape(a_dst, (1, -1))),
        tape.constant(np.reshape(a_src, (1, -1))),
        _single_plan(neighbourhood, node),
        heads,
        slope,
    )
    return z.value[0].copy(), alpha.value.copy()


def aoa_multi(
    path_params: Sequence[tuple[np.ndarray, np.ndarray, np.ndarray]],
    ws: np.ndarray,
    bs: np.ndarray,
    q: np.ndarray,
    h_prev: np.ndarray,
    neighbourhoods: Sequence[Sequence[int]],
    node: int,
    heads: int,
    slope: float = nd.LEAKY_RELU_SLOPE,
) -> tuple[np.ndarray, np.ndarray]:
    """Hierarchical AOA for one node: (output, beta over the meta-paths)."""
    if not neighbourhoods:
        raise MetaPathError("AOA requires at least one primary meta-path")
    tape = nd.Tape()
    h = tape.constant(h_prev)
    params = [
        (tape.constant(w), tape.constant(np.reshape(ad, (1, -1))), tape.constant(np.reshape(asrc, (1, -1))))
        for w, ad, asrc in path_params
    ]
    plans = [_single_plan(nb, node) for nb in neighbourhoods]
    semantic = (
        tape.constant(ws),
        tape.constant(np.reshape(bs, (1, -1))),
        tape.constant(np.reshape(q, (-1, 1))),
    )
    out, _, beta = aoa_layer(h, params, *semantic, plans, heads, slope)
    return out.value[0].copy(), beta.value[0].copy()


def semantic_mass(beta: np.ndarray, primary: Sequence[bool] | np.ndarray) -> float:
    """Total semantic attention on the meta-paths flagged in ``primary``."""
    beta = np.asarray(beta, dtype=np.float64)
    primary = np.asarray(primary, dtype=bool)
    if primary.shape != beta.shape:
        raise nd.ShapeError(f"primary flags {primary.shape} do not match beta {beta.shape}")
    return float(np.clip(beta[primary].sum(), 0.0, 1.0)) if primary.any() else 0.0
