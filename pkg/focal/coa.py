"""Coverage-oriented attention: multi-head attention over every typed in-neighbour.

Per head ``i`` the logit of edge ``s -> t`` is ``(q_i(t) . k_i(s) / sqrt(d_head)) * mu[r, i]``
with ``mu = softplus(rho) + MU_EPS``, normalised over the in-edges of ``t``. Heads
split the output width evenly and are concatenated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from focal import ndmath as nd
from focal.hetgraph import HetGraph, coverage_neighborhood

MU_EPS = 1e-4


@dataclass(frozen=True)
class CoveragePlan:
    """Edge list over global node ids, stably sorted by destination.

    ``rel`` is the relation id of each edge; nodes without in-edges get one
    self-edge tagged ``num_relations`` so every segment is non-empty.
    """

    src: np.ndarray
    dst: np.ndarray
    rel: np.ndarray
    segments: nd.Segments
    num_relations: int

    @property
    def num_edges(self) -> int:
        return int(self.src.size)

    @property
    def fallback(self) -> np.ndarray:
        return self.rel == self.num_relations


def build_coverage_plan(
    g: HetGraph,
    *,
    fanout: int | None = None,
    rng: np.random.Generator | None = None,
) -> CoveragePlan:
    offsets = g.offsets
    srcs, dsts, rels = [], [], []
    for rid, rel in enumerate(g.relations):
        edges = g.edges[rid]
        srcs.append(edges[:, 0] + offsets[rel.src])
        dsts.append(edges[:, 1] + offsets[rel.dst])
        rels.append(np.full(edges.shape[0], rid, dtype=np.int64))
    src = np.concatenate(srcs) if srcs else np.empty(0, dtype=np.int64)
    dst = np.concatenate(dsts) if dsts else np.empty(0, dtype=np.int64)
    rel = np.concatenate(rels) if rels else np.empty(0, dtype=np.int64)

    if fanout is not None:
        keep = _sample_fanout(dst, fanout, rng or np.random.default_rng(0))
        src, dst, rel = src[keep], dst[keep], rel[keep]

    n = g.total_nodes
    isolated = np.flatnonzero(np.bincount(dst, minlength=n) == 0)
    src = np.concatenate([src, isolated])
    dst = np.concatenate([dst, isolated])
    rel = np.concatenate([rel, np.full(isolated.size, len(g.relations), dtype=np.int64)])

    order = np.argsort(dst, kind="stable")
    return CoveragePlan(
        src=src[order],
        dst=dst[order],
        rel=rel[order],
        segments=nd.Segments.from_ids(dst[order], n),
        num_relations=len(g.relations),
    )


def _sample_fanout(dst: np.ndarray, fanout: int, rng: np.random.Generator) -> np.ndarray:
    """Indices of at most ``fanout`` in-edges per destination, original order kept."""
    if fanout < 1:
        raise ValueError(f"fanout must be >= 1, got {fanout}")
    priority = rng.random(dst.size)
    order = np.lexsort((priority, dst))
    ranked = dst[order]
    firsts = np.searchsorted(ranked, ranked, side="left")
    rank = np.arange(ranked.size) - firsts
    return np.sort(order[rank < fanout])


def head_blocks(width: int, heads: int) -> np.ndarray:
    """(width x heads) indicator mapping each column to its head."""
    if heads < 1 or width % heads:
        raise nd.ShapeError(f"width {width} is not divisible into {heads} heads")
    block = np.zeros((width, heads))
    block[np.arange(width), np.arange(width) // (width // heads)] = 1.0
    return block


def relation_weights(rho: nd.Var) -> nd.Var:
    return nd.add_scalar(nd.softplus(rho), MU_EPS)


def coa_layer(
    h: nd.Var,
    wq: nd.Var,
    wk: nd.Var,
    wv: nd.Var,
    rho: nd.Var,
    plan: CoveragePlan,
    heads: int,
) -> tuple[nd.Var, nd.Var]:
    """Returns (output N x d_out, per-edge weights E x heads)."""
    tape = h.tape
    width = wq.shape[1]
    if wq.shape[0] != h.shape[1]:
        raise nd.ShapeError(f"coa: embeddings have width {h.shape[1]} but W_Q expects {wq.shape[0]}")
    if rho.shape != (plan.num_relations, heads):
        raise nd.ShapeError(f"coa: rho has shape {rho.shape}, expected ({plan.num_relations}, {heads})")
    block = head_blocks(width, heads)
    d_head = width // heads

    q = nd.matmul(h, wq)
    k = nd.matmul(h, wk)
    v = nd.matmul(h, wv)
    dots = nd.matmul(nd.mul(nd.gather_rows(q, plan.dst), nd.gather_rows(k, plan.src)), block)
    scores = nd.scale(dots, 1.0 / math.sqrt(d_head))
    mu = nd.concat_rows([relation_weights(rho), tape.constant(np.ones((1, heads)))])
    logits = nd.mul(scores, nd.gather_rows(mu, plan.rel))
    alpha = nd.segment_softmax(logits, plan.segments)
    messages = nd.mul(nd.matmul(alpha, block.T), nd.gather_rows(v, plan.src))
    return nd.segment_sum(messages, plan.segments), alpha


def coa_attention(
    wq: np.ndarray,
    wk: np.ndarray,
    wv: np.ndarray,
    rho: np.ndarray,
    h_prev: np.ndarray,
    g: HetGraph,
    t: int,
    heads: int,
) -> tuple[np.ndarray, np.ndarray]:
    """COA output and weights for target node ``t``.

    ``h_prev`` holds one row per global node id. Weight rows follow the order of
    ``coverage_neighborhood(g, t)``; an empty neighbourhood yields the single
    self-fallback row.
    """
    neighbours = coverage_neighborhood(g, t)
    node = int(g.offsets[g.target_type]) + t
    if neighbours:
        src = np.array([g.global_id(ref) for _, ref in neighbours], dtype=np.int64)
        rel = np.array([rid for rid, _ in neighbours], dtype=np.int64)
    else:
        src = np.array([node], dtype=np.int64)
        rel = np.array([len(g.relations)], dtype=np.int64)
    # q is gathered at the global id; the single segment groups all rows
    plan = CoveragePlan(
        src=src,
        dst=np.full(src.size, node, dtype=np.int64),
        rel=rel,
        segments=nd.Segments.from_ids(np.zeros(src.size, dtype=np.int64), 1),
        num_relations=len(g.relations),
    )
    tape = nd.Tape()
    out, alpha = coa_layer(
        tape.constant(h_prev), tape.constant(wq), tape.constant(wk), tape.constant(wv), tape.constant(rho), plan, heads
    )
    return out.value[0].copy(), alpha.value.copy()


def primary_attention_mass(weights: np.ndarray, primary: np.ndarray) -> tuple[np.ndarray, float]:
    """Per-head and head-averaged attention mass on the rows flagged in ``primary``."""
    weights = np.asarray(weights, dtype=np.float64)
    if weights.ndim == 1:
        weights = weights[:, None]
    primary = np.asarray(primary, dtype=bool)
    if primary.shape != (weights.shape[0],):
        raise nd.ShapeError(f"primary mask {primary.shape} does not match {weights.shape[0]} weight rows")
    per_head = weights[primary].sum(axis=0) if primary.any() else np.zeros(weights.shape[1])
    per_head = np.clip(per_head, 0.0, 1.0)
    return per_head, float(per_head.mean())
