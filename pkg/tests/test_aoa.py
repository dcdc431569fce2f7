from __future__ import annotations

import unittest

import numpy as np

from fixtures import QuietEvents, paper_graph, small_graph
from focal import ndmath as nd
from focal.aoa import (
    aoa_attention,
    aoa_layer,
    aoa_multi,
    build_anchor_plan,
    node_attention,
    primary_metapaths,
    semantic_mass,
)
from focal.hetgraph import MetaPathError, metapath_neighborhood


class AnchorPlanTests(QuietEvents, unittest.TestCase):
    def test_pairs_and_self_fallback(self) -> None:
        g = paper_graph()
        plan = build_anchor_plan(g, g.metapath(["paper-author", "author-paper"]))
        pairs = sorted(zip(plan.dst.tolist(), plan.src.tolist()))
        # papers 0 and 1 reach both papers; paper 2 and all non-targets point at themselves
        self.assertEqual(pairs, [(0, 0), (0, 1), (1, 0), (1, 1), (2, 2), (3, 3), (4, 4), (5, 5), (6, 6)])
        self.assertTrue(np.all(np.diff(plan.dst) >= 0))

    def test_primary_metapaths_filters_secondary_ones(self) -> None:
        g = paper_graph()
        paths = [g.metapath(["paper-author", "author-paper"]), g.metapath(["paper-term", "term-paper"])]
        self.assertEqual(primary_metapaths(g, paths), paths[:1])


class NodeAttentionTests(QuietEvents, unittest.TestCase):
    def test_zero_attention_vectors_average_the_neighbourhood(self) -> None:
        rng = np.random.default_rng(0)
        h = rng.standard_normal((7, 4))
        w = rng.standard_normal((4, 4))
        out, alpha = aoa_attention(w, np.zeros(4), np.zeros(4), h, [0, 1], 0, heads=2)
        np.testing.assert_allclose(alpha, 0.5, rtol=0, atol=1e-15)
        np.testing.assert_allclose(out, (h[0] @ w + h[1] @ w) / 2.0, rtol=0, atol=1e-12)

    def test_matches_a_direct_single_head_computation(self) -> None:
        rng = np.random.default_rng(1)
        h = rng.standard_normal((9, 4))
        w, a_dst, a_src = rng.standard_normal((4, 4)), rng.standard_normal(4), rng.standard_normal(4)
        neighbours = [1, 4, 6]
        wh = h @ w
        e = np.array([a_dst @ wh[3] + a_src @ wh[s] for s in neighbours])
        e = np.where(e > 0, e, 0.01 * e)
        weights = np.exp(e - e.max())
        weights /= weights.sum()
        out, alpha = aoa_attention(w, a_dst, a_src, h, neighbours, 3, heads=1)
        np.testing.assert_allclose(alpha[:, 0], weights, rtol=0, atol=1e-12)
        np.testing.assert_allclose(out, weights @ wh[neighbours], rtol=0, atol=1e-12)

    def test_batched_layer_agrees_with_per_node_view(self) -> None:
        g = small_graph(0)
        path = g.metapath(["item-anchor", "anchor-item"])
        plan = build_anchor_plan(g, path)
        rng = np.random.default_rng(2)
        h = rng.standard_normal((g.total_nodes, 4))
        w, a_dst, a_src = rng.standard_normal((4, 4)), rng.standard_normal((1, 4)), rng.standard_normal((1, 4))
        tape = nd.Tape()
        out, _ = node_attention(
            tape.constant(h), tape.constant(w), tape.constant(a_dst), tape.constant(a_src), plan, 2
        )
        for t in (0, 9, 21):
            neighbours = sorted(metapath_neighborhood(g, path, t))
            single, _ = aoa_attention(w, a_dst, a_src, h, neighbours, t, heads=2)
            np.testing.assert_allclose(out.value[t], single, rtol=0, atol=1e-12)

    def test_attention_vector_shape_is_checked(self) -> None:
        g = paper_graph()
        plan = build_anchor_plan(g, g.metapath(["paper-author", "author-paper"]))
        tape = nd.Tape()
        with self.assertRaisesRegex(nd.ShapeError, "a_dst"):
            node_attention(
                tape.constant(np.zeros((7, 4))),
                tape.constant(np.zeros((4, 4))),
                tape.constant(np.zeros((1, 3))),
                tape.constant(np.zeros((1, 4))),
                plan,
                2,
            )


class SemanticAttentionTests(QuietEvents, unittest.TestCase):
    def test_single_path_gets_all_semantic_weight(self) -> None:
        rng = np.random.default_rng(3)
        h = rng.standard_normal((5, 4))
        w, a_dst, a_src = rng.standard_normal((4, 4)), rng.standard_normal(4), rng.standard_normal(4)
        multi, beta = aoa_multi(
            [(w, a_dst, a_src)], rng.standard_normal((4, 4)), np.zeros(4), rng.standard_normal(4), h, [[1, 2]], 0, 2
        )
        single, _ = aoa_attention(w, a_dst, a_src, h, [1, 2], 0, heads=2)
        np.testing.assert_array_equal(beta, [1.0])
        np.testing.assert_allclose(multi, single, rtol=0, atol=1e-15)

    def test_beta_is_a_distribution_over_paths(self) -> None:
        rng = np.random.default_rng(4)
        h = rng.standard_normal((6, 4))
        params = [(rng.standard_normal((4, 4)), rng.standard_normal(4), rng.standard_normal(4)) for _ in range(3)]
        semantic = (rng.standard_normal((4, 3)), rng.standard_normal(3), rng.standard_normal(3))
        _, beta = aoa_multi(params, *semantic, h, [[1], [2, 3], [4, 5]], 0, 2)
        self.assertEqual(beta.shape, (3,))
        self.assertAlmostEqual(float(beta.sum()), 1.0, places=12)
        self.assertTrue(np.all(beta > 0))

    def test_no_metapath_is_an_error(self) -> None:
        tape = nd.Tape()
        h = tape.constant(np.zeros((2, 4)))
        ws, bs, q = (tape.constant(np.zeros(shape)) for shape in ((4, 4), (1, 4), (4, 1)))
        with self.assertRaises(MetaPathError):
            aoa_layer(h, [], ws, bs, q, [], 2)

    def test_semantic_mass(self) -> None:
        self.assertAlmostEqual(semantic_mass(np.array([0.2, 0.3, 0.5]), [True, False, True]), 0.7)
        self.assertEqual(semantic_mass(np.array([0.4, 0.6]), [False, False]), 0.0)
        with self.assertRaises(nd.ShapeError):
            semantic_mass(np.array([1.0]), [True, False])


if __name__ == "__main__":
    unittest.main()
