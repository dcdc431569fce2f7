from __future__ import annotations

import unittest
from dataclasses import replace

import numpy as np

from fixtures import PAPER_PATHS, QuietEvents, paper_graph, small_config, small_graph
from focal import ndmath as nd
from focal.fusion import (
    FocalParams,
    ModelShape,
    adaptive_residual,
    build_plan,
    focal_forward,
    fuse,
    gate,
    gate_floor,
    param_specs,
)
from focal.hetgraph import MetaPathError
from focal.trainer import init_params


def model(g, **overrides):
    cfg = small_config(**overrides)
    params = init_params(cfg, ModelShape.from_graph(g, cfg.metapaths), np.random.default_rng(0))
    return cfg, params


class GateTests(unittest.TestCase):
    def test_gates_are_independent_and_fuse_elementwise(self) -> None:
        rng = np.random.default_rng(0)
        tape = nd.Tape()
        hc, ha = tape.leaf(rng.standard_normal((3, 2))), tape.leaf(rng.standard_normal((3, 2)))
        g1 = gate(hc, ha, tape.leaf(rng.standard_normal((4, 2))), tape.leaf(np.zeros((1, 2))))
        g2 = gate(hc, ha, tape.leaf(rng.standard_normal((4, 2))), tape.leaf(np.zeros((1, 2))))
        self.assertTrue(np.all((g1.value > 0) & (g1.value < 1)))
        self.assertFalse(np.allclose(g1.value + g2.value, 1.0))
        fused = fuse(g1, g2, hc, ha).value
        np.testing.assert_allclose(fused, g1.value * hc.value + g2.value * ha.value, rtol=0, atol=1e-15)

    def test_fuse_rejects_mismatched_branches(self) -> None:
        tape = nd.Tape()
        with self.assertRaises(nd.ShapeError):
            fuse(np.ones((2, 2)), np.ones((2, 2)), tape.leaf(np.ones((2, 2))), tape.leaf(np.ones((3, 2))))

    def test_adaptive_residual_is_a_convex_mix(self) -> None:
        rng = np.random.default_rng(1)
        tape = nd.Tape()
        h_fuse, h_prev = tape.leaf(rng.standard_normal((4, 3))), tape.leaf(rng.standard_normal((4, 3)))
        wa, ba = tape.leaf(rng.standard_normal((6, 3))), tape.leaf(np.zeros((1, 3)))
        mixed, alpha = adaptive_residual(h_fuse, h_prev, wa, ba)
        expected = alpha.value * h_fuse.value + (1.0 - alpha.value) * h_prev.value
        np.testing.assert_allclose(mixed.value, expected, rtol=0, atol=1e-14)
        low = np.minimum(h_fuse.value, h_prev.value) - 1e-14
        high = np.maximum(h_fuse.value, h_prev.value) + 1e-14
        self.assertTrue(np.all((mixed.value >= low) & (mixed.value <= high)))


class ParamsTests(QuietEvents, unittest.TestCase):
    def test_document_round_trip_is_exact(self) -> None:
        _, params = model(small_graph(0))
        self.assertTrue(FocalParams.from_dict(params.to_dict()).equals(params))

    def test_unsupported_version_is_rejected(self) -> None:
        with self.assertRaisesRegex(ValueError, "format_version"):
            FocalParams.from_dict({"format_version": 7, "params": {}})

    def test_with_relations_pads_only_relation_tables(self) -> None:
        _, params = model(small_graph(0))
        padded = params.with_relations(6)
        for name in params:
            if name.endswith(".coa.rho"):
                self.assertEqual(padded[name].shape, (6, 2))
                np.testing.assert_array_equal(padded[name][:4], params[name])
                np.testing.assert_array_equal(padded[name][4:], 0.0)
            else:
                np.testing.assert_array_equal(padded[name], params[name])

    def test_draw_order_does_not_depend_on_relation_count(self) -> None:
        cfg = small_config()
        shape = ModelShape.from_graph(small_graph(0), cfg.metapaths)
        names = [s.name for s in param_specs(cfg, shape)]
        wider = [s.name for s in param_specs(cfg, replace(shape, num_relations=9))]
        self.assertEqual(names, wider)

    def test_concat_fusion_adds_its_projection(self) -> None:
        shape = ModelShape.from_graph(small_graph(0), small_config().metapaths)
        names = {s.name for s in param_specs(small_config(fusion="concat"), shape)}
        self.assertIn("layer1.fusion.wcat", names)
        self.assertNotIn("layer1.fusion.wcat", {s.name for s in param_specs(small_config(), shape)})


class ForwardTests(QuietEvents, unittest.TestCase):
    def test_logits_cover_requested_targets(self) -> None:
        g = small_graph(0)
        cfg, params = model(g)
        plan = build_plan(g, cfg.metapaths)
        full = focal_forward(params, plan, cfg)
        self.assertEqual(full.logits.shape, (g.target_count, g.num_labels))
        self.assertEqual(len(full.traces), cfg.num_layers)
        part = focal_forward(params, plan, cfg, np.array([3, 7]))
        np.testing.assert_allclose(part.logits.value, full.logits.value[[3, 7]], rtol=0, atol=1e-14)
        self.assertEqual(part.h_coa.shape, (2, cfg.hidden_dim))

    def test_forward_is_deterministic(self) -> None:
        g = small_graph(0)
        cfg, params = model(g)
        plan = build_plan(g, cfg.metapaths)
        a = focal_forward(params, plan, cfg).logits.value
        b = focal_forward(params, plan, cfg).logits.value
        np.testing.assert_array_equal(a, b)

    def test_gate_floor_is_the_smallest_aoa_gate(self) -> None:
        g = small_graph(0)
        cfg, params = model(g)
        trace = focal_forward(params, build_plan(g, cfg.metapaths), cfg).traces[0]
        self.assertEqual(gate_floor(trace, 4), float(trace.g2[4].min()))
        self.assertGreater(gate_floor(trace, 4), 0.0)

    def test_single_branch_modes(self) -> None:
        g = small_graph(0)
        cfg, params = model(g, branch_mode="coa_only")
        result = focal_forward(params, build_plan(g, cfg.metapaths), cfg)
        self.assertIsNone(result.h_aoa)
        self.assertIsNone(result.traces[0].g2)
        with self.assertRaises(ValueError):
            gate_floor(result.traces[0], 0)
        trace = result.traces[0]
        np.testing.assert_array_equal(trace.h_fuse, trace.h_coa)

        cfg, params = model(g, branch_mode="aoa_only")
        result = focal_forward(params, build_plan(g, cfg.metapaths), cfg)
        self.assertIsNone(result.h_coa)
        np.testing.assert_array_equal(result.traces[0].h_fuse, result.traces[0].h_aoa)

    def test_fusion_variants_run(self) -> None:
        g = small_graph(0)
        for fusion in ("single_gate", "sum", "concat"):
            cfg, params = model(g, fusion=fusion, residual="fixed")
            trace = focal_forward(params, build_plan(g, cfg.metapaths), cfg).traces[0]
            if fusion == "single_gate":
                np.testing.assert_allclose(trace.g1 + trace.g2, 1.0, rtol=0, atol=1e-15)
            if fusion == "sum":
                np.testing.assert_allclose(trace.h_fuse, trace.h_coa + trace.h_aoa, rtol=0, atol=1e-15)
            np.testing.assert_allclose(trace.h_out, 0.5 * trace.h_fuse + 0.5 * trace.h_prev, rtol=0, atol=1e-15)

    def test_secondary_only_metapaths_leave_aoa_without_input(self) -> None:
        g = paper_graph()
        cfg, params = model(g, metapaths=[["paper-term", "term-paper"]])
        with self.assertRaises(MetaPathError):
            focal_forward(params, build_plan(g, cfg.metapaths), cfg)

    def test_training_with_dropout_needs_an_rng(self) -> None:
        g = paper_graph()
        cfg, params = model(g, metapaths=PAPER_PATHS, dropout=0.5)
        with self.assertRaises(ValueError):
            focal_forward(params, build_plan(g, cfg.metapaths), cfg, training=True)


if __name__ == "__main__":
    unittest.main()
