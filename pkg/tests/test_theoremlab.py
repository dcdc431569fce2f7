from __future__ import annotations

import math
import tempfile
import unittest
from dataclasses import replace
from pathlib import Path

import numpy as np

from fixtures import QuietEvents, small_config, small_graph
from focal.settings import ConfigError
from focal.synthgen import SynthConfig, generate
from focal.theoremlab import (
    THEOREMS,
    AmplificationConfig,
    AttenuationConfig,
    DilutionTrialConfig,
    ErrorAccumulationConfig,
    GuaranteesConfig,
    LabConfig,
    LossFloorConfig,
    MetapathMassConfig,
    TheoremCheckFailed,
    TheoremReport,
    amplification_bound,
    augment_secondary,
    check_distribution,
    control_variate_mean,
    critical_mass,
    dilution_reference,
    guarantees_setup,
    loglog_slope,
    loss_floor_bound,
    mass_bound_for,
    mean_exp,
    metapath_mass_bound,
    report_to_text,
    require_passed,
    run_gradchecks,
    run_oversmoothing,
    run_suite,
    score_floor_rank,
    verify_dilution,
    verify_error_accumulation,
    verify_focal_guarantees,
    verify_grad_attenuation,
    verify_loss_amplification,
    verify_loss_floor,
    verify_metapath_mass,
    write_curves,
)


def report(checks: dict[str, bool], curves: dict[str, list[list[float]]] | None = None) -> TheoremReport:
    return TheoremReport("toy", {}, {}, {}, checks, curves or {})


class LabConfigTests(unittest.TestCase):
    def test_bundled_file_matches_defaults(self) -> None:
        self.assertEqual(LabConfig.bundled(), LabConfig())

    def test_unknown_section_and_key(self) -> None:
        with self.assertRaisesRegex(ConfigError, "unknown theorem section"):
            LabConfig.from_dict({"dilution_law": {}})
        with self.assertRaisesRegex(ConfigError, "unknown dilution config key"):
            LabConfig.from_dict({"dilution": {"samples": 3}})

    def test_section_values_are_validated(self) -> None:
        with self.assertRaisesRegex(ConfigError, "ascending"):
            DilutionTrialConfig(m_values=(512, 256))
        with self.assertRaisesRegex(ConfigError, "metapath_mass.c"):
            MetapathMassConfig(c=0.0)
        with self.assertRaisesRegex(ConfigError, "include 0"):
            LossFloorConfig(mass_grid=(0.5, 1.0))

    def test_with_seed_reaches_every_section(self) -> None:
        lab = LabConfig().with_seed(9)
        self.assertEqual({section["seed"] for section in lab.to_dict().values()}, {9})


class DistributionTests(unittest.TestCase):
    def test_closed_form_means(self) -> None:
        self.assertAlmostEqual(mean_exp({"name": "point", "value": 1.0}), math.e, places=14)
        self.assertAlmostEqual(mean_exp({"name": "normal", "loc": 0.0, "scale": 1.0}), math.exp(0.5), places=14)
        self.assertAlmostEqual(mean_exp({"name": "uniform", "low": 0.0, "high": 1.0}), math.e - 1.0, places=14)
        self.assertAlmostEqual(mean_exp({"name": "uniform", "low": 2.0, "high": 2.0}), math.exp(2.0), places=14)

    def test_bad_distributions(self) -> None:
        with self.assertRaisesRegex(ValueError, "unknown logit distribution"):
            check_distribution({"name": "cauchy"})
        with self.assertRaisesRegex(ValueError, "does not take"):
            check_distribution({"name": "point", "loc": 1.0})
        with self.assertRaisesRegex(ValueError, "finite mean"):
            check_distribution({"name": "laplace", "scale": 1.0})


class DilutionTests(QuietEvents, unittest.TestCase):
    def test_reference_and_helpers(self) -> None:
        self.assertEqual(dilution_reference(4, 4, 1.0, 1.0), 0.5)
        self.assertAlmostEqual(loglog_slope([1, 10, 100], [1.0, 0.1, 0.01]), -1.0, places=12)
        values = np.array([0.2, 0.4, 0.6])
        self.assertAlmostEqual(control_variate_mean(values, np.ones(3), 5.0), 0.4, places=15)

    def test_default_configuration_passes(self) -> None:
        result = verify_dilution(DilutionTrialConfig())
        self.assertTrue(result.passed, result.failed_checks())
        self.assertIn("ratio1.m4096.within_tolerance", result.checks)
        self.assertTrue(result.checks["ratio1.slope_in_range"])
        self.assertTrue(result.checks["equal_logits.exact"])
        self.assertEqual(len(result.curves["ratio1"]), 5)

    def test_non_gated_ratios_are_reported_only(self) -> None:
        cfg = DilutionTrialConfig(m_values=(256, 1024), trials=200, mass_ratios=(1.0, 8.0))
        result = verify_dilution(cfg)
        self.assertFalse(any(name.startswith("ratio8.") for name in result.checks))
        self.assertIn("ratio8.m256.within_tolerance", result.measured)
        self.assertIn("ratio8.slope_in_range", result.measured)
        self.assertIn("ratio8", result.curves)
        with self.assertRaisesRegex(ConfigError, "gated_ratios"):
            DilutionTrialConfig(mass_ratios=(2.0, 8.0))

    def test_drifting_secondary_logits_break_the_slope(self) -> None:
        cfg = DilutionTrialConfig(m_values=(256, 1024, 4096), trials=300, mass_ratios=(1.0,), mode="drift")
        result = verify_dilution(cfg)
        self.assertFalse(result.checks["ratio1.slope_in_range"])
        self.assertLess(result.measured["ratio1.slope"], -1.1)


class BoundTheoremTests(QuietEvents, unittest.TestCase):
    def test_closed_form_bounds(self) -> None:
        self.assertAlmostEqual(float(amplification_bound(3, 1.0, 1.0, 0.0, 0.0)), 3 * math.log(2.0), places=14)
        self.assertAlmostEqual(float(metapath_mass_bound(0.0, 0.0, 0.5, 1, 8)), 0.25, places=15)
        self.assertAlmostEqual(float(critical_mass(np.zeros((1, 8)), 2)[0]), 0.25, places=15)
        self.assertAlmostEqual(loss_floor_bound(2, 1.0, 1.0, 0.0), 2 * math.log(2.0), places=15)
        self.assertAlmostEqual(loss_floor_bound(2, 1.0, 1.0, 1.0), 2 * math.log(2.0) - 1.0, places=15)

    def test_mass_bound_uses_the_top_share_of_all_paths(self) -> None:
        # two strong and two weak non-critical paths; the floor is the 4th best of 4
        scores = np.array([[0.0, 0.0, 0.0, 0.0, 10.0, 10.0, -100.0, -100.0]])
        self.assertEqual(score_floor_rank(0.5, 4, 8), 4)
        bound = mass_bound_for(scores, 4, 0.5)
        self.assertAlmostEqual(float(bound[0]), math.exp(100.0), delta=math.exp(100.0) * 1e-12)
        self.assertLessEqual(float(critical_mass(scores, 4)[0]), float(bound[0]))

        scores = np.array([[1.0, 0.0, 0.0, 0.0]])
        self.assertAlmostEqual(float(mass_bound_for(scores, 1, 0.5)[0]), math.e / 2.0, places=14)
        self.assertLess(float(critical_mass(scores, 1)[0]), math.e / 2.0)

    def test_mass_bound_needs_enough_non_critical_paths(self) -> None:
        with self.assertRaisesRegex(ValueError, "non-critical"):
            score_floor_rank(0.75, 4, 8)
        with self.assertRaisesRegex(ValueError, "non-critical"):
            score_floor_rank(0.5, 8, 8)

    def test_wide_scores_keep_the_mass_bound(self) -> None:
        result = verify_metapath_mass(MetapathMassConfig(draws=2000, span_draws=10, score_scale=2.0))
        self.assertEqual(result.measured["violations"], 0)
        self.assertTrue(result.checks["bound_holds"])

    def test_gradient_attenuation(self) -> None:
        result = verify_grad_attenuation(AttenuationConfig(trials=500, trend_trials=300))
        self.assertTrue(result.passed, result.failed_checks())
        self.assertEqual(result.measured["violations"], 0)

    def test_loss_amplification(self) -> None:
        result = verify_loss_amplification(AmplificationConfig(trials=500))
        self.assertTrue(result.passed, result.failed_checks())

    def test_metapath_mass(self) -> None:
        result = verify_metapath_mass(MetapathMassConfig(draws=500, span_draws=20))
        self.assertTrue(result.passed, result.failed_checks())
        self.assertEqual(set(result.curves), {"critical1", "critical2", "critical4"})

    def test_loss_floor(self) -> None:
        result = verify_loss_floor(LossFloorConfig(draws=500))
        self.assertTrue(result.passed, result.failed_checks())

    def test_error_accumulation(self) -> None:
        result = verify_error_accumulation(ErrorAccumulationConfig(trials=500))
        self.assertTrue(result.passed, result.failed_checks())

    def test_reports_are_deterministic(self) -> None:
        cfg = LossFloorConfig(draws=200, positives=(1, 2))
        self.assertEqual(verify_loss_floor(cfg).to_dict(), verify_loss_floor(cfg).to_dict())


class GuaranteeTests(QuietEvents, unittest.TestCase):
    lab = GuaranteesConfig(
        nodes=40,
        sensitivity_pairs=10,
        control_pairs=5,
        synth={"num_targets": 200, "num_contexts": 80, "secondary_degree": 10.0},
    )

    def test_small_model_satisfies_every_guarantee(self) -> None:
        g, params, cfg = guarantees_setup(self.lab, small_config())
        result = verify_focal_guarantees(g, params, cfg, self.lab)
        self.assertTrue(result.passed, result.failed_checks())
        self.assertEqual(result.measured["aoa_invariance.per_layer_max_abs_diff"], 0.0)
        self.assertEqual(result.measured["aoa_invariance.stacked_max_abs_diff"], 0.0)
        self.assertTrue(result.checks["aoa_invariance.every_layer"])
        self.assertEqual(result.measured["layers"], small_config().num_layers)

    def test_default_graph_holds_the_requested_node_sample(self) -> None:
        lab = GuaranteesConfig()
        g = generate(SynthConfig.from_dict({**lab.synth, "seed": lab.seed}))
        self.assertGreaterEqual(g.total_nodes, lab.nodes)

    def test_short_node_sample_fails_the_gate_floor_coverage(self) -> None:
        lab = replace(self.lab, nodes=100_000)
        g, params, cfg = guarantees_setup(lab, small_config())
        result = verify_focal_guarantees(g, params, cfg, lab)
        self.assertFalse(result.checks["gate_floor.enough_nodes"])
        self.assertEqual(result.measured["nodes_checked"], g.total_nodes)

    def test_needs_the_gated_full_model(self) -> None:
        g, params, cfg = guarantees_setup(self.lab, small_config())
        with self.assertRaises(ValueError):
            verify_focal_guarantees(g, params, replace(cfg, fusion="sum"), self.lab)

    def test_augmented_graph_adds_only_secondary_structure(self) -> None:
        g = small_graph(0)
        g_aug, paths = augment_secondary(g, np.random.default_rng(0))
        self.assertEqual(len(g_aug.relations), len(g.relations) + 3)
        self.assertEqual(g_aug.relations[: len(g.relations)], g.relations)
        for names in paths:
            self.assertFalse(g_aug.is_primary_path(g_aug.metapath(names)))


class SuiteTests(QuietEvents, unittest.TestCase):
    def test_gradchecks_pass(self) -> None:
        result = run_gradchecks(seed=0, points=2)
        self.assertEqual(result.theorem, "gradcheck")
        self.assertTrue(result.passed, result.failed_checks())
        self.assertIn("forward.within_tolerance", result.checks)

    def test_unknown_suite(self) -> None:
        with self.assertRaisesRegex(ValueError, "unknown theorem suite"):
            run_suite("everything", LabConfig())

    def test_single_named_suite(self) -> None:
        lab = replace(LabConfig(), error_accumulation=ErrorAccumulationConfig(trials=100))
        reports = run_suite("error_accumulation", lab)
        self.assertEqual([r.theorem for r in reports], ["error_accumulation"])
        self.assertIn("error_accumulation", THEOREMS)

    def test_require_passed_lists_failures(self) -> None:
        require_passed([report({"a": True})])
        with self.assertRaises(TheoremCheckFailed) as ctx:
            require_passed([report({"a": True, "b": False}), report({})])
        self.assertEqual(ctx.exception.failed, ["toy:b", "toy"])

    def test_text_and_curve_files(self) -> None:
        r = report({"ok": True}, {"trend": [[1.0, 2.5], [2.0, 1.25]]})
        self.assertTrue(report_to_text(r).startswith("theorem=toy\npassed=True\nchecks.ok=True\n"))
        with tempfile.TemporaryDirectory(prefix="curves-") as tmp:
            (path,) = write_curves(r, Path(tmp))
            self.assertEqual(path.name, "toy_trend.dat")
            self.assertEqual(path.read_text(encoding="utf-8"), "1.0 2.5\n2.0 1.25\n")

    def test_oversmoothing_report_shape(self) -> None:
        result = run_oversmoothing(small_graph(0), small_config(max_epoch=1), depths=(1, 2))
        self.assertEqual(result.theorem, "oversmoothing")
        self.assertEqual(set(result.curves), {"full", "coa_only"})
        self.assertIn("full_drop_within_coa_drop", result.checks)
        with self.assertRaises(ValueError):
            run_oversmoothing(small_graph(0), small_config(), depths=(2,))


if __name__ == "__main__":
    unittest.main()
