"""
Tests for reward fusion: logistic-regression weights and Pareto-guided tuning.
"""
import unittest
import sys
import os

import numpy as np
import pandas as pd

# Add parent directory to path
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from qsalign.fusion import (FusionConfig, FusionWeights, ParetoConfig, assemble_weights, fit_fusion_weights,
                            fusion_objective, pareto_tune, separation_rate, trend_slopes)
from qsalign.textrewards import COMPONENTS
from qsalign.utils.errors import ConfigError, InvalidInputError, ProbeError


def toy_deltas(n=400, seed=0):
    rng = np.random.default_rng(seed)
    w_true = np.array([2.0, -1.0, 0.5])
    D = rng.normal(size=(n, 3))
    flip = rng.random(n) > 1 / (1 + np.exp(-D @ w_true))
    D[flip] *= -1
    return D, w_true


def linear_probe(slope_fn, steps=10):
    def probe(weights, round_index):
        s = slope_fn(weights.vector)
        x = np.arange(steps, dtype=float)
        return pd.DataFrame({name: si * x for name, si in zip(weights.names, s)})
    return probe


class TestFitWeights(unittest.TestCase):

    def test_stationary_point(self):
        D, _ = toy_deltas()
        fw = fit_fusion_weights(D, 0.01, names=("a", "b", "c"))
        _, grad, _ = fusion_objective(fw.vector, D, 0.01)
        self.assertLessEqual(np.linalg.norm(grad), 1e-6)
        self.assertEqual(fw.provenance, "initial_lr")
        self.assertEqual(fw.names, ("a", "b", "c"))

    def test_recovers_direction(self):
        D, w_true = toy_deltas(n=3000, seed=1)
        fw = fit_fusion_weights(D, 1e-4)
        cos = fw.vector @ w_true / (np.linalg.norm(fw.vector) * np.linalg.norm(w_true))
        self.assertGreater(cos, 0.95)
        self.assertGreater(separation_rate(fw.vector, D), 0.7)

    def test_single_feature_closed_form(self):
        """-log sigmoid(w) + lam w^2 has gradient sigmoid(w) - 1 + 2 lam w = 0 at the optimum."""
        fw = fit_fusion_weights([[1.0]], 0.1)
        w = fw.vector[0]
        self.assertAlmostEqual(1 / (1 + np.exp(-w)) - 1 + 0.2 * w, 0.0, delta=1e-6)

    def test_sign_flipped_copy_gets_negated_weight(self):
        D, _ = toy_deltas(n=2000, seed=2)
        D = np.column_stack([D, -D[:, 0]])
        w = fit_fusion_weights(D, 0.01).vector
        self.assertAlmostEqual(w[3], -w[0], delta=1e-3)
        self.assertGreater(abs(w[0]), 0.1)

    def test_pure_noise_component_stays_small(self):
        rng = np.random.default_rng(3)
        n = 10_000
        D = rng.normal(size=(n, 3))
        flip = rng.random(n) > 1 / (1 + np.exp(-D[:, :2] @ np.array([2.0, -1.0])))
        D[flip] *= -1
        w = fit_fusion_weights(D, 0.01).vector
        self.assertLess(abs(w[2]), 0.1 * np.max(np.abs(w[:2])))

    def test_at_least_as_separating_as_any_single_signal(self):
        for seed in range(3):
            D, _ = toy_deltas(n=3000, seed=10 + seed)
            fitted = separation_rate(fit_fusion_weights(D, 0.01).vector, D)
            for j in range(D.shape[1]):
                self.assertGreaterEqual(fitted, separation_rate(np.eye(D.shape[1])[j], D), msg=f"seed {seed} j {j}")

    def test_stronger_penalty_shrinks(self):
        D, _ = toy_deltas()
        small = np.linalg.norm(fit_fusion_weights(D, 0.001).vector)
        large = np.linalg.norm(fit_fusion_weights(D, 0.5).vector)
        self.assertLess(large, small)

    def test_zero_deltas(self):
        fw = fit_fusion_weights(np.zeros((5, 3)), 0.01)
        np.testing.assert_array_equal(fw.vector, 0.0)

    def test_errors(self):
        with self.assertRaises(InvalidInputError):
            fit_fusion_weights(np.zeros((0, 3)), 0.01)
        with self.assertRaises(InvalidInputError):
            fit_fusion_weights([[1.0, np.inf]], 0.01)
        with self.assertRaises(InvalidInputError):
            fit_fusion_weights([[1.0]], -1.0)
        with self.assertRaises(ConfigError):
            FusionWeights((1.0, 2.0), names=("a",))


class TestAssemble(unittest.TestCase):

    def test_priors_mass_and_signs(self):
        rng = np.random.default_rng(2)
        D = rng.normal(size=(50, len(COMPONENTS)))
        D[:, COMPONENTS.index("format")] = 0.0
        fitted = FusionWeights(tuple(rng.normal(size=len(COMPONENTS))), 0.01, names=COMPONENTS)
        fitted = FusionWeights(tuple(abs(v) if c != "rm_sigma" else 0.4 for c, v in zip(COMPONENTS, fitted.w)),
                               0.01, names=COMPONENTS)
        out = assemble_weights(fitted, FusionConfig(), D)
        w = dict(zip(out.names, out.w))
        self.assertEqual(out.names, COMPONENTS)
        self.assertEqual(w["format"], 0.25)
        self.assertEqual(w["diversity"], 0.25)
        self.assertEqual(w["safety"], 1.0)
        self.assertEqual(w["rm_sigma"], -0.2)
        free = [c for c in COMPONENTS if c not in ("format", "diversity", "safety", "rm_sigma")]
        self.assertAlmostEqual(sum(abs(w[c]) for c in free), 1.0 - 0.4 / sum(
            abs(v) for c, v in zip(COMPONENTS, fitted.w) if c not in ("format", "diversity", "safety")), places=9)

    def test_flat_component_takes_fallback(self):
        D = np.random.default_rng(3).normal(size=(20, len(COMPONENTS)))
        D[:, COMPONENTS.index("ppl")] = 1.5
        fitted = FusionWeights(tuple([0.5] * len(COMPONENTS)), 0.01, names=COMPONENTS)
        w = dict(zip(COMPONENTS, assemble_weights(fitted, FusionConfig(), D).w))
        self.assertEqual(w["ppl"], 0.0)


class TestParetoTune(unittest.TestCase):

    def test_toy_converges(self):
        """Slopes s1 = w1 - w2, s2 = w2 - w1/2 from (1, 0.2) settle in the third round."""
        w0 = FusionWeights((1.0, 0.2), 0.01, names=("c1", "c2"))
        result = pareto_tune(w0, linear_probe(lambda w: (w[0] - w[1], w[1] - 0.5 * w[0])), ParetoConfig())
        self.assertTrue(result.converged)
        self.assertEqual(len(result.log), 3)
        self.assertEqual(result.log["action"].iloc[-1], "converged")
        np.testing.assert_allclose(result.weights.vector, [0.5625, 0.45])
        self.assertEqual(result.weights.provenance, "pareto_tuned")
        self.assertTrue(np.all(result.weights.vector > 0))

    def test_immediate_convergence_keeps_provenance(self):
        w0 = FusionWeights((1.0, 0.5), names=("c1", "c2"))
        result = pareto_tune(w0, linear_probe(lambda w: (0.1, 0.2)))
        self.assertTrue(result.converged)
        self.assertEqual(result.weights.provenance, "initial_lr")
        np.testing.assert_array_equal(result.weights.vector, w0.vector)

    def test_no_convergence(self):
        w0 = FusionWeights((1.0, -0.5), names=("c1", "c2"))
        result = pareto_tune(w0, linear_probe(lambda w: (-1.0, 0.0)), ParetoConfig(max_rounds=4))
        self.assertFalse(result.converged)
        self.assertAlmostEqual(result.weights.vector[0], 1.5 ** 4)
        self.assertEqual(result.weights.vector[1], -0.5)

    def test_probe_failure(self):
        def probe(weights, round_index):
            if round_index == 1:
                raise RuntimeError("rollout diverged")
            return pd.DataFrame({"c1": -np.arange(5.0), "c2": np.arange(5.0)})
        with self.assertRaises(ProbeError) as ctx:
            pareto_tune(FusionWeights((1.0, 1.0), names=("c1", "c2")), probe)
        self.assertEqual(ctx.exception.round_index, 1)

    def test_probe_missing_columns(self):
        with self.assertRaises(ProbeError):
            pareto_tune(FusionWeights((1.0, 1.0), names=("c1", "c2")), lambda w, r: pd.DataFrame({"c1": [0.0, 1.0]}))

    def test_trend_slopes_window(self):
        df = pd.DataFrame({"a": [5.0, 0.0, 1.0, 2.0, 3.0]})
        np.testing.assert_allclose(trend_slopes(df, ["a"], window=4), [1.0])
        np.testing.assert_array_equal(trend_slopes(df.head(1), ["a"], window=4), [0.0])

    def test_invalid_config(self):
        with self.assertRaises(ConfigError):
            ParetoConfig(alpha_up=0.9).validate()
        with self.assertRaises(ConfigError):
            ParetoConfig(alpha_down=1.2).validate()


if __name__ == '__main__':
    unittest.main()
