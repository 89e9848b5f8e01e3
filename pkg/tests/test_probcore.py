"""
Tests for the Gaussian preference kernel.
"""
import math
import unittest
import sys
import os

import numpy as np
from scipy.integrate import trapezoid
from scipy.special import expit
from scipy.stats import norm

# Add parent directory to path
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from qsalign.probcore import (GaussianScore, bhattacharyya_coeff, bhattacharyya_dist, kl_gauss_to_unit,
                              pref_prob_closed, pref_prob_mc, ulb, variance_penalty)
from qsalign.utils.errors import InvalidInputError


class TestPrefProb(unittest.TestCase):

    def test_closed_form_values(self):
        """Symmetry, the sigmoid limit and the unit-sigma case."""
        self.assertEqual(pref_prob_closed(GaussianScore(0.3, 1.7), GaussianScore(0.3, 0.2)).value, 0.5)
        tiny = pref_prob_closed(GaussianScore(1.0, 1e-6), GaussianScore(0.0, 1e-6))
        self.assertAlmostEqual(tiny.value, float(expit(1.0)), places=5)
        est = pref_prob_closed(GaussianScore(1.0, 1.0), GaussianScore(0.0, 1.0))
        self.assertAlmostEqual(est.value, 0.6788, places=3)
        self.assertEqual(est.method, "closed_form")
        self.assertEqual(est.n_samples, 0)

    def test_closed_form_matches_monte_carlo(self):
        w, l = GaussianScore(1.0, 1.0), GaussianScore(0.0, 1.0)
        closed = pref_prob_closed(w, l).value
        mc = pref_prob_mc(w, l, 1_000_000, seed=7).value
        self.assertLess(abs(closed - mc), 0.005)

    def test_oracle_agreement_grid(self):
        for sigma in (0.25, 0.5, 1.0, 2.0):
            for delta in (-3.0, -1.0, 0.0, 0.5, 2.0, 3.0):
                w, l = GaussianScore(delta, sigma), GaussianScore(0.0, sigma)
                gap = abs(pref_prob_closed(w, l).value - pref_prob_mc(w, l, 1_000_000, seed=11).value)
                self.assertLessEqual(gap, 0.01, msg=f"delta={delta} sigma={sigma}")

    def test_antisymmetry_and_monotonicity(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            w = GaussianScore(rng.normal(), rng.uniform(0.05, 3))
            l = GaussianScore(rng.normal(), rng.uniform(0.05, 3))
            total = pref_prob_closed(w, l).value + pref_prob_closed(l, w).value
            self.assertAlmostEqual(total, 1.0, delta=1e-12)
        l = GaussianScore(0.0, 1.0)
        vals = [pref_prob_closed(GaussianScore(mu, 1.0), l).value for mu in np.linspace(-2, 2, 21)]
        self.assertTrue(np.all(np.diff(vals) > 0))

    def test_shrinkage_toward_half(self):
        vals = [pref_prob_closed(GaussianScore(1.0, s), GaussianScore(0.0, s)).value for s in (0.1, 0.5, 1, 2, 5)]
        self.assertTrue(np.all(np.diff(vals) < 0))
        self.assertTrue(all(v > 0.5 for v in vals))

    def test_monte_carlo_symmetry_and_determinism(self):
        a = GaussianScore(0.0, 1.0)
        est = pref_prob_mc(a, a, 1_000_000, seed=3)
        self.assertAlmostEqual(est.value, 0.5, delta=0.002)
        self.assertEqual(est.method, "monte_carlo")
        self.assertEqual(est.seed, 3)
        w, l = GaussianScore(1.0, 1.0), GaussianScore(0.0, 1.0)
        self.assertEqual(pref_prob_mc(w, l, 10_000, seed=5).value, pref_prob_mc(w, l, 10_000, seed=5).value)
        small = pref_prob_mc(w, l, 100_000, seed=5).value
        big = pref_prob_mc(w, l, 1_000_000, seed=6).value
        self.assertLess(abs(small - big), 0.005)

    def test_monte_carlo_variance_shrinks(self):
        """Spread of n=1000 estimates is many times that of n=100000 estimates."""
        w, l = GaussianScore(1.0, 1.0), GaussianScore(0.0, 1.0)
        small = [pref_prob_mc(w, l, 1000, seed=s).value for s in range(100)]
        large = [pref_prob_mc(w, l, 100_000, seed=1000 + s).value for s in range(100)]
        self.assertGreaterEqual(np.std(small, ddof=1) / np.std(large, ddof=1), 5.0)

    def test_invalid_inputs(self):
        with self.assertRaises(InvalidInputError):
            GaussianScore(0.0, 0.0)
        with self.assertRaises(InvalidInputError):
            GaussianScore(float("nan"), 1.0)
        with self.assertRaises(InvalidInputError):
            pref_prob_mc(GaussianScore(0, 1), GaussianScore(0, 1), 0, seed=1)
        with self.assertRaises(ValueError):
            pref_prob_closed((0.0, 1.0), GaussianScore(0, 1))


class TestOverlap(unittest.TestCase):

    def test_bhattacharyya_values(self):
        a = GaussianScore(0.5, 1.3)
        self.assertAlmostEqual(bhattacharyya_coeff(a, a), 1.0, places=12)
        self.assertAlmostEqual(bhattacharyya_dist(a, a), 0.0, places=12)
        b, c = GaussianScore(2.0, 1.0), GaussianScore(0.0, 1.0)
        self.assertAlmostEqual(bhattacharyya_coeff(b, c), math.exp(-0.5), places=10)
        self.assertAlmostEqual(bhattacharyya_dist(b, c), 0.5, places=10)

    def test_bhattacharyya_matches_integration(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            a = GaussianScore(rng.normal(), rng.uniform(0.3, 2.0))
            b = GaussianScore(rng.normal(), rng.uniform(0.3, 2.0))
            centre = 0.5 * (a.mu + b.mu)
            span = 10 * max(a.sigma, b.sigma)
            x = np.linspace(centre - span, centre + span, 100_001)
            integral = trapezoid(np.sqrt(norm.pdf(x, a.mu, a.sigma) * norm.pdf(x, b.mu, b.sigma)), x)
            self.assertAlmostEqual(bhattacharyya_coeff(a, b), integral, delta=1e-4)
            self.assertAlmostEqual(bhattacharyya_dist(a, b), -math.log(bhattacharyya_coeff(a, b)), delta=1e-12)

    def test_ulb_values_and_bound(self):
        self.assertEqual(ulb(GaussianScore(1.0, 0.5), GaussianScore(1.0, 2.0)), 0.0)
        self.assertAlmostEqual(ulb(GaussianScore(2.0, 1.0), GaussianScore(0.0, 1.0)), 0.25)
        rng = np.random.default_rng(2)
        for _ in range(10_000):
            w = GaussianScore(rng.normal(0, 3), rng.uniform(1e-3, 4))
            l = GaussianScore(rng.normal(0, 3), rng.uniform(1e-3, 4))
            self.assertLessEqual(ulb(w, l), bhattacharyya_dist(w, l) + 1e-12)


class TestVarianceRegularisers(unittest.TestCase):

    def test_variance_penalty(self):
        self.assertAlmostEqual(variance_penalty(1.0), 1.0)
        self.assertAlmostEqual(variance_penalty(math.e), math.e ** 2 - 2.0, places=10)
        h = 1e-5
        deriv = (variance_penalty(1 + h) - variance_penalty(1 - h)) / (2 * h)
        self.assertAlmostEqual(deriv, 0.0, places=6)
        self.assertGreater(variance_penalty(1e-3), 10)
        self.assertGreater(variance_penalty(10.0), 90)
        with self.assertRaises(InvalidInputError):
            variance_penalty(0.0)

    def test_kl_to_unit(self):
        self.assertEqual(kl_gauss_to_unit(1.0), 0.0)
        self.assertAlmostEqual(kl_gauss_to_unit(2.0), (4 - 1 - 2 * math.log(2)) / 2, places=12)
        for s in (0.1, 0.7, 1.3, 5.0):
            self.assertAlmostEqual(kl_gauss_to_unit(s), (variance_penalty(s) - 1) / 2, delta=1e-12)
            self.assertGreater(kl_gauss_to_unit(s), 0.0)
        with self.assertRaises(InvalidInputError):
            kl_gauss_to_unit(-1.0)


if __name__ == '__main__':
    unittest.main()
