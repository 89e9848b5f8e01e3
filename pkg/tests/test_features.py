"""
Tests for feature extraction and the text helpers.
"""
import unittest
import sys
import os

import numpy as np
from joblib import Parallel, delayed

# Add parent directory to path
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from qsalign.clicksim import Context, Suggestion
from qsalign.features import featurize, featurize_many, jaccard, text_vectors
from qsalign.utils.errors import InvalidInputError
from qsalign.utils.feature_cache import FeatureCache


def ctx(lang="en"):
    return Context(id="c1", features=(1.0, 0.0, 0.0, 0.0, 0.2, 0.4, -0.1, 0.0), lang=lang, unsafe=False,
                   week=0, intent="information_retrieval")


class TestFeaturize(unittest.TestCase):

    def test_deterministic(self):
        s = Suggestion("c1-s00", "weather in paris tomorrow", "en", 0.0)
        a = featurize(ctx(), s)
        b = featurize(ctx(), Suggestion("c1-s00", "weather in paris tomorrow", "en", 0.0))
        np.testing.assert_array_equal(a, b)
        self.assertEqual(a.shape, (64,))
        self.assertTrue(np.all(np.isfinite(a)))

    def test_layout(self):
        c = ctx()
        v = featurize(c, Suggestion("x", "one two three", "en", 0.0))
        np.testing.assert_array_equal(v[:8], c.x)
        self.assertAlmostEqual(v[8], 3 / 12)
        self.assertEqual(v[9], 1.0)
        self.assertAlmostEqual(float(np.linalg.norm(v[10:])), 1.0)

    def test_one_token_changes_hashed_block(self):
        a = featurize(ctx(), Suggestion("x", "cheap flights to rome", "en", 0.0))
        b = featurize(ctx(), Suggestion("x", "cheap flights to oslo", "en", 0.0))
        self.assertTrue(np.any(a[10:] != b[10:]))

    def test_language_mismatch(self):
        v = featurize(ctx("en"), Suggestion("x", "你好 世界", "zh", 0.0))
        self.assertEqual(v[len(ctx().features) + 1], 0.0)
        mixed = featurize(ctx("en"), Suggestion("x", "hello 世界", "mixed", 0.0))
        self.assertEqual(mixed[9], 0.5)

    def test_many_matches_single(self):
        sugg = [Suggestion(f"s{i}", t, "en", 0.0) for i, t in enumerate(["a b", "c d e", "f"])]
        F = featurize_many(ctx(), sugg, 32)
        for row, s in zip(F, sugg):
            np.testing.assert_array_equal(row, featurize(ctx(), s, 32))

    def test_errors(self):
        with self.assertRaises(InvalidInputError):
            featurize(ctx(), Suggestion("x", "   ", "en", 0.0))
        with self.assertRaises(InvalidInputError):
            featurize(ctx(), Suggestion("x", "fine", "en", 0.0), dim=10)


class TestTextHelpers(unittest.TestCase):

    def test_jaccard(self):
        self.assertEqual(jaccard("a b", "a b"), 1.0)
        self.assertEqual(jaccard("a b", "c d"), 0.0)
        self.assertAlmostEqual(jaccard("a b c", "a b d"), 0.5)
        self.assertEqual(jaccard("", ""), 1.0)

    def test_text_vectors_normalised(self):
        V = text_vectors(["red apple", "blue sea wave"], 16)
        self.assertEqual(V.shape, (2, 16))
        np.testing.assert_allclose(np.linalg.norm(V, axis=1), 1.0)
        self.assertTrue(np.all(V >= 0))

    def test_cache_evicts_oldest(self):
        cache = FeatureCache(max_entries=2)
        cache.set("a", 1)
        cache.set("b", 2)
        self.assertEqual(cache.get("a"), 1)
        cache.set("c", 3)
        self.assertIsNone(cache.get("b"))
        self.assertEqual(len(cache), 2)
        self.assertEqual(cache.hits, 1)
        self.assertEqual(cache.misses, 1)

    def test_cache_shared_by_threads(self):
        """Concurrent readers and writers on a tiny cache never trip over evictions."""
        cache = FeatureCache(max_entries=8)

        def hammer(worker):
            rng = np.random.default_rng(worker)
            for key in rng.integers(0, 32, size=2000):
                if cache.get(int(key)) is None:
                    cache.set(int(key), worker)
            return True

        done = Parallel(n_jobs=8, prefer="threads")(delayed(hammer)(w) for w in range(16))
        self.assertTrue(all(done))
        self.assertLessEqual(len(cache), 8)
        self.assertEqual(cache.hits + cache.misses, 16 * 2000)


if __name__ == '__main__':
    unittest.main()
