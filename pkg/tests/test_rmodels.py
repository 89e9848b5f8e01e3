"""
Tests for the reward-model heads, losses, training loop and checkpoints.
"""
import math
import tempfile
import unittest
import sys
import os

import numpy as np

# Add parent directory to path
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from helpers import numeric_grad, rel_error, small_triplets, small_world
from qsalign.clicksim import WorldConfig, gen_world
from qsalign.rmodels import (PairBatch, RewardModel, TrainConfig, TrainTrace, btrm_loss_grad, btrm_score,
                             build_pair_batch, garm_loss_grad, garm_outputs, garm_score, init_params, load_checkpoint,
                             pair_in_dim, pairedrm_loss_grad, pairedrm_prob, rm_accuracy, save_checkpoint, train)
from qsalign.utils.errors import ConfigError, DataError, InvalidInputError, NumericError
from qsalign.utils.io import save_json


def random_batch(n=6, d=5, c=2, seed=0):
    rng = np.random.default_rng(seed)
    return PairBatch(rng.normal(size=(n, d)), rng.normal(size=(n, d)), rng.normal(size=(n, c)))


def random_params(head, in_dim, seed=0, hidden=4):
    p = init_params(head, in_dim, seed, hidden=hidden)
    rng = np.random.default_rng(seed + 100)
    return p.from_vector(rng.normal(0.0, 0.5, size=p.to_vector().size))


def check_gradient(test, loss_fn, p):
    loss, grad = loss_fn(p)
    num = numeric_grad(lambda v: loss_fn(p.from_vector(v))[0], p.to_vector())
    test.assertLessEqual(rel_error(grad.to_vector(), num), 1e-4)


class TestHeads(unittest.TestCase):

    def test_zero_weights(self):
        f = np.ones(5)
        self.assertEqual(btrm_score(init_params("scalar", 5, 0, zero=True), f), 0.0)
        score = garm_score(init_params("gaussian", 5, 0, zero=True), f)
        self.assertEqual(score.mu, 0.0)
        self.assertAlmostEqual(score.sigma, math.log(2.0) + 1e-3, places=12)

    def test_sigma_positive(self):
        p = random_params("gaussian", 5, seed=3, hidden=8)
        _, sigma = garm_outputs(p, np.random.default_rng(0).normal(0, 10, size=(500, 5)))
        self.assertTrue(np.all(sigma > 0))

    def test_initial_sigma_near_one(self):
        p = init_params("gaussian", 5, 0)
        _, sigma = garm_outputs(p, np.random.default_rng(0).normal(size=(50, 5)))
        np.testing.assert_allclose(sigma, 1.0, atol=0.2)

    def test_paired_antisymmetry(self):
        p = random_params("pair_logit", pair_in_dim(2, 5), seed=1)
        rng = np.random.default_rng(2)
        for _ in range(20):
            c, f1, f2 = rng.normal(size=2), rng.normal(size=5), rng.normal(size=5)
            self.assertAlmostEqual(pairedrm_prob(p, c, f1, f2) + pairedrm_prob(p, c, f2, f1), 1.0, delta=1e-12)
            self.assertEqual(pairedrm_prob(p, c, f1, f1), 0.5)

    def test_head_mismatch(self):
        with self.assertRaises(ConfigError):
            btrm_score(init_params("gaussian", 5, 0), np.ones(5))
        with self.assertRaises(ConfigError):
            garm_loss_grad(init_params("scalar", 5, 0), random_batch(), 0.05)
        with self.assertRaises(ConfigError):
            RewardModel("paired", init_params("scalar", 5, 0))


class TestLosses(unittest.TestCase):

    def test_equal_scores_give_ln2(self):
        batch = random_batch()
        loss, _ = btrm_loss_grad(init_params("scalar", 5, 0, zero=True), batch)
        self.assertAlmostEqual(loss, math.log(2.0), places=12)
        loss, _ = pairedrm_loss_grad(init_params("pair_logit", pair_in_dim(2, 5), 0, zero=True), batch)
        self.assertAlmostEqual(loss, math.log(2.0), places=12)

    def test_large_margin_gives_zero_loss(self):
        p = init_params("scalar", 1, 0, zero=True)
        p.W1[:] = 1.0
        p.W2[:] = 1.0
        p.W3[:] = 1000.0
        batch = PairBatch(np.full((3, 1), 5.0), np.full((3, 1), -5.0), np.zeros((3, 1)))
        loss, _ = btrm_loss_grad(p, batch)
        self.assertLess(loss, 1e-8)

    def test_garm_loss_value(self):
        p = init_params("gaussian", 5, 0, hidden=4, zero=True)
        p.b3[1] = math.log(math.expm1(1.0 - 1e-3))
        loss, _ = garm_loss_grad(p, random_batch(), 0.01)
        self.assertAlmostEqual(loss, math.log(2.0) + 0.02, places=10)
        loss0, _ = garm_loss_grad(p, random_batch(), 0.0)
        self.assertAlmostEqual(loss0, math.log(2.0), places=10)

    def test_garm_collapses_to_btrm_at_sigma_floor(self):
        g = random_params("gaussian", 5, seed=4)
        g.W3[1] = 0.0
        g.b3[1] = -60.0
        s = init_params("scalar", 5, 0, hidden=4)
        s = type(s)("scalar", 5, g.W1, g.b1, g.W2, g.b2, g.W3[:1].copy(), g.b3[:1].copy())
        batch = random_batch(n=40, seed=5)
        self.assertAlmostEqual(garm_loss_grad(g, batch, 0.0)[0], btrm_loss_grad(s, batch)[0], delta=1e-6)

    def test_gradients_match_finite_differences(self):
        for draw in range(20):
            b = random_batch(n=4, seed=100 + draw)
            check_gradient(self, lambda q: btrm_loss_grad(q, b), random_params("scalar", 5, seed=300 + draw))
            check_gradient(self, lambda q: pairedrm_loss_grad(q, b),
                           random_params("pair_logit", pair_in_dim(2, 5), seed=400 + draw))
            check_gradient(self, lambda q: garm_loss_grad(q, b, 0.05), random_params("gaussian", 5, seed=200 + draw))

    def test_batch_order_invariance(self):
        batch = random_batch(n=10, seed=9)
        order = np.random.default_rng(0).permutation(10)
        for head, fn in (("scalar", btrm_loss_grad), ("gaussian", lambda q, b: garm_loss_grad(q, b, 0.05))):
            p = random_params(head, 5, seed=10)
            self.assertAlmostEqual(fn(p, batch)[0], fn(p, batch.take(order))[0], delta=1e-12)

    def test_empty_batch(self):
        empty = PairBatch(np.zeros((0, 5)), np.zeros((0, 5)), np.zeros((0, 2)))
        with self.assertRaises(InvalidInputError):
            btrm_loss_grad(init_params("scalar", 5, 0), empty)
        with self.assertRaises(InvalidInputError):
            garm_loss_grad(init_params("gaussian", 5, 0), empty, 0.05)


class TestTraining(unittest.TestCase):

    def test_zero_epochs_is_identity(self):
        p = init_params("scalar", 5, 0)
        out = train(p, random_batch(), TrainConfig(epochs=0), "bt")
        np.testing.assert_array_equal(out.to_vector(), p.to_vector())

    def test_clipping_and_determinism(self):
        batch = random_batch(n=64, seed=11)
        cfg = TrainConfig(learning_rate=1e-2, epochs=5, batch_size=16, seed=3)
        trace = TrainTrace()
        a = train(init_params("gaussian", 5, 3), batch, cfg, "garm", trace)
        b = train(init_params("gaussian", 5, 3), batch, cfg, "garm")
        np.testing.assert_array_equal(a.to_vector(), b.to_vector())
        self.assertEqual(len(trace.epoch_loss), 5)
        self.assertTrue(all(n <= 1.0 + 1e-12 for n in trace.clipped_norm))

    def test_nan_loss_aborts(self):
        batch = random_batch()
        batch.Xw[0, 0] = np.nan
        with self.assertRaises(NumericError):
            train(init_params("scalar", 5, 0), batch, TrainConfig(epochs=1), "bt")

    def test_invalid_config(self):
        with self.assertRaises(ConfigError):
            train(init_params("scalar", 5, 0), random_batch(), TrainConfig(learning_rate=0.0), "bt")
        with self.assertRaises(ConfigError):
            train(init_params("scalar", 5, 0), random_batch(), TrainConfig(), "garm")

    def test_sigma_grows_without_regulariser(self):
        batch = random_batch(n=200, seed=12).mirrored()
        sig = {}
        for lam in (0.0, 0.05):
            cfg = TrainConfig(learning_rate=1e-2, epochs=30, batch_size=64, lambda_reg=lam, seed=1)
            p = train(init_params("gaussian", 5, 1), batch, cfg, "garm")
            sig[lam] = float(np.mean(garm_outputs(p, batch.Xw)[1]))
        self.assertGreater(sig[0.0], sig[0.05])

    def test_mirrored_data_gives_chance_accuracy(self):
        batch = random_batch(n=300, seed=13).mirrored()
        self.assertEqual(rm_accuracy(random_params("scalar", 5, seed=1), batch, "bt"), 0.5)
        self.assertEqual(rm_accuracy(random_params("gaussian", 5, seed=2), batch, "garm"), 0.5)
        self.assertEqual(rm_accuracy(random_params("pair_logit", pair_in_dim(2, 5), seed=3), batch, "paired"), 0.5)

    def test_trained_models_beat_chance(self):
        world = gen_world(0, WorldConfig(n_contexts=60, pool_size=10))
        triplets = small_triplets(world, n_impressions=15000, seed=2)
        ids = sorted({t.context_id for t in triplets})
        test_ids = set(ids[:12])
        train_b = build_pair_batch(world, [t for t in triplets if t.context_id not in test_ids], 64)
        test_b = build_pair_batch(world, [t for t in triplets if t.context_id in test_ids], 64)
        cfg = TrainConfig(epochs=30, batch_size=128, seed=0)
        for kind, head, in_dim in (("bt", "scalar", 64), ("garm", "gaussian", 64),
                                   ("paired", "pair_logit", pair_in_dim(8, 64))):
            p = train(init_params(head, in_dim, 0), train_b, cfg, kind)
            self.assertGreater(rm_accuracy(p, test_b, kind), 0.56, msg=kind)


class TestCheckpoints(unittest.TestCase):

    def test_checkpoint_restores_scores(self):
        world = small_world()
        rm = RewardModel("garm", init_params("gaussian", 64, 5), 64)
        ctx = world.contexts[0]
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "rm.json")
            save_checkpoint(path, rm, TrainConfig(), "abc", {"note": 1})
            back = load_checkpoint(path)
        self.assertEqual(back.kind, "garm")
        for a, b in zip(rm.score_pool(ctx, world.pool(ctx.id)), back.score_pool(ctx, world.pool(ctx.id))):
            np.testing.assert_array_equal(a, b)

    def test_wrong_kind_rejected(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "x.json")
            save_json(path, {"a": 1}, kind="policy")
            with self.assertRaises(DataError):
                load_checkpoint(path)

    def test_paired_pool_scores_are_centred(self):
        world = small_world()
        ctx = world.contexts[1]
        rm = RewardModel("paired", random_params("pair_logit", pair_in_dim(8, 64), seed=4), 64)
        mu, sigma = rm.score_pool(ctx, world.pool(ctx.id))
        self.assertAlmostEqual(float(mu.sum()), 0.0, delta=1e-9)
        self.assertTrue(np.all(sigma == 0))


if __name__ == '__main__':
    unittest.main()
