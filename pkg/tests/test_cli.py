"""
Tests for the command-line entry point and the end-to-end pipeline.
"""
import contextlib
import io as stdio
import tempfile
import textwrap
import unittest
import sys
import os

import pandas as pd

# Add parent directory to path
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from qsalign.cli import RunPaths, build_parser, main, split_triplets
from qsalign.fusion import FusionWeights
from qsalign.textrewards import COMPONENTS
from qsalign.utils.errors import DataError
from qsalign.utils.io import load_json

TINY_RUN = """
    [run]
    seed = 0
    out_dir = {out}
    n_impressions = 3000
    feature_dim = 32
    holdout = 0.25
    sft_epochs = 20
    weeks = 1
    eval_impressions = 600
    n_bins = 3

    [world]
    n_contexts = 24
    pool_size = 5

    [rm]
    epochs = 2
    batch_size = 128

    [pareto]
    probe_steps = 3
    window = 3
    max_rounds = 2

    [grpo]
    steps = 3
    contexts_per_step = 4
    group_size = 4

    [rft]
    k = 10
    epochs = 5
"""


def run_main(argv):
    err = stdio.StringIO()
    with contextlib.redirect_stderr(err):
        code = main(argv)
    return code, err.getvalue()


class TestParser(unittest.TestCase):

    def test_common_flags_on_every_command(self):
        """Shared flags parse after any subcommand."""
        args = build_parser().parse_args(["train-rm", "--kind", "bt", "--seed", "4", "--out", "runs/x"])
        self.assertEqual((args.command, args.kind, args.seed, args.out_dir), ("train-rm", "bt", 4, "runs/x"))
        args = build_parser().parse_args(["report"])
        self.assertIsNone(args.seed)
        self.assertIsNone(args.config)

    def test_unknown_command(self):
        with contextlib.redirect_stderr(stdio.StringIO()):
            with self.assertRaises(SystemExit):
                build_parser().parse_args(["serve"])


class TestExitCodes(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()

    def tearDown(self):
        self.tmp.cleanup()

    def test_config_error(self):
        """A missing config file exits with code 2."""
        code, err = run_main(["simulate", "--config", os.path.join(self.tmp.name, "missing.ini")])
        self.assertEqual(code, 2)
        self.assertIn("[ERROR] simulate", err)

    def test_data_error(self):
        """Curating before simulating exits with code 3."""
        code, err = run_main(["curate", "--out", os.path.join(self.tmp.name, "empty"), "--log-level", "error"])
        self.assertEqual(code, 3)
        self.assertIn("logs.jsonl", err)

    def test_degenerate_split(self):
        with self.assertRaises(DataError):
            split_triplets([], 0.2, 0)


class TestPipeline(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.tmp = tempfile.TemporaryDirectory()
        cls.out = os.path.join(cls.tmp.name, "run")
        cls.ini = os.path.join(cls.tmp.name, "tiny.ini")
        with open(cls.ini, "w", encoding="utf-8") as f:
            f.write(textwrap.dedent(TINY_RUN.format(out=cls.out)))
        cls.code, cls.err = run_main(["pipeline", "--config", cls.ini, "--log-level", "warning"])
        cls.paths = RunPaths(cls.out)

    @classmethod
    def tearDownClass(cls):
        cls.tmp.cleanup()

    def test_pipeline_succeeds(self):
        self.assertEqual(self.code, 0, msg=self.err)
        for name in ("world", "logs", "sft", "reference", "triplets", "deltas", "weights", "tuning",
                     "policy_sft", "policy_rl", "policy_rft", "rft_data", "rl_trace"):
            self.assertTrue(os.path.exists(getattr(self.paths, name)), msg=name)
        for kind in ("bt", "paired", "garm"):
            self.assertTrue(os.path.exists(self.paths.rm(kind)), msg=kind)

    def test_fusion_weights_document(self):
        doc = load_json(self.paths.weights, kind="fusion_weights")
        weights = FusionWeights.from_dict(doc)
        self.assertEqual(weights.names, COMPONENTS)
        self.assertIn(doc["pareto_converged"], (True, False))
        self.assertLessEqual(dict(zip(weights.names, weights.w))["rm_sigma"], 0.0)
        self.assertEqual(list(pd.read_csv(self.paths.deltas).columns), list(COMPONENTS))

    def test_report_tables(self):
        reports = self.paths.reports
        ctr = pd.read_csv(os.path.join(reports, "ctr.csv"))
        self.assertEqual(list(ctr["policy"]), ["uniform", "sft", "grpo", "rft"])
        self.assertTrue(ctr["ctr"].between(0, 1).all())
        acc = pd.read_csv(os.path.join(reports, "accuracy.csv"))
        self.assertEqual(list(acc["model"]), ["bt", "paired", "garm"])
        self.assertEqual(list(acc.columns), ["seed", "model", "iid", "week1", "policy_shift"])
        for name in ("safety.csv", "gsb.csv", "calibration.csv", "mean_ulb.csv", "summary.txt"):
            self.assertTrue(os.path.exists(os.path.join(reports, name)), msg=name)

    def test_report_is_reproducible(self):
        """Re-running the report stage rewrites identical tables."""
        with open(os.path.join(self.paths.reports, "ctr.csv"), encoding="utf-8") as f:
            before = f.read()
        code, err = run_main(["report", "--config", self.ini, "--log-level", "warning"])
        self.assertEqual(code, 0, msg=err)
        with open(os.path.join(self.paths.reports, "ctr.csv"), encoding="utf-8") as f:
            self.assertEqual(f.read(), before)


if __name__ == '__main__':
    unittest.main()
