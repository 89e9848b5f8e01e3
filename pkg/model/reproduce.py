"""
Multi-seed reproduction run for qsalign.

    python model/reproduce.py --seeds 0 1 2
    python model/reproduce.py --seeds 0 --config config/default.ini --out runs/reproduce

Once per invocation:
    closed-form vs Monte-Carlo preference probability over a grid, and the
    spread of small- vs large-sample Monte-Carlo estimates across seeds.
Per seed:
    the full pipeline (simulate ... report), then
    - GaRM sigma with and without the variance regulariser
    - GRPO without the perplexity reward (fluency ablation)
    - GRPO on the Bradley-Terry model instead of GaRM (CTR ablation)

Everything is summarised in <out>/summary.csv and <out>/oracle_grid.csv.
"""

import argparse
import os
import sys
from dataclasses import replace

import numpy as np
import pandas as pd

# --------------------------------------------------------------------
# PATHS (anchored to project root regardless of where script runs)
# --------------------------------------------------------------------
CURRENT_DIR = os.path.dirname(os.path.abspath(__file__))
PROJECT_ROOT = os.path.abspath(os.path.join(CURRENT_DIR, os.pardir))
if PROJECT_ROOT not in sys.path:
    sys.path.insert(0, PROJECT_ROOT)

from qsalign import cli, evalkit, grpo, rmodels  # noqa: E402
from qsalign.probcore import GaussianScore, pref_prob_closed, pref_prob_mc  # noqa: E402
from qsalign.textrewards import COMPONENTS  # noqa: E402
from qsalign.utils import io  # noqa: E402
from qsalign.utils.config import RunConfig, load_config  # noqa: E402
from qsalign.utils.errors import QSAlignError  # noqa: E402
from qsalign.utils.logger import get_logger  # noqa: E402
from qsalign.utils.rng import derive_seed  # noqa: E402

log = get_logger("reproduce")

DEFAULT_OUT = os.path.join(PROJECT_ROOT, "runs", "reproduce")
GRID_DELTAS = np.linspace(-3.0, 3.0, 13)
GRID_SIGMAS = (0.25, 0.5, 1.0, 2.0)


# --------------------------------------------------------------------
# PROBABILITY KERNEL CHECKS
# --------------------------------------------------------------------
def oracle_grid(seed: int, n: int = 1_000_000) -> pd.DataFrame:
    """Closed form against a large-sample Monte-Carlo estimate on the (delta, sigma) grid."""
    rows = []
    for sigma in GRID_SIGMAS:
        for delta in GRID_DELTAS:
            w, l = GaussianScore(float(delta), sigma), GaussianScore(0.0, sigma)
            closed = pref_prob_closed(w, l).value
            mc = pref_prob_mc(w, l, n, derive_seed(seed, "grid", sigma, float(delta))).value
            rows.append({"delta": float(delta), "sigma": sigma, "closed_form": closed, "monte_carlo": mc,
                         "gap": abs(closed - mc)})
    return pd.DataFrame(rows)


def mc_spread(seed: int, n_small: int = 1000, n_large: int = 100_000, repeats: int = 100) -> float:
    """Ratio of the across-seed std of n_small estimates to that of n_large estimates."""
    w, l = GaussianScore(1.0, 1.0), GaussianScore(0.0, 1.0)
    small = [pref_prob_mc(w, l, n_small, derive_seed(seed, "spread", n_small, r)).value for r in range(repeats)]
    large = [pref_prob_mc(w, l, n_large, derive_seed(seed, "spread", n_large, r)).value for r in range(repeats)]
    return float(np.std(small, ddof=1) / np.std(large, ddof=1))


# --------------------------------------------------------------------
# PER-SEED EXPERIMENTS
# --------------------------------------------------------------------
def sigma_with_and_without_reg(cfg: RunConfig, paths: cli.RunPaths) -> tuple[float, float]:
    """Mean GaRM sigma after training on order-mirrored pairs with lambda = 0 and lambda = cfg value."""
    world = cli.load_world(paths)
    train, _ = cli.split_triplets(cli.load_triplets(paths.triplets), cfg.run.holdout, cfg.seed)
    batch = rmodels.build_pair_batch(world, train, cfg.run.feature_dim).mirrored()
    out = []
    for lam in (0.0, cfg.rm.lambda_reg):
        p0 = rmodels.init_params("gaussian", cfg.run.feature_dim, cfg.rm.seed)
        p = rmodels.train(p0, batch, replace(cfg.rm, lambda_reg=lam), "garm")
        _, s_w = rmodels.garm_outputs(p, batch.Xw)
        out.append(float(np.mean(s_w)))
    return out[0], out[1]


def ablation_policy(cfg: RunConfig, paths: cli.RunPaths, spaces: dict, rm_kind: str,
                    drop: tuple = ()) -> grpo.Policy:
    """GRPO from the run's SFT policy with some fused weights zeroed and a chosen reward model."""
    weights = cli.load_weights(paths)
    if drop:
        w = [0.0 if c in drop else v for c, v in zip(COMPONENTS, weights.vector)]
        weights = replace(weights, w=tuple(w))
    rm = rmodels.load_checkpoint(paths.rm(rm_kind))
    reference = cli.load_reference(paths)
    start = grpo.load_policy(paths.policy_sft)
    fn = grpo.make_reward_fn(weights, rm, reference)
    policy, _ = grpo.train_rl(start, spaces, fn, cfg.grpo, reference=start, n_jobs=cfg.run.threads)
    return policy


def _table(paths: cli.RunPaths, name: str) -> pd.DataFrame:
    path = os.path.join(paths.reports, f"{name}.csv")
    return io.load_csv(path) if os.path.exists(path) else pd.DataFrame()


def run_seed(base: RunConfig, seed: int, out_root: str) -> dict:
    cfg = base.with_seed(seed)
    cfg = replace(cfg, run=replace(cfg.run, out_dir=os.path.join(out_root, f"seed{seed}")))
    log.info(f"seed {seed}: pipeline -> {cfg.run.out_dir}")
    cli.cmd_pipeline(cfg)
    paths = cli.RunPaths(cfg.run.out_dir)

    row: dict = {"seed": seed}
    ctr = _table(paths, "ctr")
    for _, r in ctr.iterrows():
        row[f"ctr_{r['policy']}"] = float(r["ctr"])
    acc = _table(paths, "accuracy")
    for _, r in acc.iterrows():
        row[f"acc_{r['model']}_iid"] = float(r["iid"])
        if "policy_shift" in acc.columns:
            row[f"acc_{r['model']}_policy_shift"] = float(r["policy_shift"])
    trend = _table(paths, "calibration_trend")
    if len(trend):
        row["calibration_spearman"] = float(trend["spearman"].iloc[0])
    safety = _table(paths, "safety")
    for _, r in safety.iterrows():
        row[f"refusal_acc_{r['policy']}"] = float(r["refusal_accuracy"])
        row[f"false_refusal_{r['policy']}"] = float(r["false_refusal_rate"])

    row["sigma_lambda0"], row["sigma_lambda"] = sigma_with_and_without_reg(cfg, paths)

    world = cli.load_world(paths)
    spaces = grpo.build_action_spaces(world, cfg.run.feature_dim)
    reference = cli.load_reference(paths)
    full = grpo.load_policy(paths.policy_rl)
    no_ppl = ablation_policy(cfg, paths, spaces, cfg.run.policy_rm, drop=("ppl",))
    row["ref_logprob_full"] = evalkit.mean_reference_logprob(full, spaces, reference)
    row["ref_logprob_no_ppl"] = evalkit.mean_reference_logprob(no_ppl, spaces, reference)

    if "bt" in cfg.run.rm_kinds and cfg.run.policy_rm != "bt":
        bt_policy = ablation_policy(cfg, paths, spaces, "bt", drop=("rm_sigma",))
        serving = grpo.PolicyServing(bt_policy, "grpo_bt", cfg.run.feature_dim)
        est = evalkit.ctr_estimate(serving, world, cfg.run.eval_impressions, derive_seed(seed, "ctr"),
                                   n_jobs=cfg.run.threads)
        row["ctr_grpo_bt"] = est.ctr
    return row


# --------------------------------------------------------------------
# MAIN
# --------------------------------------------------------------------
def summarise(df: pd.DataFrame) -> None:
    means = df.drop(columns=["seed"]).mean(numeric_only=True)
    for key, val in means.items():
        log.info(f"mean {key}: {val:.4f}")
    checks = [
        ("calibration trend positive", means.get("calibration_spearman", np.nan) > 0),
        ("iid accuracy >= policy-shift accuracy",
         means.get("acc_garm_iid", np.nan) >= means.get("acc_garm_policy_shift", np.nan)),
        ("variance regulariser shrinks sigma", means.get("sigma_lambda0", np.nan) > means.get("sigma_lambda", np.nan)),
        ("perplexity reward keeps fluency", means.get("ref_logprob_full", np.nan) > means.get("ref_logprob_no_ppl", np.nan)),
        ("grpo beats uniform CTR", means.get("ctr_grpo", np.nan) > means.get("ctr_uniform", np.nan)),
    ]
    for name, ok in checks:
        if ok:
            log.info(f"{name}")
        else:
            log.warning(f"{name}: not observed")


def reproduce(seeds: list[int], config: str | None, out_root: str, skip_grid: bool = False) -> pd.DataFrame:
    io.ensure_dir(out_root)
    base = load_config(config)
    if not skip_grid:
        grid = oracle_grid(base.seed)
        io.save_csv(os.path.join(out_root, "oracle_grid.csv"), grid)
        log.info(f"closed form vs MC: max gap {grid['gap'].max():.4f}")
        log.info(f"MC spread ratio (n=1e3 vs n=1e5): {mc_spread(base.seed):.2f}")
    rows = [run_seed(base, s, out_root) for s in seeds]
    df = pd.DataFrame(rows)
    io.save_csv(os.path.join(out_root, "summary.csv"), df)
    summarise(df)
    return df


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description="Multi-seed qsalign reproduction")
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    parser.add_argument("--config", default=None)
    parser.add_argument("--out", default=DEFAULT_OUT)
    parser.add_argument("--skip-grid", action="store_true", help="skip the closed-form vs MC grid")
    args = parser.parse_args(argv)
    try:
        reproduce(args.seeds, args.config, args.out, args.skip_grid)
    except QSAlignError as e:
        log.error(str(e))
        return e.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
