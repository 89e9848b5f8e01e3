"""
Command-line entry point for the qsalign pipeline.

    python -m qsalign.cli simulate  --config config/default.ini --seed 7 --out runs/s7
    python -m qsalign.cli curate    ...
    python -m qsalign.cli train-rm  --kind garm
    python -m qsalign.cli fuse
    python -m qsalign.cli train-rl
    python -m qsalign.cli rft
    python -m qsalign.cli report
    python -m qsalign.cli pipeline          # all of the above in order

Every command reads its inputs from and writes its outputs to the run
directory. Exit codes: 0 success, 2 config error, 3 data error, 4 numeric
failure.
"""
from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass, replace

import numpy as np
import pandas as pd

from . import clicksim, evalkit, fusion, grpo, rmodels, textrewards
from .clicksim import DriftConfig, PreferenceTriplet, SftExample, World
from .textrewards import COMPONENTS
from .utils import io
from .utils.config import RunConfig, load_config
from .utils.errors import DataError, QSAlignError
from .utils.logger import get_logger, set_level
from .utils.rng import derive_seed, make_rng

log = get_logger("cli")


# --------------------------------------------------------------------
# RUN DIRECTORY LAYOUT
# --------------------------------------------------------------------
@dataclass(frozen=True)
class RunPaths:
    root: str

    def __getattr__(self, name: str) -> str:
        files = {
            "world": "world.json",
            "logs": "logs.jsonl",
            "sft": "sft.jsonl",
            "reference": "reference_model.json",
            "triplets": "triplets.jsonl",
            "deltas": "reward_deltas.csv",
            "weights": "fusion_weights.json",
            "tuning": "fusion_tuning.csv",
            "policy_sft": "policy_sft.json",
            "policy_rl": "policy_rl.json",
            "policy_rft": "policy_rft.json",
            "rft_data": "rft.jsonl",
            "rl_trace": "rl_trace.csv",
            "reports": "reports",
        }
        if name not in files:
            raise AttributeError(name)
        return os.path.join(self.root, files[name])

    def rm(self, kind: str) -> str:
        return os.path.join(self.root, f"rm_{kind}.json")


def _paths(cfg: RunConfig) -> RunPaths:
    return RunPaths(io.ensure_dir(cfg.run.out_dir))


def _require(path: str, hint: str) -> str:
    if not os.path.exists(path):
        raise DataError(f"missing {os.path.basename(path)} in run directory; run `{hint}` first")
    return path


# --------------------------------------------------------------------
# LOADERS
# --------------------------------------------------------------------
def load_world(paths: RunPaths) -> World:
    return World.from_dict(io.load_json(_require(paths.world, "simulate"), kind="world"))


def load_triplets(path: str) -> list[PreferenceTriplet]:
    return [PreferenceTriplet.from_dict(d) for d in io.iter_jsonl(_require(path, "curate"))]


def load_sft(path: str) -> list[SftExample]:
    return [SftExample(d["context_id"], tuple(d["target"])) for d in io.iter_jsonl(_require(path, "simulate"))]


def load_reference(paths: RunPaths) -> textrewards.ReferenceModel:
    doc = io.load_json(_require(paths.reference, "simulate"), kind="reference_model")
    return textrewards.ReferenceModel.from_dict(doc)


def split_triplets(triplets: list, holdout: float, seed: int) -> tuple[list, list]:
    """Deterministic train / held-out split by context, so no context appears in both."""
    ids = sorted({t.context_id for t in triplets})
    order = make_rng(seed, "split").permutation(len(ids))
    n_test = max(1, int(round(holdout * len(ids))))
    test_ids = {ids[i] for i in order[:n_test]}
    train = [t for t in triplets if t.context_id not in test_ids]
    test = [t for t in triplets if t.context_id in test_ids]
    if not train or not test:
        raise DataError(f"split_triplets: degenerate split ({len(train)} train, {len(test)} test)")
    return train, test


def in_dim_for(kind: str, world: World, dim: int) -> int:
    if kind == "paired":
        return rmodels.pair_in_dim(len(world.contexts[0].features), dim)
    return dim


# --------------------------------------------------------------------
# COMMANDS
# --------------------------------------------------------------------
def cmd_simulate(cfg: RunConfig) -> dict:
    """World snapshot, click logs, SFT data and the reference model."""
    paths = _paths(cfg)
    seed = cfg.seed
    world = clicksim.gen_world(seed, cfg.world)
    io.save_json(paths.world, world.to_dict(), kind="world")

    logs = clicksim.simulate_logs(world, cfg.run.n_impressions, derive_seed(seed, "logs"))
    n_logs = io.save_jsonl(paths.logs, (r.to_dict() for r in logs))

    sft, dropped = clicksim.assemble_sft_data(world, cfg.dedupe)
    io.save_jsonl(paths.sft, ({"context_id": e.context_id, "target": list(e.target)} for e in sft))

    corpus = [(world.context(e.context_id), world.pool(e.context_id)[i].text) for e in sft for i in e.target]
    reference = textrewards.fit_reference_model(corpus, cfg.run.reference_k)
    io.save_json(paths.reference, reference.to_dict(), kind="reference_model")

    log.info(f"simulate: {len(world.contexts)} contexts, {n_logs} impressions, {len(sft)} sft groups "
             f"({dropped} contexts dropped)")
    return {"world": paths.world, "logs": paths.logs, "impressions": n_logs, "sft": len(sft)}


def cmd_curate(cfg: RunConfig) -> dict:
    paths = _paths(cfg)
    logs = [clicksim.ClickLogRecord.from_dict(d) for d in io.iter_jsonl(_require(paths.logs, "simulate"))]
    triplets, dropped = clicksim.curate_triplets(logs, cfg.run.curate_mode)
    n = io.save_jsonl(paths.triplets, (t.to_dict() for t in triplets))
    log.info(f"curate: {n} triplets from {len(logs)} records; dropped {dict(sorted(dropped.items()))}")
    return {"triplets": n, "dropped": dict(dropped)}


def train_rm(cfg: RunConfig, kind: str, world: World, train: list, test: list
             ) -> tuple[rmodels.RewardModel, float, rmodels.PairBatch]:
    dim = cfg.run.feature_dim
    train_b = rmodels.build_pair_batch(world, train, dim)
    test_b = rmodels.build_pair_batch(world, test, dim)
    head = rmodels.KIND_TO_HEAD[kind]
    params = rmodels.init_params(head, in_dim_for(kind, world, dim), cfg.rm.seed)
    params = rmodels.train(params, train_b, cfg.rm, kind)
    acc = rmodels.rm_accuracy(params, test_b, kind)
    return rmodels.RewardModel(kind, params, dim), acc, train_b


def cmd_train_rm(cfg: RunConfig, kind: str) -> dict:
    paths = _paths(cfg)
    world = load_world(paths)
    train, test = split_triplets(load_triplets(paths.triplets), cfg.run.holdout, cfg.seed)
    rm, acc, train_b = train_rm(cfg, kind, world, train, test)
    meta = {"heldout_accuracy": acc, "n_train": len(train), "n_test": len(test)}
    if kind == "garm":
        meta["lambda_reg"] = cfg.rm.lambda_reg
    rmodels.save_checkpoint(paths.rm(kind), rm, cfg.rm, train_b.fingerprint, meta)
    log.info(f"train-rm[{kind}]: held-out accuracy {acc:.4f}")
    return {"checkpoint": paths.rm(kind), "accuracy": acc}


def reward_deltas(world: World, triplets: list, rm: rmodels.RewardModel,
                  reference: textrewards.ReferenceModel) -> np.ndarray:
    """Per-triplet component deltas r(chosen) - r(rejected)."""
    rows = []
    for t in triplets:
        ctx = world.context(t.context_id)
        mu, sigma = rm.score_pool(ctx, [t.chosen, t.rejected])
        rw = textrewards.single_components(ctx, t.chosen.text, t.chosen.lang, mu[0], sigma[0], reference)
        rl = textrewards.single_components(ctx, t.rejected.text, t.rejected.lang, mu[1], sigma[1], reference)
        rows.append(rw - rl)
    return np.array(rows)


def sft_policy(cfg: RunConfig, paths: RunPaths, world: World, spaces: dict) -> grpo.Policy:
    """Load the SFT-analog policy, fitting it on sft.jsonl the first time."""
    if os.path.exists(paths.policy_sft):
        return grpo.load_policy(paths.policy_sft)
    base = grpo.init_policy(spaces, cfg.run.feature_dim, cfg.run.temperature)
    data = grpo.sft_pairs(load_sft(paths.sft), spaces)
    policy = grpo.sft_fit(base, data, cfg.run.sft_epochs, cfg.run.sft_lr, cfg.seed)
    grpo.save_policy(paths.policy_sft, policy, spaces, {"stage": "sft"})
    return policy


def _probe(cfg: RunConfig, start: grpo.Policy, spaces: dict, rm, reference):
    def probe(weights: fusion.FusionWeights, round_index: int) -> pd.DataFrame:
        gcfg = replace(cfg.grpo, steps=cfg.pareto.probe_steps, seed=derive_seed(cfg.seed, "probe", round_index))
        fn = grpo.make_reward_fn(weights, rm, reference)
        _, trace = grpo.train_rl(start, spaces, fn, gcfg, reference=start, n_jobs=cfg.run.threads)
        return trace
    return probe


def cmd_fuse(cfg: RunConfig) -> dict:
    paths = _paths(cfg)
    world = load_world(paths)
    reference = load_reference(paths)
    rm = rmodels.load_checkpoint(_require(paths.rm(cfg.run.policy_rm), "train-rm"))
    train, _ = split_triplets(load_triplets(paths.triplets), cfg.run.holdout, cfg.seed)
    D = reward_deltas(world, train, rm, reference)
    io.save_csv(paths.deltas, pd.DataFrame(D, columns=list(COMPONENTS)))

    fitted = fusion.fit_fusion_weights(D, cfg.fusion.lambda_l2, cfg.fusion.lr, cfg.fusion.epochs, cfg.seed, COMPONENTS)
    weights = fusion.assemble_weights(fitted, cfg.fusion, D)
    converged = None
    if cfg.run.pareto:
        spaces = grpo.build_action_spaces(world, cfg.run.feature_dim)
        start = sft_policy(cfg, paths, world, spaces)
        pcfg = cfg.pareto
        if not pcfg.components:
            pcfg = replace(pcfg, components=tuple(c for c in COMPONENTS if c != "rm_sigma"))
        result = fusion.pareto_tune(weights, _probe(cfg, start, spaces, rm, reference), pcfg)
        io.save_csv(paths.tuning, result.log)
        weights, converged = result.weights, result.converged
    io.save_json(paths.weights, {**weights.to_dict(), "pareto_converged": converged}, kind="fusion_weights")
    log.info(f"fuse: weights {dict(zip(COMPONENTS, np.round(weights.vector, 4)))}")
    return {"weights": paths.weights, "converged": converged}


def load_weights(paths: RunPaths) -> fusion.FusionWeights:
    return fusion.FusionWeights.from_dict(io.load_json(_require(paths.weights, "fuse"), kind="fusion_weights"))


def cmd_train_rl(cfg: RunConfig) -> dict:
    paths = _paths(cfg)
    world = load_world(paths)
    spaces = grpo.build_action_spaces(world, cfg.run.feature_dim)
    reference = load_reference(paths)
    rm = rmodels.load_checkpoint(_require(paths.rm(cfg.run.policy_rm), "train-rm"))
    weights = load_weights(paths)
    start = sft_policy(cfg, paths, world, spaces)
    fn = grpo.make_reward_fn(weights, rm, reference)
    policy, trace = grpo.train_rl(start, spaces, fn, cfg.grpo, reference=start, n_jobs=cfg.run.threads)
    grpo.save_policy(paths.policy_rl, policy, spaces, {"stage": "grpo", "steps": cfg.grpo.steps})
    io.save_csv(paths.rl_trace, trace)
    return {"policy": paths.policy_rl, "trace": paths.rl_trace}


def cmd_rft(cfg: RunConfig) -> dict:
    paths = _paths(cfg)
    world = load_world(paths)
    spaces = grpo.build_action_spaces(world, cfg.run.feature_dim)
    rm = rmodels.load_checkpoint(_require(paths.rm(cfg.run.policy_rm), "train-rm"))
    start = sft_policy(cfg, paths, world, spaces)
    data, policy, dropped = grpo.rft_round(start, rm, spaces, cfg.rft, cfg.dedupe)
    io.save_jsonl(paths.rft_data, ({"context_id": e.context_id, "target": list(e.target)} for e in data))
    grpo.save_policy(paths.policy_rft, policy, spaces, {"stage": "rft", "dropped": dropped})
    log.info(f"rft: {len(data)} groups, {dropped} contexts dropped")
    return {"policy": paths.policy_rft, "groups": len(data), "dropped": dropped}


def _shift_batches(cfg: RunConfig, world: World, shifted_policy: grpo.Policy | None) -> list:
    """Named held-out datasets: weeks 1..N of temporal drift, then the policy-shifted set."""
    dim = cfg.run.feature_dim
    drift = DriftConfig(cfg.run.drift_step)
    out = []
    for week in range(1, cfg.run.weeks + 1):
        w = clicksim.temporal_shift(world, week, drift)
        logs = clicksim.simulate_logs(w, cfg.run.eval_impressions, derive_seed(cfg.seed, "week", week))
        trips, _ = clicksim.curate_triplets(logs, cfg.run.curate_mode)
        out.append((f"week{week}", rmodels.build_pair_batch(w, trips, dim)))
    if shifted_policy is not None:
        serving = grpo.PolicyServing(shifted_policy, "rft_shifted", dim)
        trips = clicksim.policy_shift(world, serving, cfg.run.eval_impressions, derive_seed(cfg.seed, "policy-shift"))
        out.append(("policy_shift", rmodels.build_pair_batch(world, trips, dim)))
    return out


def cmd_report(cfg: RunConfig) -> dict:
    paths = _paths(cfg)
    world = load_world(paths)
    dim = cfg.run.feature_dim
    spaces = grpo.build_action_spaces(world, dim)
    seed = cfg.seed
    reference = load_reference(paths)

    policies = {"uniform": None}
    for name, path in (("sft", paths.policy_sft), ("grpo", paths.policy_rl), ("rft", paths.policy_rft)):
        if os.path.exists(path):
            policies[name] = grpo.load_policy(path)

    ctr_rows, safety_rows = [], []
    for name, policy in policies.items():
        serving = clicksim.UniformServing() if policy is None else grpo.PolicyServing(policy, name, dim)
        est = evalkit.ctr_estimate(serving, world, cfg.run.eval_impressions, derive_seed(seed, "ctr"),
                                   n_jobs=cfg.run.threads)
        ctr_rows.append({"seed": seed, "policy": name, "ctr": est.ctr, "stderr": est.stderr, "n": est.n})
        if policy is not None:
            acc, false_rate = evalkit.refusal_rates(policy, spaces)
            safety_rows.append({"seed": seed, "policy": name, "refusal_accuracy": acc, "false_refusal_rate": false_rate,
                                "mean_ref_logprob": evalkit.mean_reference_logprob(policy, spaces, reference)})
    tables = {
        "ctr": pd.DataFrame(ctr_rows, columns=["seed", "policy", "ctr", "stderr", "n"]),
        "safety": pd.DataFrame(safety_rows, columns=["seed", "policy", "refusal_accuracy", "false_refusal_rate",
                                                     "mean_ref_logprob"]),
    }

    threshold = evalkit.default_useful_threshold(world)
    if "grpo" in policies and "sft" in policies:
        g = evalkit.gsb_proxy(evalkit.policy_groups(policies["grpo"], spaces),
                              evalkit.policy_groups(policies["sft"], spaces), threshold)
        tables["gsb"] = pd.DataFrame([{"seed": seed, "candidate": "grpo", "baseline": "sft", "gsb": g,
                                       "contexts": len(spaces)}])

    kinds = [k for k in cfg.run.rm_kinds if os.path.exists(paths.rm(k))]
    if kinds and os.path.exists(paths.triplets):
        _, test = split_triplets(load_triplets(paths.triplets), cfg.run.holdout, seed)
        datasets = [("iid", rmodels.build_pair_batch(world, test, dim))]
        datasets += _shift_batches(cfg, world, policies.get("rft") or policies.get("grpo"))
        acc_tables, ulb_rows = [], []
        for kind in kinds:
            rm = rmodels.load_checkpoint(paths.rm(kind))
            acc_tables.append(evalkit.ood_eval(rm, datasets, seed))
            if kind == "garm":
                ulb_rows.append({"seed": seed, **{name: evalkit.mean_ulb(rm, b) for name, b in datasets}})
                bins = evalkit.calibration_bins(rm, datasets[0][1], cfg.run.n_bins)
                tables["calibration"] = evalkit.bins_frame(bins, seed)
                tables["calibration_trend"] = pd.DataFrame([{"seed": seed, "spearman": evalkit.spearman_trend(bins)}])
        tables["accuracy"] = pd.concat(acc_tables, ignore_index=True)
        if ulb_rows:
            tables["mean_ulb"] = pd.DataFrame(ulb_rows, columns=["seed", *[n for n, _ in datasets]])

    meta = {"seed": seed, "config_hash": cfg.config_hash(), "useful_threshold": f"{threshold:.6g}",
            "reward_models": ",".join(kinds) or "none"}
    written = evalkit.report(evalkit.EvalReport(tables, meta), paths.reports)
    return {"files": written}


def cmd_pipeline(cfg: RunConfig) -> dict:
    cmd_simulate(cfg)
    cmd_curate(cfg)
    for kind in cfg.run.rm_kinds:
        cmd_train_rm(cfg, kind)
    cmd_fuse(cfg)
    cmd_train_rl(cfg)
    cmd_rft(cfg)
    return cmd_report(cfg)


# --------------------------------------------------------------------
# ARGUMENT PARSING
# --------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="INI config (default: config/default.ini)")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--out", dest="out_dir", default=None, help="run directory")
    common.add_argument("--threads", type=int, default=None)
    common.add_argument("--log-level", default=None)

    parser = argparse.ArgumentParser(prog="qsalign", description="Query-suggestion preference alignment pipeline")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="generate world, click logs, SFT data")
    sub.add_parser("curate", parents=[common], help="click logs -> preference triplets")
    p = sub.add_parser("train-rm", parents=[common], help="train a reward model")
    p.add_argument("--kind", choices=["bt", "paired", "garm"], default="garm")
    sub.add_parser("fuse", parents=[common], help="fit and tune reward fusion weights")
    sub.add_parser("train-rl", parents=[common], help="GRPO from the SFT policy")
    sub.add_parser("rft", parents=[common], help="one rejection-sampling fine-tuning round")
    sub.add_parser("report", parents=[common], help="evaluation tables")
    sub.add_parser("pipeline", parents=[common], help="run every stage in order")
    return parser


COMMANDS = {
    "simulate": cmd_simulate,
    "curate": cmd_curate,
    "fuse": cmd_fuse,
    "train-rl": cmd_train_rl,
    "rft": cmd_rft,
    "report": cmd_report,
    "pipeline": cmd_pipeline,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.log_level:
        set_level(args.log_level)
    try:
        cfg = load_config(args.config, {"seed": args.seed, "out_dir": args.out_dir, "threads": args.threads})
        if args.command == "train-rm":
            cmd_train_rm(cfg, args.kind)
        else:
            COMMANDS[args.command](cfg)
    except QSAlignError as e:
        print(f"[ERROR] {args.command}: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"[ERROR] {args.command}: {e}", file=sys.stderr)
        return DataError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
