"""
Evaluation harness: simulated CTR, reward-model accuracy under shift,
confidence calibration by ULB bins, the GSB proxy, safety rates and report
writing.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy.stats import spearmanr

from .clicksim import UniformServing, serve_and_click
from .grpo import action_dist, greedy_action
from .rmodels import PairBatch, garm_outputs, pair_ulb, rm_accuracy
from .textrewards import SuggestionGroup, group_ppl
from .utils import io
from .utils.errors import InvalidInputError
from .utils.logger import get_logger
from .utils.rng import derive_seed, make_rng

log = get_logger(__name__)

MIN_BIN_COUNT = 50
USEFUL_PERCENTILE = 60.0


# --------------------------------------------------------------------
# CTR
# --------------------------------------------------------------------
@dataclass(frozen=True)
class CtrEstimate:
    ctr: float
    stderr: float
    n: int


def _impressions(serving, world, contexts, start: int, stop: int, seed: int) -> int:
    clicks = 0
    um = world.user_model
    for i in range(start, stop):
        ctx = contexts[i % len(contexts)]
        action = serving.serve(world, ctx, make_rng(seed, "ctr-serve", i))
        if not action:
            continue
        pool = world.pool(ctx.id)
        rec = serve_and_click(um, ctx, [pool[j] for j in action], derive_seed(seed, "ctr-click", i))
        clicks += rec.clicked_position is not None
    return clicks


def ctr_estimate(serving, world, n_impressions: int, seed: int, contexts: Sequence | None = None,
                 n_jobs: int = 1, chunk: int = 2000) -> CtrEstimate:
    """Monte-Carlo CTR with binomial standard error. Refusals are impressions with no click.

    Impression i uses its own derived streams, so the estimate does not
    depend on ``n_jobs``.
    """
    n = int(n_impressions)
    if n < 1:
        raise InvalidInputError(f"ctr_estimate: n_impressions must be >= 1, got {n}")
    serving = serving or UniformServing()
    contexts = list(contexts or world.contexts)
    bounds = [(s, min(s + chunk, n)) for s in range(0, n, chunk)]
    parts = Parallel(n_jobs=n_jobs, prefer="threads")(
        delayed(_impressions)(serving, world, contexts, a, b, seed) for a, b in bounds
    )
    ctr = sum(parts) / n
    return CtrEstimate(ctr, math.sqrt(ctr * (1.0 - ctr) / n), n)


# --------------------------------------------------------------------
# CALIBRATION
# --------------------------------------------------------------------
@dataclass(frozen=True)
class CalibrationBin:
    lower: float
    upper: float
    count: int
    accuracy: float

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.lower + self.upper)


def bins_from_scores(conf: np.ndarray, correct: np.ndarray, n_bins: int = 10,
                     min_count: int = MIN_BIN_COUNT) -> list[CalibrationBin]:
    """Equal-width bins over the observed range; bins under ``min_count`` merge rightward."""
    conf = np.asarray(conf, dtype=float)
    correct = np.asarray(correct, dtype=float)
    if conf.size == 0:
        raise InvalidInputError("calibration_bins: empty test set")
    if n_bins < 3:
        raise InvalidInputError(f"calibration_bins: n_bins must be >= 3, got {n_bins}")
    lo, hi = float(conf.min()), float(conf.max())
    if hi == lo:
        return [CalibrationBin(lo, hi, int(conf.size), float(correct.mean()))]
    edges = np.linspace(lo, hi, n_bins + 1)
    which = np.clip(np.searchsorted(edges, conf, side="right") - 1, 0, n_bins - 1)
    groups = [[k] for k in range(n_bins)]
    merged: list[list[int]] = []
    pending: list[int] = []
    for g in groups:
        pending += g
        if np.isin(which, pending).sum() >= min_count:
            merged.append(pending)
            pending = []
    if pending:
        if merged:
            merged[-1] += pending
        else:
            merged.append(pending)
    out = []
    for ks in merged:
        sel = np.isin(which, ks)
        cnt = int(sel.sum())
        acc = float(correct[sel].mean()) if cnt else float("nan")
        out.append(CalibrationBin(float(edges[min(ks)]), float(edges[max(ks) + 1]), cnt, acc))
    return out


def calibration_bins(garm, test: PairBatch, n_bins: int = 10, min_count: int = MIN_BIN_COUNT) -> list[CalibrationBin]:
    """Accuracy of sign(mu_w - mu_l) per ULB-confidence bin."""
    if test is None or len(test) == 0:
        raise InvalidInputError("calibration_bins: empty test set")
    params = getattr(garm, "params", garm)
    mu_w, _ = garm_outputs(params, test.Xw)
    mu_l, _ = garm_outputs(params, test.Xl)
    correct = np.where(mu_w > mu_l, 1.0, np.where(mu_w == mu_l, 0.5, 0.0))
    return bins_from_scores(pair_ulb(params, test), correct, n_bins, min_count)


def spearman_trend(bins: Sequence[CalibrationBin]) -> float:
    """Rank correlation between bin midpoint and accuracy (nan with fewer than two bins)."""
    usable = [b for b in bins if b.count > 0]
    if len(usable) < 2:
        return float("nan")
    rho, _ = spearmanr([b.midpoint for b in usable], [b.accuracy for b in usable])
    return float(rho)


def bins_frame(bins: Sequence[CalibrationBin], seed: int | None = None) -> pd.DataFrame:
    return pd.DataFrame(
        [{"seed": seed, "lower": b.lower, "upper": b.upper, "count": b.count, "accuracy": b.accuracy} for b in bins],
        columns=["seed", "lower", "upper", "count", "accuracy"],
    )


# --------------------------------------------------------------------
# GSB PROXY
# --------------------------------------------------------------------
def default_useful_threshold(world, q: float = USEFUL_PERCENTILE) -> float:
    """Percentile of all pool utilities in the world."""
    return float(np.percentile([s.utility for pool in world.pools.values() for s in pool], q))


def gsb_proxy(groups_a: Mapping[str, Sequence], groups_b: Mapping[str, Sequence], useful_threshold: float) -> int:
    """Sum over contexts of (#useful in a) - (#useful in b); refusals score 0."""
    if set(groups_a) != set(groups_b):
        raise InvalidInputError("gsb_proxy: groups cover different contexts")

    def score(group) -> int:
        return sum(1 for s in group if s.utility >= useful_threshold)

    return int(sum(score(groups_a[cid]) - score(groups_b[cid]) for cid in sorted(groups_a)))


def policy_groups(policy, spaces: Mapping) -> dict:
    """Greedy suggestion group per context (empty tuple for a refusal)."""
    out = {}
    for cid, space in spaces.items():
        action = greedy_action(policy, space)
        out[cid] = tuple(space.pool[i] for i in action)
    return out


# --------------------------------------------------------------------
# SAFETY + DISTRIBUTION METRICS
# --------------------------------------------------------------------
def refusal_rates(policy, spaces: Mapping) -> tuple[float, float]:
    """(mean refusal probability on unsafe contexts, mean refusal probability on safe ones)."""
    unsafe, safe = [], []
    for space in spaces.values():
        p_refuse = float(np.exp(action_dist(policy, space).logp[-1]))
        (unsafe if space.ctx.unsafe else safe).append(p_refuse)
    acc = float(np.mean(unsafe)) if unsafe else float("nan")
    false_rate = float(np.mean(safe)) if safe else float("nan")
    return acc, false_rate


def mean_reference_logprob(policy, spaces: Mapping, reference) -> float:
    """Mean reference-model log-probability of the greedy suggestions on safe contexts."""
    vals = []
    for space in spaces.values():
        if space.ctx.unsafe:
            continue
        action = greedy_action(policy, space)
        if action:
            g = SuggestionGroup(tuple(space.pool[i].text for i in action))
            vals.append(group_ppl(reference, g))
    return float(np.mean(vals)) if vals else float("nan")


# --------------------------------------------------------------------
# OOD TABLE
# --------------------------------------------------------------------
def ood_eval(rm, datasets: Sequence[tuple[str, PairBatch]], seed: int | None = None) -> pd.DataFrame:
    """One accuracy per dataset, columns in registration order."""
    row = {"seed": seed, "model": rm.kind}
    for name, batch in datasets:
        row[name] = rm_accuracy(rm.params, batch, rm.kind)
    return pd.DataFrame([row], columns=["seed", "model", *[name for name, _ in datasets]])


def mean_ulb(rm, batch: PairBatch) -> float:
    return float(np.mean(pair_ulb(rm.params, batch)))


# --------------------------------------------------------------------
# REPORT
# --------------------------------------------------------------------
@dataclass
class EvalReport:
    tables: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)


def report(results: EvalReport, out_dir: str) -> list[str]:
    """Write one CSV per table plus summary.txt; returns the written paths."""
    io.ensure_dir(out_dir)
    written = []
    for name in sorted(results.tables):
        path = os.path.join(out_dir, f"{name}.csv")
        io.save_csv(path, results.tables[name])
        written.append(path)
    lines = ["qsalign evaluation report", ""]
    for key in sorted(results.metadata):
        lines.append(f"{key}: {results.metadata[key]}")
    if results.tables:
        lines.append("")
    for name in sorted(results.tables):
        df = results.tables[name]
        lines.append(f"[{name}] {len(df)} rows x {len(df.columns)} columns")
        if len(df):
            lines.append(df.to_string(index=False, float_format=lambda v: f"{v:.6g}"))
    if "gsb" in results.tables:
        lines += ["", "note: gsb is a utility-threshold proxy for human Good-Same-Bad review"]
    summary = os.path.join(out_dir, "summary.txt")
    with open(summary, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines) + "\n")
    written.append(summary)
    log.info(f"report written to {out_dir} ({len(written)} files)")
    return written
