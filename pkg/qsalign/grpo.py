"""
Toy suggestion policy and its optimisers.

The policy picks an ordered triple from a context's candidate pool by
Plackett-Luce sampling, or refuses outright:

    first pick   softmax over [refuse, pool]
    second pick  softmax over pool minus the first
    third pick   softmax over pool minus the first two

Pool logits are a linear scorer over (context, suggestion) features plus a
per-(context, candidate) offset; the refuse logit is linear in the context
block. All logits are divided by the temperature. Pools are small, so every
action's probability, the KL between two policies and all gradients are
computed exactly by enumeration.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from itertools import permutations
from typing import Callable, Sequence

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy.special import logsumexp, softmax

from .clicksim import REFUSE, DedupeConfig, SftExample, dedupe_ranked
from .features import DEFAULT_FEATURE_DIM, featurize_many
from .rmodels import KIND_TO_HEAD
from .textrewards import COMPONENTS, RewardVector, RmOutputs, SuggestionGroup, composite_reward
from .utils import io
from .utils.errors import ConfigError, InvalidInputError, NumericError
from .utils.logger import get_logger
from .utils.rng import make_rng

log = get_logger(__name__)

ADV_EPS = 1e-8


# --------------------------------------------------------------------
# ACTION SPACES
# --------------------------------------------------------------------
@dataclass(frozen=True)
class ActionSpace:
    """Everything the policy needs about one context: pool features and context block."""
    ctx: object
    pool: tuple
    phi: np.ndarray
    c: np.ndarray

    @property
    def size(self) -> int:
        return len(self.pool)


def build_action_space(ctx, pool: Sequence, dim: int = DEFAULT_FEATURE_DIM) -> ActionSpace:
    if len(pool) < 3:
        raise InvalidInputError(f"action space for {ctx.id}: pool size {len(pool)} < 3")
    return ActionSpace(ctx, tuple(pool), featurize_many(ctx, pool, dim), ctx.x)


def build_action_spaces(world, dim: int = DEFAULT_FEATURE_DIM, contexts: Sequence | None = None) -> dict:
    return {ctx.id: build_action_space(ctx, world.pool(ctx.id), dim) for ctx in (contexts or world.contexts)}


@lru_cache(maxsize=16)
def triples(n: int) -> np.ndarray:
    """All ordered triples of distinct indices in range(n), lexicographic."""
    return np.array(list(permutations(range(n), 3)), dtype=int)


@lru_cache(maxsize=16)
def _triple_index(n: int) -> dict:
    return {tuple(int(x) for x in t): i for i, t in enumerate(triples(n))}


def action_index(n: int, action) -> int:
    if tuple(action) == REFUSE:
        return len(triples(n))
    try:
        return _triple_index(n)[tuple(int(a) for a in action)]
    except KeyError:
        raise InvalidInputError(f"invalid action {action!r} for pool of size {n}") from None


def action_at(n: int, i: int) -> tuple:
    T = triples(n)
    return REFUSE if i == len(T) else tuple(int(x) for x in T[i])


# --------------------------------------------------------------------
# POLICY
# --------------------------------------------------------------------
@dataclass(frozen=True)
class Policy:
    """Flat parameters: [theta (D) | refuse_w (C) | refuse_b | offsets (n_ctx x P)]."""
    params: np.ndarray
    dim: int
    ctx_dim: int
    pool_size: int
    context_ids: tuple
    temperature: float = 1.0

    def __post_init__(self):
        if not self.temperature > 0:
            raise ConfigError(f"Policy: temperature must be > 0, got {self.temperature}")
        expected = self.dim + self.ctx_dim + 1 + len(self.context_ids) * self.pool_size
        if self.params.shape != (expected,):
            raise ConfigError(f"Policy: expected {expected} parameters, got {self.params.shape}")
        object.__setattr__(self, "_slot", {cid: i for i, cid in enumerate(self.context_ids)})

    @property
    def theta(self) -> np.ndarray:
        return self.params[: self.dim]

    @property
    def refuse_w(self) -> np.ndarray:
        return self.params[self.dim: self.dim + self.ctx_dim]

    @property
    def refuse_b(self) -> float:
        return float(self.params[self.dim + self.ctx_dim])

    def offset_slice(self, context_id: str) -> slice | None:
        i = self._slot.get(context_id)
        if i is None:
            return None
        start = self.dim + self.ctx_dim + 1 + i * self.pool_size
        return slice(start, start + self.pool_size)

    def with_params(self, params: np.ndarray) -> "Policy":
        return replace(self, params=np.asarray(params, dtype=float))

    def copy(self) -> "Policy":
        return self.with_params(self.params.copy())

    def raw_logits(self, space: ActionSpace) -> tuple[np.ndarray, float]:
        pool = space.phi @ self.theta
        sl = self.offset_slice(space.ctx.id)
        if sl is not None and space.size == self.pool_size:
            pool = pool + self.params[sl]
        refuse = float(space.c @ self.refuse_w + self.refuse_b)
        return pool, refuse

    def to_dict(self) -> dict:
        return {"params": self.params.tolist(), "dim": self.dim, "ctx_dim": self.ctx_dim, "pool_size": self.pool_size,
                "context_ids": list(self.context_ids), "temperature": self.temperature}

    @classmethod
    def from_dict(cls, d: dict) -> "Policy":
        return cls(np.asarray(d["params"], dtype=float), int(d["dim"]), int(d["ctx_dim"]), int(d["pool_size"]),
                   tuple(d["context_ids"]), float(d["temperature"]))


def init_policy(spaces: dict, dim: int = DEFAULT_FEATURE_DIM, temperature: float = 1.0,
                refuse_bias: float = -3.0) -> Policy:
    """Uniform over triples with a small refusal mass."""
    first = next(iter(spaces.values()))
    ids = tuple(spaces)
    n = dim + len(first.c) + 1 + len(ids) * first.size
    params = np.zeros(n)
    params[dim + len(first.c)] = refuse_bias
    return Policy(params, dim, len(first.c), first.size, ids, temperature)


# --------------------------------------------------------------------
# EXACT DISTRIBUTION
# --------------------------------------------------------------------
@dataclass
class ActionDist:
    logp: np.ndarray          # (n_triples + 1,), refuse last
    p1: np.ndarray            # first pick over [pool..., refuse]
    p2: np.ndarray            # (P, P) second pick given first
    p3: np.ndarray            # (P, P, P) third pick given first two
    T: np.ndarray

    @property
    def probs(self) -> np.ndarray:
        return np.exp(self.logp)


def action_dist(policy: Policy, space: ActionSpace) -> ActionDist:
    pool, refuse = policy.raw_logits(space)
    l = pool / policy.temperature
    r = refuse / policy.temperature
    P = len(l)
    T = triples(P)
    all1 = np.append(l, r)
    lse1 = logsumexp(all1)
    p1 = np.exp(all1 - lse1)

    eye = np.eye(P, dtype=bool)
    L2 = np.where(eye, -np.inf, l[None, :])
    lse2 = logsumexp(L2, axis=1)
    p2 = np.exp(L2 - lse2[:, None])

    mask3 = eye[:, None, :] | eye[None, :, :]
    L3 = np.where(mask3, -np.inf, l[None, None, :])
    with np.errstate(invalid="ignore"):
        lse3 = logsumexp(L3, axis=2)
        p3 = np.nan_to_num(np.exp(L3 - lse3[:, :, None]))

    a, b, c = T[:, 0], T[:, 1], T[:, 2]
    lp = (l[a] - lse1) + (l[b] - lse2[a]) + (l[c] - lse3[a, b])
    logp = np.append(lp, r - lse1)
    return ActionDist(logp, p1, p2, p3, T)


def logprob(policy: Policy, space: ActionSpace, action) -> float:
    """Exact log-probability of a triple or of refusing."""
    i = action_index(space.size, action)
    return float(action_dist(policy, space).logp[i])


def logit_jacobian(dist: ActionDist) -> np.ndarray:
    """d logp(action) / d logits, rows = actions, columns = [pool..., refuse]."""
    T = dist.T
    P = dist.p2.shape[0]
    n = len(T)
    J = np.zeros((n + 1, P + 1))
    rows = np.arange(n)
    for k in range(3):
        J[rows, T[:, k]] += 1.0
    J[:n, :P] -= dist.p1[None, :P]
    J[:n, :P] -= dist.p2[T[:, 0]]
    J[:n, :P] -= dist.p3[T[:, 0], T[:, 1]]
    J[:n, P] = -dist.p1[P]
    J[n, :P] = -dist.p1[:P]
    J[n, P] = 1.0 - dist.p1[P]
    return J


def _param_grad(policy: Policy, space: ActionSpace, g_logits: np.ndarray, out: np.ndarray) -> None:
    """Accumulate d/dparams given d/dlogits (logits already include the temperature)."""
    g = g_logits / policy.temperature
    gp, gr = g[:-1], g[-1]
    d, c = policy.dim, policy.ctx_dim
    out[:d] += space.phi.T @ gp
    out[d:d + c] += gr * space.c
    out[d + c] += gr
    sl = policy.offset_slice(space.ctx.id)
    if sl is not None and space.size == policy.pool_size:
        out[sl] += gp


def kl_divergence(p: Policy, q: Policy, space: ActionSpace) -> float:
    """KL(p || q) over the full action set."""
    lp = action_dist(p, space).logp
    lq = action_dist(q, space).logp
    pr = np.exp(lp)
    return float(np.sum(np.where(pr > 0, pr * (lp - lq), 0.0)))


# --------------------------------------------------------------------
# SAMPLING
# --------------------------------------------------------------------
@dataclass
class Rollout:
    context_id: str
    action: tuple
    logprob_old: float
    reward: RewardVector | None = None

    def __post_init__(self):
        if self.action != REFUSE and len(set(self.action)) != 3:
            raise InvalidInputError(f"Rollout {self.context_id}: triple indices must be distinct")
        if not math.isfinite(self.logprob_old):
            raise InvalidInputError(f"Rollout {self.context_id}: non-finite logprob")


def sample_action(policy: Policy, space: ActionSpace, rng: np.random.Generator) -> tuple:
    """Sequential Plackett-Luce draw (refuse allowed on the first pick only)."""
    pool, refuse = policy.raw_logits(space)
    l = pool / policy.temperature
    P = len(l)
    first = rng.choice(P + 1, p=softmax(np.append(l, refuse / policy.temperature)))
    if first == P:
        return REFUSE
    picked = [int(first)]
    for _ in range(2):
        rest = np.array([j for j in range(P) if j not in picked])
        picked.append(int(rest[rng.choice(len(rest), p=softmax(l[rest]))]))
    return tuple(picked)


def sample_group(policy: Policy, space: ActionSpace, G: int, seed: int) -> list[Rollout]:
    """G independent actions with exact log-probabilities; stream keyed by context id."""
    if space.size < 3:
        raise InvalidInputError(f"sample_group: pool size {space.size} < 3")
    rng = make_rng(seed, "rollout", space.ctx.id)
    dist = action_dist(policy, space)
    out = []
    for _ in range(int(G)):
        a = sample_action(policy, space, rng)
        out.append(Rollout(space.ctx.id, a, float(dist.logp[action_index(space.size, a)])))
    return out


def greedy_action(policy: Policy, space: ActionSpace) -> tuple:
    return action_at(space.size, int(np.argmax(action_dist(policy, space).logp)))


def action_texts(space: ActionSpace, action) -> tuple:
    return tuple(space.pool[i].text for i in action)


# --------------------------------------------------------------------
# GRPO
# --------------------------------------------------------------------
@dataclass(frozen=True)
class GrpoConfig:
    group_size: int = 10
    beta_kl: float = 0.1
    clip_ratio: float = 0.2
    lr: float = 0.05
    grad_clip_norm: float = 1.0
    steps: int = 200
    contexts_per_step: int = 16
    anchor: str = "old"
    advantage: str = "standardized"
    updates_per_batch: int = 4
    seed: int = 0

    def validate(self) -> "GrpoConfig":
        if self.group_size < 2:
            raise ConfigError(f"GrpoConfig: group_size must be >= 2, got {self.group_size}")
        if self.updates_per_batch < 1:
            raise ConfigError(f"GrpoConfig: updates_per_batch must be >= 1, got {self.updates_per_batch}")
        if self.beta_kl < 0 or self.clip_ratio <= 0 or self.lr <= 0:
            raise ConfigError("GrpoConfig: beta_kl >= 0, clip_ratio > 0 and lr > 0 required")
        if self.anchor not in ("old", "sft_reference"):
            raise ConfigError(f"GrpoConfig: anchor must be old or sft_reference, got {self.anchor!r}")
        if self.advantage not in ("standardized", "raw"):
            raise ConfigError(f"GrpoConfig: advantage must be standardized or raw, got {self.advantage!r}")
        return self


def group_advantages(rewards: Sequence[float], mode: str = "standardized") -> np.ndarray:
    """(r - mean) / (population std + 1e-8); exactly zero when all rewards agree."""
    r = np.asarray(rewards, dtype=float)
    if r.size < 2:
        raise InvalidInputError(f"group_advantages: need >= 2 rewards, got {r.size}")
    if mode == "raw":
        return r.copy()
    if np.ptp(r) == 0.0:
        return np.zeros_like(r)
    return (r - r.mean()) / (r.std() + ADV_EPS)


@dataclass
class RolloutGroup:
    space: ActionSpace
    rollouts: list
    advantages: np.ndarray = field(default_factory=lambda: np.zeros(0))


def surrogate(p: Policy, p_old: Policy, groups: Sequence[RolloutGroup], cfg: GrpoConfig,
              anchor: Policy | None = None, stats: dict | None = None) -> tuple[float, np.ndarray]:
    """Clipped importance-weighted objective minus beta * exact KL, and its gradient.

    Averaged over groups, then over rollouts within a group.
    """
    anchor = anchor if anchor is not None else p_old
    eps = cfg.clip_ratio
    value = 0.0
    grad = np.zeros_like(p.params)
    kl_total = 0.0
    n_clipped = n_total = 0
    for grp in groups:
        space = grp.space
        dist = action_dist(p, space)
        J = logit_jacobian(dist)
        g_logits = np.zeros(J.shape[1])
        G = len(grp.rollouts)
        for ro, A in zip(grp.rollouts, grp.advantages):
            i = action_index(space.size, ro.action)
            ratio = math.exp(dist.logp[i] - ro.logprob_old)
            clipped = min(max(ratio, 1.0 - eps), 1.0 + eps)
            unclipped_term, clipped_term = ratio * A, clipped * A
            n_total += 1
            if unclipped_term <= clipped_term:
                value += unclipped_term / G
                g_logits += (A * ratio / G) * J[i]
            else:
                value += clipped_term / G
                n_clipped += 1
        if cfg.beta_kl > 0:
            lq = action_dist(anchor, space).logp
            pr = np.exp(dist.logp)
            diff = np.where(pr > 0, dist.logp - lq, 0.0)
            kl = float(pr @ diff)
            kl_total += kl
            value -= cfg.beta_kl * kl
            g_logits -= cfg.beta_kl * ((pr * (diff - kl)) @ J)
        _param_grad(p, space, g_logits, grad)
    n = max(len(groups), 1)
    if stats is not None:
        stats["kl"] = kl_total / n
        stats["clip_frac"] = n_clipped / max(n_total, 1)
    return value / n, grad / n


RewardFn = Callable[[object, ActionSpace, tuple], RewardVector]


def score_groups(groups: Sequence[RolloutGroup], reward_fn: RewardFn, cfg: GrpoConfig) -> None:
    for grp in groups:
        for ro in grp.rollouts:
            if ro.reward is None:
                ro.reward = reward_fn(grp.space.ctx, grp.space, ro.action)
        grp.advantages = group_advantages([ro.reward.fused for ro in grp.rollouts], cfg.advantage)


def make_reward_fn(weights, rm=None, reference=None, judge=None) -> RewardFn:
    """Composite-reward scorer for actions; memoised per (context, action)."""
    rm_cache: dict = {}
    memo: dict = {}

    def reward_fn(ctx, space: ActionSpace, action) -> RewardVector:
        key = (ctx.id, tuple(action))
        hit = memo.get(key)
        if hit is not None:
            return hit
        if action == REFUSE:
            out = composite_reward(weights, ctx, SuggestionGroup.refusal())
        else:
            rmo = RmOutputs()
            if rm is not None:
                if ctx.id not in rm_cache:
                    rm_cache[ctx.id] = rm.score_pool(ctx, space.pool)
                mu, sigma = rm_cache[ctx.id]
                idx = list(action)
                rmo = RmOutputs(float(np.mean(mu[idx])), float(np.mean(sigma[idx])))
            chosen = [space.pool[i] for i in action]
            g = SuggestionGroup(tuple(s.text for s in chosen), False, tuple(s.lang for s in chosen))
            out = composite_reward(weights, ctx, g, rmo, reference, judge)
        memo[key] = out
        return out

    return reward_fn


def grpo_step(p: Policy, p_old: Policy, batch: Sequence[RolloutGroup], reward_fn: RewardFn, cfg: GrpoConfig,
              reference: Policy | None = None, trace: dict | None = None) -> Policy:
    """One clipped gradient-ascent step on the GRPO objective."""
    cfg.validate()
    score_groups(batch, reward_fn, cfg)
    anchor = reference if cfg.anchor == "sft_reference" and reference is not None else p_old
    stats: dict = {}
    value, grad = surrogate(p, p_old, batch, cfg, anchor, stats)
    if not (math.isfinite(value) and np.all(np.isfinite(grad))):
        raise NumericError(f"grpo_step: non-finite objective ({value}) or gradient")
    norm = float(np.linalg.norm(grad))
    if norm > cfg.grad_clip_norm:
        grad = grad * (cfg.grad_clip_norm / norm)
    if trace is not None:
        rewards = np.array([[*ro.reward.components(), ro.reward.fused] for g in batch for ro in g.rollouts])
        trace.update({"objective": value, "grad_norm": norm, **stats})
        trace.update({name: float(v) for name, v in zip((*COMPONENTS, "fused"), rewards.mean(axis=0))})
    return p.with_params(p.params + cfg.lr * grad)


def rollout_batch(policy: Policy, spaces: Sequence[ActionSpace], G: int, seed: int, n_jobs: int = 1) -> list:
    """Sample one group per context; each context draws from its own stream."""
    groups = Parallel(n_jobs=n_jobs, prefer="threads")(
        delayed(sample_group)(policy, space, G, seed) for space in spaces
    )
    return [RolloutGroup(space, rollouts) for space, rollouts in zip(spaces, groups)]


def train_rl(policy: Policy, spaces: dict, reward_fn: RewardFn, cfg: GrpoConfig,
             reference: Policy | None = None, n_jobs: int = 1) -> tuple[Policy, pd.DataFrame]:
    """GRPO loop over context minibatches.

    Each step samples groups from a frozen copy of the current policy and
    takes ``cfg.updates_per_batch`` gradient steps on that batch, so the
    importance ratio (and with ``anchor = old`` the KL term) moves away
    from its trivial value after the first update. The trace row holds the
    statistics of the last update.
    """
    cfg.validate()
    ids = sorted(spaces)
    rows = []
    p = policy
    for step in range(cfg.steps):
        rng = make_rng(cfg.seed, "grpo-batch", step)
        k = min(cfg.contexts_per_step, len(ids))
        chosen = [spaces[ids[i]] for i in sorted(rng.choice(len(ids), size=k, replace=False))]
        p_old = p.copy()
        batch = rollout_batch(p_old, chosen, cfg.group_size, make_rng(cfg.seed, "grpo-seed", step).integers(2**63),
                              n_jobs)
        for _ in range(cfg.updates_per_batch):
            trace: dict = {"step": step}
            p = grpo_step(p, p_old, batch, reward_fn, cfg, reference, trace)
        rows.append(trace)
        if step % 25 == 0 or step == cfg.steps - 1:
            log.info(f"grpo step {step}: fused={trace['fused']:.4f} kl={trace.get('kl', 0.0):.5f}")
    cols = ["step", "fused", *COMPONENTS, "kl", "clip_frac", "objective", "grad_norm"]
    df = pd.DataFrame(rows)
    return p, df.reindex(columns=[c for c in cols if c in df.columns])


# --------------------------------------------------------------------
# SFT + RFT
# --------------------------------------------------------------------
def sft_objective(p: Policy, data: Sequence[tuple[ActionSpace, tuple]]) -> tuple[float, np.ndarray]:
    """Mean target log-probability and its gradient."""
    total = 0.0
    grad = np.zeros_like(p.params)
    for space, target in data:
        i = action_index(space.size, target)
        dist = action_dist(p, space)
        total += dist.logp[i]
        _param_grad(p, space, logit_jacobian(dist)[i], grad)
    n = max(len(data), 1)
    return total / n, grad / n


def sft_fit(p: Policy, dataset: Sequence[tuple[ActionSpace, tuple]], epochs: int, lr: float = 0.05,
            seed: int = 0, history: list | None = None) -> Policy:
    """Full-batch gradient ascent on mean target log-probability."""
    for space, target in dataset:
        action_index(space.size, target)
    params = p.params.copy()
    for epoch in range(int(epochs)):
        value, grad = sft_objective(p.with_params(params), dataset)
        if not math.isfinite(value):
            raise NumericError(f"sft_fit: non-finite objective at epoch {epoch}")
        if history is not None:
            history.append(value)
        params = params + lr * grad
    if epochs:
        log.debug(f"sft_fit: {epochs} epochs, seed {seed}, final mean logprob {sft_objective(p.with_params(params), dataset)[0]:.4f}")
    return p.with_params(params)


def sft_pairs(examples: Sequence[SftExample], spaces: dict) -> list[tuple[ActionSpace, tuple]]:
    return [(spaces[e.context_id], e.target) for e in examples if e.context_id in spaces]


@dataclass(frozen=True)
class RftConfig:
    k: int = 50
    epochs: int = 200
    lr: float = 0.05
    seed: int = 0


def select_top_candidates(candidates: Sequence[int], scores: Sequence[float], texts: Sequence[str],
                          dedupe_cfg: DedupeConfig, limit: int = 3) -> list[int]:
    """Sort by score (descending, stable), drop repeats and near-duplicates, keep the top ``limit``.

    ``candidates`` index into ``texts``; ``scores`` align with ``candidates``.
    """
    order = sorted(range(len(candidates)), key=lambda i: (-scores[i], i))
    cand_texts = [texts[j] for j in candidates]
    kept = dedupe_ranked(cand_texts, order, dedupe_cfg, limit)
    return [int(candidates[i]) for i in kept]


def rft_round(p: Policy, rm, spaces: dict, cfg: RftConfig, dedupe_cfg: DedupeConfig | None = None
              ) -> tuple[list[SftExample], Policy, int]:
    """Rejection-sampling fine-tuning: sample, score, dedupe, keep the top 3, fine-tune.

    Candidates are ``cfg.k`` first-pick draws from the policy's pool
    distribution. Unsafe contexts keep a refusal target. Returns the
    curated dataset, the fine-tuned policy and the dropped-context count.
    """
    dedupe_cfg = dedupe_cfg or DedupeConfig()
    if rm.params.head != KIND_TO_HEAD.get(rm.kind):
        raise ConfigError(f"rft_round: reward model head {rm.params.head!r} does not match kind {rm.kind!r}")
    dataset, dropped = [], 0
    for cid in sorted(spaces):
        space = spaces[cid]
        if space.ctx.unsafe:
            dataset.append(SftExample(cid, REFUSE))
            continue
        pool_logits, _ = p.raw_logits(space)
        rng = make_rng(cfg.seed, "rft", cid)
        draws = rng.choice(space.size, size=cfg.k, p=softmax(pool_logits / p.temperature))
        scores, _ = rm.score_pool(space.ctx, space.pool)
        cand = [int(d) for d in draws]
        kept = select_top_candidates(cand, [float(scores[d]) for d in cand], [s.text for s in space.pool], dedupe_cfg)
        if len(kept) < 3:
            dropped += 1
            continue
        dataset.append(SftExample(cid, tuple(kept)))
    if dropped:
        log.warning(f"rft_round: dropped {dropped} contexts with < 3 unique candidates")
    tuned = sft_fit(p, sft_pairs(dataset, spaces), cfg.epochs, cfg.lr, cfg.seed)
    return dataset, tuned, dropped


# --------------------------------------------------------------------
# SERVING
# --------------------------------------------------------------------
class PolicyServing:
    """Serve triples sampled from a trained policy to the click model."""

    def __init__(self, policy: Policy, name: str = "rft_shifted", dim: int | None = None, greedy: bool = False):
        self.policy = policy
        self.name = name
        self.dim = dim or policy.dim
        self.greedy = greedy
        self._spaces: dict = {}

    def space(self, world, ctx) -> ActionSpace:
        sp = self._spaces.get(ctx.id)
        if sp is None:
            sp = build_action_space(ctx, world.pool(ctx.id), self.dim)
            self._spaces[ctx.id] = sp
        return sp

    def serve(self, world, ctx, rng: np.random.Generator) -> tuple:
        sp = self.space(world, ctx)
        if self.greedy:
            return greedy_action(self.policy, sp)
        return sample_action(self.policy, sp, rng)


# --------------------------------------------------------------------
# CHECKPOINTS
# --------------------------------------------------------------------
def pool_fingerprint(spaces: dict) -> str:
    return io.payload_fingerprint({cid: [s.id for s in sp.pool] for cid, sp in sorted(spaces.items())})


def save_policy(path: str, policy: Policy, spaces: dict | None = None, metadata: dict | None = None) -> None:
    payload = {"policy": policy.to_dict(), "pool_fingerprint": pool_fingerprint(spaces) if spaces else "",
               "metadata": metadata or {}}
    io.save_json(path, payload, kind="policy")


def load_policy(path: str) -> Policy:
    return Policy.from_dict(io.load_json(path, kind="policy")["policy"])
