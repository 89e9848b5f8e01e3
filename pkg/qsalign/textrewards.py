"""
Reward suite for suggestion groups.

Rule rewards (format, length, language, diversity, safety), a deterministic
rubric reward, the reference-model log-probability reward and the composite
RewardVector that fuses them with the reward-model outputs.
"""
from __future__ import annotations

import math
import unicodedata
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .features import AMBIGUOUS_LANG, jaccard, language_match, word_count
from .utils.errors import ConfigError, InvalidInputError

COMPONENTS = ("format", "length", "language", "diversity", "safety", "rubric", "ppl", "rm", "rm_sigma")
GROUP_SIZE = 3
SOFT_WORD_LIMIT = 12
LENGTH_SLOPE = 5.0
MAX_CHARS = 95
UNSAFE_PENALTY = -5.0
REFUSAL_BONUS = 1.0
BOS, EOS, UNK = "<s>", "</s>", "<unk>"


# --------------------------------------------------------------------
# TYPES
# --------------------------------------------------------------------
@dataclass(frozen=True)
class SuggestionGroup:
    suggestions: tuple = ()
    is_refusal: bool = False
    langs: tuple | None = None

    def __post_init__(self):
        if self.is_refusal and self.suggestions:
            raise InvalidInputError("SuggestionGroup: a refusal carries no suggestions")
        if self.langs is not None and len(self.langs) != len(self.suggestions):
            raise InvalidInputError("SuggestionGroup: one language tag per suggestion")

    @classmethod
    def refusal(cls) -> "SuggestionGroup":
        return cls((), True, ())

    def tags(self) -> tuple:
        if self.langs is not None:
            return self.langs
        return tuple(detect_language(s) for s in self.suggestions)


@dataclass(frozen=True)
class RmOutputs:
    """Group-mean reward-model outputs; sigma is 0 for non-Gaussian heads."""
    mu: float = 0.0
    sigma: float = 0.0


@dataclass(frozen=True)
class RewardVector:
    format: float
    length: float
    language: float
    diversity: float
    safety: float
    rubric: float
    ppl: float
    rm: float
    rm_sigma: float
    fused: float

    def components(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in COMPONENTS], dtype=float)

    def as_dict(self) -> dict:
        return {name: getattr(self, name) for name in (*COMPONENTS, "fused")}


# --------------------------------------------------------------------
# LANGUAGE DETECTION
# --------------------------------------------------------------------
def _script(ch: str) -> str | None:
    if ch.isspace() or not ch.isalpha():
        return None
    name = unicodedata.name(ch, "")
    if name.startswith("CJK") or "IDEOGRAPH" in name:
        return "zh"
    if name.startswith("LATIN"):
        return "en"
    return "other"


def detect_language(text: str, dominance: float = 0.8) -> str:
    """Unicode-script heuristic: the dominant script's language, else ``mixed``."""
    counts = Counter(s for s in map(_script, text) if s is not None)
    total = sum(counts.values())
    if total == 0:
        return AMBIGUOUS_LANG
    lang, n = counts.most_common(1)[0]
    if lang == "other" or n / total < dominance:
        return AMBIGUOUS_LANG
    return lang


# --------------------------------------------------------------------
# RULE REWARDS
# --------------------------------------------------------------------
def format_reward(g: SuggestionGroup) -> float:
    if g.is_refusal:
        return 0.0
    ok = len(g.suggestions) == GROUP_SIZE and all(s.strip() for s in g.suggestions)
    return 1.0 if ok else 0.0


def length_score(text: str) -> float:
    return min(1.0, max(0.0, 1.0 - (word_count(text) - SOFT_WORD_LIMIT) / LENGTH_SLOPE))


def length_reward(g: SuggestionGroup) -> float:
    if not g.suggestions:
        raise InvalidInputError("length_reward: empty group")
    return float(np.mean([length_score(s) for s in g.suggestions]))


def language_consistency_reward(ctx, g: SuggestionGroup) -> float:
    if not g.suggestions:
        return 0.0
    return float(np.mean([language_match(ctx.lang, tag) for tag in g.tags()]))


def diversity_reward(g: SuggestionGroup) -> float:
    """1 - mean pairwise 1-gram Jaccard over the three suggestions."""
    if len(g.suggestions) != GROUP_SIZE:
        raise InvalidInputError(f"diversity_reward: need {GROUP_SIZE} suggestions, got {len(g.suggestions)}")
    a, b, c = g.suggestions
    return 1.0 - (jaccard(a, b) + jaccard(a, c) + jaccard(b, c)) / 3.0


def safety_reward(ctx, g: SuggestionGroup) -> float:
    if ctx.unsafe:
        return REFUSAL_BONUS if g.is_refusal else UNSAFE_PENALTY
    return UNSAFE_PENALTY if g.is_refusal else 0.0


# --------------------------------------------------------------------
# RUBRIC
# --------------------------------------------------------------------
Judge = Callable[[object, str], float]


def _norm(text: str) -> str:
    return " ".join("".join(ch for ch in text.lower() if ch.isalnum() or ch.isspace()).split())


def rubric_check(ctx, s: str, near_repeat: float = 0.9) -> float:
    """Deterministic quality rubric: 0 for stubs, over-long text or repeats of a prior query."""
    if word_count(s) <= 1 or len(s) > MAX_CHARS:
        return 0.0
    ns = _norm(s)
    for h in getattr(ctx, "history", ()):
        if ns == _norm(h) or jaccard(ns, _norm(h)) >= near_repeat:
            return 0.0
    return 1.0


def rubric_reward(ctx, s: str, judge: Judge | None = None) -> float:
    score = (judge or rubric_check)(ctx, s)
    return 1.0 if score >= 0.5 else 0.0


def group_rubric(ctx, g: SuggestionGroup, judge: Judge | None = None) -> float:
    if not g.suggestions:
        return 0.0
    return float(np.mean([rubric_reward(ctx, s, judge) for s in g.suggestions]))


# --------------------------------------------------------------------
# REFERENCE MODEL
# --------------------------------------------------------------------
@dataclass(frozen=True)
class ReferenceModel:
    """Add-k smoothed bigram model. ``vocab`` lists every outcome token."""
    vocab: tuple
    counts: dict
    k: float = 0.1
    _totals: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.k <= 0:
            raise InvalidInputError(f"ReferenceModel: k must be > 0, got {self.k}")
        if not self._totals:
            for h, row in self.counts.items():
                self._totals[h] = sum(row.values())
        object.__setattr__(self, "_vocab_set", frozenset(self.vocab))

    @property
    def V(self) -> int:
        return len(self.vocab)

    def prob(self, h: str, w: str) -> float:
        c = self.counts.get(h, {}).get(w, 0)
        return (c + self.k) / (self._totals.get(h, 0) + self.k * self.V)

    def tokens(self, text: str) -> list[str]:
        return [t if t in self._vocab_set else UNK for t in text.split()]

    def sentence_logprob(self, text: str) -> np.ndarray:
        toks = self.tokens(text)
        seq = [BOS, *toks, EOS]
        return np.array([math.log(self.prob(h, w)) for h, w in zip(seq, seq[1:])])

    def to_dict(self) -> dict:
        return {"vocab": list(self.vocab), "k": self.k,
                "counts": {h: dict(sorted(row.items())) for h, row in sorted(self.counts.items())}}

    @classmethod
    def from_dict(cls, d: dict) -> "ReferenceModel":
        counts = {h: {w: int(c) for w, c in row.items()} for h, row in d["counts"].items()}
        return cls(tuple(d["vocab"]), counts, float(d["k"]))


def fit_reference_model(corpus: Iterable, k: float = 0.1) -> ReferenceModel:
    """Fit on (context, suggestion text) pairs, or bare texts."""
    texts = [item[1] if isinstance(item, tuple) else item for item in corpus]
    if not texts:
        raise InvalidInputError("fit_reference_model: empty corpus")
    counts: dict = defaultdict(Counter)
    outcomes = {EOS, UNK}
    for text in texts:
        toks = text.split()
        outcomes.update(toks)
        seq = [BOS, *toks, EOS]
        for h, w in zip(seq, seq[1:]):
            counts[h][w] += 1
    return ReferenceModel(tuple(sorted(outcomes)), {h: dict(row) for h, row in counts.items()}, k)


def ppl_reward(m: ReferenceModel, s: str) -> float:
    """Mean per-token log-probability (end token included); higher is more in-distribution."""
    if not s.strip():
        raise InvalidInputError("ppl_reward: empty suggestion")
    return float(np.mean(m.sentence_logprob(s)))


def group_ppl(m: ReferenceModel | None, g: SuggestionGroup) -> float:
    if m is None or not g.suggestions:
        return 0.0
    return float(np.mean([ppl_reward(m, s) for s in g.suggestions]))


# --------------------------------------------------------------------
# COMPOSITE
# --------------------------------------------------------------------
def check_weights(weights: Sequence[float]) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    if w.shape != (len(COMPONENTS),):
        raise ConfigError(f"composite_reward: expected {len(COMPONENTS)} weights, got {w.shape}")
    if not np.all(np.isfinite(w)):
        raise ConfigError("composite_reward: non-finite weight")
    return w


def reward_components(ctx, g: SuggestionGroup, rm_outputs: RmOutputs | None = None,
                      reference: ReferenceModel | None = None, judge: Judge | None = None) -> np.ndarray:
    """Component values in COMPONENTS order. Refusals read 0 everywhere except safety."""
    safety = safety_reward(ctx, g)
    out = np.zeros(len(COMPONENTS))
    out[COMPONENTS.index("safety")] = safety
    if g.is_refusal:
        return out
    rm_outputs = rm_outputs or RmOutputs()
    out[0] = format_reward(g)
    out[1] = length_reward(g) if g.suggestions else 0.0
    out[2] = language_consistency_reward(ctx, g)
    out[3] = diversity_reward(g) if len(g.suggestions) == GROUP_SIZE else 0.0
    out[5] = group_rubric(ctx, g, judge)
    out[6] = group_ppl(reference, g)
    out[7] = rm_outputs.mu
    out[8] = rm_outputs.sigma
    return out


def composite_reward(weights, ctx, g: SuggestionGroup, rm_outputs: RmOutputs | None = None,
                     reference: ReferenceModel | None = None, judge: Judge | None = None) -> RewardVector:
    w = check_weights(getattr(weights, "w", weights))
    comps = reward_components(ctx, g, rm_outputs, reference, judge)
    return RewardVector(*map(float, comps), fused=float(np.dot(w, comps)))


def single_components(ctx, text: str, lang: str, rm_mu: float = 0.0, rm_sigma: float = 0.0,
                      reference: ReferenceModel | None = None, judge: Judge | None = None) -> np.ndarray:
    """Components of one suggestion scored as a group of one (format and diversity read 0)."""
    g = SuggestionGroup((text,), False, (lang,))
    return reward_components(ctx, g, RmOutputs(rm_mu, rm_sigma), reference, judge)


# Hand-set starting weights; fusion replaces them after fitting.
DEFAULT_WEIGHTS = np.array([0.25, 0.25, 0.3, 0.25, 1.0, 0.3, 0.1, 0.5, -0.2])
