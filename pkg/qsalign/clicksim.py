"""
Synthetic conversational world and user click model.

A world is a set of contexts (dialogue states) each with a pool of candidate
follow-up suggestions. A hidden user model assigns every (context,
suggestion) a ground-truth utility; users scan a served triple top-down under
the examination hypothesis and click at most once. Click logs feed the
preference-triplet curation, SFT data assembly and the drift generators used
for out-of-distribution evaluation.
"""
from __future__ import annotations

import string
from collections import Counter
from dataclasses import asdict, dataclass, field, replace
from typing import Iterable, Protocol, Sequence

import numpy as np
from scipy.special import expit

from .features import AMBIGUOUS_LANG, cosine, jaccard, text_vectors, word_count
from .utils.errors import InvalidInputError
from .utils.logger import get_logger
from .utils.rng import derive_seed, make_rng

log = get_logger(__name__)

INTENTS = ("information_retrieval", "web_search", "content_generation")
REFUSE = ()
STUBS = {"en": ("hi", "hello", "ok", "thanks"), "zh": ("你好", "好的", "谢谢")}
MAX_CHARS = 95

# ground-truth utility features, in order:
# token quality, topic overlap, latent affinity, length excess, language
# mismatch, meaningless stub, repeated prior query
UTILITY_FEATURES = ("quality", "topic", "affinity", "excess_length", "lang_mismatch", "stub", "repeat")
DEFAULT_UTILITY_WEIGHTS = (1.2, 1.5, 0.8, -1.0, -2.0, -2.5, -2.0)


# --------------------------------------------------------------------
# CONFIG + TYPES
# --------------------------------------------------------------------
@dataclass(frozen=True)
class WorldConfig:
    n_contexts: int = 200
    pool_size: int = 10
    unsafe_fraction: float = 0.03
    languages: tuple = ("en", "zh")
    language_mix: tuple = (0.7, 0.3)
    intent_mix: tuple = (0.36, 0.41, 0.23)
    high_noise_intent: str = "content_generation"
    vocab_size: int = 80
    topic_size: int = 6
    history_len: int = 2
    latent_dim: int = 4
    noise_sd_low: float = 0.5
    noise_sd_high: float = 2.0
    position_bias: tuple = (1.0, 0.6, 0.4)
    utility_weights: tuple = DEFAULT_UTILITY_WEIGHTS
    utility_intercept: float = 0.0

    def validate(self) -> "WorldConfig":
        if self.n_contexts < 1:
            raise InvalidInputError(f"gen_world: n_contexts must be >= 1, got {self.n_contexts}")
        if self.pool_size < 3:
            raise InvalidInputError(f"gen_world: pool_size must be >= 3, got {self.pool_size}")
        if not 0.0 <= self.unsafe_fraction <= 1.0:
            raise InvalidInputError(f"gen_world: unsafe_fraction out of range [0,1]: {self.unsafe_fraction}")
        if len(self.languages) < 2 or len(self.language_mix) != len(self.languages):
            raise InvalidInputError("gen_world: need >= 2 languages with one mix weight each")
        if any(lang not in STUBS for lang in self.languages):
            raise InvalidInputError(f"gen_world: unsupported languages {self.languages}")
        if len(self.intent_mix) != len(INTENTS) or self.high_noise_intent not in INTENTS:
            raise InvalidInputError("gen_world: intent_mix must have one weight per intent")
        if self.vocab_size < self.topic_size + 10:
            raise InvalidInputError(f"gen_world: vocab_size too small: {self.vocab_size}")
        if len(self.utility_weights) != len(UTILITY_FEATURES):
            raise InvalidInputError("gen_world: utility_weights length mismatch")
        _check_bias(self.position_bias)
        if self.noise_sd_low < 0 or self.noise_sd_high < 0:
            raise InvalidInputError("gen_world: noise_sd must be >= 0")
        return self


@dataclass(frozen=True)
class DriftConfig:
    drift_step: float = 0.5


@dataclass(frozen=True)
class DedupeConfig:
    jaccard_max: float = 0.5
    cosine_max: float = 0.8
    feature_dim: int = 54
    include_refusals: bool = True


@dataclass(frozen=True)
class Context:
    id: str
    features: tuple
    lang: str
    unsafe: bool
    week: int
    intent: str
    history: tuple = ()
    topic: tuple = ()

    def __post_init__(self):
        if self.week < 0:
            raise InvalidInputError(f"Context: week must be >= 0, got {self.week}")
        if not all(np.isfinite(self.features)):
            raise InvalidInputError(f"Context {self.id}: non-finite features")

    @property
    def x(self) -> np.ndarray:
        return np.asarray(self.features, dtype=float)


@dataclass(frozen=True)
class Suggestion:
    id: str
    text: str
    lang: str
    utility: float
    kind: str = "regular"


@dataclass(frozen=True)
class UserModel:
    utility_weights: tuple
    utility_intercept: float
    noise_sd_low: float
    noise_sd_high: float
    position_bias: tuple
    high_noise_intent: str = "content_generation"
    utility_shift: float = 0.0

    def noise_sd(self, ctx: Context) -> float:
        return self.noise_sd_high if ctx.intent == self.high_noise_intent else self.noise_sd_low


@dataclass(frozen=True)
class ClickLogRecord:
    context_id: str
    suggestion_ids: tuple
    texts: tuple
    langs: tuple
    utilities: tuple
    examined: tuple
    clicked_position: int | None
    week: int
    serving_policy: str

    def __post_init__(self):
        if self.clicked_position is not None and not self.examined[self.clicked_position - 1]:
            raise InvalidInputError("ClickLogRecord: clicked position was not examined")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["examined"] = [bool(e) for e in self.examined]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ClickLogRecord":
        return cls(
            context_id=d["context_id"],
            suggestion_ids=tuple(d["suggestion_ids"]),
            texts=tuple(d["texts"]),
            langs=tuple(d["langs"]),
            utilities=tuple(float(u) for u in d["utilities"]),
            examined=tuple(bool(e) for e in d["examined"]),
            clicked_position=d["clicked_position"],
            week=int(d["week"]),
            serving_policy=d["serving_policy"],
        )


@dataclass(frozen=True)
class PreferenceTriplet:
    context_id: str
    chosen: Suggestion
    rejected: Suggestion
    week: int = 0
    source_policy: str = "base"

    def __post_init__(self):
        if self.chosen.id == self.rejected.id or self.chosen.text == self.rejected.text:
            raise InvalidInputError(f"PreferenceTriplet {self.context_id}: chosen equals rejected")
        if self.week < 0:
            raise InvalidInputError(f"PreferenceTriplet {self.context_id}: week must be >= 0")

    def to_dict(self) -> dict:
        return {
            "context_id": self.context_id,
            "chosen_id": self.chosen.id,
            "chosen_text": self.chosen.text,
            "chosen_lang": self.chosen.lang,
            "chosen_utility": self.chosen.utility,
            "rejected_id": self.rejected.id,
            "rejected_text": self.rejected.text,
            "rejected_lang": self.rejected.lang,
            "rejected_utility": self.rejected.utility,
            "week": self.week,
            "source_policy": self.source_policy,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PreferenceTriplet":
        def sugg(prefix):
            return Suggestion(
                id=d.get(f"{prefix}_id", f"{d['context_id']}-{prefix}"),
                text=d[f"{prefix}_text"],
                lang=d.get(f"{prefix}_lang", ""),
                utility=float(d.get(f"{prefix}_utility", 0.0)),
                kind="logged",
            )
        return cls(d["context_id"], sugg("chosen"), sugg("rejected"), int(d.get("week", 0)), d.get("source_policy", "base"))


@dataclass
class World:
    seed: int
    config: WorldConfig
    contexts: list
    pools: dict
    user_model: UserModel
    lexicon: dict
    latent_mean: np.ndarray
    week: int = 0
    _index: dict = field(default_factory=dict, repr=False)

    def context(self, context_id: str) -> Context:
        if not self._index:
            self._index = {c.id: c for c in self.contexts}
        try:
            return self._index[context_id]
        except KeyError:
            raise InvalidInputError(f"unknown context id {context_id!r}") from None

    def pool(self, context_id: str) -> tuple:
        return self.pools[context_id]

    def to_dict(self) -> dict:
        return {
            "seed": int(self.seed),
            "week": int(self.week),
            "config": _config_to_dict(self.config),
            "latent_mean": [float(v) for v in self.latent_mean],
            "user_model": {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self.user_model).items()},
            "lexicon": {tok: [float(v) for v in vals] for tok, vals in sorted(self.lexicon.items())},
            "contexts": [
                {**asdict(c), "features": list(c.features), "history": list(c.history), "topic": list(c.topic)}
                for c in self.contexts
            ],
            "pools": {cid: [asdict(s) for s in pool] for cid, pool in self.pools.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "World":
        cfg = WorldConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in d["config"].items()})
        um = UserModel(**{k: tuple(v) if isinstance(v, list) else v for k, v in d["user_model"].items()})
        contexts = [
            Context(
                id=c["id"], features=tuple(c["features"]), lang=c["lang"], unsafe=bool(c["unsafe"]),
                week=int(c["week"]), intent=c["intent"], history=tuple(c["history"]), topic=tuple(c["topic"]),
            )
            for c in d["contexts"]
        ]
        pools = {cid: tuple(Suggestion(**s) for s in pool) for cid, pool in d["pools"].items()}
        lexicon = {tok: tuple(vals) for tok, vals in d["lexicon"].items()}
        return cls(int(d["seed"]), cfg, contexts, pools, um, lexicon, np.asarray(d["latent_mean"], float), int(d["week"]))


def _config_to_dict(cfg) -> dict:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(cfg).items()}


def _check_bias(bias) -> None:
    if len(bias) != 3:
        raise InvalidInputError(f"position_bias must have 3 entries, got {len(bias)}")
    if any(not (0.0 < b <= 1.0) for b in bias) or any(a < b for a, b in zip(bias, bias[1:])):
        raise InvalidInputError(f"position_bias must be in (0,1] and non-increasing: {bias}")


# --------------------------------------------------------------------
# LEXICON + UTILITY
# --------------------------------------------------------------------
_CONS = "bdfgklmnprstvz"
_VOWELS = "aeiou"


def _make_vocab(rng: np.random.Generator, lang: str, size: int) -> list[str]:
    words: list[str] = []
    seen = set(STUBS[lang])
    while len(words) < size:
        if lang == "zh":
            w = "".join(chr(0x4E00 + int(rng.integers(0, 2000))) for _ in range(2))
        else:
            n_syl = int(rng.integers(2, 4))
            w = "".join(_CONS[int(rng.integers(len(_CONS)))] + _VOWELS[int(rng.integers(len(_VOWELS)))]
                        for _ in range(n_syl))
        if w not in seen:
            seen.add(w)
            words.append(w)
    return words


def _build_lexicon(seed: int, cfg: WorldConfig) -> tuple[dict, dict]:
    rng = make_rng(seed, "lexicon")
    vocab, lexicon = {}, {}
    for lang in cfg.languages:
        words = _make_vocab(rng, lang, cfg.vocab_size)
        vocab[lang] = words
        for w in words:
            q = float(rng.normal())
            emb = rng.normal(0.0, 0.5, size=cfg.latent_dim)
            lexicon[w] = (q, *map(float, emb))
    return vocab, lexicon


def _normalize(text: str) -> str:
    table = str.maketrans("", "", string.punctuation + "？！。，")
    return " ".join(text.lower().translate(table).split())


def utility_features(ctx: Context, text: str, lang: str, lexicon: dict, latent_dim: int) -> np.ndarray:
    """Ground-truth joint features behind the user's utility (see UTILITY_FEATURES)."""
    toks = text.split()
    known = [lexicon[t] for t in toks if t in lexicon]
    quality = float(np.mean([k[0] for k in known])) if known else 0.0
    topic = sum(t in ctx.topic for t in toks) / max(len(toks), 1)
    if known:
        mean_emb = np.mean([k[1:1 + latent_dim] for k in known], axis=0)
        affinity = float(np.dot(ctx.x[-latent_dim:], mean_emb))
    else:
        affinity = 0.0
    excess = max(0, len(toks) - 12) / 5.0
    mismatch = 0.5 if lang == AMBIGUOUS_LANG else float(lang != ctx.lang)
    stub = float(len(toks) <= 1)
    norm = _normalize(text)
    repeat = float(any(norm == _normalize(h) for h in ctx.history))
    return np.array([quality, topic, affinity, excess, mismatch, stub, repeat])


def utility(um: UserModel, ctx: Context, text: str, lang: str, lexicon: dict, latent_dim: int) -> float:
    psi = utility_features(ctx, text, lang, lexicon, latent_dim)
    return float(np.dot(um.utility_weights, psi) + um.utility_intercept)


# --------------------------------------------------------------------
# WORLD GENERATION
# --------------------------------------------------------------------
_POOL_SLOTS = ("base", "paraphrase", "long", "mismatch", "regular", "junk", "base", "paraphrase", "mixed")


def _phrase(rng, ctx_topic, vocab, n_words, topic_share=0.5) -> list[str]:
    out = []
    for _ in range(n_words):
        if ctx_topic and rng.random() < topic_share:
            out.append(ctx_topic[int(rng.integers(len(ctx_topic)))])
        else:
            out.append(vocab[int(rng.integers(len(vocab)))])
    return out


def _paraphrase(rng, tokens: list[str], vocab) -> list[str]:
    toks = list(tokens)
    i = int(rng.integers(len(toks)))
    toks[i] = vocab[int(rng.integers(len(vocab)))]
    if len(toks) > 2:
        j = int(rng.integers(len(toks) - 1))
        toks[j], toks[j + 1] = toks[j + 1], toks[j]
    return toks


def _build_pool(rng, ctx: Context, cfg: WorldConfig, vocab: dict, lexicon: dict, um: UserModel) -> tuple:
    own = vocab[ctx.lang]
    others = [lang for lang in cfg.languages if lang != ctx.lang]
    other = others[int(rng.integers(len(others)))]
    slots = list(_POOL_SLOTS[: cfg.pool_size]) + ["regular"] * max(0, cfg.pool_size - len(_POOL_SLOTS))
    drafts: list[tuple[str, str, str]] = []
    last_base: list[str] = []
    for kind in slots:
        lang = ctx.lang
        if kind == "base":
            toks = _phrase(rng, ctx.topic, own, int(rng.integers(5, 10)))
            last_base = toks
        elif kind == "paraphrase":
            toks = _paraphrase(rng, last_base, own)
        elif kind == "long":
            toks = _phrase(rng, ctx.topic, own, int(rng.integers(14, 20)))
        elif kind == "mismatch":
            toks = _phrase(rng, (), vocab[other], int(rng.integers(3, 9)))
            lang = other
        elif kind == "mixed":
            n = int(rng.integers(4, 9))
            toks = [(own if k % 2 == 0 else vocab[other])[int(rng.integers(cfg.vocab_size))] for k in range(n)]
            lang = AMBIGUOUS_LANG
        elif kind == "junk":
            if ctx.history and rng.random() < 0.5:
                toks = ctx.history[int(rng.integers(len(ctx.history)))].split()
                kind = "repeat"
            else:
                toks = [STUBS[ctx.lang][int(rng.integers(len(STUBS[ctx.lang])))]]
                kind = "stub"
        else:
            toks = _phrase(rng, ctx.topic, own, int(rng.integers(3, 10)))
        drafts.append((" ".join(toks), lang, kind))
    order = rng.permutation(len(drafts))
    pool = []
    for j, d in enumerate(order):
        text, lang, kind = drafts[int(d)]
        u = utility(um, ctx, text, lang, lexicon, cfg.latent_dim)
        pool.append(Suggestion(id=f"{ctx.id}-s{j:02d}", text=text, lang=lang, utility=u, kind=kind))
    return tuple(pool)


def _make_context(rng, cid: str, week: int, cfg: WorldConfig, vocab: dict, latent_mean: np.ndarray) -> Context:
    intent = INTENTS[int(rng.choice(len(INTENTS), p=_norm(cfg.intent_mix)))]
    lang = cfg.languages[int(rng.choice(len(cfg.languages), p=_norm(cfg.language_mix)))]
    unsafe = bool(rng.random() < cfg.unsafe_fraction)
    latent = rng.normal(latent_mean, 1.0)
    onehot = [float(intent == name) for name in INTENTS]
    features = tuple(onehot + [float(unsafe)] + [float(v) for v in latent])
    words = vocab[lang]
    topic_idx = rng.choice(len(words), size=cfg.topic_size, replace=False)
    topic = tuple(words[int(i)] for i in topic_idx)
    history = tuple(" ".join(_phrase(rng, topic, words, int(rng.integers(3, 7)), 0.7)) for _ in range(cfg.history_len))
    return Context(id=cid, features=features, lang=lang, unsafe=unsafe, week=week, intent=intent,
                   history=history, topic=topic)


def _norm(p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    return p / p.sum()


def _populate(seed: int, cfg: WorldConfig, week: int, latent_mean: np.ndarray, vocab: dict, lexicon: dict,
              um: UserModel) -> tuple[list, dict]:
    contexts, pools = [], {}
    prefix = "" if week == 0 else f"w{week}-"
    for i in range(cfg.n_contexts):
        rng = make_rng(seed, "context", week, i)
        ctx = _make_context(rng, f"{prefix}c{i:04d}", week, cfg, vocab, latent_mean)
        contexts.append(ctx)
        pools[ctx.id] = _build_pool(rng, ctx, cfg, vocab, lexicon, um)
    return contexts, pools


def _user_model(cfg: WorldConfig) -> UserModel:
    return UserModel(
        utility_weights=tuple(cfg.utility_weights),
        utility_intercept=cfg.utility_intercept,
        noise_sd_low=cfg.noise_sd_low,
        noise_sd_high=cfg.noise_sd_high,
        position_bias=tuple(cfg.position_bias),
        high_noise_intent=cfg.high_noise_intent,
    )


def gen_world(seed: int, cfg: WorldConfig | None = None) -> World:
    """Build a deterministic world: contexts, candidate pools and the user model."""
    cfg = (cfg or WorldConfig()).validate()
    vocab, lexicon = _build_lexicon(seed, cfg)
    um = _user_model(cfg)
    latent_mean = np.zeros(cfg.latent_dim)
    contexts, pools = _populate(seed, cfg, 0, latent_mean, vocab, lexicon, um)
    n_unsafe = sum(c.unsafe for c in contexts)
    log.debug(f"world seed={seed}: {len(contexts)} contexts, {n_unsafe} unsafe, pool size {cfg.pool_size}")
    return World(seed, cfg, contexts, pools, um, lexicon, latent_mean, 0)


def vocabulary(world: World) -> dict:
    """Rebuild the per-language vocabularies of a world."""
    vocab, _ = _build_lexicon(world.seed, world.config)
    return vocab


# --------------------------------------------------------------------
# CLICK MODEL
# --------------------------------------------------------------------
class ServingPolicy(Protocol):
    name: str

    def serve(self, world: World, ctx: Context, rng: np.random.Generator) -> tuple:
        """Return three pool indices, or REFUSE."""


class UniformServing:
    """Base serving policy: a uniformly random ordered triple from the pool."""

    name = "base"

    def serve(self, world: World, ctx: Context, rng: np.random.Generator) -> tuple:
        pool = world.pool(ctx.id)
        return tuple(int(i) for i in rng.choice(len(pool), size=3, replace=False))


def serve_and_click(um: UserModel, ctx: Context, triple: Sequence[Suggestion], seed: int,
                    serving_policy: str = "base") -> ClickLogRecord:
    """Serve one triple and simulate a top-down, first-click-wins scan.

    Position k is examined with probability position_bias[k]; an examined
    suggestion is clicked with probability sigmoid(u + shift + noise).
    All draws are taken up front so outcomes are monotone in utility.
    """
    if len(triple) != 3:
        raise InvalidInputError(f"serve_and_click: need exactly 3 suggestions, got {len(triple)}")
    rng = make_rng(seed)
    exam_u = rng.random(3)
    noise = rng.standard_normal(3)
    click_u = rng.random(3)
    bias = np.asarray(um.position_bias, dtype=float)
    util = np.array([s.utility for s in triple], dtype=float)
    examined = exam_u < bias
    with np.errstate(invalid="ignore"):
        p_click = expit(util + um.utility_shift + um.noise_sd(ctx) * noise)
    clicked = None
    for k in range(3):
        if examined[k] and click_u[k] < p_click[k]:
            clicked = k + 1
            break
    return ClickLogRecord(
        context_id=ctx.id,
        suggestion_ids=tuple(s.id for s in triple),
        texts=tuple(s.text for s in triple),
        langs=tuple(s.lang for s in triple),
        utilities=tuple(float(u) for u in util),
        examined=tuple(bool(e) for e in examined),
        clicked_position=clicked,
        week=ctx.week,
        serving_policy=serving_policy,
    )


_GH_NODES, _GH_WEIGHTS = np.polynomial.hermite_e.hermegauss(48)


def click_probability(u: float, noise_sd: float) -> float:
    """E[sigmoid(u + noise_sd * eps)], eps ~ N(0,1), by Gauss-Hermite quadrature."""
    if noise_sd == 0.0 or not np.isfinite(u):
        return float(expit(u))
    vals = expit(u + noise_sd * _GH_NODES)
    return float(np.dot(_GH_WEIGHTS, vals) / np.sqrt(2.0 * np.pi))


def click_distribution(um: UserModel, ctx: Context, triple: Sequence[Suggestion]) -> np.ndarray:
    """Exact probabilities of a click at positions 1..3 (enumerated scan tree)."""
    if len(triple) != 3:
        raise InvalidInputError(f"click_distribution: need exactly 3 suggestions, got {len(triple)}")
    noise = um.noise_sd(ctx)
    out = np.zeros(3)
    survive = 1.0
    for k, s in enumerate(triple):
        p = um.position_bias[k] * click_probability(s.utility + um.utility_shift, noise)
        out[k] = survive * p
        survive *= 1.0 - p
    return out


def simulate_logs(world: World, n_impressions: int, seed: int, serving: ServingPolicy | None = None,
                  serving_policy: str | None = None) -> list[ClickLogRecord]:
    """Serve ``n_impressions`` impressions round-robin over the world's contexts.

    Impression i uses its own derived streams for the serving choice and
    the click outcome. Refused impressions produce no record.
    """
    serving = serving or UniformServing()
    label = serving_policy or serving.name
    records = []
    n_ctx = len(world.contexts)
    for i in range(int(n_impressions)):
        ctx = world.contexts[i % n_ctx]
        action = serving.serve(world, ctx, make_rng(seed, "serve", i))
        if not action:
            continue
        pool = world.pool(ctx.id)
        triple = [pool[j] for j in action]
        records.append(serve_and_click(world.user_model, ctx, triple, derive_seed(seed, "click", i), label))
    return records


# --------------------------------------------------------------------
# CURATION
# --------------------------------------------------------------------
def _logged(rec: ClickLogRecord, k: int) -> Suggestion:
    return Suggestion(id=rec.suggestion_ids[k], text=rec.texts[k], lang=rec.langs[k],
                      utility=float(rec.utilities[k]), kind="logged")


def curate_triplets(logs: Iterable[ClickLogRecord], mode: str = "both") -> tuple[list[PreferenceTriplet], Counter]:
    """Turn click logs into (chosen, rejected) triplets, skipping first-position clicks.

    A click at position 2 yields (pos2 > pos1). A click at position 3 yields
    (pos3 > pos1) and (pos3 > pos2) in ``both`` mode, only (pos3 > pos2) in
    ``single`` mode. Returns the triplets and drop counts by reason.
    """
    if mode not in ("both", "single"):
        raise InvalidInputError(f"curate_triplets: unknown mode {mode!r}")
    out: list[PreferenceTriplet] = []
    dropped: Counter = Counter()
    for rec in logs:
        if rec.clicked_position is None:
            dropped["no_click"] += 1
            continue
        if rec.clicked_position == 1:
            dropped["first_position"] += 1
            continue
        k = rec.clicked_position - 1
        negatives = range(k) if mode == "both" else [k - 1]
        source = "base" if rec.serving_policy == "base" else "rft_shifted"
        for j in negatives:
            if rec.texts[j] == rec.texts[k]:
                dropped["duplicate_text"] += 1
                continue
            out.append(PreferenceTriplet(rec.context_id, _logged(rec, k), _logged(rec, j), rec.week, source))
    return out, dropped


# --------------------------------------------------------------------
# DRIFT
# --------------------------------------------------------------------
def temporal_shift(world: World, week: int, drift_cfg: DriftConfig | None = None) -> World:
    """Fresh contexts for ``week`` with the latent mean moved by week * drift_step."""
    drift_cfg = drift_cfg or DriftConfig()
    if week < 1:
        raise InvalidInputError(f"temporal_shift: week must be >= 1, got {week}")
    vocab, lexicon = _build_lexicon(world.seed, world.config)
    latent_mean = world.latent_mean + week * drift_cfg.drift_step
    contexts, pools = _populate(world.seed, world.config, week, latent_mean, vocab, lexicon, world.user_model)
    return World(world.seed, world.config, contexts, pools, world.user_model, lexicon, latent_mean, week)


def policy_shift(world: World, alt_policy: ServingPolicy, n: int, seed: int) -> list[PreferenceTriplet]:
    """Preference test set whose served suggestions come from ``alt_policy``."""
    logs = simulate_logs(world, n, seed, serving=alt_policy,
                         serving_policy="base" if alt_policy.name == "base" else "rft_shifted")
    triplets, _ = curate_triplets(logs)
    return triplets


# --------------------------------------------------------------------
# SFT DATA ASSEMBLY
# --------------------------------------------------------------------
def clean_candidates(ctx: Context, pool: Sequence[Suggestion]) -> list[int]:
    """Single-suggestion cleaning: drop over-long, wrong-language and meaningless candidates."""
    keep = []
    hist = {_normalize(h) for h in ctx.history}
    for i, s in enumerate(pool):
        if len(s.text) > MAX_CHARS or s.lang != ctx.lang:
            continue
        if word_count(s.text) <= 1 or _normalize(s.text) in hist:
            continue
        keep.append(i)
    return keep


def dedupe_ranked(texts: Sequence[str], order: Sequence[int], cfg: DedupeConfig, limit: int = 3) -> list[int]:
    """Greedy pass over ``order`` keeping items not redundant with any already kept."""
    vecs = text_vectors(list(texts), cfg.feature_dim)
    kept: list[int] = []
    for i in order:
        if any(texts[i] == texts[j] for j in kept):
            continue
        if any(jaccard(texts[i], texts[j]) > cfg.jaccard_max or cosine(vecs[i], vecs[j]) > cfg.cosine_max
               for j in kept):
            continue
        kept.append(i)
        if len(kept) == limit:
            break
    return kept


@dataclass(frozen=True)
class SftExample:
    context_id: str
    target: tuple


def assemble_sft_data(world: World, dedupe_cfg: DedupeConfig | None = None,
                      teacher_scores: dict | None = None) -> tuple[list[SftExample], int]:
    """Rank cleaned candidates by teacher score, drop redundant ones, group the top 3.

    Ground-truth utility stands in for the teacher when ``teacher_scores`` is
    None. Unsafe contexts get a refusal target. Returns the examples and the
    number of contexts dropped for having fewer than 3 survivors.
    """
    cfg = dedupe_cfg or DedupeConfig()
    out, dropped = [], 0
    for ctx in world.contexts:
        pool = world.pool(ctx.id)
        if ctx.unsafe:
            if cfg.include_refusals:
                out.append(SftExample(ctx.id, REFUSE))
            continue
        scores = np.asarray(teacher_scores[ctx.id] if teacher_scores else [s.utility for s in pool], dtype=float)
        cand = clean_candidates(ctx, pool)
        order = sorted(cand, key=lambda i: (-scores[i], i))
        kept = dedupe_ranked([s.text for s in pool], order, cfg)
        if len(kept) < 3:
            dropped += 1
            continue
        out.append(SftExample(ctx.id, tuple(kept)))
    if dropped:
        log.warning(f"assemble_sft_data: dropped {dropped} contexts with < 3 unique candidates")
    return out, dropped


def with_utility_shift(world: World, shift: float) -> World:
    """Copy of ``world`` whose users click as if every utility were raised by ``shift``."""
    um = replace(world.user_model, utility_shift=world.user_model.utility_shift + shift)
    return replace(world, user_model=um, _index={})
