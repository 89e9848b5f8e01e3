"""
Feature extraction for (context, suggestion) pairs.

A feature vector of dimension D is laid out as

    [ context block | word count / 12 | language match | hashed 1-2 grams ]

The hashed block uses scikit-learn's HashingVectorizer (MurmurHash3, no
alternating sign, l2-normalised) so vectors are identical across platforms.
"""
from __future__ import annotations

from functools import lru_cache
from typing import TYPE_CHECKING, Sequence

import numpy as np
from sklearn.feature_extraction.text import HashingVectorizer

from .utils.errors import InvalidInputError
from .utils.feature_cache import feature_cache

if TYPE_CHECKING:
    from .clicksim import Context, Suggestion

DEFAULT_FEATURE_DIM = 64
WORD_LIMIT = 12
AMBIGUOUS_LANG = "mixed"


# --------------------------------------------------------------------
# TEXT HELPERS
# --------------------------------------------------------------------
def tokenize(text: str) -> list[str]:
    """Whitespace tokens; a word is any whitespace-separated run."""
    return text.split()


def word_count(text: str) -> int:
    return len(text.split())


def jaccard(a: str, b: str) -> float:
    """1-gram Jaccard similarity of two texts' token sets."""
    sa, sb = set(a.split()), set(b.split())
    union = sa | sb
    if not union:
        return 1.0
    return len(sa & sb) / len(union)


def _ngrams(text: str) -> list[str]:
    toks = text.split()
    return toks + [f"{x} {y}" for x, y in zip(toks, toks[1:])]


@lru_cache(maxsize=8)
def _vectorizer(n_features: int) -> HashingVectorizer:
    return HashingVectorizer(
        n_features=n_features,
        analyzer=_ngrams,
        alternate_sign=False,
        norm="l2",
    )


def text_vectors(texts: Sequence[str], n_features: int) -> np.ndarray:
    """Dense hashed 1-2 gram vectors, one row per text."""
    return _vectorizer(n_features).transform(list(texts)).toarray()


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    nu, nv = float(np.linalg.norm(u)), float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(np.dot(u, v) / (nu * nv))


def language_match(ctx_lang: str, sugg_lang: str) -> float:
    if sugg_lang == AMBIGUOUS_LANG:
        return 0.5
    return 1.0 if sugg_lang == ctx_lang else 0.0


# --------------------------------------------------------------------
# FEATURE VECTORS
# --------------------------------------------------------------------
def hashed_dim(ctx: "Context", dim: int) -> int:
    k = dim - len(ctx.features) - 2
    if k < 1:
        raise InvalidInputError(f"featurize: dimension {dim} too small for context block of {len(ctx.features)}")
    return k


def _key(ctx: "Context", sugg: "Suggestion", dim: int):
    return (ctx.id, ctx.features, ctx.lang, sugg.text, sugg.lang, dim)


def featurize(ctx: "Context", sugg: "Suggestion", dim: int = DEFAULT_FEATURE_DIM) -> np.ndarray:
    """Deterministic D-dimensional feature vector for one (context, suggestion)."""
    return featurize_many(ctx, [sugg], dim)[0]


def featurize_many(ctx: "Context", suggestions: Sequence["Suggestion"], dim: int = DEFAULT_FEATURE_DIM) -> np.ndarray:
    """Stacked feature vectors for several suggestions under one context."""
    k = hashed_dim(ctx, dim)
    out = np.empty((len(suggestions), dim), dtype=float)
    todo = []
    for i, s in enumerate(suggestions):
        if not s.text.strip():
            raise InvalidInputError(f"featurize: empty suggestion text (id={s.id})")
        cached = feature_cache.get(_key(ctx, s, dim))
        if cached is None:
            todo.append(i)
        else:
            out[i] = cached
    if todo:
        hashed = text_vectors([suggestions[i].text for i in todo], k)
        block = np.asarray(ctx.features, dtype=float)
        nb = len(block)
        for row, i in zip(hashed, todo):
            s = suggestions[i]
            vec = np.empty(dim, dtype=float)
            vec[:nb] = block
            vec[nb] = word_count(s.text) / WORD_LIMIT
            vec[nb + 1] = language_match(ctx.lang, s.lang)
            vec[nb + 2:] = row
            vec.setflags(write=False)
            feature_cache.set(_key(ctx, s, dim), vec)
            out[i] = vec
    return out
