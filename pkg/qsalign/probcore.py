"""
Gaussian preference kernel.

Each suggestion's preference is modelled as N(mu, sigma^2). This module holds
the pure math on such scores: the probability that one beats another
(closed form and Monte-Carlo), Bhattacharyya overlap, the uncertainty lower
bound used as a confidence score, and the variance regularisers.

All functions are pure; sigma values are floored at SIGMA_FLOOR.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy.special import expit

from .utils.errors import InvalidInputError
from .utils.rng import make_rng

SIGMA_FLOOR = 1e-6
PI_OVER_8 = math.pi / 8.0


@dataclass(frozen=True)
class GaussianScore:
    mu: float
    sigma: float

    def __post_init__(self):
        if not (math.isfinite(self.mu) and math.isfinite(self.sigma)):
            raise InvalidInputError(f"GaussianScore: non-finite value (mu={self.mu}, sigma={self.sigma})")
        if self.sigma <= 0:
            raise InvalidInputError(f"GaussianScore: sigma must be > 0, got {self.sigma}")

    @property
    def s(self) -> float:
        """sigma with the numerical floor applied"""
        return max(self.sigma, SIGMA_FLOOR)


@dataclass(frozen=True)
class PrefProbEstimate:
    value: float
    method: Literal["closed_form", "monte_carlo"]
    n_samples: int = 0
    seed: int | None = None

    def __float__(self) -> float:
        return self.value


def _check_sigma(sigma: float, op: str) -> float:
    if not math.isfinite(sigma) or sigma <= 0:
        raise InvalidInputError(f"{op}: sigma must be finite and > 0, got {sigma}")
    return max(sigma, SIGMA_FLOOR)


def _check(score, op: str) -> GaussianScore:
    if not isinstance(score, GaussianScore):
        raise InvalidInputError(f"{op}: expected GaussianScore, got {type(score).__name__}")
    return score


# --------------------------------------------------------------------
# PREFERENCE PROBABILITY
# --------------------------------------------------------------------
def pref_prob_closed(w: GaussianScore, l: GaussianScore) -> PrefProbEstimate:
    """sigmoid((mu_w - mu_l) / sqrt(1 + pi/8 (sigma_w^2 + sigma_l^2)))"""
    w, l = _check(w, "pref_prob_closed"), _check(l, "pref_prob_closed")
    scale = math.sqrt(1.0 + PI_OVER_8 * (w.s ** 2 + l.s ** 2))
    value = float(expit((w.mu - l.mu) / scale))
    return PrefProbEstimate(value=value, method="closed_form")


def pref_prob_mc(w: GaussianScore, l: GaussianScore, n: int, seed: int) -> PrefProbEstimate:
    """Monte-Carlo estimate of E[sigmoid(z)], z ~ N(mu_w - mu_l, sigma_w^2 + sigma_l^2).

    Samples come from a PCG64 generator seeded with ``seed``.
    """
    w, l = _check(w, "pref_prob_mc"), _check(l, "pref_prob_mc")
    if int(n) < 1:
        raise InvalidInputError(f"pref_prob_mc: n must be >= 1, got {n}")
    rng = make_rng(seed)
    z = rng.normal(w.mu - l.mu, math.sqrt(w.s ** 2 + l.s ** 2), size=int(n))
    value = float(np.mean(expit(z)))
    return PrefProbEstimate(value=value, method="monte_carlo", n_samples=int(n), seed=int(seed))


# --------------------------------------------------------------------
# OVERLAP AND CONFIDENCE
# --------------------------------------------------------------------
def bhattacharyya_coeff(a: GaussianScore, b: GaussianScore) -> float:
    a, b = _check(a, "bhattacharyya_coeff"), _check(b, "bhattacharyya_coeff")
    var_sum = a.s ** 2 + b.s ** 2
    return math.sqrt(2.0 * a.s * b.s / var_sum) * math.exp(-((a.mu - b.mu) ** 2) / (4.0 * var_sum))


def bhattacharyya_dist(a: GaussianScore, b: GaussianScore) -> float:
    """-ln BC, evaluated in log space so far-apart pairs stay finite."""
    a, b = _check(a, "bhattacharyya_dist"), _check(b, "bhattacharyya_dist")
    var_sum = a.s ** 2 + b.s ** 2
    spread = 0.5 * math.log(var_sum / (2.0 * a.s * b.s))
    return max(spread, 0.0) + (a.mu - b.mu) ** 2 / (4.0 * var_sum)


def ulb(w: GaussianScore, l: GaussianScore) -> float:
    """Uncertainty lower bound (mu_w - mu_l)^2 / (4 (sigma_w + sigma_l)^2); never exceeds D_B."""
    w, l = _check(w, "ulb"), _check(l, "ulb")
    return (w.mu - l.mu) ** 2 / (4.0 * (w.s + l.s) ** 2)


def ulb_array(mu_w, sigma_w, mu_l, sigma_l) -> np.ndarray:
    """Vectorised ulb for model outputs."""
    sw = np.maximum(np.asarray(sigma_w, dtype=float), SIGMA_FLOOR)
    sl = np.maximum(np.asarray(sigma_l, dtype=float), SIGMA_FLOOR)
    return (np.asarray(mu_w, dtype=float) - np.asarray(mu_l, dtype=float)) ** 2 / (4.0 * (sw + sl) ** 2)


# --------------------------------------------------------------------
# VARIANCE REGULARISERS
# --------------------------------------------------------------------
def variance_penalty(sigma: float) -> float:
    """sigma^2 - 2 ln sigma, minimised at sigma = 1."""
    s = _check_sigma(sigma, "variance_penalty")
    return s * s - 2.0 * math.log(s)


def kl_gauss_to_unit(sigma: float) -> float:
    """KL(N(mu, sigma^2) || N(mu, 1))."""
    s = _check_sigma(sigma, "kl_gauss_to_unit")
    return 0.5 * (s * s - 1.0 - 2.0 * math.log(s))
