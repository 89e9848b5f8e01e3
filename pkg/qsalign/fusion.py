"""
Reward fusion.

Stage one fits component weights by L2-regularised logistic regression on
preference deltas (r_w - r_l): minimise -mean log sigmoid(w . delta) + lam |w|^2.
Stage two refines them with a Pareto-guided loop that probes short RL runs
and reweights components whose reward trends downward or that dominate the
fused improvement.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import pandas as pd
from scipy.special import expit, log_expit
from sklearn.linear_model import LogisticRegression

from .textrewards import COMPONENTS
from .utils.errors import ConfigError, InvalidInputError, ProbeError
from .utils.logger import get_logger

log = get_logger(__name__)

GRAD_TOL = 1e-6


@dataclass(frozen=True)
class FusionWeights:
    w: tuple
    lambda_l2: float = 0.0
    provenance: str = "initial_lr"
    names: tuple = COMPONENTS

    def __post_init__(self):
        if len(self.w) != len(self.names):
            raise ConfigError(f"FusionWeights: {len(self.w)} weights for {len(self.names)} components")
        if not np.all(np.isfinite(self.w)):
            raise ConfigError("FusionWeights: non-finite weight")
        if self.provenance not in ("initial_lr", "pareto_tuned"):
            raise ConfigError(f"FusionWeights: unknown provenance {self.provenance!r}")

    @property
    def vector(self) -> np.ndarray:
        return np.asarray(self.w, dtype=float)

    def to_dict(self) -> dict:
        return {"weights": dict(zip(self.names, map(float, self.w))), "names": list(self.names),
                "lambda_l2": self.lambda_l2, "provenance": self.provenance}

    @classmethod
    def from_dict(cls, d: dict) -> "FusionWeights":
        names = tuple(d["names"])
        return cls(tuple(float(d["weights"][n]) for n in names), float(d["lambda_l2"]), d["provenance"], names)


@dataclass(frozen=True)
class FusionConfig:
    lambda_l2: float = 0.01
    lr: float = 0.5
    epochs: int = 200
    fitted_mass: float = 1.0
    priors: tuple = (("format", 0.25), ("diversity", 0.25), ("safety", 1.0))
    sign_constraints: tuple = (("rm_sigma", -1.0),)
    sign_fallback: tuple = (("rm_sigma", -0.2),)


# --------------------------------------------------------------------
# STAGE ONE: LOGISTIC REGRESSION
# --------------------------------------------------------------------
def fusion_objective(w: np.ndarray, D: np.ndarray, lambda_l2: float) -> tuple[float, np.ndarray, np.ndarray]:
    """Loss, gradient and Hessian of the fusion objective."""
    z = D @ w
    n = len(D)
    loss = -float(np.mean(log_expit(z))) + lambda_l2 * float(w @ w)
    s = expit(-z)
    grad = -(D.T @ s) / n + 2.0 * lambda_l2 * w
    H = (D.T * (s * (1.0 - s))) @ D / n + 2.0 * lambda_l2 * np.eye(len(w))
    return loss, grad, H


def fit_fusion_weights(deltas, lambda_l2: float, lr: float = 0.5, epochs: int = 200, seed: int = 0,
                       names: Sequence[str] | None = None) -> FusionWeights:
    """Logistic-regression weights over preference deltas.

    scikit-learn fits the mirrored problem (every delta with label 1, its
    negation with label 0, no intercept), which has the same optimum; Newton
    steps with backtracking then bring the gradient norm under 1e-6. ``lr``
    caps the first-order fallback step when the Hessian is singular.
    """
    D = np.atleast_2d(np.asarray(deltas, dtype=float))
    if D.size == 0 or len(D) == 0:
        raise InvalidInputError("fit_fusion_weights: empty data")
    if lambda_l2 < 0:
        raise InvalidInputError(f"fit_fusion_weights: lambda_l2 must be >= 0, got {lambda_l2}")
    if not np.all(np.isfinite(D)):
        raise InvalidInputError("fit_fusion_weights: non-finite delta")
    n, k = D.shape
    names = tuple(names) if names is not None else tuple(f"c{j}" for j in range(k))

    X = np.vstack([D, -D])
    y = np.r_[np.ones(n), np.zeros(n)]
    # mirrored sklearn objective: C * sum logloss + |w|^2 / 2  ==  (2nC) * ours when C = 1/(4 lam n)
    C = 1.0 / (4.0 * lambda_l2 * n) if lambda_l2 > 0 else 1e12
    if np.any(D != 0):
        clf = LogisticRegression(C=C, fit_intercept=False, solver="lbfgs", max_iter=max(epochs, 100), tol=1e-10,
                                 random_state=seed)
        clf.fit(X, y)
        w = clf.coef_.ravel().astype(float)
    else:
        w = np.zeros(k)

    for _ in range(max(epochs, 1)):
        loss, grad, H = fusion_objective(w, D, lambda_l2)
        if np.linalg.norm(grad) <= GRAD_TOL:
            break
        try:
            step = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            step = lr * grad
        t = 1.0
        while t > 1e-8:
            cand = w - t * step
            if fusion_objective(cand, D, lambda_l2)[0] <= loss:
                w = cand
                break
            t *= 0.5
        else:
            break
    return FusionWeights(tuple(float(x) for x in w), float(lambda_l2), "initial_lr", names)


def assemble_weights(fitted: FusionWeights, cfg: FusionConfig, deltas=None) -> FusionWeights:
    """Full COMPONENTS-ordered weight vector for the composite reward.

    Fitted weights are rescaled to an L1 mass of ``cfg.fitted_mass``;
    components with no variation in ``deltas`` and those violating their
    sign constraint take their configured prior instead.
    """
    priors = dict(cfg.priors)
    signs = dict(cfg.sign_constraints)
    fallback = dict(cfg.sign_fallback)
    fitted_map = dict(zip(fitted.names, fitted.vector))
    flat = set()
    if deltas is not None:
        D = np.atleast_2d(np.asarray(deltas, dtype=float))
        flat = {fitted.names[j] for j in range(D.shape[1]) if np.ptp(D[:, j]) == 0.0}

    free = [c for c in COMPONENTS if c in fitted_map and c not in flat and c not in priors]
    mass = sum(abs(fitted_map[c]) for c in free)
    scale = cfg.fitted_mass / mass if mass > 0 else 0.0
    out = []
    for c in COMPONENTS:
        if c in free:
            val = fitted_map[c] * scale
            if c in signs and np.sign(val) != np.sign(signs[c]):
                log.warning(f"fusion: weight for {c} has the wrong sign ({val:+.4f}); using {fallback.get(c, 0.0)}")
                val = fallback.get(c, 0.0)
        else:
            val = priors.get(c, fallback.get(c, 0.0))
        out.append(float(val))
    return FusionWeights(tuple(out), fitted.lambda_l2, "initial_lr", COMPONENTS)


# --------------------------------------------------------------------
# STAGE TWO: PARETO-GUIDED TUNING
# --------------------------------------------------------------------
@dataclass(frozen=True)
class ParetoConfig:
    probe_steps: int = 60
    window: int = 50
    alpha_up: float = 1.5
    alpha_down: float = 0.75
    dominance_share: float = 0.6
    max_rounds: int = 10
    trend_epsilon: float = 1e-3
    components: tuple = ()

    def validate(self) -> "ParetoConfig":
        if self.probe_steps < 2 or self.window < 2 or self.max_rounds < 1:
            raise ConfigError("ParetoConfig: probe_steps, window >= 2 and max_rounds >= 1 required")
        if self.alpha_up <= 1.0:
            raise ConfigError(f"ParetoConfig: alpha_up must be > 1, got {self.alpha_up}")
        if not 0.0 < self.alpha_down < 1.0:
            raise ConfigError(f"ParetoConfig: alpha_down out of range (0,1): {self.alpha_down}")
        if not 0.0 < self.dominance_share < 1.0:
            raise ConfigError(f"ParetoConfig: dominance_share out of range (0,1): {self.dominance_share}")
        if self.trend_epsilon < 0:
            raise ConfigError(f"ParetoConfig: trend_epsilon must be >= 0, got {self.trend_epsilon}")
        return self


Probe = Callable[[FusionWeights, int], pd.DataFrame]


def trend_slopes(trace: pd.DataFrame, columns: Sequence[str], window: int) -> np.ndarray:
    """Least-squares slope of each column over the last ``window`` rows."""
    tail = trace[list(columns)].tail(window)
    if len(tail) < 2:
        return np.zeros(len(columns))
    x = np.arange(len(tail), dtype=float)
    return np.polyfit(x, tail.to_numpy(dtype=float), 1)[0].reshape(-1)


@dataclass
class ParetoResult:
    weights: FusionWeights
    converged: bool
    log: pd.DataFrame = field(default_factory=pd.DataFrame)


def pareto_tune(w0: FusionWeights, probe: Probe, cfg: ParetoConfig | None = None) -> ParetoResult:
    """Multiplicative reweighting until no tuned component trends down.

    Each round calls ``probe(weights, round_index)``, which returns one row
    per probe step with a column per component mean. Signs never change.
    """
    cfg = (cfg or ParetoConfig()).validate()
    names = list(cfg.components) or list(w0.names)
    idx = [w0.names.index(c) for c in names]
    w = w0.vector.copy()
    rows = []
    converged = False
    for r in range(cfg.max_rounds):
        weights = FusionWeights(tuple(map(float, w)), w0.lambda_l2, w0.provenance if r == 0 else "pareto_tuned",
                                w0.names)
        try:
            trace = probe(weights, r)
        except Exception as e:
            raise ProbeError(r, e) from e
        missing = [c for c in names if c not in trace.columns]
        if missing:
            raise ProbeError(r, f"probe trace lacks columns {missing}")
        slopes = trend_slopes(trace, names, cfg.window)
        row = {"round": r, **{f"w_{c}": float(w[j]) for c, j in zip(names, idx)},
               **{f"slope_{c}": float(s) for c, s in zip(names, slopes)}}
        if np.all(slopes >= -cfg.trend_epsilon):
            converged = True
            row["action"] = "converged"
            rows.append(row)
            log.info(f"pareto round {r}: all slopes >= -{cfg.trend_epsilon}, done")
            break
        contrib = np.array([w[j] * s for j, s in zip(idx, slopes)])
        total = float(np.sum(contrib))
        actions = []
        for k, j in enumerate(idx):
            if slopes[k] < -cfg.trend_epsilon:
                w[j] *= cfg.alpha_up
                actions.append(f"up:{names[k]}")
            elif total > 0 and contrib[k] > cfg.dominance_share * total:
                w[j] *= cfg.alpha_down
                actions.append(f"down:{names[k]}")
        row["action"] = " ".join(actions)
        rows.append(row)
        log.info(f"pareto round {r}: {row['action']}")
    provenance = w0.provenance if converged and len(rows) == 1 else "pareto_tuned"
    final = FusionWeights(tuple(map(float, w)), w0.lambda_l2, provenance, w0.names)
    if not converged:
        log.warning(f"pareto_tune: no convergence after {cfg.max_rounds} rounds")
    return ParetoResult(final, converged, pd.DataFrame(rows))


def separation_rate(w: np.ndarray, deltas) -> float:
    """Fraction of deltas scored positive under weights ``w``."""
    D = np.atleast_2d(np.asarray(deltas, dtype=float))
    return float(np.mean(D @ np.asarray(w, dtype=float) > 0))
