"""
Reward models over (context, suggestion) features.

Three heads share one scorer body (two tanh hidden layers of width 32):

    scalar      Bradley-Terry score r(s; h)
    pair_logit  antisymmetrised pair scorer, p = sigmoid(g(h,s1,s2) - g(h,s2,s1))
    gaussian    (mu, sigma) with sigma = softplus(raw) + 1e-3

Losses come with exact analytic gradients; ``train`` runs Adam with global
gradient-norm clipping.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Literal, Sequence

import numpy as np
from scipy.special import expit, log_expit

from .features import DEFAULT_FEATURE_DIM, featurize_many
from .probcore import PI_OVER_8, GaussianScore, ulb_array
from .utils import io
from .utils.errors import ConfigError, DataError, InvalidInputError, NumericError
from .utils.logger import get_logger
from .utils.rng import make_rng

log = get_logger(__name__)

HIDDEN = 32
SIGMA_OFFSET = 1e-3
HEADS = ("scalar", "pair_logit", "gaussian")
KIND_TO_HEAD = {"bt": "scalar", "paired": "pair_logit", "garm": "gaussian"}
LossKind = Literal["bt", "paired", "garm"]


def softplus(x):
    return np.logaddexp(0.0, x)


# --------------------------------------------------------------------
# PARAMETERS
# --------------------------------------------------------------------
@dataclass
class ScorerParams:
    head: str
    in_dim: int
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    W3: np.ndarray
    b3: np.ndarray

    NAMES = ("W1", "b1", "W2", "b2", "W3", "b3")

    def __post_init__(self):
        if self.head not in HEADS:
            raise ConfigError(f"ScorerParams: unknown head {self.head!r}")
        out = 2 if self.head == "gaussian" else 1
        if self.W1.shape[1] != self.in_dim or self.W3.shape[0] != out:
            raise ConfigError(f"ScorerParams: shapes do not match head {self.head!r}")

    @property
    def hidden(self) -> int:
        return self.W1.shape[0]

    def arrays(self) -> list[np.ndarray]:
        return [getattr(self, n) for n in self.NAMES]

    def to_vector(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def from_vector(self, vec: np.ndarray) -> "ScorerParams":
        parts, i = {}, 0
        for name, a in zip(self.NAMES, self.arrays()):
            parts[name] = np.array(vec[i:i + a.size], dtype=float).reshape(a.shape)
            i += a.size
        return ScorerParams(self.head, self.in_dim, **parts)

    def copy(self) -> "ScorerParams":
        return self.from_vector(self.to_vector())

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())


def init_params(head: str, in_dim: int, seed: int, hidden: int = HIDDEN, zero: bool = False) -> ScorerParams:
    """Scaled-normal initialisation; the Gaussian head starts with sigma close to 1."""
    if head not in HEADS:
        raise ConfigError(f"init_params: unknown head {head!r}")
    out = 2 if head == "gaussian" else 1
    shapes = [(hidden, in_dim), (hidden,), (hidden, hidden), (hidden,), (out, hidden), (out,)]
    if zero:
        return ScorerParams(head, in_dim, *[np.zeros(s) for s in shapes])
    rng = make_rng(seed, "rm-init", head)
    W1 = rng.normal(0.0, 1.0 / math.sqrt(in_dim), size=shapes[0])
    W2 = rng.normal(0.0, 1.0 / math.sqrt(hidden), size=shapes[2])
    W3 = rng.normal(0.0, 0.1 / math.sqrt(hidden), size=shapes[4])
    b3 = np.zeros(out)
    if head == "gaussian":
        b3[1] = math.log(math.expm1(1.0 - SIGMA_OFFSET))
    return ScorerParams(head, in_dim, W1, np.zeros(hidden), W2, np.zeros(hidden), W3, b3)


def _require(p: ScorerParams, head: str, op: str) -> None:
    if p.head != head:
        raise ConfigError(f"{op}: expected head {head!r}, got {p.head!r}")


# --------------------------------------------------------------------
# FORWARD / BACKWARD
# --------------------------------------------------------------------
def _forward(p: ScorerParams, X: np.ndarray):
    h1 = np.tanh(X @ p.W1.T + p.b1)
    h2 = np.tanh(h1 @ p.W2.T + p.b2)
    out = h2 @ p.W3.T + p.b3
    return out, (X, h1, h2)


def _backward(p: ScorerParams, cache, dout: np.ndarray) -> list[np.ndarray]:
    X, h1, h2 = cache
    dW3 = dout.T @ h2
    db3 = dout.sum(axis=0)
    dz2 = (dout @ p.W3) * (1.0 - h2 ** 2)
    dW2 = dz2.T @ h1
    db2 = dz2.sum(axis=0)
    dz1 = (dz2 @ p.W2) * (1.0 - h1 ** 2)
    dW1 = dz1.T @ X
    db1 = dz1.sum(axis=0)
    return [dW1, db1, dW2, db2, dW3, db3]


def _add(a: list, b: list) -> list:
    return [x + y for x, y in zip(a, b)]


def _flat(grads: list) -> np.ndarray:
    return np.concatenate([g.ravel() for g in grads])


# --------------------------------------------------------------------
# DATA
# --------------------------------------------------------------------
@dataclass
class PairBatch:
    """Features of (chosen, rejected) pairs plus each pair's context block."""
    Xw: np.ndarray
    Xl: np.ndarray
    C: np.ndarray
    context_ids: tuple = ()
    fingerprint: str = ""

    def __post_init__(self):
        if self.Xw.shape != self.Xl.shape or len(self.C) != len(self.Xw):
            raise InvalidInputError("PairBatch: mismatched array shapes")

    def __len__(self) -> int:
        return len(self.Xw)

    def take(self, idx) -> "PairBatch":
        ids = tuple(self.context_ids[i] for i in idx) if self.context_ids else ()
        return PairBatch(self.Xw[idx], self.Xl[idx], self.C[idx], ids, self.fingerprint)

    def mirrored(self) -> "PairBatch":
        """Each pair in both orders; labels carry no information about order."""
        return PairBatch(np.vstack([self.Xw, self.Xl]), np.vstack([self.Xl, self.Xw]), np.vstack([self.C, self.C]),
                         self.context_ids * 2, self.fingerprint)


def build_pair_batch(world, triplets: Sequence, dim: int = DEFAULT_FEATURE_DIM) -> PairBatch:
    """Featurize triplets whose contexts live in ``world``."""
    if not triplets:
        raise InvalidInputError("build_pair_batch: no triplets")
    Xw, Xl, C = [], [], []
    for t in triplets:
        ctx = world.context(t.context_id)
        fw, fl = featurize_many(ctx, [t.chosen, t.rejected], dim)
        Xw.append(fw)
        Xl.append(fl)
        C.append(ctx.x)
    fp = io.payload_fingerprint([t.to_dict() for t in triplets])
    return PairBatch(np.vstack(Xw), np.vstack(Xl), np.vstack(C), tuple(t.context_id for t in triplets), fp)


def pair_input(f_ctx: np.ndarray, f1: np.ndarray, f2: np.ndarray) -> np.ndarray:
    return np.concatenate([np.atleast_2d(f_ctx), np.atleast_2d(f1), np.atleast_2d(f2)], axis=1)


def pair_in_dim(ctx_dim: int, dim: int) -> int:
    return ctx_dim + 2 * dim


# --------------------------------------------------------------------
# SCORES
# --------------------------------------------------------------------
def btrm_score(p: ScorerParams, f: np.ndarray) -> float:
    _require(p, "scalar", "btrm_score")
    return float(_forward(p, np.atleast_2d(f))[0][0, 0])


def btrm_scores(p: ScorerParams, X: np.ndarray) -> np.ndarray:
    _require(p, "scalar", "btrm_scores")
    return _forward(p, X)[0][:, 0]


def pair_logits(p: ScorerParams, C: np.ndarray, F1: np.ndarray, F2: np.ndarray) -> np.ndarray:
    """g(h,s1,s2) - g(h,s2,s1), row-wise."""
    _require(p, "pair_logit", "pairedrm_prob")
    a = _forward(p, pair_input(C, F1, F2))[0][:, 0]
    b = _forward(p, pair_input(C, F2, F1))[0][:, 0]
    return a - b


def pairedrm_prob(p: ScorerParams, f_ctx: np.ndarray, f1: np.ndarray, f2: np.ndarray) -> float:
    return float(expit(pair_logits(p, f_ctx, f1, f2)[0]))


def garm_outputs(p: ScorerParams, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    _require(p, "gaussian", "garm_score")
    out = _forward(p, X)[0]
    return out[:, 0], softplus(out[:, 1]) + SIGMA_OFFSET


def garm_score(p: ScorerParams, f: np.ndarray) -> GaussianScore:
    mu, sigma = garm_outputs(p, np.atleast_2d(f))
    return GaussianScore(float(mu[0]), float(sigma[0]))


# --------------------------------------------------------------------
# LOSSES
# --------------------------------------------------------------------
def _check_batch(batch: PairBatch, op: str) -> int:
    if batch is None or len(batch) == 0:
        raise InvalidInputError(f"{op}: empty batch")
    return len(batch)


def btrm_loss_grad(p: ScorerParams, batch: PairBatch) -> tuple[float, ScorerParams]:
    """-mean log sigmoid(r(s_w) - r(s_l))"""
    _require(p, "scalar", "btrm_loss_grad")
    n = _check_batch(batch, "btrm_loss_grad")
    ow, cw = _forward(p, batch.Xw)
    ol, cl = _forward(p, batch.Xl)
    delta = ow[:, 0] - ol[:, 0]
    loss = -float(np.mean(log_expit(delta)))
    d = (-expit(-delta) / n)[:, None]
    grads = _add(_backward(p, cw, d), _backward(p, cl, -d))
    return loss, ScorerParams(p.head, p.in_dim, *grads)


def pairedrm_loss_grad(p: ScorerParams, batch: PairBatch) -> tuple[float, ScorerParams]:
    """-mean log p(s_w > s_l)"""
    _require(p, "pair_logit", "pairedrm_loss_grad")
    n = _check_batch(batch, "pairedrm_loss_grad")
    oa, ca = _forward(p, pair_input(batch.C, batch.Xw, batch.Xl))
    ob, cb = _forward(p, pair_input(batch.C, batch.Xl, batch.Xw))
    z = oa[:, 0] - ob[:, 0]
    loss = -float(np.mean(log_expit(z)))
    d = (-expit(-z) / n)[:, None]
    grads = _add(_backward(p, ca, d), _backward(p, cb, -d))
    return loss, ScorerParams(p.head, p.in_dim, *grads)


def garm_loss_grad(p: ScorerParams, batch: PairBatch, lambda_reg: float) -> tuple[float, ScorerParams]:
    """Closed-form preference loss plus lambda * mean(sigma^2 - 2 ln sigma) over both sides."""
    _require(p, "gaussian", "garm_loss_grad")
    n = _check_batch(batch, "garm_loss_grad")
    if lambda_reg < 0:
        raise InvalidInputError(f"garm_loss_grad: lambda_reg must be >= 0, got {lambda_reg}")
    ow, cw = _forward(p, batch.Xw)
    ol, cl = _forward(p, batch.Xl)
    sw = softplus(ow[:, 1]) + SIGMA_OFFSET
    sl = softplus(ol[:, 1]) + SIGMA_OFFSET
    s2 = 1.0 + PI_OVER_8 * (sw ** 2 + sl ** 2)
    scale = np.sqrt(s2)
    z = (ow[:, 0] - ol[:, 0]) / scale
    pen_w = sw ** 2 - 2.0 * np.log(sw)
    pen_l = sl ** 2 - 2.0 * np.log(sl)
    loss = -float(np.mean(log_expit(z))) + lambda_reg * float(np.mean(pen_w + pen_l))

    dz = -expit(-z) / n
    dmu = dz / scale
    dsw = dz * (-z * PI_OVER_8 * sw / s2) + lambda_reg * (2.0 * sw - 2.0 / sw) / n
    dsl = dz * (-z * PI_OVER_8 * sl / s2) + lambda_reg * (2.0 * sl - 2.0 / sl) / n
    dout_w = np.stack([dmu, dsw * expit(ow[:, 1])], axis=1)
    dout_l = np.stack([-dmu, dsl * expit(ol[:, 1])], axis=1)
    grads = _add(_backward(p, cw, dout_w), _backward(p, cl, dout_l))
    return loss, ScorerParams(p.head, p.in_dim, *grads)


def loss_grad(p: ScorerParams, batch: PairBatch, kind: str, lambda_reg: float = 0.05):
    if kind == "bt":
        return btrm_loss_grad(p, batch)
    if kind == "paired":
        return pairedrm_loss_grad(p, batch)
    if kind == "garm":
        return garm_loss_grad(p, batch, lambda_reg)
    raise ConfigError(f"unknown reward model kind {kind!r}")


# --------------------------------------------------------------------
# TRAINING
# --------------------------------------------------------------------
@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 3e-3
    beta1: float = 0.99
    beta2: float = 0.999
    eps: float = 1e-8
    grad_clip_norm: float = 1.0
    weight_decay: float = 0.0
    batch_size: int = 512
    epochs: int = 10
    lambda_reg: float = 0.05
    seed: int = 0

    def validate(self) -> "TrainConfig":
        if self.learning_rate <= 0:
            raise ConfigError(f"TrainConfig: learning_rate must be > 0, got {self.learning_rate}")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ConfigError(f"TrainConfig: betas out of range (0,1): {self.beta1}, {self.beta2}")
        if self.lambda_reg < 0:
            raise ConfigError(f"TrainConfig: lambda_reg must be >= 0, got {self.lambda_reg}")
        if self.batch_size < 1 or self.epochs < 0 or self.grad_clip_norm <= 0:
            raise ConfigError("TrainConfig: batch_size >= 1, epochs >= 0 and grad_clip_norm > 0 required")
        return self


@dataclass
class TrainTrace:
    epoch_loss: list = field(default_factory=list)
    grad_norm: list = field(default_factory=list)
    clipped_norm: list = field(default_factory=list)


def clip_by_norm(g: np.ndarray, max_norm: float) -> tuple[np.ndarray, float]:
    norm = float(np.linalg.norm(g))
    if norm > max_norm:
        g = g * (max_norm / norm)
    return g, norm


def train(p: ScorerParams, data: PairBatch, cfg: TrainConfig, loss_kind: str,
          trace: TrainTrace | None = None) -> ScorerParams:
    """Adam over shuffled minibatches; deterministic given ``cfg.seed``."""
    cfg.validate()
    _require(p, KIND_TO_HEAD.get(loss_kind, "?"), f"train[{loss_kind}]")
    _check_batch(data, "train")
    trace = trace if trace is not None else TrainTrace()
    theta = p.to_vector()
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    t = 0
    n = len(data)
    for epoch in range(cfg.epochs):
        order = make_rng(cfg.seed, "rm-epoch", epoch).permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss, g = loss_grad(p.from_vector(theta), data.take(idx), loss_kind, cfg.lambda_reg)
            if not math.isfinite(loss):
                raise NumericError(f"train[{loss_kind}]: non-finite loss at epoch {epoch}, step {t}")
            g, norm = clip_by_norm(g.to_vector(), cfg.grad_clip_norm)
            trace.grad_norm.append(norm)
            trace.clipped_norm.append(float(np.linalg.norm(g)))
            t += 1
            m = cfg.beta1 * m + (1.0 - cfg.beta1) * g
            v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g
            m_hat = m / (1.0 - cfg.beta1 ** t)
            v_hat = v / (1.0 - cfg.beta2 ** t)
            theta = theta - cfg.learning_rate * (m_hat / (np.sqrt(v_hat) + cfg.eps) + cfg.weight_decay * theta)
            total += loss * len(idx)
        trace.epoch_loss.append(total / n)
        log.info(f"{loss_kind} epoch {epoch + 1}/{cfg.epochs}: loss={total / n:.4f}")
    out = p.from_vector(theta)
    if not out.is_finite():
        raise NumericError(f"train[{loss_kind}]: parameters diverged")
    return out


# --------------------------------------------------------------------
# EVALUATION
# --------------------------------------------------------------------
def accuracy_from_scores(s_w: np.ndarray, s_l: np.ndarray) -> float:
    """Fraction with s_w > s_l, exact ties counting one half."""
    s_w, s_l = np.asarray(s_w, float), np.asarray(s_l, float)
    if s_w.size == 0:
        raise InvalidInputError("accuracy: empty test set")
    return float(np.mean(np.where(s_w > s_l, 1.0, np.where(s_w == s_l, 0.5, 0.0))))


def pair_margins(p: ScorerParams, batch: PairBatch, kind: str) -> tuple[np.ndarray, np.ndarray]:
    """Per-pair (chosen, rejected) comparison values for the head in use."""
    _require(p, KIND_TO_HEAD.get(kind, "?"), f"rm_accuracy[{kind}]")
    if kind == "bt":
        return btrm_scores(p, batch.Xw), btrm_scores(p, batch.Xl)
    if kind == "paired":
        z = pair_logits(p, batch.C, batch.Xw, batch.Xl)
        return z, np.zeros_like(z)
    mu_w, _ = garm_outputs(p, batch.Xw)
    mu_l, _ = garm_outputs(p, batch.Xl)
    return mu_w, mu_l


def rm_accuracy(p: ScorerParams, test: PairBatch, kind: str) -> float:
    _check_batch(test, "rm_accuracy")
    return accuracy_from_scores(*pair_margins(p, test, kind))


def pair_ulb(p: ScorerParams, batch: PairBatch) -> np.ndarray:
    mu_w, s_w = garm_outputs(p, batch.Xw)
    mu_l, s_l = garm_outputs(p, batch.Xl)
    return ulb_array(mu_w, s_w, mu_l, s_l)


# --------------------------------------------------------------------
# REWARD MODEL HANDLE
# --------------------------------------------------------------------
@dataclass
class RewardModel:
    """A trained head together with its kind and feature dimension."""
    kind: str
    params: ScorerParams
    dim: int = DEFAULT_FEATURE_DIM

    def __post_init__(self):
        _require(self.params, KIND_TO_HEAD.get(self.kind, "?"), "RewardModel")

    def score_pool(self, ctx, suggestions: Sequence) -> tuple[np.ndarray, np.ndarray]:
        """Per-suggestion (score, sigma). Pair heads score mean log-odds against the rest."""
        F = featurize_many(ctx, suggestions, self.dim)
        if self.kind == "bt":
            return btrm_scores(self.params, F), np.zeros(len(F))
        if self.kind == "garm":
            return garm_outputs(self.params, F)
        n = len(F)
        if n == 1:
            return np.zeros(1), np.zeros(1)
        i, j = np.triu_indices(n, k=1)
        C = np.repeat(ctx.x[None, :], len(i), axis=0)
        z = pair_logits(self.params, C, F[i], F[j])
        M = np.zeros((n, n))
        M[i, j] = z
        M[j, i] = -z
        return M.sum(axis=1) / (n - 1), np.zeros(n)


# --------------------------------------------------------------------
# CHECKPOINTS
# --------------------------------------------------------------------
def save_checkpoint(path: str, rm: RewardModel, cfg: TrainConfig | None = None, data_fingerprint: str = "",
                    metadata: dict | None = None) -> None:
    p = rm.params
    payload = {
        "rm_kind": rm.kind,
        "head": p.head,
        "in_dim": p.in_dim,
        "hidden": p.hidden,
        "feature_dim": rm.dim,
        "weights": {n: a.ravel().tolist() for n, a in zip(p.NAMES, p.arrays())},
        "train_config": asdict(cfg) if cfg else None,
        "data_fingerprint": data_fingerprint,
        "metadata": metadata or {},
    }
    io.save_json(path, payload, kind="reward_model")


def load_checkpoint(path: str) -> RewardModel:
    doc = io.load_json(path, kind="reward_model")
    head, in_dim, hidden = doc["head"], int(doc["in_dim"]), int(doc["hidden"])
    template = init_params(head, in_dim, 0, hidden, zero=True)
    try:
        vec = np.concatenate([np.asarray(doc["weights"][n], dtype=float) for n in template.NAMES])
        params = template.from_vector(vec)
    except (KeyError, ValueError) as e:
        raise DataError(f"{path}: malformed weights ({e})") from e
    return RewardModel(doc["rm_kind"], params, int(doc["feature_dim"]))
