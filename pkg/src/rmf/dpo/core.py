"""Desk-scale preference-loss policy: a log-linear softmax over the two
candidate completions of each pair, with hashed n-gram text features.

This makes the Bradley-Terry probability, the implicit reward, the pairwise
logistic loss, and its gradient exactly computable, so the math can be
verified numerically (fixed point at the reference, finite-difference
gradient check, shift invariance) without any ML framework.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels

DEFAULT_BETA = 0.1


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, loss: float):
        self.epoch = epoch
        self.loss = loss
        super().__init__(f"training diverged at epoch {epoch} (loss={loss})")


@dataclass
class PolicyParams:
    theta: np.ndarray
    theta_ref: np.ndarray

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64)
        self.theta_ref = np.asarray(self.theta_ref, dtype=np.float64)
        if self.theta.shape != self.theta_ref.shape or self.theta.ndim != 1:
            raise ValueError("theta and theta_ref must be 1-d vectors of equal dimension")
        if not (np.isfinite(self.theta).all() and np.isfinite(self.theta_ref).all()):
            raise ValueError("parameters must be finite")

    @property
    def feature_dim(self) -> int:
        return self.theta.shape[0]

    @classmethod
    def at_reference(cls, theta_ref: np.ndarray) -> "PolicyParams":
        ref = np.asarray(theta_ref, dtype=np.float64)
        return cls(theta=ref.copy(), theta_ref=ref.copy())

    def to_json(self) -> str:
        return json.dumps(
            {"version": 1, "feature_dim": self.feature_dim,
             "theta": self.theta.tolist(), "theta_ref": self.theta_ref.tolist()}
        )

    @classmethod
    def from_json(cls, text: str) -> "PolicyParams":
        doc = json.loads(text)
        if doc.get("version") != 1:
            raise ValueError(f"unsupported params file version {doc.get('version')!r}")
        return cls(theta=np.array(doc["theta"]), theta_ref=np.array(doc["theta_ref"]))


@dataclass(frozen=True)
class DpoConfig:
    beta: float = DEFAULT_BETA
    learning_rate: float = 0.5
    epochs: int = 200
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError("beta must be > 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class TrainingTrace:
    epoch_losses: list[float] = field(default_factory=list)
    grad_norms: list[float] = field(default_factory=list)
    final_accuracy: float = 0.0  # fraction of pairs with positive implicit-reward margin


def _stable_hash(token: str) -> int:
    return int.from_bytes(hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest(), "big")


def featurize(prompt: str, completion: str, dim: int) -> np.ndarray:
    """Hashed unigram+bigram counts of prompt and completion text.

    Deterministic across processes and releases (blake2b, not Python hash()).
    """
    tokens = (prompt + " " + completion).lower().split()
    vec = np.zeros(dim, dtype=np.float64)
    for tok in tokens:
        vec[_stable_hash("1:" + tok) % dim] += 1.0
    for a, b in zip(tokens, tokens[1:]):
        vec[_stable_hash("2:" + a + " " + b) % dim] += 1.0
    return vec


def pair_feature_matrices(pairs, dim: int) -> tuple[np.ndarray, np.ndarray]:
    """(F_chosen, F_rejected) feature matrices for a batch of preference pairs."""
    fw = np.stack([featurize(p.prompt, p.chosen, dim) for p in pairs])
    fl = np.stack([featurize(p.prompt, p.rejected, dim) for p in pairs])
    return fw, fl


def bt_probability(r1: float, r2: float) -> float:
    """Probability of preferring the first item under the pairwise-comparison
    model: exp(r1) / (exp(r1) + exp(r2)), computed as sigmoid(r1 - r2)."""
    if not (math.isfinite(r1) and math.isfinite(r2)):
        raise ValueError("rewards must be finite")
    z = r1 - r2
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def policy_logprob(p: PolicyParams, which: str, features: np.ndarray, index: int) -> float:
    """log softmax_index over the candidate set of theta . phi(x, y).

    `features` is (n_candidates x d) with n >= 2; `which` selects the learned
    or the frozen reference parameter vector.
    """
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[0] < 2:
        raise ValueError("need a (n_candidates x d) matrix with n >= 2")
    if feats.shape[1] != p.feature_dim:
        raise ValueError(f"feature dim {feats.shape[1]} != parameter dim {p.feature_dim}")
    theta = {"learned": p.theta, "reference": p.theta_ref}[which]
    logits = feats @ theta
    lse = logits.max() + np.log(np.exp(logits - logits.max()).sum())
    return float(logits[index] - lse)


def implicit_reward(logp_theta: float, logp_ref: float, beta: float) -> float:
    """beta * (log pi_theta - log pi_ref); the shared additive constant is
    omitted because it cancels between the chosen and rejected completions."""
    if not (math.isfinite(logp_theta) and math.isfinite(logp_ref)):
        raise ValueError("log-probabilities must be finite")
    return beta * (logp_theta - logp_ref)


def _diff_matrix(pairs, p: PolicyParams, featurizer) -> np.ndarray:
    if featurizer is None:
        fw, fl = pair_feature_matrices(pairs, p.feature_dim)
    else:
        fw = np.stack([featurizer(q.prompt, q.chosen, p.feature_dim) for q in pairs])
        fl = np.stack([featurizer(q.prompt, q.rejected, p.feature_dim) for q in pairs])
    if fw.shape[1] != p.feature_dim:
        raise ValueError("featurizer dimension does not match parameters")
    return fw - fl


def dpo_loss(pairs, p: PolicyParams, featurizer=None, beta: float = DEFAULT_BETA) -> float:
    """Mean over the batch of -log sigmoid(beta * [log-ratio(chosen) -
    log-ratio(rejected)]), each log-ratio taken against the frozen reference.

    Strictly positive; exactly ln 2 when theta == theta_ref.
    """
    if len(pairs) == 0:
        raise ValueError("batch must be non-empty")
    if beta <= 0:
        raise ValueError("beta must be > 0")
    return kernels.loss(_diff_matrix(pairs, p, featurizer), p.theta, p.theta_ref, beta)


def dpo_gradient(pairs, p: PolicyParams, featurizer=None, beta: float = DEFAULT_BETA) -> np.ndarray:
    """Analytic gradient of dpo_loss with respect to theta."""
    if len(pairs) == 0:
        raise ValueError("batch must be non-empty")
    if beta <= 0:
        raise ValueError("beta must be > 0")
    return kernels.grad(_diff_matrix(pairs, p, featurizer), p.theta, p.theta_ref, beta)


def preference_accuracy(pairs, p: PolicyParams, featurizer=None, beta: float = DEFAULT_BETA) -> float:
    """Fraction of pairs whose implicit-reward margin is positive."""
    m = kernels.margins(_diff_matrix(pairs, p, featurizer), p.theta, p.theta_ref, beta)
    return float((m > 0).mean())


def train_toy_policy(
    pairs, cfg: DpoConfig, featurizer=None, feature_dim: int = 64, theta_ref: np.ndarray | None = None
) -> tuple[PolicyParams, TrainingTrace]:
    """Seeded mini-batch gradient descent on the preference loss, starting
    from theta = theta_ref.  Deterministic for a fixed (pairs, cfg)."""
    if len(pairs) == 0:
        raise ValueError("need at least one pair")
    if theta_ref is None:
        theta_ref = np.zeros(feature_dim)
    p = PolicyParams.at_reference(theta_ref)
    diff = _diff_matrix(pairs, p, featurizer)

    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    trace = TrainingTrace()
    n = diff.shape[0]
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            batch = diff[order[start : start + cfg.batch_size]]
            g = kernels.grad(batch, p.theta, p.theta_ref, cfg.beta)
            p.theta = p.theta - cfg.learning_rate * g
        epoch_loss = kernels.loss(diff, p.theta, p.theta_ref, cfg.beta)
        trace.epoch_losses.append(epoch_loss)
        trace.grad_norms.append(float(np.linalg.norm(kernels.grad(diff, p.theta, p.theta_ref, cfg.beta))))
        if not math.isfinite(epoch_loss) or epoch_loss > 1e6:
            raise TrainingDiverged(epoch, epoch_loss)

    m = kernels.margins(diff, p.theta, p.theta_ref, cfg.beta)
    trace.final_accuracy = float((m > 0).mean())
    return p, trace
