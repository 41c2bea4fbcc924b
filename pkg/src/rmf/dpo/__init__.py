from .core import (
    DpoConfig,
    PolicyParams,
    TrainingDiverged,
    TrainingTrace,
    bt_probability,
    dpo_gradient,
    dpo_loss,
    featurize,
    implicit_reward,
    pair_feature_matrices,
    policy_logprob,
    train_toy_policy,
)
from .pairs import PreferencePair, build_preference_pairs, pairs_to_jsonl, parse_pairs_jsonl

__all__ = [
    "DpoConfig",
    "PolicyParams",
    "PreferencePair",
    "TrainingDiverged",
    "TrainingTrace",
    "bt_probability",
    "build_preference_pairs",
    "dpo_gradient",
    "dpo_loss",
    "featurize",
    "implicit_reward",
    "pair_feature_matrices",
    "pairs_to_jsonl",
    "parse_pairs_jsonl",
    "policy_logprob",
    "train_toy_policy",
]
