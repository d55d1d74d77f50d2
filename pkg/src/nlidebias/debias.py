"""Debiasing strategies built on a prime model and frozen bias experts.

Single-bias strategies: instance reweighting (ReW) with weights
``1 - b_i^{y_i}``, and the bias-product ensemble (BiasProd) trained on
``softmax(log p + log b)`` with gradients reaching the prime model only.
Multi-bias combinations: MixW multiplies per-expert reweighting weights,
AddProd sums expert log-probabilities inside the product ensemble, and
BestEn averages the probability outputs of the per-bias ReW models.

Inference never consults the experts: they encode exactly what the
prime model must not rely on.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, clone

from .classifier import (
    BiasExpert,
    TextPairClassifier,
    clamp_probs,
    labels_of,
    log_clamped,
    softmax,
)
from .corpus import Dataset, LABEL_NAMES

__all__ = [
    "STRATEGIES",
    "DebiasPlan",
    "PlanError",
    "reweight_weights",
    "mixweight_weights",
    "bias_product",
    "best_ensemble",
    "combine_probabilities",
    "DebiasedClassifier",
    "train_debiased",
]

STRATEGIES = ("Baseline", "ReW", "BiasProd", "MixW", "AddProd", "BestEn")

_SINGLE_EXPERT = {"ReW", "BiasProd"}
_MULTI_EXPERT = {"MixW", "AddProd", "BestEn"}


class PlanError(ValueError):
    """Raised when a debiasing plan is internally inconsistent."""


@dataclass(frozen=True)
class DebiasPlan:
    """Which strategy to train, with which frozen experts."""

    strategy: str
    experts: tuple[BiasExpert, ...] = ()

    def __post_init__(self) -> None:
        if self.strategy not in STRATEGIES:
            raise PlanError(
                f"unknown strategy {self.strategy!r}; valid: {', '.join(STRATEGIES)}"
            )
        m = len(self.experts)
        if self.strategy == "Baseline" and m != 0:
            raise PlanError("Baseline takes no experts")
        if self.strategy in _SINGLE_EXPERT and m != 1:
            raise PlanError(f"{self.strategy} requires exactly one expert, got {m}")
        if self.strategy in _MULTI_EXPERT and m < 1:
            raise PlanError(f"{self.strategy} requires at least one expert, got {m}")


def reweight_weights(bias_probs: np.ndarray, golds: np.ndarray) -> np.ndarray:
    """Per-instance weights 1 - b_i^{y_i} from one expert's outputs."""
    bias_probs = clamp_probs(bias_probs)
    golds = np.asarray(golds, dtype=np.int64)
    return 1.0 - bias_probs[np.arange(len(golds)), golds]


def mixweight_weights(expert_probs: Sequence[np.ndarray], golds: np.ndarray) -> np.ndarray:
    """Product over experts of the per-expert reweighting weights."""
    if not expert_probs:
        raise PlanError("mixweight_weights requires at least one expert output")
    weights = reweight_weights(expert_probs[0], golds)
    for probs in expert_probs[1:]:
        weights = weights * reweight_weights(probs, golds)
    return weights


def bias_product(prime: np.ndarray, *expert_probs: np.ndarray) -> np.ndarray:
    """softmax(log p + sum_j log b^j): the renormalized elementwise product."""
    total = log_clamped(clamp_probs(prime))
    for probs in expert_probs:
        total = total + log_clamped(clamp_probs(probs))
    return clamp_probs(softmax(total))


def combine_probabilities(member_probs: Sequence[np.ndarray],
                          rule: str = "mean") -> np.ndarray:
    """Combine member distributions: probability mean (default) or argmax vote.

    Votes are re-encoded as one-hot rows before averaging, so ties in
    the vote fall back to the fixed label-index order.
    """
    stack = np.stack([clamp_probs(np.asarray(p)) for p in member_probs])
    if rule == "mean":
        return clamp_probs(stack.mean(axis=0))
    if rule == "vote":
        n_classes = stack.shape[-1]
        votes = np.eye(n_classes)[stack.argmax(axis=-1)]
        return clamp_probs(votes.mean(axis=0))
    raise PlanError(f"unknown combination rule {rule!r}; use 'mean' or 'vote'")


def best_ensemble(member_probs: Sequence[np.ndarray], rule: str = "mean") -> np.ndarray:
    """Combine >= 2 member distributions (the BestEn inference rule)."""
    if len(member_probs) < 2:
        raise PlanError("best_ensemble requires at least two members")
    return combine_probabilities(member_probs, rule)


class DebiasedClassifier(BaseEstimator, ClassifierMixin):
    """Meta-estimator applying a debiasing strategy around a prime model.

    ``base`` is the unfitted prime-model prototype (cloned before
    training).  For BestEn one ReW member is trained per expert, each
    with its own seed offset; members may conceptually train in
    parallel, and the stored member order is the expert order.
    """

    def __init__(self, strategy: str = "Baseline",
                 experts: Sequence[BiasExpert] = (),
                 base: TextPairClassifier | None = None,
                 ensemble_rule: str = "mean"):
        self.strategy = strategy
        self.experts = experts
        self.base = base
        self.ensemble_rule = ensemble_rule

    def _plan(self) -> DebiasPlan:
        return DebiasPlan(self.strategy, tuple(self.experts))

    def _make_prime(self, seed_offset: int = 0) -> TextPairClassifier:
        prime = clone(self.base) if self.base is not None else TextPairClassifier()
        if seed_offset:
            prime.set_params(seed=prime.seed + seed_offset)
        return prime

    def fit(self, X, y=None, dev=None):
        plan = self._plan()
        instances = X.instances if isinstance(X, Dataset) else tuple(X)
        golds = labels_of(instances, y)

        expert_outputs = [e.predict_proba(instances) for e in plan.experts]

        if plan.strategy == "Baseline":
            self.prime_ = self._make_prime().fit(instances, golds, dev=dev)
            self.members_ = ()
        elif plan.strategy == "ReW":
            alpha = reweight_weights(expert_outputs[0], golds)
            self.prime_ = self._make_prime().fit(
                instances, golds, sample_weight=alpha, dev=dev
            )
            self.members_ = ()
        elif plan.strategy == "MixW":
            alpha = mixweight_weights(expert_outputs, golds)
            self.prime_ = self._make_prime().fit(
                instances, golds, sample_weight=alpha, dev=dev
            )
            self.members_ = ()
        elif plan.strategy in ("BiasProd", "AddProd"):
            offset = np.zeros((len(instances), len(LABEL_NAMES)))
            for probs in expert_outputs:
                offset = offset + log_clamped(clamp_probs(probs))
            self.prime_ = self._make_prime().fit(
                instances, golds, logit_offset=offset, dev=dev
            )
            self.members_ = ()
        else:  # BestEn: one ReW member per expert
            members = []
            for k, probs in enumerate(expert_outputs):
                alpha = reweight_weights(probs, golds)
                members.append(
                    self._make_prime(seed_offset=k).fit(
                        instances, golds, sample_weight=alpha, dev=dev
                    )
                )
            self.prime_ = None
            self.members_ = tuple(members)

        self.classes_ = np.array(LABEL_NAMES)
        return self

    def predict_proba(self, instances) -> np.ndarray:
        if self.strategy == "BestEn":
            outputs = [m.predict_proba(instances) for m in self.members_]
            if len(outputs) == 1:
                return outputs[0]
            return best_ensemble(outputs, self.ensemble_rule)
        return self.prime_.predict_proba(instances)

    def predict(self, instances) -> np.ndarray:
        return self.classes_[self.predict_proba(instances).argmax(axis=1)]


def train_debiased(plan: DebiasPlan, train: Dataset, dev: Dataset | None = None,
                   base: TextPairClassifier | None = None,
                   ensemble_rule: str = "mean") -> DebiasedClassifier:
    """Train a debiased model per plan; experts must be pre-trained and frozen."""
    model = DebiasedClassifier(
        strategy=plan.strategy, experts=plan.experts, base=base,
        ensemble_rule=ensemble_rule,
    )
    return model.fit(train, dev=dev)
