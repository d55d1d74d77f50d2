"""Merging heterogeneous training sets with size- or performance-based weights.

Size-based reweighting (SR) assigns every instance of source i the
weight (sum_k n_k) / n_i so each source contributes equal total mass;
performance-based reweighting (PR) assigns p_i / sum_k p_k, favouring
sources a baseline model scored higher on.  Model ensembling comes in
a mixed mode (distinct member configurations) and a single mode
(identical configuration, distinct seeds); both average member
probability vectors, the same rule as the BestEn combination.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .corpus import Dataset, LabelScheme
from .debias import combine_probabilities

__all__ = [
    "MERGE_MODES",
    "MergeError",
    "MergeSource",
    "MergePlan",
    "MergeResult",
    "size_weights",
    "performance_weights",
    "merge_datasets",
    "EnsembleMode",
    "ensemble_predict",
]

MERGE_MODES = ("plain", "sr", "pr")


class MergeError(ValueError):
    """Raised for inconsistent merge plans or ensemble specifications."""


@dataclass(frozen=True)
class MergeSource:
    dataset: Dataset
    performance: float | None = None


@dataclass(frozen=True)
class MergePlan:
    sources: tuple[MergeSource, ...]
    mode: str = "plain"

    def __post_init__(self) -> None:
        if self.mode not in MERGE_MODES:
            raise MergeError(f"unknown merge mode {self.mode!r}; valid: {MERGE_MODES}")
        if not self.sources:
            raise MergeError("merge plan needs at least one source")
        for source in self.sources:
            if len(source.dataset) == 0:
                raise MergeError(f"source {source.dataset.name!r} is empty")
            if self.mode == "pr" and (
                source.performance is None or source.performance <= 0.0
            ):
                raise MergeError(
                    f"performance-based mode requires p > 0 for source "
                    f"{source.dataset.name!r}"
                )


def _per_instance(plan: MergePlan, per_source: Sequence[float]) -> np.ndarray:
    return np.concatenate([
        np.full(len(source.dataset), value)
        for source, value in zip(plan.sources, per_source)
    ])


def size_weights(plan: MergePlan) -> np.ndarray:
    """SR weights aligned with the concatenated instance order."""
    sizes = [len(s.dataset) for s in plan.sources]
    total = sum(sizes)
    return _per_instance(plan, [total / n for n in sizes])


def performance_weights(plan: MergePlan) -> np.ndarray:
    """PR weights aligned with the concatenated instance order."""
    if plan.mode != "pr":
        # weights are well-defined whenever performances are present
        for source in plan.sources:
            if source.performance is None or source.performance <= 0.0:
                raise MergeError(
                    f"source {source.dataset.name!r} lacks a positive performance"
                )
    performances = [s.performance for s in plan.sources]
    total = sum(performances)
    return _per_instance(plan, [p / total for p in performances])


@dataclass(frozen=True)
class MergeResult:
    train: Dataset
    weights: np.ndarray
    dev: Dataset | None = None


def merge_datasets(plan: MergePlan, dev_sources: Sequence[Dataset] | None = None,
                   name: str = "merged") -> MergeResult:
    """Concatenate sources (tags preserved) and compute per-mode weights.

    When the per-source dev sets are supplied they are merged alongside,
    forming the unified in-domain dev set used for model selection.
    """
    schemes = {s.dataset.scheme for s in plan.sources}
    if schemes != {LabelScheme.THREE_WAY}:
        raise MergeError("all merge sources must use the three_way scheme")

    instances = tuple(
        inst for source in plan.sources for inst in source.dataset.instances
    )
    if plan.mode == "plain":
        weights = np.ones(len(instances))
    elif plan.mode == "sr":
        weights = size_weights(plan)
    else:
        weights = performance_weights(plan)

    merged_dev = None
    if dev_sources is not None:
        dev_schemes = {d.scheme for d in dev_sources}
        if dev_schemes and dev_schemes != {LabelScheme.THREE_WAY}:
            raise MergeError("all dev sources must use the three_way scheme")
        merged_dev = Dataset(
            name=f"{name}-dev", split="dev", scheme=LabelScheme.THREE_WAY,
            instances=tuple(i for d in dev_sources for i in d.instances),
        )

    merged = Dataset(
        name=name, split="train", scheme=LabelScheme.THREE_WAY, instances=instances
    )
    return MergeResult(train=merged, weights=weights, dev=merged_dev)


@dataclass(frozen=True)
class EnsembleMode:
    """Member specification for model-level ensembling.

    ``mixed`` requires at least two distinct member configurations;
    ``single`` requires identical configurations with distinct seeds.
    Configurations are compared on all estimator params except the seed.
    """

    mode: str
    member_params: tuple[dict, ...]

    def __post_init__(self) -> None:
        if self.mode not in ("mixed", "single"):
            raise MergeError("ensemble mode must be 'mixed' or 'single'")
        if len(self.member_params) < 2:
            raise MergeError("an ensemble needs at least two members")
        shapes = [
            tuple(sorted((k, repr(v)) for k, v in params.items() if k != "seed"))
            for params in self.member_params
        ]
        seeds = [params.get("seed") for params in self.member_params]
        if self.mode == "mixed" and len(set(shapes)) < 2:
            raise MergeError("mixed mode requires >= 2 distinct member configurations")
        if self.mode == "single":
            if len(set(shapes)) != 1:
                raise MergeError("single mode requires identical member configurations")
            if len(set(seeds)) != len(seeds):
                raise MergeError("single mode requires distinct member seeds")


def ensemble_predict(members: Sequence, instances, rule: str = "mean") -> np.ndarray:
    """Mean of member probability outputs (same rule as the BestEn combiner)."""
    if not members:
        raise MergeError("ensemble_predict needs at least one trained member")
    outputs = [m.predict_proba(instances) for m in members]
    if len(outputs) == 1:
        return outputs[0]
    return combine_probabilities(outputs, rule)
