"""Deterministic feature extractors and the frozen feature index space.

Every extractor is a pure function of the instance.  Unigram features
use presence (binary) rather than counts; cross-pair features are
hashed into a fixed bucket space with a per-instance cap to bound
memory on long sentence pairs.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .corpus import NliInstance

__all__ = [
    "FeatureVector",
    "FeatureSpace",
    "hypothesis_only_features",
    "word_overlap_features",
    "length_features",
    "pair_features",
    "PairFeatures",
    "CombinedFeatures",
    "make_extractor",
    "EXPERT_FEATURE_NAMES",
    "DEFAULT_PAIR_BUCKETS",
    "DEFAULT_MAX_PAIRS",
]

DEFAULT_PAIR_BUCKETS = 2 ** 18
DEFAULT_MAX_PAIRS = 512

OOV_FEATURE = "__oov__"


@dataclass
class FeatureVector:
    """Sparse term features plus a dense slot for hand-crafted numerics."""

    terms: dict[str, float] = field(default_factory=dict)
    numeric: dict[str, float] = field(default_factory=dict)

    def items(self):
        yield from self.terms.items()
        yield from self.numeric.items()


def hypothesis_only_features(x: NliInstance) -> FeatureVector:
    """Unigram presence over hypothesis tokens; blind to the premise."""
    # sorted so feature-id insertion order (and thus the fitted feature
    # space) is stable across processes regardless of the string hash seed
    return FeatureVector(terms={f"uni:{t}": 1.0 for t in sorted(set(x.hypothesis))})


def word_overlap_features(x: NliInstance) -> FeatureVector:
    """Five dense overlap statistics between hypothesis and premise.

    (1) hypothesis is an order-preserving subsequence of the premise;
    (2) every hypothesis word appears in the premise; (3) fraction of
    hypothesis words appearing in the premise; (4, 5) mean and max over
    hypothesis tokens of the minimum |i - j| distance to an identical
    premise token, with unmatched tokens contributing len(premise);
    distances are capped at and normalized by len(premise).
    """
    premise, hypothesis = x.premise, x.hypothesis
    len_p = len(premise)

    positions: dict[str, list[int]] = {}
    for j, token in enumerate(premise):
        positions.setdefault(token, []).append(j)

    # order-preserving subsequence scan
    cursor = 0
    for token in hypothesis:
        while cursor < len_p and premise[cursor] != token:
            cursor += 1
        if cursor == len_p:
            subsequence = 0.0
            break
        cursor += 1
    else:
        subsequence = 1.0

    matched = 0
    distances = np.empty(len(hypothesis))
    for i, token in enumerate(hypothesis):
        where = positions.get(token)
        if where is None:
            distances[i] = len_p
        else:
            matched += 1
            distances[i] = min(abs(i - j) for j in where)
    distances = np.minimum(distances, len_p) / len_p

    all_in = 1.0 if matched == len(hypothesis) else 0.0
    return FeatureVector(
        numeric={
            "ov:subseq": subsequence,
            "ov:all_in": all_in,
            "ov:frac": matched / len(hypothesis),
            "ov:mean_dist": float(distances.mean()),
            "ov:max_dist": float(distances.max()),
        }
    )


def length_features(x: NliInstance) -> FeatureVector:
    """Hypothesis length, premise length, their mean, and premise - hypothesis."""
    len_h, len_p = len(x.hypothesis), len(x.premise)
    return FeatureVector(
        numeric={
            "len:hyp": float(len_h),
            "len:prem": float(len_p),
            "len:mean": (len_h + len_p) / 2.0,
            "len:diff": float(len_p - len_h),
        }
    )


def _stable_bucket(key: str, n_buckets: int) -> int:
    return zlib.crc32(key.encode("utf-8")) % n_buckets


def pair_features(x: NliInstance, n_buckets: int = DEFAULT_PAIR_BUCKETS,
                  max_pairs: int = DEFAULT_MAX_PAIRS) -> FeatureVector:
    """Side-tagged unigrams plus hashed premise x hypothesis token pairs.

    Distinct cross pairs are ordered lexicographically and capped at
    ``max_pairs`` per instance before hashing into ``n_buckets``.
    """
    terms = {f"prem:{t}": 1.0 for t in sorted(set(x.premise))}
    terms.update({f"hyp:{t}": 1.0 for t in sorted(set(x.hypothesis))})
    pairs = sorted(
        {(wp, wh) for wp in set(x.premise) for wh in set(x.hypothesis)}
    )[:max_pairs]
    for wp, wh in pairs:
        terms[f"pairh:{_stable_bucket(f'{wp}|{wh}', n_buckets)}"] = 1.0
    return FeatureVector(terms=terms)


class PairFeatures:
    """Configurable pair-feature extractor (bucket count, per-instance cap)."""

    def __init__(self, n_buckets: int = DEFAULT_PAIR_BUCKETS,
                 max_pairs: int = DEFAULT_MAX_PAIRS):
        self.n_buckets = n_buckets
        self.max_pairs = max_pairs

    def __call__(self, x: NliInstance) -> FeatureVector:
        return pair_features(x, self.n_buckets, self.max_pairs)


class CombinedFeatures:
    """Union of several extractors' outputs (feature ids are disjoint by prefix)."""

    def __init__(self, extractors: Sequence[Callable[[NliInstance], FeatureVector]]):
        self.extractors = tuple(extractors)

    def __call__(self, x: NliInstance) -> FeatureVector:
        combined = FeatureVector()
        for extractor in self.extractors:
            part = extractor(x)
            combined.terms.update(part.terms)
            combined.numeric.update(part.numeric)
        return combined


EXPERT_FEATURE_NAMES = ("wordOverlap", "partialInput", "sentenceLength")

_BASE_EXTRACTORS: dict[str, Callable[..., Callable[[NliInstance], FeatureVector]]] = {
    "partialInput": lambda **_: hypothesis_only_features,
    "wordOverlap": lambda **_: word_overlap_features,
    "sentenceLength": lambda **_: length_features,
    "pair": lambda n_buckets=DEFAULT_PAIR_BUCKETS, max_pairs=DEFAULT_MAX_PAIRS:
        PairFeatures(n_buckets, max_pairs),
}


def make_extractor(name: str, n_pair_buckets: int = DEFAULT_PAIR_BUCKETS,
                   max_pairs: int = DEFAULT_MAX_PAIRS):
    """Build an extractor from a registry name like ``pair+wordOverlap``."""
    parts = name.split("+")
    built = []
    for part in parts:
        if part not in _BASE_EXTRACTORS:
            raise ValueError(
                f"unknown feature extractor {part!r}; valid names: "
                + ", ".join(sorted(_BASE_EXTRACTORS))
            )
        built.append(
            _BASE_EXTRACTORS[part](n_buckets=n_pair_buckets, max_pairs=max_pairs)
        )
    return built[0] if len(built) == 1 else CombinedFeatures(built)


class FeatureSpace:
    """Frozen mapping from feature ids to column indices.

    Fit once on training vectors (single writer), then read-only.  Ids
    unseen at fit time map to a shared out-of-vocabulary column.
    """

    def __init__(self):
        self.index: dict[str, int] = {OOV_FEATURE: 0}
        self._frozen = False

    @property
    def n_features(self) -> int:
        return len(self.index)

    def fit(self, vectors: Iterable[FeatureVector]) -> "FeatureSpace":
        if self._frozen:
            raise RuntimeError("FeatureSpace is frozen after fitting")
        for vector in vectors:
            for feature_id, _ in vector.items():
                if feature_id not in self.index:
                    self.index[feature_id] = len(self.index)
        self._frozen = True
        return self

    def transform(self, vectors: Sequence[FeatureVector]) -> sp.csr_matrix:
        """Vectorize to CSR; unseen ids collapse into the OOV column."""
        if not self._frozen:
            raise RuntimeError("FeatureSpace must be fit before transform")
        indptr = [0]
        indices: list[int] = []
        data: list[float] = []
        for vector in vectors:
            row: dict[int, float] = {}
            for feature_id, value in vector.items():
                row[self.index.get(feature_id, 0)] = value
            for column in sorted(row):
                indices.append(column)
                data.append(row[column])
            indptr.append(len(indices))
        return sp.csr_matrix(
            (np.asarray(data), np.asarray(indices, dtype=np.int32),
             np.asarray(indptr, dtype=np.int32)),
            shape=(len(vectors), self.n_features),
        )

    def to_dict(self) -> dict:
        ordered = sorted(self.index.items(), key=lambda kv: kv[1])
        return {"features": [feature_id for feature_id, _ in ordered]}

    @classmethod
    def from_dict(cls, payload: dict) -> "FeatureSpace":
        space = cls()
        space.index = {fid: i for i, fid in enumerate(payload["features"])}
        if space.index.get(OOV_FEATURE) != 0:
            raise ValueError("corrupt feature space payload: OOV bucket misplaced")
        space._frozen = True
        return space
