"""Training-data augmentation: text swap, synonym substitution, and an
external transform client for masked-LM substitution and paraphrase.

Augmentation doubles a training set by generating one new instance per
original (minus per-instance failures, which are dropped and counted,
never passed through silently).  All augmented instances are tagged
with the method that produced them so they remain recoverable by
filtering.
"""

from __future__ import annotations

import json
import logging
import math
import subprocess
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .corpus import (
    CorpusError,
    Dataset,
    LABEL_NAMES,
    LabelScheme,
    NliInstance,
    tokenize,
)

__all__ = [
    "AugmentError",
    "EmbeddingTable",
    "SynonymLexicon",
    "load_embeddings",
    "load_lexicon",
    "content_word_indices",
    "text_swap",
    "swap_dataset_for_eval",
    "synonym_substitute",
    "TransformRequest",
    "TransformResponse",
    "TransformClientError",
    "PipeTransformClient",
    "CallableTransformClient",
    "external_transform",
    "AUGMENT_METHODS",
    "AugmentSummary",
    "augment_dataset",
    "augmented_subset",
    "auto_quality",
    "MASK_FRACTION",
    "CANDIDATE_POOL",
    "BEAM_SIZE",
    "MASK_TOKEN",
]

logger = logging.getLogger(__name__)

# fixed transform parameters
MASK_FRACTION = 0.3
CANDIDATE_POOL = 100
BEAM_SIZE = 5
MASK_TOKEN = "[MASK]"

AUGMENT_METHODS = ("text_swap", "synonym", "masked_lm", "paraphrase")

STOPWORDS = frozenset(
    """a an the and or but if then than this that these those is are was were be
    been being am do does did will would shall should may might must can could
    of in on at by for with about to from up down out over under again very
    not no nor so too s t don now he she it they we you i his her its their
    our your my me him them us as""".split()
)


class AugmentError(ValueError):
    """Per-instance augmentation failure; pipelines count these as drops."""


def _instance_rng(seed: int, instance_id: str) -> np.random.Generator:
    # per-instance stream: deterministic and order-independent across workers
    return np.random.default_rng(
        np.random.SeedSequence([seed, zlib.crc32(instance_id.encode("utf-8"))])
    )


def content_word_indices(tokens: Sequence[str]) -> list[int]:
    """Positions of content words: not stopwords, not punctuation/digits."""
    return [
        i for i, token in enumerate(tokens)
        if token not in STOPWORDS and any(c.isalpha() for c in token)
    ]


# ---------------------------------------------------------------------------
# Text swap
# ---------------------------------------------------------------------------


def text_swap(x: NliInstance, teacher=None,
              target_scheme: LabelScheme = LabelScheme.THREE_WAY) -> NliInstance:
    """Exchange premise and hypothesis, relabelling by the first-order rule.

    Contradiction survives the swap unchanged.  Entailment and neutral
    become undeterminable: a teacher model labels the swapped pair in
    three-way mode, while the binary non-contradiction evaluation mode
    maps them to ``non-contradiction`` directly.  The id is preserved, so
    the swap is an involution on contradiction instances.
    """
    swapped_premise, swapped_hypothesis = x.hypothesis, x.premise
    if x.gold == "contradiction":
        gold = "contradiction"
    elif x.gold in LABEL_NAMES:
        if teacher is not None:
            probe = NliInstance(
                id=x.id, premise=swapped_premise, hypothesis=swapped_hypothesis,
                gold=x.gold, source=x.source,
            )
            probs = np.asarray(teacher.predict_proba([probe]))[0]
            gold = LABEL_NAMES[int(probs.argmax())]
        elif target_scheme is LabelScheme.NOT_C_C:
            gold = "non-contradiction"
        else:
            raise AugmentError(
                f"instance {x.id!r}: swapped label for {x.gold!r} is undeterminable "
                "without a teacher in three-way mode"
            )
    else:
        raise AugmentError(f"instance {x.id!r}: text swap requires a three-way label")
    return NliInstance(
        id=x.id, premise=swapped_premise, hypothesis=swapped_hypothesis,
        gold=gold, source=x.source,
    )


def swap_dataset_for_eval(data: Dataset, name: str | None = None) -> Dataset:
    """Swap every pair into a binary non-contradiction evaluation set.

    This is the text-fragment-swap test construction: no teacher is
    needed because evaluation only asks contradiction vs not.
    """
    if data.scheme is not LabelScheme.THREE_WAY:
        raise AugmentError("swap_dataset_for_eval expects a three-way dataset")
    swapped = tuple(
        text_swap(inst, target_scheme=LabelScheme.NOT_C_C) for inst in data.instances
    )
    return Dataset(
        name=name or f"{data.name}-swapped", split=data.split,
        scheme=LabelScheme.NOT_C_C, instances=swapped,
    )


# ---------------------------------------------------------------------------
# Synonym substitution
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EmbeddingTable:
    """Token -> dense vector table loaded from a text file."""

    vectors: Mapping[str, np.ndarray]
    dim: int

    def get(self, token: str) -> np.ndarray | None:
        return self.vectors.get(token)


def load_embeddings(path: str | Path) -> EmbeddingTable:
    """Read ``token v1 ... vd`` lines; every vector must share one dimension."""
    path = Path(path)
    vectors: dict[str, np.ndarray] = {}
    dim: int | None = None
    with path.open("r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            parts = line.rstrip("\n").split()
            if not parts:
                continue
            token, *values = parts
            if dim is None:
                dim = len(values)
                if dim == 0:
                    raise CorpusError(f"{path}:{lineno}: embedding line has no values")
            elif len(values) != dim:
                raise CorpusError(
                    f"{path}:{lineno}: expected {dim} values, got {len(values)}"
                )
            vectors[token] = np.asarray([float(v) for v in values])
    if dim is None:
        raise CorpusError(f"{path}: empty embedding file")
    return EmbeddingTable(vectors=vectors, dim=dim)


_CONTENT_POS = frozenset({"n", "v", "a", "noun", "verb", "adj", "adjective"})


@dataclass(frozen=True)
class SynonymLexicon:
    """Token -> synonym candidates, each entry tagged with a coarse POS."""

    entries: Mapping[str, tuple[tuple[str, tuple[str, ...]], ...]]

    def candidates(self, token: str) -> tuple[str, ...]:
        """Candidates across content POS tags, deduplicated, never the token itself."""
        seen: list[str] = []
        for pos, cands in self.entries.get(token, ()):
            if pos and pos.lower() not in _CONTENT_POS:
                continue
            for candidate in cands:
                if candidate != token and candidate not in seen:
                    seen.append(candidate)
        return tuple(seen)


def load_lexicon(path: str | Path) -> SynonymLexicon:
    """Read TSV rows ``token<TAB>pos<TAB>cand1,cand2,...``."""
    path = Path(path)
    entries: dict[str, list[tuple[str, tuple[str, ...]]]] = {}
    with path.open("r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise CorpusError(f"{path}:{lineno}: expected 3 tab-separated columns")
            token, pos, cands = parts
            candidates = tuple(c for c in cands.split(",") if c and c != token)
            entries.setdefault(token, []).append((pos, candidates))
    return SynonymLexicon(entries={t: tuple(v) for t, v in entries.items()})


def _window_vector(tokens: Sequence[str], center: int, replacement: str | None,
                   embeddings: EmbeddingTable, window: int) -> np.ndarray:
    """Coordinatewise max over window-token embeddings around ``center``."""
    half = max(0, (window - 1) // 2)
    lo, hi = max(0, center - half), min(len(tokens), center + half + 1)
    pooled = np.full(embeddings.dim, -np.inf)
    any_vector = False
    for position in range(lo, hi):
        token = replacement if (position == center and replacement) else tokens[position]
        vector = embeddings.get(token)
        if vector is not None:
            pooled = np.maximum(pooled, vector)
            any_vector = True
    if not any_vector:
        return np.zeros(embeddings.dim)
    return pooled


def _cosine(u: np.ndarray, v: np.ndarray) -> float:
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        return 0.0  # zero-vector cosine defined as 0, so the gate rejects
    return float(u @ v / (nu * nv))


def synonym_substitute(x: NliInstance, lexicon: SynonymLexicon,
                       embeddings: EmbeddingTable, seed: int = 0,
                       window: int = 3, cosine_gate: float = 0.0) -> NliInstance:
    """Replace hypothesis content words with embedding-gated synonyms.

    For each content word with lexicon candidates, in order: pool the
    original and candidate windows (replaced word plus one neighbour on
    each side) by coordinatewise max over embeddings; a candidate
    survives iff the cosine between the pooled windows exceeds the gate.
    One surviving candidate is picked uniformly at random.  The premise,
    label, and token count never change.
    """
    rng = _instance_rng(seed, x.id)
    tokens = list(x.hypothesis)
    for index in content_word_indices(x.hypothesis):
        token = x.hypothesis[index]
        candidates = lexicon.candidates(token)
        if not candidates:
            continue
        if embeddings.get(token) is None:
            logger.debug("no embedding for %r in %s; word skipped", token, x.id)
            continue
        original = _window_vector(x.hypothesis, index, None, embeddings, window)
        accepted = [
            candidate for candidate in candidates
            if embeddings.get(candidate) is not None
            and _cosine(
                original,
                _window_vector(x.hypothesis, index, candidate, embeddings, window),
            ) > cosine_gate
        ]
        if accepted:
            tokens[index] = accepted[int(rng.integers(0, len(accepted)))]
    return NliInstance(
        id=x.id, premise=x.premise, hypothesis=tuple(tokens),
        gold=x.gold, source=x.source,
    )


# ---------------------------------------------------------------------------
# External transform protocol (masked-LM substitution, paraphrase)
# ---------------------------------------------------------------------------

TRANSFORM_KINDS = ("maskedSubstitute", "paraphrase")


class TransformClientError(RuntimeError):
    """Transport-level failure talking to the transform service."""


@dataclass(frozen=True)
class TransformRequest:
    id: str
    kind: str
    text: str
    params: Mapping[str, float | int] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(
            {"id": self.id, "kind": self.kind, "text": self.text,
             "params": dict(self.params)},
            sort_keys=True,
        )


@dataclass(frozen=True)
class TransformResponse:
    id: str
    text: str
    status: str

    @classmethod
    def from_json(cls, line: str) -> "TransformResponse":
        try:
            payload = json.loads(line)
        except json.JSONDecodeError as exc:
            raise TransformClientError(f"malformed response line: {exc}") from exc
        try:
            return cls(id=payload["id"], text=payload["text"], status=payload["status"])
        except KeyError as exc:
            raise TransformClientError(f"response missing field {exc}") from None


class PipeTransformClient:
    """JSON-lines request/response over a subprocess pipe."""

    def __init__(self, argv: Sequence[str]):
        self.argv = list(argv)
        self._proc: subprocess.Popen | None = None

    def _process(self) -> subprocess.Popen:
        if self._proc is None or self._proc.poll() is not None:
            self._proc = subprocess.Popen(
                self.argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                text=True, bufsize=1,
            )
        return self._proc

    def send(self, request: TransformRequest) -> TransformResponse:
        proc = self._process()
        try:
            proc.stdin.write(request.to_json() + "\n")
            proc.stdin.flush()
            line = proc.stdout.readline()
        except (BrokenPipeError, OSError) as exc:
            raise TransformClientError(f"transform service pipe failed: {exc}") from exc
        if not line:
            raise TransformClientError("transform service closed the stream")
        return TransformResponse.from_json(line)

    def close(self) -> None:
        if self._proc is not None:
            if self._proc.stdin and not self._proc.stdin.closed:
                self._proc.stdin.close()
            if self._proc.poll() is None:
                self._proc.wait(timeout=10)
            if self._proc.stdout and not self._proc.stdout.closed:
                self._proc.stdout.close()
        self._proc = None

    def __enter__(self) -> "PipeTransformClient":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()


class CallableTransformClient:
    """In-process client backed by a plain function (tests, local models)."""

    def __init__(self, fn: Callable[[TransformRequest], TransformResponse]):
        self.fn = fn

    def send(self, request: TransformRequest) -> TransformResponse:
        return self.fn(request)


def echo_client() -> CallableTransformClient:
    """Identity transform: returns the request text unchanged."""
    return CallableTransformClient(
        lambda req: TransformResponse(id=req.id, text=req.text, status="ok")
    )


def mask_count(n_content: int, mask_fraction: float = MASK_FRACTION) -> int:
    """floor(fraction * count), minimum 1 whenever there is a content word."""
    if n_content <= 0:
        return 0
    return max(1, math.floor(mask_fraction * n_content))


def build_transform_request(x: NliInstance, kind: str, seed: int = 0,
                            mask_fraction: float = MASK_FRACTION,
                            candidate_pool: int = CANDIDATE_POOL,
                            beam: int = BEAM_SIZE) -> TransformRequest:
    """Assemble the wire request for one instance (mask selection included)."""
    if kind not in TRANSFORM_KINDS:
        raise AugmentError(f"unknown transform kind {kind!r}; valid: {TRANSFORM_KINDS}")
    if kind == "maskedSubstitute":
        indices = content_word_indices(x.hypothesis)
        k = mask_count(len(indices), mask_fraction)
        rng = _instance_rng(seed, x.id)
        chosen = set(
            rng.choice(indices, size=k, replace=False).tolist() if k else []
        )
        tokens = [
            MASK_TOKEN if i in chosen else t for i, t in enumerate(x.hypothesis)
        ]
        return TransformRequest(
            id=x.id, kind=kind, text=" ".join(tokens),
            params={"mask_fraction": mask_fraction, "candidate_pool": candidate_pool},
        )
    return TransformRequest(
        id=x.id, kind=kind, text=" ".join(x.hypothesis), params={"beam": beam},
    )


def external_transform(x: NliInstance, kind: str, client, seed: int = 0,
                       mask_fraction: float = MASK_FRACTION,
                       candidate_pool: int = CANDIDATE_POOL,
                       beam: int = BEAM_SIZE) -> NliInstance:
    """Replace the hypothesis with the transform service output.

    Service errors, mismatched ids, and empty outputs raise, so the
    calling pipeline drops the instance and counts it; nothing is ever
    passed through silently.
    """
    request = build_transform_request(x, kind, seed, mask_fraction, candidate_pool, beam)
    try:
        response = client.send(request)
    except TransformClientError as exc:
        raise AugmentError(f"instance {x.id!r}: transform failed: {exc}") from exc
    if response.id != request.id:
        raise AugmentError(
            f"instance {x.id!r}: response id {response.id!r} does not match"
        )
    if response.status != "ok":
        raise AugmentError(f"instance {x.id!r}: service status {response.status!r}")
    hypothesis = tokenize(response.text)
    if not hypothesis:
        raise AugmentError(f"instance {x.id!r}: service returned empty text")
    return NliInstance(
        id=x.id, premise=x.premise, hypothesis=hypothesis, gold=x.gold, source=x.source,
    )


# ---------------------------------------------------------------------------
# Dataset-level pipeline
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AugmentSummary:
    method: str
    input_count: int
    generated: int
    dropped: int

    def __post_init__(self) -> None:
        assert self.input_count == self.generated + self.dropped


def _retag(inst: NliInstance, method: str) -> NliInstance:
    return NliInstance(
        id=f"{inst.id}#{method}", premise=inst.premise, hypothesis=inst.hypothesis,
        gold=inst.gold, source=f"{inst.source}#{method}",
    )


def augment_dataset(data: Dataset, method: str, *, teacher=None,
                    lexicon: SynonymLexicon | None = None,
                    embeddings: EmbeddingTable | None = None,
                    client=None, seed: int = 0,
                    window: int = 3, cosine_gate: float = 0.0,
                    mask_fraction: float = MASK_FRACTION,
                    candidate_pool: int = CANDIDATE_POOL,
                    beam: int = BEAM_SIZE) -> tuple[Dataset, AugmentSummary]:
    """Produce original + augmented instances (one per original, minus drops).

    Original instances are never modified; augmented copies are re-tagged
    with the method in both id and source.
    """
    if data.scheme is not LabelScheme.THREE_WAY:
        raise AugmentError("augmentation expects a three-way training set")
    if method not in AUGMENT_METHODS:
        raise AugmentError(f"unknown method {method!r}; valid: {AUGMENT_METHODS}")
    if method == "synonym" and (lexicon is None or embeddings is None):
        raise AugmentError("synonym substitution needs a lexicon and embeddings")
    if method in ("masked_lm", "paraphrase") and client is None:
        raise AugmentError(f"method {method!r} needs a transform client")

    augmented: list[NliInstance] = []
    dropped = 0
    for inst in data.instances:
        try:
            if method == "text_swap":
                new = text_swap(inst, teacher=teacher)
            elif method == "synonym":
                new = synonym_substitute(inst, lexicon, embeddings, seed,
                                         window, cosine_gate)
            elif method == "masked_lm":
                new = external_transform(inst, "maskedSubstitute", client, seed,
                                         mask_fraction, candidate_pool, beam)
            else:
                new = external_transform(inst, "paraphrase", client, seed,
                                         mask_fraction, candidate_pool, beam)
        except AugmentError as exc:
            logger.warning("dropped %s: %s", inst.id, exc)
            dropped += 1
            continue
        augmented.append(_retag(new, method))

    summary = AugmentSummary(
        method=method, input_count=len(data), generated=len(augmented), dropped=dropped
    )
    combined = Dataset(
        name=f"{data.name}+{method}", split=data.split, scheme=data.scheme,
        instances=data.instances + tuple(augmented),
    )
    return combined, summary


def augmented_subset(data: Dataset, method: str) -> tuple[NliInstance, ...]:
    """Recover the instances a given augmentation method produced."""
    suffix = f"#{method}"
    return tuple(i for i in data.instances if i.source.endswith(suffix))


def auto_quality(augmented: Sequence[NliInstance] | Dataset, judge) -> float:
    """Fraction of augmented instances whose judge argmax matches their label."""
    instances = augmented.instances if isinstance(augmented, Dataset) else tuple(augmented)
    if not instances:
        raise AugmentError("auto_quality needs a non-empty augmented set")
    probs = np.asarray(judge.predict_proba(instances))
    predicted = probs.argmax(axis=1)
    golds = [inst.gold for inst in instances]
    hits = sum(
        1 for p, g in zip(predicted, golds) if LABEL_NAMES[int(p)] == g
    )
    return hits / len(instances)
