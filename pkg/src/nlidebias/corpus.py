"""Canonical data model: labels, schemes, instances, datasets, and corpus I/O.

Datasets are immutable after construction and safe to share between
parallel readers.  The canonical on-disk format is a 4-column TSV
(id, premise, hypothesis, label) with UTF-8 encoding and LF line
endings; JSONL ingestion covers the common distribution format of
crowd-sourced text-pair corpora (``gold_label``/``sentence1``/
``sentence2`` fields).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum, IntEnum
from pathlib import Path
from typing import Sequence

import numpy as np

__all__ = [
    "Label",
    "LABEL_NAMES",
    "LabelScheme",
    "NliInstance",
    "Dataset",
    "SyntheticBiasSpec",
    "SyntheticDatasets",
    "CorpusError",
    "tokenize",
    "label_index",
    "load_jsonl",
    "load_tsv",
    "save_tsv",
    "generate_synthetic",
    "extract_hard_subset",
]


class CorpusError(ValueError):
    """Raised for malformed corpus files or invalid dataset constructions."""


class Label(IntEnum):
    """Three-way verdict with the fixed project-wide index order.

    The order E=0, N=1, C=2 is load-bearing: probability vectors are
    indexed by it and argmax ties break toward the lowest index.
    """

    ENTAILMENT = 0
    NEUTRAL = 1
    CONTRADICTION = 2


LABEL_NAMES = ("entailment", "neutral", "contradiction")

_LABEL_BY_NAME = {name: Label(i) for i, name in enumerate(LABEL_NAMES)}


def label_index(gold: str) -> int:
    """Map a canonical three-way label string to its fixed index."""
    try:
        return int(_LABEL_BY_NAME[gold])
    except KeyError:
        raise CorpusError(f"unknown three-way label: {gold!r}") from None


class LabelScheme(Enum):
    """Evaluation label scheme; every dataset declares exactly one."""

    THREE_WAY = "three_way"
    NOT_E_E = "not_e_e"
    NOT_C_C = "not_c_c"
    E_C = "e_c"
    N_E = "n_e"

    @property
    def allowed_labels(self) -> tuple[str, ...]:
        return _SCHEME_LABELS[self]

    @classmethod
    def parse(cls, text: str) -> "LabelScheme":
        key = text.strip().lower()
        for scheme in cls:
            if scheme.value == key:
                return scheme
        raise CorpusError(
            f"unknown label scheme {text!r}; expected one of "
            + ", ".join(s.value for s in cls)
        )


_SCHEME_LABELS = {
    LabelScheme.THREE_WAY: LABEL_NAMES,
    LabelScheme.NOT_E_E: ("non-entailment", "entailment"),
    LabelScheme.NOT_C_C: ("non-contradiction", "contradiction"),
    LabelScheme.E_C: ("entailment", "contradiction"),
    LabelScheme.N_E: ("neutral", "entailment"),
}


@dataclass(frozen=True)
class NliInstance:
    """A single premise/hypothesis token pair with gold label and source tag."""

    id: str
    premise: tuple[str, ...]
    hypothesis: tuple[str, ...]
    gold: str
    source: str = ""

    def __post_init__(self) -> None:
        if not self.premise or not self.hypothesis:
            raise CorpusError(
                f"instance {self.id!r}: premise and hypothesis must be non-empty"
            )


@dataclass(frozen=True)
class Dataset:
    """An immutable named collection of instances under one label scheme.

    Loaded and generated datasets are always non-empty; derived subsets
    (e.g. hard subsets) may be empty.
    """

    name: str
    split: str
    scheme: LabelScheme
    instances: tuple[NliInstance, ...]

    def __post_init__(self) -> None:
        allowed = set(self.scheme.allowed_labels)
        for inst in self.instances:
            if inst.gold not in allowed:
                raise CorpusError(
                    f"dataset {self.name!r}: instance {inst.id!r} has label "
                    f"{inst.gold!r} outside scheme {self.scheme.value}"
                )

    def __len__(self) -> int:
        return len(self.instances)

    def __iter__(self):
        return iter(self.instances)

    def gold_indices(self) -> np.ndarray:
        """Integer gold labels; only defined under the three-way scheme."""
        if self.scheme is not LabelScheme.THREE_WAY:
            raise CorpusError(
                f"dataset {self.name!r} uses scheme {self.scheme.value}; "
                "integer gold labels are only defined for three_way"
            )
        return np.array([label_index(i.gold) for i in self.instances], dtype=np.int64)

    def replace_instances(self, instances: Sequence[NliInstance], name: str | None = None,
                          split: str | None = None) -> "Dataset":
        return Dataset(
            name=name if name is not None else self.name,
            split=split if split is not None else self.split,
            scheme=self.scheme,
            instances=tuple(instances),
        )


def tokenize(text: str) -> tuple[str, ...]:
    """Lowercase, split on whitespace, and detach punctuation into own tokens.

    Maximal alphanumeric runs become tokens; every other non-space
    character is emitted as a single-character token.  Empty input
    yields the empty sequence.  The rule is deterministic and
    idempotent under join-with-spaces.
    """
    tokens: list[str] = []
    run: list[str] = []
    for ch in text.lower():
        if ch.isalnum():
            run.append(ch)
            continue
        if run:
            tokens.append("".join(run))
            run = []
        if not ch.isspace():
            tokens.append(ch)
    if run:
        tokens.append("".join(run))
    return tuple(tokens)


# ---------------------------------------------------------------------------
# File ingestion
# ---------------------------------------------------------------------------

_JSONL_LABELS = {
    "entailment": "entailment",
    "neutral": "neutral",
    "contradiction": "contradiction",
}


def load_jsonl(path: str | Path, scheme: LabelScheme = LabelScheme.THREE_WAY,
               name: str | None = None, split: str = "train") -> tuple[Dataset, int]:
    """Load a JSONL corpus; returns (dataset, skipped_line_count).

    Lines with ``gold_label == "-"`` (no annotator majority) are skipped
    and counted.  Malformed lines and unknown labels raise with the
    1-based line number.  Fields other than gold_label/sentence1/
    sentence2 are ignored.
    """
    path = Path(path)
    if scheme is not LabelScheme.THREE_WAY:
        raise CorpusError("JSONL ingestion is defined for the three_way scheme")
    dataset_name = name or path.stem
    instances: list[NliInstance] = []
    skipped = 0
    with path.open("r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: malformed JSON line: {exc}") from exc
            if not isinstance(record, dict):
                raise CorpusError(f"{path}:{lineno}: expected a JSON object")
            try:
                gold = record["gold_label"]
                premise_text = record["sentence1"]
                hypothesis_text = record["sentence2"]
            except KeyError as exc:
                raise CorpusError(f"{path}:{lineno}: missing field {exc}") from None
            if gold == "-":
                skipped += 1
                continue
            if gold not in _JSONL_LABELS:
                raise CorpusError(f"{path}:{lineno}: unknown gold_label {gold!r}")
            instances.append(
                NliInstance(
                    id=f"{dataset_name}:{lineno}",
                    premise=tokenize(premise_text),
                    hypothesis=tokenize(hypothesis_text),
                    gold=_JSONL_LABELS[gold],
                    source=dataset_name,
                )
            )
    if not instances:
        raise CorpusError(f"{path}: no usable instances")
    return Dataset(dataset_name, split, scheme, tuple(instances)), skipped


def load_tsv(path: str | Path, scheme: LabelScheme = LabelScheme.THREE_WAY,
             name: str | None = None, split: str = "train",
             source: str | None = None) -> Dataset:
    """Load the canonical 4-column TSV (id, premise, hypothesis, label)."""
    path = Path(path)
    dataset_name = name or path.stem
    instances: list[NliInstance] = []
    with path.open("r", encoding="utf-8", newline="") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            columns = line.split("\t")
            if len(columns) != 4:
                raise CorpusError(
                    f"{path}:{lineno}: expected 4 tab-separated columns, got {len(columns)}"
                )
            inst_id, premise_text, hypothesis_text, gold = columns
            instances.append(
                NliInstance(
                    id=inst_id,
                    premise=tuple(premise_text.split(" ")),
                    hypothesis=tuple(hypothesis_text.split(" ")),
                    gold=gold,
                    source=source if source is not None else dataset_name,
                )
            )
    if not instances:
        raise CorpusError(f"{path}: no usable instances")
    return Dataset(dataset_name, split, scheme, tuple(instances))


def save_tsv(dataset: Dataset, path: str | Path) -> None:
    """Write the canonical TSV; load/save round-trips byte-identically."""
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as handle:
        for inst in dataset.instances:
            handle.write(
                "\t".join(
                    (inst.id, " ".join(inst.premise), " ".join(inst.hypothesis), inst.gold)
                )
                + "\n"
            )


# ---------------------------------------------------------------------------
# Synthetic planted-bias generator
# ---------------------------------------------------------------------------

BIAS_KINDS = ("hypothesisCue", "wordOverlap", "lengthSkew")

_N_CONTENT = 6  # content symbols; pairs (sym_a, sym_b) fully determine the label
_MIN_FILLER = 24

# hypothesis length band per label for the lengthSkew bias
_LENGTH_BANDS = ((4, 6), (7, 9), (10, 12))
_LENGTH_ALL = (4, 12)


@dataclass(frozen=True)
class SyntheticBiasSpec:
    """Recipe for a planted-bias corpus with biased and anti-biased test splits.

    ``cue_strength`` is the probability that the planted cue agrees with
    the gold label in the train/dev/biased-test splits.  Split sizes
    default to ``instances_per_split`` and may be overridden per split.
    """

    vocabulary_size: int = 120
    instances_per_split: int = 2000
    cue_strength: float = 0.8
    bias_kind: str = "hypothesisCue"
    seed: int = 0
    train_size: int | None = None
    dev_size: int | None = None
    test_size: int | None = None

    def __post_init__(self) -> None:
        if self.bias_kind not in BIAS_KINDS:
            raise CorpusError(
                f"unknown bias_kind {self.bias_kind!r}; expected one of {BIAS_KINDS}"
            )
        if not 0.0 <= self.cue_strength <= 1.0:
            raise CorpusError("cue_strength must lie in [0, 1]")
        minimum = 3 + _N_CONTENT + _MIN_FILLER
        if self.vocabulary_size < minimum:
            raise CorpusError(
                f"vocabulary_size={self.vocabulary_size} too small: need at least "
                f"{minimum} tokens (3 cues + {_N_CONTENT} content symbols + "
                f"{_MIN_FILLER} fillers)"
            )
        for size_name in ("instances_per_split", "train_size", "dev_size", "test_size"):
            value = getattr(self, size_name)
            if value is not None and value < 1:
                raise CorpusError(f"{size_name} must be positive")

    def size_of(self, split: str) -> int:
        override = {
            "train": self.train_size,
            "dev": self.dev_size,
            "test_biased": self.test_size,
            "test_anti_biased": self.test_size,
        }[split]
        return override if override is not None else self.instances_per_split


@dataclass(frozen=True)
class SyntheticDatasets:
    train: Dataset
    dev: Dataset
    test_biased: Dataset
    test_anti_biased: Dataset

    def __iter__(self):
        yield from (self.train, self.dev, self.test_biased, self.test_anti_biased)


def synthetic_vocabulary(spec: SyntheticBiasSpec) -> dict[str, tuple[str, ...]]:
    """Partition the vocabulary into cue, content, and filler tokens."""
    n_filler = spec.vocabulary_size - 3 - _N_CONTENT
    return {
        "cue": tuple(f"cue{i}" for i in range(3)),
        "content": tuple(f"sym{i:02d}" for i in range(_N_CONTENT)),
        "filler": tuple(f"w{i:03d}" for i in range(n_filler)),
    }


def cue_rule_prediction(instance: NliInstance, bias_kind: str = "hypothesisCue") -> int:
    """The planted-cue decision rule, used as an oracle in tests.

    For hypothesisCue it reads the cue token; for wordOverlap it maps
    high overlap to entailment (breaking the remaining tie toward
    neutral); for lengthSkew it reads the hypothesis length band.
    """
    if bias_kind == "hypothesisCue":
        for token in instance.hypothesis:
            if token.startswith("cue"):
                return int(token[3:])
        raise CorpusError(f"instance {instance.id!r} carries no cue token")
    if bias_kind == "wordOverlap":
        premise_set = set(instance.premise)
        inside = sum(1 for t in instance.hypothesis if t in premise_set)
        high = inside / len(instance.hypothesis) >= 0.5
        return int(Label.ENTAILMENT) if high else int(Label.NEUTRAL)
    if bias_kind == "lengthSkew":
        length = len(instance.hypothesis)
        for idx, (lo, hi) in enumerate(_LENGTH_BANDS):
            if lo <= length <= hi:
                return idx
        return int(Label.NEUTRAL)
    raise CorpusError(f"unknown bias_kind {bias_kind!r}")


def _insert(rng: np.random.Generator, tokens: list[str], extra: Sequence[str]) -> list[str]:
    out = list(tokens)
    for token in extra:
        out.insert(int(rng.integers(0, len(out) + 1)), token)
    return out


def _make_instance(rng: np.random.Generator, spec: SyntheticBiasSpec,
                   vocab: dict[str, tuple[str, ...]], split: str, index: int,
                   anti: bool) -> NliInstance:
    cue_tokens, content, filler = vocab["cue"], vocab["content"], vocab["filler"]
    y = int(rng.integers(0, 3))
    # content pair: label = (b - a) mod 3, so neither side alone is informative
    a = int(rng.integers(0, _N_CONTENT))
    b = (a + y + 3 * int(rng.integers(0, _N_CONTENT // 3))) % _N_CONTENT

    premise_len = int(rng.integers(6, 13))
    premise = _insert(
        rng, list(rng.choice(filler, size=premise_len - 1)), [content[a]]
    )

    kind = spec.bias_kind
    if kind == "hypothesisCue":
        hyp_len = int(rng.integers(4, 10))
        if anti or rng.random() >= spec.cue_strength:
            cue = cue_tokens[int(rng.integers(0, 3))]
        else:
            cue = cue_tokens[y]
        hypothesis = _insert(
            rng, list(rng.choice(filler, size=hyp_len - 2)), [content[b], cue]
        )
    elif kind == "wordOverlap":
        hyp_len = int(rng.integers(4, 8))
        entailed = y == int(Label.ENTAILMENT)
        if anti:
            high = not entailed
        else:
            follow = rng.random() < spec.cue_strength
            high = entailed if follow else not entailed
        if high:
            start = int(rng.integers(0, max(1, len(premise) - (hyp_len - 1))))
            hypothesis = list(premise[start:start + hyp_len - 1]) + [content[b]]
        else:
            hypothesis = _insert(
                rng, list(rng.choice(filler, size=hyp_len - 1)), [content[b]]
            )
    else:  # lengthSkew
        if anti or rng.random() >= spec.cue_strength:
            hyp_len = int(rng.integers(_LENGTH_ALL[0], _LENGTH_ALL[1] + 1))
        else:
            lo, hi = _LENGTH_BANDS[y]
            hyp_len = int(rng.integers(lo, hi + 1))
        hypothesis = _insert(
            rng, list(rng.choice(filler, size=hyp_len - 1)), [content[b]]
        )

    return NliInstance(
        id=f"{kind}-{split}-{index:05d}",
        premise=tuple(premise),
        hypothesis=tuple(hypothesis),
        gold=LABEL_NAMES[y],
        source=f"synthetic-{kind}",
    )


def generate_synthetic(spec: SyntheticBiasSpec) -> SyntheticDatasets:
    """Generate train/dev/biased-test/anti-biased-test splits.

    Deterministic under ``spec.seed``: the same spec yields byte-identical
    datasets.  A separate content pattern fully determines the gold label
    in every split, while the planted cue agrees with the label with
    probability >= ``cue_strength`` in the biased splits and is
    independent of (hypothesisCue, lengthSkew) or anti-correlated with
    (wordOverlap) the label in the anti-biased test split.
    """
    vocab = synthetic_vocabulary(spec)
    root = np.random.SeedSequence(spec.seed)
    streams = root.spawn(4)
    splits = {}
    for stream, (split, anti) in zip(
        streams,
        (("train", False), ("dev", False), ("test_biased", False), ("test_anti_biased", True)),
    ):
        rng = np.random.default_rng(stream)
        instances = tuple(
            _make_instance(rng, spec, vocab, split, i, anti)
            for i in range(spec.size_of(split))
        )
        splits[split] = Dataset(
            name=f"synthetic-{spec.bias_kind}-{split}",
            split="train" if split == "train" else ("dev" if split == "dev" else "test"),
            scheme=LabelScheme.THREE_WAY,
            instances=instances,
        )
    return SyntheticDatasets(**splits)


def extract_hard_subset(data: Dataset, expert) -> Dataset:
    """Instances the expert misclassifies (argmax != gold), order preserved.

    ``expert`` is anything exposing ``predict_proba(instances) -> (n, 3)``.
    """
    if data.scheme is not LabelScheme.THREE_WAY:
        raise CorpusError("hard-subset extraction requires a three_way dataset")
    probs = np.asarray(expert.predict_proba(data.instances))
    predicted = probs.argmax(axis=1)
    gold = data.gold_indices()
    hard = tuple(
        inst for inst, p, g in zip(data.instances, predicted, gold) if p != g
    )
    return Dataset(f"{data.name}-hard", data.split, data.scheme, hard)
