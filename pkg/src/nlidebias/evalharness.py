"""Benchmark evaluation: scheme mappings, metrics, selection, and reports.

Three-way predictions are projected onto each dataset's label scheme
before scoring; predictions that fall outside a binary scheme's label
set (e.g. neutral under the entailment/contradiction scheme) count as
incorrect.  Reports are emitted deterministically as TSV or markdown
with strategy columns and dataset rows.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .corpus import Dataset, LABEL_NAMES, LabelScheme

__all__ = [
    "EvalError",
    "map_prediction",
    "accuracy",
    "mcc",
    "pearson",
    "RunMatrix",
    "CorrelationResult",
    "correlation_matrix",
    "Checkpoint",
    "select_model",
    "EvalEntry",
    "EvalSuite",
    "evaluate_model",
    "EvalReport",
    "emit_report",
    "write_predictions",
    "read_predictions",
]


class EvalError(ValueError):
    """Raised on invalid metric inputs or malformed harness files."""


# three-way verdict -> scheme label; None marks an always-wrong prediction
_SCHEME_MAP: dict[LabelScheme, tuple[str | None, str | None, str | None]] = {
    LabelScheme.THREE_WAY: LABEL_NAMES,
    LabelScheme.NOT_E_E: ("entailment", "non-entailment", "non-entailment"),
    LabelScheme.NOT_C_C: ("non-contradiction", "non-contradiction", "contradiction"),
    LabelScheme.E_C: ("entailment", None, "contradiction"),
    LabelScheme.N_E: ("entailment", "neutral", None),
}


def map_prediction(pred3: np.ndarray, scheme: LabelScheme) -> str | None:
    """Project a 3-way distribution onto a scheme label.

    Argmax breaks ties toward the lowest label index.  ``None`` means
    the prediction has no counterpart under the scheme and is counted
    incorrect by every metric.
    """
    pred3 = np.asarray(pred3, dtype=np.float64)
    if pred3.shape != (3,):
        raise EvalError(f"expected a 3-way distribution, got shape {pred3.shape}")
    return _SCHEME_MAP[scheme][int(pred3.argmax())]


def _mapped_labels(pred_probs: np.ndarray, scheme: LabelScheme) -> list[str | None]:
    pred_probs = np.asarray(pred_probs, dtype=np.float64)
    if pred_probs.ndim != 2 or pred_probs.shape[1] != 3:
        raise EvalError(f"expected an (n, 3) prediction matrix, got {pred_probs.shape}")
    table = _SCHEME_MAP[scheme]
    return [table[i] for i in pred_probs.argmax(axis=1)]


def accuracy(pred_probs: np.ndarray, golds: Sequence[str],
             scheme: LabelScheme = LabelScheme.THREE_WAY) -> float:
    """Fraction of scheme-mapped predictions equal to the gold labels."""
    golds = list(golds)
    if not golds:
        raise EvalError("accuracy is undefined on empty input")
    mapped = _mapped_labels(pred_probs, scheme)
    if len(mapped) != len(golds):
        raise EvalError("predictions and golds disagree in length")
    hits = sum(1 for m, g in zip(mapped, golds) if m is not None and m == g)
    return hits / len(golds)


def mcc(preds: Sequence, golds: Sequence) -> float:
    """Multi-class Matthews correlation (the R_K statistic).

    Predictions without a counterpart in the gold label set still count
    as their own confusion row.  A zero denominator (e.g. a constant
    predictor) is defined as 0.
    """
    preds = list(preds)
    golds = list(golds)
    if len(preds) != len(golds):
        raise EvalError("predictions and golds disagree in length")
    if len(preds) < 2:
        raise EvalError("mcc needs at least two instances")
    labels = sorted({str(x) for x in preds} | {str(x) for x in golds})
    index = {label: i for i, label in enumerate(labels)}
    k = len(labels)
    confusion = np.zeros((k, k), dtype=np.float64)
    for g, p in zip(golds, preds):
        confusion[index[str(g)], index[str(p)]] += 1.0

    correct = np.trace(confusion)
    total = confusion.sum()
    pred_counts = confusion.sum(axis=0)
    true_counts = confusion.sum(axis=1)
    cov = correct * total - true_counts @ pred_counts
    denom_pred = total * total - pred_counts @ pred_counts
    denom_true = total * total - true_counts @ true_counts
    denominator = np.sqrt(denom_pred) * np.sqrt(denom_true)
    if denominator == 0.0:
        return 0.0
    return float(cov / denominator)


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    """Standard Pearson correlation; zero variance is an error."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise EvalError("pearson expects two equal-length vectors")
    if len(x) < 2:
        raise EvalError("pearson needs at least two points")
    dx = x - x.mean()
    dy = y - y.mean()
    sx = np.sqrt(dx @ dx)
    sy = np.sqrt(dy @ dy)
    if sx == 0.0 or sy == 0.0:
        raise EvalError("pearson is undefined for a zero-variance input")
    return float(dx @ dy / (sx * sy))


@dataclass(frozen=True)
class RunMatrix:
    """Scores of many runs (rows) on many datasets (columns)."""

    run_ids: tuple[str, ...]
    dataset_names: tuple[str, ...]
    scores: np.ndarray

    def __post_init__(self) -> None:
        scores = np.asarray(self.scores, dtype=np.float64)
        expected = (len(self.run_ids), len(self.dataset_names))
        if scores.shape != expected:
            raise EvalError(f"score matrix shape {scores.shape} != {expected}")
        object.__setattr__(self, "scores", scores)

    @property
    def complete(self) -> bool:
        return bool(np.isfinite(self.scores).all())


@dataclass(frozen=True)
class CorrelationResult:
    dataset_names: tuple[str, ...]
    values: np.ndarray
    undefined: tuple[str, ...] = ()


def correlation_matrix(runs: RunMatrix) -> CorrelationResult:
    """Pairwise Pearson correlation between dataset columns.

    Constant columns are flagged undefined and their rows/columns
    filled with NaN (diagonal included).  The matrix is exactly
    symmetric with a unit diagonal elsewhere.
    """
    if len(runs.run_ids) < 2:
        raise EvalError("correlation needs at least two runs")
    if not runs.complete:
        raise EvalError("correlation requires a complete run matrix (no missing cells)")
    k = len(runs.dataset_names)
    values = np.full((k, k), np.nan)
    constant = [
        runs.dataset_names[j]
        for j in range(k)
        if np.allclose(runs.scores[:, j], runs.scores[0, j])
    ]
    flagged = set(constant)
    for i in range(k):
        if runs.dataset_names[i] in flagged:
            continue
        values[i, i] = 1.0
        for j in range(i + 1, k):
            if runs.dataset_names[j] in flagged:
                continue
            r = pearson(runs.scores[:, i], runs.scores[:, j])
            values[i, j] = r
            values[j, i] = r
    return CorrelationResult(runs.dataset_names, values, tuple(constant))


# ---------------------------------------------------------------------------
# Model selection
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Checkpoint:
    """One selectable model state; ``model`` predicts over instances."""

    epoch: int
    model: object

    def accuracy_on(self, dataset: Dataset) -> float:
        probs = self.model.predict_proba(dataset.instances)
        return accuracy(probs, [i.gold for i in dataset.instances], dataset.scheme)


SELECTION_STRATEGIES = ("origin", "mixed", "oracle")


def _best(checkpoints: Sequence[Checkpoint], score) -> Checkpoint:
    # strict improvement keeps the earliest epoch on ties
    ranked = sorted(checkpoints, key=lambda c: c.epoch)
    best, best_score = None, -np.inf
    for checkpoint in ranked:
        value = score(checkpoint)
        if value > best_score:
            best, best_score = checkpoint, value
    return best


def select_model(checkpoints: Sequence[Checkpoint], strategy: str,
                 dev_sets: Mapping[str, Dataset], origin: str | None = None):
    """Pick checkpoint(s) by dev accuracy under a selection strategy.

    origin: best on the in-domain dev set (``origin`` key, or the sole
    dev set).  mixed: best on the concatenation of all dev sets.
    oracle: best per dev set, returned as a name -> checkpoint mapping.
    Ties break toward the earliest epoch.
    """
    if not checkpoints:
        raise EvalError("no checkpoints to select from")
    if strategy not in SELECTION_STRATEGIES:
        raise EvalError(
            f"unknown selection strategy {strategy!r}; valid: {SELECTION_STRATEGIES}"
        )
    if not dev_sets:
        raise EvalError(f"selection strategy {strategy!r} requires dev sets")

    if strategy == "origin":
        key = origin if origin is not None else (
            "origin" if "origin" in dev_sets else None
        )
        if key is None:
            if len(dev_sets) == 1:
                key = next(iter(dev_sets))
            else:
                raise EvalError("origin selection needs an in-domain dev set name")
        if key not in dev_sets:
            raise EvalError(f"missing dev set {key!r} for origin selection")
        target = dev_sets[key]
        return _best(checkpoints, lambda c: c.accuracy_on(target))

    if strategy == "mixed":
        sets = list(dev_sets.values())

        def mixed_score(checkpoint: Checkpoint) -> float:
            hits = 0.0
            total = 0
            for data in sets:
                value = checkpoint.accuracy_on(data)
                hits += value * len(data)
                total += len(data)
            return hits / total

        return _best(checkpoints, mixed_score)

    return {
        name: _best(checkpoints, lambda c, d=data: c.accuracy_on(d))
        for name, data in dev_sets.items()
    }


# ---------------------------------------------------------------------------
# Suites and reports
# ---------------------------------------------------------------------------

METRICS = ("accuracy", "mcc")


@dataclass(frozen=True)
class EvalEntry:
    name: str
    dataset: Dataset
    metric: str = "accuracy"
    group: str = "adversarial"

    def __post_init__(self) -> None:
        if self.metric not in METRICS:
            raise EvalError(f"unknown metric {self.metric!r}; valid: {METRICS}")


@dataclass(frozen=True)
class EvalSuite:
    entries: tuple[EvalEntry, ...]

    def __post_init__(self) -> None:
        names = [e.name for e in self.entries]
        if len(set(names)) != len(names):
            raise EvalError("dataset names must be unique within a suite")

    def groups(self) -> dict[str, tuple[str, ...]]:
        out: dict[str, list[str]] = {}
        for entry in self.entries:
            out.setdefault(entry.group, []).append(entry.name)
        return {g: tuple(v) for g, v in out.items()}


def score_entry(model, entry: EvalEntry) -> float:
    probs = np.asarray(model.predict_proba(entry.dataset.instances))
    golds = [i.gold for i in entry.dataset.instances]
    if entry.metric == "accuracy":
        return accuracy(probs, golds, entry.dataset.scheme)
    mapped = _mapped_labels(probs, entry.dataset.scheme)
    verdicts = [m if m is not None else "<out-of-scheme>" for m in mapped]
    return mcc(verdicts, golds)


def evaluate_model(model, suite: EvalSuite) -> dict[str, float]:
    """Score a fitted model on every suite entry; evaluation never mutates."""
    return {entry.name: score_entry(model, entry) for entry in suite.entries}


@dataclass
class EvalReport:
    """Per-dataset scores for one or more strategy columns, plus metadata."""

    columns: tuple[str, ...]
    rows: tuple[str, ...]
    scores: dict[str, dict[str, float]]  # column -> row -> score
    groups: dict[str, tuple[str, ...]] = field(default_factory=dict)
    metadata: dict[str, str] = field(default_factory=dict)

    def group_average(self, column: str, group: str) -> float:
        members = self.groups[group]
        return float(np.mean([self.scores[column][row] for row in members]))

    def table_rows(self) -> list[tuple[str, list[float]]]:
        out = [(row, [self.scores[c][row] for c in self.columns]) for row in self.rows]
        for group in sorted(self.groups):
            out.append(
                (f"Avg. ({group})",
                 [self.group_average(c, group) for c in self.columns])
            )
        return out


def _format_score(value: float) -> str:
    return f"{value:.6f}"


def emit_report(report: EvalReport, fmt: str, path: str | Path) -> Path:
    """Write the report as TSV or markdown; identical reports yield identical bytes."""
    path = Path(path)
    lines: list[str] = []
    if fmt == "tsv":
        for key in sorted(report.metadata):
            lines.append(f"# {key}\t{report.metadata[key]}")
        lines.append("\t".join(["dataset", *report.columns]))
        for row, values in report.table_rows():
            lines.append("\t".join([row, *[_format_score(v) for v in values]]))
    elif fmt == "markdown":
        lines.append("# Evaluation report")
        lines.append("")
        for key in sorted(report.metadata):
            lines.append(f"- {key}: {report.metadata[key]}")
        lines.append("")
        lines.append("| dataset | " + " | ".join(report.columns) + " |")
        lines.append("|---" * (len(report.columns) + 1) + "|")
        for row, values in report.table_rows():
            lines.append(
                "| " + row + " | "
                + " | ".join(_format_score(v) for v in values) + " |"
            )
    else:
        raise EvalError(f"unknown report format {fmt!r}; use 'tsv' or 'markdown'")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


# ---------------------------------------------------------------------------
# Predictions files (harness-only interchange)
# ---------------------------------------------------------------------------


def write_predictions(path: str | Path, ids: Sequence[str], probs: np.ndarray) -> None:
    """TSV rows: instance id, p_E, p_N, p_C."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.shape != (len(ids), 3):
        raise EvalError(f"probs shape {probs.shape} does not match {len(ids)} ids")
    with Path(path).open("w", encoding="utf-8", newline="") as handle:
        for inst_id, row in zip(ids, probs):
            cells = "\t".join(repr(float(v)) for v in row)
            handle.write(f"{inst_id}\t{cells}\n")


def read_predictions(path: str | Path) -> tuple[list[str], np.ndarray]:
    ids: list[str] = []
    rows: list[list[float]] = []
    with Path(path).open("r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise EvalError(f"{path}:{lineno}: expected 4 columns")
            ids.append(parts[0])
            try:
                rows.append([float(parts[1]), float(parts[2]), float(parts[3])])
            except ValueError as exc:
                raise EvalError(f"{path}:{lineno}: bad probability: {exc}") from None
    return ids, np.asarray(rows, dtype=np.float64)
