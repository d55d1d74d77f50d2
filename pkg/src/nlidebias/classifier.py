"""Weighted multinomial softmax classifiers over text-pair features.

The same machinery serves as both the prime model and the bias-only
experts: a 3-class softmax regression trained by mini-batch SGD on a
weighted cross-entropy objective.  Training supports a per-instance
logit offset so product-of-experts compositions can flow gradients
through the prime model only; the offset never participates in
inference.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from sklearn.base import BaseEstimator, ClassifierMixin

from .corpus import Dataset, LABEL_NAMES, label_index
from .features import (
    DEFAULT_MAX_PAIRS,
    DEFAULT_PAIR_BUCKETS,
    EXPERT_FEATURE_NAMES,
    FeatureSpace,
    make_extractor,
)

__all__ = [
    "EPS",
    "N_CLASSES",
    "TrainingError",
    "clamp_probs",
    "log_clamped",
    "labels_of",
    "weighted_batch_loss",
    "TrainingConfig",
    "SoftmaxClassifier",
    "TextPairClassifier",
    "BiasExpert",
    "train_bias_expert",
    "gradient_check",
    "save_checkpoint",
    "load_checkpoint",
]

EPS = 1e-12
N_CLASSES = 3


class TrainingError(RuntimeError):
    """Raised on invalid training inputs or numerical divergence."""


def clamp_probs(p: np.ndarray) -> np.ndarray:
    """Clamp components into [EPS, 1] and renormalize rows to sum to 1.

    The final clip keeps every component >= EPS even after the division;
    it perturbs the row sum by at most a few EPS, far inside the 1e-9
    sum tolerance.
    """
    p = np.asarray(p, dtype=np.float64)
    clamped = np.clip(p, EPS, 1.0)
    total = clamped.sum(axis=-1, keepdims=True)
    return np.clip(clamped / total, EPS, 1.0)


def log_clamped(p: np.ndarray) -> np.ndarray:
    """Elementwise log after clamping; never produces -inf."""
    return np.log(np.clip(np.asarray(p, dtype=np.float64), EPS, None))


def softmax(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def labels_of(instances, y=None) -> np.ndarray:
    """Integer gold labels for instances, or normalize a provided y."""
    if y is None:
        return np.array([label_index(i.gold) for i in instances], dtype=np.int64)
    y = np.asarray(y)
    if y.dtype.kind in "UO":
        return np.array([label_index(str(v)) for v in y], dtype=np.int64)
    return y.astype(np.int64)


def weighted_batch_loss(losses: Sequence[float], weights: Sequence[float]) -> float:
    """Normalized weighted mean of per-instance losses: sum(a*l) / sum(a)."""
    losses = np.asarray(losses, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if losses.shape != weights.shape:
        raise TrainingError(
            f"losses and weights disagree in length: {losses.shape} vs {weights.shape}"
        )
    if np.any(weights < 0):
        raise TrainingError("instance weights must be non-negative")
    total = weights.sum()
    if total <= 0.0:
        raise TrainingError("batch rejected: all instance weights are zero")
    return float(weights @ losses / total)


@dataclass
class TrainingConfig:
    """Hyperparameters shared by experts and prime models.

    These defaults are fixed here (and echoed into output metadata)
    rather than tuned per experiment.
    """

    learning_rate: float = 0.5
    epochs: int = 30
    batch_size: int = 64
    l2: float = 1e-6
    seed: int = 0
    patience: int | None = None
    selection: str = "origin"

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise TrainingError("batch_size must be >= 1")
        if self.epochs < 1:
            raise TrainingError("epochs must be >= 1")

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _loss_and_grad(coef, intercept, X, y, weights, logit_offset, l2):
    """Weighted CE (+ L2 on coef) and its analytic gradient on one batch.

    Overflow is deliberately allowed to propagate as inf/nan: the
    training loop detects divergence through the non-finite loss.
    """
    with np.errstate(over="ignore", invalid="ignore"):
        z = X @ coef.T + intercept
        if logit_offset is not None:
            z = z + logit_offset
        z = np.asarray(z)
        log_probs = z - _logsumexp(z)
        per_instance = -log_probs[np.arange(len(y)), y]
        data_loss = weighted_batch_loss(per_instance, weights)
        loss = data_loss + l2 * float((coef * coef).sum())

        norm = weights / weights.sum()
        delta = np.exp(log_probs)
        delta[np.arange(len(y)), y] -= 1.0
        delta *= norm[:, None]
        grad_coef = np.asarray((X.T @ delta).T) + 2.0 * l2 * coef
        grad_intercept = delta.sum(axis=0)
    return loss, grad_coef, grad_intercept


def _logsumexp(z: np.ndarray) -> np.ndarray:
    m = z.max(axis=-1, keepdims=True)
    return m + np.log(np.exp(z - m).sum(axis=-1, keepdims=True))


class SoftmaxClassifier(BaseEstimator, ClassifierMixin):
    """3-class softmax regression over a feature matrix.

    Plain mini-batch SGD with a fixed learning rate: reproducible to the
    bit under a fixed seed.  ``fit`` accepts per-instance weights and an
    optional per-instance logit offset (treated as a constant, so the
    gradient reaches this model only).  When a dev set is supplied the
    returned parameters are the checkpoint with the best dev accuracy,
    earliest epoch winning ties.
    """

    def __init__(self, learning_rate: float = 0.5, epochs: int = 30,
                 batch_size: int = 64, l2: float = 1e-6, seed: int = 0,
                 patience: int | None = None, keep_snapshots: bool = False):
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.l2 = l2
        self.seed = seed
        self.patience = patience
        self.keep_snapshots = keep_snapshots

    @classmethod
    def from_config(cls, config: TrainingConfig, **overrides) -> "SoftmaxClassifier":
        params = dict(
            learning_rate=config.learning_rate, epochs=config.epochs,
            batch_size=config.batch_size, l2=config.l2, seed=config.seed,
            patience=config.patience,
        )
        params.update(overrides)
        return cls(**params)

    def fit(self, X, y, sample_weight=None, logit_offset=None, dev=None):
        X = sp.csr_matrix(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        n = X.shape[0]
        if y.shape != (n,):
            raise TrainingError(f"y has shape {y.shape}, expected ({n},)")
        if y.min() < 0 or y.max() >= N_CLASSES:
            raise TrainingError("labels must be integers in {0, 1, 2}")
        if sample_weight is None:
            alpha = np.ones(n)
        else:
            alpha = np.asarray(sample_weight, dtype=np.float64)
            if alpha.shape != (n,):
                raise TrainingError("sample_weight length mismatch")
            if np.any(alpha < 0):
                raise TrainingError("instance weights must be non-negative")
            if alpha.sum() <= 0.0:
                raise TrainingError("all instance weights are zero")
        if logit_offset is not None:
            logit_offset = np.asarray(logit_offset, dtype=np.float64)
            if logit_offset.shape != (n, N_CLASSES):
                raise TrainingError("logit_offset must have shape (n, 3)")

        dev_X = dev_y = None
        if dev is not None:
            dev_X, dev_y = dev
            dev_X = sp.csr_matrix(dev_X, dtype=np.float64)
            dev_y = np.asarray(dev_y, dtype=np.int64)

        rng = np.random.default_rng(self.seed)
        coef = np.zeros((N_CLASSES, X.shape[1]))
        intercept = np.zeros(N_CLASSES)

        best = None  # (accuracy, epoch, coef, intercept)
        history = []
        snapshots = []
        stale = 0
        for epoch in range(1, self.epochs + 1):
            order = rng.permutation(n)
            epoch_loss = 0.0
            seen = 0
            for start in range(0, n, self.batch_size):
                batch = order[start:start + self.batch_size]
                alpha_b = alpha[batch]
                if alpha_b.sum() <= 0.0:
                    continue  # zero-mass batch carries no gradient information
                offset_b = None if logit_offset is None else logit_offset[batch]
                loss, grad_coef, grad_intercept = _loss_and_grad(
                    coef, intercept, X[batch], y[batch], alpha_b, offset_b, self.l2
                )
                if not np.isfinite(loss):
                    raise TrainingError(f"training diverged at epoch {epoch}")
                coef -= self.learning_rate * grad_coef
                intercept -= self.learning_rate * grad_intercept
                epoch_loss += loss * len(batch)
                seen += len(batch)
            record = {"epoch": epoch, "loss": epoch_loss / max(seen, 1)}
            if dev_X is not None:
                probs = self._probs(dev_X, coef, intercept)
                accuracy = float((probs.argmax(axis=1) == dev_y).mean())
                record["dev_accuracy"] = accuracy
                if best is None or accuracy > best[0]:
                    best = (accuracy, epoch, coef.copy(), intercept.copy())
                    stale = 0
                else:
                    stale += 1
            if self.keep_snapshots:
                snapshots.append(
                    {"epoch": epoch, "coef": coef.copy(), "intercept": intercept.copy(),
                     "dev_accuracy": record.get("dev_accuracy")}
                )
            history.append(record)
            if self.patience is not None and stale > self.patience:
                break

        if best is not None:
            _, self.best_epoch_, coef, intercept = best
        else:
            self.best_epoch_ = history[-1]["epoch"]
        self.coef_ = coef
        self.intercept_ = intercept
        self.classes_ = np.arange(N_CLASSES)
        self.n_features_in_ = X.shape[1]
        self.history_ = history
        self.snapshots_ = snapshots
        return self

    @staticmethod
    def _probs(X, coef, intercept) -> np.ndarray:
        return clamp_probs(softmax(np.asarray(X @ coef.T) + intercept))

    def predict_proba(self, X) -> np.ndarray:
        X = sp.csr_matrix(X, dtype=np.float64)
        return self._probs(X, self.coef_, self.intercept_)

    def predict(self, X) -> np.ndarray:
        return self.classes_[self.predict_proba(X).argmax(axis=1)]


def gradient_check(model: SoftmaxClassifier, X, y, sample_weight=None,
                   logit_offset=None, step: float = 1e-5) -> float:
    """Max relative error between analytic and central finite-difference grads.

    Checks the full training objective (weighted cross-entropy plus the
    model's L2 term), including the logit-offset composition when given.
    """
    X = sp.csr_matrix(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    weights = (np.ones(len(y)) if sample_weight is None
               else np.asarray(sample_weight, dtype=np.float64))
    if logit_offset is not None:
        logit_offset = np.asarray(logit_offset, dtype=np.float64)
    coef = model.coef_.copy()
    intercept = model.intercept_.copy()

    _, grad_coef, grad_intercept = _loss_and_grad(
        coef, intercept, X, y, weights, logit_offset, model.l2
    )

    def loss_at(c, b):
        value, _, _ = _loss_and_grad(c, b, X, y, weights, logit_offset, model.l2)
        return value

    worst = 0.0
    for analytic, theta in ((grad_coef, coef), (grad_intercept, intercept)):
        it = np.nditer(theta, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            original = theta[idx]
            theta[idx] = original + step
            up = loss_at(coef, intercept)
            theta[idx] = original - step
            down = loss_at(coef, intercept)
            theta[idx] = original
            numeric = (up - down) / (2.0 * step)
            a = analytic[idx]
            denom = max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, abs(a - numeric) / denom)
    return worst


class TextPairClassifier(BaseEstimator, ClassifierMixin):
    """Feature extraction + softmax regression over instances, end to end.

    ``features`` names an extractor from the registry (``pair``,
    ``partialInput``, ``wordOverlap``, ``sentenceLength``, or ``+``
    combinations).  The feature space is frozen on the training data.
    """

    def __init__(self, features: str = "pair", learning_rate: float = 0.5,
                 epochs: int = 30, batch_size: int = 64, l2: float = 1e-6,
                 seed: int = 0, patience: int | None = None,
                 n_pair_buckets: int = DEFAULT_PAIR_BUCKETS,
                 max_pairs: int = DEFAULT_MAX_PAIRS,
                 keep_snapshots: bool = False):
        self.features = features
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.l2 = l2
        self.seed = seed
        self.patience = patience
        self.n_pair_buckets = n_pair_buckets
        self.max_pairs = max_pairs
        self.keep_snapshots = keep_snapshots

    def fit(self, X, y=None, sample_weight=None, dev=None, logit_offset=None):
        instances = X.instances if isinstance(X, Dataset) else tuple(X)
        extractor = make_extractor(self.features, self.n_pair_buckets, self.max_pairs)
        vectors = [extractor(inst) for inst in instances]
        space = FeatureSpace().fit(vectors)
        matrix = space.transform(vectors)
        labels = labels_of(instances, y)

        # max-abs column scaling keeps sparsity and tames dense numeric
        # features (raw lengths etc.) that would destabilize a fixed
        # learning rate
        scale = np.asarray(abs(matrix).max(axis=0).todense()).ravel()
        scale[scale == 0.0] = 1.0
        self.scale_ = scale
        matrix = self._rescale(matrix)

        dev_pack = None
        if dev is not None:
            dev_instances = dev.instances if isinstance(dev, Dataset) else tuple(dev)
            dev_matrix = self._rescale(
                space.transform([extractor(inst) for inst in dev_instances])
            )
            dev_pack = (dev_matrix, labels_of(dev_instances))

        inner = SoftmaxClassifier(
            learning_rate=self.learning_rate, epochs=self.epochs,
            batch_size=self.batch_size, l2=self.l2, seed=self.seed,
            patience=self.patience, keep_snapshots=self.keep_snapshots,
        )
        inner.fit(matrix, labels, sample_weight=sample_weight,
                  logit_offset=logit_offset, dev=dev_pack)
        self.extractor_ = extractor
        self.feature_space_ = space
        self.model_ = inner
        self.classes_ = np.array(LABEL_NAMES)
        return self

    def _rescale(self, matrix: sp.csr_matrix) -> sp.csr_matrix:
        return sp.csr_matrix(matrix.multiply(1.0 / self.scale_))

    def _matrix(self, instances) -> sp.csr_matrix:
        instances = instances.instances if isinstance(instances, Dataset) else instances
        return self._rescale(
            self.feature_space_.transform([self.extractor_(i) for i in instances])
        )

    def predict_proba(self, instances) -> np.ndarray:
        return self.model_.predict_proba(self._matrix(instances))

    def predict(self, instances) -> np.ndarray:
        return self.classes_[self.predict_proba(instances).argmax(axis=1)]

    def snapshot_models(self) -> list[tuple[int, "TextPairClassifier"]]:
        """Per-epoch checkpoints as standalone predictors.

        Available when fitted with ``keep_snapshots=True``; the returned
        models share this model's frozen feature space.
        """
        out = []
        for snap in self.model_.snapshots_:
            twin = TextPairClassifier(**self.get_params())
            twin.extractor_ = self.extractor_
            twin.feature_space_ = self.feature_space_
            twin.scale_ = self.scale_
            inner = SoftmaxClassifier(
                learning_rate=self.learning_rate, epochs=self.epochs,
                batch_size=self.batch_size, l2=self.l2, seed=self.seed,
                patience=self.patience,
            )
            inner.coef_ = snap["coef"]
            inner.intercept_ = snap["intercept"]
            inner.classes_ = np.arange(N_CLASSES)
            inner.n_features_in_ = snap["coef"].shape[1]
            inner.best_epoch_ = snap["epoch"]
            inner.history_ = []
            inner.snapshots_ = []
            twin.model_ = inner
            twin.classes_ = np.array(LABEL_NAMES)
            out.append((snap["epoch"], twin))
        return out


@dataclass(frozen=True)
class BiasExpert:
    """A frozen bias-only model: restricted features + trained classifier.

    Experts are trained once and never updated afterwards; debiased
    training treats their outputs as constants.
    """

    name: str
    model: TextPairClassifier

    def __post_init__(self) -> None:
        if self.name not in EXPERT_FEATURE_NAMES:
            raise TrainingError(
                f"unknown expert {self.name!r}; valid names: "
                + ", ".join(EXPERT_FEATURE_NAMES)
            )

    def predict_proba(self, instances) -> np.ndarray:
        return self.model.predict_proba(instances)


def train_bias_expert(name: str, train: Dataset, dev: Dataset | None = None,
                      config: TrainingConfig | None = None) -> BiasExpert:
    """Train a frozen bias-only expert on its restricted feature list."""
    if name not in EXPERT_FEATURE_NAMES:
        raise TrainingError(
            f"unknown expert {name!r}; valid names: " + ", ".join(EXPERT_FEATURE_NAMES)
        )
    config = config or TrainingConfig()
    model = TextPairClassifier(
        features=name, learning_rate=config.learning_rate, epochs=config.epochs,
        batch_size=config.batch_size, l2=config.l2, seed=config.seed,
        patience=config.patience,
    )
    model.fit(train, dev=dev)
    return BiasExpert(name=name, model=model)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

CHECKPOINT_FORMAT = "nlidebias-checkpoint"
CHECKPOINT_VERSION = 1


def save_checkpoint(model: TextPairClassifier, path: str | Path,
                    metadata: dict | None = None) -> None:
    """Serialize a fitted TextPairClassifier to a versioned JSON dump.

    Floats survive the JSON round trip exactly (shortest-repr encoding),
    so load(save(m)) reproduces the model bit for bit.
    """
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "params": model.get_params(),
        "feature_space": model.feature_space_.to_dict(),
        "scale": model.scale_.tolist(),
        "coef": model.model_.coef_.tolist(),
        "intercept": model.model_.intercept_.tolist(),
        "best_epoch": model.model_.best_epoch_,
        "metadata": metadata or {},
    }
    Path(path).write_text(json.dumps(payload, indent=1, sort_keys=True), encoding="utf-8")


def load_checkpoint(path: str | Path) -> TextPairClassifier:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise TrainingError(f"{path}: not a recognised checkpoint file")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise TrainingError(f"{path}: unsupported checkpoint version")
    model = TextPairClassifier(**payload["params"])
    model.feature_space_ = FeatureSpace.from_dict(payload["feature_space"])
    model.scale_ = np.asarray(payload["scale"], dtype=np.float64)
    model.extractor_ = make_extractor(
        model.features, model.n_pair_buckets, model.max_pairs
    )
    inner = SoftmaxClassifier(
        learning_rate=model.learning_rate, epochs=model.epochs,
        batch_size=model.batch_size, l2=model.l2, seed=model.seed,
        patience=model.patience,
    )
    inner.coef_ = np.asarray(payload["coef"], dtype=np.float64)
    inner.intercept_ = np.asarray(payload["intercept"], dtype=np.float64)
    inner.classes_ = np.arange(N_CLASSES)
    inner.n_features_in_ = inner.coef_.shape[1]
    inner.best_epoch_ = payload["best_epoch"]
    inner.history_ = []
    inner.snapshots_ = []
    model.model_ = inner
    model.classes_ = np.array(LABEL_NAMES)
    return model
