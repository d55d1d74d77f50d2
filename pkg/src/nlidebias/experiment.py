"""Experiment configuration and the runners behind the CLI subcommands.

Configs are flat key-value INI files with sections.  Every run resolves
its config against the documented defaults, hashes the resolved values,
and stamps the hash and global seed into every artifact it writes, so a
rerun of a hash-identical config reproduces byte-identical reports.
"""

from __future__ import annotations

import configparser
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import augment as aug
from .classifier import (
    BiasExpert,
    TextPairClassifier,
    TrainingConfig,
    load_checkpoint,
    save_checkpoint,
    train_bias_expert,
)
from .corpus import (
    CorpusError,
    Dataset,
    LabelScheme,
    SyntheticBiasSpec,
    SyntheticDatasets,
    generate_synthetic,
    load_jsonl,
    load_tsv,
    save_tsv,
)
from .debias import STRATEGIES, DebiasPlan, DebiasedClassifier, train_debiased
from .evalharness import (
    EvalEntry,
    EvalReport,
    EvalSuite,
    RunMatrix,
    correlation_matrix,
    emit_report,
    evaluate_model,
    read_predictions,
    write_predictions,
    accuracy,
)
from .features import EXPERT_FEATURE_NAMES
from .merge import MergePlan, MergeResult, MergeSource, merge_datasets

logger = logging.getLogger(__name__)

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "load_config",
    "run_gen_synthetic",
    "run_train_expert",
    "run_train",
    "run_augment",
    "run_merge",
    "run_eval",
    "run_sweep",
]


class ConfigError(ValueError):
    """All validation problems for a command, reported together."""

    def __init__(self, problems: Sequence[str]):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n" + "\n".join(
            f"  - {p}" for p in self.problems
        ))


# every tunable key with its default, including the augmentation
# parameters (mask fraction, candidate pool, beam, window, cosine gate)
_DEFAULTS: dict[str, dict[str, str]] = {
    "run": {"output_dir": "runs/run", "seed": "0"},
    "data": {"train": "", "dev": "", "scheme": "three_way"},
    "synthetic": {
        "bias_kind": "hypothesisCue",
        "vocabulary_size": "120",
        "instances_per_split": "2000",
        "cue_strength": "0.8",
        "train_size": "",
        "dev_size": "",
        "test_size": "",
        "seed": "",
    },
    "training": {
        "features": "pair",
        "learning_rate": "0.5",
        "epochs": "30",
        "batch_size": "64",
        "l2": "1e-6",
        "patience": "",
        "n_pair_buckets": "262144",
        "max_pairs": "512",
        "selection": "origin",
    },
    "experts": {
        "learning_rate": "0.5",
        "epochs": "12",
        "batch_size": "64",
        "l2": "1e-6",
    },
    "plan": {"strategy": "Baseline", "experts": "", "ensemble_rule": "mean"},
    "sweep": {"plans": "Baseline", "seeds": "0"},
    "augment": {
        "method": "",
        "teacher": "",
        "lexicon": "",
        "embeddings": "",
        "client_cmd": "",
        "mask_fraction": "0.3",
        "candidate_pool": "100",
        "beam": "5",
        "window": "3",
        "cosine_gate": "0.0",
        "judge": "",
    },
    "merge": {
        "sources": "",
        "dev_sources": "",
        "mode": "plain",
        "performance_table": "",
    },
    "eval": {},
}


@dataclass
class ExperimentConfig:
    """Resolved configuration: every key the run will use, plus its hash."""

    values: dict[str, dict[str, str]]
    path: Path | None = None
    eval_entries: dict[str, str] = field(default_factory=dict)

    def get(self, section: str, key: str) -> str:
        return self.values[section][key]

    def getint(self, section: str, key: str) -> int:
        return int(self.get(section, key))

    def getfloat(self, section: str, key: str) -> float:
        return float(self.get(section, key))

    def optional_int(self, section: str, key: str) -> int | None:
        raw = self.get(section, key).strip()
        return int(raw) if raw else None

    @property
    def seed(self) -> int:
        return self.getint("run", "seed")

    @property
    def output_dir(self) -> Path:
        return Path(self.get("run", "output_dir"))

    def config_hash(self) -> str:
        # output_dir is where artifacts land, not what the experiment is
        hashed = {s: dict(kv) for s, kv in self.values.items()}
        hashed["run"].pop("output_dir", None)
        canon = json.dumps(
            {"values": hashed, "eval_entries": self.eval_entries}, sort_keys=True
        )
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]


def load_config(path: str | Path) -> ExperimentConfig:
    """Parse an INI config and resolve it against the defaults."""
    path = Path(path)
    if not path.exists():
        raise ConfigError([f"config file not found: {path}"])
    parser = configparser.ConfigParser()
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError([f"cannot parse {path}: {exc}"]) from exc

    problems = []
    values = {section: dict(defaults) for section, defaults in _DEFAULTS.items()}
    eval_entries: dict[str, str] = {}
    for section in parser.sections():
        if section == "eval":
            for key, value in parser.items(section):
                if not key.startswith("entry."):
                    problems.append(
                        f"[eval] keys must look like entry.<name>, got {key!r}"
                    )
                    continue
                eval_entries[key[len("entry."):]] = value
            continue
        if section not in _DEFAULTS:
            problems.append(f"unknown config section [{section}]")
            continue
        for key, value in parser.items(section):
            if key not in _DEFAULTS[section]:
                problems.append(f"unknown key {key!r} in section [{section}]")
                continue
            values[section][key] = value
    if problems:
        raise ConfigError(problems)
    return ExperimentConfig(values=values, path=path, eval_entries=eval_entries)


# ---------------------------------------------------------------------------
# Validation helpers (exhaustive per command)
# ---------------------------------------------------------------------------


def _check_number(cfg, section, key, problems, kind=float, minimum=None):
    raw = cfg.get(section, key)
    try:
        value = kind(raw)
    except ValueError:
        problems.append(f"[{section}] {key}={raw!r} is not a valid {kind.__name__}")
        return None
    if minimum is not None and value < minimum:
        problems.append(f"[{section}] {key}={value} must be >= {minimum}")
    return value


def _parse_plan_token(token: str) -> tuple[str, tuple[str, ...]]:
    strategy, _, expert_part = token.partition(":")
    experts = tuple(e for e in expert_part.split(",") if e)
    return strategy, experts


def _validate_plan_token(token: str, problems: list[str]) -> None:
    strategy, experts = _parse_plan_token(token)
    known_strategy = strategy in STRATEGIES
    if not known_strategy:
        problems.append(
            f"unknown strategy {strategy!r}; valid names: {', '.join(STRATEGIES)}"
        )
    for expert in experts:
        if expert not in EXPERT_FEATURE_NAMES:
            problems.append(
                f"unknown expert {expert!r}; valid names: "
                + ", ".join(EXPERT_FEATURE_NAMES)
            )
    if not known_strategy:
        return
    m = len(experts)
    if strategy == "Baseline" and m:
        problems.append("Baseline takes no experts")
    if strategy in ("ReW", "BiasProd") and m != 1:
        problems.append(f"{strategy} requires exactly one expert")
    if strategy in ("MixW", "AddProd", "BestEn") and m < 1:
        problems.append(f"{strategy} requires at least one expert")


def _validate_training(cfg: ExperimentConfig, problems: list[str]) -> None:
    _check_number(cfg, "training", "learning_rate", problems, float, 0.0)
    _check_number(cfg, "training", "epochs", problems, int, 1)
    _check_number(cfg, "training", "batch_size", problems, int, 1)
    _check_number(cfg, "training", "l2", problems, float, 0.0)
    _check_number(cfg, "training", "n_pair_buckets", problems, int, 1)
    _check_number(cfg, "training", "max_pairs", problems, int, 1)
    if cfg.get("training", "selection") not in ("origin", "mixed", "oracle"):
        problems.append("[training] selection must be origin, mixed, or oracle")


def _validate_data(cfg: ExperimentConfig, problems: list[str]) -> None:
    train = cfg.get("data", "train").strip()
    if not train:
        problems.append("[data] train is required (a path or 'synthetic')")
        return
    if train == "synthetic":
        _check_number(cfg, "synthetic", "vocabulary_size", problems, int, 1)
        _check_number(cfg, "synthetic", "instances_per_split", problems, int, 1)
        strength = _check_number(cfg, "synthetic", "cue_strength", problems, float, 0.0)
        if strength is not None and strength > 1.0:
            problems.append("[synthetic] cue_strength must lie in [0, 1]")
        kind = cfg.get("synthetic", "bias_kind")
        if kind not in ("hypothesisCue", "wordOverlap", "lengthSkew"):
            problems.append(f"[synthetic] unknown bias_kind {kind!r}")
    else:
        if not Path(train).exists():
            problems.append(f"[data] train file not found: {train}")
        dev = cfg.get("data", "dev").strip()
        if dev and not Path(dev).exists():
            problems.append(f"[data] dev file not found: {dev}")
        try:
            LabelScheme.parse(cfg.get("data", "scheme"))
        except CorpusError as exc:
            problems.append(str(exc))


def _validate_eval_entries(cfg: ExperimentConfig, problems: list[str]) -> None:
    for name, raw in cfg.eval_entries.items():
        parts = [p.strip() for p in raw.split("|")]
        if len(parts) != 4:
            problems.append(
                f"[eval] entry.{name} must be 'path | scheme | metric | group'"
            )
            continue
        path, scheme, metric, _ = parts
        if not Path(path).exists():
            problems.append(f"[eval] entry.{name}: file not found: {path}")
        try:
            LabelScheme.parse(scheme)
        except CorpusError as exc:
            problems.append(f"[eval] entry.{name}: {exc}")
        if metric not in ("accuracy", "mcc"):
            problems.append(f"[eval] entry.{name}: unknown metric {metric!r}")


# ---------------------------------------------------------------------------
# Data assembly
# ---------------------------------------------------------------------------


def _synthetic_spec(cfg: ExperimentConfig) -> SyntheticBiasSpec:
    seed_raw = cfg.get("synthetic", "seed").strip()
    return SyntheticBiasSpec(
        vocabulary_size=cfg.getint("synthetic", "vocabulary_size"),
        instances_per_split=cfg.getint("synthetic", "instances_per_split"),
        cue_strength=cfg.getfloat("synthetic", "cue_strength"),
        bias_kind=cfg.get("synthetic", "bias_kind"),
        seed=int(seed_raw) if seed_raw else cfg.seed,
        train_size=cfg.optional_int("synthetic", "train_size"),
        dev_size=cfg.optional_int("synthetic", "dev_size"),
        test_size=cfg.optional_int("synthetic", "test_size"),
    )


def _load_file_dataset(path_str: str, scheme: LabelScheme, split: str) -> Dataset:
    path = Path(path_str)
    if path.suffix == ".jsonl":
        dataset, skipped = load_jsonl(path, scheme, split=split)
        if skipped:
            logger.info("%s: skipped %d unlabelled lines", path, skipped)
        return dataset
    return load_tsv(path, scheme, split=split)


@dataclass
class ResolvedData:
    train: Dataset | None
    dev: Dataset | None
    synthetic: SyntheticDatasets | None = None


def _resolve_data(cfg: ExperimentConfig) -> ResolvedData:
    train_key = cfg.get("data", "train").strip()
    if train_key == "synthetic":
        bundle = generate_synthetic(_synthetic_spec(cfg))
        return ResolvedData(train=bundle.train, dev=bundle.dev, synthetic=bundle)
    scheme = LabelScheme.parse(cfg.get("data", "scheme"))
    train = _load_file_dataset(train_key, scheme, "train")
    dev_key = cfg.get("data", "dev").strip()
    dev = _load_file_dataset(dev_key, scheme, "dev") if dev_key else None
    return ResolvedData(train=train, dev=dev)


def _build_suite(cfg: ExperimentConfig, data: ResolvedData) -> EvalSuite:
    entries: list[EvalEntry] = []
    if data.synthetic is not None:
        entries.append(EvalEntry(
            name=data.synthetic.test_biased.name,
            dataset=data.synthetic.test_biased,
            metric="accuracy", group="in_distribution",
        ))
        entries.append(EvalEntry(
            name=data.synthetic.test_anti_biased.name,
            dataset=data.synthetic.test_anti_biased,
            metric="accuracy", group="adversarial",
        ))
    for name, raw in sorted(cfg.eval_entries.items()):
        path, scheme, metric, group = [p.strip() for p in raw.split("|")]
        dataset = _load_file_dataset(path, LabelScheme.parse(scheme), "test")
        entries.append(EvalEntry(name=name, dataset=dataset, metric=metric, group=group))
    if not entries:
        raise ConfigError(["no evaluation datasets: add [eval] entries or use synthetic data"])
    return EvalSuite(tuple(entries))


def _expert_config(cfg: ExperimentConfig, seed: int) -> TrainingConfig:
    return TrainingConfig(
        learning_rate=cfg.getfloat("experts", "learning_rate"),
        epochs=cfg.getint("experts", "epochs"),
        batch_size=cfg.getint("experts", "batch_size"),
        l2=cfg.getfloat("experts", "l2"),
        seed=seed,
    )


def _base_model(cfg: ExperimentConfig, seed: int) -> TextPairClassifier:
    return TextPairClassifier(
        features=cfg.get("training", "features"),
        learning_rate=cfg.getfloat("training", "learning_rate"),
        epochs=cfg.getint("training", "epochs"),
        batch_size=cfg.getint("training", "batch_size"),
        l2=cfg.getfloat("training", "l2"),
        seed=seed,
        patience=cfg.optional_int("training", "patience"),
        n_pair_buckets=cfg.getint("training", "n_pair_buckets"),
        max_pairs=cfg.getint("training", "max_pairs"),
    )


def _train_plan(cfg: ExperimentConfig, token: str, data: ResolvedData,
                seed: int, expert_cache: dict[str, BiasExpert]) -> DebiasedClassifier:
    strategy, expert_names = _parse_plan_token(token)
    experts = []
    for name in expert_names:
        if name not in expert_cache:
            expert_cache[name] = train_bias_expert(
                name, data.train, dev=data.dev, config=_expert_config(cfg, seed)
            )
        experts.append(expert_cache[name])
    plan = DebiasPlan(strategy, tuple(experts))
    return train_debiased(
        plan, data.train, dev=data.dev, base=_base_model(cfg, seed),
        ensemble_rule=cfg.get("plan", "ensemble_rule"),
    )


def _write_meta(path: Path, cfg: ExperimentConfig, extra: dict) -> None:
    payload = {"config_hash": cfg.config_hash(), "seed": cfg.seed}
    payload.update(extra)
    path.write_text(json.dumps(payload, indent=1, sort_keys=True), encoding="utf-8")


_run_log_handler: logging.FileHandler | None = None


def _setup_run_dir(cfg: ExperimentConfig) -> Path:
    global _run_log_handler
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    package_logger = logging.getLogger("nlidebias")
    if _run_log_handler is not None:
        package_logger.removeHandler(_run_log_handler)
        _run_log_handler.close()
    _run_log_handler = logging.FileHandler(out / "run.log", encoding="utf-8")
    _run_log_handler.setFormatter(
        logging.Formatter("%(asctime)s %(levelname)s %(name)s %(message)s")
    )
    package_logger.addHandler(_run_log_handler)
    return out


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def run_gen_synthetic(cfg: ExperimentConfig) -> list[Path]:
    problems: list[str] = []
    cfg.values["data"]["train"] = "synthetic"
    _validate_data(cfg, problems)
    if problems:
        raise ConfigError(problems)
    out = _setup_run_dir(cfg)
    bundle = generate_synthetic(_synthetic_spec(cfg))
    written = []
    for split_name, dataset in (
        ("train", bundle.train), ("dev", bundle.dev),
        ("test_biased", bundle.test_biased),
        ("test_anti_biased", bundle.test_anti_biased),
    ):
        path = out / f"{split_name}.tsv"
        save_tsv(dataset, path)
        _write_meta(path.with_suffix(".meta.json"), cfg,
                    {"split": split_name, "instances": len(dataset)})
        written.append(path)
    logger.info("wrote synthetic corpus to %s", out)
    return written


def run_train_expert(cfg: ExperimentConfig, name: str) -> Path:
    problems: list[str] = []
    if name not in EXPERT_FEATURE_NAMES:
        problems.append(
            f"unknown expert {name!r}; valid names: " + ", ".join(EXPERT_FEATURE_NAMES)
        )
    _validate_data(cfg, problems)
    if problems:
        raise ConfigError(problems)
    out = _setup_run_dir(cfg)
    data = _resolve_data(cfg)
    expert = train_bias_expert(
        name, data.train, dev=data.dev, config=_expert_config(cfg, cfg.seed)
    )
    path = out / f"expert-{name}.json"
    save_checkpoint(expert.model, path, metadata={
        "config_hash": cfg.config_hash(), "seed": cfg.seed, "expert": name,
        "hyperparameters": _expert_config(cfg, cfg.seed).as_dict(),
    })
    return path


def _single_report(cfg: ExperimentConfig, column: str,
                   scores: dict[str, float], suite: EvalSuite) -> EvalReport:
    return EvalReport(
        columns=(column,),
        rows=tuple(e.name for e in suite.entries),
        scores={column: scores},
        groups=suite.groups(),
        metadata={
            "config_hash": cfg.config_hash(),
            "seed": str(cfg.seed),
            "plan": column,
        },
    )


def run_train(cfg: ExperimentConfig) -> dict[str, Path]:
    problems: list[str] = []
    _validate_data(cfg, problems)
    _validate_training(cfg, problems)
    token = cfg.get("plan", "strategy")
    if cfg.get("plan", "experts").strip():
        token += ":" + ",".join(cfg.get("plan", "experts").split())
    _validate_plan_token(token, problems)
    _validate_eval_entries(cfg, problems)
    if problems:
        raise ConfigError(problems)

    out = _setup_run_dir(cfg)
    data = _resolve_data(cfg)
    suite = _build_suite(cfg, data)
    model = _train_plan(cfg, token, data, cfg.seed, {})
    scores = evaluate_model(model, suite)

    report = _single_report(cfg, token, scores, suite)
    artifacts = {
        "report_tsv": emit_report(report, "tsv", out / "report.tsv"),
        "report_md": emit_report(report, "markdown", out / "report.md"),
    }
    (out / "report.json").write_text(
        json.dumps({
            "columns": report.columns, "rows": report.rows, "scores": report.scores,
            "groups": report.groups, "metadata": report.metadata,
        }, indent=1, sort_keys=True),
        encoding="utf-8",
    )
    artifacts["report_json"] = out / "report.json"

    predictions_dir = out / "predictions"
    predictions_dir.mkdir(exist_ok=True)
    for entry in suite.entries:
        probs = model.predict_proba(entry.dataset.instances)
        write_predictions(
            predictions_dir / f"{entry.name}.tsv",
            [i.id for i in entry.dataset.instances], probs,
        )

    if model.prime_ is not None:
        checkpoint = out / "checkpoint.json"
        save_checkpoint(model.prime_, checkpoint, metadata={
            "config_hash": cfg.config_hash(), "seed": cfg.seed, "plan": token,
        })
        artifacts["checkpoint"] = checkpoint
    else:
        for idx, member in enumerate(model.members_):
            member_path = out / f"checkpoint-member{idx}.json"
            save_checkpoint(member, member_path, metadata={
                "config_hash": cfg.config_hash(), "seed": cfg.seed,
                "plan": token, "member": idx,
            })
            artifacts[f"checkpoint_member{idx}"] = member_path
    return artifacts


def run_sweep(cfg: ExperimentConfig) -> dict[str, Path]:
    problems: list[str] = []
    _validate_data(cfg, problems)
    _validate_training(cfg, problems)
    tokens = cfg.get("sweep", "plans").split()
    if not tokens:
        problems.append("[sweep] plans must list at least one plan")
    for token in tokens:
        _validate_plan_token(token, problems)
    try:
        seeds = [int(s) for s in cfg.get("sweep", "seeds").split()]
    except ValueError:
        problems.append("[sweep] seeds must be integers")
        seeds = []
    if not seeds:
        problems.append("[sweep] seeds must list at least one seed")
    _validate_eval_entries(cfg, problems)
    if problems:
        raise ConfigError(problems)

    out = _setup_run_dir(cfg)
    data = _resolve_data(cfg)
    suite = _build_suite(cfg, data)
    adversarial = [e.name for e in suite.entries if e.group == "adversarial"]

    run_ids: list[str] = []
    matrix_rows: list[list[float]] = []
    per_plan: dict[str, dict[str, list[float]]] = {
        t: {e.name: [] for e in suite.entries} for t in tokens
    }
    failures: list[str] = []
    for token in tokens:
        for seed in seeds:
            run_id = f"{token}@seed{seed}"
            expert_cache: dict[str, BiasExpert] = {}
            try:
                model = _train_plan(cfg, token, data, seed, expert_cache)
                scores = evaluate_model(model, suite)
            except Exception as exc:  # partial failures become missing cells
                logger.exception("run %s failed", run_id)
                failures.append(f"{run_id}: {exc}")
                run_ids.append(run_id)
                matrix_rows.append([np.nan] * len(adversarial))
                continue
            for entry in suite.entries:
                per_plan[token][entry.name].append(scores[entry.name])
            run_ids.append(run_id)
            matrix_rows.append([scores[name] for name in adversarial])

    metadata = {
        "config_hash": cfg.config_hash(),
        "seed": str(cfg.seed),
        "seeds": " ".join(str(s) for s in seeds),
        "aggregation": "median over seeds",
        "score_standardization": "none (raw scores enter the correlation)",
    }
    if failures:
        metadata["failures"] = "; ".join(failures)

    report = EvalReport(
        columns=tuple(tokens),
        rows=tuple(e.name for e in suite.entries),
        scores={
            t: {
                name: float(np.median(vals)) if vals else float("nan")
                for name, vals in per_plan[t].items()
            }
            for t in tokens
        },
        groups=suite.groups(),
        metadata=metadata,
    )
    artifacts = {
        "report_tsv": emit_report(report, "tsv", out / "comparison.tsv"),
        "report_md": emit_report(report, "markdown", out / "comparison.md"),
    }

    matrix = RunMatrix(tuple(run_ids), tuple(adversarial), np.asarray(matrix_rows))
    matrix_path = out / "runmatrix.tsv"
    with matrix_path.open("w", encoding="utf-8", newline="") as handle:
        handle.write("# config_hash\t" + cfg.config_hash() + "\n")
        handle.write("\t".join(["run", *adversarial]) + "\n")
        for run_id, row in zip(matrix.run_ids, matrix.scores):
            cells = ["missing" if not np.isfinite(v) else f"{v:.6f}" for v in row]
            handle.write("\t".join([run_id, *cells]) + "\n")
    artifacts["runmatrix"] = matrix_path

    if matrix.complete and len(run_ids) >= 2 and len(adversarial) >= 2:
        result = correlation_matrix(matrix)
        corr_path = out / "correlation.tsv"
        with corr_path.open("w", encoding="utf-8", newline="") as handle:
            handle.write("# config_hash\t" + cfg.config_hash() + "\n")
            if result.undefined:
                handle.write("# undefined\t" + " ".join(result.undefined) + "\n")
            handle.write("\t".join(["dataset", *result.dataset_names]) + "\n")
            for name, row in zip(result.dataset_names, result.values):
                cells = ["undefined" if not np.isfinite(v) else f"{v:.6f}" for v in row]
                handle.write("\t".join([name, *cells]) + "\n")
        artifacts["correlation"] = corr_path
    return artifacts


def run_augment(cfg: ExperimentConfig) -> dict[str, Path]:
    problems: list[str] = []
    _validate_data(cfg, problems)
    method = cfg.get("augment", "method").strip()
    if method not in aug.AUGMENT_METHODS:
        problems.append(
            f"[augment] method must be one of {', '.join(aug.AUGMENT_METHODS)}"
        )
    if method == "synonym":
        for key in ("lexicon", "embeddings"):
            value = cfg.get("augment", key).strip()
            if not value:
                problems.append(f"[augment] {key} path is required for synonym")
            elif not Path(value).exists():
                problems.append(f"[augment] {key} file not found: {value}")
    if method in ("masked_lm", "paraphrase") and not cfg.get("augment", "client_cmd").strip():
        problems.append(f"[augment] client_cmd is required for {method}")
    teacher_path = cfg.get("augment", "teacher").strip()
    if teacher_path and not Path(teacher_path).exists():
        problems.append(f"[augment] teacher checkpoint not found: {teacher_path}")
    judge_path = cfg.get("augment", "judge").strip()
    if judge_path and not Path(judge_path).exists():
        problems.append(f"[augment] judge checkpoint not found: {judge_path}")
    if problems:
        raise ConfigError(problems)

    out = _setup_run_dir(cfg)
    data = _resolve_data(cfg)
    kwargs: dict = {"seed": cfg.seed}
    client = None
    if method == "synonym":
        kwargs["lexicon"] = aug.load_lexicon(cfg.get("augment", "lexicon"))
        kwargs["embeddings"] = aug.load_embeddings(cfg.get("augment", "embeddings"))
        kwargs["window"] = cfg.getint("augment", "window")
        kwargs["cosine_gate"] = cfg.getfloat("augment", "cosine_gate")
    if method in ("masked_lm", "paraphrase"):
        client = aug.PipeTransformClient(cfg.get("augment", "client_cmd").split())
        kwargs["client"] = client
        kwargs["mask_fraction"] = cfg.getfloat("augment", "mask_fraction")
        kwargs["candidate_pool"] = cfg.getint("augment", "candidate_pool")
        kwargs["beam"] = cfg.getint("augment", "beam")
    if teacher_path:
        kwargs["teacher"] = load_checkpoint(teacher_path)

    try:
        augmented, summary = aug.augment_dataset(data.train, method, **kwargs)
    finally:
        if client is not None:
            client.close()

    path = out / "augmented.tsv"
    save_tsv(augmented, path)
    summary_payload = {
        "method": summary.method,
        "input_count": summary.input_count,
        "generated": summary.generated,
        "dropped": summary.dropped,
    }
    if judge_path:
        judge = load_checkpoint(judge_path)
        subset = aug.augmented_subset(augmented, method)
        summary_payload["auto_quality"] = aug.auto_quality(subset, judge)
    _write_meta(out / "augmented.meta.json", cfg, summary_payload)
    return {"augmented": path, "summary": out / "augmented.meta.json"}


def _read_performance_table(path: Path) -> dict[str, float]:
    table = {}
    with path.open("r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ConfigError([f"{path}:{lineno}: expected 'source<TAB>p'"])
            table[parts[0]] = float(parts[1])
    return table


def run_merge(cfg: ExperimentConfig) -> dict[str, Path]:
    problems: list[str] = []
    source_paths = cfg.get("merge", "sources").split()
    if not source_paths:
        problems.append("[merge] sources must list at least one path")
    for raw in source_paths:
        if not Path(raw).exists():
            problems.append(f"[merge] source file not found: {raw}")
    mode = cfg.get("merge", "mode")
    if mode not in ("plain", "sr", "pr"):
        problems.append("[merge] mode must be plain, sr, or pr")
    perf_path = cfg.get("merge", "performance_table").strip()
    if mode == "pr" and not perf_path:
        problems.append("[merge] performance_table is required for pr mode")
    if perf_path and not Path(perf_path).exists():
        problems.append(f"[merge] performance table not found: {perf_path}")
    dev_paths = cfg.get("merge", "dev_sources").split()
    for raw in dev_paths:
        if not Path(raw).exists():
            problems.append(f"[merge] dev source not found: {raw}")
    if problems:
        raise ConfigError(problems)

    out = _setup_run_dir(cfg)
    performances = _read_performance_table(Path(perf_path)) if perf_path else {}
    sources = []
    for raw in source_paths:
        dataset = _load_file_dataset(raw, LabelScheme.THREE_WAY, "train")
        sources.append(MergeSource(dataset, performances.get(dataset.name)))
    if mode == "pr":
        missing = [s.dataset.name for s in sources if s.performance is None]
        if missing:
            raise ConfigError(
                [f"[merge] no performance entry for source {name!r}" for name in missing]
            )
    plan = MergePlan(tuple(sources), mode)
    dev_sources = [
        _load_file_dataset(raw, LabelScheme.THREE_WAY, "dev") for raw in dev_paths
    ] or None
    result: MergeResult = merge_datasets(plan, dev_sources)

    train_path = out / "merged.tsv"
    save_tsv(result.train, train_path)
    weights_path = out / "weights.tsv"
    with weights_path.open("w", encoding="utf-8", newline="") as handle:
        for inst, weight in zip(result.train.instances, result.weights):
            handle.write(f"{inst.id}\t{float(weight)!r}\n")
    artifacts = {"merged": train_path, "weights": weights_path}
    if result.dev is not None:
        dev_path = out / "merged-dev.tsv"
        save_tsv(result.dev, dev_path)
        artifacts["dev"] = dev_path
    _write_meta(out / "merged.meta.json", cfg, {
        "mode": mode,
        "sources": {s.dataset.name: len(s.dataset) for s in sources},
        "instances": len(result.train),
    })
    artifacts["meta"] = out / "merged.meta.json"
    return artifacts


def run_eval(cfg: ExperimentConfig, checkpoint: str | None = None,
             predictions: str | None = None) -> dict[str, Path]:
    problems: list[str] = []
    if (checkpoint is None) == (predictions is None):
        problems.append("eval needs exactly one of --checkpoint or --predictions")
    if checkpoint and not Path(checkpoint).exists():
        problems.append(f"checkpoint not found: {checkpoint}")
    if predictions and not Path(predictions).exists():
        problems.append(f"predictions file not found: {predictions}")
    _validate_eval_entries(cfg, problems)
    has_synthetic = cfg.get("data", "train").strip() == "synthetic"
    if not cfg.eval_entries and not has_synthetic:
        problems.append("no evaluation datasets configured")
    if problems:
        raise ConfigError(problems)

    out = _setup_run_dir(cfg)
    data = _resolve_data(cfg) if has_synthetic else ResolvedData(
        train=None, dev=None
    )
    suite = _build_suite(cfg, data)

    if checkpoint:
        model = load_checkpoint(checkpoint)
        scores = evaluate_model(model, suite)
        column = Path(checkpoint).stem
    else:
        ids, probs = read_predictions(predictions)
        by_id = {i: probs[k] for k, i in enumerate(ids)}
        scores = {}
        for entry in suite.entries:
            try:
                stacked = np.stack([by_id[i.id] for i in entry.dataset.instances])
            except KeyError as exc:
                raise ConfigError(
                    [f"predictions file lacks instance {exc} for {entry.name}"]
                ) from None
            golds = [i.gold for i in entry.dataset.instances]
            scores[entry.name] = accuracy(stacked, golds, entry.dataset.scheme)
        column = Path(predictions).stem

    report = _single_report(cfg, column, scores, suite)
    return {
        "report_tsv": emit_report(report, "tsv", out / "report.tsv"),
        "report_md": emit_report(report, "markdown", out / "report.md"),
    }


def run_report(report_json: str | Path, fmt: str, out_path: str | Path) -> Path:
    """Re-emit a stored report (report.json) as TSV or markdown."""
    payload = json.loads(Path(report_json).read_text(encoding="utf-8"))
    report = EvalReport(
        columns=tuple(payload["columns"]),
        rows=tuple(payload["rows"]),
        scores=payload["scores"],
        groups={g: tuple(v) for g, v in payload["groups"].items()},
        metadata=payload["metadata"],
    )
    return emit_report(report, fmt, out_path)
