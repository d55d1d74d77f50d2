import json
import sys
from pathlib import Path

import numpy as np
import pytest

from nlidebias.cli import main
from nlidebias.corpus import load_tsv, save_tsv
from nlidebias.experiment import ConfigError, load_config, run_train

from conftest import make_dataset


def write_config(path: Path, body: str) -> Path:
    path.write_text(body, encoding="utf-8")
    return path


BASE_SYNTHETIC = """
[run]
output_dir = {out}
seed = 7

[data]
train = synthetic

[synthetic]
bias_kind = hypothesisCue
instances_per_split = 200
cue_strength = 0.8

[training]
epochs = 4
n_pair_buckets = 4096

[plan]
strategy = {strategy}
experts = {experts}
"""


class TestConfigValidation:
    def test_all_problems_reported_together(self, tmp_path):
        config = write_config(tmp_path / "bad.ini", """
[run]
output_dir = out

[data]
train = /nonexistent/file.tsv

[training]
epochs = zero
batch_size = -3

[plan]
strategy = Mystery
experts = ghostExpert
""")
        cfg = load_config(config)
        with pytest.raises(ConfigError) as err:
            run_train(cfg)
        text = str(err.value)
        assert "train file not found" in text
        assert "epochs" in text
        assert "batch_size" in text
        assert "Mystery" in text
        assert "ghostExpert" in text

    def test_invalid_expert_error_enumerates_valid_names(self, tmp_path):
        config = write_config(
            tmp_path / "c.ini",
            BASE_SYNTHETIC.format(out=tmp_path / "out", strategy="ReW",
                                  experts="typoExpert"),
        )
        with pytest.raises(ConfigError, match="wordOverlap, partialInput, sentenceLength"):
            run_train(load_config(config))

    def test_unknown_key_rejected_at_parse(self, tmp_path):
        config = write_config(tmp_path / "c.ini", "[run]\nbanana = 1\n")
        with pytest.raises(ConfigError, match="unknown key"):
            load_config(config)

    def test_missing_file(self):
        with pytest.raises(ConfigError, match="not found"):
            load_config("/nope/missing.ini")


class TestTrainCommand:
    def test_baseline_plan_produces_report_row(self, tmp_path):
        out = tmp_path / "out"
        config = write_config(
            tmp_path / "c.ini",
            BASE_SYNTHETIC.format(out=out, strategy="Baseline", experts=""),
        )
        code = main(["train", "--config", str(config)])
        assert code == 0
        report = (out / "report.tsv").read_text()
        assert "Baseline" in report
        assert (out / "checkpoint.json").exists()

    def test_same_config_and_seed_byte_identical_reports(self, tmp_path):
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        config_a = write_config(
            tmp_path / "a.ini",
            BASE_SYNTHETIC.format(out=out_a, strategy="ReW", experts="partialInput"),
        )
        config_b = write_config(
            tmp_path / "b.ini",
            BASE_SYNTHETIC.format(out=out_b, strategy="ReW", experts="partialInput"),
        )
        assert main(["train", "--config", str(config_a)]) == 0
        assert main(["train", "--config", str(config_b)]) == 0
        for name in ("report.tsv", "report.md", "checkpoint.json"):
            assert (out_a / name).read_bytes() == (out_b / name).read_bytes()

    def test_exit_code_on_config_error(self, tmp_path):
        config = write_config(
            tmp_path / "c.ini",
            BASE_SYNTHETIC.format(out=tmp_path / "o", strategy="Nope", experts=""),
        )
        assert main(["train", "--config", str(config)]) == 1


class TestGenSynthetic:
    def test_writes_four_splits_with_meta(self, tmp_path):
        out = tmp_path / "gen"
        config = write_config(tmp_path / "c.ini", f"""
[run]
output_dir = {out}
seed = 3

[synthetic]
instances_per_split = 50
""")
        assert main(["gen-synthetic", "--config", str(config)]) == 0
        for split in ("train", "dev", "test_biased", "test_anti_biased"):
            assert (out / f"{split}.tsv").exists()
            meta = json.loads((out / f"{split}.meta.json").read_text())
            assert meta["seed"] == 3
            assert "config_hash" in meta
        dataset = load_tsv(out / "train.tsv")
        assert len(dataset) == 50


class TestTrainExpert:
    def test_checkpoint_written_and_loadable(self, tmp_path):
        out = tmp_path / "out"
        config = write_config(tmp_path / "c.ini", f"""
[run]
output_dir = {out}
seed = 1

[data]
train = synthetic

[synthetic]
instances_per_split = 150

[experts]
epochs = 4
""")
        assert main(["train-expert", "--config", str(config),
                     "--name", "partialInput"]) == 0
        from nlidebias.classifier import load_checkpoint

        model = load_checkpoint(out / "expert-partialInput.json")
        assert model.features == "partialInput"

    def test_unknown_expert_name(self, tmp_path):
        config = write_config(tmp_path / "c.ini", f"""
[run]
output_dir = {tmp_path / 'out'}

[data]
train = synthetic
""")
        assert main(["train-expert", "--config", str(config),
                     "--name", "nosuch"]) == 1


class TestMergeCommand:
    def test_sr_merge_writes_weights_and_dev(self, tmp_path):
        a = make_dataset([(f"p{i} a", f"h{i}", "entailment") for i in range(4)],
                         name="corpus-a")
        b = make_dataset([(f"q{i} b", f"g{i}", "neutral") for i in range(8)],
                         name="corpus-b")
        save_tsv(a, tmp_path / "a.tsv")
        save_tsv(b, tmp_path / "b.tsv")
        save_tsv(a, tmp_path / "a.dev.tsv")
        save_tsv(b, tmp_path / "b.dev.tsv")
        out = tmp_path / "merged"
        config = write_config(tmp_path / "c.ini", f"""
[run]
output_dir = {out}

[merge]
sources = {tmp_path / 'a.tsv'} {tmp_path / 'b.tsv'}
dev_sources = {tmp_path / 'a.dev.tsv'} {tmp_path / 'b.dev.tsv'}
mode = sr
""")
        assert main(["merge", "--config", str(config)]) == 0
        merged = load_tsv(out / "merged.tsv")
        assert len(merged) == 12
        weights = dict(
            line.split("\t") for line in
            (out / "weights.tsv").read_text().splitlines()
        )
        assert float(weights["corpus-a-0"]) == pytest.approx(3.0)
        assert float(weights["corpus-b-0"]) == pytest.approx(1.5)
        assert (out / "merged-dev.tsv").exists()

    def test_pr_needs_performance_table(self, tmp_path):
        a = make_dataset([("p a", "h", "entailment")], name="a")
        save_tsv(a, tmp_path / "a.tsv")
        config = write_config(tmp_path / "c.ini", f"""
[run]
output_dir = {tmp_path / 'out'}

[merge]
sources = {tmp_path / 'a.tsv'}
mode = pr
""")
        assert main(["merge", "--config", str(config)]) == 1


class TestAugmentCommand:
    def test_text_swap_on_contradiction_corpus(self, tmp_path):
        data = make_dataset(
            [(f"p{i} x", f"h{i} y", "contradiction") for i in range(6)], name="c-only"
        )
        save_tsv(data, tmp_path / "train.tsv")
        out = tmp_path / "aug"
        config = write_config(tmp_path / "c.ini", f"""
[run]
output_dir = {out}

[data]
train = {tmp_path / 'train.tsv'}

[augment]
method = text_swap
""")
        assert main(["augment", "--config", str(config)]) == 0
        augmented = load_tsv(out / "augmented.tsv")
        assert len(augmented) == 12
        meta = json.loads((out / "augmented.meta.json").read_text())
        assert meta["generated"] == 6
        assert meta["dropped"] == 0

    def test_synonym_without_paths_is_config_error(self, tmp_path):
        data = make_dataset([("p x", "h y", "neutral")])
        save_tsv(data, tmp_path / "train.tsv")
        config = write_config(tmp_path / "c.ini", f"""
[run]
output_dir = {tmp_path / 'out'}

[data]
train = {tmp_path / 'train.tsv'}

[augment]
method = synonym
""")
        assert main(["augment", "--config", str(config)]) == 1

    def test_masked_lm_through_pipe_client(self, tmp_path):
        data = make_dataset(
            [(f"p{i} x", f"alpha{i} bravo charlie delta", "neutral") for i in range(3)],
            name="maskme",
        )
        save_tsv(data, tmp_path / "train.tsv")
        out = tmp_path / "aug"
        echo = (
            "import json, sys\n"
            "for line in sys.stdin:\n"
            "    r = json.loads(line)\n"
            "    print(json.dumps({'id': r['id'], 'text': r['text'].replace('[MASK]', 'swapped'), 'status': 'ok'}), flush=True)\n"
        )
        script = tmp_path / "echo_service.py"
        script.write_text(echo, encoding="utf-8")
        config = write_config(tmp_path / "c.ini", f"""
[run]
output_dir = {out}

[data]
train = {tmp_path / 'train.tsv'}

[augment]
method = masked_lm
client_cmd = {sys.executable} {script}
""")
        assert main(["augment", "--config", str(config)]) == 0
        augmented = load_tsv(out / "augmented.tsv")
        assert len(augmented) == 6
        swapped = [i for i in augmented.instances if "swapped" in i.hypothesis]
        assert len(swapped) == 3


class TestSweepCommand:
    def test_matrix_shape_and_median_report(self, tmp_path):
        out = tmp_path / "sweep"
        config = write_config(tmp_path / "c.ini", f"""
[run]
output_dir = {out}
seed = 5

[data]
train = synthetic

[synthetic]
instances_per_split = 150

[training]
epochs = 3
n_pair_buckets = 4096

[sweep]
plans = Baseline ReW:partialInput
seeds = 0 1 2
""")
        assert main(["sweep", "--config", str(config)]) == 0
        lines = (out / "runmatrix.tsv").read_text().splitlines()
        rows = [l for l in lines if not l.startswith("#")][1:]
        assert len(rows) == 6  # 2 plans x 3 seeds
        report = (out / "comparison.tsv").read_text()
        assert "Baseline" in report and "ReW:partialInput" in report
        assert "# aggregation\tmedian over seeds" in report


class TestSweepPlanStability:
    SWEEP_BODY = """
[run]
output_dir = {out}
seed = 5

[data]
train = synthetic

[synthetic]
instances_per_split = 120

[training]
epochs = 3
n_pair_buckets = 4096

[sweep]
plans = {plans}
seeds = 0 1
"""

    def _cells(self, out: Path) -> dict:
        lines = (out / "comparison.tsv").read_text().splitlines()
        rows = [l.split("\t") for l in lines if not l.startswith("#")]
        header = rows[0][1:]
        return {
            (dataset[0], plan): value
            for dataset in rows[1:]
            for plan, value in zip(header, dataset[1:])
        }

    def test_adding_a_plan_preserves_existing_cells(self, tmp_path):
        out_small, out_big = tmp_path / "small", tmp_path / "big"
        small = write_config(
            tmp_path / "s.ini",
            self.SWEEP_BODY.format(out=out_small, plans="Baseline"),
        )
        big = write_config(
            tmp_path / "b.ini",
            self.SWEEP_BODY.format(
                out=out_big,
                plans="Baseline BestEn:wordOverlap,partialInput,sentenceLength",
            ),
        )
        assert main(["sweep", "--config", str(small)]) == 0
        assert main(["sweep", "--config", str(big)]) == 0
        small_cells = self._cells(out_small)
        big_cells = self._cells(out_big)
        for key, value in small_cells.items():
            assert big_cells[key] == value
        assert any(plan.startswith("BestEn") for _, plan in big_cells)


class TestEvalAndReportCommands:
    def test_eval_from_predictions_file(self, tmp_path):
        data = make_dataset(
            [("p a", "h b", "entailment"), ("p c", "h d", "contradiction")],
            name="tiny",
        )
        save_tsv(data, tmp_path / "tiny.tsv")
        predictions = tmp_path / "preds.tsv"
        from nlidebias.evalharness import write_predictions

        probs = np.array([[0.8, 0.1, 0.1], [0.1, 0.1, 0.8]])
        write_predictions(predictions, [i.id for i in data.instances], probs)
        out = tmp_path / "eval"
        config = write_config(tmp_path / "c.ini", f"""
[run]
output_dir = {out}

[eval]
entry.tiny = {tmp_path / 'tiny.tsv'} | three_way | accuracy | adversarial
""")
        assert main(["eval", "--config", str(config),
                     "--predictions", str(predictions)]) == 0
        assert "1.000000" in (out / "report.tsv").read_text()

    def test_eval_needs_exactly_one_source(self, tmp_path):
        config = write_config(tmp_path / "c.ini", f"""
[run]
output_dir = {tmp_path / 'out'}
""")
        assert main(["eval", "--config", str(config)]) == 1

    def test_report_reemission(self, tmp_path):
        out = tmp_path / "out"
        config = write_config(
            tmp_path / "c.ini",
            BASE_SYNTHETIC.format(out=out, strategy="Baseline", experts=""),
        )
        assert main(["train", "--config", str(config)]) == 0
        target = tmp_path / "again.md"
        assert main(["report", "--from", str(out / "report.json"),
                     "--format", "markdown", "--out", str(target)]) == 0
        assert target.read_bytes() == (out / "report.md").read_bytes()
