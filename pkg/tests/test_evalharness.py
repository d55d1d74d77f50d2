import numpy as np
import pytest
from scipy import stats
from sklearn.metrics import matthews_corrcoef

from nlidebias.corpus import LabelScheme
from nlidebias.evalharness import (
    Checkpoint,
    EvalEntry,
    EvalError,
    EvalReport,
    EvalSuite,
    RunMatrix,
    accuracy,
    correlation_matrix,
    emit_report,
    evaluate_model,
    map_prediction,
    mcc,
    pearson,
    read_predictions,
    select_model,
    write_predictions,
)

from conftest import ConstantModel, make_dataset


def one_hot(k):
    out = np.zeros(3)
    out[k] = 1.0
    return out


# expected projection of each 3-way argmax under each scheme
MAPPING_TABLE = {
    LabelScheme.THREE_WAY: ("entailment", "neutral", "contradiction"),
    LabelScheme.NOT_E_E: ("entailment", "non-entailment", "non-entailment"),
    LabelScheme.NOT_C_C: ("non-contradiction", "non-contradiction", "contradiction"),
    LabelScheme.E_C: ("entailment", None, "contradiction"),
    LabelScheme.N_E: ("entailment", "neutral", None),
}


class TestMapPrediction:
    @pytest.mark.parametrize("scheme", list(LabelScheme))
    @pytest.mark.parametrize("winner", [0, 1, 2])
    def test_exhaustive_table(self, scheme, winner):
        assert map_prediction(one_hot(winner), scheme) == MAPPING_TABLE[scheme][winner]

    def test_tie_breaks_toward_lowest_index(self):
        assert map_prediction(np.array([0.4, 0.4, 0.2]), LabelScheme.THREE_WAY) == (
            "entailment"
        )
        assert map_prediction(np.full(3, 1 / 3), LabelScheme.NOT_C_C) == (
            "non-contradiction"
        )

    def test_total_over_all_schemes(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            raw = rng.uniform(size=3)
            for scheme in LabelScheme:
                verdict = map_prediction(raw / raw.sum(), scheme)
                assert verdict is None or verdict in scheme.allowed_labels


class TestAccuracy:
    def test_all_correct(self):
        preds = np.stack([one_hot(0), one_hot(2)])
        assert accuracy(preds, ["entailment", "contradiction"]) == 1.0

    def test_half_correct(self):
        preds = np.stack([one_hot(0), one_hot(0)])
        assert accuracy(preds, ["entailment", "contradiction"]) == 0.5

    def test_mapping_composition_on_binary_scheme(self):
        # a model that always says contradiction is always right on
        # all-non-entailment data under the (non-E, E) scheme
        preds = np.tile(one_hot(2), (4, 1))
        golds = ["non-entailment"] * 4
        assert accuracy(preds, golds, LabelScheme.NOT_E_E) == 1.0

    def test_out_of_scheme_prediction_counts_wrong(self):
        preds = np.tile(one_hot(1), (4, 1))  # neutral under (E, C)
        golds = ["entailment", "contradiction"] * 2
        assert accuracy(preds, golds, LabelScheme.E_C) == 0.0

    def test_empty_input_rejected(self):
        with pytest.raises(EvalError, match="empty"):
            accuracy(np.zeros((0, 3)), [])


class TestMcc:
    def test_perfect_binary(self):
        assert mcc(["a", "b", "a", "b"], ["a", "b", "a", "b"]) == pytest.approx(1.0)

    def test_constant_predictor_is_zero(self):
        assert mcc(["a", "a", "a"], ["a", "b", "a"]) == 0.0

    def test_hand_confusion_matrix(self):
        # confusion [[2,1],[1,2]]: (2*2-1*1)/sqrt(3*3*3*3) = 3/9
        golds = ["x", "x", "x", "y", "y", "y"]
        preds = ["x", "x", "y", "y", "y", "x"]
        assert mcc(preds, golds) == pytest.approx(1 / 3)

    def test_against_sklearn_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(25):
            golds = rng.integers(0, 3, size=60)
            preds = rng.integers(0, 3, size=60)
            expected = matthews_corrcoef(golds, preds)
            assert mcc(preds.tolist(), golds.tolist()) == pytest.approx(
                expected, abs=1e-12
            )

    def test_needs_two_instances(self):
        with pytest.raises(EvalError, match="two instances"):
            mcc(["a"], ["a"])


class TestPearson:
    def test_perfect_positive(self):
        assert pearson([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0)

    def test_perfect_negative(self):
        assert pearson([1, 2, 3], [4, 3, 2]) == pytest.approx(-1.0)

    def test_hand_case(self):
        assert pearson([1, 2, 3], [1, 3, 2]) == pytest.approx(0.5)

    def test_against_scipy_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(25):
            x = rng.normal(size=30)
            y = rng.normal(size=30)
            expected = stats.pearsonr(x, y).statistic
            assert pearson(x, y) == pytest.approx(expected, abs=1e-12)

    def test_zero_variance_rejected(self):
        with pytest.raises(EvalError, match="zero-variance"):
            pearson([1.0, 1.0, 1.0], [1, 2, 3])


class TestCorrelationMatrix:
    def test_duplicated_column_fully_correlated(self):
        rng = np.random.default_rng(3)
        col = rng.normal(size=12)
        runs = RunMatrix(
            tuple(f"r{i}" for i in range(12)), ("a", "b"),
            np.column_stack([col, col]),
        )
        result = correlation_matrix(runs)
        assert result.values[0, 1] == pytest.approx(1.0)

    def test_symmetric_with_unit_diagonal(self):
        rng = np.random.default_rng(4)
        runs = RunMatrix(
            tuple(f"r{i}" for i in range(20)), ("a", "b", "c"),
            rng.normal(size=(20, 3)),
        )
        result = correlation_matrix(runs)
        np.testing.assert_array_equal(result.values, result.values.T)
        np.testing.assert_allclose(np.diag(result.values), 1.0)

    def test_independent_columns_nearly_uncorrelated(self):
        rng = np.random.default_rng(5)
        runs = RunMatrix(
            tuple(f"r{i}" for i in range(1000)), ("a", "b"),
            rng.normal(size=(1000, 2)),
        )
        result = correlation_matrix(runs)
        assert abs(result.values[0, 1]) < 0.1

    def test_positive_semidefinite_on_full_rank_inputs(self):
        rng = np.random.default_rng(6)
        runs = RunMatrix(
            tuple(f"r{i}" for i in range(50)), tuple("abcd"),
            rng.normal(size=(50, 4)),
        )
        result = correlation_matrix(runs)
        eigenvalues = np.linalg.eigvalsh(result.values)
        assert eigenvalues.min() > -1e-9

    def test_constant_column_flagged_undefined(self):
        runs = RunMatrix(
            ("r0", "r1", "r2"), ("a", "b"),
            np.array([[0.5, 0.1], [0.5, 0.4], [0.5, 0.2]]),
        )
        result = correlation_matrix(runs)
        assert result.undefined == ("a",)
        assert np.isnan(result.values[0, 0])
        assert result.values[1, 1] == 1.0

    def test_missing_cells_rejected(self):
        runs = RunMatrix(
            ("r0", "r1"), ("a",), np.array([[0.5], [np.nan]])
        )
        with pytest.raises(EvalError, match="complete"):
            correlation_matrix(runs)


class TestSelectModel:
    def _pool(self, accuracies):
        """Checkpoints whose dev behavior is scripted per dataset name."""
        pool = []
        for epoch, table in enumerate(accuracies, start=1):
            class Scripted:
                def __init__(self, table):
                    self.table = table

                def predict_proba(self, instances):
                    # right on the first ceil(acc * n) instances, wrong after
                    source = instances[0].source
                    acc = self.table[source]
                    from nlidebias.corpus import label_index

                    n = len(instances)
                    out = np.zeros((n, 3))
                    cut = round(acc * n)
                    for i, inst in enumerate(instances):
                        gold = label_index(inst.gold)
                        out[i, gold if i < cut else (gold + 1) % 3] = 1.0
                    return out

            pool.append(Checkpoint(epoch=epoch, model=Scripted(table)))
        return pool

    def _dev(self, name, n=10):
        rows = [(f"p{i} x", f"h{i}", "entailment") for i in range(n)]
        return make_dataset(rows, name=name)

    def test_single_checkpoint_under_all_strategies(self):
        dev = {"origin": self._dev("origin")}
        pool = self._pool([{"origin": 0.5}])
        assert select_model(pool, "origin", dev) is pool[0]
        assert select_model(pool, "mixed", dev) is pool[0]
        assert select_model(pool, "oracle", dev)["origin"] is pool[0]

    def test_origin_picks_best_on_origin_dev(self):
        dev = {"origin": self._dev("origin"), "extra": self._dev("extra")}
        pool = self._pool([
            {"origin": 0.4, "extra": 0.9},
            {"origin": 0.8, "extra": 0.1},
        ])
        assert select_model(pool, "origin", dev) is pool[1]

    def test_oracle_dominates_origin_per_selection_set(self):
        rng = np.random.default_rng(7)
        names = ["origin", "t1", "t2", "t3"]
        dev = {name: self._dev(name) for name in names}
        tables = [
            {name: round(float(rng.uniform(0, 1)), 1) for name in names}
            for _ in range(5)
        ]
        pool = self._pool(tables)
        origin_choice = select_model(pool, "origin", dev)
        oracle_choice = select_model(pool, "oracle", dev)
        for name in names:
            assert (
                oracle_choice[name].accuracy_on(dev[name])
                >= origin_choice.accuracy_on(dev[name])
            )

    def test_mixed_equals_origin_when_dev_sets_identical(self):
        dev_a = self._dev("same")
        pool = self._pool([{"same": 0.3}, {"same": 0.7}, {"same": 0.5}])
        mixed = select_model(pool, "mixed", {"a": dev_a, "b": dev_a})
        origin = select_model(pool, "origin", {"origin": dev_a})
        assert mixed is origin

    def test_tie_prefers_earliest_epoch(self):
        dev = {"origin": self._dev("origin")}
        pool = self._pool([{"origin": 0.7}, {"origin": 0.7}, {"origin": 0.7}])
        assert select_model(pool, "origin", dev).epoch == 1

    def test_missing_dev_set_rejected(self):
        with pytest.raises(EvalError, match="dev set"):
            select_model(self._pool([{"x": 1.0}]), "origin", {})


class TestReports:
    def _report(self):
        suite_scores = {
            "Baseline": {"adv1": 0.5, "adv2": 0.25, "gen1": 0.75},
            "ReW": {"adv1": 0.625, "adv2": 0.5, "gen1": 0.7},
        }
        return EvalReport(
            columns=("Baseline", "ReW"),
            rows=("adv1", "adv2", "gen1"),
            scores=suite_scores,
            groups={"adversarial": ("adv1", "adv2"), "generalization": ("gen1",)},
            metadata={"config_hash": "deadbeef", "seed": "7"},
        )

    def test_emit_deterministic(self, tmp_path):
        report = self._report()
        a = emit_report(report, "tsv", tmp_path / "a.tsv")
        b = emit_report(report, "tsv", tmp_path / "b.tsv")
        assert a.read_bytes() == b.read_bytes()
        m1 = emit_report(report, "markdown", tmp_path / "a.md")
        m2 = emit_report(report, "markdown", tmp_path / "b.md")
        assert m1.read_bytes() == m2.read_bytes()

    def test_averages_recomputable(self, tmp_path):
        report = self._report()
        path = emit_report(report, "tsv", tmp_path / "r.tsv")
        lines = [
            line.split("\t") for line in path.read_text().splitlines()
            if not line.startswith("#")
        ]
        table = {row[0]: [float(v) for v in row[1:]] for row in lines[1:]}
        np.testing.assert_allclose(
            table["Avg. (adversarial)"],
            np.mean([table["adv1"], table["adv2"]], axis=0),
            atol=1e-9,
        )

    def test_metadata_block_present(self, tmp_path):
        report = self._report()
        text = emit_report(report, "tsv", tmp_path / "r.tsv").read_text()
        assert "# config_hash\tdeadbeef" in text
        assert "# seed\t7" in text
        markdown = emit_report(report, "markdown", tmp_path / "r.md").read_text()
        assert "- config_hash: deadbeef" in markdown

    def test_unknown_format_rejected(self, tmp_path):
        with pytest.raises(EvalError, match="format"):
            emit_report(self._report(), "xml", tmp_path / "r.xml")


class TestEvaluateModel:
    def test_suite_scores_by_scheme_and_metric(self):
        three_way = make_dataset(
            [("a b", "c", "entailment"), ("d e", "f", "contradiction")],
            name="tw",
        )
        binary = make_dataset(
            [("a b", "c", "non-entailment")], name="bin",
            scheme=LabelScheme.NOT_E_E,
        )
        suite = EvalSuite((
            EvalEntry("tw", three_way, "accuracy", "adversarial"),
            EvalEntry("bin", binary, "accuracy", "adversarial"),
            EvalEntry("tw-mcc", three_way, "mcc", "generalization"),
        ))
        always_contradiction = ConstantModel([0.1, 0.2, 0.7])
        scores = evaluate_model(always_contradiction, suite)
        assert scores["tw"] == 0.5
        assert scores["bin"] == 1.0  # contradiction projects onto non-entailment
        assert scores["tw-mcc"] == 0.0  # constant predictor convention

    def test_duplicate_names_rejected(self, toy_dataset):
        entry = EvalEntry("same", toy_dataset, "accuracy")
        with pytest.raises(EvalError, match="unique"):
            EvalSuite((entry, entry))


class TestPredictionsFile:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(8)
        probs = rng.dirichlet(np.ones(3), size=6)
        ids = [f"inst-{i}" for i in range(6)]
        path = tmp_path / "preds.tsv"
        write_predictions(path, ids, probs)
        loaded_ids, loaded = read_predictions(path)
        assert loaded_ids == ids
        np.testing.assert_array_equal(loaded, probs)

    def test_malformed_line_rejected(self, tmp_path):
        path = tmp_path / "bad.tsv"
        path.write_text("id\t0.5\t0.5\n", encoding="utf-8")
        with pytest.raises(EvalError, match="4 columns"):
            read_predictions(path)
