from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lexisent.evaluation import (
    EvalReport,
    GroupSpec,
    aggregate_report,
    predict_zero_shot,
    read_predictions,
    weighted_macro_f1,
    write_predictions,
)
from lexisent.lexicon import BINARY, THREE_WAY, class_of
from lexisent.training import Checkpoint


def f1_oracle(gold, pred):
    """Confusion-matrix weighted F1 in rational arithmetic via 2PR/(P+R)."""
    total = Fraction(0)
    for c in set(gold):
        tp = sum(g == p == c for g, p in zip(gold, pred))
        n_pred = sum(p == c for p in pred)
        n_gold = sum(g == c for g in gold)
        if tp == 0:
            continue
        p, r = Fraction(tp, n_pred), Fraction(tp, n_gold)
        total += n_gold * (2 * p * r / (p + r))
    return total / len(gold)


class TestF1:
    def test_worked_example(self):
        gold, pred = ["pos", "pos", "neg", "neu"], ["pos", "neg", "neg", "neu"]
        assert f1_oracle(gold, pred) == Fraction(3, 4)
        assert abs(weighted_macro_f1(gold, pred) - 0.75) <= 1e-12

    def test_constant_prediction(self):
        gold, pred = ["a", "a", "b", "b"], ["a"] * 4
        assert f1_oracle(gold, pred) == Fraction(1, 3)
        assert abs(weighted_macro_f1(gold, pred) - 1 / 3) <= 1e-12

    def test_perfect(self):
        assert weighted_macro_f1(["x", "y", "y"], ["x", "y", "y"]) == 1.0

    def test_errors(self):
        with pytest.raises(ValueError):
            weighted_macro_f1([], [])
        with pytest.raises(ValueError):
            weighted_macro_f1(["a"], ["a", "b"])

    @given(st.lists(st.tuples(st.sampled_from("abc"), st.sampled_from("abcd")), min_size=1, max_size=40))
    def test_matches_oracle_bounds_and_relabel(self, pairs):
        gold, pred = [g for g, _ in pairs], [p for _, p in pairs]
        score = weighted_macro_f1(gold, pred)
        assert score == float(f1_oracle(gold, pred))
        assert 0.0 <= score <= 1.0
        assert (score == 1.0) == (gold == pred)
        rename = {"a": "z", "b": "a", "c": "q", "d": "b"}
        assert weighted_macro_f1([rename[g] for g in gold], [rename[p] for p in pred]) == score


class FixedBackend:
    def __init__(self, rows):
        self.rows = rows

    def predict(self, texts):
        return np.array([self.rows[t] for t in texts], dtype=float)

    def to_dict(self):
        return {"kind": "fixed", "rows": self.rows}


class TestZeroShot:
    def test_regression_mapping(self):
        ckpt = Checkpoint(FixedBackend({"s": [-0.5], "big": [12.0]}))
        assert [r.pred for r in predict_zero_shot(ckpt, ["s"], THREE_WAY)] == ["neutral"]
        assert [r.pred for r in predict_zero_shot(ckpt, ["s"], BINARY)] == ["negative"]
        (rec,) = predict_zero_shot(ckpt, ["big"], THREE_WAY)
        assert rec.score == 5.0 and rec.pred == "positive"

    def test_argmax(self):
        ckpt = Checkpoint(FixedBackend({"s": [0.1, 2.0, 0.3]}), ("negative", "neutral", "positive"))
        assert predict_zero_shot(ckpt, ["s"], THREE_WAY)[0].pred == "neutral"

    def test_arity_mismatch(self):
        ckpt = Checkpoint(FixedBackend({"s": [0.1, 2.0]}), ("negative", "positive"))
        with pytest.raises(ValueError, match="needs 3"):
            predict_zero_shot(ckpt, ["s"], THREE_WAY)

    def test_agrees_with_class_of(self):
        grid = np.linspace(-6, 6, 2401)
        ckpt = Checkpoint(FixedBackend({str(i): [v] for i, v in enumerate(grid)}))
        texts = [str(i) for i in range(len(grid))]
        for task in (BINARY, THREE_WAY):
            preds = [r.pred for r in predict_zero_shot(ckpt, texts, task)]
            assert preds == [class_of(float(np.clip(v, -5, 5)), task) for v in grid]

    def test_jsonl_round_trip(self, tmp_path):
        ckpt = Checkpoint(FixedBackend({"a b": [1.5], "c": [-2.0]}), metadata={"id": "toy"})
        records = predict_zero_shot(ckpt, ["a b", "c"], THREE_WAY, gold=["positive", "negative"])
        write_predictions(records, tmp_path / "p.jsonl")
        assert read_predictions(tmp_path / "p.jsonl") == records
        assert records[0].model == "toy"


HMR = GroupSpec({"HM-R": ["en", "es", "id"], "African": ["sw", "am"]}, exclusions={"HM-R": ["en"]})


class TestAggregate:
    def test_group_mean(self):
        report = aggregate_report({"es": 0.6, "id": 0.8}, HMR)
        assert report.groups == {"HM-R": pytest.approx(0.7, abs=1e-15)}

    def test_average_of_group_means(self):
        report = aggregate_report({"es": 0.6, "id": 0.8, "sw": 0.4, "am": 0.6, "en": 0.99}, HMR)
        assert report.groups["African"] == 0.5
        assert report.average == pytest.approx(0.6, abs=1e-15)
        assert report.languages["en"] == 0.99

    def test_exclusion(self):
        with_en = aggregate_report({"en": 0.1, "es": 0.9}, HMR)
        assert with_en.groups["HM-R"] == 0.9

    def test_seed_lists(self):
        report = aggregate_report({"es": [0.6, 0.8]}, HMR)
        assert report.languages["es"] == 0.7 and report.seeds["es"] == [0.6, 0.8]

    def test_language_in_two_groups(self):
        with pytest.raises(ValueError, match="'sw'"):
            GroupSpec({"A": ["sw"], "B": ["sw"]})

    def test_unassigned_language(self):
        with pytest.raises(ValueError, match="no group"):
            aggregate_report({"xx": 0.5}, HMR)
        spec = GroupSpec({"A": ["es"]}, ungrouped=["xx"])
        assert aggregate_report({"xx": 0.5, "es": 0.25}, spec).average == 0.25

    def test_json_round_trip(self, tmp_path):
        report = aggregate_report({"es": 0.6, "sw": [0.1, 0.3]}, HMR)
        (tmp_path / "r.json").write_text(report.to_json())
        assert EvalReport.load(tmp_path / "r.json") == report
