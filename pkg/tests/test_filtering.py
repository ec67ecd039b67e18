import json
import math

import numpy as np
import pytest

from lexisent.encoder import DivergenceError, ReferenceEncoder, TrainConfig
from lexisent.filtering import (
    BELOW_BETA,
    MAX_ITERATIONS,
    POOL_EMPTY,
    FilterConfig,
    rejected_lexicon,
    run_filter,
)
from lexisent.lexicon import LexiconEntry, LexiconError, Source, ValenceLexicon

FAST = TrainConfig(max_epochs=3, patience=3, batch_size=8, max_length=10)


def make_base(n=40, seed=0):
    rng = np.random.default_rng(seed)
    return ValenceLexicon.from_entries(
        LexiconEntry(f"en{i}w", "en", float(rng.uniform(-5, 5))) for i in range(n))


def make_candidates(n=100, seed=1, langs=("id", "sw")):
    rng = np.random.default_rng(seed)
    return ValenceLexicon.from_entries(
        LexiconEntry(f"c{i}x", langs[i % len(langs)], float(rng.uniform(-5, 5)), source=Source.TRANSLATED)
        for i in range(n))


class TableEncoder(ReferenceEncoder):
    """Reference encoder whose predictions come from a fixed word table."""

    def __init__(self, table, **kw):
        super().__init__(**kw)
        self.table = table

    def predict(self, texts):
        return np.array([[self.table.get(t, 0.0)] for t in texts])


class TestTrivialThresholds:
    def test_infinite_alpha_accepts_everything(self):
        base, cands = make_base(), make_candidates()
        out, trace = run_filter(base, cands, FilterConfig(alpha=math.inf, beta=5, train=FAST), ReferenceEncoder())
        assert trace.termination == POOL_EMPTY
        assert [r.accepted for r in trace.records] == [100]
        assert out.keys() == base.keys() | cands.keys()

    def test_zero_alpha_accepts_nothing(self):
        base, cands = make_base(), make_candidates()
        out, trace = run_filter(base, cands, FilterConfig(alpha=0, beta=5, train=FAST), ReferenceEncoder())
        assert trace.termination == BELOW_BETA and len(trace.records) == 1
        assert trace.accepted_total == 0 and out.keys() == base.keys()

    def test_boundary_is_strict(self):
        base = make_base(10)
        cands = ValenceLexicon.from_entries([
            LexiconEntry("exact", "id", 0.5), LexiconEntry("inside", "id", 0.5), LexiconEntry("far", "id", -4.0)])
        backend = TableEncoder({"exact": 3.0, "inside": 2.999, "far": 4.0})
        out, trace = run_filter(base, cands, FilterConfig(alpha=2.5, beta=1, train=FAST), backend)
        assert trace.accepted_keys() == {("inside", "id")}
        assert ("exact", "id") not in out

    def test_predictions_are_clamped(self):
        base = make_base(10)
        cands = ValenceLexicon.from_entries([LexiconEntry("big", "id", 3.0)])
        backend = TableEncoder({"big": 50.0})
        _, trace = run_filter(base, cands, FilterConfig(alpha=2.5, beta=1, train=FAST), backend)
        assert trace.candidates[("big", "id")].predicted_valence == 5.0
        assert trace.accepted_keys() == {("big", "id")}


@pytest.fixture(scope="module")
def run():
    base, cands = make_base(60), make_candidates(200)
    config = FilterConfig(alpha=2.5, beta=5, train=FAST)
    out, trace = run_filter(base, cands, config, ReferenceEncoder(seed=0), seed=0)
    return base, cands, config, out, trace


class TestInvariants:
    def test_output_keys(self, run):
        base, cands, _, out, trace = run
        assert out.keys() == base.keys() | trace.accepted_keys()
        assert not (rejected_lexicon(cands, trace).keys() & out.keys())
        assert all(out[k].source is Source.ACCEPTED for k in trace.accepted_keys())

    def test_pool_shrinks_by_accepted(self, run):
        _, cands, config, _, trace = run
        pool = len(cands)
        for r in trace.records:
            assert r.pool_size == pool - r.accepted
            pool = r.pool_size
        assert len(trace.records) <= max(math.ceil(len(cands) / config.beta) + 1, 1)
        assert len(trace.records) <= config.max_iterations
        assert trace.accepted_total == len(trace.accepted_keys())

    def test_termination_reason_matches_last_record(self, run):
        _, _, config, _, trace = run
        last = trace.records[-1]
        if trace.termination == POOL_EMPTY:
            assert last.pool_size == 0
        elif trace.termination == BELOW_BETA:
            assert last.accepted < config.beta
        for r in trace.records[:-1]:
            assert r.accepted >= config.beta and r.pool_size > 0

    def test_split_ratio_per_batch(self, run):
        base, _, _, out, trace = run
        for it in {c.accepted_at_iteration for c in trace.candidates.values()} - {None}:
            batch = [k for k, c in trace.candidates.items() if c.accepted_at_iteration == it]
            n_train = sum(out.split[k] == "train" for k in batch)
            assert abs(n_train - 0.8 * len(batch)) <= 1
        n_base_train = sum(out.split[k] == "train" for k in base.keys())
        assert abs(n_base_train - 0.8 * len(base)) <= 1

    def test_deterministic(self, run):
        base, cands, config, out, trace = run
        out2, trace2 = run_filter(base, cands, config, ReferenceEncoder(seed=0), seed=0)
        assert trace2.to_jsonl() == trace.to_jsonl()
        assert trace2.candidates == trace.candidates
        assert out2.entries == out.entries and out2.split == out.split

    def test_trace_jsonl(self, run, tmp_path):
        trace = run[4]
        trace.save(tmp_path / "t.jsonl")
        rows = [json.loads(line) for line in (tmp_path / "t.jsonl").read_text().splitlines()]
        assert len(rows) == len(trace.records)
        assert rows[-1]["termination"] == trace.termination


def test_max_iterations_cap():
    base, cands = make_base(10), make_candidates(30)
    # accept one candidate per iteration by giving every other one an unreachable prediction
    table = {k[0]: cands[k].valence + 9.0 * (1 if cands[k].valence < 0 else -1) for k in cands.keys()}
    first = sorted(cands.keys(), key=lambda k: (k[1], k[0]))[0]
    table[first[0]] = cands[first].valence
    backend = TableEncoder(table)
    _, trace = run_filter(base, cands, FilterConfig(alpha=2.5, beta=1, max_iterations=1, train=FAST), backend)
    assert trace.termination == MAX_ITERATIONS and len(trace.records) == 1


def test_cold_start_differs_only_by_flag():
    base, cands = make_base(30), make_candidates(60)
    warm = run_filter(base, cands, FilterConfig(alpha=2.5, beta=1, train=FAST), ReferenceEncoder())[1]
    cold = run_filter(base, cands, FilterConfig(alpha=2.5, beta=1, train=FAST, cold_start=True), ReferenceEncoder())[1]
    assert warm.records[0] == cold.records[0]


class TestErrors:
    def test_empty_base(self):
        with pytest.raises(LexiconError, match="empty"):
            run_filter(ValenceLexicon(), make_candidates(), FilterConfig(), ReferenceEncoder())

    def test_non_english_base(self):
        base = ValenceLexicon.from_entries([LexiconEntry("bagus", "id", 3.0)])
        with pytest.raises(LexiconError, match="English-only"):
            run_filter(base, make_candidates(), FilterConfig(), ReferenceEncoder())

    def test_overlap(self):
        base = make_base(5)
        cands = ValenceLexicon.from_entries([LexiconEntry("en0w", "en", 1.0)])
        with pytest.raises(LexiconError, match="overlap"):
            run_filter(base, cands, FilterConfig(), ReferenceEncoder())

    def test_divergence_names_iteration(self):
        base, cands = make_base(10), make_candidates(4)
        # first iteration accepts one candidate, so a second training round runs
        table = {k[0]: (cands[k].valence if i == 0 else -9.0 * np.sign(cands[k].valence))
                 for i, k in enumerate(sorted(cands.keys(), key=lambda k: (k[1], k[0])))}

        class Exploding(TableEncoder):
            fits = 0

            def prepare(self, texts):
                self.fits += 1
                super().prepare(texts)

            def train_step(self, texts, targets, objective, lr):
                if self.fits >= 2:
                    raise DivergenceError("non-finite loss nan")
                return super().train_step(texts, targets, objective, lr)

        with pytest.raises(DivergenceError, match="filter iteration 2"):
            run_filter(base, cands, FilterConfig(alpha=2.5, beta=1, train=FAST), Exploding(table))

    @pytest.mark.parametrize("kw", [dict(alpha=-1), dict(beta=0), dict(beta=2.5), dict(split_ratio=1.0)])
    def test_config_validation(self, kw):
        with pytest.raises(ValueError):
            FilterConfig(**kw)
