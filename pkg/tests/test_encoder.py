import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lexisent.encoder import (
    CROSS_ENTROPY,
    MSE,
    DivergenceError,
    EmptyInputError,
    ReferenceEncoder,
    TrainConfig,
    backend_from_dict,
    char_ngrams,
    fit,
    forward,
    objective_loss,
    train_step,
)


def tiny_encoder(words, n_outputs=1, dim=4, seed=0):
    enc = ReferenceEncoder(n_outputs=n_outputs, dim=dim, dropout=0.0, seed=seed)
    enc.prepare(words)
    return enc


def rel_error(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12)


def numeric_grads(enc, texts, targets, objective, mask=None, eps=1e-6):
    grads = {}
    for name, param in enc.parameters().items():
        g = np.zeros_like(param)
        it = np.nditer(param, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            old = param[idx]
            param[idx] = old + eps
            up = enc.loss_and_grads(texts, targets, objective, mask)[0]
            param[idx] = old - eps
            down = enc.loss_and_grads(texts, targets, objective, mask)[0]
            param[idx] = old
            g[idx] = (up - down) / (2 * eps)
        grads[name] = g
    return grads


class TestForward:
    def test_char_ngrams(self):
        assert char_ngrams("ab") == ["<ab", "ab>"]
        assert char_ngrams("a") == ["<a>"]
        assert char_ngrams("abcd") == ["<ab", "abc", "bcd", "cd>"]

    def test_two_tokens_against_hand_matrix_arithmetic(self):
        enc = ReferenceEncoder(n_outputs=1, dim=2, dropout=0.0)
        enc.prepare(["ab cd"])
        rows = {u: i for u, i in enc.vocab.items()}
        # fixed tiny weights: unit row i = (i, -i / 2)
        enc.embedding = np.array([[i, -i / 2] for i in range(len(rows))], dtype=float)
        enc.head_weight = np.array([[0.5, 2.0]])
        enc.head_bias = np.array([0.25])
        e_ab = sum(enc.embedding[rows[u]] for u in ["w:ab", "g:<ab", "g:ab>"])
        e_cd = sum(enc.embedding[rows[u]] for u in ["w:cd", "g:<cd", "g:cd>"])
        pooled = (e_ab + e_cd) / 2
        expected = pooled @ np.array([0.5, 2.0]) + 0.25
        assert forward(enc, "ab cd")[0] == pytest.approx(expected, abs=1e-12)
        assert forward(enc, "ab")[0] == pytest.approx(e_ab @ np.array([0.5, 2.0]) + 0.25, abs=1e-12)

    def test_repetition_invariance(self):
        enc = tiny_encoder(["a b"])
        np.testing.assert_allclose(enc.forward("a a a"), enc.forward("a"), atol=1e-12)

    @given(st.permutations(["good", "bad", "fine", "meh", "ok"]))
    def test_permutation_invariance(self, words):
        enc = tiny_encoder(["good bad fine meh ok"], seed=4)
        np.testing.assert_allclose(enc.forward(" ".join(words)), enc.forward("good bad fine meh ok"), atol=1e-12)

    def test_truncation(self):
        enc = tiny_encoder(["a b c d"])
        enc.max_length = 2
        np.testing.assert_allclose(enc.forward("a b c d"), enc.forward("a b"), atol=1e-12)
        assert enc.tokenize("a b c d") == ["a", "b"]

    def test_empty_input(self):
        with pytest.raises(EmptyInputError):
            tiny_encoder(["a"]).forward("   ")

    def test_unknown_tokens_back_off(self):
        enc = tiny_encoder(["bagus"])
        assert enc.token_units("baguslah") != [enc.vocab["<unk>"]]
        assert enc.token_units("xyz") == [enc.vocab["<unk>"]]
        assert np.all(np.isfinite(enc.forward("qqq zzz")))

    def test_eval_is_deterministic_train_uses_dropout(self):
        enc = tiny_encoder(["a b c"], dim=32)
        enc.dropout = 0.5
        np.testing.assert_array_equal(enc.forward("a b"), enc.forward("a b"))
        outs = {tuple(enc.forward("a b", mode="train")) for _ in range(5)}
        assert len(outs) > 1

    def test_init_range(self):
        enc = tiny_encoder(["alpha beta"], dim=32)
        for p in enc.parameters().values():
            assert np.all(np.abs(p) <= 0.05)


class TestLosses:
    def test_mse_zero_at_target(self):
        loss, grad = objective_loss(np.array([[1.5], [-2.0]]), [1.5, -2.0], MSE)
        assert loss == 0.0 and np.all(grad == 0.0)

    def test_cross_entropy_uniform(self):
        loss, _ = objective_loss(np.zeros((4, 3)), [0, 1, 2, 1], CROSS_ENTROPY)
        assert loss == pytest.approx(math.log(3), abs=1e-12)

    def test_bad_class_index(self):
        with pytest.raises(ValueError):
            objective_loss(np.zeros((1, 2)), [2], CROSS_ENTROPY)


class TestGradients:
    @pytest.mark.parametrize("objective", [MSE, CROSS_ENTROPY])
    @pytest.mark.parametrize("case", range(10))
    def test_matches_central_differences(self, objective, case):
        rng = np.random.default_rng(case)
        vocab = ["ab", "bc", "cab", "d", "abd"]
        k = 1 if objective == MSE else 3
        enc = ReferenceEncoder(n_outputs=k, dim=3, dropout=0.0, seed=case, init_scale=0.5)
        enc.prepare(vocab)
        texts = [" ".join(rng.choice(vocab + ["zz"], size=rng.integers(1, 4))) for _ in range(3)]
        targets = rng.uniform(-5, 5, 3) if objective == MSE else rng.integers(0, k, 3)
        mask = None if case % 2 == 0 else (rng.random((3, 3)) > 0.3) / 0.7
        _, analytic = enc.loss_and_grads(texts, targets, objective, mask)
        numeric = numeric_grads(enc, texts, targets, objective, mask)
        for name in analytic:
            assert rel_error(analytic[name], numeric[name]) < 1e-4, name

    def test_step_decreases_loss_by_first_order_amount(self):
        enc = ReferenceEncoder(n_outputs=1, dim=4, dropout=0.0, seed=2, init_scale=0.5)
        enc.prepare(["good"])
        lr = 1e-4
        before, grads = enc.loss_and_grads(["good"], [4.0], MSE)
        sq_norm = sum(float(np.sum(g * g)) for g in grads.values())
        returned = train_step(enc, (["good"], [4.0]), MSE, TrainConfig(learning_rate=lr, dropout=0.0))
        after = enc.loss(["good"], [4.0], MSE)
        assert returned == before
        assert after < before
        # loss(theta - lr g) = loss - lr |g|^2 + O(lr^2)
        assert (before - after) / lr == pytest.approx(sq_norm, rel=1e-2)

    def test_divergence_raises(self):
        enc = tiny_encoder(["a"])
        enc.head_bias[:] = np.inf
        with pytest.raises(DivergenceError):
            enc.train_step(["a"], [1.0], MSE, 0.1)


class ScriptedBackend:
    """Stub backend replaying a fixed sequence of validation losses."""

    n_outputs = 1
    max_length = 10
    dropout = 0.0

    def __init__(self, val_losses):
        self.val_losses = list(val_losses)
        self.calls = 0
        self.epoch = 0

    def prepare(self, texts):
        pass

    def reseed(self, seed):
        pass

    def loss(self, texts, targets, objective):
        value = 10.0 if self.calls == 0 else self.val_losses[self.calls - 1]
        self.calls += 1
        return value

    def train_step(self, texts, targets, objective, lr):
        self.epoch = self.calls
        return 1.0

    def get_state(self):
        return self.epoch

    def set_state(self, state):
        self.epoch = state


class TestFit:
    def test_frozen_validation_stops_after_patience_plus_one(self):
        backend = ScriptedBackend([3.0] * 50)
        result = fit(backend, (["a"], [0.0]), (["b"], [0.0]), MSE, TrainConfig(max_epochs=50, patience=5))
        assert len(result.curve) == 6 and result.stopped_early and result.best_epoch == 1

    def test_returns_best_not_last(self):
        backend = ScriptedBackend([5, 4, 3, 4, 5, 6, 7, 8, 9])
        result = fit(backend, (["a"], [0.0]), (["b"], [0.0]), MSE, TrainConfig(max_epochs=20, patience=5))
        assert result.best_epoch == 3 and len(result.curve) == 8
        assert backend.epoch == 3

    def test_improving_runs_all_epochs(self):
        enc = ReferenceEncoder(dropout=0.0, seed=1)
        # validation texts differ from training texts but pool to the same vectors
        train = (["good", "bad"], [4.0, -4.0])
        val = (["good good", "bad bad"], [4.0, -4.0])
        config = TrainConfig(learning_rate=0.01, max_epochs=8, patience=2, batch_size=2, dropout=0.0)
        result = fit(enc, train, val, MSE, config)
        assert len(result.curve) == 8 and result.best_epoch == 8
        losses = [c["val_loss"] for c in result.curve]
        assert all(b < a for a, b in zip(losses, losses[1:]))

    def test_empty_sets(self):
        with pytest.raises(ValueError):
            fit(ReferenceEncoder(), ([], []), (["a"], [0.0]), MSE, TrainConfig())

    def test_seeded_determinism(self):
        words = [f"w{i}x" for i in range(30)]
        targets = np.linspace(-4, 4, 30)
        curves = []
        for _ in range(2):
            enc = ReferenceEncoder(seed=7)
            r = fit(enc, (words[:24], targets[:24]), (words[24:], targets[24:]), MSE,
                    TrainConfig(seed=7, max_epochs=15, batch_size=4))
            curves.append((r.curve, enc.to_dict()))
        assert curves[0] == curves[1]

    def test_memorizes_separable_toy_lexicon(self):
        rng = np.random.default_rng(0)
        words = [f"{c}{v}{c2}" for c, v, c2 in zip("bdfgklmnprstvzbdfgkl", "aeiouaeiouaeiouaeiou", "mnprstvzbdfgklmnprst")]
        assert len(set(words)) == 20
        targets = rng.uniform(-5, 5, 20)

        # oracle: least squares on pooled one-hot word features reproduces the targets
        features = np.hstack([np.eye(20), np.ones((20, 1))])
        coef, *_ = np.linalg.lstsq(features, targets, rcond=None)
        assert np.mean((features @ coef - targets) ** 2) < 1e-20

        enc = ReferenceEncoder(seed=0)
        config = TrainConfig(learning_rate=0.02, max_epochs=100, patience=100, batch_size=4, seed=0)
        fit(enc, (words, targets), (words[:5], targets[:5]), MSE, config)
        assert enc.loss(words, targets, MSE) < 0.1


def test_checkpoint_dict_round_trip():
    enc = tiny_encoder(["hello world"], n_outputs=3, dim=5)
    clone = backend_from_dict(enc.to_dict())
    np.testing.assert_array_equal(clone.predict(["hello there"]), enc.predict(["hello there"]))
    assert clone.to_dict() == enc.to_dict()


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(patience=10, max_epochs=5)
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0)
    assert TrainConfig.lexicon_pretraining().max_length == 10
    assert TrainConfig.sentence_finetuning().max_length == 512
    assert TrainConfig.sentence_finetuning().max_epochs == 20
