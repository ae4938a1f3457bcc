from __future__ import annotations

import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qekit import training
from qekit.data import Dataset, QESample
from qekit.encoder import EncoderConfig
from qekit.model import init_params, with_pooling
from qekit.synth import split_dataset, synth_generate
from qekit.training import (
    Adam,
    ConfigError,
    LossConfig,
    SparsemaxBoundaryError,
    TrainConfig,
    batch_loss,
    grad,
    loss_and_grad,
    loss_combined,
    loss_sentence,
    loss_word,
    make_batch,
    token_classes,
    train,
    write_history,
)
from oracles import gradient_check_draw, oracle_loss, random_samples


class TestLosses:
    def test_sentence(self):
        assert loss_sentence(1.0, 1.0) == 0.0
        assert loss_sentence(1.0, 0.0) == 0.5
        assert abs(loss_sentence(0.3, 0.7) - 0.08) < 1e-12

    def test_word_perfect(self):
        assert loss_word([0, 1], [[1.0, 0.0], [0.0, 1.0]], [1.0, 1.0]) == 0.0

    def test_word_uniform(self):
        assert abs(loss_word([1], [[0.5, 0.5]], [1.0, 1.0]) - math.log(2)) < 1e-12

    def test_word_weighted(self):
        assert abs(loss_word([1, 1], [[0.5, 0.5]] * 2, [1.0, 2.0]) - 2 * math.log(2)) < 1e-12

    def test_word_zero_probability(self):
        with pytest.raises(FloatingPointError):
            loss_word([1], [[1.0, 0.0]], [1.0, 1.0])

    def test_word_length_mismatch(self):
        with pytest.raises(ValueError):
            loss_word([0, 1], [[0.5, 0.5]], [1.0, 1.0])

    def test_combined(self):
        assert loss_combined(0.2, 0.4, LossConfig(1.0, 0.0)) == 0.2
        assert loss_combined(0.2, 0.4, LossConfig(0.0, 1.0)) == 0.4
        assert abs(loss_combined(0.2, 0.4, LossConfig(0.5, 0.5)) - 0.3) < 1e-12

    @given(st.floats(0, 5), st.floats(0, 5), st.floats(0.01, 3), st.floats(0.01, 3))
    def test_combined_is_linear(self, ls, lw, a, b):
        assert loss_combined(ls, lw, LossConfig(a, b)) == pytest.approx(a * ls + b * lw, abs=1e-12)

    def test_doubling_bad_weight(self):
        tags = [0, 1, 1, 0, 1]
        probs = np.random.default_rng(0).dirichlet([1, 1], size=5)
        base = loss_word(tags, probs, [1.0, 1.0])
        doubled = loss_word(tags, probs, [1.0, 2.0])
        bad_part = -sum(math.log(probs[i][1]) for i in (1, 2, 4)) / 5
        assert doubled - base == pytest.approx(bad_part, abs=1e-12)

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            LossConfig(0.0, 0.0)
        with pytest.raises(ConfigError):
            LossConfig(1.0, 1.0, (1.0, 0.0))
        with pytest.raises(ConfigError):
            TrainConfig(patience=6, max_epochs=5)
        with pytest.raises(ConfigError):
            TrainConfig(learning_rate=0.0)


@pytest.fixture(scope="module")
def toy():
    rng = np.random.default_rng(3)
    samples, hidden = random_samples(rng, 6, 2, d=8, L=2)
    return samples, hidden


class TestGradient:
    def test_sentence_only_leaves_word_head_zero(self, toy):
        samples, hidden = toy
        p = init_params(EncoderConfig(8, 2), 2, seed=1)
        g = grad(p, make_batch(samples, hidden), LossConfig(1.0, 0.0))
        assert np.all(g.word.W == 0.0) and np.all(g.word.b == 0.0)

    def test_word_only_leaves_sentence_head_zero(self, toy):
        samples, hidden = toy
        p = init_params(EncoderConfig(8, 2), 2, seed=1)
        g = grad(p, make_batch(samples, hidden), LossConfig(0.0, 1.0))
        assert np.all(g.sent.W2 == 0.0) and np.all(g.sent.W1 == 0.0) and g.sent.b2 == 0.0

    @pytest.mark.parametrize("k", range(9))
    def test_matches_finite_differences(self, k):
        _, rel = gradient_check_draw(k)
        assert rel < 1e-6

    def test_loss_matches_oracle(self, toy):
        samples, hidden = toy
        p = with_pooling(init_params(EncoderConfig(8, 2), 2, seed=2), 1.2, [0.3, -0.5, 0.9])
        cfg = LossConfig(0.7, 1.3, (1.0, 2.5))
        batch = make_batch(samples, hidden)
        expected = oracle_loss(p, samples, hidden, 0.7, 1.3, (1.0, 2.5))
        assert loss_and_grad(p, batch, cfg)[0] == pytest.approx(expected, abs=1e-12)
        assert batch_loss(p, batch, cfg) == pytest.approx(expected, abs=1e-12)

    def test_descent_with_tiny_step(self):
        for k in range(100):
            rng = np.random.default_rng(k)
            nc = int(rng.choice([2, 3]))
            samples, hidden = random_samples(rng, 3, nc, d=6, L=2, enc_seed=k)
            p = init_params(EncoderConfig(6, 2), nc, seed=k)
            p.pooling.phi = rng.normal(size=3)
            cfg = LossConfig(float(rng.uniform(0, 1)), 1.0, tuple(rng.uniform(0.5, 2, size=nc)))
            batch = make_batch(samples, hidden, nc)
            loss, g = loss_and_grad(p, batch, cfg)
            stepped = p.with_vector(p.to_vector() - 1e-6 * g.to_vector())
            assert batch_loss(stepped, batch, cfg) <= loss + 1e-15

    def test_boundary_is_perturbed(self, toy):
        samples, hidden = toy
        p = with_pooling(init_params(EncoderConfig(8, 2), 2, seed=0), 1.0, [0.6, 0.4, 0.0])
        loss, g = loss_and_grad(p, make_batch(samples, hidden), LossConfig(1.0, 1.0))
        assert np.isfinite(loss)
        assert g.pooling.phi[2] == 0.0

    def test_boundary_persists(self, toy, monkeypatch):
        samples, hidden = toy
        monkeypatch.setattr(training, "BOUNDARY_STEP", 0.0)
        p = with_pooling(init_params(EncoderConfig(8, 2), 2, seed=0), 1.0, [0.6, 0.4, 0.0])
        with pytest.raises(SparsemaxBoundaryError):
            loss_and_grad(p, make_batch(samples, hidden), LossConfig(1.0, 1.0))

    def test_missing_supervision(self, toy):
        samples, hidden = toy
        bare = [QESample(s.id, s.lp, s.src, s.mt) for s in samples]
        p = init_params(EncoderConfig(8, 2), 2)
        with pytest.raises(ConfigError):
            grad(p, make_batch(bare, hidden), LossConfig(1.0, 0.0))
        with pytest.raises(ConfigError):
            grad(p, make_batch(bare, hidden), LossConfig(0.0, 1.0))

    def test_three_class_labels_from_spans(self, toy):
        samples, _ = toy
        for s in samples:
            c3 = token_classes(s, 3)
            c2 = token_classes(s, 2)
            np.testing.assert_array_equal(c3 > 0, c2 == 1)


class TestAdam:
    def test_first_step_is_lr_times_sign(self):
        opt = Adam(3, lr=0.1)
        x = opt.step(np.zeros(3), np.array([2.0, -0.5, 0.0]))
        np.testing.assert_allclose(x, [-0.1, 0.1, 0.0], atol=1e-8)

    def test_minimises_quadratic(self):
        opt = Adam(2, lr=0.05)
        x = np.array([3.0, -2.0])
        for _ in range(2000):
            x = opt.step(x, 2 * x)
        assert np.all(np.abs(x) < 1e-3)


@pytest.fixture(scope="module")
def synth_small():
    ds, hidden, _ = synth_generate(240, seed=5, enc=EncoderConfig(16, 2, seed=5))
    tr, dv = split_dataset(ds, 200)
    return tr, dv, hidden


class TestTrain:
    def test_zero_epochs_returns_init(self, synth_small):
        tr, dv, hidden = synth_small
        init = init_params(EncoderConfig(16, 2), 2, seed=4)
        out, hist = train(tr, dv, hidden, LossConfig(), TrainConfig(max_epochs=0, patience=1), init)
        np.testing.assert_array_equal(out.to_vector(), init.to_vector())
        assert hist == []

    def test_deterministic(self, synth_small):
        tr, dv, hidden = synth_small
        cfg = TrainConfig(learning_rate=1e-2, max_epochs=4, patience=2, seed=9)
        a, ha = train(tr, dv, hidden, LossConfig(), cfg)
        b, hb = train(tr, dv, hidden, LossConfig(), cfg)
        assert ha == hb
        np.testing.assert_array_equal(a.to_vector(), b.to_vector())

    def test_history_and_selection(self, synth_small, tmp_path):
        tr, dv, hidden = synth_small
        best, hist = train(tr, dv, hidden, LossConfig(), TrainConfig(learning_rate=1e-2, max_epochs=6, patience=6))
        assert [h["epoch"] for h in hist] == list(range(1, 7))
        selected = [h for h in hist if h["selected"]]
        assert len(selected) == 1
        assert selected[0]["dev_objective"] == max(h["dev_objective"] for h in hist)
        write_history(hist, tmp_path / "h.jsonl")
        lines = (tmp_path / "h.jsonl").read_text().splitlines()
        assert set(json.loads(lines[0])) == {"epoch", "train_loss", "dev_objective", "selected"}

    def test_training_reduces_loss(self, synth_small):
        tr, dv, hidden = synth_small
        _, hist = train(tr, dv, hidden, LossConfig(), TrainConfig(learning_rate=1e-2, max_epochs=5, patience=5))
        assert hist[-1]["train_loss"] < hist[0]["train_loss"]

    def test_early_stopping(self, synth_small):
        tr, dv, hidden = synth_small
        # a large learning rate makes the dev objective erratic
        cfg = TrainConfig(learning_rate=0.5, max_epochs=30, patience=2)
        _, hist = train(tr, dv, hidden, LossConfig(), cfg)
        assert len(hist) < cfg.max_epochs
        best_epoch = next((h["epoch"] for h in hist if h["selected"]), 0)
        assert len(hist) == best_epoch + cfg.patience

    def test_missing_supervision_before_compute(self, synth_small):
        tr, dv, hidden = synth_small
        bare = Dataset(tuple(QESample(s.id, s.lp, s.src, s.mt, tags=s.tags) for s in tr.samples))
        with pytest.raises(ConfigError, match="score"):
            train(bare, dv, hidden, LossConfig(1.0, 1.0), TrainConfig())
        # word-only training does not need scores
        train(bare, dv, hidden, LossConfig(0.0, 1.0), TrainConfig(max_epochs=1, patience=1))

    def test_three_class(self, synth_small):
        tr, dv, hidden = synth_small
        best, hist = train(tr, dv, hidden, LossConfig(1.0, 1.0, (1.0, 1.0, 1.0)), TrainConfig(learning_rate=1e-2, max_epochs=2, patience=2))
        assert best.n_classes == 3 and len(hist) == 2
