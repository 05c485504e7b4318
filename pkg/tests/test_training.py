import numpy as np
import pytest

from inceptive.encoder import EncoderConfig
from inceptive.errors import ConfigError, InputError, LabelError
from inceptive.head import ModelConfig
from inceptive.model import HeadOnlyClassifier, SequenceClassifier
from inceptive.tensor import ParamStore, Rng, grad_check
from inceptive.training import (
    TrainConfig,
    adamw_step,
    bce_with_logits,
    cosine_lr,
    evaluate,
    init_adamw,
    kfold_split,
    run_training,
    select_best,
    softmax_cross_entropy,
    train_epoch,
)


class TestSoftmaxCrossEntropy:
    def test_uniform_logits(self):
        loss, _ = softmax_cross_entropy(np.zeros((1, 2)), np.array([0]))
        assert loss == pytest.approx(np.log(2))

    def test_huge_logit_stability(self):
        loss, dlogits = softmax_cross_entropy(np.array([[1000.0, 0.0]]), np.array([0]))
        assert loss == pytest.approx(0.0, abs=1e-9)
        assert np.isfinite(dlogits).all()

    def test_invalid_target_rejected(self):
        with pytest.raises(LabelError):
            softmax_cross_entropy(np.zeros((1, 3)), np.array([3]))

    def test_gradient_matches_finite_differences(self):
        rng = Rng(1)
        logits = rng.normal((4, 3))
        targets = np.array([0, 2, 1, 1])
        store = ParamStore()
        store.add("logits", logits)
        _, dlogits = softmax_cross_entropy(logits, targets)
        store.grad("logits")[...] = dlogits
        err = grad_check(lambda p: softmax_cross_entropy(p.value("logits"), targets)[0], store, 1e-5)
        assert err < 1e-6


class TestBceWithLogits:
    def test_midpoint(self):
        loss, _ = bce_with_logits(np.array([[0.0]]), np.array([[1.0]]))
        assert loss == pytest.approx(np.log(2))

    def test_extreme_logits_no_overflow(self):
        loss_pos, _ = bce_with_logits(np.array([[1000.0]]), np.array([[1.0]]))
        loss_neg, _ = bce_with_logits(np.array([[1000.0]]), np.array([[0.0]]))
        assert loss_pos == pytest.approx(0.0, abs=1e-9)
        assert loss_neg == pytest.approx(1000.0)

    def test_non_binary_target_rejected(self):
        with pytest.raises(LabelError):
            bce_with_logits(np.zeros((1, 2)), np.array([[0.5, 1.0]]))

    def test_gradient_matches_finite_differences(self):
        rng = Rng(2)
        logits = rng.normal((2, 3))
        targets = (rng.random((2, 3)) < 0.5).astype(float)
        store = ParamStore()
        store.add("logits", logits)
        _, dlogits = bce_with_logits(logits, targets)
        store.grad("logits")[...] = dlogits
        err = grad_check(lambda p: bce_with_logits(p.value("logits"), targets)[0], store, 1e-5)
        assert err < 1e-6


class TestAdamW:
    def _step(self, theta, grad, lr, wd, **kwargs):
        store = ParamStore()
        store.add("w", np.array([[theta]]))
        store.grad("w")[...] = grad
        state = init_adamw(store)
        for key, val in kwargs.items():
            setattr(state, key, val)
        adamw_step(store, state, lr, wd)
        return float(store.value("w")[0, 0])

    def test_hand_single_step(self):
        got = self._step(1.0, 1.0, lr=0.1, wd=0.01)
        expect = 1.0 - 0.1 / (1.0 + 1e-8) - 0.1 * 0.01 * 1.0
        assert got == pytest.approx(expect, abs=1e-12)
        assert got == pytest.approx(0.899, abs=1e-6)

    def test_zero_gradient_no_decay_is_identity(self):
        assert self._step(1.0, 0.0, lr=0.1, wd=0.0) == 1.0

    def test_decay_only_shrinks(self):
        got = self._step(2.0, 0.0, lr=0.1, wd=0.5)
        assert got == pytest.approx(2.0 * (1.0 - 0.1 * 0.5))

    def test_zero_betas_large_eps_reduce_to_scaled_sgd(self):
        g, lr, wd, eps = -0.7, 0.05, 0.2, 100.0
        got = self._step(1.5, g, lr=lr, wd=wd, beta1=0.0, beta2=0.0, eps=eps)
        expect = 1.5 - lr * g / (abs(g) + eps) - lr * wd * 1.5
        assert got == pytest.approx(expect, abs=1e-12)

    def test_no_decay_set_respected(self):
        store = ParamStore()
        store.add("w", np.array([[1.0]]))
        store.add("b", np.array([1.0]))
        state = init_adamw(store)
        adamw_step(store, state, lr=0.1, weight_decay=0.5, no_decay=frozenset({"b"}))
        assert store.value("b")[0] == 1.0  # zero grad, decay skipped
        assert store.value("w")[0, 0] == pytest.approx(1.0 - 0.1 * 0.5)


class TestCosineLr:
    def test_endpoints(self):
        assert cosine_lr(0, 12, 1e-3) == pytest.approx(1e-3)
        assert cosine_lr(12, 12, 1e-3, 1e-5) == pytest.approx(1e-5)

    def test_midpoint(self):
        assert cosine_lr(6, 12, 2e-3, 1e-3) == pytest.approx(1.5e-3)

    def test_range_check(self):
        with pytest.raises(ConfigError):
            cosine_lr(13, 12, 1e-3)


def toy_model(kind="inceptive", seed=0, n_classes=3, task="multi-class"):
    enc = EncoderConfig(vocab_size=12, d=8, n_layers=1, n_heads=2, ffn_size=8, max_len=6)
    cfg = ModelConfig(d=8, c=2, n_heads=2, head_dim=4, dense_dim=4, n_classes=n_classes,
                      task=task, dropout_rate=0.1)
    return SequenceClassifier(enc, cfg, kind, Rng(seed).child("init"))


def toy_data(n=16, length=6, n_classes=3, seed=0):
    rng = Rng(seed)
    ids = rng.integers(0, 12, (n, length))
    # label depends on the first token so the task is learnable
    targets = np.asarray(ids[:, 0] % n_classes)
    return ids, targets


class TestTrainEpoch:
    def test_zero_lr_leaves_parameters_unchanged(self):
        model = toy_model()
        data = toy_data()
        before = {name: p.value.copy() for name, p in model.params.items()}
        opt = init_adamw(model.params)
        cfg = TrainConfig(seq_len=6, batch_size=8, epochs=1, lr=1e-9, weight_decay=0.0, seed=0)
        rec = train_epoch(model, data, cfg, opt, 1, 0.0, Rng(5))
        assert rec["train_loss"] > 0
        for name, p in model.params.items():
            np.testing.assert_array_equal(p.value, before[name])

    def test_same_seed_identical_trajectory(self):
        losses = []
        for _ in range(2):
            model = toy_model(seed=3)
            opt = init_adamw(model.params)
            cfg = TrainConfig(seq_len=6, batch_size=8, epochs=1, lr=1e-3, seed=0)
            recs = [
                train_epoch(model, toy_data(), cfg, opt, epoch, 1e-3, Rng(7))["train_loss"]
                for epoch in range(1, 4)
            ]
            losses.append(recs)
        assert losses[0] == losses[1]

    def test_gradient_norm_clipped_every_step(self):
        model = toy_model()
        data = toy_data()
        cfg = TrainConfig(seq_len=6, batch_size=8, epochs=1, lr=1e-3, max_grad_norm=0.01, seed=0)
        opt = init_adamw(model.params)
        train_epoch(model, data, cfg, opt, 1, 1e-3, Rng(9))
        # after the epoch the last batch's clipped grads are still in the store
        total = sum(float((p.grad ** 2).sum()) for _, p in model.params.items())
        assert np.sqrt(total) <= 0.01 + 1e-9

    def test_single_batch_overfit(self):
        model = toy_model(seed=11)
        ids, targets = toy_data(n=8, seed=2)
        cfg = TrainConfig(seq_len=6, batch_size=8, epochs=200, lr=5e-3, weight_decay=0.0, seed=0)
        opt = init_adamw(model.params)
        rng = Rng(13)
        losses = []
        for epoch in range(1, 201):
            losses.append(train_epoch(model, (ids, targets), cfg, opt, epoch, 5e-3, rng)["train_loss"])
        metrics, _ = evaluate(model, (ids, targets), cfg)
        assert metrics["accuracy"] == 1.0
        smoothed = np.convolve(losses, np.ones(20) / 20, mode="valid")
        assert (np.diff(smoothed) <= 1e-9).all()


class TestEvaluate:
    def test_perfect_predictor(self):
        model = toy_model(seed=11)
        ids, targets = toy_data(n=8, seed=2)
        cfg = TrainConfig(seq_len=6, batch_size=8, epochs=60, lr=5e-3, weight_decay=0.0, seed=0)
        opt = init_adamw(model.params)
        rng = Rng(13)
        for epoch in range(1, 61):
            train_epoch(model, (ids, targets), cfg, opt, epoch, 5e-3, rng)
        metrics, elapsed = evaluate(model, (ids, targets), cfg)
        if metrics["accuracy"] == 1.0:
            assert metrics["f1_micro"] == 1.0
        assert elapsed > 0

    def test_eval_is_deterministic(self):
        model = toy_model(seed=4)
        data = toy_data(seed=5)
        cfg = TrainConfig(seq_len=6, epochs=1, lr=1e-3, seed=0)
        m1, _ = evaluate(model, data, cfg)
        m2, _ = evaluate(model, data, cfg)
        assert m1 == m2

    def test_empty_data_rejected(self):
        model = toy_model()
        cfg = TrainConfig(seq_len=6, epochs=1, lr=1e-3, seed=0)
        with pytest.raises(InputError):
            evaluate(model, (np.zeros((0, 6), dtype=int), np.zeros(0, dtype=int)), cfg)

    def test_chance_level_constant_predictor(self):
        model = toy_model(seed=6, n_classes=2)
        for name, p in model.params.items():
            if name.startswith("head."):
                p.value[...] = 0.0
        ids, _ = toy_data(n=20, n_classes=2, seed=7)
        targets = np.array([0, 1] * 10)
        cfg = TrainConfig(seq_len=6, epochs=1, lr=1e-3, seed=0)
        metrics, _ = evaluate(model, (ids, targets), cfg)
        assert metrics["accuracy"] == 0.5


class TestSelectBest:
    def test_argmax_one_based(self):
        recs = [{"accuracy": a, "f1_micro": 0.0} for a in (0.7, 0.9, 0.8)]
        assert select_best(recs, "accuracy") == 2

    def test_tie_goes_to_earliest(self):
        recs = [{"accuracy": 0.8, "f1_micro": 0.0}, {"accuracy": 0.8, "f1_micro": 0.0}]
        assert select_best(recs, "accuracy") == 1

    def test_f1_selection_ignores_accuracy_peak(self):
        recs = [
            {"accuracy": 0.9, "f1_micro": 0.4},
            {"accuracy": 0.5, "f1_micro": 0.8},
        ]
        assert select_best(recs, "f1") == 2


class TestKfold:
    def test_leave_one_out_degenerate(self):
        folds = kfold_split(10, 10, seed=0)
        assert len(folds) == 10
        assert all(len(val) == 1 for _, val in folds)

    def test_near_equal_sizes_23_over_10(self):
        folds = kfold_split(23, 10, seed=1)
        sizes = sorted(len(val) for _, val in folds)
        assert sizes == [2] * 7 + [3] * 3

    def test_partition_property(self):
        rng = Rng(2)
        for _ in range(100):
            n = int(rng.integers(2, 200, None))
            k = int(rng.integers(2, min(n, 12) + 1, None))
            folds = kfold_split(n, k, seed=int(rng.integers(0, 1000, None)))
            all_val = np.concatenate([val for _, val in folds])
            assert len(all_val) == n
            assert len(set(all_val.tolist())) == n
            for train, val in folds:
                assert set(train) | set(val) == set(range(n))
                assert not set(train) & set(val)

    def test_too_few_examples_rejected(self):
        with pytest.raises(InputError):
            kfold_split(5, 10)


class TestRunTraining:
    def test_report_structure_and_best_epoch(self):
        model = toy_model(seed=8)
        train = toy_data(n=24, seed=9)
        val = toy_data(n=8, seed=10)
        test = toy_data(n=8, seed=11)
        cfg = TrainConfig(seq_len=6, batch_size=8, epochs=3, lr=2e-3, seed=0)
        report, best_state = run_training(model, train, val, test, cfg, Rng(21), {"model": "toy"})
        assert len(report.epochs) == 3
        accs = [e["val"]["accuracy"] for e in report.epochs]
        assert report.best_epoch == int(np.argmax(accs)) + 1
        assert report.best_value == max(accs)
        assert "accuracy" in report.test
        assert len(report.timing["epoch_seconds"]) == 3
        assert set(best_state) == set(model.state_tensors())

    def test_best_snapshot_restored_for_test_metrics(self):
        model = toy_model(seed=12)
        train = toy_data(n=24, seed=13)
        val = toy_data(n=8, seed=14)
        cfg = TrainConfig(seq_len=6, batch_size=8, epochs=4, lr=2e-3, seed=0)
        report, best_state = run_training(model, train, val, val, cfg, Rng(22))
        for name, p in model.params.items():
            np.testing.assert_array_equal(p.value, best_state[name])


class TestHeadOnly:
    def test_frozen_input_training_runs(self):
        cfg = ModelConfig(d=8, c=2, n_heads=2, head_dim=4, dense_dim=4, n_classes=2, dropout_rate=0.0)
        model = HeadOnlyClassifier(cfg, "inceptive", Rng(0))
        rng = Rng(1)
        h = rng.normal((12, 5, 8))
        targets = (h[:, :, 0].mean(axis=1) > 0).astype(int)
        tcfg = TrainConfig(seq_len=5, batch_size=6, epochs=100, lr=2e-2, weight_decay=0.0, seed=0)
        opt = init_adamw(model.params)
        for epoch in range(1, 101):
            train_epoch(model, (h, targets), tcfg, opt, epoch, 2e-2, rng.child("t"))
        metrics, _ = evaluate(model, (h, targets), tcfg)
        assert metrics["accuracy"] == 1.0
