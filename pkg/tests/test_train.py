import csv
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from rcnet.errors import NumericError, ValidationError
from rcnet.train import (SPIRAL_EPS, Adam, ExperimentConfig, StepDecay, TrainableRCNet,
                         curve_distance, forward_backward, generate_spiral, retained_trials,
                         run_experiment, spiral_curve)


def numeric_grad(net, x, t, loss, h=1e-6):
    grads = {}
    for name, p in net.params().items():
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            up = forward_backward(net, x, t, loss)[0]
            p[idx] = old - h
            down = forward_backward(net, x, t, loss)[0]
            p[idx] = old
            g[idx] = (up - down) / (2 * h)
        grads[name] = g
    return grads


def rel_err(a, b):
    return np.max(np.abs(a - b)) / max(1e-8, np.max(np.abs(a)), np.max(np.abs(b)))


def small_batch(rng, loss, out):
    x = rng.random((12, 2))
    t = rng.normal(size=(12, 1)) if loss == "mse" else rng.integers(0, out, 12)
    return x, t


class TestModel:
    @pytest.mark.parametrize("n", [3, 10, 50])
    def test_param_counts(self, n):
        rng = np.random.default_rng(0)
        assert TrainableRCNet.init(2, n, 1, 3, rng).param_count() == n * n + 5 * n + 1
        assert TrainableRCNet.init(2, n, 2, 3, rng).param_count() == n * n + 6 * n + 2

    def test_size_independent_of_reps(self):
        a = TrainableRCNet.init(2, 8, 1, 1, np.random.default_rng(0))
        b = TrainableRCNet.init(2, 8, 1, 9, np.random.default_rng(0))
        assert a.param_count() == b.param_count()
        assert sum(v.nbytes for v in a.params().values()) == sum(v.nbytes for v in b.params().values())

    def test_init_range(self):
        net = TrainableRCNet.init(2, 16, 1, 1, np.random.default_rng(0))
        assert np.max(np.abs(net.A)) <= 1 / 4 and np.max(np.abs(net.W1)) <= 1 / math.sqrt(2)

    def test_rejects(self):
        with pytest.raises(ValidationError):
            TrainableRCNet.init(2, 4, 1, 0, np.random.default_rng(0))


class TestGradients:
    @pytest.mark.parametrize("loss,out", [("mse", 1), ("cross-entropy", 2)])
    def test_hand_sized(self, loss, out):
        rng = np.random.default_rng(5)
        net = TrainableRCNet.init(2, 1, out, 1, rng)
        net.A[:] = 0.7
        net.b[:] = 0.3
        x, t = small_batch(rng, loss, out)
        _, g = forward_backward(net, x, t, loss)
        num = numeric_grad(net, x, t, loss)
        for k in g:
            assert rel_err(g[k], num[k]) <= 1e-5

    @given(st.integers(0, 2**31 - 1), st.integers(1, 8), st.integers(1, 4),
           st.sampled_from(["mse", "cross-entropy"]))
    def test_finite_differences(self, seed, n, r, loss):
        rng = np.random.default_rng(seed)
        out = 1 if loss == "mse" else 2
        net = TrainableRCNet.init(2, n, out, r, rng)
        x, t = small_batch(rng, loss, out)
        _, g = forward_backward(net, x, t, loss)
        num = numeric_grad(net, x, t, loss)
        for k in g:
            assert rel_err(g[k], num[k]) <= 1e-5, k

    def test_zero_net(self):
        net = TrainableRCNet.init(2, 4, 1, 2, np.random.default_rng(0))
        for p in net.params().values():
            p[...] = 0
        value, g = forward_backward(net, np.random.default_rng(1).random((5, 2)), np.zeros(5))
        assert value == 0 and all(np.all(v == 0) for v in g.values())

    def test_shared_gradient_is_sum_of_copies(self):
        # perturb the block only at application k; the total derivative is the sum
        rng = np.random.default_rng(3)
        net = TrainableRCNet.init(2, 5, 1, 3, rng)
        x, t = small_batch(rng, "mse", 1)
        _, g = forward_backward(net, x, t, "mse")
        h = 1e-6
        per_copy = np.zeros_like(net.A)

        def loss_with(Ak):
            z = x @ net.W1.T + net.b1
            for k in range(3):
                z = np.maximum(z @ Ak[k].T + net.b, 0)
            y = z @ net.W2.T + net.b2
            return np.mean((y - t) ** 2)

        for k in range(3):
            for idx in np.ndindex(net.A.shape):
                up = [net.A.copy() for _ in range(3)]
                down = [net.A.copy() for _ in range(3)]
                up[k][idx] += h
                down[k][idx] -= h
                per_copy[idx] += (loss_with(up) - loss_with(down)) / (2 * h)
        assert rel_err(g["A"], per_copy) <= 1e-5

    def test_divergence_signal(self):
        net = TrainableRCNet.init(2, 3, 1, 1, np.random.default_rng(0))
        net.W2[:] = np.inf
        with pytest.raises(NumericError):
            forward_backward(net, np.ones((2, 2)), np.zeros(2))

    def test_bad_labels(self):
        net = TrainableRCNet.init(2, 3, 2, 1, np.random.default_rng(0))
        with pytest.raises(ValidationError):
            forward_backward(net, np.ones((2, 2)), np.array([0, 5]), "cross-entropy")


class TestOptimizer:
    def test_schedule(self):
        s = StepDecay(0.002, 0.9, 5)
        assert s(1) == s(5) == 0.002 and s(6) == pytest.approx(0.0018)

    @pytest.mark.parametrize("args", [(0.0, 0.9, 5), (0.1, 1.5, 5), (0.1, 0.9, 0)])
    def test_schedule_rejects(self, args):
        with pytest.raises(ValidationError):
            StepDecay(*args)

    def test_adam_minimizes_quadratic(self):
        p = {"x": np.array([3.0, -2.0])}
        opt = Adam(p)
        for _ in range(2000):
            opt.step({"x": 2 * p["x"]}, 0.05)
        assert np.max(np.abs(p["x"])) < 1e-3

    def test_adam_first_step_is_lr_sized(self):
        p = {"x": np.array([1.0])}
        Adam(p).step({"x": np.array([123.0])}, 0.1)
        assert p["x"][0] == pytest.approx(0.9, abs=1e-6)


class TestSpiral:
    def test_origin_point(self):
        assert np.allclose(spiral_curve(0.0, 0), [0.5, 0.5])

    def test_points_in_tubes(self):
        data = generate_spiral(2000, seed=1)
        for cls in (0, 1):
            pts = data.points[data.labels == cls]
            assert np.all(curve_distance(pts, cls) <= SPIRAL_EPS + 1e-6)

    def test_classes_disjoint(self):
        theta = np.linspace(0, 24 * math.pi, 200_001)
        c1 = spiral_curve(theta, 1)
        assert np.min(curve_distance(c1, 0)) > 2 * SPIRAL_EPS

    def test_balanced_and_standardized(self):
        data = generate_spiral(3000, seed=2)
        assert np.sum(data.labels == 0) == np.sum(data.labels == 1) == 3000
        z, mean, std = data.standardized()
        assert np.allclose(z.mean(axis=0), 0, atol=1e-12) and np.allclose(z.std(axis=0), 1)

    def test_deterministic(self):
        a, b = generate_spiral(100, seed=4), generate_spiral(100, seed=4)
        assert np.array_equal(a.points, b.points)

    def test_rejects(self):
        with pytest.raises(ValidationError):
            generate_spiral(0)


class TestExperiment:
    def tiny(self, task="trig", **kw):
        base = dict(n_values=(4,), r_values=(1, 2), train_samples=200, test_samples=100,
                    batch_size=50, epochs=4, trials=3, window=2, workers=1)
        base.update(kw)
        return ExperimentConfig.desk(task, **base)

    def test_desk_defaults(self):
        trig, spiral = ExperimentConfig.desk("trig"), ExperimentConfig.desk("spiral")
        assert (trig.n_values, trig.r_values, trig.train_samples, trig.epochs) == \
            ((50, 100), (1, 2, 3), 20_000, 200)
        assert (spiral.n_values, spiral.train_samples, spiral.epochs, spiral.lr_factor) == \
            ((30,), 30_000, 500, 0.95)
        assert trig.trials == 6 and trig.trim_top == trig.trim_bottom == 1

    @pytest.mark.parametrize("kw", [dict(trials=2), dict(epochs=0), dict(r_values=(0,)),
                                    dict(window=10), dict(lr_factor=2.0)])
    def test_config_validation(self, kw):
        with pytest.raises(ValidationError):
            self.tiny(**kw)

    def test_deterministic_and_csv(self, tmp_path):
        cfg = self.tiny()
        a, b = run_experiment(cfg), run_experiment(cfg)
        a.write_csv(tmp_path / "a.csv")
        b.write_csv(tmp_path / "b.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
        rows = list(csv.DictReader(open(tmp_path / "a.csv")))
        assert list(rows[0]) == ["task", "n", "r", "seed_group", "epoch", "train_loss", "test_loss"]
        groups = {r["seed_group"] for r in rows}
        assert groups == {"trial0", "trial1", "trial2", "retained_mean"}
        assert set(a.summary) == {(4, 1), (4, 2)}

    def test_parallel_matches_serial(self):
        serial = run_experiment(self.tiny(task="spiral", workers=1))
        parallel = run_experiment(self.tiny(task="spiral", workers=2))
        assert serial.summary == parallel.summary

    def test_trimming(self):
        cfg = self.tiny(trials=5)
        runs = [{"diverged": False, "test": [v], "n": 4, "r": 1, "trial": i}
                for i, v in enumerate([0.5, 0.1, 0.9, 0.3, 0.7])]
        kept = retained_trials(runs, replace_window(cfg))
        assert sorted(r["test"][0] for r in kept) == [0.3, 0.5, 0.7]

    def test_all_diverged_cell(self, monkeypatch):
        import rcnet.train as tr

        def diverge(config, n, r, trial):
            return {"n": n, "r": r, "trial": trial, "diverged": True, "train": [], "test": []}

        monkeypatch.setattr(tr, "train_trial", diverge)
        result = run_experiment(self.tiny())
        assert result.summary == {(4, 1): None, (4, 2): None}
        assert all(r["seed_group"] != "retained_mean" for r in result.rows())


def replace_window(cfg):
    from dataclasses import replace
    return replace(cfg, window=1)
