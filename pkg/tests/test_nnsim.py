"""Teacher-student MLP simulator: gradients, training, teacher, checkpoints."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tripledescent.nnsim import (
    MLP,
    NNError,
    TrainConfig,
    ensemble_records,
    load_checkpoint,
    loss_and_grad,
    make_teacher,
    nn_phase_space,
    run_cell,
    save_checkpoint,
    train,
)
from tripledescent.rfcore import RidgeFactor


def fd_gradient(model, X, y, layer, index, h=1e-5):
    p = model.params[layer]
    old = p[index]
    p[index] = old + h
    up, _ = loss_and_grad(model, X, y, need_grad=False)
    p[index] = old - h
    down, _ = loss_and_grad(model, X, y, need_grad=False)
    p[index] = old
    return (up - down) / (2 * h)


def gradient_errors(activation, seed=0, probes=10, D=6, width=5, n=12):
    """Per-layer relative error ||g - g_fd|| / ||g_fd|| over random probes."""
    rng = np.random.default_rng(seed)
    model = MLP.init(D, width, activation, seed)
    X = rng.standard_normal((n, D))
    y = rng.standard_normal(n)
    _, grads = loss_and_grad(model, X, y)
    errs = []
    for layer, p in enumerate(model.params):
        idx = [tuple(int(rng.integers(s)) for s in p.shape) for _ in range(probes)]
        ga = np.array([grads[layer][i] for i in idx])
        gf = np.array([fd_gradient(model, X, y, layer, i) for i in idx])
        errs.append(float(np.linalg.norm(ga - gf) / max(np.linalg.norm(gf), 1e-12)))
    return errs


class TestGradients:
    @pytest.mark.parametrize("act", ["tanh", "linear", "relu"])
    def test_central_differences(self, act):
        assert max(gradient_errors(act)) < 1e-5

    @given(st.integers(0, 10_000))
    @settings(max_examples=10, deadline=None)
    def test_tanh_random_instances(self, seed):
        assert max(gradient_errors("tanh", seed=seed, probes=4)) < 1e-5

    def test_single_sample_linear_update(self):
        model = MLP.init(4, 3, "linear", 1)
        X = np.random.default_rng(2).standard_normal((1, 4))
        y = np.array([0.7])
        expected = []
        for layer, p in enumerate(model.params):
            g = np.zeros_like(p)
            for i in np.ndindex(p.shape):
                g[i] = fd_gradient(model, X, y, layer, i)
            expected.append(p - 0.01 * g)
        train(model, X, y, TrainConfig(epochs=1, lr=0.01, momentum=0.0))
        for got, ref in zip(model.params, expected):
            np.testing.assert_allclose(got, ref, atol=1e-8)


class TestTraining:
    def test_zero_learning_rate(self):
        model = MLP.init(5, 4, "tanh", 0)
        before = model.flat().copy()
        X = np.random.default_rng(0).standard_normal((10, 5))
        traj = train(model, X, np.ones(10), TrainConfig(epochs=20, lr=0.0))
        np.testing.assert_array_equal(model.flat(), before)
        assert np.all(traj.train_loss == traj.train_loss[0])

    def test_loss_decreases(self):
        rng = np.random.default_rng(0)
        X, y = rng.standard_normal((40, 5)), rng.standard_normal(40)
        traj = train(MLP.init(5, 10, "tanh", 0), X, y, TrainConfig(epochs=300))
        assert traj.train_loss[-1] < 0.5 * traj.train_loss[0]

    def test_checkpoints(self):
        rng = np.random.default_rng(0)
        X, y = rng.standard_normal((10, 3)), rng.standard_normal(10)
        model = MLP.init(3, 4, "tanh", 0)
        traj = train(model, X, y, TrainConfig(epochs=5), checkpoint_epochs=(0, 2, 5, 9))
        assert sorted(traj.checkpoints) == [0, 2, 5]
        np.testing.assert_array_equal(traj.checkpoints[5].flat(), model.flat())
        loss2, _ = loss_and_grad(traj.checkpoints[2], X, y, need_grad=False)
        assert loss2 == traj.train_loss[2]

    def test_divergence_flagged(self):
        rng = np.random.default_rng(0)
        X, y = 10 * rng.standard_normal((20, 4)), 10 * rng.standard_normal(20)
        traj = train(MLP.init(4, 8, "relu", 0), X, y, TrainConfig(epochs=500, lr=50.0))
        assert traj.diverged
        assert traj.last_epoch < 500

    def test_weight_decay_shrinks(self):
        rng = np.random.default_rng(0)
        X, y = rng.standard_normal((30, 4)), rng.standard_normal(30)
        free = MLP.init(4, 8, "tanh", 0)
        decayed = MLP.init(4, 8, "tanh", 0)
        train(free, X, y, TrainConfig(epochs=300))
        train(decayed, X, y, TrainConfig(epochs=300, weight_decay=0.1))
        assert decayed.norm() < free.norm()

    def test_frozen_layers_reduce_to_ridge(self):
        # only W3 trains: MSE + (wd/2)||a||^2 is ridge with gamma = wd D / (2 P)
        rng = np.random.default_rng(0)
        D, width, N, wd = 5, 12, 40, 0.05
        X, y = rng.standard_normal((N, D)), rng.standard_normal(N)
        model = MLP.init(D, width, "tanh", 3)
        model.params[5][:] = 0.0
        H = model.hidden(X)
        gamma = wd * D / (2 * width)
        ref = RidgeFactor(H).weights(y, gamma, D)
        train(model, X, y, TrainConfig(epochs=4000, lr=0.05, weight_decay=wd), trainable=[4])
        np.testing.assert_allclose(model.params[4][0], ref, atol=1e-8)

    def test_config_validation(self):
        for bad in (dict(lr=-1), dict(momentum=1.0), dict(weight_decay=-0.1), dict(epochs=-1),
                    dict(loss="xent")):
            with pytest.raises(ValueError):
                TrainConfig(**bad)

    def test_rejects_non_finite_data(self):
        with pytest.raises(NNError):
            train(MLP.init(2, 2, "tanh", 0), np.array([[np.nan, 0.0]]), np.zeros(1),
                  TrainConfig(epochs=1))


class TestTeacher:
    def test_deterministic(self):
        a, b = make_teacher(10, 20, seed=4, probe_size=5000), make_teacher(10, 20, seed=4, probe_size=5000)
        np.testing.assert_array_equal(a.model.flat(), b.model.flat())
        assert a.scale == b.scale

    def test_unit_variance(self):
        t = make_teacher(20, 100, seed=1)
        X = np.random.default_rng(99).standard_normal((100_000, 20))
        assert float(t.labels(X, math.inf, 0).var()) == pytest.approx(1.0, abs=0.05)

    def test_noisy_label_variance(self):
        t = make_teacher(20, 100, seed=1)
        X = np.random.default_rng(98).standard_normal((100_000, 20))
        assert float(t.labels(X, 0.2, 5).var()) == pytest.approx(6.0, rel=0.05)

    def test_student_equal_to_teacher(self):
        t = make_teacher(8, 16, seed=2, probe_size=10_000)
        student = MLP([p.copy() for p in t.model.params], t.model.activation)
        student.params[4] = student.params[4] * t.scale
        student.params[5] = student.params[5] * t.scale
        rng = np.random.default_rng(0)
        X, Xt = rng.standard_normal((50, 8)), rng.standard_normal((500, 8))
        y = t.labels(X, math.inf, 0)
        traj = train(student, X, y, TrainConfig(epochs=3, lr=0.0))
        assert traj.train_loss[-1] < 1e-10
        assert float(((student(Xt) - t(Xt)) ** 2).mean()) < 1e-10


class TestCheckpoints:
    def test_roundtrip(self, tmp_path):
        model = MLP.init(7, 5, "tanh", 11)
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, model, epoch=30)
        loaded, meta = load_checkpoint(path)
        for a, b in zip(model.params, loaded.params):
            np.testing.assert_array_equal(a, b)
        assert meta["epoch"] == 30 and meta["activation"] == "tanh"
        assert loaded.init_seed == 11

    def test_corrupt(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(b"nope")
        with pytest.raises(NNError):
            load_checkpoint(path)
        model = MLP.init(3, 3, "relu", 0)
        save_checkpoint(path, model)
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(NNError, match="truncated"):
            load_checkpoint(path)


class TestPhaseSpace:
    def test_run_cell_records(self):
        cfg = TrainConfig(epochs=20)
        recs = run_cell(5, 4, 30, 0.2, cfg, "tanh", (5, 10), member=0, m_test=200,
                        teacher_width=10)
        assert [r.epoch for r in recs] == [5, 10, 20]
        assert all(np.isfinite(r.test_loss) and not r.diverged for r in recs)

    def test_serial_matches_cells(self):
        cfg = TrainConfig(epochs=10)
        recs = nn_phase_space(5, [4], [20], 0.2, cfg, K=2, checkpoint_epochs=(10,),
                              m_test=200, teacher_width=10)
        direct = run_cell(5, 4, 20, 0.2, cfg, "tanh", (10,), member=1, m_test=200,
                          teacher_width=10)
        assert recs[1].test_loss == direct[0].test_loss

    def test_ensemble_mean_prediction(self):
        f = np.zeros(4)
        preds = [{10: np.ones(4)}, {10: -np.ones(4)}, {10: 3 * np.ones(4)}]
        (rec,) = ensemble_records(preds, f, 3, 7)
        assert rec.member == -1 and rec.test_loss == pytest.approx(1.0)
        (bad,) = ensemble_records([{10: f}, {}], f, 3, 7)
        assert bad.diverged
