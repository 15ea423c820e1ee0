import json
from dataclasses import replace

import numpy as np
import pytest

from kanae.data import RunMatrix
from kanae.errors import ConfigurationError, DataError, NumericError, TrainingError
from kanae.model import AeArchitecture, build_model, default_architecture
from kanae.train import (
    TrainConfig,
    TrainHistory,
    apply_scaler,
    cell_name,
    fit_scaler,
    optimizer_step,
    split_simulations,
    sweep,
    train,
    train_cell,
)


def _runs(n_runs=10, T=100, V=3, seed=0):
    rng = np.random.default_rng(seed)
    return [RunMatrix(k + 1, 0, rng.normal(size=(T, V)) + 1000 * k, None, tuple(f"x{i}" for i in range(V)))
            for k in range(n_runs)]


class TestScaler:
    def test_two_point_feature(self):
        s = fit_scaler([[0.0], [2.0]])
        assert s.mean[0] == 1.0 and s.std[0] == 1.0
        np.testing.assert_array_equal(apply_scaler(s, [[0.0], [2.0]]).ravel(), [-1.0, 1.0])

    def test_constant_feature(self):
        X = np.column_stack([np.full(20, 5.0), np.arange(20.0)])
        s = fit_scaler(X)
        assert s.std[0] == 1e-8
        np.testing.assert_array_equal(s.transform(X)[:, 0], 0.0)

    def test_standardizes(self):
        X = np.random.default_rng(0).normal(3, 7, size=(500, 4))
        Z = fit_scaler(X).transform(X)
        assert np.abs(Z.mean(0)).max() < 1e-9
        assert np.abs(Z.var(0) - 1).max() < 1e-6

    def test_round_trip(self):
        X = np.random.default_rng(1).normal(50, 10, size=(100, 3))
        s = fit_scaler(X)
        assert np.abs(s.inverse_transform(s.transform(X)) - X).max() < 1e-12

    def test_too_few_rows(self):
        with pytest.raises(DataError):
            fit_scaler([[1.0, 2.0]])


class TestSplit:
    def test_625(self):
        tr, va = split_simulations(_runs(10, 100), 625)
        assert tr.shape == (500, 3) and va.shape == (125, 3)

    def test_38125(self):
        tr, va = split_simulations(_runs(80, 500, V=2), 38125, seed=3)
        assert tr.shape[0] == 30500 and va.shape[0] == 7625

    def test_run_level_disjoint(self):
        # every run has its own offset, so the run a row came from is recoverable
        tr, va = split_simulations(_runs(10, 100), 625, seed=4)
        run_of = lambda rows: set(np.round(rows[:, 0] / 1000).astype(int))
        assert run_of(tr).isdisjoint(run_of(va))
        assert len(run_of(tr)) == 5 and len(run_of(va)) == 2

    def test_deterministic(self):
        a = split_simulations(_runs(), 625, seed=9)
        b = split_simulations(_runs(), 625, seed=9)
        c = split_simulations(_runs(), 625, seed=10)
        np.testing.assert_array_equal(a[0], b[0])
        assert not np.array_equal(a[0], c[0])

    def test_insufficient(self):
        with pytest.raises(DataError):
            split_simulations(_runs(3, 100), 625)


class TestOptimizer:
    def test_first_step(self):
        w = np.array([1.0])
        optimizer_step([w], [np.array([1.0])], None, lr=0.1, weight_decay=0.01)
        assert w[0] == pytest.approx(1 - 0.1 * (1 / (1 + 1e-8)) - 0.1 * 0.01 * 1, rel=1e-15)
        assert w[0] == pytest.approx(0.899000001, abs=1e-12)

    def test_zero_grad_no_decay(self):
        w = np.array([0.3, -2.0])
        state = None
        for _ in range(3):
            _, state = optimizer_step([w], [np.zeros(2)], state, lr=0.1, weight_decay=0.0)
        np.testing.assert_array_equal(w, [0.3, -2.0])

    def test_pure_decay(self):
        w = np.array([0.3, -2.0])
        optimizer_step([w], [np.zeros(2)], None, lr=0.1, weight_decay=0.5)
        np.testing.assert_array_equal(w, np.array([0.3, -2.0]) * (1 - 0.05))

    def test_state_carries_moments(self):
        w = np.array([1.0])
        _, s = optimizer_step([w], [np.array([1.0])], None, 0.1, 0.0)
        _, s = optimizer_step([w], [np.array([1.0])], s, 0.1, 0.0)
        assert s["step"] == 2
        assert s["m"][0][0] == pytest.approx(0.19)
        assert w[0] == pytest.approx(0.8, abs=1e-7)

    def test_non_finite(self):
        with pytest.raises(NumericError):
            optimizer_step([np.ones(2)], [np.array([1.0, np.nan])], None, 0.1, 0.0)


class TestConfig:
    def test_tuned_defaults(self):
        expect = {
            "oae": (1e-3, 1e-2, 0.2),
            "efficientkan": (4.38e-3, 2e-2, 0.96),
            "fastkan": (1.92e-3, 9.6e-3, 0.93),
            "fourierkan": (3.63e-3, 5.38e-3, 0.98),
            "wavkan": (4.99e-3, 7.6e-3, 0.95),
        }
        for v, (lr, wd, f) in expect.items():
            c = TrainConfig.for_variant(v)
            assert (c.initial_lr, c.weight_decay, c.scheduler_factor) == (lr, wd, f)
            assert (c.scheduler_patience, c.early_stop_patience, c.max_epochs) == (5, 15, 600)

    @pytest.mark.parametrize("kw", [dict(initial_lr=-1.0), dict(scheduler_factor=1.0), dict(batch_size=0)])
    def test_invalid(self, kw):
        with pytest.raises(ConfigurationError):
            TrainConfig(**kw)


def _toy(n=400, V=8, seed=0):
    X = np.random.default_rng(seed).normal(size=(n, V))
    return X[: int(0.8 * n)], X[int(0.8 * n):]


def _linear_ae(V=8):
    return build_model(AeArchitecture("oae", (V, V, V), hidden_activation="identity"), seed=0)


class TestTrain:
    def test_identity_task(self):
        Xt, Xv = _toy()
        m0 = _linear_ae()
        initial = m0.loss(Xv).mse
        cfg = TrainConfig(initial_lr=1e-2, weight_decay=0.0, max_epochs=200, batch_size=32)
        m, hist = train(m0, Xt, Xv, cfg)
        assert m.loss(Xv).mse < 0.05 * initial
        # the input model is not modified
        assert m0.loss(Xv).mse == initial

    def test_zero_lr_stops_at_16(self):
        Xt, Xv = _toy()
        cfg = TrainConfig(initial_lr=0.0, weight_decay=0.0)
        m, hist = train(_linear_ae(), Xt, Xv, cfg)
        assert hist.n_epochs == 16
        assert hist.stop_reason == "early_stop"
        assert len(set(hist.val_loss)) == 1

    def test_schedule_and_snapshot(self):
        Xt, Xv = _toy(seed=1)
        arch = default_architecture("wavkan", n_features=8, latent=3)
        cfg = replace(TrainConfig.for_variant("wavkan"), max_epochs=120, scheduler_factor=0.5)
        m, hist = train(build_model(arch, 0), Xt, Xv, cfg)
        lrs = np.array(hist.lr)
        assert np.all(np.diff(lrs) <= 0)
        ratios = np.log(lrs / lrs[0]) / np.log(0.5)
        np.testing.assert_allclose(ratios, np.round(ratios), atol=1e-9)
        final = m.loss(Xv).mse
        assert final == min(hist.val_loss)
        assert all(final <= v for v in hist.val_loss)

    def test_deterministic(self):
        Xt, Xv = _toy(seed=2)
        arch = default_architecture("fastkan", n_features=8, latent=3)
        cfg = replace(TrainConfig.for_variant("fastkan"), max_epochs=20)
        a, ha = train(build_model(arch, 4), Xt, Xv, cfg)
        b, hb = train(build_model(arch, 4), Xt, Xv, cfg)
        assert ha.val_loss == hb.val_loss
        for (_, _, p), (_, _, q) in zip(a.parameters(), b.parameters()):
            np.testing.assert_array_equal(p, q)

    def test_divergence(self):
        Xt, Xv = _toy()
        cfg = TrainConfig(initial_lr=1e200, weight_decay=0.0, max_epochs=5)
        with pytest.raises(TrainingError) as info:
            train(build_model(default_architecture("oae", n_features=8, latent=3), 0), Xt * 1e150, Xv, cfg)
        assert info.value.epoch >= 1

    def test_history_json(self):
        h = TrainHistory([1.0, 0.5], [2.0, 1.0], [0.1, 0.1], "early_stop", 2)
        assert TrainHistory.from_json(h.to_json()) == h
        assert json.loads(h.to_json())["best_epoch"] == 2

    def test_scaler_ignores_validation(self):
        Xt, Xv = _toy(seed=3)
        arch = default_architecture("fourierkan", n_features=8, latent=3)
        cfg = replace(TrainConfig.for_variant("fourierkan"), max_epochs=2)
        p1, _ = train_cell(arch, Xt, Xv, seed=0, cfg=cfg)
        p2, _ = train_cell(arch, Xt, Xv * 10 + 5, seed=0, cfg=cfg)
        np.testing.assert_array_equal(p1.scaler.mean, p2.scaler.mean)
        np.testing.assert_array_equal(p1.scaler.std, p2.scaler.std)


class TestSweep:
    def _data(self):
        rng = np.random.default_rng(5)
        return {s: (rng.normal(size=(s, 4)), rng.normal(size=(s // 4, 4))) for s in (40, 80)}

    def test_cells_and_resume(self, tmp_path):
        arch = default_architecture("fastkan", n_features=4, latent=2)
        cfg = replace(TrainConfig.for_variant("fastkan"), max_epochs=3)
        cells = sweep(arch, self._data(), 3, cfg, out_dir=tmp_path)
        assert len(cells) == 6
        assert all(c.error is None and not c.resumed for c in cells)
        names = sorted(p.name for p in tmp_path.iterdir())
        assert len(names) == 12
        assert cell_name("fastkan", 40, 2) + ".kae" in names
        stamps = {p.name: p.stat().st_mtime_ns for p in tmp_path.iterdir()}
        again = sweep(arch, self._data(), 3, cfg, out_dir=tmp_path)
        assert all(c.resumed for c in again)
        assert stamps == {p.name: p.stat().st_mtime_ns for p in tmp_path.iterdir()}
        for a, b in zip(cells, again):
            np.testing.assert_array_equal(a.profile.q_train, b.profile.q_train)
            assert a.history == b.history

    def test_parallel_matches_serial(self, tmp_path):
        arch = default_architecture("efficientkan", n_features=4, latent=2)
        cfg = replace(TrainConfig.for_variant("efficientkan"), max_epochs=3)
        serial = sweep(arch, self._data(), 2, cfg)
        parallel = sweep(arch, self._data(), 2, cfg, jobs=2)
        for a, b in zip(serial, parallel):
            assert (a.size, a.seed) == (b.size, b.seed)
            np.testing.assert_array_equal(a.profile.q_train, b.profile.q_train)

    def test_failure_does_not_abort(self):
        arch = default_architecture("oae", n_features=4, latent=2)
        data = self._data()
        data[80] = (data[80][0] * 1e150, data[80][1])
        cfg = TrainConfig(initial_lr=1e200, weight_decay=0.0, max_epochs=3)
        cells = sweep(arch, {80: data[80]}, 2, cfg)
        assert len(cells) == 2
        assert all(c.error and "TrainingError" in c.error for c in cells)
