import numpy as np
import pytest

from outagealloc import channel as ch
from outagealloc import losses as ls
from outagealloc import predictor as pr
from outagealloc import trainer as tr
from outagealloc.errors import ConfigError


def toy_batch(n=1024, k=8, seed=0, threshold=1.2):
    """Separable toy data: outage iff the mean input magnitude is low."""
    rng = np.random.default_rng(seed)
    inputs = rng.standard_normal((n, k)) + 1j * rng.standard_normal((n, k))
    futures = rng.standard_normal((n, 2)) + 1j * rng.standard_normal((n, 2))
    labels = (np.mean(np.abs(inputs), axis=1) < threshold).astype(np.uint8)
    return ch.WindowBatch(
        inputs=inputs,
        futures=futures,
        labels=labels,
        gamma_th=0.5,
        capacity_mode="mean",
    )


def quick_cfg(kind="bce", **overrides):
    base = dict(
        loss_kind=kind,
        resource_count=4,
        batch_size=128,
        epochs=2,
        seed=11,
        replicate_count=1,
    )
    base.update(overrides)
    return tr.TrainConfig(**base)


class TestAdamStep:
    def make(self):
        params = pr.init_params(pr.PredictorArch(), np.random.default_rng(0))
        return params, tr.AdamState.zeros_like(params)

    def test_zero_gradients_leave_params_unchanged(self):
        params, state = self.make()
        before = {n: a.copy() for n, a in params.tensors()}
        zero = {n: np.zeros_like(a) for n, a in params.tensors()}
        tr.adam_step(params, zero, state, 1, quick_cfg())
        for n, a in params.tensors():
            assert np.array_equal(a, before[n])

    def test_first_step_magnitude(self):
        params, state = self.make()
        cfg = quick_cfg(learning_rate=1e-3)
        before = params.b_d2.copy()
        grads = {n: np.zeros_like(a) for n, a in params.tensors()}
        grads["b_d2"] = np.array([1.0])
        tr.adam_step(params, grads, state, 1, cfg)
        delta = before[0] - params.b_d2[0]
        assert delta == pytest.approx(1e-3 / (1.0 + cfg.adam_eps), rel=1e-9)

    def test_tensors_update_independently(self):
        params, state = self.make()
        before_wx = params.w_x.copy()
        before_b = params.b.copy()
        grads = {n: np.zeros_like(a) for n, a in params.tensors()}
        grads["w_x"] = np.ones_like(params.w_x)
        tr.adam_step(params, grads, state, 1, quick_cfg())
        assert not np.array_equal(params.w_x, before_wx)
        assert np.array_equal(params.b, before_b)


class TestTrain:
    @pytest.mark.parametrize("kind", ls.LOSS_KINDS)
    def test_loss_decreases_on_separable_data(self, kind):
        data = toy_batch()
        params, history = tr.train(quick_cfg(kind, epochs=4), data)
        first = np.mean([v for _, e, v in history.steps if e == 1])
        last = np.mean([v for _, e, v in history.steps if e == 4])
        assert last < first

    def test_bit_identical_reruns(self):
        data = toy_batch()
        cfg = quick_cfg("custom")
        p1, _ = tr.train(cfg, data)
        p2, _ = tr.train(cfg, data)
        for n, a in p1.tensors():
            assert np.array_equal(a, getattr(p2, n))

    def test_custom_loss_all_negative_batch(self):
        data = toy_batch(threshold=0.0)  # no outage labels at all
        assert data.labels.sum() == 0
        params, history = tr.train(quick_cfg("custom"), data)
        assert all(np.isfinite(v) for _, _, v in history.steps)

    def test_validation_tallies_recorded(self):
        data = toy_batch()
        _, history = tr.train(quick_cfg(epochs=2), data)
        assert len(history.val_tallies) == 2
        epoch, tally = history.val_tallies[-1]
        assert epoch == 2
        assert tally.total == tally.n

    def test_nonfinite_loss_aborts_with_diagnostics(self, monkeypatch):
        data = toy_batch(n=128)

        def poisoned(kind, q, b, **kw):
            return ls.LossValue(value=float("nan"), grad=np.zeros(q.size))

        monkeypatch.setattr(ls, "batch_loss", poisoned)
        with pytest.raises(RuntimeError, match=r"step 1 \(batch [0-9a-f]{12}\)"):
            tr.train(quick_cfg(), data)

    def test_no_class_weighting_knob_exists(self):
        fields = set(tr.TrainConfig.__dataclass_fields__)
        assert not any("weight" in f or "imbalance" in f for f in fields)

    def test_bce_on_imbalanced_batch_is_unweighted(self):
        rng = np.random.default_rng(1)
        q = rng.uniform(0.05, 0.95, 200)
        b = np.zeros(200)
        b[:10] = 1.0  # 5% positives
        expect = -np.mean(b * np.log(q) + (1 - b) * np.log(1 - q))
        assert ls.bce(q, b).value == pytest.approx(expect, rel=1e-12)

    def test_history_csv_schema(self, tmp_path):
        data = toy_batch(n=256)
        _, history = tr.train(quick_cfg(epochs=2), data)
        path = tmp_path / "hist.csv"
        tr.write_history_csv(history, str(path))
        lines = path.read_text().strip().split("\n")
        assert lines[0] == "step,epoch,loss_kind,loss_value,val_tp,val_fp,val_tn,val_fn"
        assert len(lines) == 1 + len(history.steps)
        filled = [l for l in lines[1:] if not l.endswith(",,,")]
        assert len(filled) == 2  # one per epoch

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            tr.TrainConfig(loss_kind="focal")
        with pytest.raises(ConfigError):
            tr.TrainConfig(loss_kind="custom", batch_size=1)
        with pytest.raises(ConfigError):
            tr.TrainConfig(learning_rate=0.0)


class TestReplicates:
    def eval_cfg(self):
        sim = ch.SimConfig(
            n_taps=32, k=8, l=2, resource_count=4, gamma_th=0.5, seed=2
        )
        return tr.EvalConfig(sim=sim, q_th=0.3, n_episodes=300, seed=5000)

    def make_data(self):
        sim = ch.SimConfig(
            n_taps=32, k=8, l=2, resource_count=4, gamma_th=0.5, seed=2
        )
        return ch.build_dataset(sim, 600, seed=9)

    def test_row_count_and_mean(self):
        data = self.make_data()
        cfg = quick_cfg("bce", replicate_count=3, epochs=1)
        rep = tr.replicate_train_eval(cfg, data, self.eval_cfg())
        assert rep.outages.shape == (3,)
        assert len(rep.results) == 3
        assert rep.mean_outage == pytest.approx(np.mean(rep.outages), abs=1e-15)
        assert rep.min_outage == np.min(rep.outages)
        assert rep.max_outage == np.max(rep.outages)

    def test_single_replicate_equals_direct_run(self):
        from outagealloc import allocator as al

        data = self.make_data()
        cfg = quick_cfg("bce", replicate_count=1, epochs=1)
        rep = tr.replicate_train_eval(cfg, data, self.eval_cfg())
        params, _ = tr.train(cfg, data)
        ev = self.eval_cfg()
        direct = al.monte_carlo(
            ev.sim, params, ev.q_th, ev.n_episodes, ev.independence_mode, seed=ev.seed
        )
        assert rep.outages[0] == direct.outage.value
