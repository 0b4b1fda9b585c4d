import numpy as np
import pytest

from eqprop import data as dt
from eqprop import energy as en
from eqprop import gradients as gr
from eqprop import topology as tp
from eqprop import training as tr
from eqprop.relaxation import RelaxationConfig


def _toy_params():
    return en.Parameters(weights={"a": np.array([1.0, 2.0]),
                                  "b": np.array([[0.5]])})


class TestNesterov:
    def test_plain_gradient_descent(self):
        params = _toy_params()
        grads = {"a": np.array([1.0, -1.0]), "b": np.array([[2.0]])}
        opt = tr.OptimizerState.zeros_like(params)
        tr.nesterov_step(params, grads, opt, lr=0.1, momentum=0.0, weight_decay=0.0)
        np.testing.assert_allclose(params.weights["a"], [0.9, 2.1])
        np.testing.assert_allclose(params.weights["b"], [[0.3]])

    def test_zero_grads_no_change(self):
        params = _toy_params()
        before = params.copy()
        grads = {"a": np.zeros(2), "b": np.zeros((1, 1))}
        opt = tr.OptimizerState.zeros_like(params)
        tr.nesterov_step(params, grads, opt, lr=0.5, momentum=0.9)
        for k in params.weights:
            np.testing.assert_array_equal(params.weights[k], before.weights[k])

    def test_two_steps_match_hand_recursion(self):
        # fixed gradient g, momentum mu: buf_t = mu*buf_{t-1} + g and the
        # applied update is lr*(g + mu*buf_t)
        g_val, mu, lr = 2.0, 0.9, 0.1
        params = en.Parameters(weights={"w": np.array([0.0])})
        grads = {"w": np.array([g_val])}
        opt = tr.OptimizerState.zeros_like(params)
        tr.nesterov_step(params, grads, opt, lr=lr, momentum=mu)
        tr.nesterov_step(params, grads, opt, lr=lr, momentum=mu)
        buf1 = g_val
        d1 = g_val + mu * buf1
        buf2 = mu * buf1 + g_val
        d2 = g_val + mu * buf2
        np.testing.assert_allclose(params.weights["w"], [-lr * (d1 + d2)])

    def test_weight_decay_folded_into_gradient(self):
        params = en.Parameters(weights={"w": np.array([2.0])})
        grads = {"w": np.array([0.0])}
        opt = tr.OptimizerState.zeros_like(params)
        tr.nesterov_step(params, grads, opt, lr=0.1, momentum=0.0, weight_decay=0.5)
        np.testing.assert_allclose(params.weights["w"], [2.0 - 0.1 * 0.5 * 2.0])

    def test_nonpositive_lr_rejected(self):
        params = _toy_params()
        opt = tr.OptimizerState.zeros_like(params)
        with pytest.raises(ValueError):
            tr.nesterov_step(params, {"a": np.zeros(2), "b": np.zeros((1, 1))},
                             opt, lr=0.0)


class TestLayerLearningRates:
    def test_geometric_growth_with_depth(self):
        top = tp.build_vgg5((3, 32, 32), [4, 4, 4, 4], 10)
        lrs = tr.layer_learning_rates(top, base=0.1, growth=1.5)
        assert lrs["conv1"] == pytest.approx(0.1)
        assert lrs["conv4"] == pytest.approx(0.1 * 1.5 ** 3)
        assert lrs["dense"] == pytest.approx(0.1 * 1.5 ** 4)

    def test_block_edges_share_depth_rank(self):
        top = tp.build_hopfield_resnet13((3, 32, 32), [4, 4, 4, 4], 10)
        lrs = tr.layer_learning_rates(top, base=0.1, growth=2.0)
        # skip and main-path conv into the same block-output state share a rate
        assert lrs["block2_skip"] == lrs["block2_conv2"]


class TestAugment:
    def _flags(self, **kw):
        base = dict(crop=False, flip=False, normalize=False, erase=False)
        base.update(kw)
        return tr.AugmentConfig(**base)

    def test_all_off_is_identity(self, rng):
        x = rng.uniform(0, 1, (4, 3, 8, 8))
        out = tr.augment(x, rng, self._flags())
        np.testing.assert_array_equal(out, x)

    def test_same_seed_same_output(self):
        x = np.random.default_rng(0).uniform(0, 1, (4, 3, 8, 8))
        flags = self._flags(crop=True, flip=True, erase=True)
        a = tr.augment(x, np.random.default_rng(7), flags)
        b = tr.augment(x, np.random.default_rng(7), flags)
        np.testing.assert_array_equal(a, b)

    def test_double_flip_restores(self, rng):
        x = rng.uniform(0, 1, (2, 1, 4, 4))
        flipped = x[:, :, :, ::-1]
        np.testing.assert_array_equal(flipped[:, :, :, ::-1], x)

    def test_crop_preserves_shape(self, rng):
        x = rng.uniform(0, 1, (3, 3, 16, 16))
        out = tr.augment(x, rng, self._flags(crop=True))
        assert out.shape == x.shape

    def test_normalization(self, rng):
        x = rng.uniform(0, 1, (8, 3, 4, 4))
        mean, std = tr.normalization_stats(x)
        out = tr.augment(x, rng, self._flags(normalize=True), mean=mean, std=std)
        np.testing.assert_allclose(out.mean(axis=(0, 2, 3)), 0.0, atol=1e-12)
        np.testing.assert_allclose(out.std(axis=(0, 2, 3)), 1.0, atol=1e-12)

    def test_erase_zeroes_a_rectangle(self, rng):
        x = np.ones((1, 1, 16, 16))
        out = tr.augment(x, rng, self._flags(erase=True))
        assert (out == 0).sum() > 0


def _small_setup(seed=0, estimator=gr.CEP, lr_base=0.02, epochs=3):
    top = tp.build_dense_chain([12, 8, 4])
    rng = np.random.default_rng(seed)
    params = en.init_parameters(top, rng, gain=0.5)
    model = tr.Model(topology=top, params=params)
    ds = dt.make_synthetic(4, 8, (12,), seed=seed, noise=0.05)
    # flatten-shaped synthetic: dense input state
    cfg = tr.TrainingConfig(
        beta=0.25, epochs=epochs, batch_size=16, lr_base=lr_base,
        momentum=0.9, estimator=estimator, seed=seed,
        relaxation=RelaxationConfig(t_free=30, t_nudge=15),
        augment=tr.AugmentConfig(crop=False, flip=False, normalize=False))
    opt = tr.OptimizerState.zeros_like(params)
    return model, ds, cfg, opt


class TestTrainEpoch:
    def test_zero_lr_leaves_params_unchanged(self):
        model, ds, cfg, opt = _small_setup(lr_base=1e-300)
        before = model.params.copy()
        model, opt, m = tr.train_epoch(model, ds, cfg, opt)
        for k in before.weights:
            np.testing.assert_allclose(model.params.weights[k],
                                       before.weights[k], atol=1e-290)
        assert np.isfinite(m.loss)

    def test_fixed_seed_bit_reproducible(self):
        a_model, ds, cfg, a_opt = _small_setup(seed=3)
        b_model, _, _, b_opt = _small_setup(seed=3)
        _, _, ma = tr.train_epoch(a_model, ds, cfg, a_opt)
        _, _, mb = tr.train_epoch(b_model, ds, cfg, b_opt)
        assert ma.loss == mb.loss and ma.accuracy == mb.accuracy
        for k in a_model.params.weights:
            np.testing.assert_array_equal(a_model.params.weights[k],
                                          b_model.params.weights[k])

    def test_loss_decreases_on_easy_task(self):
        model, ds, cfg, opt = _small_setup(seed=1, lr_base=0.05, epochs=6)
        losses = []
        for epoch in range(6):
            model, opt, m = tr.train_epoch(model, ds, cfg, opt, epoch=epoch)
            losses.append(m.loss)
        assert losses[-1] < losses[0]

    def test_one_sided_estimator_runs(self):
        model, ds, cfg, opt = _small_setup(estimator=gr.EP_ONESIDED)
        _, _, m = tr.train_epoch(model, ds, cfg, opt)
        assert np.isfinite(m.loss)


class TestEvaluate:
    def test_zero_weight_net_predicts_class_zero(self):
        top = tp.build_dense_chain([6, 4, 3])
        params = en.Parameters(weights={
            "dense1": np.zeros((4, 6)), "dense2": np.zeros((3, 4))})
        model = tr.Model(topology=top, params=params)
        ds = dt.make_synthetic(3, 5, (6,), seed=0)
        m = tr.evaluate(model, ds, RelaxationConfig(t_free=5))
        expected = (ds.labels == 0).mean()
        assert m["accuracy"] == pytest.approx(expected)

    def test_invariant_to_batch_size(self):
        model, ds, cfg, _ = _small_setup(seed=5)
        a = tr.evaluate(model, ds, cfg.relaxation, batch_size=7)
        b = tr.evaluate(model, ds, cfg.relaxation, batch_size=32)
        assert a["accuracy"] == b["accuracy"]
        assert a["loss"] == pytest.approx(b["loss"], rel=1e-12)

    def test_deterministic(self):
        model, ds, cfg, _ = _small_setup(seed=6)
        a = tr.evaluate(model, ds, cfg.relaxation)
        b = tr.evaluate(model, ds, cfg.relaxation)
        assert a == b


class TestHistograms:
    def test_constant_tensor_single_bin(self):
        params = en.Parameters(weights={"w": np.full((3, 3), 1.5)})
        rows = tr.export_weight_histograms(params, bins=10)
        assert sum(c > 0 for c in rows[0]["bin_counts"]) == 1

    def test_zero_tensor_near_zero_fraction(self):
        params = en.Parameters(weights={"w": np.zeros(7)})
        rows = tr.export_weight_histograms(params)
        assert rows[0]["near_zero_fraction"] == 1.0

    def test_counts_sum_to_size(self, rng):
        params = en.Parameters(weights={"w": rng.standard_normal((4, 5))})
        rows = tr.export_weight_histograms(params, bins=7)
        assert sum(rows[0]["bin_counts"]) == 20

    def test_too_few_bins(self):
        params = en.Parameters(weights={"w": np.zeros(3)})
        with pytest.raises(ValueError):
            tr.export_weight_histograms(params, bins=1)

    def test_csv_writer(self, tmp_path, rng):
        params = en.Parameters(weights={"w": rng.standard_normal(10)})
        rows = tr.export_weight_histograms(params, bins=4)
        path = tmp_path / "hist.csv"
        tr.write_histogram_csv(rows, path)
        lines = path.read_text().strip().splitlines()
        assert len(lines) == 5  # header + one per bin


class TestCheckpoint:
    def test_bit_exact_roundtrip(self, tmp_path, rng):
        top = tp.build_dense_chain([6, 4, 3])
        params = en.init_parameters(top, rng, gain=0.5)
        model = tr.Model(topology=top, params=params)
        opt = tr.OptimizerState.zeros_like(params)
        opt.momentum["dense1"][:] = rng.standard_normal((4, 6))
        opt.step = 17
        path = tmp_path / "ckpt.npz"
        tr.save_checkpoint(path, model, opt, epoch=3, config_hash="abc",
                           rng=np.random.default_rng(9))
        model2, opt2, epoch, rng2 = tr.load_checkpoint(path, top)
        assert epoch == 3 and opt2.step == 17
        for k in params.weights:
            np.testing.assert_array_equal(model2.params.weights[k],
                                          params.weights[k])
        np.testing.assert_array_equal(opt2.momentum["dense1"],
                                      opt.momentum["dense1"])
        # restored rng continues the saved stream
        ref = np.random.default_rng(9)
        assert rng2.random() == ref.random()

    def test_topology_mismatch_rejected(self, tmp_path, rng):
        top = tp.build_dense_chain([6, 4, 3])
        params = en.init_parameters(top, rng, gain=0.5)
        model = tr.Model(topology=top, params=params)
        opt = tr.OptimizerState.zeros_like(params)
        path = tmp_path / "ckpt.npz"
        tr.save_checkpoint(path, model, opt, epoch=0)
        other = tp.build_dense_chain([6, 5, 3])
        with pytest.raises(ValueError):
            tr.load_checkpoint(path, other)

    def test_resume_continues_bit_identically(self, tmp_path):
        # uninterrupted 2-epoch run vs save-after-1 then resume
        model_a, ds, cfg, opt_a = _small_setup(seed=11, epochs=2)
        model_a, opt_a, _ = tr.train_epoch(model_a, ds, cfg, opt_a, epoch=0)
        model_a, opt_a, ma = tr.train_epoch(model_a, ds, cfg, opt_a, epoch=1)

        model_b, _, _, opt_b = _small_setup(seed=11, epochs=2)
        model_b, opt_b, _ = tr.train_epoch(model_b, ds, cfg, opt_b, epoch=0)
        path = tmp_path / "ckpt.npz"
        tr.save_checkpoint(path, model_b, opt_b, epoch=0)
        model_c, opt_c, epoch, _ = tr.load_checkpoint(path, model_b.topology)
        model_c, opt_c, mc = tr.train_epoch(model_c, ds, cfg, opt_c, epoch=epoch + 1)
        assert ma.loss == mc.loss and ma.accuracy == mc.accuracy
        for k in model_a.params.weights:
            np.testing.assert_array_equal(model_a.params.weights[k],
                                          model_c.params.weights[k])


class TestConfigValidation:
    def test_beta_hard_range(self):
        with pytest.raises(ValueError):
            tr.TrainingConfig(beta=0.9)
        with pytest.raises(ValueError):
            tr.TrainingConfig(beta=-0.1)

    def test_beta_warning_outside_stable_range(self):
        with pytest.warns(UserWarning):
            tr.TrainingConfig(beta=0.05)

    def test_unknown_estimator(self):
        with pytest.raises(ValueError):
            tr.TrainingConfig(estimator="BPTT")
