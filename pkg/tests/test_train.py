"""Trainer tests: Adam against a scalar reference, schedule, loop contracts."""

import math
from types import SimpleNamespace

import numpy as np
import pytest

from slideseg import data as dt
from slideseg import train as tr
from slideseg.autodiff import ShapeError, Tensor
from slideseg.checkpoint import load_checkpoint, save_checkpoint
from slideseg.losses import LossSpec
from slideseg.network import NetworkConfig, build


def reference_adam(g_fn, x0, lr, beta1, beta2, eps, steps):
    """Textbook scalar Adam, written independently of the module under test."""
    x, m, v = x0, 0.0, 0.0
    trace = []
    for t in range(1, steps + 1):
        g = g_fn(x)
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        mhat = m / (1 - beta1**t)
        vhat = v / (1 - beta2**t)
        x = x - lr * mhat / (math.sqrt(vhat) + eps)
        trace.append(x)
    return trace


class TestAdam:
    def test_matches_scalar_reference_100_steps(self):
        lr, b1, b2, eps = 1e-3, 0.5, 0.999, 1e-8
        g_fn = lambda x: 2.0 * (x - 3.0)  # d/dx (x-3)^2
        expected = reference_adam(g_fn, 10.0, lr, b1, b2, eps, 100)

        p = np.array([10.0])
        state = tr.AdamState()
        got = []
        for t in range(1, 101):
            tr.adam_step([p], [np.array([g_fn(p[0])])], state, t, lr, b1, b2, eps)
            got.append(p[0])
        assert max(abs(a - b) for a, b in zip(got, expected)) < 1e-12

    def test_first_step_closed_form(self):
        p = np.array([0.0])
        state = tr.AdamState()
        tr.adam_step([p], [np.array([1.0])], state, 1, 1e-4)
        assert abs(p[0] - (-1e-4 / (1 + 1e-8))) < 1e-18

    def test_zero_gradient_fixed_point(self):
        p = np.array([1.5, -2.0])
        state = tr.AdamState()
        for t in range(1, 6):
            tr.adam_step([p], [np.zeros(2)], state, t, 1e-3)
        assert np.array_equal(p, [1.5, -2.0])

    def test_sign_flip_odd_symmetry(self):
        g = np.array([0.3, -1.2, 4.0])
        pa, pb = np.zeros(3), np.zeros(3)
        sa, sb = tr.AdamState(), tr.AdamState()
        tr.adam_step([pa], [g], sa, 1, 1e-3)
        tr.adam_step([pb], [-g], sb, 1, 1e-3)
        assert np.array_equal(pa, -pb)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            tr.adam_step([np.zeros(3)], [np.zeros(4)], tr.AdamState(), 1, 1e-3)

    def test_step_index_starts_at_one(self):
        with pytest.raises(ValueError):
            tr.adam_step([np.zeros(1)], [np.zeros(1)], tr.AdamState(), 0, 1e-3)

    def test_grad_clip_caps_huge_gradients(self):
        def one_step(grad_value, clip):
            net = small_net(seed=0)
            opt = tr.Adam(net, quick_cfg(grad_clip=clip))
            for _, p in opt.pairs:
                p.grad = np.full_like(p.data, grad_value)
            opt.step(1e-3)
            return np.concatenate([p.data.ravel() for _, p in opt.pairs])

        clipped = one_step(1e6, 0.25)
        direct = one_step(0.25, None)
        assert np.array_equal(clipped, direct)

    def test_grad_clip_validation(self):
        with pytest.raises(ValueError):
            quick_cfg(grad_clip=0.0)
        with pytest.raises(ValueError):
            quick_cfg(grad_clip=-2.0)


class TestSchedule:
    def test_paper_schedule_boundary(self):
        cfg = tr.TrainConfig()
        assert tr.lr_schedule(89, cfg) == 1e-4
        assert tr.lr_schedule(90, cfg) == pytest.approx(1e-5)
        assert tr.lr_schedule(0, cfg) == 1e-4
        assert tr.lr_schedule(99, cfg) == pytest.approx(1e-5)

    def test_unit_decay_rate_is_constant(self):
        cfg = tr.TrainConfig(decay_rate=1.0)
        assert {tr.lr_schedule(e, cfg) for e in range(100)} == {1e-4}

    def test_epoch_out_of_range(self):
        cfg = tr.TrainConfig(epochs=10, decay_epochs=2)
        with pytest.raises(ValueError):
            tr.lr_schedule(10, cfg)
        with pytest.raises(ValueError):
            tr.lr_schedule(-1, cfg)

    def test_config_invariants(self):
        with pytest.raises(ValueError):
            tr.TrainConfig(decay_rate=0.0)
        with pytest.raises(ValueError):
            tr.TrainConfig(decay_epochs=101)
        with pytest.raises(ValueError):
            tr.TrainConfig(batch_size=0)


def small_sets(n_train=6, n_val=2, size=32, seed=0):
    pairs = dt.synth_generate(n_train + n_val, size, seed=seed)
    return pairs[:n_train], pairs[n_train:]


def small_net(seed=1, size=32):
    return build(NetworkConfig(input_size=(size, size), depth=2, width=4), seed=seed)


def quick_cfg(**kw):
    base = dict(epochs=2, decay_epochs=1, batch_size=2, seed=3)
    base.update(kw)
    return tr.TrainConfig(**base)


class TestTrainLoop:
    def test_log_shape_and_header(self, tmp_path):
        train_set, val_set = small_sets()
        log = tr.train(small_net(), train_set, val_set, quick_cfg(), out_dir=str(tmp_path))
        text = (tmp_path / "losses.csv").read_text()
        lines = text.strip().split("\n")
        assert lines[0] == "epoch,split,ce,ssim,iou,total,seconds"
        assert len(lines) == 1 + 2 * 2  # header + (train+val) per epoch
        assert lines[1].startswith("0,train,") and lines[2].startswith("0,val,")
        assert len(log.rows) == 4

    def test_same_seed_identical_logs_and_checkpoints(self, tmp_path):
        outs = []
        for run in ("a", "b"):
            d = tmp_path / run
            d.mkdir()
            train_set, val_set = small_sets()
            tr.train(
                small_net(seed=2),
                train_set,
                val_set,
                quick_cfg(),
                out_dir=str(d),
                record_seconds=False,
            )
            outs.append(d)
        assert (outs[0] / "losses.csv").read_bytes() == (outs[1] / "losses.csv").read_bytes()
        assert (outs[0] / "final.ckpt").read_bytes() == (outs[1] / "final.ckpt").read_bytes()
        assert (outs[0] / "best.ckpt").read_bytes() == (outs[1] / "best.ckpt").read_bytes()

    def test_shuffle_is_seed_derived(self):
        train_set, val_set = small_sets()
        log_a = tr.train(small_net(seed=2), train_set, val_set, quick_cfg(seed=3))
        log_b = tr.train(small_net(seed=2), train_set, val_set, quick_cfg(seed=4))
        assert log_a.rows != log_b.rows

    def test_inactive_terms_logged_as_zero(self):
        train_set, val_set = small_sets()
        log = tr.train(small_net(), train_set, val_set, quick_cfg(loss=LossSpec.parse("ce")))
        assert all(r["ssim"] == 0.0 and r["iou"] == 0.0 for r in log.rows)
        assert all(r["ce"] > 0.0 for r in log.rows)

    def test_loss_descends_on_easy_problem(self):
        train_set, val_set = small_sets(n_train=12, n_val=4)
        cfg = quick_cfg(epochs=4, decay_epochs=1, lr=1e-3, seed=5)
        log = tr.train(small_net(seed=6), train_set, val_set, cfg)
        ce = log.term_series("train", "ce")
        assert all(np.isfinite(v) for v in ce)
        assert ce[-1] < ce[0]

    def test_nonfinite_loss_aborts_with_diagnostics(self):
        train_set, val_set = small_sets()
        net = small_net()
        dict(net.named_parameters())["head.bias"].data[:] = np.nan
        with pytest.raises(tr.NonFiniteLossError) as err:
            tr.train(net, train_set, val_set, quick_cfg())
        assert err.value.epoch == 0 and err.value.batch == 0
        assert "ce" in err.value.terms

    def test_empty_train_set_rejected(self):
        with pytest.raises(ValueError):
            tr.train(small_net(), [], [], quick_cfg())

    def test_best_checkpoint_tracks_val_dice(self, tmp_path):
        train_set, val_set = small_sets(n_train=10)
        cfg = quick_cfg(epochs=3, seed=7, lr=1e-3)
        log = tr.train(small_net(seed=8), train_set, val_set, cfg, out_dir=str(tmp_path))
        assert (tmp_path / "best.ckpt").exists()
        assert (tmp_path / "final.ckpt").exists()
        assert 0 <= log.best_epoch < 3
        assert 0.0 <= log.best_val_dice <= 1.0

    def test_checkpoint_roundtrip_reproduces_validation(self, tmp_path):
        train_set, val_set = small_sets()
        net = small_net(seed=9)
        tr.train(net, train_set, val_set, quick_cfg(), out_dir=str(tmp_path))
        samples = [(f"v{i}", img, m) for i, (img, m) in enumerate(val_set)]
        before = tr.evaluate(net, samples).csv()
        loaded = load_checkpoint(tmp_path / "final.ckpt")
        after = tr.evaluate(loaded, samples).csv()
        assert before == after


class _StubModel:
    """Minimal stand-in exposing what evaluate() touches."""

    def __init__(self, size):
        self.cfg = SimpleNamespace(input_size=(size, size))

    def eval(self):
        pass


class _OracleModel(_StubModel):
    """Reads the answer out of channel 0 of its input."""

    def __call__(self, x):
        return SimpleNamespace(data=x.data[:, 0:1].copy())


class _ConstantModel(_StubModel):
    def __call__(self, x):
        return SimpleNamespace(data=np.full((x.shape[0], 1) + x.shape[2:], 0.5))


def mask_coded_samples(n=3, size=32, seed=0):
    """Images whose channel 0 equals the mask, so an oracle can cheat."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        _, mask = dt.synth_sample(size, rng)
        img = rng.uniform(size=(size, size, 3)).astype(np.float32)
        img[:, :, 0] = mask
        out.append((f"w{i}", img, mask))
    return out


class TestEvaluate:
    def test_oracle_model_scores_one(self):
        samples = mask_coded_samples()
        rep = tr.evaluate(_OracleModel(32), samples)
        assert rep.s_wsi == 1.0
        for m in rep.per_wsi.values():
            assert m["dc"] == 1.0 and m["js"] == 1.0
        assert rep.aggregate["dc"] == 1.0
        assert rep.csv().strip().split("\n")[-1].endswith("1.000000,1.000000,1.000000")

    def test_constant_half_predictor_degenerates(self):
        samples = mask_coded_samples()
        rep = tr.evaluate(_ConstantModel(32), samples)
        for m in rep.per_wsi.values():
            assert m["rc"] == 1.0  # threshold is inclusive so 0.5 -> all positive
            assert m["sp"] == 0.0

    def test_row_count_contract(self):
        samples = mask_coded_samples(n=2, size=48)
        # 48x48 images, 32-patch model -> 2x2 grid of tiles per image
        rep = tr.evaluate(_OracleModel(32), samples, overlap=16)
        lines = rep.csv().strip().split("\n")
        assert len(lines) == 1 + 2 * 4 + 2 + 1  # header + tiles + WSIs + AGGREGATE
        assert lines[-1].startswith("AGGREGATE,")

    def test_image_smaller_than_input_rejected(self):
        with pytest.raises(ValueError):
            tr.predict_wsi(_OracleModel(32), np.zeros((16, 16, 3)))

    def test_exact_fit_single_tile(self):
        samples = mask_coded_samples(n=1)
        rep = tr.evaluate(_OracleModel(32), samples)
        assert len(rep.csv().strip().split("\n")) == 1 + 1 + 1 + 1
