import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_gray, toy_rgb

from specgrid.augment import AugmentConfig, SpectralSample, make_sample
from specgrid.network import ConvLayer, NetConfig, init_params
from specgrid.train import (
    AdamState,
    NumericError,
    TrainHyper,
    adam_step,
    backward,
    fit,
    holdout_masked_psnr,
    lr_at,
    weighted_l1,
)


def make_random_sample(rng, shape=(16, 16), mask_p=0.3, dtype=np.float64):
    guide = rng.random(shape).astype(dtype)
    target = rng.random(shape).astype(dtype)
    mask = (rng.random(shape) < mask_p).astype(dtype)
    distorted = target.copy()
    distorted[mask == 1] = 1.0
    return SpectralSample(guide=guide, target=target, distorted=distorted, mask=mask)


class TestWeightedL1:
    def test_zero_when_equal(self, rng):
        img = random_gray(rng, (8, 8))
        mask = (rng.random((8, 8)) < 0.5).astype(np.float32)
        assert weighted_l1(img, img, mask, alpha=10) == 0.0

    def test_two_pixel_worked_example(self):
        # diffs 0.1 and 0.2, mask [1, 0], alpha 10 -> (10*0.1 + 0.2) / 2 = 0.6
        net = np.array([[0.1, 0.2]])
        target = np.array([[0.0, 0.0]])
        mask = np.array([[1.0, 0.0]])
        assert weighted_l1(net, target, mask, alpha=10) == pytest.approx(0.6, abs=1e-12)

    def test_alpha_one_is_mae(self, rng):
        a, b = random_gray(rng, (6, 6)), random_gray(rng, (6, 6))
        mask = (rng.random((6, 6)) < 0.5).astype(np.float32)
        assert weighted_l1(a, b, mask, alpha=1) == pytest.approx(np.abs(a - b).mean(), rel=1e-6)

    def test_shape_mismatch(self, rng):
        with pytest.raises(ValueError):
            weighted_l1(random_gray(rng, (4, 4)), random_gray(rng, (4, 5)), np.zeros((4, 4)), 10)

    @given(alpha1=st.floats(1, 50), alpha2=st.floats(1, 50), seed=st.integers(0, 2**31))
    @settings(max_examples=30, deadline=None)
    def test_monotone_in_alpha(self, alpha1, alpha2, seed):
        rng = np.random.default_rng(seed)
        a, b = rng.random((5, 5)), rng.random((5, 5))
        mask = np.zeros((5, 5))
        mask[2, 2] = 1.0  # one masked pixel with (a.s.) nonzero error
        lo, hi = sorted([alpha1, alpha2])
        assert weighted_l1(a, b, mask, lo) <= weighted_l1(a, b, mask, hi) + 1e-12

    def test_nonnegative_and_zero_iff_equal(self, rng):
        a = random_gray(rng, (5, 5))
        b = a.copy()
        b[3, 3] += 0.01
        mask = np.zeros((5, 5), np.float32)
        assert weighted_l1(a, a, mask, 10) == 0.0
        assert weighted_l1(a, b, mask, 10) > 0.0


class TestLrSchedule:
    def test_published_schedule_values(self):
        hyper = TrainHyper()
        assert lr_at(0, hyper) == pytest.approx(1e-4)
        assert lr_at(19, hyper) == pytest.approx(1e-4)
        assert lr_at(20, hyper) == pytest.approx(5e-5)
        assert lr_at(56, hyper) == pytest.approx(1e-4 / 32)  # 3.125e-6, five halvings
        assert lr_at(63, hyper) == pytest.approx(3.125e-6)

    def test_non_increasing(self):
        hyper = TrainHyper()
        rates = [lr_at(e, hyper) for e in range(hyper.epochs)]
        assert all(b <= a for a, b in zip(rates, rates[1:]))

    def test_halve_epochs_must_increase(self):
        with pytest.raises(ValueError):
            TrainHyper(halve_epochs=(20, 20))


class TestAdam:
    def test_zero_gradient_keeps_params(self):
        params = [ConvLayer(np.ones((1, 1, 3, 3)), np.zeros(1), 1, True)]
        state = AdamState.for_params(params)
        grads = [(np.zeros((1, 1, 3, 3)), np.zeros(1))]
        adam_step(params, grads, state, lr=0.1, hyper=TrainHyper())
        assert np.array_equal(params[0].weight, np.ones((1, 1, 3, 3)))
        assert state.t == 1

    def test_single_step_closed_form(self):
        # g = 1 everywhere, fresh state: bias-corrected m_hat = v_hat = 1,
        # so the update is -lr / (1 + eps)
        hyper = TrainHyper()
        params = [ConvLayer(np.full((1, 1, 3, 3), 0.5), None, 1, False)]
        state = AdamState.for_params(params)
        adam_step(params, [(np.ones((1, 1, 3, 3)), None)], state, lr=0.1, hyper=hyper)
        expected = 0.5 - 0.1 / (1.0 + hyper.eps)
        assert params[0].weight == pytest.approx(expected, abs=1e-12)

    def test_trajectory_determinism(self, rng):
        def run():
            r = np.random.default_rng(33)
            params = [ConvLayer(r.standard_normal((2, 1, 3, 3)), r.standard_normal(2), 1, True)]
            state = AdamState.for_params(params)
            hyper = TrainHyper()
            for t in range(10):
                g = np.random.default_rng(100 + t)
                grads = [(g.standard_normal((2, 1, 3, 3)), g.standard_normal(2))]
                adam_step(params, grads, state, lr=1e-3, hyper=hyper)
            return params[0].weight.copy()

        assert np.array_equal(run(), run())

    def test_nonfinite_gradient_aborts_without_mutation(self):
        params = [ConvLayer(np.ones((1, 1, 3, 3)), np.zeros(1), 1, True)]
        state = AdamState.for_params(params)
        bad = np.ones((1, 1, 3, 3))
        bad[0, 0, 0, 0] = np.nan
        with pytest.raises(NumericError, match="layer 0"):
            adam_step(params, [(bad, np.zeros(1))], state, lr=0.1, hyper=TrainHyper())
        assert np.array_equal(params[0].weight, np.ones((1, 1, 3, 3)))
        assert state.t == 0


class TestBackward:
    config = NetConfig.scaled(luma_bins=2, bin_size=4, trunk_depth=1)

    def test_zero_gradient_when_output_matches_target(self, rng):
        params = init_params(self.config, seed=0, dtype=np.float64)
        for layer in params:
            layer.weight[:] = 0
            if layer.bias is not None:
                layer.bias[:] = 0
        # zero net: net_out == 0 everywhere; target 0 puts |.| exactly at
        # its kink, where the subgradient is defined as 0
        rng4 = np.random.default_rng(4)
        target = np.zeros((16, 16))
        mask = (rng4.random((16, 16)) < 0.3).astype(np.float64)
        distorted = target.copy()
        distorted[mask == 1] = 1.0
        sample = SpectralSample(guide=rng4.random((16, 16)), target=target, distorted=distorted, mask=mask)
        loss, grads = backward(params, sample, TrainHyper())
        assert loss == 0.0
        for gw, gb in grads:
            assert (gw == 0).all()
            assert gb is None or (gb == 0).all()

    def test_matches_finite_differences(self):
        params = init_params(self.config, seed=3, dtype=np.float64)
        sample = make_random_sample(np.random.default_rng(5))
        hyper = TrainHyper()
        _, grads = backward(params, sample, hyper)
        h = 1e-4
        picker = np.random.default_rng(11)
        for li, layer in enumerate(params):
            for _ in range(10):
                idx = tuple(picker.integers(0, s) for s in layer.weight.shape)
                orig = layer.weight[idx]
                layer.weight[idx] = orig + h
                lp, _ = backward(params, sample, hyper)
                layer.weight[idx] = orig - h
                lm, _ = backward(params, sample, hyper)
                layer.weight[idx] = orig
                fd = (lp - lm) / (2 * h)
                bp = grads[li][0][idx]
                assert abs(fd - bp) <= 1e-3 * max(abs(fd), abs(bp), 1e-8)

    def test_alpha_scales_fully_masked_gradients(self):
        params = init_params(self.config, seed=6, dtype=np.float64)
        rng = np.random.default_rng(7)
        guide = rng.random((16, 16))
        target = rng.random((16, 16))
        mask = np.ones((16, 16))
        distorted = np.ones((16, 16))  # fully masked -> all white
        sample = SpectralSample(guide=guide, target=target, distorted=distorted, mask=mask)
        _, g1 = backward(params, sample, TrainHyper(alpha=5))
        _, g2 = backward(params, sample, TrainHyper(alpha=10))
        for (a, _), (b, _) in zip(g1, g2):
            np.testing.assert_allclose(b, 2.0 * a, rtol=1e-9)

    @pytest.mark.filterwarnings("ignore:invalid value encountered")
    def test_nonfinite_intermediate_names_layer(self):
        params = init_params(self.config, seed=2, dtype=np.float64)
        params[1].weight[0, 0, 0, 0] = np.inf
        sample = make_random_sample(np.random.default_rng(8))
        with pytest.raises(NumericError, match="layer 1"):
            backward(params, sample, TrainHyper())

    def test_padding_pixels_carry_no_loss(self):
        # same content, one padded by replication: identical loss values
        params = init_params(self.config, seed=1, dtype=np.float64)
        rng = np.random.default_rng(9)
        sample = make_random_sample(rng, shape=(16, 16))
        loss_a, _ = backward(params, sample, TrainHyper())
        clipped = SpectralSample(
            guide=sample.guide[:14, :13],
            target=sample.target[:14, :13],
            distorted=sample.distorted[:14, :13],
            mask=sample.mask[:14, :13],
        )
        loss_b, _ = backward(params, clipped, TrainHyper())
        assert np.isfinite(loss_b)
        # padded run normalizes by its own 14*13 original pixels
        assert loss_a != pytest.approx(loss_b)  # different content, sanity only


class TestFit:
    config = NetConfig.scaled(luma_bins=2, bin_size=4, trunk_depth=1)

    def _corpus(self, n, seed=0, shape=(16, 16)):
        rng = np.random.default_rng(seed)
        return [make_random_sample(rng, shape=shape, dtype=np.float32) for _ in range(n)]

    def test_step_bookkeeping(self, tmp_path):
        corpus = self._corpus(2)
        hyper = TrainHyper(epochs=1, batch_size=1, seed=0)
        fit(corpus, self.config, hyper, tmp_path / "ck")
        from specgrid.network import load_checkpoint

        ckpt = load_checkpoint(tmp_path / "ck" / "latest.ckpt")
        assert ckpt.meta["adam_t"] == "2"  # exactly 2 optimizer steps

    def test_empty_corpus_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            fit([], self.config, TrainHyper(epochs=1), tmp_path / "ck")

    def test_log_format(self, tmp_path):
        corpus = self._corpus(3)
        hyper = TrainHyper(epochs=2, batch_size=2, seed=1)
        fit(corpus, self.config, hyper, tmp_path / "ck", holdout=self._corpus(1, seed=5))
        lines = (tmp_path / "ck" / "train_log.txt").read_text().splitlines()
        assert len(lines) == 2
        for epoch, line in enumerate(lines):
            fields = [f.strip() for f in line.split(",")]
            assert int(fields[0]) == epoch
            float(fields[1]), float(fields[2]), float(fields[3])

    def test_resume_reproduces_uninterrupted_run(self, tmp_path):
        corpus = self._corpus(4, seed=2)
        full_hyper = TrainHyper(epochs=3, batch_size=2, seed=9)
        p_full = fit(corpus, self.config, full_hyper, tmp_path / "full")

        fit(corpus, self.config, TrainHyper(epochs=2, batch_size=2, seed=9), tmp_path / "part")
        p_res = fit(
            corpus,
            self.config,
            full_hyper,
            tmp_path / "part",
            resume_from=tmp_path / "part" / "epoch_0001.ckpt",
        )
        log_full = (tmp_path / "full" / "train_log.txt").read_text().splitlines()
        log_res = (tmp_path / "part" / "train_log.txt").read_text().splitlines()
        assert log_full[2] == log_res[2]
        for la, lb in zip(p_full, p_res):
            assert np.array_equal(la.weight, lb.weight)

    def test_same_seed_same_loss_curve(self, tmp_path):
        corpus = self._corpus(4, seed=3)
        hyper = TrainHyper(epochs=2, batch_size=2, seed=4)
        fit(corpus, self.config, hyper, tmp_path / "a")
        fit(corpus, self.config, hyper, tmp_path / "b")
        assert (tmp_path / "a" / "train_log.txt").read_text() == (tmp_path / "b" / "train_log.txt").read_text()

    @pytest.mark.slow
    def test_toy_overfit(self, tmp_path):
        # 8 samples of 64x64, 200 steps at lr 1e-4: loss must fall below
        # 0.25x its initial value (bring-up measured ~0.09)
        rng = np.random.default_rng(77)
        cfg = AugmentConfig()
        corpus = [make_sample(toy_rgb(rng), rng, cfg)[0] for _ in range(8)]
        config = NetConfig.scaled(luma_bins=8, bin_size=16, trunk_depth=8)
        hyper = TrainHyper(epochs=200, batch_size=8, halve_epochs=(), seed=7)
        fit(corpus, config, hyper, tmp_path / "ck")
        log = [l.split(",") for l in (tmp_path / "ck" / "train_log.txt").read_text().splitlines()]
        first, last = float(log[0][2]), float(log[-1][2])
        assert last < 0.25 * first

    def test_holdout_psnr_logged(self, tmp_path):
        corpus = self._corpus(2, seed=6)
        holdout = self._corpus(2, seed=7)
        params = fit(corpus, self.config, TrainHyper(epochs=1, batch_size=2), tmp_path / "ck", holdout=holdout)
        value = holdout_masked_psnr(params, holdout)
        logged = float((tmp_path / "ck" / "train_log.txt").read_text().split(",")[-1])
        assert logged == pytest.approx(value, abs=5e-5)
