import numpy as np
import pytest

from conftest import random_gray, random_mask

from specgrid.imaging import FormatError
from specgrid.network import (
    Checkpoint,
    ConvLayer,
    NetConfig,
    _layer_plan,
    conv2d,
    forward_grids,
    init_params,
    load_checkpoint,
    params_bin_size,
    reconstruct,
    save_checkpoint,
)


class TestNetConfig:
    def test_defaults_match_published_architecture(self):
        cfg = NetConfig()
        assert cfg.bin_size == 16
        assert cfg.luma_bins == 32
        assert cfg.downscale_channels == (32, 64, 128, 256)
        assert cfg.trunk_depth == 8
        assert cfg.trunk_channels == 256  # 8 * luma_bins
        assert cfg.head_channels == 64  # 2 * luma_bins

    def test_scaled_reproduces_default_chain(self):
        assert NetConfig.scaled(32, 16) == NetConfig()

    def test_scaled_small(self):
        cfg = NetConfig.scaled(luma_bins=2, bin_size=4, trunk_depth=1)
        assert cfg.downscale_channels == (8, 16)
        assert cfg.trunk_channels == 16
        assert cfg.head_channels == 4

    def test_bin_size_layer_count_coupling(self):
        with pytest.raises(ValueError):
            NetConfig(bin_size=8, downscale_channels=(32, 64, 128, 256))

    def test_layer_plan_channel_chain(self):
        plan = _layer_plan(NetConfig())
        chain = [plan[0][0]] + [p[1] for p in plan]
        assert chain == [3, 32, 64, 128, 256] + [256] * 8 + [64]
        assert [p[2] for p in plan] == [2] * 4 + [1] * 9
        assert plan[-1][3] is False and plan[-1][4] is False  # head: no relu, no bias


class TestConv2d:
    def test_identity_kernel(self, rng):
        w = np.zeros((1, 1, 3, 3), np.float32)
        w[0, 0, 1, 1] = 1.0
        layer = ConvLayer(w, np.zeros(1, np.float32), stride=1, relu=False)
        x = rng.random((1, 5, 7)).astype(np.float32)
        assert np.allclose(conv2d(x, layer), x, atol=1e-7)

    def test_zero_weights_bias_relu(self, rng):
        layer = ConvLayer(
            np.zeros((2, 3, 3, 3), np.float32), np.array([0.2, -0.4], np.float32), stride=1, relu=True
        )
        out = conv2d(rng.random((3, 4, 4)).astype(np.float32), layer)
        assert np.allclose(out[0], 0.2)
        assert np.allclose(out[1], 0.0)  # relu clips the negative bias

    def test_stride2_hand_computed(self):
        # 3x3 input, zero padding 1, stride 2 -> 2x2; cross-correlation
        # with a plus-shaped kernel, values worked out by hand
        x = np.arange(1, 10, dtype=np.float32).reshape(1, 3, 3)
        w = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], np.float32).reshape(1, 1, 3, 3)
        layer = ConvLayer(w, np.zeros(1, np.float32), stride=2, relu=False)
        out = conv2d(x, layer)
        assert out.shape == (1, 2, 2)
        assert out[0].tolist() == [[7.0, 11.0], [19.0, 23.0]]

    def test_stride2_halves_exactly(self, rng):
        layer = ConvLayer(rng.standard_normal((4, 2, 3, 3)).astype(np.float32), None, stride=2, relu=True)
        out = conv2d(rng.random((2, 16, 24)).astype(np.float32), layer)
        assert out.shape == (4, 8, 12)

    def test_channel_mismatch(self, rng):
        layer = ConvLayer(rng.standard_normal((1, 2, 3, 3)).astype(np.float32), None, 1, False)
        with pytest.raises(ValueError):
            conv2d(rng.random((3, 4, 4)).astype(np.float32), layer)

    def test_odd_dims_with_stride2_round_up(self, rng):
        # the op itself takes any size (output ceil(h/2)); exact halving is
        # guaranteed by the pipeline's bin-alignment padding
        layer = ConvLayer(rng.standard_normal((1, 1, 3, 3)).astype(np.float32), None, 2, False)
        out = conv2d(rng.random((1, 5, 4)).astype(np.float32), layer)
        assert out.shape == (1, 3, 2)


class TestInitParams:
    def test_deterministic(self):
        cfg = NetConfig.scaled(4, 8)
        a = init_params(cfg, seed=5)
        b = init_params(cfg, seed=5)
        for la, lb in zip(a, b):
            assert np.array_equal(la.weight, lb.weight)
            assert (la.bias is None) == (lb.bias is None)

    def test_default_layer_count(self):
        params = init_params(NetConfig(), seed=0)
        assert len(params) == 4 + 8 + 1

    def test_head_has_no_bias_no_relu(self):
        params = init_params(NetConfig.scaled(2, 4, trunk_depth=1), seed=0)
        assert params[-1].bias is None
        assert params[-1].relu is False
        assert all(p.bias is not None and p.relu for p in params[:-1])

    def test_he_variance_first_layer(self):
        # first layer fan-in is 3 * 9 = 27 -> variance 2/27; use a config
        # with a wide first layer so the estimate sees >= 1e4 samples
        cfg = NetConfig(bin_size=2, luma_bins=2, downscale_channels=(600,), trunk_depth=0)
        params = init_params(cfg, seed=11)
        w = params[0].weight  # 600*3*9 = 16200 draws
        assert w.size >= 10_000
        assert np.var(w) == pytest.approx(2 / 27, rel=0.2)
        assert (params[0].bias == 0).all()


class TestForwardGrids:
    def test_grid_shapes_default_bin(self, rng):
        params = init_params(NetConfig.scaled(4, 16, trunk_depth=1), seed=0)
        guide = random_gray(rng, (64, 96))
        a, b = forward_grids(params, guide, guide, np.zeros_like(guide))
        assert a.shape == (4, 4, 6)
        assert b.shape == (4, 4, 6)

    @pytest.mark.slow
    def test_default_config_grid_shapes(self, rng):
        # full-size architecture: 256x256 -> two 16x16x32 grids,
        # 64x64 -> two 4x4x32 grids (four stride-2 halvings, d=32)
        params = init_params(NetConfig(), seed=0)
        guide = random_gray(rng, (256, 256))
        a, b = forward_grids(params, guide, guide, np.zeros_like(guide))
        assert a.shape == (32, 16, 16) and b.shape == (32, 16, 16)
        guide = random_gray(rng, (64, 64))
        a, b = forward_grids(params, guide, guide, np.zeros_like(guide))
        assert a.shape == (32, 4, 4) and b.shape == (32, 4, 4)

    def test_shape_chain_halves_per_downscale(self, rng):
        cfg = NetConfig.scaled(2, 8, trunk_depth=0)
        params = init_params(cfg, seed=1)
        x = np.stack([random_gray(rng, (32, 32))] * 3)
        for k, layer in enumerate(params[:-1], start=1):
            x = conv2d(x, layer)
            assert x.shape[1:] == (32 // 2**k, 32 // 2**k)

    def test_zero_params_give_zero_grids(self, rng):
        params = init_params(NetConfig.scaled(2, 4, trunk_depth=1), seed=0)
        for layer in params:
            layer.weight[:] = 0
        guide = random_gray(rng, (16, 16))
        a, b = forward_grids(params, guide, guide, np.zeros_like(guide))
        assert (a == 0).all() and (b == 0).all()

    def test_indivisible_dims_rejected(self, rng):
        params = init_params(NetConfig.scaled(2, 4, trunk_depth=1), seed=0)
        g = random_gray(rng, (18, 16))
        with pytest.raises(ValueError):
            forward_grids(params, g, g, np.zeros_like(g))


class TestReconstruct:
    @pytest.fixture()
    def params(self):
        return init_params(NetConfig.scaled(4, 16, trunk_depth=2), seed=3)

    def test_empty_mask_returns_distorted(self, params, rng):
        guide = random_gray(rng, (48, 48))
        distorted = random_gray(rng, (48, 48))
        result, _ = reconstruct(params, guide, distorted, np.zeros_like(guide))
        assert np.array_equal(result, distorted)

    def test_zero_params_blend(self, params, rng):
        for layer in params:
            layer.weight[:] = 0
            if layer.bias is not None:
                layer.bias[:] = 0
        guide = random_gray(rng, (32, 32))
        distorted = random_gray(rng, (32, 32))
        mask = random_mask(rng, (32, 32))
        result, net_out = reconstruct(params, guide, distorted, mask)
        assert (net_out == 0).all()
        assert np.array_equal(result, distorted * (1 - mask))

    def test_odd_sizes_round_trip(self, params, rng):
        guide = random_gray(rng, (65, 63))
        distorted = random_gray(rng, (65, 63))
        mask = random_mask(rng, (65, 63))
        result, net_out = reconstruct(params, guide, distorted, mask)
        assert result.shape == (65, 63)
        assert net_out.shape == (65, 63)
        assert np.isfinite(result).all()

    def test_unmasked_pixels_untouched_exactly(self, params, rng):
        guide = random_gray(rng, (40, 40))
        distorted = random_gray(rng, (40, 40))
        mask = random_mask(rng, (40, 40), p=0.4)
        result, _ = reconstruct(params, guide, distorted, mask)
        assert np.array_equal(result[mask == 0], distorted[mask == 0])

    def test_deterministic(self, params, rng):
        guide = random_gray(rng, (32, 32))
        distorted = random_gray(rng, (32, 32))
        mask = random_mask(rng, (32, 32))
        r1, n1 = reconstruct(params, guide, distorted, mask)
        r2, n2 = reconstruct(params, guide, distorted, mask)
        assert np.array_equal(r1, r2) and np.array_equal(n1, n2)


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        cfg = NetConfig.scaled(2, 4, trunk_depth=1)
        params = init_params(cfg, seed=8)
        meta = {"epoch": "12", "note": "hello"}
        extras = {"adam.layer00.weight.m": np.ones((8, 3, 9), np.float32)}
        save_checkpoint(tmp_path / "c.ckpt", params, cfg, meta, extras)
        ckpt = load_checkpoint(tmp_path / "c.ckpt")
        assert isinstance(ckpt, Checkpoint)
        assert ckpt.config == cfg
        assert ckpt.meta == meta
        assert len(ckpt.params) == len(params)
        for la, lb in zip(params, ckpt.params):
            assert np.array_equal(la.weight, lb.weight)
            if la.bias is None:
                assert lb.bias is None
            else:
                assert np.array_equal(la.bias, lb.bias)
            assert (la.stride, la.relu) == (lb.stride, lb.relu)
        assert np.array_equal(ckpt.extras["adam.layer00.weight.m"], extras["adam.layer00.weight.m"])

    def test_magic_enforced(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(b"NOTACKPT" + b"\x00" * 64)
        with pytest.raises(FormatError):
            load_checkpoint(path)

    def test_truncation_detected(self, tmp_path):
        cfg = NetConfig.scaled(2, 4, trunk_depth=0)
        save_checkpoint(tmp_path / "c.ckpt", init_params(cfg, 0), cfg)
        data = (tmp_path / "c.ckpt").read_bytes()
        (tmp_path / "t.ckpt").write_bytes(data[:-10])
        with pytest.raises(FormatError):
            load_checkpoint(tmp_path / "t.ckpt")

    def test_reconstruct_identical_after_reload(self, tmp_path, rng):
        cfg = NetConfig.scaled(4, 16, trunk_depth=2)
        params = init_params(cfg, seed=2)
        save_checkpoint(tmp_path / "c.ckpt", params, cfg)
        reloaded = load_checkpoint(tmp_path / "c.ckpt").params
        guide = random_gray(rng, (48, 32))
        distorted = random_gray(rng, (48, 32))
        mask = random_mask(rng, (48, 32))
        r1, _ = reconstruct(params, guide, distorted, mask)
        r2, _ = reconstruct(reloaded, guide, distorted, mask)
        assert np.array_equal(r1, r2)

    def test_bin_size_from_params(self):
        assert params_bin_size(init_params(NetConfig(), 0)) == 16
        assert params_bin_size(init_params(NetConfig.scaled(2, 4, trunk_depth=1), 0)) == 4
