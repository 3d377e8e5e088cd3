"""U-Net architecture, complexity accounting and persistence."""

import numpy as np
import pytest

from liveview import tensor as T
from liveview.network import (LiveViewNet, ModelMeta, NetworkConfig, opx_count,
                              param_count)


def closed_form_param_sum(V, weight_channels):
    """Independent layer-by-layer sum: 3x3 convs with bias, batchnorm
    gamma/beta on all but the head."""
    layers = [(3 * V, 16), (16, 32), (32, 64), (64, 128), (128, 128),
              (192, 64), (96, 32), (48, 16)]
    total = sum(9 * cin * cout + cout + 2 * cout for cin, cout in layers)
    head_out = 1 + weight_channels
    total += 9 * 16 * head_out + head_out
    return total


def test_param_count_exact_values():
    assert param_count(NetworkConfig(num_views=5)) == 393_846
    assert param_count(NetworkConfig(num_views=5, head_mode="compact_Vminus1")) == 393_701


def test_param_count_matches_closed_form():
    for V in (2, 4, 5, 10):
        for mode, wch in (("softmax_V", V), ("compact_Vminus1", V - 1)):
            cfg = NetworkConfig(num_views=V, head_mode=mode)
            assert param_count(cfg) == closed_form_param_sum(V, wch)


def test_param_count_matches_actual_arrays():
    net = LiveViewNet(NetworkConfig(num_views=5), seed=0)
    actual = sum(p.data.size for p in net.parameters().values())
    assert actual == 393_846


def test_opx_linear_in_planes():
    cfg = NetworkConfig(num_views=5)
    o16 = opx_count(cfg, 16, 96, 96)
    o32 = opx_count(cfg, 32, 96, 96)
    o64 = opx_count(cfg, 64, 96, 96)
    assert o32 == pytest.approx(2 * o16)
    assert o32 == pytest.approx(0.5 * o64)


def test_opx_near_reference_scale():
    """Per-pixel cost for V=5, D=64 lands within 2x of the 1.79M reference."""
    opx = opx_count(NetworkConfig(num_views=5), 64, 96, 96)
    assert 0.5 * 1.79e6 < opx < 2.0 * 1.79e6


def test_forward_shapes_and_ranges():
    net = LiveViewNet(NetworkConfig(num_views=5), seed=0)
    net.eval()
    x = np.random.default_rng(0).uniform(0, 1, (2, 15, 32, 32)).astype(np.float32)
    alpha, w = net(x)
    assert alpha.shape == (2, 32, 32)
    assert w.shape == (2, 5, 32, 32)
    assert np.all(alpha.data >= 0) and np.all(alpha.data <= 1)
    np.testing.assert_allclose(w.data.sum(axis=1), 1.0, atol=1e-5)


def test_forward_vminus1_head():
    net = LiveViewNet(NetworkConfig(num_views=5, head_mode="compact_Vminus1"), seed=0)
    net.eval()
    x = np.zeros((1, 15, 16, 16), dtype=np.float32)
    alpha, w = net(x)
    assert w.shape == (1, 4, 16, 16)


def test_forward_chw_input_squeezes():
    net = LiveViewNet(NetworkConfig(num_views=5), seed=0)
    net.eval()
    x = np.zeros((15, 16, 16), dtype=np.float32)
    alpha, w = net(x)
    assert alpha.shape == (16, 16)
    assert w.shape == (5, 16, 16)


def test_forward_rejects_wrong_channels():
    net = LiveViewNet(NetworkConfig(num_views=5), seed=0)
    with pytest.raises(ValueError):
        net(np.zeros((1, 12, 16, 16), dtype=np.float32))


def test_non_multiple_of_8_sizes():
    net = LiveViewNet(NetworkConfig(num_views=5), seed=0)
    net.eval()
    for hw in (17, 30, 41):
        alpha, _ = net(np.random.default_rng(1).uniform(0, 1, (1, 15, hw, hw)).astype(np.float32))
        assert alpha.shape == (1, hw, hw)


def test_batched_equals_single_eval_bitexact():
    net = LiveViewNet(NetworkConfig(num_views=5), seed=2)
    net.eval()
    rng = np.random.default_rng(3)
    x = rng.uniform(0, 1, (4, 15, 24, 24)).astype(np.float32)
    a_all, w_all = net(x)
    for i in range(4):
        a_one, w_one = net(x[i:i + 1])
        assert np.array_equal(a_all.data[i], a_one.data[0])
        assert np.array_equal(w_all.data[i], w_one.data[0])


def test_static_arch_output_layout():
    cfg = NetworkConfig(num_views=5, arch="static", static_planes=4)
    assert cfg.input_channels == 60
    assert cfg.head_channels == 24
    net = LiveViewNet(cfg, seed=0)
    net.eval()
    x = np.random.default_rng(4).uniform(0, 1, (60, 16, 16)).astype(np.float32)
    alpha, w = net(x)
    assert alpha.shape == (4, 16, 16)
    assert w.shape == (4, 5, 16, 16)
    np.testing.assert_allclose(w.data.sum(axis=1), 1.0, atol=1e-5)


def test_save_load_forward_bitexact(tmp_path):
    net = LiveViewNet(NetworkConfig(num_views=5), seed=5,
                      meta=ModelMeta(centering="input", trained_planes=16,
                                     z_near=2.0, z_far=10.0))
    # burn in some running statistics so persistence covers them
    net.train()
    net(np.random.default_rng(6).uniform(0, 1, (2, 15, 16, 16)).astype(np.float32))
    net.eval()
    x = np.random.default_rng(7).uniform(0, 1, (1, 15, 24, 24)).astype(np.float32)
    a0, w0 = net(x)
    path = tmp_path / "net.lvw"
    net.save(path)
    loaded = LiveViewNet.load(path)
    assert loaded.meta.centering == "input"
    assert loaded.meta.trained_planes == 16
    assert loaded.meta.z_near == pytest.approx(2.0)
    loaded.eval()
    a1, w1 = loaded(x)
    assert np.array_equal(a0.data, a1.data)
    assert np.array_equal(w0.data, w1.data)


def test_end_to_end_gradient_16x16():
    """64-bit finite-difference check through the whole network."""
    from conftest import grad_check

    net = LiveViewNet(NetworkConfig(num_views=3), seed=8, dtype=np.float64)
    net.train()
    rng = np.random.default_rng(9)
    x = rng.uniform(0, 1, (1, 9, 16, 16))
    ua = rng.standard_normal((1, 16, 16))
    uw = rng.standard_normal((1, 3, 16, 16))
    params = list(net.parameters().values())

    def fn():
        alpha, w = net(x)
        return T.add(T.tsum(T.mul(alpha, T.Tensor(ua))),
                     T.tsum(T.mul(w, T.Tensor(uw))))

    # tiny step: ReLU kink-crossing error scales with h, and float64 leaves
    # ample precision at this loss scale
    grad_check(fn, params, rtol=1e-3, h=1e-8)
