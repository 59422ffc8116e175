import numpy as np
import pytest

from bevintent.net import (AdamState, CheckpointError, IntentNet, NetworkConfig, NetworkConfigError,
                           ShapeError, Tensor, TrainingError, adam_step, add, add_n, concat,
                           conv2d, load_checkpoint, parameter, relu, reshape, save_checkpoint,
                           scale, softmax, take_rows, to_channels_last, total)
from gradcheck import TOL, check


def _mul_const(t, r):
    from bevintent.net.tensor import _result, _accumulate

    def backward(g):
        _accumulate(t, g * r)

    return _result(t.data * r, (t,), backward)


def p64(rng, *shape):
    return parameter(rng.normal(size=shape))


def test_conv_identity_kernel():
    rng = np.random.default_rng(0)
    x = Tensor(rng.normal(size=(2, 5, 6, 3)))
    w = np.zeros((1, 1, 3, 3))
    w[0, 0] = np.eye(3)
    y = conv2d(x, Tensor(w))
    assert np.array_equal(y.data, x.data)


def test_conv_all_ones():
    x = Tensor(np.ones((1, 5, 5, 1)))
    y = conv2d(x, Tensor(np.ones((3, 3, 1, 1))))
    assert y.shape == (1, 3, 3, 1)
    assert (y.data == 9).all()


def test_conv_matches_direct_loop():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(2, 7, 6, 3))
    w = rng.normal(size=(3, 3, 3, 4))
    b = rng.normal(size=4)
    y = conv2d(Tensor(x), Tensor(w), Tensor(b), stride=2, padding=1).data
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    ref = np.zeros_like(y)
    for n in range(2):
        for i in range(y.shape[1]):
            for j in range(y.shape[2]):
                patch = xp[n, 2 * i:2 * i + 3, 2 * j:2 * j + 3, :]
                ref[n, i, j] = np.tensordot(patch, w, axes=3) + b
    assert np.allclose(y, ref, atol=1e-12)


def test_conv_shape_errors():
    with pytest.raises(ShapeError, match="3 channels"):
        conv2d(Tensor(np.zeros((1, 4, 4, 3))), Tensor(np.zeros((3, 3, 2, 1))))
    with pytest.raises(ShapeError):
        conv2d(Tensor(np.zeros((1, 2, 2, 1))), Tensor(np.zeros((3, 3, 1, 1))))


@pytest.mark.parametrize("stride,padding", [(1, 0), (1, 1), (2, 1), (2, 0)])
def test_conv_gradients(stride, padding):
    rng = np.random.default_rng(stride * 10 + padding)
    x, w, b = p64(rng, 2, 6, 5, 3), p64(rng, 3, 3, 3, 4), p64(rng, 4)
    probe = rng.normal(size=conv2d(x, w, b, stride, padding).shape)
    err = check(lambda: total(_mul_const(conv2d(x, w, b, stride, padding), probe)), [x, w, b])
    assert err < TOL


def test_relu_gradient():
    rng = np.random.default_rng(2)
    d = rng.normal(size=(3, 4))
    d[np.abs(d) < 1e-2] = 0.5  # keep away from the kink
    x = parameter(d)
    probe = rng.normal(size=(3, 4))
    assert check(lambda: total(_mul_const(relu(x), probe)), [x]) < TOL


def test_add_concat_reshape_scale_gradients():
    rng = np.random.default_rng(3)
    a, b, c = p64(rng, 2, 3, 4), p64(rng, 2, 3, 4), p64(rng, 2, 3, 2)
    probe = rng.normal(size=(2, 3, 6))

    def build():
        s = add(a, scale(b, -1.7))
        cat = concat([s, c], axis=-1)
        return total(_mul_const(reshape(cat, (2, 3, 6)), probe))

    assert check(build, [a, b, c]) < TOL


def test_add_n_gradient():
    rng = np.random.default_rng(4)
    ts = [p64(rng, 3) for _ in range(3)]
    probe = rng.normal(size=3)
    assert check(lambda: total(_mul_const(add_n(ts), probe)), ts) < TOL


def test_softmax_gradient_and_normalisation():
    rng = np.random.default_rng(5)
    x = p64(rng, 4, 8)
    s = softmax(x).data
    assert np.allclose(s.sum(-1), 1.0, atol=1e-12)
    probe = rng.normal(size=(4, 8))
    assert check(lambda: total(_mul_const(softmax(x), probe)), [x]) < TOL


def test_take_rows_gradient_with_repeats():
    rng = np.random.default_rng(8)
    x = p64(rng, 6, 3)
    idx = np.array([4, 0, 4, 2])
    assert np.array_equal(take_rows(x, idx).data, x.data[idx])
    probe = rng.normal(size=(4, 3))
    assert check(lambda: total(_mul_const(take_rows(x, idx), probe)), [x]) < TOL


def test_shared_input_accumulates():
    x = parameter(np.array([1.5, -2.0]))
    y = total(add(x, x))
    y.backward()
    assert np.array_equal(x.grad, [2.0, 2.0])


def tiny_cfg(**kw):
    base = dict(lidar_in=3, map_in=2, lidar_widths=(2, 3, 3), map_widths=(2, 2, 3),
                stage_blocks=(1, 0, 1), fusion_width=4, fusion_blocks=1, head_width=3,
                embed_width=2, t_future=2)
    base.update(kw)
    return NetworkConfig(**base)


def jittered(cfg, seed):
    """float64 net with random biases, so no ReLU input sits exactly on the kink."""
    net = IntentNet(cfg, seed=seed, dtype=np.float64)
    rng = np.random.default_rng(seed + 100)
    for name, p in net.params.items():
        if name.endswith(".b"):
            p.data = p.data + rng.normal(0.0, 0.1, p.shape)
    return net


def test_output_shapes_and_stride():
    cfg = tiny_cfg()
    net = IntentNet(cfg, seed=0)
    out = net(np.zeros((2, 24, 16, 3)), np.zeros((2, 24, 16, 2)))
    assert out.det_logits.shape == (2, 3, 2, 5, 2)
    assert out.intent_logits.shape == (2, 3, 2, 8)
    assert out.reg.shape == (2, 3, 2, 5, 14)
    p = out.vehicle_prob()
    assert ((p > 0) & (p < 1)).all()
    assert np.allclose(out.intent_prob().sum(-1), 1.0, atol=1e-6)


def test_default_config_shapes():
    cfg = NetworkConfig()
    assert cfg.reg_width == 30 and np.prod(cfg.strides) == 8
    net = IntentNet(NetworkConfig(lidar_in=290, map_in=17, lidar_widths=(2, 2, 2), map_widths=(2, 2, 2),
                                  stage_blocks=(0, 0, 0), fusion_width=2, fusion_blocks=0,
                                  head_width=2, embed_width=2))
    out = net(np.zeros((1, 720, 400, 290), np.float32), np.zeros((1, 720, 400, 17), np.float32))
    assert out.det_logits.shape[1:] == (90, 50, 5, 2)
    assert out.intent_logits.shape[1:] == (90, 50, 8)
    assert out.reg.shape[1:] == (90, 50, 5, 30)


def test_bad_configs():
    with pytest.raises(NetworkConfigError):
        tiny_cfg(strides=(2, 2, 1))
    with pytest.raises(NetworkConfigError):
        tiny_cfg(head_width=0)
    net = IntentNet(tiny_cfg())
    with pytest.raises(NetworkConfigError, match="divisible"):
        net(np.zeros((1, 20, 16, 3)), np.zeros((1, 20, 16, 2)))
    with pytest.raises(NetworkConfigError):
        net(np.zeros((1, 24, 16, 4)), np.zeros((1, 24, 16, 2)))


def test_zero_inputs_zero_final_params_give_zero_features():
    net = IntentNet(tiny_cfg(fusion_blocks=0), seed=1, dtype=np.float64)
    for name in ("fusion.in.w", "fusion.in.b"):
        net.params[name].data[...] = 0
    feats, _, _ = net.backbone(np.zeros((1, 16, 16, 3)), np.zeros((1, 16, 16, 2)))
    assert not feats.data.any()


def test_stream_isolation():
    rng = np.random.default_rng(0)
    net = IntentNet(tiny_cfg(), seed=2, dtype=np.float64)
    L, M = rng.normal(size=(1, 16, 16, 3)), rng.normal(size=(1, 16, 16, 2))
    before = net(L, M)
    net.params["map.s0.down.w"].data[0, 0, 0, 0] += 0.5
    after = net(L, M)
    assert np.array_equal(before.extras["lidar_features"].data, after.extras["lidar_features"].data)
    assert not np.array_equal(before.extras["map_features"].data, after.extras["map_features"].data)
    assert not np.array_equal(before.reg.data, after.reg.data)


def test_regression_loss_reaches_intent_branch():
    rng = np.random.default_rng(0)
    net = IntentNet(tiny_cfg(), seed=3, dtype=np.float64)
    out = net(rng.normal(size=(1, 16, 16, 3)), rng.normal(size=(1, 16, 16, 2)))
    total(_mul_const(out.reg, rng.normal(size=out.reg.shape))).backward()
    assert np.abs(net.params["int.1.w"].grad).sum() > 0
    assert np.abs(net.params["embed.w"].grad).sum() > 0
    assert net.params["det.1.w"].grad is None


def test_header_gradient_check():
    rng = np.random.default_rng(6)
    net = jittered(tiny_cfg(), 4)
    feats = parameter(rng.normal(size=(1, 2, 2, 4)))
    pr = [rng.normal(size=s) for s in ((1, 2, 2, 5, 2), (1, 2, 2, 8), (1, 2, 2, 5, 14))]

    def build():
        o = net.header(feats)
        return add_n([total(_mul_const(o.det_logits, pr[0])), total(_mul_const(o.intent_logits, pr[1])),
                      total(_mul_const(o.reg, pr[2]))])

    head = [p for n, p in net.params.items() if n.split(".")[0] in ("det", "int", "embed", "reg")]
    assert check(build, [feats] + head, samples=12) < TOL


def test_full_network_gradient_check():
    rng = np.random.default_rng(7)
    net = jittered(tiny_cfg(), 5)
    L, M = rng.normal(size=(2, 16, 16, 3)), rng.normal(size=(2, 16, 16, 2))
    probe = rng.normal(size=(2, 2, 2, 5, 14))
    build = lambda: total(_mul_const(net(L, M).reg, probe))  # noqa: E731
    assert check(build, list(net.params.values()), samples=4) < TOL


def test_forward_deterministic():
    rng = np.random.default_rng(0)
    L, M = rng.normal(size=(1, 16, 16, 3)), rng.normal(size=(1, 16, 16, 2))
    a = IntentNet(tiny_cfg(), seed=9)(L, M)
    b = IntentNet(tiny_cfg(), seed=9)(L, M)
    assert np.array_equal(a.reg.data, b.reg.data)
    assert np.array_equal(a.det_logits.data, b.det_logits.data)


def test_adam_first_step():
    p = parameter(np.array([0.0]))
    p.grad = np.array([1.0])
    adam_step({"p": p}, AdamState(), lr=0.1)
    assert p.data[0] == pytest.approx(-0.1, abs=1e-6)


def test_adam_zero_gradient_no_change():
    p = parameter(np.array([0.3, -1.0]))
    p.grad = np.zeros(2)
    adam_step({"p": p}, AdamState(), lr=0.1, weight_decay=0.0)
    assert np.array_equal(p.data, [0.3, -1.0])


def test_adam_coupled_weight_decay():
    p = parameter(np.array([2.0]))
    p.grad = np.array([0.0])
    adam_step({"p": p}, AdamState(), lr=0.1, weight_decay=0.5)
    # decay enters the gradient, so the first step is still -lr * sign
    assert p.data[0] == pytest.approx(1.9, abs=1e-6)


def test_adam_rejects_non_finite():
    p = parameter(np.array([1.0]))
    p.grad = np.array([np.nan])
    with pytest.raises(TrainingError, match="'layer.w'"):
        adam_step({"layer.w": p}, AdamState(), lr=0.1)


def test_adam_deterministic_trajectory():
    def run():
        net = IntentNet(tiny_cfg(), seed=1)
        state = AdamState()
        rng = np.random.default_rng(0)
        L, M = rng.normal(size=(1, 16, 16, 3)), rng.normal(size=(1, 16, 16, 2))
        for _ in range(3):
            net.zero_grad()
            total(net(L, M).reg).backward()
            adam_step(net.params, state, lr=1e-3, weight_decay=1e-4)
        return {k: p.data.copy() for k, p in net.params.items()}

    a, b = run(), run()
    assert all(np.array_equal(a[k], b[k]) for k in a)


def test_checkpoint_round_trip(tmp_path):
    net = IntentNet(tiny_cfg(), seed=3)
    state = AdamState()
    net.zero_grad()
    rng = np.random.default_rng(0)
    total(net(rng.normal(size=(1, 16, 16, 3)), rng.normal(size=(1, 16, 16, 2))).reg).backward()
    adam_step(net.params, state, lr=1e-3)
    save_checkpoint(tmp_path / "c.npz", net, state, {"seed": 7})
    net2, state2, meta = load_checkpoint(tmp_path / "c.npz")
    assert meta["seed"] == 7 and state2.step == 1
    for k in net.params:
        assert np.array_equal(net.params[k].data, net2.params[k].data)
        assert np.array_equal(state.m[k], state2.m[k])
    with pytest.raises(CheckpointError, match="fusion.in.w"):
        load_checkpoint(tmp_path / "c.npz", tiny_cfg(fusion_width=5))


def test_channels_last():
    x = np.arange(24).reshape(2, 3, 4)
    y = to_channels_last(x)
    assert y.shape == (1, 3, 4, 2) and y[0, 1, 2, 1] == x[1, 1, 2]
