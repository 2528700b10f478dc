import numpy as np
import pytest

from gradcheck import finite_diff, rel_err
from spikeav import errors
from spikeav.layers import (BatchNorm, Conv2d, Linear, SpeechBlock,
                            SpeechBlockCfg, VisualBlock, VisualBlockCfg,
                            fold_bn_into_affine, maxpool2x2)
from spikeav.neurons import LifParams
from spikeav.tensor import GradTape, SpikeTensor, Tensor, tsum


def rng():
    return np.random.default_rng(0)


def test_conv_layer_zero_spikes_gives_bias():
    conv = Conv2d(2, 3, 3, rng())
    conv.b.data = np.array([1.0, -1.0, 0.5])
    out = conv(Tensor(np.zeros((4, 2, 6, 6))))
    assert np.allclose(out.data, conv.b.data[:, None, None])


def test_conv_layer_1x1_identity():
    conv = Conv2d(1, 1, 1, rng(), bias=False)
    conv.w.data = np.ones((1, 1, 1, 1))
    x = (np.random.default_rng(1).random((2, 1, 5, 5)) < 0.4).astype(float)
    out = conv(Tensor(x))
    assert np.array_equal(out.data, x)


def test_conv_layer_matches_sliding_window_oracle():
    conv = Conv2d(1, 2, 3, rng(), pad=0)
    x = (np.random.default_rng(2).random((1, 1, 4, 4)) < 0.5).astype(float)
    out = conv(Tensor(x)).data
    w, b = conv.w.data, conv.b.data
    for o in range(2):
        for y in range(2):
            for xx in range(2):
                acc = b[o]
                for kh in range(3):
                    for kw in range(3):
                        acc += x[0, 0, y + kh, xx + kw] * w[o, 0, kh, kw]
                assert abs(out[0, o, y, xx] - acc) <= 1e-12


def test_conv_rejects_even_kernel_and_bad_shapes():
    with pytest.raises(errors.ConfigError):
        Conv2d(1, 1, 4, rng())
    conv = Conv2d(2, 1, 3, rng())
    with pytest.raises(errors.DimensionError):
        conv(Tensor(np.zeros((1, 3, 6, 6))))


def test_batchnorm_train_constant_input_returns_shift():
    bn = BatchNorm(3, channel_axis=1)
    bn.shift.data = np.array([0.5, -1.0, 2.0])
    x = np.ones((8, 3, 4)) * np.array([5.0, -2.0, 7.0])[None, :, None]
    out = bn(Tensor(x)).data
    for c, val in enumerate(bn.shift.data):
        assert np.allclose(out[:, c], val, atol=1e-6)


def test_batchnorm_train_normalizes_to_scale_and_shift():
    bn = BatchNorm(2, channel_axis=1)
    bn.scale.data = np.array([2.0, 0.5])
    bn.shift.data = np.array([1.0, -1.0])
    x = np.random.default_rng(3).standard_normal((500, 2, 3)) * 4 + 2
    out = bn(Tensor(x)).data
    for c in range(2):
        assert out[:, c].mean() == pytest.approx(bn.shift.data[c], abs=1e-5)
        assert out[:, c].std() == pytest.approx(abs(bn.scale.data[c]),
                                                abs=1e-4)


def test_batchnorm_eval_uses_running_stats():
    bn = BatchNorm(1, channel_axis=2)
    bn.running_mean = np.array([1.0])
    bn.running_var = np.array([4.0])
    bn._seen_batch = True
    bn.eval()
    out = bn(Tensor(np.full((1, 1, 1), 3.0))).data
    assert out.ravel()[0] == pytest.approx((3 - 1) / np.sqrt(4 + 1e-5),
                                           abs=1e-6)


def test_batchnorm_eval_before_training_warns(caplog):
    import logging
    bn = BatchNorm(2, channel_axis=1, name="bn_test")
    bn.eval()
    with caplog.at_level(logging.WARNING):
        bn(Tensor(np.ones((2, 2))))
    assert any("init statistics" in r.message for r in caplog.records)


def test_batchnorm_eval_does_not_mutate_running_stats():
    bn = BatchNorm(2, channel_axis=1)
    bn(Tensor(np.random.default_rng(0).standard_normal((16, 2, 3))))
    rm, rv = bn.running_mean.copy(), bn.running_var.copy()
    bn.eval()
    bn(Tensor(np.random.default_rng(1).standard_normal((16, 2, 3))))
    assert np.array_equal(rm, bn.running_mean)
    assert np.array_equal(rv, bn.running_var)


def test_batchnorm_train_gradients_match_finite_differences():
    bn = BatchNorm(3, channel_axis=1)
    x = Tensor(np.random.default_rng(4).standard_normal((6, 3, 2)),
               requires_grad=True)
    g = np.random.default_rng(5).standard_normal((6, 3, 2))

    def forward():
        bn2 = BatchNorm(3, channel_axis=1)
        bn2.scale.data = bn.scale.data
        bn2.shift.data = bn.shift.data
        return float((bn2(Tensor(x.data)).data * g).sum())

    with GradTape() as tape:
        out = bn(x)
        grads = tape.backward(tsum(out * Tensor(g)))
    for t in (x, bn.scale, bn.shift):
        target = t.data if t is not x else x.data
        fd = finite_diff(forward, target)
        assert rel_err(grads[t], fd).max() <= 1e-3


def test_time_locality_of_affine_layers():
    lin = Linear(4, 3, rng())
    x = np.random.default_rng(6).standard_normal((5, 2, 4))
    base = lin(Tensor(x)).data.copy()
    x2 = x.copy()
    x2[3] += 7.0
    out = lin(Tensor(x2)).data
    mask = np.ones(5, dtype=bool)
    mask[3] = False
    assert np.array_equal(out[mask], base[mask])


def test_fold_bn_matches_unfolded_eval_forward():
    lin = Linear(4, 3, rng())
    bn = BatchNorm(3, channel_axis=2)
    x = np.random.default_rng(7).standard_normal((6, 2, 4))
    bn(lin(Tensor(x)))          # one train pass to move the running stats
    bn.eval()
    unfolded = bn(lin(Tensor(x))).data
    w2, b2 = fold_bn_into_affine(lin.w, lin.b, bn)
    folded = x @ w2 + b2
    assert np.abs(folded - unfolded).max() <= 1e-6


def test_fold_bn_conv_matches():
    conv = Conv2d(2, 3, 3, rng())
    bn = BatchNorm(3, channel_axis=1)
    x = (np.random.default_rng(8).random((4, 2, 6, 6)) < 0.3).astype(float)
    bn(conv(Tensor(x)))
    bn.eval()
    unfolded = bn(conv(Tensor(x))).data
    w2, b2 = fold_bn_into_affine(conv.w, conv.b, bn)
    from spikeav._kernels import conv2d_forward
    folded = conv2d_forward(x, w2, b2, 1, 1)
    assert np.abs(folded - unfolded).max() <= 1e-6


def test_maxpool_on_spikes_is_or_and_routes_gradient():
    x = Tensor(np.array([[[[1., 0., 0., 0.],
                           [0., 0., 0., 1.],
                           [0., 0., 1., 1.],
                           [0., 0., 1., 0.]]]]), requires_grad=True)
    with GradTape() as tape:
        out = maxpool2x2(x)
        grads = tape.backward(tsum(out * 2.0))
    assert out.data.tolist() == [[[[1.0, 1.0], [0.0, 1.0]]]]
    assert grads[x].sum() == pytest.approx(8.0)   # one route per output cell


def test_speech_block_zero_weights_zero_spikes():
    blk = SpeechBlock(SpeechBlockCfg(4, 4), LifParams(), rng())
    blk.linear.w.data[:] = 0.0
    blk.linear.b.data[:] = 0.0
    out = blk(Tensor(np.random.default_rng(9).standard_normal((5, 2, 4))))
    assert not out.data.any()


def test_speech_block_huge_bias_all_spikes():
    blk = SpeechBlock(SpeechBlockCfg(4, 4), LifParams(), rng())
    blk.linear.w.data[:] = 0.0
    blk.linear.b.data[:] = 100.0
    blk.bn.eval()       # train-mode BN would normalize the constant away
    out = blk(Tensor(np.random.default_rng(10).standard_normal((5, 2, 4))))
    assert out.data.all()


def test_speech_block_golden_composition():
    blk = SpeechBlock(SpeechBlockCfg(4, 4), LifParams(), rng(),
                      name="golden")
    x = np.random.default_rng(11).standard_normal((3, 1, 4))
    out = blk(Tensor(x)).data
    out2 = blk.sn(blk.bn(blk.linear(Tensor(x)))).data
    assert np.array_equal(out, out2)
    assert np.all((out == 0) | (out == 1))


def test_visual_block_runs_and_spikes_binary():
    cfg = VisualBlockCfg(2, 4, stride=2, pool=True)
    blk = VisualBlock(cfg, LifParams(), rng())
    x = (np.random.default_rng(12).random((3, 2, 2, 8, 8)) < 0.3).astype(float)
    out = blk(Tensor(x))
    assert out.data.shape == (3, 2, 4, 2, 2)
    assert np.all((out.data == 0) | (out.data == 1))


def test_visual_block_cfg_validation():
    with pytest.raises(errors.ConfigError):
        VisualBlockCfg(0, 4)
    with pytest.raises(errors.ConfigError):
        VisualBlockCfg(2, 4, kernel=2)
