import numpy as np
import pytest

from spikeav import errors, opcount
from spikeav.attention import Vca2m, causal_mask, masked_attention
from spikeav.neurons import LifLayer, LifParams
from spikeav.tensor import GradTape, Tensor, tsum


def rng():
    return np.random.default_rng(0)


def test_causal_mask_is_lower_triangular():
    assert causal_mask(3).tolist() == [[1, 0, 0], [1, 1, 0], [1, 1, 1]]
    m = causal_mask(28)
    assert np.array_equal(m, np.tril(m))
    assert m.diagonal().all()


def test_masked_attention_hand_recurrence():
    # T=2, D=1, all-ones Q/K/V, s=0.25: scores [[1,0],[1,1]], drive
    # [0.25, 0.5]; the 0.5-threshold neuron stays silent then fires
    ones = Tensor(np.ones((2, 1, 1)))
    sn = LifLayer(LifParams(tau=0.5, v_th=0.5))
    out = masked_attention(ones, ones, ones, Tensor(0.25), None, sn)
    assert out.data[:, 0, 0].tolist() == [0.0, 1.0]


def test_masked_attention_row_invariant_to_future_kv():
    rng_ = np.random.default_rng(1)
    q = Tensor((rng_.random((2, 1, 3)) < 0.5).astype(float))
    k = (rng_.random((2, 1, 3)) < 0.5).astype(float)
    v = (rng_.random((2, 1, 3)) < 0.5).astype(float)
    sn = LifLayer(LifParams(tau=0.5, v_th=0.5))
    base = masked_attention(q, Tensor(k), Tensor(v), Tensor(0.25), None,
                            sn).data
    k2, v2 = k.copy(), v.copy()
    k2[1] = 1 - k2[1]
    v2[1] = 1 - v2[1]
    out = masked_attention(q, Tensor(k2), Tensor(v2), Tensor(0.25), None,
                           sn).data
    assert np.array_equal(base[0], out[0])


def test_non_lower_triangular_mask_rejected():
    ones = Tensor(np.ones((3, 1, 2)))
    sn = LifLayer(LifParams(v_th=0.5))
    bad = np.ones((3, 3))
    with pytest.raises(errors.ContractError):
        masked_attention(ones, ones, ones, Tensor(0.25), bad, sn)
    with pytest.raises(errors.ContractError):
        masked_attention(ones, ones, ones, Tensor(0.25), np.tril(np.ones((4, 4))), sn)


def test_project_qkv_zero_cue_zero_query():
    m = Vca2m(3, 4, 2, rng())
    phi = Tensor(np.zeros((5, 1, 3)))
    psi = Tensor((np.random.default_rng(2).random((5, 1, 4)) < 0.5).astype(float))
    q, k, v = m.project_qkv(phi, psi)
    assert not q.data.any()


def test_project_qkv_outputs_binary_property():
    m = Vca2m(3, 4, 2, rng())
    r = np.random.default_rng(3)
    for _ in range(100):
        phi = Tensor((r.random((4, 2, 3)) < 0.5).astype(float))
        psi = Tensor((r.random((4, 2, 4)) < 0.5).astype(float))
        for t in m.project_qkv(phi, psi):
            assert np.all((t.data == 0) | (t.data == 1))


def test_project_qkv_matches_hand_composition():
    m = Vca2m(2, 2, 2, rng())
    r = np.random.default_rng(4)
    phi = Tensor((r.random((3, 1, 2)) < 0.5).astype(float))
    psi = Tensor((r.random((3, 1, 2)) < 0.5).astype(float))
    q, _, _ = m.project_qkv(phi, psi)
    q2 = m.sn_q(m.bn_q(m.w_q(phi)))
    assert np.array_equal(q.data, q2.data)


def test_alignment_error_on_t_mismatch():
    m = Vca2m(2, 2, 2, rng())
    with pytest.raises(errors.AlignmentError):
        m.project_qkv(Tensor(np.zeros((3, 1, 2))),
                      Tensor(np.zeros((4, 1, 2))))


def test_forward_residual_identity_when_attention_silent():
    m = Vca2m(3, 4, 2, rng())
    m.ff.w.data[:] = 0.0
    r = np.random.default_rng(5)
    psi = (r.random((4, 4)) < 0.5).astype(float)
    phi = (r.random((4, 3)) < 0.5).astype(float)
    m.eval()
    out = m(Tensor(phi), Tensor(psi))
    assert np.array_equal(out.data, psi)


def test_forward_values_in_0_1_2_property():
    m = Vca2m(3, 4, 2, rng())
    r = np.random.default_rng(6)
    for _ in range(50):
        phi = Tensor((r.random((4, 2, 3)) < 0.5).astype(float))
        psi = Tensor((r.random((4, 2, 4)) < 0.5).astype(float))
        out = m(phi, psi).data
        assert np.all(np.isin(out, (0.0, 1.0, 2.0)))


def test_forward_golden_composition():
    m = Vca2m(3, 4, 2, rng())
    r = np.random.default_rng(7)
    phi = Tensor((r.random((3, 1, 3)) < 0.5).astype(float))
    psi = Tensor((r.random((3, 1, 4)) < 0.5).astype(float))
    out = m(phi, psi).data
    q, k, v = m.project_qkv(phi, psi)
    attn = masked_attention(q, k, v, m.s, None, m.sn_attn)
    sa = m.sn_ff(m.bn_ff(m.ff(attn)))
    assert np.array_equal(out, psi.data + sa.data)


def test_attention_score_path_counts_only_additions():
    m = Vca2m(3, 4, 2, rng())
    r = np.random.default_rng(8)
    phi = Tensor((r.random((4, 1, 3)) < 0.7).astype(float))
    psi = Tensor((r.random((4, 1, 4)) < 0.7).astype(float))
    m.eval()
    counter = opcount.OpCounter()
    with opcount.counting(counter):
        m(phi, psi)
    qk_m, qk_a = counter.per_layer.get("vca2m.qk", (0, 0))
    v_m, v_a = counter.per_layer.get("vca2m.v", (0, 0))
    assert qk_m == 0 and v_m == 0
    sc_m, sc_a = counter.per_layer.get("vca2m.scale", (0, 0))
    assert sc_a == 0 and sc_m > 0     # only the scalar multiply costs mults


def test_scale_is_learnable():
    m = Vca2m(3, 4, 2, rng())
    assert float(m.s.data) == 0.25
    r = np.random.default_rng(9)
    phi = Tensor((r.random((4, 2, 3)) < 0.5).astype(float))
    psi = Tensor((r.random((4, 2, 4)) < 0.5).astype(float))
    m.set_relaxed(True)     # continuous activations so the scale gets grads
    with GradTape() as tape:
        out = m(phi, psi)
        grads = tape.backward(tsum(out * out))
    assert m.s in grads and abs(grads[m.s]) > 0
    before = float(m.s.data)
    m.s.data = m.s.data - 0.1 * grads[m.s]
    assert float(m.s.data) != before
