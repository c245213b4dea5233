import numpy as np
import pytest

from promptrestore import tensor as T
from promptrestore.attention import (AgentCrossAttention, AgentSelfAttention,
                                     AttnConfig, VanillaCrossAttention,
                                     VanillaSelfAttention, softmax_attention)
from promptrestore.gradcheck import check_gradients
from promptrestore.tensor import Tensor

from helpers import attention_oracle


def rng(seed=0):
    return np.random.default_rng(seed)


# ---------------------------------------------------------------------------
# softmax_attention


def test_single_key_returns_that_value():
    r = rng(1)
    q = Tensor(r.normal(size=(5, 4)))
    k = Tensor(r.normal(size=(1, 4)))
    v = Tensor(r.normal(size=(1, 6)))
    out = softmax_attention(q, k, v).data
    for row in out:
        np.testing.assert_allclose(row, v.data[0], atol=1e-12)


def test_zero_query_gives_value_mean():
    r = rng(2)
    k = Tensor(r.normal(size=(7, 4)))
    v = Tensor(r.normal(size=(7, 3)))
    out = softmax_attention(Tensor(np.zeros((2, 4))), k, v).data
    np.testing.assert_allclose(out, np.broadcast_to(v.data.mean(0), (2, 3)), atol=1e-12)


def test_two_by_two_hand_case():
    q = np.array([[1.0, 0.0], [0.0, 2.0]])
    k = np.array([[1.0, 1.0], [-1.0, 0.5]])
    v = np.array([[2.0, 0.0, 1.0], [0.0, -1.0, 3.0]])
    out = softmax_attention(Tensor(q), Tensor(k), Tensor(v)).data
    np.testing.assert_allclose(out, attention_oracle(q, k, v), atol=1e-12)


def test_dim_mismatch():
    with pytest.raises(T.ShapeError):
        softmax_attention(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 5))),
                          Tensor(np.zeros((4, 2))))


# ---------------------------------------------------------------------------
# agent self attention


def stage3_cfg():
    return AttnConfig(channels=192, heads=4, agent_h=12, agent_w=12,
                      height=32, width=32)


def test_mhasa_stage3_shape():
    m = AgentSelfAttention(stage3_cfg(), rng(3))
    out = m(Tensor(rng(4).normal(size=(32, 32, 192))))
    assert out.shape == (32, 32, 192)


def test_mhasa_attention_rows_stochastic():
    m = AgentSelfAttention(AttnConfig(64, 4, 4, 4, 8, 8), rng(5))
    m(Tensor(rng(6).normal(size=(8, 8, 64))))
    a1, a2 = m.last_attn
    np.testing.assert_allclose(a1.sum(-1), 1.0, atol=1e-9)
    np.testing.assert_allclose(a2.sum(-1), 1.0, atol=1e-9)


def test_mhasa_single_token_closed_form():
    # H = W = 1: both attentions collapse, output = out_proj(V + dwconv(V))
    cfg = AttnConfig(8, 2, 1, 1, 1, 1)
    m = AgentSelfAttention(cfg, rng(7))
    x = Tensor(rng(8).normal(size=(1, 1, 8)))
    out = m(x).data.reshape(8)

    xp = x.data.reshape(1, 8) + m.pos.data.reshape(1, 8)
    v = xp @ m.w_v.weight.data + m.w_v.bias.data
    dw_center = m.dwconv.weight.data[:, 0, 1, 1]          # only tap that sees data
    dwv = v.reshape(8) * dw_center + m.dwconv.bias.data
    expect = (v.reshape(8) + dwv) @ m.w_out.weight.data + m.w_out.bias.data
    np.testing.assert_allclose(out, expect, atol=1e-12)


def test_mhasa_agent_grid_clamped_with_warning():
    cfg = AttnConfig(16, 2, 4, 4, 4, 4)
    m = AgentSelfAttention(cfg, rng(9))
    with pytest.warns(UserWarning, match="clamped"):
        out = m(Tensor(rng(10).normal(size=(2, 2, 16))))
    assert out.shape == (2, 2, 16)


def test_mhasa_gradients():
    cfg = AttnConfig(8, 2, 2, 2, 4, 4)
    m = AgentSelfAttention(cfg, rng(11))
    x = Tensor(rng(12).normal(size=(4, 4, 8)), requires_grad=True)
    params = [x] + list(m.parameters())

    def loss():
        return T.sum_all(T.gelu(m(x)))

    check_gradients(loss, params, rtol=1e-4, max_per_tensor=3, rng=rng(13))


def test_mhasa_resized_position_encoding():
    cfg = AttnConfig(8, 2, 2, 2, 8, 8)
    m = AgentSelfAttention(cfg, rng(14))
    out = m(Tensor(rng(15).normal(size=(4, 4, 8))))   # decoder sees half size
    assert out.shape == (4, 4, 8)


# ---------------------------------------------------------------------------
# agent cross attention


def table4_cfg():
    return AttnConfig(channels=384, heads=8, agent_h=12, agent_w=12,
                      height=16, width=16, text_len=20)


def test_mhaca_table4_shape():
    m = AgentCrossAttention(table4_cfg(), rng(16))
    out = m(Tensor(rng(17).normal(size=(16, 16, 384))),
            Tensor(rng(18).normal(size=(20, 384))))
    assert out.shape == (16, 16, 384)


def test_mhaca_zero_value_path_passes_image_through():
    cfg = AttnConfig(16, 2, 2, 2, 4, 4, text_len=5)
    m = AgentCrossAttention(cfg, rng(19))
    m.w_v.weight.data = np.zeros_like(m.w_v.weight.data)
    m.w_v.bias.data = np.zeros_like(m.w_v.bias.data)
    m.pos_txt.data = np.zeros_like(m.pos_txt.data)
    f_img = Tensor(rng(20).normal(size=(4, 4, 16)))
    out = m(f_img, Tensor(rng(21).normal(size=(5, 16))))
    np.testing.assert_array_equal(out.data, f_img.data)


def test_mhaca_single_text_token_closed_form():
    cfg = AttnConfig(8, 2, 2, 2, 4, 4, text_len=1)
    m = AgentCrossAttention(cfg, rng(22))
    f_img = Tensor(rng(23).normal(size=(4, 4, 8)))
    f_txt = Tensor(rng(24).normal(size=(1, 8)))
    out = m(f_img, f_txt).data
    # one key: every attention row is [1], so output = broadcast(v0) + image
    v0 = f_txt.data @ m.w_v.weight.data + m.w_v.bias.data + m.pos_txt.data
    np.testing.assert_allclose(out, f_img.data + v0.reshape(1, 1, 8), atol=1e-12)


def test_mhaca_text_length_mismatch():
    m = AgentCrossAttention(AttnConfig(16, 2, 2, 2, 4, 4, text_len=5), rng(25))
    with pytest.raises(T.ShapeError):
        m(Tensor(np.zeros((4, 4, 16))), Tensor(np.zeros((7, 16))))


def test_mhaca_rows_stochastic():
    m = AgentCrossAttention(AttnConfig(16, 2, 2, 2, 4, 4, text_len=6), rng(26))
    m(Tensor(rng(27).normal(size=(4, 4, 16))), Tensor(rng(28).normal(size=(6, 16))))
    a1, a2 = m.last_attn
    np.testing.assert_allclose(a1.sum(-1), 1.0, atol=1e-9)
    np.testing.assert_allclose(a2.sum(-1), 1.0, atol=1e-9)


def test_mhaca_gradients():
    cfg = AttnConfig(8, 2, 2, 2, 4, 4, text_len=3)
    m = AgentCrossAttention(cfg, rng(29))
    f_img = Tensor(rng(30).normal(size=(4, 4, 8)), requires_grad=True)
    f_txt = Tensor(rng(31).normal(size=(3, 8)), requires_grad=True)
    params = [f_img, f_txt] + list(m.parameters())

    def loss():
        return T.sum_all(T.sigmoid(m(f_img, f_txt)))

    check_gradients(loss, params, rtol=1e-4, max_per_tensor=3, rng=rng(32))


# ---------------------------------------------------------------------------
# vanilla baselines


def test_mhsa_shape_preserved():
    m = VanillaSelfAttention(stage3_cfg(), rng(33))
    out = m(Tensor(rng(34).normal(size=(32, 32, 192))))
    assert out.shape == (32, 32, 192)


def test_mhsa_reduces_to_softmax_attention_with_identity_projections():
    cfg = AttnConfig(6, 1, 1, 1, 3, 2)
    m = VanillaSelfAttention(cfg, rng(35))
    eye = np.eye(6)
    for lin in (m.w_q, m.w_k, m.w_v, m.w_out):
        lin.weight.data = eye.copy()
        lin.bias.data = np.zeros(6)
    x = rng(36).normal(size=(3, 2, 6))
    out = m(Tensor(x)).data.reshape(6, 6)
    tokens = x.reshape(6, 6)
    np.testing.assert_allclose(out, attention_oracle(tokens, tokens, tokens),
                               atol=1e-12)


def test_vanilla_cross_shape_and_residual():
    cfg = AttnConfig(16, 2, 2, 2, 4, 4, text_len=5)
    m = VanillaCrossAttention(cfg, rng(37))
    f_img = Tensor(rng(38).normal(size=(4, 4, 16)))
    out = m(f_img, Tensor(rng(39).normal(size=(5, 16))))
    assert out.shape == (4, 4, 16)
