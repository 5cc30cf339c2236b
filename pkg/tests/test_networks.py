import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from chipmap import autodiff as ad
from chipmap.networks import (AttentionEncoder, DNAPredictor, DuelingQHead, dna_loss,
                              dueling_combine, fit_dna, r_squared)


def test_dna_output_range_and_shape():
    m = DNAPredictor(4, 3, hidden=8, head=(8, 4), seed=0)
    x = np.random.default_rng(0).normal(scale=10.0, size=(5, 10, 4))
    out = m.predict(x)
    assert out.shape == (5, 3)
    assert (out >= 0).all() and (out <= 0.15).all()
    with pytest.raises(ad.ShapeError):
        m.predict(x[:, :9])
    with pytest.raises(ad.ShapeError):
        m.predict(x[:, :, :3])


def test_dna_zero_weights_gives_midpoint():
    m = DNAPredictor(4, 2, hidden=8, head=(8, 4), seed=0)
    for p in m.parameters():
        p.data[...] = 0.0
    assert np.allclose(m.predict(np.ones((3, 10, 4))), 0.075)


def test_unidirectional_width():
    bi = DNAPredictor(6, 2)
    uni = DNAPredictor(6, 2, bidirectional=False)
    assert bi.out_width == 256 and uni.out_width == 128
    assert uni.params["head0.W"].shape == (128, 128)
    assert bi.params["head0.W"].shape == (128, 256)


def test_forget_bias_init():
    m = DNAPredictor(3, 2, hidden=5, head=(4,))
    b = m.params["lstm0f.b"].data
    assert b[5:10].tolist() == [1.0] * 5 and not b[:5].any() and not b[10:].any()


def test_dna_loss_examples():
    pred = np.array([[0.1, 0.0]])
    assert dna_loss(pred, pred).data == 0.0
    assert dna_loss(pred, np.zeros((1, 2)), lam=0.0).data == pytest.approx(0.01)
    w = ad.Parameter(np.array([1.0, 2.0]))
    diff = dna_loss(pred, np.zeros((1, 2)), [w], lam=1e-5).data - 0.01
    assert diff == pytest.approx(5e-5, abs=1e-15)


def test_state_dict_round_trip_includes_running_stats():
    a = DNAPredictor(3, 2, hidden=4, head=(4,), seed=1)
    a.forward(np.random.default_rng(0).normal(size=(6, 10, 3)), train=True)
    b = DNAPredictor(3, 2, hidden=4, head=(4,), seed=2)
    b.load_state_dict(a.state_dict())
    x = np.random.default_rng(1).normal(size=(2, 10, 3))
    assert np.array_equal(a.predict(x), b.predict(x))


def test_attention_single_token():
    enc = AttentionEncoder(5, d_model=16, heads=4, seed=0)
    tok = np.random.default_rng(0).normal(size=(1, 5))
    pooled, attn = enc.forward(tok)
    assert np.array_equal(attn, np.ones((1, 4, 1, 1)))
    p = enc.params
    e = tok @ p["in.W"].data.T + p["in.b"].data
    expected = (e @ p["v.W"].data.T) @ p["o.W"].data.T
    assert np.allclose(pooled.data, expected, atol=1e-12)


def test_attention_identical_tokens_uniform():
    enc = AttentionEncoder(5, d_model=16, heads=4, seed=0)
    _, attn = enc.forward(np.tile(np.arange(5.0), (6, 1)))
    assert np.allclose(attn, 1 / 6)


def test_attention_mask_excludes_padding():
    enc = AttentionEncoder(5, d_model=16, heads=4, seed=0)
    rng = np.random.default_rng(2)
    toks = rng.normal(size=(1, 4, 5))
    mask = np.array([[True, True, True, False]])
    pooled, attn = enc.forward(toks, mask)
    assert np.all(attn[..., 3] == 0.0)
    toks2 = toks.copy()
    toks2[0, 3] = 99.0
    assert np.allclose(enc.forward(toks2, mask)[0].data, pooled.data)
    alone, _ = enc.forward(toks[:, :3])
    assert np.allclose(alone.data, pooled.data)


@settings(max_examples=20)
@given(st.permutations(list(range(5))))
def test_attention_permutation_invariant(perm):
    enc = AttentionEncoder(4, d_model=8, heads=2, seed=3)
    toks = np.random.default_rng(3).normal(size=(5, 4))
    a = enc.forward(toks)[0].data
    b = enc.forward(toks[list(perm)])[0].data
    assert np.allclose(a, b, atol=1e-12)


def test_dueling_identity():
    q = dueling_combine(ad.Tensor(np.array([[2.0]])), ad.Tensor(np.array([[1.0, -1.0]])))
    assert q.data.tolist() == [[3.0, 1.0]]
    q = dueling_combine(ad.Tensor(np.array([[0.7]])), ad.Tensor(np.full((1, 4), 3.0)))
    assert np.allclose(q.data, 0.7)


@given(st.lists(st.floats(-10, 10), min_size=2, max_size=6), st.floats(-10, 10),
       st.floats(-10, 10))
def test_dueling_shift_invariance(adv, value, c):
    a = np.array([adv])
    q1 = dueling_combine(ad.Tensor(np.array([[value]])), ad.Tensor(a)).data
    q2 = dueling_combine(ad.Tensor(np.array([[value]])), ad.Tensor(a + c)).data
    assert np.allclose(q1, q2, atol=1e-9)


def test_noisy_with_zero_sigma_is_bit_exact():
    head = DuelingQHead(6, 5, hidden=16, noisy=True, seed=0)
    plain = DuelingQHead(6, 5, hidden=16, noisy=False, seed=0)
    for name in ("adv", "value"):
        head.params[f"{name}.sigma_W"].data[...] = 0.0
        head.params[f"{name}.sigma_b"].data[...] = 0.0
    x = np.random.default_rng(0).normal(size=(3, 6))
    noisy = head.forward(x, np.random.default_rng(9)).data
    assert np.array_equal(noisy, plain.forward(x).data)
    assert np.array_equal(noisy, head.forward(x, deterministic=True).data)
    with pytest.raises(ValueError):
        DuelingQHead(6, 5, noisy=True).forward(x)


def test_noisy_draws_differ():
    head = DuelingQHead(6, 5, hidden=16, noisy=True, seed=0)
    x = np.ones((1, 6))
    rng = np.random.default_rng(0)
    assert not np.array_equal(head.forward(x, rng).data, head.forward(x, rng).data)


def test_r_squared():
    y = np.array([[1.0], [2.0], [3.0]])
    assert r_squared(y, y) == 1.0
    assert r_squared(np.full_like(y, 2.0), y) == 0.0


def test_fit_dna_reduces_loss():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(256, 10, 2))
    Y = 0.075 + 0.05 * np.tanh(X[:, -1, :])
    m = DNAPredictor(2, 2, hidden=8, layers=1, head=(8,), dropout=0.0, seed=0)
    losses = fit_dna(m, X, Y, epochs=8, batch=32, lr=1e-2)
    assert losses[-1] < 0.5 * losses[0]
