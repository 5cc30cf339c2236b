import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from chipmap import autodiff as ad
from chipmap.checkpoint import CheckpointError, load_checkpoint, match_arrays, save_checkpoint

from gradcases import CASES
from helpers import grad_check, numeric_grad


@pytest.mark.parametrize("name", sorted(CASES))
@pytest.mark.parametrize("seed", [0, 1])
def test_gradients_match_finite_differences(name, seed):
    fn, params = CASES[name](seed)
    assert grad_check(fn, params, h=1e-5, rng=np.random.default_rng(seed)) < 1e-4


def test_linear_identity_and_bias_grad():
    x = ad.Parameter(np.arange(6.0).reshape(2, 3))
    W = ad.Parameter(np.eye(3))
    b = ad.Parameter(np.zeros(3))
    y = ad.linear(x, W, b)
    assert np.array_equal(y.data, x.data)
    y.sum().backward()
    assert np.array_equal(b.grad, [2.0, 2.0, 2.0])  # summed over the batch
    with pytest.raises(ad.ShapeError):
        ad.linear(x, ad.Parameter(np.ones((3, 4))))


def test_linear_tight_tolerance():
    rng = np.random.default_rng(4)
    x, W, b = (ad.Parameter(rng.normal(size=s)) for s in [(4, 3), (2, 3), (2,)])
    assert grad_check(lambda: (ad.linear(x, W, b) ** 2).sum(), [x, W, b]) < 1e-6


def test_activation_values():
    assert ad.sigmoid(ad.Tensor(0.0)).data == 0.5
    x = ad.Parameter(np.array([-2.0]))
    y = ad.relu(x)
    y.sum().backward()
    assert y.data[0] == 0.0 and x.grad[0] == 0.0
    t = ad.Parameter(np.array([0.0]))
    ad.tanh(t).sum().backward()
    assert t.grad[0] == 1.0
    assert numeric_grad(lambda: ad.tanh(t).sum(), t, (0,)) == pytest.approx(1.0, abs=1e-9)
    assert ad.sigmoid(ad.Tensor(np.array([-800.0, 800.0]))).data.tolist() == [0.0, 1.0]
    with pytest.raises(ValueError):
        ad.activation("gelu", x)


def test_lstm_zero_and_saturated_forget():
    B, d, h = 2, 3, 4
    zeros = ad.Tensor(np.zeros((B, h)))
    hh, cc = ad.lstm_cell(ad.Tensor(np.zeros((B, d))), zeros, zeros,
                          ad.Tensor(np.zeros((4 * h, d + h))), ad.Tensor(np.zeros(4 * h)))
    assert not hh.data.any() and not cc.data.any()
    rng = np.random.default_rng(0)
    b = np.zeros(4 * h)
    b[h:2 * h] = 50.0  # forget gate open
    b[0:h] = -50.0  # input gate closed
    c_prev = rng.normal(size=(B, h))
    _, c = ad.lstm_cell(ad.Tensor(rng.normal(size=(B, d))), ad.Tensor(rng.normal(size=(B, h))),
                        ad.Tensor(c_prev), ad.Tensor(rng.normal(size=(4 * h, d + h)) * 0.1),
                        ad.Tensor(b))
    assert np.allclose(c.data, c_prev, atol=1e-12)
    with pytest.raises(ad.ShapeError):
        ad.lstm_cell(ad.Tensor(np.zeros((B, d))), zeros, zeros,
                     ad.Tensor(np.zeros((4 * h, d))), ad.Tensor(np.zeros(4 * h)))


def test_batchnorm_cases():
    g, b = ad.Parameter(np.ones(3)), ad.Parameter(np.array([0.5, -1.0, 2.0]))
    const = ad.Tensor(np.full((4, 3), 7.0))
    out = ad.batchnorm(const, g, b, ad.RunningStats(3), train=True)
    assert np.array_equal(out.data, np.tile(b.data, (4, 1)))
    rng = np.random.default_rng(1)
    x = rng.normal(size=(200, 3))
    x = (x - x.mean(0)) / x.std(0)
    y = ad.batchnorm(ad.Tensor(x), ad.Tensor(np.ones(3)), ad.Tensor(np.zeros(3)),
                     ad.RunningStats(3), train=True)
    assert np.allclose(y.data, x, atol=1e-4)
    with pytest.raises(ValueError):
        ad.batchnorm(ad.Tensor(np.ones((1, 3))), g, b, ad.RunningStats(3), train=True)
    stats = ad.RunningStats(3)
    ad.batchnorm(ad.Tensor(x + 2.0), g, b, stats, train=True)
    assert np.allclose(stats.mean, 0.1 * 2.0)  # momentum 0.9 from zero


def test_softmax_rows():
    assert ad.softmax_rows(ad.Tensor(np.zeros((1, 2)))).data.tolist() == [[0.5, 0.5]]
    big = ad.softmax_rows(ad.Tensor(np.array([[1000.0, 0.0]]))).data
    assert np.isfinite(big).all() and big[0, 0] == pytest.approx(1.0) and big[0, 1] < 1e-300


@given(arrays(np.float64, (3, 4), elements=st.floats(-50, 50)), st.floats(-100, 100))
def test_softmax_shift_invariant(x, c):
    a = ad.softmax_rows(ad.Tensor(x)).data
    b = ad.softmax_rows(ad.Tensor(x + c)).data
    assert np.allclose(a, b, atol=1e-12)
    assert np.allclose(a.sum(axis=1), 1.0)


def test_huber_and_dropout():
    h = ad.huber(ad.Tensor(np.array([0.5, -3.0])), 1.0).data
    assert h.tolist() == [0.125, 2.5]
    x = ad.Tensor(np.ones((1000,)))
    assert ad.dropout(x, 0.2, np.random.default_rng(0), train=False) is x
    y = ad.dropout(x, 0.2, np.random.default_rng(0), train=True).data
    assert set(np.unique(y)) <= {0.0, 1.25}


def test_getitem_accumulates_repeated_indices():
    x = ad.Parameter(np.arange(4.0))
    ad.getitem(x, np.array([1, 1, 3])).sum().backward()
    assert x.grad.tolist() == [0.0, 2.0, 0.0, 1.0]


def test_shared_subexpression_accumulates():
    x = ad.Parameter(np.array([3.0]))
    y = x * x + x
    y.sum().backward()
    assert x.grad[0] == 7.0


def test_nonfinite_forward_raises():
    with pytest.raises(ad.NonFiniteError), np.errstate(invalid="ignore"):
        ad.log(ad.Tensor(np.array([-1.0])))


def test_no_grad_builds_no_tape():
    x = ad.Parameter(np.ones(2))
    with ad.no_grad():
        y = x * 2.0
    assert not y.requires_grad


def test_deep_chain_backward_is_iterative():
    x = ad.Parameter(np.array([1.0]))
    y = x
    for _ in range(5000):
        y = y + 0.0
    y.sum().backward()
    assert x.grad[0] == 1.0


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    sections = {"online": {"a": rng.normal(size=(3, 2)), "b": np.arange(4.0)},
                "opt": {"t": np.array([7.0])}}
    save_checkpoint(tmp_path / "c.zip", sections, {"episode": 3})
    back, meta = load_checkpoint(tmp_path / "c.zip")
    assert meta["episode"] == 3
    for sec, arrs in sections.items():
        for k, v in arrs.items():
            assert np.array_equal(back[sec][k], v)
    save_checkpoint(tmp_path / "d.zip", sections, {"episode": 3})
    assert (tmp_path / "c.zip").read_bytes() == (tmp_path / "d.zip").read_bytes()
    with pytest.raises(CheckpointError):
        match_arrays({"a": np.zeros(2)}, {"a": np.zeros(3)}, "online")
    with pytest.raises(CheckpointError):
        match_arrays({"a": np.zeros(2)}, {"b": np.zeros(2)}, "online")
