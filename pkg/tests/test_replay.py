import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from chipmap.replay import (NotReadyError, PrioritizedReplay, SumTree, beta_schedule,
                            importance_weights)


def test_push_defaults_and_eviction():
    buf = PrioritizedReplay()
    buf.push("a")
    assert len(buf) == 1 and buf.priority(0) == pytest.approx(1.0)
    for i in range(20_000):
        buf.push(i)
    assert len(buf) == 20_000
    assert buf.items[0] == 19_999  # slot 0 now holds the 20,001st item


def test_root_matches_brute_force_after_mixed_ops():
    rng = np.random.default_rng(0)
    buf = PrioritizedReplay(capacity=500)
    for _ in range(5000):
        if len(buf) < 32 or rng.random() < 0.5:
            buf.push(None)
        else:
            idx = rng.integers(len(buf), size=8)
            buf.update_priorities(idx, rng.exponential(2.0, size=8))
    assert abs(buf.tree.total - buf.tree.leaves()[:len(buf)].sum()) < 1e-9


@given(st.lists(st.floats(0, 100), min_size=1, max_size=40))
def test_tree_prefix_sums(values):
    t = SumTree(len(values))
    for i, v in enumerate(values):
        t.set(i, v)
    assert t.total == pytest.approx(sum(values), abs=1e-9)
    for i in range(len(values) + 1):
        assert t.prefix_sum(i) == pytest.approx(sum(values[:i]), abs=1e-9)


@given(st.lists(st.floats(0.01, 10), min_size=1, max_size=30), st.floats(0, 1))
def test_find_lands_on_the_right_leaf(values, frac):
    t = SumTree(len(values))
    for i, v in enumerate(values):
        t.set(i, v)
    mass = frac * t.total * (1 - 1e-12)
    i = t.find(mass)
    assert t.prefix_sum(i) <= mass + 1e-9 and mass < t.prefix_sum(i) + values[i] + 1e-9


def test_tree_rejects_bad_values():
    t = SumTree(3)
    with pytest.raises(ValueError):
        t.set(0, -1.0)
    with pytest.raises(IndexError):
        t.set(3, 1.0)


def _freqs(buf, draws, batch=100, beta=0.4, seed=0):
    rng = np.random.default_rng(seed)
    counts = np.zeros(len(buf))
    for _ in range(draws // batch):
        _, idx, _ = buf.sample(batch, beta, rng)
        np.add.at(counts, idx, 1)
    return counts / counts.sum()


def test_sampling_follows_priorities():
    buf = PrioritizedReplay(capacity=4, alpha=1.0)
    buf.push("a")
    buf.push("b")
    buf.update_priorities([0, 1], [1.0 - 1e-6, 3.0 - 1e-6])
    f = _freqs(buf, 100_000, batch=2)
    assert abs(f[0] - 0.25) < 0.02 and abs(f[1] - 0.75) < 0.02


def test_alpha_zero_is_uniform():
    buf = PrioritizedReplay(capacity=10, alpha=0.0)
    for i in range(10):
        buf.push(i)
    buf.update_priorities(range(10), np.arange(10) * 5.0)
    f = _freqs(buf, 100_000, batch=10)
    counts = f * 100_000
    chi2 = ((counts - 10_000) ** 2 / 10_000).sum()
    assert chi2 < 21.67  # chi-square 0.99 quantile, 9 dof
    assert np.allclose(buf.probabilities(), 0.1)


def test_importance_weight_cases():
    assert np.array_equal(importance_weights([0.5, 0.5], 2, 1.0), [1.0, 1.0])
    assert np.allclose(importance_weights([0.25, 0.75], 2, 1.0), [1.0, 1 / 3])
    assert np.allclose(importance_weights([0.25, 0.75], 2, 0.5), [1.0, 3 ** -0.5])


def test_sample_not_ready():
    buf = PrioritizedReplay(capacity=10)
    buf.push(1)
    with pytest.raises(NotReadyError):
        buf.sample(2, 0.4, np.random.default_rng(0))


def test_update_sets_abs_td_plus_eps():
    buf = PrioritizedReplay(capacity=8, alpha=0.6)
    for i in range(8):
        buf.push(i)
    buf.update_priorities([2, 5], [-0.5, 2.0])
    assert buf.priority(2) == pytest.approx(0.5 + 1e-6)
    assert buf.priority(5) == pytest.approx(2.0 + 1e-6)
    assert buf.max_priority == pytest.approx(2.0 + 1e-6)
    buf.push(99)
    assert buf.priority(0) == pytest.approx(2.0 + 1e-6)


@settings(max_examples=20)
@given(st.integers(0, 10_000))
def test_state_restore(seed):
    rng = np.random.default_rng(seed)
    buf = PrioritizedReplay(capacity=16)
    for i in range(20):
        buf.push(i)
    buf.update_priorities(range(5), rng.random(5))
    other = PrioritizedReplay(capacity=16)
    other.restore(buf.state())
    a = buf.sample(4, 0.5, np.random.default_rng(1))
    b = other.sample(4, 0.5, np.random.default_rng(1))
    assert a[0] == b[0] and np.array_equal(a[2], b[2])


def test_beta_schedule():
    assert beta_schedule(0, 500) == 0.4
    assert beta_schedule(500, 500) == 1.0
    assert beta_schedule(250, 500) == pytest.approx(0.7)
