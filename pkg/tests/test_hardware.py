import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from chipmap.hardware import (CalibrationTable, TopologyError, build_topology, chips_adjacent,
                              intra_chip_edges, local_path, read_descriptor, write_descriptor)


def test_ring4_defaults():
    hw = build_topology("ring4", k=12)
    assert hw.n_physical == 48
    assert hw.chip_edges == [(0, 1), (0, 3), (1, 2), (2, 3)]
    assert hw.interchip_latency == 50.0
    assert hw.calib.T1 == 100.0 and hw.calib.T2 == 50.0
    assert chips_adjacent(hw, 0, 1) and not chips_adjacent(hw, 0, 2)
    assert hw.chip_distance(0, 2) == 2


def test_complete6_and_hex6():
    hw = build_topology("complete6", k=4)
    assert len(hw.chip_edges) == 15
    assert all(chips_adjacent(hw, i, j) for i in range(6) for j in range(6) if i != j)
    assert not chips_adjacent(hw, 3, 3)
    hex6 = build_topology("hex6", k=4)
    assert len(hex6.chip_edges) == 9 and hex6.chip_diameter == 2


def test_local_path_examples():
    hw = build_topology("ring4", k=4)
    assert local_path(hw, 0, 0, 3) == [0, 1, 2, 3]
    assert local_path(hw, 1, 2, 2) == [2]
    assert len(local_path(hw, 2, 1, 2)) == 2


def _floyd(k, edges):
    d = np.full((k, k), np.inf)
    np.fill_diagonal(d, 0)
    for u, v in edges:
        d[u, v] = d[v, u] = 1
    for m in range(k):
        d = np.minimum(d, d[:, [m]] + d[[m], :])
    return d


@pytest.mark.parametrize("k", [2, 3, 5, 8, 13, 16, 20])
def test_local_path_matches_all_pairs_distance(k):
    hw = build_topology("custom", M=2, k=k)
    _, edges = intra_chip_edges(k)
    d = _floyd(k, edges)
    for a, b in itertools.product(range(k), repeat=2):
        path = local_path(hw, 0, a, b)
        assert len(path) - 1 == d[a, b] == hw.local_distance(a, b)
        assert all(hw.local_adjacent(x, y) for x, y in zip(path, path[1:]))


def test_layout_rule():
    assert intra_chip_edges(12)[0] == "linear"
    layout, edges = intra_chip_edges(16)
    assert layout == "lattice" and len(edges) == 24  # 4x4 grid


def test_calibration_sampling_std():
    calib = CalibrationTable()
    hw = build_topology("custom", M=500, k=20, seed=3, calib=calib)
    for arr, mean, std in [(hw.f1q, calib.f1q_mean, calib.f1q_std),
                           (hw.f2q_inter, calib.f2q_inter_mean, calib.f2q_inter_std)]:
        assert arr.size >= 10_000
        assert abs(arr.std() - std) < 0.1 * std
        assert abs(arr.mean() - mean) < 0.1 * std


@given(st.sampled_from(["ring4", "grid4", "hex6", "complete6"]), st.integers(2, 20),
       st.integers(0, 1000))
def test_build_deterministic(kind, k, seed):
    a, b = build_topology(kind, k=k, seed=seed), build_topology(kind, k=k, seed=seed)
    assert a.descriptor() == b.descriptor()
    assert np.array_equal(a.f2q_inter, b.f2q_inter)


def test_errors():
    with pytest.raises(TopologyError):
        build_topology("ring4", M=5)
    with pytest.raises(TopologyError):
        build_topology("ring4", k=21)
    with pytest.raises(TopologyError):
        build_topology("custom", M=3, chip_edges=[(0, 1)])
    with pytest.raises(TopologyError):
        CalibrationTable(f2q_inter_mean=1.5)
    with pytest.raises(TopologyError):
        build_topology("torus")


def test_descriptor_round_trip(tmp_path):
    hw = build_topology("custom", M=3, k=5, seed=4, chip_edges=[(0, 1), (1, 2), (0, 2)])
    write_descriptor(hw, tmp_path / "hw.json")
    back = read_descriptor(tmp_path / "hw.json")
    assert back.descriptor() == hw.descriptor()
    assert np.array_equal(back.f1q, hw.f1q)
