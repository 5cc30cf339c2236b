"""Multi-chip topology model: chip graphs, chip-level graph, calibration."""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

INTERCHIP_LATENCY_US = 50.0
LATTICE_ROWS = 4
TOPOLOGY_KINDS = ("ring4", "grid4", "hex6", "complete6", "custom")


class TopologyError(ValueError):
    pass


class CapacityError(ValueError):
    pass


@dataclass(frozen=True)
class CalibrationTable:
    f1q_mean: float = 0.9995
    f1q_std: float = 0.0002
    f2q_intra_mean: float = 0.995
    f2q_intra_std: float = 0.005
    f2q_inter_mean: float = 0.98
    f2q_inter_std: float = 0.01
    T1: float = 100.0
    T2: float = 50.0

    def __post_init__(self):
        for name in ("f1q", "f2q_intra", "f2q_inter"):
            mean, std = getattr(self, f"{name}_mean"), getattr(self, f"{name}_std")
            if not 0.0 < mean <= 1.0:
                raise TopologyError(f"{name} mean fidelity must lie in (0, 1], got {mean}")
            if std < 0:
                raise TopologyError(f"{name} std must be >= 0")
        if self.T2 > 2 * self.T1:
            raise TopologyError("T2 cannot exceed 2*T1")


def _bfs_dist(adj: list[list[int]], src: int) -> list[int]:
    dist = [-1] * len(adj)
    dist[src] = 0
    queue = deque([src])
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if dist[v] < 0:
                dist[v] = dist[u] + 1
                queue.append(v)
    return dist


def _bfs_path(adj: list[list[int]], a: int, b: int) -> list[int]:
    # adjacency lists are sorted, so the first parent found is the smallest-index neighbour
    parent = {a: None}
    queue = deque([a])
    while queue:
        u = queue.popleft()
        if u == b:
            break
        for v in adj[u]:
            if v not in parent:
                parent[v] = u
                queue.append(v)
    if b not in parent:
        raise RuntimeError(f"no path between {a} and {b}")
    path = [b]
    while path[-1] != a:
        path.append(parent[path[-1]])
    return path[::-1]


def _adjacency(n: int, edges) -> list[list[int]]:
    adj = [set() for _ in range(n)]
    for u, v in edges:
        if u == v:
            continue
        adj[u].add(v)
        adj[v].add(u)
    return [sorted(s) for s in adj]


def intra_chip_edges(k: int) -> tuple[str, list[tuple[int, int]]]:
    """Linear chain for k <= 12, else a 4-row lattice filled row-major."""
    if k <= 12:
        return "linear", [(q, q + 1) for q in range(k - 1)]
    cols = math.ceil(k / LATTICE_ROWS)
    edges = []
    for q in range(k):
        r, c = divmod(q, cols)
        if c + 1 < cols and q + 1 < k:
            edges.append((q, q + 1))
        if q + cols < k:
            edges.append((q, q + cols))
    return "lattice", edges


def chip_edges_for(kind: str, M: int, custom_edges=None) -> list[tuple[int, int]]:
    if kind in ("ring4", "grid4") and M != 4:
        raise TopologyError(f"{kind} requires M=4, got {M}")
    if kind in ("hex6", "complete6") and M != 6:
        raise TopologyError(f"{kind} requires M=6, got {M}")
    if kind == "ring4":
        return [(0, 1), (1, 2), (2, 3), (0, 3)]
    if kind == "grid4":
        return [(0, 1), (0, 2), (1, 3), (2, 3)]
    if kind == "hex6":
        return [(i, (i + 1) % 6) for i in range(6)] + [(0, 3), (1, 4), (2, 5)]
    if kind == "complete6":
        return [(i, j) for i in range(6) for j in range(i + 1, 6)]
    if kind == "custom":
        if custom_edges is None:
            return [(i, i + 1) for i in range(M - 1)]
        return [tuple(sorted((int(u), int(v)))) for u, v in custom_edges]
    raise TopologyError(f"unknown topology kind {kind!r}")


@dataclass
class Hardware:
    kind: str
    M: int
    k: int
    chip_adj: list[list[int]]
    local_adj: list[list[int]]
    calib: CalibrationTable
    seed: int
    layout: str
    f1q: np.ndarray
    f2q_intra: np.ndarray
    f2q_inter: np.ndarray
    interchip_latency: float = INTERCHIP_LATENCY_US
    _local_dist: np.ndarray = field(init=False, repr=False)
    _chip_dist: np.ndarray = field(init=False, repr=False)
    _path_cache: dict = field(init=False, repr=False, default_factory=dict)

    def __post_init__(self):
        self._local_dist = np.array([_bfs_dist(self.local_adj, q) for q in range(self.k)])
        self._chip_dist = np.array([_bfs_dist(self.chip_adj, c) for c in range(self.M)])
        if (self._local_dist < 0).any():
            raise TopologyError("chip graph is disconnected")
        if (self._chip_dist < 0).any():
            raise TopologyError("chip-level graph is disconnected")

    @property
    def n_physical(self) -> int:
        return self.M * self.k

    @property
    def chip_edges(self) -> list[tuple[int, int]]:
        return [(u, v) for u in range(self.M) for v in self.chip_adj[u] if u < v]

    @property
    def chip_diameter(self) -> int:
        return int(self._chip_dist.max())

    def local_distance(self, a: int, b: int) -> int:
        return int(self._local_dist[a, b])

    def chip_distance(self, i: int, j: int) -> int:
        return int(self._chip_dist[i, j])

    def local_adjacent(self, a: int, b: int) -> bool:
        return self._local_dist[a, b] == 1

    def chip_path(self, i: int, j: int) -> list[int]:
        key = ("chip", i, j)
        if key not in self._path_cache:
            self._path_cache[key] = _bfs_path(self.chip_adj, i, j)
        return self._path_cache[key]

    def slot_index(self, chip: int, local: int) -> int:
        return chip * self.k + local

    def slot(self, index: int) -> tuple[int, int]:
        return divmod(index, self.k)

    def descriptor(self) -> dict:
        return {"kind": self.kind, "M": self.M, "k": self.k, "seed": self.seed,
                "layout": self.layout, "chip_edges": [list(e) for e in self.chip_edges],
                "interchip_latency": self.interchip_latency, "calib": asdict(self.calib)}


def build_topology(kind: str, M: int | None = None, k: int = 12,
                   calib: CalibrationTable | None = None, seed: int = 0,
                   chip_edges=None) -> Hardware:
    implied = {"ring4": 4, "grid4": 4, "hex6": 6, "complete6": 6}
    if kind not in TOPOLOGY_KINDS:
        raise TopologyError(f"unknown topology kind {kind!r}")
    if M is None:
        M = implied.get(kind, 2)
    if M < 2:
        raise TopologyError(f"need at least 2 chips, got {M}")
    if not 2 <= k <= 20:
        raise TopologyError(f"qubits per chip must be in [2, 20], got {k}")
    calib = calib or CalibrationTable()
    edges = chip_edges_for(kind, M, chip_edges)
    layout, local = intra_chip_edges(k)
    rng = np.random.default_rng(seed)

    def sample(mean, std):
        return np.clip(rng.normal(mean, std, size=(M, k)), 1e-6, 1.0 - 1e-6)

    f1q = sample(calib.f1q_mean, calib.f1q_std)
    f2q_intra = sample(calib.f2q_intra_mean, calib.f2q_intra_std)
    f2q_inter = sample(calib.f2q_inter_mean, calib.f2q_inter_std)
    return Hardware(kind, M, k, _adjacency(M, edges), _adjacency(k, local), calib, seed,
                    layout, f1q, f2q_intra, f2q_inter)


def local_path(hw: Hardware, chip: int, a: int, b: int) -> list[int]:
    """Shortest local path a -> b; ties go to the smallest-index neighbour."""
    if not (0 <= chip < hw.M and 0 <= a < hw.k and 0 <= b < hw.k):
        raise IndexError(f"qubits ({a}, {b}) not on chip {chip}")
    key = ("local", a, b)
    if key not in hw._path_cache:
        hw._path_cache[key] = _bfs_path(hw.local_adj, a, b)
    return list(hw._path_cache[key])


def chips_adjacent(hw: Hardware, i: int, j: int) -> bool:
    return i != j and j in hw.chip_adj[i]


def hardware_from_descriptor(d: dict) -> Hardware:
    edges = d.get("chip_edges") if d["kind"] == "custom" else None
    calib = CalibrationTable(**d["calib"]) if "calib" in d else None
    return build_topology(d["kind"], d.get("M"), d["k"], calib, d.get("seed", 0), edges)


def write_descriptor(hw: Hardware, path) -> None:
    Path(path).write_text(json.dumps(hw.descriptor(), indent=1, sort_keys=True) + "\n")


def read_descriptor(path) -> Hardware:
    return hardware_from_descriptor(json.loads(Path(path).read_text()))
