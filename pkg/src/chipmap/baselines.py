"""Static mappers: round-robin, greedy cut minimisation, and a QUBO solved by annealing.

The QUBO objective is kept in factored form (per-slot linear costs, a slot-pair
cost matrix, per-gate interaction counts) so that annealing over feasible
assignments is cheap; ``to_dense`` expands it into the full binary quadratic
form over x[i, p] (logical i at physical slot p) with one-hot penalties.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .circuit import Circuit
from .hardware import CapacityError, Hardware

Assignment = dict[int, tuple[int, int]]


def _check_capacity(c: Circuit, hw: Hardware) -> None:
    if c.n_qubits > hw.n_physical:
        raise CapacityError(f"{c.n_qubits} logical qubits exceed {hw.n_physical} slots")


def trivial_map(c: Circuit, hw: Hardware) -> Assignment:
    """Logical i goes to chip i mod M, at the chip's next free slot."""
    _check_capacity(c, hw)
    fill = [0] * hw.M
    out = {}
    for q in range(c.n_qubits):
        chip = q % hw.M
        out[q] = (chip, fill[chip])
        fill[chip] += 1
    return out


def interaction_counts(c: Circuit) -> np.ndarray:
    W = np.zeros((c.n_qubits, c.n_qubits))
    for g in c.two_qubit_gates():
        i, j = g.qubits
        W[i, j] += 1
        W[j, i] += 1
    return W


def greedy_map(c: Circuit, hw: Hardware) -> Assignment:
    """Place in first-gate order; each qubit takes the free slot cutting the fewest
    gates to already-placed partners. Ties go to the lowest chip, then lowest slot."""
    _check_capacity(c, hw)
    W = interaction_counts(c)
    free = np.ones((hw.M, hw.k), dtype=bool)
    out: Assignment = {}
    for q in c.first_gate_order():
        partners = [(p, W[q, p]) for p in out if W[q, p] > 0]
        best, best_cost = None, math.inf
        for chip in range(hw.M):
            if not free[chip].any():
                continue
            cost = sum(w for p, w in partners if out[p][0] != chip)
            if cost < best_cost:
                best, best_cost = chip, cost
        slot = int(np.flatnonzero(free[best])[0])
        free[best, slot] = False
        out[q] = (best, slot)
    return out


@dataclass(frozen=True)
class QuboWeights:
    alpha: float = 20.0  # inter-chip hops
    beta: float = 1000.0  # static gate error
    delta: float = 0.3  # routing-distance proxy for depth
    eta: float = 1.2  # load imbalance (squared coefficient of variation)


@dataclass(frozen=True)
class AnnealConfig:
    iterations: int = 10_000
    T0: float = 10.0
    tau: float = 1000.0
    seed: int = 0
    weights: QuboWeights = QuboWeights()

    def __post_init__(self):
        if self.iterations < 1 or self.T0 <= 0 or self.tau <= 0:
            raise ValueError("need iterations >= 1, T0 > 0, tau > 0")

    def temperature(self, k: int) -> float:
        return self.T0 * math.exp(-k / self.tau)


@dataclass
class QuboObjective:
    n: int
    M: int
    k: int
    lin: np.ndarray  # (n, P)
    pair: np.ndarray  # (P, P), symmetric, cost of one gate between two slots
    W: np.ndarray  # (n, n), gate counts
    chip_of: np.ndarray  # (P,)
    eta: float
    penalty: float

    @property
    def P(self) -> int:
        return self.M * self.k

    def _balance(self, loads: np.ndarray) -> float:
        mu = self.n / self.M
        return self.eta * (float((loads ** 2).sum()) / (self.M * mu * mu) - 1.0)

    def energy(self, slots) -> float:
        """Objective of a feasible assignment given as slot index per logical qubit."""
        slots = np.asarray(slots)
        e = float(self.lin[np.arange(self.n), slots].sum())
        e += 0.5 * float((self.W * self.pair[np.ix_(slots, slots)]).sum())
        loads = np.bincount(self.chip_of[slots], minlength=self.M).astype(float)
        return e + self._balance(loads)

    def to_dense(self):
        """Return (Q, const): E(x) = const + x^T Q x with Q upper triangular, x = vec(x[i, p])."""
        n, P, M = self.n, self.P, self.M
        N = n * P
        Q = np.zeros((N, N))
        const = 0.0
        idx = np.arange(N).reshape(n, P)
        Q[idx, idx] += self.lin
        for i in range(n):
            for j in range(i + 1, n):
                if self.W[i, j]:
                    Q[np.ix_(idx[i], idx[j])] += self.W[i, j] * self.pair
        mu = n / M
        b = self.eta / (M * mu * mu)
        const -= self.eta
        flat_chip = np.tile(self.chip_of, n)
        for a in range(N):
            Q[a, a] += b
            later = np.arange(a + 1, N)
            Q[a, later[flat_chip[later] == flat_chip[a]]] += 2 * b
        A = self.penalty
        for i in range(n):
            const += A
            Q[idx[i], idx[i]] -= A
            for p in range(P):
                Q[idx[i, p], idx[i, p + 1:]] += 2 * A
        for p in range(P):
            for i in range(n):
                Q[idx[i, p], idx[i + 1:, p]] += A
        return Q, const


def dense_energy(Q: np.ndarray, const: float, x) -> float:
    x = np.asarray(x, dtype=float)
    return const + float(x @ Q @ x)


def _slot_costs(c: Circuit, hw: Hardware, w: QuboWeights):
    chip_of = np.repeat(np.arange(hw.M), hw.k)
    loc = np.tile(np.arange(hw.k), hw.M)
    e1 = (1.0 - hw.f1q).ravel()
    e_intra = (1.0 - hw.f2q_intra).ravel()
    e_inter = (1.0 - hw.f2q_inter).ravel()
    hops = hw._chip_dist[chip_of[:, None], chip_of[None, :]]
    dloc = hw._local_dist[loc[:, None], loc[None, :]]
    same = chip_of[:, None] == chip_of[None, :]
    err_pair = np.where(same, 0.5 * (e_intra[:, None] + e_intra[None, :]),
                        hops * 0.5 * (e_inter[:, None] + e_inter[None, :]))
    route = np.where(same, np.maximum(dloc - 1, 0), 0)
    pair = w.alpha * hops + w.beta * err_pair + w.delta * route
    n1 = np.zeros(c.n_qubits)
    for g in c.gates:
        if not g.is_two_qubit:
            n1[g.qubits[0]] += 1
    lin = w.beta * n1[:, None] * e1[None, :]
    return lin, pair, chip_of


def qubo_build(c: Circuit, hw: Hardware, weights: QuboWeights | None = None) -> QuboObjective:
    w = weights or QuboWeights()
    lin, pair, chip_of = _slot_costs(c, hw, w)
    W = interaction_counts(c)
    mu = c.n_qubits / hw.M
    coeffs = [np.abs(lin).max(initial=0.0), (W.max(initial=0.0) * np.abs(pair)).max(initial=0.0),
              2 * w.eta / (hw.M * mu * mu)]
    penalty = 10.0 * max(coeffs)
    return QuboObjective(c.n_qubits, hw.M, hw.k, lin, pair, W, chip_of, w.eta, penalty)


def static_objective(c: Circuit, hw: Hardware, assignment: Assignment,
                     weights: QuboWeights | None = None) -> float:
    """Gate-by-gate evaluation of the mapping objective using calibration errors only."""
    w = weights or QuboWeights()
    total = 0.0
    for g in c.gates:
        if not g.is_two_qubit:
            chip, loc = assignment[g.qubits[0]]
            total += w.beta * (1.0 - hw.f1q[chip, loc])
            continue
        (c0, l0), (c1, l1) = (assignment[q] for q in g.qubits)
        if c0 == c1:
            err = 0.5 * ((1 - hw.f2q_intra[c0, l0]) + (1 - hw.f2q_intra[c1, l1]))
            total += w.beta * err + w.delta * max(hw.local_distance(l0, l1) - 1, 0)
        else:
            hops = hw.chip_distance(c0, c1)
            err = 0.5 * ((1 - hw.f2q_inter[c0, l0]) + (1 - hw.f2q_inter[c1, l1]))
            total += w.alpha * hops + w.beta * hops * err
    loads = np.zeros(hw.M)
    for chip, _ in assignment.values():
        loads[chip] += 1
    cv = loads.std() / loads.mean()
    return total + w.eta * cv * cv


def slots_of(assignment: Assignment, hw: Hardware) -> np.ndarray:
    return np.array([hw.slot_index(*assignment[q]) for q in range(len(assignment))])


def assignment_of(slots, hw: Hardware) -> Assignment:
    return {q: hw.slot(int(p)) for q, p in enumerate(slots)}


@dataclass
class AnnealResult:
    slots: np.ndarray
    energy: float
    best_trace: np.ndarray  # best-so-far energy after each iteration
    accepted: int


def anneal(obj: QuboObjective, cfg: AnnealConfig, init_slots) -> AnnealResult:
    """Metropolis search over feasible assignments with 50/50 relocation or pair-swap moves."""
    rng = np.random.default_rng(cfg.seed)
    cur = np.array(init_slots, dtype=int)
    if len(set(cur.tolist())) != obj.n:
        raise ValueError("initial assignment is not injective")
    occupied = np.zeros(obj.P, dtype=bool)
    occupied[cur] = True
    e_cur = obj.energy(cur)
    best, e_best = cur.copy(), e_cur
    trace = np.empty(cfg.iterations)
    accepted = 0
    for it in range(cfg.iterations):
        T = cfg.temperature(it)
        cand = cur.copy()
        relocate = rng.random() < 0.5
        free = np.flatnonzero(~occupied)
        if (relocate and len(free)) or obj.n < 2:
            if len(free) == 0:
                trace[it] = e_best
                continue
            i = int(rng.integers(obj.n))
            cand[i] = int(free[rng.integers(len(free))])
        else:
            i, j = rng.choice(obj.n, size=2, replace=False)
            cand[i], cand[j] = cand[j], cand[i]
        e_new = obj.energy(cand)
        d = e_new - e_cur
        if d <= 0 or rng.random() < math.exp(-d / T):
            occupied[cur] = False
            occupied[cand] = True
            cur, e_cur = cand, e_new
            accepted += 1
            if e_cur < e_best:
                best, e_best = cur.copy(), e_cur
        trace[it] = e_best
    return AnnealResult(best, e_best, trace, accepted)


def qubo_map(c: Circuit, hw: Hardware, cfg: AnnealConfig | None = None) -> Assignment:
    cfg = cfg or AnnealConfig()
    _check_capacity(c, hw)
    obj = qubo_build(c, hw, cfg.weights)
    res = anneal(obj, cfg, slots_of(trivial_map(c, hw), hw))
    return assignment_of(res.slots, hw)


def exhaustive_optimum(obj: QuboObjective) -> tuple[float, np.ndarray]:
    """Minimum energy over every injective assignment (tiny instances only)."""
    from itertools import permutations

    best, arg = math.inf, None
    for perm in permutations(range(obj.P), obj.n):
        e = obj.energy(perm)
        if e < best:
            best, arg = e, np.array(perm)
    return best, arg


MAPPERS = {"trivial": trivial_map, "greedy": greedy_map, "qubo": qubo_map}
