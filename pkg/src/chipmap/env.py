"""Mapping MDP: placement/SWAP actions, routing, reward shaping, state encoding.

Gates are executed strictly in list order. A gate runs as soon as all of its
qubits are placed unless it is an intra-chip two-qubit gate whose endpoints are
not adjacent; such a gate blocks the front until SWAP actions (or a commit,
which routes it along the shortest local path) bring the endpoints together.
"""

from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from .circuit import DEFAULT_2Q_DURATION, Circuit, Gate, logical_depth
from .hardware import CapacityError, Hardware, local_path
from .noise import (HISTORY_LEN, MAX_NOISE, NoiseParams, NoiseState, gate_error,
                    initial_noise, step_noise)

S_MAX = 8
LAYER_DISCOUNT = 0.9
SWAP_GATE_COUNT = 3


class EnvStateError(RuntimeError):
    pass


class IllegalActionError(ValueError):
    pass


@dataclass(frozen=True)
class RewardWeights:
    alpha2_base: float = 1000.0
    alpha2_ramp: float = 600.0
    alpha3: float = -1.0
    alpha4: float = -0.3
    alpha5: float = -1.2
    episodes: int = 500

    def __post_init__(self):
        if max(self.alpha3, self.alpha4, self.alpha5) > 0:
            raise ValueError("alpha3..alpha5 are penalty weights and must be <= 0")

    def alpha2(self, episode: int) -> float:
        return self.alpha2_base + self.alpha2_ramp * (episode / self.episodes)


@dataclass(frozen=True)
class Action:
    kind: str  # PLACE | SWAP | COMMIT
    index: int
    chip: int = -1
    a: int = -1
    b: int = -1

    def label(self) -> str:
        if self.kind == "PLACE":
            return f"PLACE({self.chip}:{self.a})"
        if self.kind == "SWAP":
            return f"SWAP({self.chip}:{self.a}-{self.b})"
        return "COMMIT"


@dataclass(frozen=True)
class RoutedOp:
    kind: str  # 1q | 2q | swap | teleport
    gate: int  # circuit gate index, -1 for inserted swaps
    logical: tuple[int, ...]
    sites: tuple[tuple[int, int], ...]
    chips: tuple[int, ...]
    noise_step: int
    error: float
    duration: float


@dataclass
class MappingState:
    n: int
    assignment: dict[int, tuple[int, int]]
    occupant: np.ndarray  # (M, k) logical qubit or -1
    cursor: int
    next_gate: int
    routed: list[RoutedOp]
    n_inter: int
    depth: int
    layer: np.ndarray  # per-logical-qubit depth
    elapsed: np.ndarray  # per-logical-qubit busy time, us
    err_sum: float
    noise: NoiseState
    noise_log: list[np.ndarray]  # per-chip totals indexed by noise step
    step_index: int = 0
    latency: float = 0.0
    weighted_inter: float = 0.0
    log_keep: float = 0.0  # sum of log(1 - error) over routed ops
    last_inter_step: int = -1
    done: bool = False

    @property
    def noise_step(self) -> int:
        return len(self.noise_log) - 1

    def placed(self) -> int:
        return len(self.assignment)


def compute_alpha1(n_pred: float) -> float:
    """Noise-adaptive inter-chip weight, -15 - 10*sigmoid(10*(n - 0.05))."""
    z = 10.0 * (n_pred - 0.05)
    return -15.0 - 10.0 / (1.0 + math.exp(-z))


def load_imbalance(s: MappingState, hw: Hardware) -> float:
    """Coefficient of variation (population std / mean) of per-chip loads."""
    if not s.assignment:
        return 0.0
    counts = (s.occupant >= 0).sum(axis=1).astype(float)
    return float(counts.std() / counts.mean())


def estimate_fidelity(s: MappingState, hw: Hardware, model: str = "additive") -> float:
    """Gate-error plus decoherence budget; ``product`` is the multiplicative form."""
    decoherence = float(s.elapsed.sum()) / hw.calib.T2
    if model == "additive":
        return max(0.0, 1.0 - s.err_sum - decoherence)
    if model == "product":
        return math.exp(s.log_keep - decoherence)
    raise ValueError(f"unknown fidelity model {model!r}")


# -- routing primitives ------------------------------------------------------

def _touch(s: MappingState, logical, duration: float) -> None:
    d = 1 + max(int(s.layer[q]) for q in logical)
    for q in logical:
        s.layer[q] = d
        s.elapsed[q] += duration
    s.depth = max(s.depth, d)


def _record(s, kind, gate, logical, sites, chips, err, duration):
    s.routed.append(RoutedOp(kind, gate, tuple(logical), tuple(sites), tuple(chips),
                             s.noise_step, err, duration))
    s.err_sum += err
    s.log_keep += math.log1p(-min(err, 1.0 - 1e-12))
    if logical:
        _touch(s, logical, duration)


def execute_1q(s: MappingState, hw: Hardware, g: Gate, gi: int = -1) -> None:
    q = g.qubits[0]
    chip, loc = s.assignment[q]
    err = gate_error(hw, "1q", s.noise, chip, fidelity=hw.f1q[chip, loc])
    _record(s, "1q", gi, (q,), ((chip, loc),), (chip,), err, g.duration)


def execute_2q_local(s: MappingState, hw: Hardware, g: Gate, gi: int = -1) -> None:
    (c0, l0), (c1, l1) = (s.assignment[q] for q in g.qubits)
    assert c0 == c1 and hw.local_adjacent(l0, l1)
    f = 0.5 * (hw.f2q_intra[c0, l0] + hw.f2q_intra[c0, l1])
    err = gate_error(hw, "2q-intra", s.noise, c0, fidelity=f)
    _record(s, "2q", gi, g.qubits, ((c0, l0), (c1, l1)), (c0,), err, g.duration)


def apply_swap(s: MappingState, hw: Hardware, chip: int, a: int, b: int) -> None:
    """Exchange the contents of two adjacent slots; costs three intra-chip gates."""
    if not hw.local_adjacent(a, b):
        raise IllegalActionError(f"slots {a},{b} on chip {chip} are not adjacent")
    qa, qb = int(s.occupant[chip, a]), int(s.occupant[chip, b])
    if qa < 0 and qb < 0:
        raise IllegalActionError("swap of two empty slots")
    f = 0.5 * (hw.f2q_intra[chip, a] + hw.f2q_intra[chip, b])
    err = SWAP_GATE_COUNT * gate_error(hw, "2q-intra", s.noise, chip, fidelity=f)
    logical = [q for q in (qa, qb) if q >= 0]
    s.occupant[chip, a], s.occupant[chip, b] = qb, qa
    if qa >= 0:
        s.assignment[qa] = (chip, b)
    if qb >= 0:
        s.assignment[qb] = (chip, a)
    _record(s, "swap", -1, logical, ((chip, a), (chip, b)), (chip,), err,
            SWAP_GATE_COUNT * DEFAULT_2Q_DURATION)


def _teleport(s: MappingState, hw: Hardware, g: Gate, gi: int) -> int:
    (c0, l0), (c1, l1) = (s.assignment[q] for q in g.qubits)
    path = hw.chip_path(c0, c1)
    f = 0.5 * (hw.f2q_inter[c0, l0] + hw.f2q_inter[c1, l1])
    for u, v in zip(path, path[1:]):
        err = gate_error(hw, "2q-inter", s.noise, u, v, fidelity=f)
        _record(s, "teleport", gi, g.qubits, ((c0, l0), (c1, l1)), (u, v), err, g.duration)
        s.latency += hw.interchip_latency
    hops = len(path) - 1
    s.n_inter += hops
    return hops


def route_gate(s: MappingState, hw: Hardware, g: Gate, gi: int = -1) -> tuple[int, bool]:
    """Route and execute a two-qubit gate; returns (swaps inserted, crossed chips)."""
    for q in g.qubits:
        if q not in s.assignment:
            raise EnvStateError(f"gate {g} has unmapped qubit {q}")
    if not g.is_two_qubit:
        execute_1q(s, hw, g, gi)
        return 0, False
    (c0, l0), (c1, l1) = (s.assignment[q] for q in g.qubits)
    if c0 != c1:
        _teleport(s, hw, g, gi)
        return 0, True
    path = local_path(hw, c0, l0, l1)
    swaps = max(0, len(path) - 2)
    for i in range(swaps):
        apply_swap(s, hw, c0, path[i], path[i + 1])
    execute_2q_local(s, hw, g, gi)
    return swaps, False


# -- environment -------------------------------------------------------------

@dataclass
class EnvConfig:
    fidelity_model: str = "additive"
    s_max: int = S_MAX
    history_len: int = HISTORY_LEN
    step_budget_factor: int = 3
    n_pad: int | None = None


class MappingEnv:
    """One episode of mapping ``circuit`` onto ``hw`` under simulated noise."""

    def __init__(self, hw: Hardware, noise_params: NoiseParams | None = None,
                 weights: RewardWeights | None = None, config: EnvConfig | None = None):
        self.hw = hw
        self.noise_params = noise_params or NoiseParams()
        self.weights = weights or RewardWeights()
        self.config = config or EnvConfig()
        self.state: MappingState | None = None
        self.circuit: Circuit | None = None
        self.trace: list[dict] = []

    # episode lifecycle
    def reset(self, circuit: Circuit, seed: int, episode: int = 0) -> MappingState:
        hw = self.hw
        if circuit.n_qubits > hw.n_physical:
            raise CapacityError(f"{circuit.n_qubits} logical qubits exceed "
                                f"{hw.n_physical} physical slots")
        n_pad = self.config.n_pad or circuit.n_qubits
        if n_pad < circuit.n_qubits:
            raise CapacityError(f"n_pad={n_pad} smaller than circuit ({circuit.n_qubits})")
        self.circuit = circuit
        self.n_pad = n_pad
        self.alpha2 = self.weights.alpha2(episode)
        self.order = circuit.first_gate_order()
        self.rng = np.random.default_rng(seed)
        self.n2q = len(circuit.two_qubit_gates())
        self.logical_depth = logical_depth(circuit)
        self.step_budget = circuit.n_qubits + self.config.step_budget_factor * max(1, self.n2q)
        self._pending_cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        n = circuit.n_qubits
        self.state = MappingState(
            n=n, assignment={}, occupant=np.full((hw.M, hw.k), -1, dtype=int),
            cursor=0, next_gate=0, routed=[], n_inter=0, depth=0,
            layer=np.zeros(n, dtype=int), elapsed=np.zeros(n), err_sum=0.0,
            noise=initial_noise(hw.M), noise_log=[])
        self.window: deque[np.ndarray] = deque(maxlen=self.config.history_len)
        for _ in range(self.config.history_len):
            self._advance_noise()
            self.window.append(self.encode_state())
        self.trace = []
        self._advance_gates()
        return self.state

    def _advance_noise(self) -> None:
        s = self.state
        s.noise = step_noise(s.noise, self.noise_params, self.rng, self.config.history_len)
        s.noise_log.append(s.noise.total)

    def _advance_gates(self) -> None:
        s, gates, hw = self.state, self.circuit.gates, self.hw
        while s.next_gate < len(gates):
            g = gates[s.next_gate]
            if any(q not in s.assignment for q in g.qubits):
                break
            if g.is_two_qubit:
                (c0, l0), (c1, l1) = (s.assignment[q] for q in g.qubits)
                if c0 == c1 and not hw.local_adjacent(l0, l1):
                    break
                if c0 != c1:
                    _teleport(s, hw, g, s.next_gate)
                else:
                    execute_2q_local(s, hw, g, s.next_gate)
            else:
                execute_1q(s, hw, g, s.next_gate)
            s.next_gate += 1
        s.done = s.next_gate == len(gates) and s.cursor == s.n

    @property
    def n_actions(self) -> int:
        return self.hw.n_physical + self.config.s_max

    def fidelity(self) -> float:
        return estimate_fidelity(self.state, self.hw, self.config.fidelity_model)

    # actions
    def swap_candidates(self) -> list[tuple[int, int, int]]:
        s, hw, gates = self.state, self.hw, self.circuit.gates
        lookahead = max(1, math.ceil(math.log2(max(s.n, 2))))
        seen: list[tuple[int, int, int]] = []
        taken = 0
        for g in gates[s.next_gate:]:
            if taken >= lookahead or len(seen) >= self.config.s_max:
                break
            if not g.is_two_qubit:
                continue
            if any(q not in s.assignment for q in g.qubits):
                break
            taken += 1
            (c0, l0), (c1, l1) = (s.assignment[q] for q in g.qubits)
            if c0 != c1 or hw.local_adjacent(l0, l1):
                continue
            path = local_path(hw, c0, l0, l1)
            for a, b in ((path[0], path[1]), (path[-2], path[-1])):
                edge = (c0, min(a, b), max(a, b))
                if edge not in seen and len(seen) < self.config.s_max:
                    seen.append(edge)
        return seen

    def legal_actions(self) -> list[Action]:
        s, hw = self.state, self.hw
        if s is None or s.done:
            raise EnvStateError("episode is finished; call reset()")
        if s.cursor < s.n:
            free = np.flatnonzero(s.occupant.ravel() < 0)
            return [Action("PLACE", int(i), *hw.slot(int(i))) for i in free]
        commit = Action("COMMIT", hw.n_physical)
        if s.step_index >= self.step_budget:
            return [commit]
        cands = self.swap_candidates()
        if not cands:
            return [commit]
        return [Action("SWAP", hw.n_physical + j, c, a, b) for j, (c, a, b) in enumerate(cands)]

    def action_mask(self) -> np.ndarray:
        mask = np.zeros(self.n_actions, dtype=bool)
        for a in self.legal_actions():
            mask[a.index] = True
        return mask

    def step(self, action, n_pred: float | None = None, *, check: bool = True):
        """Apply one action; returns (state, reward, done)."""
        s, hw = self.state, self.hw
        if s is None or s.done:
            raise EnvStateError("episode is finished; call reset()")
        legal = self.legal_actions()
        if isinstance(action, (int, np.integer)):
            match = [a for a in legal if a.index == int(action)]
            if not match:
                raise IllegalActionError(f"action index {action} is not legal")
            action = match[0]
        elif check and action not in legal:
            raise IllegalActionError(f"{action} is not legal here")

        if n_pred is None:
            n_pred = float(s.noise.total.mean())
        a1 = compute_alpha1(n_pred)
        before = self._objective_terms()

        if action.kind == "PLACE":
            q = self.order[s.cursor]
            if s.occupant[action.chip, action.a] >= 0:
                raise IllegalActionError(f"slot {action.chip}:{action.a} is occupied")
            s.assignment[q] = (action.chip, action.a)
            s.occupant[action.chip, action.a] = q
            s.cursor += 1
        elif action.kind == "SWAP":
            apply_swap(s, hw, action.chip, action.a, action.b)
        else:
            if s.next_gate < len(self.circuit.gates):
                route_gate(s, hw, self.circuit.gates[s.next_gate], s.next_gate)
                s.next_gate += 1
        self._advance_gates()
        self._advance_noise()
        s.step_index += 1

        after = self._objective_terms()
        d_inter = after[0] - before[0]
        if d_inter:
            s.last_inter_step = s.step_index
        s.weighted_inter += a1 * d_inter
        w = self.weights
        reward = (a1 * d_inter + self.alpha2 * (after[1] - before[1])
                  + w.alpha3 * (after[2] - before[2]) + w.alpha4 * (after[3] - before[3])
                  + w.alpha5 * (after[4] - before[4]))
        if s.done:
            reward += self.alpha2 * after[1]
        self.window.append(self.encode_state())
        self.trace.append({"step": s.step_index, "action": action.label(), "reward": reward,
                           "n_inter": s.n_inter, "depth": s.depth, "fidelity": after[1]})
        return s, reward, s.done

    def commit(self, n_pred: float | None = None):
        """Route the front gate along its shortest path regardless of legality."""
        return self.step(Action("COMMIT", self.hw.n_physical), n_pred, check=False)

    def _objective_terms(self):
        s = self.state
        return (s.n_inter, self.fidelity(), s.err_sum, s.depth, load_imbalance(s, self.hw))

    def aggregate_reward(self) -> float:
        """Episode objective recomputed from final counters (telescoped sum target)."""
        s, w = self.state, self.weights
        f = self.fidelity()
        total = (s.weighted_inter + self.alpha2 * (f - 1.0) + w.alpha3 * s.err_sum
                 + w.alpha4 * s.depth + w.alpha5 * load_imbalance(s, self.hw))
        if s.done:
            total += self.alpha2 * f
        return total

    # encoding
    def _pending(self, start: int):
        if start not in self._pending_cache:
            c = self.circuit
            n = c.n_qubits
            level = np.zeros(n, dtype=int)
            inter = np.zeros((n, n))
            count = np.zeros(n)
            for g in c.gates[start:]:
                d = 1 + max(level[q] for q in g.qubits)
                for q in g.qubits:
                    level[q] = d
                if g.is_two_qubit:
                    i, j = g.qubits
                    w = LAYER_DISCOUNT ** (d - 1)
                    inter[i, j] += w
                    inter[j, i] += w
                    count[i] += 1
                    count[j] += 1
            self._pending_cache[start] = (inter, count)
        return self._pending_cache[start]

    def _blocks(self):
        s, hw = self.state, self.hw
        n, M, k = s.n, hw.M, hw.k
        inter, pcount = self._pending(s.next_gate)

        chip_of = np.full(n, -1)
        for q, (c, _) in s.assignment.items():
            chip_of[q] = c
        diam = max(1, hw.chip_diameter)
        b2 = np.zeros((n, M, 2))
        b2[:, :, 1] = 1.0
        mapped = chip_of >= 0
        b2[mapped, chip_of[mapped], 0] = 1.0
        b2[mapped, :, 1] = hw._chip_dist[chip_of[mapped]] / diam

        hist = s.noise.history
        total = s.noise.total
        prev = hist[-2] if len(hist) >= 2 else total
        load = (s.occupant >= 0).sum(axis=1) / k
        denom = pcount.sum()
        pressure = np.zeros(M)
        if denom > 0:
            np.add.at(pressure, chip_of[mapped], pcount[mapped])
            pressure /= denom
        b3 = np.stack([
            total / MAX_NOISE, hist.mean(axis=0) / MAX_NOISE, hist.std(axis=0) / MAX_NOISE,
            hist.min(axis=0) / MAX_NOISE, hist.max(axis=0) / MAX_NOISE,
            0.5 * ((total - prev) / MAX_NOISE + 1.0), load, 1.0 - load, pressure,
            (s.noise.spike > 0).astype(float)], axis=1)

        since = 1.0 if s.last_inter_step < 0 else \
            min(1.0, (s.step_index - s.last_inter_step) / self.step_budget)
        b4 = np.array([
            min(1.0, s.step_index / self.step_budget),
            s.placed() / n,
            min(1.0, s.n_inter / max(1, self.n2q * diam)),
            min(1.0, s.depth / max(1, 3 * self.logical_depth)),
            since])
        return inter, b2, b3, b4, chip_of

    def encode_state(self) -> np.ndarray:
        """Flat features of length n^2 + 2nM + 10M + 5 (n padded to ``n_pad``)."""
        inter, b2, b3, b4, _ = self._blocks()
        n, p = self.state.n, self.n_pad
        if p > n:
            inter = np.pad(inter, ((0, p - n), (0, p - n)))
            b2 = np.pad(b2, ((0, p - n), (0, 0), (0, 0)))
        return np.concatenate([inter.ravel(), b2.ravel(), b3.ravel(), b4])

    def token_dim(self) -> int:
        return self.n_pad + 2 * self.hw.M + 11

    def tokens(self):
        """Per-qubit tokens: interaction row, chip features, own chip noise row, cursor flag."""
        inter, b2, b3, b4, chip_of = self._blocks()
        s, M, p = self.state, self.hw.M, self.n_pad
        n = s.n
        tok = np.zeros((p, self.token_dim()))
        tok[:n, :n] = inter
        tok[:n, p:p + 2 * M] = b2.reshape(n, 2 * M)
        mapped = chip_of >= 0
        tok[:n][mapped, p + 2 * M:p + 2 * M + 10] = b3[chip_of[mapped]]
        if s.cursor < n:
            tok[self.order[s.cursor], -1] = 1.0
        mask = np.zeros(p, dtype=bool)
        mask[:n] = True
        return tok, mask, b4

    def observation(self) -> dict:
        tok, tmask, b4 = self.tokens()
        done = self.state.done
        return {"window": np.stack(self.window), "tokens": tok, "token_mask": tmask,
                "globals": b4,
                "mask": np.zeros(self.n_actions, dtype=bool) if done else self.action_mask()}


def encode_state(env: MappingEnv) -> np.ndarray:
    return env.encode_state()


def write_trace(path, trace: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "action", "reward", "n_inter", "depth", "fidelity"])
        for r in trace:
            w.writerow([r["step"], r["action"], repr(r["reward"]), r["n_inter"], r["depth"],
                        repr(r["fidelity"])])


def run_assignment(env: MappingEnv, circuit: Circuit, assignment: dict[int, tuple[int, int]],
                   seed: int, episode: int = 0, n_pred: float | None = None) -> MappingState:
    """Play a complete placement through the env, committing every blocked gate."""
    env.reset(circuit, seed, episode)
    s = env.state
    while s.cursor < s.n:
        chip, loc = assignment[env.order[s.cursor]]
        env.step(Action("PLACE", env.hw.slot_index(chip, loc), chip, loc), n_pred)
    while not s.done:
        env.commit(n_pred)
    return s
