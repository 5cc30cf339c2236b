"""Structural circuit IR and benchmark generators (QFT, Grover, VQE)."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

ONE_QUBIT_OPS = frozenset({"H", "X", "RY", "RZ"})
TWO_QUBIT_OPS = frozenset({"CP", "CNOT", "CZ", "SWAP"})
PARAM_OPS = frozenset({"RY", "RZ", "CP"})
FAMILIES = ("QFT", "GROVER", "VQE", "CUSTOM")

DEFAULT_1Q_DURATION = 0.05  # us
DEFAULT_2Q_DURATION = 0.3  # us

FORMAT_VERSION = 1


class CircuitError(ValueError):
    pass


@dataclass(frozen=True)
class Gate:
    op: str
    qubits: tuple[int, ...]
    param: float | None = None
    duration: float = 0.0

    def __post_init__(self):
        qubits = tuple(int(q) for q in self.qubits)
        object.__setattr__(self, "qubits", qubits)
        if self.op in ONE_QUBIT_OPS:
            if len(qubits) != 1:
                raise CircuitError(f"{self.op} takes one qubit, got {qubits}")
        elif self.op in TWO_QUBIT_OPS:
            if len(qubits) != 2 or qubits[0] == qubits[1]:
                raise CircuitError(f"{self.op} takes two distinct qubits, got {qubits}")
        else:
            raise CircuitError(f"unknown op {self.op!r}")
        if self.param is not None:
            if not math.isfinite(self.param):
                raise CircuitError(f"non-finite angle on {self.op}")
            object.__setattr__(self, "param", float(self.param))
        if self.duration <= 0.0:
            default = DEFAULT_1Q_DURATION if len(qubits) == 1 else DEFAULT_2Q_DURATION
            object.__setattr__(self, "duration", default)

    @property
    def is_two_qubit(self) -> bool:
        return len(self.qubits) == 2


@dataclass(frozen=True)
class Circuit:
    n_qubits: int
    gates: tuple[Gate, ...]
    family: str = "CUSTOM"
    seed: int = 0
    name: str = field(default="", compare=False)

    def __post_init__(self):
        object.__setattr__(self, "gates", tuple(self.gates))
        if self.family not in FAMILIES:
            raise CircuitError(f"unknown family {self.family!r}")
        for g in self.gates:
            if max(g.qubits) >= self.n_qubits or min(g.qubits) < 0:
                raise CircuitError(f"gate {g} outside {self.n_qubits} qubits")

    def __len__(self):
        return len(self.gates)

    @property
    def circuit_id(self) -> str:
        return self.name or f"{self.family.lower()}-{self.n_qubits}"

    def two_qubit_gates(self) -> list[Gate]:
        return [g for g in self.gates if g.is_two_qubit]

    def first_gate_order(self) -> list[int]:
        """Logical qubits ordered by their first appearance; idle qubits last."""
        seen: dict[int, None] = {}
        for g in self.gates:
            for q in g.qubits:
                seen.setdefault(q, None)
        order = list(seen)
        order.extend(q for q in range(self.n_qubits) if q not in seen)
        return order


def _h(q):
    return Gate("H", (q,))


def _x(q):
    return Gate("X", (q,))


def gen_qft(n: int) -> Circuit:
    """QFT skeleton without the final qubit reversal: n H and n(n-1)/2 CP gates."""
    if n < 2:
        raise CircuitError(f"QFT needs at least 2 qubits, got {n}")
    gates = []
    for i in range(n):
        gates.append(_h(i))
        for j in range(i + 1, n):
            gates.append(Gate("CP", (i, j), math.pi / 2 ** (j - i)))
    return Circuit(n, tuple(gates), "QFT", 0, f"qft-{n}")


def _mcz_ladder(n: int) -> list[Gate]:
    # structural stand-in for an n-controlled Z: CNOT chain down, CZ, chain back up
    if n == 2:
        return [Gate("CZ", (0, 1))]
    down = [Gate("CNOT", (i, i + 1)) for i in range(n - 2)]
    return down + [Gate("CZ", (n - 2, n - 1))] + down[::-1]


def gen_grover(n: int, marked: str, iterations: int) -> Circuit:
    if len(marked) != n or set(marked) - {"0", "1"}:
        raise CircuitError(f"marked must be a {n}-bit string, got {marked!r}")
    if iterations < 1:
        raise CircuitError("Grover needs at least one iteration")
    if n < 2:
        raise CircuitError(f"Grover needs at least 2 qubits, got {n}")
    ladder = _mcz_ladder(n)
    zero_bits = [i for i, b in enumerate(marked) if b == "0"]
    gates = [_h(q) for q in range(n)]
    for _ in range(iterations):
        gates += [_x(q) for q in zero_bits]
        gates += ladder
        gates += [_x(q) for q in zero_bits]
        gates += [_h(q) for q in range(n)]
        gates += [_x(q) for q in range(n)]
        gates += ladder
        gates += [_x(q) for q in range(n)]
        gates += [_h(q) for q in range(n)]
    return Circuit(n, tuple(gates), "GROVER", 0, f"grover-{n}")


def gen_vqe(n: int, layers: int, seed: int) -> Circuit:
    if n < 2 or layers < 1:
        raise CircuitError(f"VQE needs n >= 2 and layers >= 1, got n={n}, layers={layers}")
    rng = np.random.default_rng(seed)
    gates = []
    for _ in range(layers):
        angles = rng.uniform(0.0, 2 * math.pi, size=n)
        gates += [Gate("RY", (q,), float(a)) for q, a in enumerate(angles)]
        gates += [Gate("CNOT", (q, q + 1)) for q in range(n - 1)]
    return Circuit(n, tuple(gates), "VQE", seed, f"vqe-{n}")


def randomize_params(c: Circuit, seed: int) -> Circuit:
    """Resample angles of parameterized single-qubit gates; entanglers untouched."""
    idx = [i for i, g in enumerate(c.gates) if not g.is_two_qubit and g.op in PARAM_OPS]
    if not idx:
        return c
    rng = np.random.default_rng(seed)
    angles = rng.uniform(0.0, 2 * math.pi, size=len(idx))
    gates = list(c.gates)
    for i, a in zip(idx, angles):
        gates[i] = replace(gates[i], param=float(a))
    return replace(c, gates=tuple(gates))


def gen_benchmark_suite(scales, variants: int, seed: int,
                        grover_iterations: int = 1, vqe_layers: int = 2) -> list[Circuit]:
    """One circuit per scale x family x variant, named ``family-n-vK``."""
    if variants < 1:
        raise CircuitError("variants must be >= 1")
    master = np.random.SeedSequence(seed)
    suite = []
    for n in scales:
        for family in ("QFT", "GROVER", "VQE"):
            for v, child in enumerate(master.spawn(variants)):
                vseed = int(child.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))
                rng = np.random.default_rng(vseed)
                if family == "QFT":
                    base = gen_qft(n)
                elif family == "GROVER":
                    marked = "".join(rng.choice(["0", "1"], size=n))
                    base = gen_grover(n, marked, grover_iterations)
                else:
                    base = gen_vqe(n, vqe_layers, vseed)
                c = randomize_params(base, vseed)
                suite.append(replace(c, seed=vseed, name=f"{family.lower()}-{n}-v{v}"))
    return suite


def logical_depth(c: Circuit) -> int:
    level = [0] * c.n_qubits
    for g in c.gates:
        d = 1 + max(level[q] for q in g.qubits)
        for q in g.qubits:
            level[q] = d
    return max(level, default=0)


# -- file format -------------------------------------------------------------

def circuit_to_dict(c: Circuit) -> dict:
    gates = []
    for g in c.gates:
        rec = {"op": g.op, "qubits": list(g.qubits)}
        if g.param is not None:
            rec["param"] = g.param
        rec["duration"] = g.duration
        gates.append(rec)
    return {"version": FORMAT_VERSION, "name": c.name, "n_qubits": c.n_qubits,
            "family": c.family, "seed": c.seed, "gates": gates}


def circuit_from_dict(d: dict) -> Circuit:
    if d.get("version") != FORMAT_VERSION:
        raise CircuitError(f"unsupported circuit format version {d.get('version')!r}")
    gates = tuple(Gate(r["op"], tuple(r["qubits"]), r.get("param"), r["duration"])
                  for r in d["gates"])
    return Circuit(int(d["n_qubits"]), gates, d["family"], int(d["seed"]), d.get("name", ""))


def write_circuit(c: Circuit, path) -> None:
    Path(path).write_text(json.dumps(circuit_to_dict(c), indent=1) + "\n")


def read_circuit(path) -> Circuit:
    return circuit_from_dict(json.loads(Path(path).read_text()))
