"""Shared oracles for the test suite."""

import math

import numpy as np

from chipmap import autodiff as ad
from chipmap.hardware import chips_adjacent


def numeric_grad(fn, p, idx, h=1e-5):
    old = p.data[idx]
    p.data[idx] = old + h
    with ad.no_grad():
        up = float(fn().data)
    p.data[idx] = old - h
    with ad.no_grad():
        down = float(fn().data)
    p.data[idx] = old
    return (up - down) / (2 * h)


def grad_check(fn, params, h=1e-5, max_entries=40, rng=None):
    """Largest per-parameter relative error between backprop and central differences.

    ``fn`` must be a deterministic function of the parameters returning a scalar.
    At most ``max_entries`` coordinates per parameter are probed.
    """
    rng = rng or np.random.default_rng(0)
    for p in params:
        p.grad = None
    fn().backward()
    worst = 0.0
    for p in params:
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad
        flat = list(np.ndindex(p.data.shape))
        if len(flat) > max_entries:
            flat = [flat[i] for i in rng.choice(len(flat), max_entries, replace=False)]
        a = np.array([analytic[i] for i in flat])
        n = np.array([numeric_grad(fn, p, i, h) for i in flat])
        scale = max(np.linalg.norm(a), np.linalg.norm(n))
        if scale < 1e-12:
            continue
        worst = max(worst, float(np.linalg.norm(a - n) / scale))
    return worst


def brute_recount(routed):
    """Independent pass over a routed schedule: (n_inter, depth, per-qubit busy time, errors)."""
    n_inter = sum(1 for op in routed if op.kind == "teleport")
    level, busy = {}, {}
    for op in routed:
        # every record (gate, swap or teleport hop) is one layer on the qubits it touches
        d = 1 + max((level.get(q, 0) for q in op.logical), default=0)
        for q in op.logical:
            level[q] = d
            busy[q] = busy.get(q, 0.0) + op.duration
    depth = max(level.values(), default=0)
    errors = [op.error for op in routed]
    return n_inter, depth, busy, errors


def random_episode(env, circuit, seed, rng, episode=0, fidelity_noise=True):
    """Drive ``env`` with uniformly random legal actions (commit when forced).

    Returns (placements, rewards) where placements maps logical -> (chip, slot) in
    the order PLACE actions were taken.
    """
    env.reset(circuit, seed, episode)
    placements, rewards = {}, []
    while not env.state.done:
        legal = env.legal_actions()
        a = legal[int(rng.integers(len(legal)))]
        n_pred = float(rng.uniform(0.0, 0.15)) if fidelity_noise else None
        if a.kind == "PLACE":
            placements[env.order[env.state.cursor]] = (a.chip, a.a)
        _, r, _ = env.step(a, n_pred)
        rewards.append(r)
    return placements, rewards


def _clamp_err(x):
    return float(min(max(x, 0.0), np.nextafter(1.0, 0.0)))


def replay_schedule(hw, circuit, placements, routed, noise_log, fidelity_model="additive"):
    """Rebuild an episode from its placements and routed records, without env code.

    Positions are tracked from the placements and swap records; every gate record
    must sit on the tracked sites, every local gate and swap must be on adjacent
    slots, and the executed gates must cover the circuit in order. Returns
    (n_inter, depth, fidelity).
    """
    pos = dict(placements)
    executed = []
    n_inter = 0
    hops = {}
    level = np.zeros(circuit.n_qubits, dtype=int)
    busy = np.zeros(circuit.n_qubits)
    err_sum, log_keep = 0.0, 0.0
    calib = hw.calib
    for op in routed:
        noise = noise_log[op.noise_step]
        if op.kind == "swap":
            (chip, a), (_, b) = op.sites
            assert hw.local_adjacent(a, b)
            for q in op.logical:
                pos[q] = (chip, b) if pos[q] == (chip, a) else (chip, a)
            f = 0.5 * (hw.f2q_intra[chip, a] + hw.f2q_intra[chip, b])
            err = 3 * _clamp_err(1.0 - f + noise[chip])
        else:
            g = circuit.gates[op.gate]
            assert op.logical == g.qubits
            sites = tuple(pos[q] for q in g.qubits)
            assert op.sites == sites
            if op.kind == "1q":
                (chip, loc), = sites
                err = _clamp_err(1.0 - hw.f1q[chip, loc] + noise[chip])
                executed.append(op.gate)
            elif op.kind == "2q":
                (c0, l0), (c1, l1) = sites
                assert c0 == c1 and hw.local_adjacent(l0, l1)
                f = 0.5 * (hw.f2q_intra[c0, l0] + hw.f2q_intra[c0, l1])
                err = _clamp_err(1.0 - f + noise[c0])
                executed.append(op.gate)
            else:
                (c0, l0), (c1, l1) = sites
                u, v = op.chips
                assert c0 != c1 and chips_adjacent(hw, u, v)
                hops[op.gate] = hops.get(op.gate, 0) + 1
                f = 0.5 * (hw.f2q_inter[c0, l0] + hw.f2q_inter[c1, l1])
                err = _clamp_err(1.0 - f + 0.5 * (noise[u] + noise[v]))
                if not executed or executed[-1] != op.gate:
                    executed.append(op.gate)
                    n_inter += hw.chip_distance(c0, c1)
        assert err == op.error
        err_sum += err
        log_keep += math.log1p(-min(err, 1.0 - 1e-12))
        d = 1 + max((int(level[q]) for q in op.logical), default=0)
        for q in op.logical:
            level[q] = d
            busy[q] += op.duration
    assert executed == list(range(len(circuit.gates)))
    assert sum(hops.values()) == n_inter
    depth = int(level.max(initial=0))
    decoherence = float(busy.sum()) / calib.T2
    if fidelity_model == "additive":
        fid = max(0.0, 1.0 - err_sum - decoherence)
    else:
        fid = math.exp(log_keep - decoherence)
    return n_inter, depth, fid
