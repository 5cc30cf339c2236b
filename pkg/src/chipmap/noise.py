"""Per-chip temporal noise: thermal AR(1), OU drift, measurement spikes."""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, replace

import numpy as np

from .hardware import Hardware

MAX_NOISE = 0.15
HISTORY_LEN = 10
GATE_CLASSES = ("1q", "2q-intra", "2q-inter")


@dataclass(frozen=True)
class NoiseParams:
    rho: float = math.exp(-1.0 / 10.0)
    sigma_th: float = 0.01
    ou_rate: float = 0.1
    ou_sigma: float = 0.02
    spike_mag: float = 0.05
    spike_len: int = 5
    spike_prob: float = 0.01
    dt: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.rho < 1.0:
            raise ValueError(f"rho must be in [0, 1), got {self.rho}")
        if min(self.sigma_th, self.ou_sigma, self.spike_mag) < 0:
            raise ValueError("noise scales must be non-negative")
        if not 0.0 <= self.ou_rate <= 1.0:
            raise ValueError("ou_rate must lie in [0, 1] for the Euler step")
        if self.spike_len < 1:
            raise ValueError("spike_len must be >= 1")

    @classmethod
    def from_correlation_time(cls, tau_us: float = 10.0, dt: float = 1.0, **kw):
        return cls(rho=math.exp(-dt / tau_us), dt=dt, **kw)

    @property
    def ou_innovation(self) -> float:
        # exact stationary std for drift' = (1 - r) drift + s xi
        r = self.ou_rate
        return self.ou_sigma * math.sqrt(2 * r - r * r)


@dataclass(frozen=True)
class NoiseState:
    t: int
    eta: np.ndarray
    drift: np.ndarray
    spikes: np.ndarray  # steps of spike left after this one
    spike: np.ndarray  # spike contribution at this step
    total: np.ndarray
    history: np.ndarray  # (<= HISTORY_LEN, M), oldest first

    @property
    def M(self) -> int:
        return len(self.eta)


def initial_noise(M: int) -> NoiseState:
    z = np.zeros(M)
    return NoiseState(0, z, z, np.zeros(M, dtype=int), z, z, np.zeros((0, M)))


def step_noise(ns: NoiseState, p: NoiseParams, rng: np.random.Generator,
               history_len: int = HISTORY_LEN) -> NoiseState:
    M = ns.M
    xi = rng.standard_normal(M)
    xi_ou = rng.standard_normal(M)
    arrivals = rng.random(M) < p.spike_prob
    eta = p.rho * ns.eta + p.sigma_th * xi
    drift = ns.drift - p.ou_rate * ns.drift + p.ou_innovation * xi_ou
    spikes = np.where(arrivals, p.spike_len, ns.spikes)
    spike = np.where(spikes > 0, p.spike_mag, 0.0)
    total = np.clip(eta + drift + spike, 0.0, MAX_NOISE)
    spikes = np.maximum(spikes - 1, 0)
    history = np.vstack([ns.history, total])[-history_len:]
    return NoiseState(ns.t + 1, eta, drift, spikes, spike, total, history)


def inject_spike(ns: NoiseState, chip: int, p: NoiseParams) -> NoiseState:
    """Arm a spike on ``chip``; it lasts ``spike_len`` subsequent steps. Re-arming resets."""
    if not 0 <= chip < ns.M:
        raise IndexError(f"chip {chip} out of range for {ns.M} chips")
    spikes = ns.spikes.copy()
    spikes[chip] = p.spike_len
    return replace(ns, spikes=spikes)


def warmed_noise(M: int, p: NoiseParams, rng: np.random.Generator,
                 steps: int = HISTORY_LEN) -> NoiseState:
    ns = initial_noise(M)
    for _ in range(steps):
        ns = step_noise(ns, p, rng)
    return ns


def gate_error(hw: Hardware, gate_class: str, ns: NoiseState, chip: int,
               other_chip: int | None = None, fidelity: float | None = None) -> float:
    """Baseline infidelity plus current chip noise, clamped to [0, 1).

    ``fidelity`` overrides the nominal calibration mean (e.g. a per-qubit sample).
    For inter-chip gates the noise of both endpoint chips is averaged.
    """
    if not 0 <= chip < hw.M:
        raise IndexError(f"chip {chip} out of range")
    c = hw.calib
    nominal = {"1q": c.f1q_mean, "2q-intra": c.f2q_intra_mean,
               "2q-inter": c.f2q_inter_mean}
    if gate_class not in nominal:
        raise ValueError(f"unknown gate class {gate_class!r}")
    f = nominal[gate_class] if fidelity is None else fidelity
    noise = ns.total[chip]
    if gate_class == "2q-inter":
        noise = 0.5 * (noise + ns.total[chip if other_chip is None else other_chip])
    return float(min(max(1.0 - f + noise, 0.0), np.nextafter(1.0, 0.0)))


def simulate_telemetry(M: int, steps: int, p: NoiseParams, seed: int):
    """Run the simulator for ``steps`` steps; returns stacked component arrays."""
    rng = np.random.default_rng(seed)
    ns = initial_noise(M)
    out = {k: np.empty((steps, M)) for k in ("eta", "drift", "spike", "total")}
    out["spike_left"] = np.empty((steps, M), dtype=int)
    for t in range(steps):
        ns = step_noise(ns, p, rng)
        out["eta"][t] = ns.eta
        out["drift"][t] = ns.drift
        out["spike"][t] = ns.spike
        out["total"][t] = ns.total
        out["spike_left"][t] = ns.spikes
    return out


def write_telemetry(path, rows) -> None:
    """``rows``: iterable of (step, chip, eta, drift, spike, total)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "chip", "eta", "drift", "spike", "total"])
        for r in rows:
            w.writerow([r[0], r[1]] + [repr(float(x)) for x in r[2:]])


def telemetry_hash(totals) -> str:
    arr = np.ascontiguousarray(np.asarray(totals, dtype=np.float64))
    return hashlib.sha256(arr.tobytes()).hexdigest()[:16]


def telemetry_windows(tel: dict, history_len: int = HISTORY_LEN):
    """Supervised pairs from a telemetry run.

    Inputs are per-step features [eta, drift, spike, total] / MAX_NOISE for every
    chip over ``history_len`` steps, shape (N, history_len, 4M); targets are the
    next-step totals, shape (N, M).
    """
    feats = np.concatenate([tel[k] for k in ("eta", "drift", "spike", "total")], axis=1)
    feats = feats / MAX_NOISE
    T = len(feats)
    if T <= history_len:
        raise ValueError(f"need more than {history_len} steps, got {T}")
    idx = np.arange(history_len)[None, :] + np.arange(T - history_len)[:, None]
    return feats[idx], tel["total"][history_len:]
