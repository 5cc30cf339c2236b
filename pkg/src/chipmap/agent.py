"""Rainbow-style DQN for the mapping MDP.

Online and target bundles each hold a noise predictor, an attention encoder and
a dueling Q-head. Training combines an importance-weighted Huber loss on
multi-step double-Q targets with the predictor's regression loss.
"""

from __future__ import annotations

import csv
import math
import pickle
from collections import deque
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import NonFiniteError
from .checkpoint import load_checkpoint, save_checkpoint
from .env import MappingEnv
from .networks import (AttentionEncoder, DNAPredictor, DuelingQHead, dna_loss, r_squared)
from .noise import step_noise
from .optim import AdamW, cosine_lr
from .replay import PrioritizedReplay, beta_schedule

ABLATIONS = ("no-dna", "no-attention", "no-per", "no-double", "no-dueling", "no-multistep",
             "no-noisy", "basic-dqn", "oracle-noise", "no-adaptation")
RAINBOW_PARTS = ("no-per", "no-double", "no-dueling", "no-multistep", "no-noisy")
METRIC_COLUMNS = ("episode", "circuit_id", "seed", "fidelity", "n_inter", "reward", "epsilon",
                  "dna_r2", "loss", "steps")
SEED_STREAMS = ("env", "explore", "noisy", "sample", "dropout", "init")


@dataclass
class AgentConfig:
    episodes: int = 500
    gamma: float = 0.99
    n_step: int = 3
    batch: int = 128
    buffer: int = 20_000
    alpha: float = 0.6
    beta0: float = 0.4
    eps_start: float = 1.0
    eps_min: float = 0.01
    eps_floor_episode: int = 400
    eps_schedule: str = "floor"  # floor | rate
    eps_rate: float = 0.995
    target_sync: int = 20
    dna_weight: float = 0.5
    dna_l2: float = 1e-5
    lr_max: float = 1e-3
    lr_min: float = 1e-5
    clip: float = 1.0
    weight_decay: float = 0.0
    huber_delta: float = 1.0
    reward_scale: float = 0.01
    warmup: int = 0  # extra transitions beyond one batch before learning starts
    dna_hidden: int = 128
    dna_layers: int = 2
    dna_head: tuple = (128, 64)
    dna_dropout: float = 0.2
    dna_norm: str = "batch"
    d_model: int = 256
    heads: int = 8
    trunk: int = 256
    sigma0: float = 0.5
    checkpoint_every: int = 50
    r2_window: int = 200
    seed: int = 0
    ablate: tuple = ()

    def __post_init__(self):
        self.dna_head = tuple(self.dna_head)
        self.ablate = tuple(self.ablate)
        bad = [a for a in self.ablate if a not in ABLATIONS]
        if bad:
            raise ValueError(f"unknown ablation(s) {bad}; choose from {ABLATIONS}")
        if self.eps_schedule not in ("floor", "rate"):
            raise ValueError(f"eps_schedule must be 'floor' or 'rate', got {self.eps_schedule!r}")
        if self.batch < 2:
            raise ValueError("batch must be >= 2 (batch-norm training statistics)")
        if self.n_step < 1:
            raise ValueError("n_step must be >= 1")

    def off(self, part: str) -> bool:
        return part in self.ablate or (part in RAINBOW_PARTS and "basic-dqn" in self.ablate)

    @property
    def use_dna(self) -> bool:
        return not any(a in self.ablate for a in ("no-dna", "no-adaptation", "oracle-noise"))

    @property
    def effective_n(self) -> int:
        return 1 if self.off("no-multistep") else self.n_step

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dna_head"] = list(self.dna_head)
        d["ablate"] = list(self.ablate)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AgentConfig":
        names = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - names)
        if unknown:
            raise ValueError(f"unknown agent config keys {unknown}")
        return cls(**d)


def epsilon(episode: int, cfg: AgentConfig | None = None) -> float:
    cfg = cfg or AgentConfig()
    if cfg.eps_schedule == "rate":
        r = cfg.eps_rate
    else:
        r = (cfg.eps_min / cfg.eps_start) ** (1.0 / cfg.eps_floor_episode)
    return float(min(cfg.eps_start, max(cfg.eps_min, cfg.eps_start * r ** episode)))


@dataclass
class Transition:
    obs: dict
    action: int
    reward: float
    next_obs: dict
    done: bool
    noise: np.ndarray
    next_mask: np.ndarray
    discount: float  # gamma ** (steps accumulated)


class NStepAccumulator:
    """Folds single steps into n-step transitions; flushes the tail at episode end."""

    def __init__(self, n: int, gamma: float):
        self.n, self.gamma = n, gamma
        self.pending: deque = deque()

    def push(self, obs, action, reward, noise, next_obs, done) -> list[Transition]:
        self.pending.append((obs, action, reward, noise))
        out = []
        if len(self.pending) == self.n and not done:
            out.append(self._emit(next_obs, False))
            self.pending.popleft()
        if done:
            while self.pending:
                out.append(self._emit(next_obs, True))
                self.pending.popleft()
        return out

    def _emit(self, next_obs, done) -> Transition:
        ret = 0.0
        for k, (_, _, r, _) in enumerate(self.pending):
            ret += self.gamma ** k * r
        obs, action, _, noise = self.pending[0]
        return Transition(obs, action, ret, next_obs, done, noise, next_obs["mask"],
                          self.gamma ** len(self.pending))

    def reset(self) -> None:
        self.pending.clear()


def td_target(rewards, dones, discounts, q_online_next, q_target_next, next_masks,
              double: bool = True) -> np.ndarray:
    """y = R_n + gamma^n * Q_target(s', a*), a* chosen over legal actions; y = R_n when done."""
    rewards = np.asarray(rewards, dtype=np.float64)
    dones = np.asarray(dones, dtype=bool)
    masks = np.asarray(next_masks, dtype=bool)
    q_on = np.asarray(q_online_next, dtype=np.float64)
    q_tg = np.asarray(q_target_next, dtype=np.float64)
    rows = np.arange(len(rewards))
    if double:
        a_star = np.argmax(np.where(masks, q_on, -np.inf), axis=1)
        boot = q_tg[rows, a_star]
    else:
        boot = np.max(np.where(masks, q_tg, -np.inf), axis=1)
    live = ~dones & masks.any(axis=1)
    return rewards + np.where(live, np.asarray(discounts) * np.where(live, boot, 0.0), 0.0)


def stack_obs(obs_list) -> dict:
    return {k: np.stack([o[k] for o in obs_list]) for k in obs_list[0]}


class QBundle:
    """Noise predictor + encoder + Q-head, acting as one Q-function."""

    def __init__(self, cfg: AgentConfig, dims: dict, seed: int):
        self.cfg, self.dims = cfg, dims
        ss = np.random.SeedSequence(seed).spawn(3)
        s = [int(x.generate_state(1)[0]) for x in ss]
        self.dna = (DNAPredictor(dims["state_dim"], dims["M"], cfg.dna_hidden, cfg.dna_layers,
                                 cfg.dna_head, True, cfg.dna_dropout, cfg.dna_norm,
                                 dims["seq_len"], s[0]) if cfg.use_dna else None)
        self.attention = (None if cfg.off("no-attention") else
                          AttentionEncoder(dims["token_dim"], cfg.d_model, cfg.heads, s[1]))
        q_in = (dims["state_dim"] if self.attention is None else cfg.d_model + 5)
        q_in += dims["M"] if self.dna is not None else 0
        self.qhead = DuelingQHead(q_in, dims["n_actions"], cfg.trunk,
                                  dueling=not cfg.off("no-dueling"),
                                  noisy=not cfg.off("no-noisy"), sigma0=cfg.sigma0, seed=s[2])

    def modules(self) -> dict:
        mods = {"dna": self.dna, "attention": self.attention, "qhead": self.qhead}
        return {k: m for k, m in mods.items() if m is not None}

    def parameters(self):
        return [p for m in self.modules().values() for p in m.parameters()]

    def copy_from(self, other: "QBundle") -> None:
        for k, m in self.modules().items():
            m.copy_from(other.modules()[k])

    def forward(self, obs: dict, train: bool, rng_noisy=None, rng_drop=None,
                deterministic: bool = False):
        """Returns (Q tensor (B, A), predicted noise tensor (B, M) or None)."""
        window = obs["window"]
        pred = None
        if self.dna is not None:
            pred = self.dna.forward(window, train=train, rng=rng_drop)
        if self.attention is not None:
            emb, _ = self.attention.forward(obs["tokens"], obs["token_mask"])
            feats = [emb, ad.Tensor(obs["globals"])]
        else:
            feats = [ad.Tensor(window[:, -1])]
        if pred is not None:
            feats.append(pred.detach())
        q = self.qhead.forward(ad.concat(feats, axis=-1), rng=rng_noisy,
                               deterministic=deterministic)
        return q, pred


def masked_argmax(q: np.ndarray, mask: np.ndarray) -> int:
    return int(np.argmax(np.where(mask, q, -np.inf)))


def peek_next_noise(env: MappingEnv) -> np.ndarray:
    """The noise the env will draw on its next step, without consuming its stream."""
    rng = np.random.Generator(type(env.rng.bit_generator)())
    rng.bit_generator.state = env.rng.bit_generator.state
    return step_noise(env.state.noise, env.noise_params, rng, env.config.history_len).total


class Agent:
    def __init__(self, cfg: AgentConfig, dims: dict, seed: int | None = None):
        self.cfg, self.dims = cfg, dims
        seed = cfg.seed if seed is None else seed
        streams = np.random.SeedSequence(seed).spawn(len(SEED_STREAMS))
        self.rngs = {k: np.random.default_rng(s) for k, s in zip(SEED_STREAMS, streams)}
        init_seed = int(self.rngs["init"].integers(2 ** 31))
        self.online = QBundle(cfg, dims, init_seed)
        self.target = QBundle(cfg, dims, init_seed)
        self.target.copy_from(self.online)
        self.opt = AdamW(self.online.parameters(), lr=cfg.lr_max, weight_decay=cfg.weight_decay,
                         clip_norm=cfg.clip)
        self.buffer = PrioritizedReplay(cfg.buffer, cfg.alpha, prioritized=not cfg.off("no-per"))
        self.accumulator = NStepAccumulator(cfg.effective_n, cfg.gamma)
        self.optim_steps = 0
        self.last_priorities = None

    # acting
    def noise_estimate(self, env: MappingEnv, obs: dict):
        """Returns (n_pred for the reward weight, predicted vector or None)."""
        if "no-adaptation" in self.cfg.ablate:
            return 0.05, None
        if "oracle-noise" in self.cfg.ablate:
            return float(peek_next_noise(env).mean()), None
        if self.online.dna is None:
            return None, None
        pred = self.online.dna.predict(obs["window"][None])[0]
        return float(pred.mean()), pred

    def q_values(self, obs: dict, explore: bool) -> np.ndarray:
        batch = {k: v[None] for k, v in obs.items()}
        with ad.no_grad():
            q, _ = self.online.forward(batch, train=False, rng_noisy=self.rngs["noisy"],
                                       deterministic=not explore)
        return q.data[0]

    def act(self, obs: dict, eps: float, explore: bool = True) -> int:
        legal = np.flatnonzero(obs["mask"])
        if len(legal) == 0:
            raise RuntimeError("no legal actions in a live state")
        u = self.rngs["explore"].random()
        if explore and u < eps:
            return int(self.rngs["explore"].choice(legal))
        return masked_argmax(self.q_values(obs, explore), obs["mask"])

    # learning
    def ready(self) -> bool:
        return len(self.buffer) >= self.cfg.batch + self.cfg.warmup

    def train_step(self, beta: float, lr: float) -> float:
        cfg = self.cfg
        items, idx, weights = self.buffer.sample(cfg.batch, beta, self.rngs["sample"])
        obs = stack_obs([t.obs for t in items])
        nxt = stack_obs([t.next_obs for t in items])
        actions = np.array([t.action for t in items])
        rewards = np.array([t.reward for t in items])
        dones = np.array([t.done for t in items])
        discounts = np.array([t.discount for t in items])
        noise = np.stack([t.noise for t in items])
        with ad.no_grad():
            q_on, _ = self.online.forward(nxt, train=False, rng_noisy=self.rngs["noisy"])
            q_tg, _ = self.target.forward(nxt, train=False, rng_noisy=self.rngs["noisy"])
        y = td_target(rewards, dones, discounts, q_on.data, q_tg.data, nxt["mask"],
                      double=not cfg.off("no-double"))

        self.opt.zero_grad()
        q, pred = self.online.forward(obs, train=True, rng_noisy=self.rngs["noisy"],
                                      rng_drop=self.rngs["dropout"])
        q_sa = q[np.arange(cfg.batch), actions]
        td = q_sa.data - y
        loss = (ad.huber(q_sa - y, cfg.huber_delta) * weights).mean()
        if pred is not None and cfg.dna_weight:
            loss = loss + cfg.dna_weight * dna_loss(pred, noise, self.online.dna.regularized(),
                                                    cfg.dna_l2)
        if not np.isfinite(loss.data):
            raise NonFiniteError(f"non-finite loss; actions={actions.tolist()} "
                                 f"rewards={rewards.tolist()} targets={y.tolist()}")
        loss.backward()
        self.opt.step(lr)
        self.last_priorities = self.buffer.update_priorities(idx, td)
        self.optim_steps += 1
        if self.optim_steps % cfg.target_sync == 0:
            self.target.copy_from(self.online)
        return float(loss.data)

    # persistence
    def sections(self) -> dict:
        out = {k: m.state_dict() for k, m in self.online.modules().items()}
        out.update({f"target_{k}": m.state_dict() for k, m in self.target.modules().items()})
        out["optimizer"] = self.opt.state_dict()
        return out

    def save(self, path, meta: dict | None = None) -> None:
        info = {"config": self.cfg.to_dict(), "dims": self.dims,
                "optim_steps": self.optim_steps}
        info.update(meta or {})
        save_checkpoint(path, self.sections(), info)

    @classmethod
    def load(cls, path) -> tuple["Agent", dict]:
        sections, meta = load_checkpoint(path)
        agent = cls(AgentConfig.from_dict(meta["config"]), meta["dims"])
        for k, m in agent.online.modules().items():
            m.load_state_dict(sections[k])
        for k, m in agent.target.modules().items():
            m.load_state_dict(sections[f"target_{k}"])
        agent.opt.load_state_dict(sections["optimizer"])
        agent.optim_steps = int(meta.get("optim_steps", 0))
        return agent, meta


def env_dims(env: MappingEnv) -> dict:
    return {"state_dim": len(env.encode_state()), "token_dim": env.token_dim(),
            "M": env.hw.M, "n_actions": env.n_actions, "seq_len": env.config.history_len,
            "n_pad": env.n_pad}


def run_episode(agent: Agent, env: MappingEnv, circuit, seed: int, episode: int,
                eps: float, learn: bool, beta: float = 1.0, lr: float = 0.0,
                r2_log: deque | None = None):
    """Roll out one episode; returns a metrics dict (reward is the unscaled sum)."""
    cfg = agent.cfg
    env.reset(circuit, seed, episode)
    agent.accumulator.reset()
    obs = env.observation()
    total, losses, steps = 0.0, [], 0
    while True:
        n_pred, pred = agent.noise_estimate(env, obs)
        action = agent.act(obs, eps, explore=learn)
        s, reward, done = env.step(int(action), n_pred)
        total += reward
        steps += 1
        if pred is not None and r2_log is not None:
            r2_log.append((pred, s.noise.total.copy()))
        nxt = env.observation()
        if learn:
            for tr in agent.accumulator.push(obs, int(action), reward * cfg.reward_scale,
                                             s.noise.total.copy(), nxt, done):
                agent.buffer.push(tr)
            if agent.ready():
                losses.append(agent.train_step(beta, lr))
        obs = nxt
        if done:
            break
    r2 = math.nan
    if r2_log is not None and len(r2_log) >= 10:
        p, t = zip(*r2_log)
        r2 = r_squared(np.array(p), np.array(t))
    return {"episode": episode, "circuit_id": circuit.circuit_id, "seed": seed,
            "fidelity": env.fidelity(),
            "n_inter": s.n_inter, "reward": total, "epsilon": eps, "dna_r2": r2,
            "loss": float(np.mean(losses)) if losses else math.nan, "steps": steps}


def _fmt(v):
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


def write_metrics(path, rows: list[dict], ablate=()) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# ablate={','.join(ablate) or 'none'}\n")
        w = csv.writer(fh)
        w.writerow(METRIC_COLUMNS)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in METRIC_COLUMNS])


@dataclass
class TrainingRun:
    agent: Agent
    metrics: list = field(default_factory=list)
    episode: int = 0
    env_rng: np.random.Generator | None = None
    r2_log: deque | None = None


def run_training(cfg: AgentConfig, env: MappingEnv, circuits, out_dir=None,
                 resume: bool = False, log=None, stop_after: int | None = None) -> TrainingRun:
    """Train for ``cfg.episodes`` episodes, sampling one circuit per episode.

    With ``out_dir`` set, writes metrics.csv each episode and a checkpoint plus a
    resumable state file every ``checkpoint_every`` episodes and at the end.
    ``stop_after`` ends the run early (after that many episodes in total) as if
    interrupted.
    """
    if not circuits:
        raise ValueError("no training circuits")
    out = Path(out_dir) if out_dir is not None else None
    state_file = out / "train_state.pkl" if out is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    if resume and state_file is not None and state_file.exists():
        with open(state_file, "rb") as fh:
            run = pickle.load(fh)
    else:
        env.reset(circuits[0], 0)
        run = TrainingRun(Agent(cfg, env_dims(env)),
                          env_rng=np.random.default_rng(np.random.SeedSequence(cfg.seed)
                                                        .spawn(1)[0]),
                          r2_log=deque(maxlen=cfg.r2_window))
    agent = run.agent
    last = cfg.episodes if stop_after is None else min(cfg.episodes, stop_after)
    while run.episode < last:
        e = run.episode
        circuit = circuits[int(run.env_rng.integers(len(circuits)))]
        seed = int(run.env_rng.integers(2 ** 31))
        row = run_episode(agent, env, circuit, seed, e, epsilon(e, cfg), learn=True,
                          beta=beta_schedule(e, cfg.episodes, cfg.beta0),
                          lr=cosine_lr(e, cfg.episodes, cfg.lr_max, cfg.lr_min),
                          r2_log=run.r2_log)
        run.metrics.append(row)
        run.episode += 1
        if log is not None:
            log(row)
        if out is not None:
            write_metrics(out / "metrics.csv", run.metrics, cfg.ablate)
            if run.episode % cfg.checkpoint_every == 0 or run.episode == last:
                agent.save(out / "checkpoint.zip", {"episode": run.episode})
                with open(state_file, "wb") as fh:
                    pickle.dump(run, fh)
    return run


def evaluate_agent(agent: Agent, env: MappingEnv, circuit, seed: int, episode: int = 0):
    """Greedy rollout (no exploration, noise-free Q-head); returns the final state."""
    run_episode(agent, env, circuit, seed, episode, 0.0, learn=False)
    return env.state
