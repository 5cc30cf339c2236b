"""Noise predictor (bidirectional LSTM), attention encoder and dueling Q-head."""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, RunningStats, ShapeError, Tensor
from .noise import HISTORY_LEN, MAX_NOISE

DNA_L2 = 1e-5
NOISY_SIGMA0 = 0.5


class Module:
    """Flat, ordered container of named parameters and batch-norm statistics."""

    def __init__(self):
        self.params: dict[str, Parameter] = {}
        self.stats: dict[str, RunningStats] = {}

    def _param(self, name: str, data) -> Parameter:
        p = Parameter(data, name=name)
        self.params[name] = p
        return p

    def parameters(self) -> list[Parameter]:
        return list(self.params.values())

    def n_parameters(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {k: p.data.copy() for k, p in self.params.items()}
        for k, st in self.stats.items():
            out[f"{k}.running_mean"] = st.mean.copy()
            out[f"{k}.running_var"] = st.var.copy()
        return out

    def load_state_dict(self, d: dict[str, np.ndarray]) -> None:
        from .checkpoint import match_arrays
        match_arrays(self.state_dict(), d, type(self).__name__)
        for k, p in self.params.items():
            p.data = np.array(d[k], dtype=np.float64)
        for k, st in self.stats.items():
            st.mean = np.array(d[f"{k}.running_mean"], dtype=np.float64)
            st.var = np.array(d[f"{k}.running_var"], dtype=np.float64)

    def copy_from(self, other: "Module") -> None:
        self.load_state_dict(other.state_dict())


def _uniform(rng, fan_in: int, shape):
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def lstm_sequence(x: Tensor, W: Tensor, b: Tensor, reverse: bool = False):
    """Unroll one LSTM direction over (B, L, in); returns the (B, L, h) output sequence.

    The input projection is computed for all steps at once; only the recurrent
    product runs per step. Equivalent to calling ``lstm_cell`` at every step.
    """
    B, L, d_in = x.shape
    h_dim = W.shape[0] // 4
    zx = ad.linear(x, W[:, :d_in], b)
    Wh = W[:, d_in:]
    h = Tensor(np.zeros((B, h_dim)))
    c = Tensor(np.zeros((B, h_dim)))
    outs = [None] * L
    for t in (range(L - 1, -1, -1) if reverse else range(L)):
        z = zx[:, t] + ad.linear(h, Wh)
        i = ad.sigmoid(z[:, 0:h_dim])
        f = ad.sigmoid(z[:, h_dim:2 * h_dim])
        g = ad.tanh(z[:, 2 * h_dim:3 * h_dim])
        o = ad.sigmoid(z[:, 3 * h_dim:])
        c = f * c + i * g
        h = o * ad.tanh(c)
        outs[t] = h
    return ad.stack(outs, axis=1)


class DNAPredictor(Module):
    """Stacked (bi)LSTM over a length-L history followed by a normalised MLP head.

    Output is sigmoid(.) * 0.15, one noise level per chip.
    """

    def __init__(self, in_dim: int, M: int, hidden: int = 128, layers: int = 2,
                 head=(128, 64), bidirectional: bool = True, dropout: float = 0.2,
                 norm: str = "batch", seq_len: int = HISTORY_LEN, seed: int = 0):
        super().__init__()
        if norm not in ("batch", "layer"):
            raise ValueError(f"norm must be 'batch' or 'layer', got {norm!r}")
        rng = np.random.default_rng(seed)
        self.in_dim, self.M, self.hidden = in_dim, M, hidden
        self.bidirectional, self.dropout, self.norm = bidirectional, dropout, norm
        self.seq_len, self.layers = seq_len, layers
        dirs = ("f", "b") if bidirectional else ("f",)
        width = in_dim
        for layer in range(layers):
            for d in dirs:
                fan = width + hidden
                self._param(f"lstm{layer}{d}.W", _uniform(rng, fan, (4 * hidden, fan)))
                bias = np.zeros(4 * hidden)
                bias[hidden:2 * hidden] = 1.0
                self._param(f"lstm{layer}{d}.b", bias)
            width = hidden * len(dirs)
        self.out_width = width
        dims = [width, *head]
        for j, (a, b) in enumerate(zip(dims, dims[1:])):
            self._param(f"head{j}.W", _uniform(rng, a, (b, a)))
            self._param(f"head{j}.b", np.zeros(b))
            self._param(f"head{j}.gamma", np.ones(b))
            self._param(f"head{j}.beta", np.zeros(b))
            self.stats[f"head{j}"] = RunningStats(b)
        self.n_hidden_head = len(head)
        self._param("out.W", _uniform(rng, dims[-1], (M, dims[-1])))
        self._param("out.b", np.zeros(M))

    def regularized(self) -> list[Parameter]:
        return self.parameters()

    def forward(self, x, train: bool = False, rng: np.random.Generator | None = None) -> Tensor:
        x = ad.as_tensor(x)
        if x.ndim == 2:
            x = x.reshape(1, *x.shape)
        if x.shape[1] != self.seq_len:
            raise ShapeError(f"history length {x.shape[1]} != {self.seq_len}")
        if x.shape[2] != self.in_dim:
            raise ShapeError(f"feature width {x.shape[2]} != {self.in_dim}")
        p = self.params
        seq = x
        for layer in range(self.layers):
            if layer > 0:
                seq = ad.dropout(seq, self.dropout, rng, train)
            fwd = lstm_sequence(seq, p[f"lstm{layer}f.W"], p[f"lstm{layer}f.b"])
            if self.bidirectional:
                bwd = lstm_sequence(seq, p[f"lstm{layer}b.W"], p[f"lstm{layer}b.b"], reverse=True)
                seq = ad.concat([fwd, bwd], axis=-1)
                last = ad.concat([fwd[:, -1], bwd[:, 0]], axis=-1)
            else:
                seq = fwd
                last = fwd[:, -1]
        z = ad.dropout(last, self.dropout, rng, train)
        for j in range(self.n_hidden_head):
            z = ad.linear(z, p[f"head{j}.W"], p[f"head{j}.b"])
            if self.norm == "batch":
                z = ad.batchnorm(z, p[f"head{j}.gamma"], p[f"head{j}.beta"],
                                 self.stats[f"head{j}"], train)
            else:
                z = ad.layernorm(z, p[f"head{j}.gamma"], p[f"head{j}.beta"])
            z = ad.dropout(ad.relu(z), self.dropout, rng, train)
        return ad.sigmoid(ad.linear(z, p["out.W"], p["out.b"])) * MAX_NOISE

    def predict(self, x) -> np.ndarray:
        with ad.no_grad():
            return self.forward(x, train=False).data


def dna_loss(pred, target, params=(), lam: float = DNA_L2) -> Tensor:
    """Batch mean of squared error norms plus lam * sum of squared parameters."""
    pred = ad.as_tensor(pred)
    target = ad.as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction {pred.shape} vs target {target.shape}")
    d = pred - target
    sq = (d * d).sum(axis=-1) if d.ndim > 1 else (d * d).sum()
    loss = sq.mean()
    if lam and params:
        loss = loss + lam * ad.add_n([(w * w).sum() for w in params])
    return loss


class AttentionEncoder(Module):
    """Token projection, multi-head self-attention with output projection, masked mean-pool."""

    def __init__(self, token_dim: int, d_model: int = 256, heads: int = 8, seed: int = 0):
        super().__init__()
        if d_model % heads:
            raise ValueError(f"d_model {d_model} not divisible by {heads} heads")
        rng = np.random.default_rng(seed)
        self.token_dim, self.d_model, self.heads = token_dim, d_model, heads
        self.d_k = d_model // heads
        self._param("in.W", _uniform(rng, token_dim, (d_model, token_dim)))
        self._param("in.b", np.zeros(d_model))
        for name in ("q", "k", "v", "o"):
            self._param(f"{name}.W", _uniform(rng, d_model, (d_model, d_model)))

    def forward(self, tokens, mask=None):
        """tokens (B, T, F) or (T, F); returns (pooled (B, d_model), attention (B, h, T, T))."""
        x = ad.as_tensor(tokens)
        if x.ndim == 2:
            x = x.reshape(1, *x.shape)
        B, T, _ = x.shape
        if T < 1:
            raise ShapeError("attention needs at least one token")
        mask = np.ones((B, T), dtype=bool) if mask is None else np.asarray(mask, bool).reshape(B, T)
        p = self.params
        h, dk = self.heads, self.d_k
        e = ad.linear(x, p["in.W"], p["in.b"])

        def split(w):
            return ad.transpose(ad.linear(e, w).reshape(B, T, h, dk), (0, 2, 1, 3))

        q, k, v = split(p["q.W"]), split(p["k.W"]), split(p["v.W"])
        scores = ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))) * (1.0 / math.sqrt(dk))
        # padded keys get a large negative additive bias, so they receive zero weight
        bias = np.where(mask, 0.0, -1e9)[:, None, None, :]
        attn = ad.softmax(scores + bias, axis=-1)
        heads_out = ad.transpose(ad.matmul(attn, v), (0, 2, 1, 3)).reshape(B, T, self.d_model)
        out = ad.linear(heads_out, p["o.W"])
        w = (mask / mask.sum(axis=1, keepdims=True))[:, :, None]
        return (out * w).sum(axis=1), attn.data


def dueling_combine(value, adv):
    """Q = V + A - mean_a A."""
    value, adv = ad.as_tensor(value), ad.as_tensor(adv)
    return value + adv - adv.mean(axis=-1, keepdims=True)


def _scaled_noise(rng, size):
    x = rng.standard_normal(size)
    return np.sign(x) * np.sqrt(np.abs(x))


class DuelingQHead(Module):
    """Two-layer ReLU trunk, value and advantage branches, optional factorised noisy branches."""

    def __init__(self, in_dim: int, n_actions: int, hidden: int = 256, dueling: bool = True,
                 noisy: bool = True, sigma0: float = NOISY_SIGMA0, seed: int = 0):
        super().__init__()
        rng = np.random.default_rng(seed)
        self.in_dim, self.n_actions, self.hidden = in_dim, n_actions, hidden
        self.dueling, self.noisy, self.sigma0 = dueling, noisy, sigma0
        self._param("trunk0.W", _uniform(rng, in_dim, (hidden, in_dim)))
        self._param("trunk0.b", np.zeros(hidden))
        self._param("trunk1.W", _uniform(rng, hidden, (hidden, hidden)))
        self._param("trunk1.b", np.zeros(hidden))
        branches = [("adv", n_actions)] + ([("value", 1)] if dueling else [])
        for name, out in branches:
            self._param(f"{name}.W", _uniform(rng, hidden, (out, hidden)))
            self._param(f"{name}.b", _uniform(rng, hidden, (out,)))
            if noisy:
                s = sigma0 / math.sqrt(hidden)
                self._param(f"{name}.sigma_W", np.full((out, hidden), s))
                self._param(f"{name}.sigma_b", np.full(out, s))

    def _branch(self, name, z, rng, deterministic):
        p = self.params
        W, b = p[f"{name}.W"], p[f"{name}.b"]
        if self.noisy and not deterministic:
            if rng is None:
                raise ValueError("noisy forward pass needs an rng (or deterministic=True)")
            out, inp = W.shape
            e_in, e_out = _scaled_noise(rng, inp), _scaled_noise(rng, out)
            W = W + p[f"{name}.sigma_W"] * np.outer(e_out, e_in)
            b = b + p[f"{name}.sigma_b"] * e_out
        return ad.linear(z, W, b)

    def branches(self, x, rng=None, deterministic: bool = False):
        p = self.params
        z = ad.relu(ad.linear(x, p["trunk0.W"], p["trunk0.b"]))
        z = ad.relu(ad.linear(z, p["trunk1.W"], p["trunk1.b"]))
        adv = self._branch("adv", z, rng, deterministic)
        value = self._branch("value", z, rng, deterministic) if self.dueling else None
        return value, adv

    def forward(self, x, rng=None, deterministic: bool = False) -> Tensor:
        value, adv = self.branches(ad.as_tensor(x), rng, deterministic)
        return adv if value is None else dueling_combine(value, adv)


def r_squared(pred: np.ndarray, target: np.ndarray) -> float:
    """Pooled coefficient of determination over all outputs."""
    pred, target = np.asarray(pred), np.asarray(target)
    ss_res = float(((target - pred) ** 2).sum())
    ss_tot = float(((target - target.mean(axis=0)) ** 2).sum())
    return 1.0 - ss_res / ss_tot if ss_tot > 0 else 0.0


def fit_dna(model: DNAPredictor, X: np.ndarray, Y: np.ndarray, epochs: int = 5,
            batch: int = 128, lr: float = 1e-3, lr_min: float = 1e-5, lam: float = DNA_L2,
            seed: int = 0, clip: float = 1.0) -> list[float]:
    """Minibatch AdamW on (X: (N, L, F), Y: (N, M)) with a cosine schedule; returns epoch losses."""
    from .optim import AdamW, cosine_lr

    rng = np.random.default_rng(seed)
    opt = AdamW(model.parameters(), lr=lr, clip_norm=clip)
    N = len(X)
    steps_per_epoch = max(1, N // batch)
    total = epochs * steps_per_epoch
    history = []
    step = 0
    for _ in range(epochs):
        perm = rng.permutation(N)
        losses = []
        for s in range(steps_per_epoch):
            idx = perm[s * batch:(s + 1) * batch]
            opt.zero_grad()
            loss = dna_loss(model.forward(X[idx], train=True, rng=rng), Y[idx],
                            model.regularized(), lam)
            loss.backward()
            opt.step(cosine_lr(step, total, lr, lr_min))
            losses.append(float(loss.data))
            step += 1
        history.append(float(np.mean(losses)))
    return history
