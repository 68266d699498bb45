"""Single-layer LSTM baseline with a linear head, trained by full BPTT.

Gate order in the stacked weights is ``[input, forget, output, candidate]``::

    i, f, o = sigmoid(...), g = tanh(...)
    c = f * c_prev + i * g
    h = o * tanh(c)
    y = W_y h + b_y

Inputs and targets are standardised per dimension with statistics from the
training split (stored in the model); losses are measured in that
standardised space.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import serialize
from .errors import DimensionMismatch, EmptyBatch, NonFiniteLoss, Untrained
from .optim import Adam, clip_global_norm

PARAM_NAMES = ("Wx", "Wh", "b", "Wy", "by")


@dataclass(frozen=True)
class LstmConfig:
    hidden_size: int = 64
    learning_rate: float = 2e-3
    epochs: int = 500
    batch_size: int = 32
    clip_norm: float = 1.0
    final_lr_fraction: float = 0.01
    adam_beta2: float = 0.9999
    target_mode: str = "full"
    seed: int = 0

    def __post_init__(self):
        if self.hidden_size < 1:
            raise ValueError("hidden_size must be >= 1")
        if self.target_mode not in ("full", "positions"):
            raise ValueError("target_mode must be 'full' or 'positions'")


@dataclass
class LstmModel:
    Wx: np.ndarray
    Wh: np.ndarray
    b: np.ndarray
    Wy: np.ndarray
    by: np.ndarray
    config: LstmConfig = field(default_factory=LstmConfig)
    x_mean: np.ndarray | None = None
    x_std: np.ndarray | None = None
    y_mean: np.ndarray | None = None
    y_std: np.ndarray | None = None
    history: list = field(default_factory=list)

    def __post_init__(self):
        H = self.Wh.shape[1]
        if self.Wh.shape != (4 * H, H) or self.Wx.shape[0] != 4 * H or self.b.shape != (4 * H,):
            raise DimensionMismatch("gate weight shapes are inconsistent")
        if self.Wy.shape[1] != H or self.by.shape != (self.Wy.shape[0],):
            raise DimensionMismatch("head shapes are inconsistent")
        if self.x_mean is None:
            self.x_mean = np.zeros(self.input_dim)
            self.x_std = np.ones(self.input_dim)
            self.y_mean = np.zeros(self.output_dim)
            self.y_std = np.ones(self.output_dim)

    @property
    def hidden_size(self) -> int:
        return self.Wh.shape[1]

    @property
    def input_dim(self) -> int:
        return self.Wx.shape[1]

    @property
    def output_dim(self) -> int:
        return self.Wy.shape[0]

    @property
    def params(self) -> list:
        return [self.Wx, self.Wh, self.b, self.Wy, self.by]

    def copy(self) -> LstmModel:
        return LstmModel(*(p.copy() for p in self.params), config=self.config,
                         x_mean=self.x_mean.copy(), x_std=self.x_std.copy(),
                         y_mean=self.y_mean.copy(), y_std=self.y_std.copy(),
                         history=list(self.history))


def init_model(input_dim: int, output_dim: int, config: LstmConfig = LstmConfig()) -> LstmModel:
    rng = np.random.default_rng(config.seed)
    H = config.hidden_size
    s = 1.0 / math.sqrt(H)
    b = np.zeros(4 * H)
    b[H:2 * H] = 1.0
    return LstmModel(rng.uniform(-s, s, (4 * H, input_dim)), rng.uniform(-s, s, (4 * H, H)), b,
                     rng.uniform(-s, s, (output_dim, H)), np.zeros(output_dim), config)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def cell_step(model: LstmModel, h_prev, c_prev, x):
    """One LSTM cell update on (already standardised) input ``x``."""
    H = model.hidden_size
    z = x @ model.Wx.T + h_prev @ model.Wh.T + model.b
    i = _sigmoid(z[..., :H])
    f = _sigmoid(z[..., H:2 * H])
    o = _sigmoid(z[..., 2 * H:3 * H])
    g = np.tanh(z[..., 3 * H:])
    c = f * c_prev + i * g
    h = o * np.tanh(c)
    return h, c


def _as_batch(model, seqs):
    X = np.asarray(seqs, dtype=float)
    if X.ndim == 2:
        X = X[None]
    if X.ndim != 3 or X.shape[0] == 0 or X.shape[1] == 0:
        raise EmptyBatch("need a non-empty batch of non-empty sequences")
    if X.shape[2] != model.input_dim:
        raise DimensionMismatch(f"sequences have {X.shape[2]} features, model expects {model.input_dim}")
    return X


def _forward(model, Xn, h0=None, c0=None):
    """Run standardised inputs (B, T, D); cache everything BPTT needs."""
    B, T, _ = Xn.shape
    H = model.hidden_size
    h = np.zeros((B, H)) if h0 is None else h0
    c = np.zeros((B, H)) if c0 is None else c0
    cache = {"h": [h], "c": [c], "i": [], "f": [], "o": [], "g": [], "tc": []}
    out = np.empty((B, T, model.output_dim))
    for t in range(T):
        z = Xn[:, t] @ model.Wx.T + h @ model.Wh.T + model.b
        i = _sigmoid(z[:, :H])
        f = _sigmoid(z[:, H:2 * H])
        o = _sigmoid(z[:, 2 * H:3 * H])
        g = np.tanh(z[:, 3 * H:])
        c = f * c + i * g
        tc = np.tanh(c)
        h = o * tc
        out[:, t] = h @ model.Wy.T + model.by
        for k, val in (("i", i), ("f", f), ("o", o), ("g", g), ("tc", tc), ("h", h), ("c", c)):
            cache[k].append(val)
    return out, cache


def forward_sequence(model: LstmModel, inputs) -> np.ndarray:
    """Predicted next states (raw units) for one sequence (T, D) or a batch (B, T, D)."""
    single = np.asarray(inputs).ndim == 2
    X = _as_batch(model, inputs)
    out, _ = _forward(model, (X - model.x_mean) / model.x_std)
    out = out * model.y_std + model.y_mean
    return out[0] if single else out


def _normalized_pair(model, inputs, targets):
    X = _as_batch(model, inputs)
    Y = np.asarray(targets, dtype=float)
    if Y.ndim == 2:
        Y = Y[None]
    if Y.shape[:2] != X.shape[:2] or Y.shape[2] != model.output_dim:
        raise DimensionMismatch(f"targets {Y.shape} do not match inputs {X.shape}")
    return (X - model.x_mean) / model.x_std, (Y - model.y_mean) / model.y_std


def loss(model: LstmModel, inputs, targets) -> float:
    """Mean squared error over batch, time and output components (standardised)."""
    Xn, Yn = _normalized_pair(model, inputs, targets)
    out, _ = _forward(model, Xn)
    return float(np.mean((out - Yn) ** 2))


def loss_and_gradient(model: LstmModel, inputs, targets):
    Xn, Yn = _normalized_pair(model, inputs, targets)
    B, T, _ = Xn.shape
    H = model.hidden_size
    out, cache = _forward(model, Xn)
    resid = out - Yn
    value = float(np.mean(resid**2))
    dout = 2.0 * resid / resid.size
    gWx, gWh, gb = np.zeros_like(model.Wx), np.zeros_like(model.Wh), np.zeros_like(model.b)
    gWy = np.einsum("bto,bth->oh", dout, np.stack(cache["h"][1:], axis=1))
    gby = dout.sum((0, 1))
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    dz = np.empty((B, 4 * H))
    for t in range(T - 1, -1, -1):
        i, f, o, g, tc = (cache[k][t] for k in ("i", "f", "o", "g", "tc"))
        c_prev, h_prev = cache["c"][t], cache["h"][t]
        dh = dout[:, t] @ model.Wy + dh_next
        dc = dh * o * (1.0 - tc**2) + dc_next
        dz[:, :H] = dc * g * i * (1.0 - i)
        dz[:, H:2 * H] = dc * c_prev * f * (1.0 - f)
        dz[:, 2 * H:3 * H] = dh * tc * o * (1.0 - o)
        dz[:, 3 * H:] = dc * i * (1.0 - g**2)
        gWx += dz.T @ Xn[:, t]
        gWh += dz.T @ h_prev
        gb += dz.sum(0)
        dh_next = dz @ model.Wh
        dc_next = dc * f
    return value, [gWx, gWh, gb, gWy, gby]


def bptt_gradient(model: LstmModel, inputs, targets) -> list:
    """Exact gradient of :func:`loss` w.r.t. ``[Wx, Wh, b, Wy, by]`` (no truncation)."""
    return loss_and_gradient(model, inputs, targets)[1]


def make_sequences(trajectories, target_mode="full"):
    """Inputs ``state_0..state_{n-2}`` and targets ``state_1..state_{n-1}`` per trajectory."""
    X, Y = [], []
    for traj in trajectories:
        flat = traj.flat()
        X.append(flat[:-1])
        tgt = flat[1:]
        if target_mode == "positions":
            tgt = tgt[:, : tgt.shape[1] // 2]
        Y.append(tgt)
    return np.stack(X), np.stack(Y)


def train(inputs, targets, config: LstmConfig = LstmConfig(), model: LstmModel | None = None,
          log=None) -> LstmModel:
    """Adam with global-norm clipping over shuffled minibatches of sequences.

    The step size follows a cosine schedule from ``learning_rate`` down to
    ``learning_rate * final_lr_fraction`` over the run (fraction 1 = constant).

    Standardisation statistics are fitted on the given training data.
    ``history`` holds the full-data loss before training and after each epoch.
    """
    X = np.asarray(inputs, dtype=float)
    Y = np.asarray(targets, dtype=float)
    if X.ndim == 2:
        X, Y = X[None], Y[None]
    if X.shape[0] == 0:
        raise EmptyBatch("training needs at least one sequence")
    if model is None:
        model = init_model(X.shape[2], Y.shape[2], config)
        model.x_mean = X.mean((0, 1))
        model.x_std = np.where(X.std((0, 1)) > 1e-12, X.std((0, 1)), 1.0)
        model.y_mean = Y.mean((0, 1))
        model.y_std = np.where(Y.std((0, 1)) > 1e-12, Y.std((0, 1)), 1.0)
    else:
        model = model.copy()
    if not model.history:
        model.history.append(loss(model, X, Y))
    rng = np.random.default_rng(config.seed + 1)
    opt = Adam(model.params, config.learning_rate, beta2=config.adam_beta2)
    n = X.shape[0]
    lo = config.learning_rate * config.final_lr_fraction
    for epoch in range(config.epochs):
        frac = epoch / max(1, config.epochs - 1)
        opt.lr = lo + 0.5 * (config.learning_rate - lo) * (1.0 + math.cos(math.pi * frac))
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = np.sort(order[start:start + config.batch_size])
            value, grads = loss_and_gradient(model, X[idx], Y[idx])
            if not math.isfinite(value):
                raise NonFiniteLoss(f"non-finite LSTM loss in epoch {len(model.history)}", len(model.history))
            clip_global_norm(grads, config.clip_norm)
            opt.step(model.params, grads)
        full = loss(model, X, Y)
        if not math.isfinite(full):
            raise NonFiniteLoss(f"non-finite LSTM loss after epoch {len(model.history)}", len(model.history))
        model.history.append(full)
        if log is not None and (epoch + 1) % max(1, config.epochs // 10) == 0:
            log(f"lstm epoch {epoch + 1}: loss {full:.4e}")
    return model


def rollout(model: LstmModel, warmup, n_steps: int) -> np.ndarray:
    """Teacher-force ``warmup`` (W, D) then feed predictions back for ``n_steps``."""
    if not model.history:
        raise Untrained("LSTM has not been trained")
    if model.config.target_mode != "full":
        raise ValueError("closed-loop rollout needs full-state targets")
    warmup = np.asarray(warmup, dtype=float)
    out = np.empty((n_steps, model.output_dim))
    if n_steps == 0:
        return out
    Xn = ((warmup - model.x_mean) / model.x_std)[None]
    pred, cache = _forward(model, Xn)
    h, c = cache["h"][-1], cache["c"][-1]
    y = pred[0, -1] * model.y_std + model.y_mean
    for k in range(n_steps):
        out[k] = y
        if k + 1 < n_steps:
            h, c = cell_step(model, h, c, ((y - model.x_mean) / model.x_std)[None])
            y = (h @ model.Wy.T + model.by)[0] * model.y_std + model.y_mean
    return out


def save_model(model: LstmModel, path) -> None:
    arrays = dict(zip(PARAM_NAMES, model.params))
    arrays.update(x_mean=model.x_mean, x_std=model.x_std, y_mean=model.y_mean, y_std=model.y_std)
    header = {"architecture": "lstm-1layer-linear-head", "config": asdict(model.config),
              "history": model.history}
    serialize.save(path, "lstm", header, arrays)


def load_model(path) -> LstmModel:
    _, header, a = serialize.load(path, "lstm")
    return LstmModel(a["Wx"], a["Wh"], a["b"].reshape(-1), a["Wy"], a["by"].reshape(-1),
                     LstmConfig(**header["config"]), a["x_mean"].reshape(-1), a["x_std"].reshape(-1),
                     a["y_mean"].reshape(-1), a["y_std"].reshape(-1), list(header.get("history", [])))
