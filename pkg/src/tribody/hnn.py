"""Hamiltonian neural network in plain NumPy.

A tanh multilayer perceptron ``H_theta(q, p)`` returns a scalar. Its input
gradient is taken in closed form (reverse mode), the training loss compares
the symplectic gradient ``(dH/dp, -dH/dq)`` with observed ``(dq/dt, dp/dt)``,
and the parameter gradient of that loss is obtained by differentiating the
reverse pass a second time.

Inputs are canonical vectors ``x = (q, p)`` with ``p = m v``, positions and
momenta each flattened body-major.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import serialize
from .dynamics import SystemState, phase_derivative
from .errors import DimensionMismatch, EmptyBatch, NonFiniteLoss, NonFiniteState
from .integrators import Trajectory
from .optim import Adam

LOSS_MODES = ("squared", "norm")


@dataclass(frozen=True)
class HnnConfig:
    hidden: tuple = (64, 64)
    loss_mode: str = "squared"
    learning_rate: float = 1e-3
    batch_size: int = 128
    epochs: int = 2000
    seed: int = 0

    def __post_init__(self):
        if self.loss_mode not in LOSS_MODES:
            raise ValueError(f"loss_mode must be one of {LOSS_MODES}")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))


@dataclass
class HnnModel:
    """Parameters ``[W1, b1, ..., WL, bL, W_out, b_out]``; ``W_out`` has shape (1, n_L)."""

    params: list
    config: HnnConfig = field(default_factory=HnnConfig)
    history: list = field(default_factory=list)
    epoch: int = 0

    @property
    def layer_sizes(self) -> list[int]:
        sizes = [self.params[0].shape[1]]
        sizes += [W.shape[0] for W in self.params[0::2]]
        return sizes

    @property
    def input_dim(self) -> int:
        return self.params[0].shape[1]

    def copy(self) -> HnnModel:
        return HnnModel([p.copy() for p in self.params], self.config, list(self.history), self.epoch)

    def energy(self, x):
        return forward(self, x)

    def field(self, x):
        return symplectic_gradient(self, x)


def init_model(input_dim: int, config: HnnConfig = HnnConfig()) -> HnnModel:
    """Uniform(-s, s) weights and biases with ``s = fan_in ** -0.5``."""
    rng = np.random.default_rng(config.seed)
    sizes = [input_dim, *config.hidden, 1]
    params = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        s = fan_in ** -0.5
        params.append(rng.uniform(-s, s, (fan_out, fan_in)))
        params.append(rng.uniform(-s, s, fan_out))
    return HnnModel(params, config)


def _as_batch(model, x):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != model.input_dim:
        raise DimensionMismatch(f"input has {X.shape[-1]} features, model expects {model.input_dim}")
    return X, single


def _activations(model, X):
    acts = [X]
    a = X
    n_hidden = len(model.params) // 2 - 1
    for l in range(n_hidden):
        W, b = model.params[2 * l], model.params[2 * l + 1]
        a = np.tanh(a @ W.T + b)
        acts.append(a)
    return acts


def forward(model: HnnModel, x):
    """Scalar ``H_theta`` per input row (a float for a single vector)."""
    X, single = _as_batch(model, x)
    acts = _activations(model, X)
    H = acts[-1] @ model.params[-2][0] + model.params[-1][0]
    return float(H[0]) if single else H


def _backward(model, acts):
    """Reverse pass for dH/dx. Returns ``(g, us, vs)`` for reuse."""
    n_hidden = len(acts) - 1
    B = acts[0].shape[0]
    u = np.broadcast_to(model.params[-2][0], (B, model.params[-2].shape[1]))
    us = [None] * (n_hidden + 1)
    vs = [None] * (n_hidden + 1)
    us[n_hidden] = u
    for l in range(n_hidden, 0, -1):
        v = us[l] * (1.0 - acts[l] ** 2)
        vs[l] = v
        us[l - 1] = v @ model.params[2 * (l - 1)]
    return us[0], us, vs


def input_gradient(model: HnnModel, x):
    """``(dH/dq, dH/dp)`` at each input row."""
    X, single = _as_batch(model, x)
    g, _, _ = _backward(model, _activations(model, X))
    return g[0] if single else g


def symplectic_gradient(model: HnnModel, x):
    """Learned vector field ``(dH/dp, -dH/dq)``."""
    g = np.asarray(input_gradient(model, x))
    half = g.shape[-1] // 2
    return np.concatenate([g[..., half:], -g[..., :half]], axis=-1)


def _residuals(g, targets):
    half = g.shape[1] // 2
    r_q = g[:, half:] - targets[:, :half]   # dH/dp - dq/dt
    r_p = g[:, :half] + targets[:, half:]   # dH/dq + dp/dt
    return r_q, r_p


def _loss_and_dg(g, targets, mode):
    B, n = g.shape
    half = n // 2
    r_q, r_p = _residuals(g, targets)
    dg = np.empty_like(g)
    if mode == "squared":
        loss = float(np.mean(r_q**2) + np.mean(r_p**2))
        dg[:, half:] = 2.0 * r_q / r_q.size
        dg[:, :half] = 2.0 * r_p / r_p.size
    else:
        nq = np.linalg.norm(r_q, axis=1, keepdims=True)
        np_ = np.linalg.norm(r_p, axis=1, keepdims=True)
        loss = float(np.mean(nq + np_))
        dg[:, half:] = np.divide(r_q, nq, out=np.zeros_like(r_q), where=nq > 0) / B
        dg[:, :half] = np.divide(r_p, np_, out=np.zeros_like(r_p), where=np_ > 0) / B
    return loss, dg


def _check_batch(model, inputs, targets):
    X = np.asarray(inputs, dtype=float)
    Y = np.asarray(targets, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise EmptyBatch("HNN loss needs a non-empty 2-D batch")
    if X.shape != Y.shape:
        raise DimensionMismatch(f"inputs {X.shape} and targets {Y.shape} differ")
    if X.shape[1] != model.input_dim:
        raise DimensionMismatch(f"input has {X.shape[1]} features, model expects {model.input_dim}")
    return X, Y


def hnn_loss(model: HnnModel, inputs, targets, mode=None) -> float:
    """Mismatch between the symplectic gradient and observed derivatives.

    ``"squared"``: ``mean(|dH/dp - dq/dt|^2) + mean(|dH/dq + dp/dt|^2)``, each
    mean over batch and components. ``"norm"``: batch mean of
    ``||dH/dp - dq/dt||_2 + ||dH/dq + dp/dt||_2``.
    """
    X, Y = _check_batch(model, inputs, targets)
    g = input_gradient(model, X)
    return _loss_and_dg(g, Y, mode or model.config.loss_mode)[0]


def loss_and_param_gradient(model: HnnModel, inputs, targets, mode=None):
    X, Y = _check_batch(model, inputs, targets)
    mode = mode or model.config.loss_mode
    P = model.params
    acts = _activations(model, X)
    g, us, vs = _backward(model, acts)
    loss, u_bar = _loss_and_dg(g, Y, mode)

    n_hidden = len(acts) - 1
    grads = [np.zeros_like(p) for p in P]
    a_bar = [np.zeros_like(a) for a in acts]
    # reverse of the input-gradient pass: u_{l-1} = v_l W_l, v_l = u_l * (1 - a_l^2)
    for l in range(1, n_hidden + 1):
        W = P[2 * (l - 1)]
        grads[2 * (l - 1)] += vs[l].T @ u_bar
        v_bar = u_bar @ W.T
        u_bar = v_bar * (1.0 - acts[l] ** 2)
        a_bar[l] += -2.0 * acts[l] * v_bar * us[l]
    grads[-2][0] += u_bar.sum(0)
    # reverse of the forward pass: a_l = tanh(a_{l-1} W_l^T + b_l)
    for l in range(n_hidden, 0, -1):
        W = P[2 * (l - 1)]
        z_bar = a_bar[l] * (1.0 - acts[l] ** 2)
        grads[2 * (l - 1)] += z_bar.T @ acts[l - 1]
        grads[2 * (l - 1) + 1] += z_bar.sum(0)
        if l > 1:
            a_bar[l - 1] += z_bar @ W
    return loss, grads


def param_gradient(model: HnnModel, inputs, targets, mode=None) -> list:
    """Exact gradient of :func:`hnn_loss` with respect to every parameter."""
    return loss_and_param_gradient(model, inputs, targets, mode)[1]


def train(inputs, targets, config: HnnConfig = HnnConfig(), model: HnnModel | None = None,
          log=None) -> HnnModel:
    """Minibatch Adam on the HNN loss with a seeded shuffle schedule.

    ``history`` holds the full-data loss before training and after every epoch.
    """
    X = np.asarray(inputs, dtype=float)
    Y = np.asarray(targets, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise EmptyBatch("training needs at least one pair")
    model = init_model(X.shape[1], config) if model is None else model.copy()
    if not model.history:
        model.history.append(hnn_loss(model, X, Y))
    rng = np.random.default_rng(config.seed + 1)
    opt = Adam(model.params, config.learning_rate)
    n = X.shape[0]
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            loss, grads = loss_and_param_gradient(model, X[idx], Y[idx])
            if not math.isfinite(loss):
                raise NonFiniteLoss(f"non-finite HNN loss in epoch {model.epoch + 1}", model.epoch + 1)
            opt.step(model.params, grads)
        model.epoch += 1
        full = hnn_loss(model, X, Y)
        if not math.isfinite(full):
            raise NonFiniteLoss(f"non-finite HNN loss after epoch {model.epoch}", model.epoch)
        model.history.append(full)
        if log is not None and (epoch + 1) % max(1, config.epochs // 10) == 0:
            log(f"hnn epoch {model.epoch}: loss {full:.4e}")
    return model


class TrueHamiltonian:
    """Exact three-body Hamiltonian exposed through the HNN model interface.

    Lets the rollout machinery be checked independently of learning.
    """

    def __init__(self, masses, dim=2):
        self.masses = np.asarray(masses, dtype=float)
        self.dim = dim

    def _state(self, x):
        n, d = self.masses.shape[0], self.dim
        q = x[: n * d].reshape(n, d)
        p = x[n * d:].reshape(n, d)
        return SystemState(q, p / self.masses[:, None], self.masses)

    def field(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 2:
            return np.stack([self.field(r) for r in x])
        return phase_derivative(self._state(x)).flat()

    def energy(self, x):
        from .dynamics import total_energy
        return total_energy(self._state(np.asarray(x, dtype=float)))


def symplectic_field(model, state: SystemState):
    """Learned ``(dq/dt, dp/dt)`` at a state, shaped like the positions."""
    x = np.concatenate([state.positions.ravel(), state.momenta.ravel()])
    f = model.field(x)
    half = f.size // 2
    shape = state.positions.shape
    from .dynamics import PhaseDerivative
    return PhaseDerivative(f[:half].reshape(shape), f[half:].reshape(shape))


def rollout(model, initial: SystemState, n_steps: int, dt: float) -> Trajectory:
    """Integrate the model's vector field with classical RK4.

    ``H_theta`` is not separable, so explicit leapfrog does not apply; RK4 is
    used and recorded in the metadata together with the learned-energy drift.
    Returns ``n_steps + 1`` states (velocities recovered as ``p / m``).
    """
    if (initial.masses <= 0).any():
        raise ValueError("rollout needs strictly positive masses to map momenta to velocities")
    x = np.concatenate([initial.positions.ravel(), initial.momenta.ravel()])
    xs = np.empty((n_steps + 1, x.size))
    xs[0] = x
    energies = [float(model.energy(x))]
    f = model.field
    for k in range(n_steps):
        k1 = f(x)
        k2 = f(x + 0.5 * dt * k1)
        k3 = f(x + 0.5 * dt * k2)
        k4 = f(x + dt * k3)
        x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.isfinite(x).all():
            raise NonFiniteState(f"learned field blew up at step {k + 1}")
        xs[k + 1] = x
        energies.append(float(model.energy(x)))
    n, d = initial.positions.shape
    half = n * d
    pos = xs[:, :half].reshape(-1, n, d)
    vel = (xs[:, half:].reshape(-1, n, d)) / initial.masses[None, :, None]
    times = initial.time + dt * np.arange(n_steps + 1)
    e = np.asarray(energies)
    drift = float(np.max(np.abs(e - e[0])) / abs(e[0])) if e[0] != 0 else float(np.max(np.abs(e - e[0])))
    traj = Trajectory(times, pos, vel, initial.masses.copy(),
                      {"integrator": "rk4 (learned field)", "step": dt, "n_steps": n_steps,
                       "learned_energy": e.tolist(), "learned_energy_drift": drift})
    return traj


def save_model(model: HnnModel, path) -> None:
    header = {"config": asdict(model.config), "layer_sizes": model.layer_sizes,
              "activation": "tanh", "loss_mode": model.config.loss_mode,
              "seed": model.config.seed, "epoch": model.epoch, "history": model.history}
    serialize.save(path, "hnn", header, {f"p{i}": p for i, p in enumerate(model.params)})


def load_model(path) -> HnnModel:
    _, header, arrays = serialize.load(path, "hnn")
    params = [arrays[f"p{i}"] for i in range(len(arrays))]
    params = [p.reshape(-1) if i % 2 else p for i, p in enumerate(params)]
    cfg = dict(header["config"])
    cfg["hidden"] = tuple(cfg["hidden"])
    return HnnModel(params, HnnConfig(**cfg), list(header.get("history", [])), header.get("epoch", 0))
