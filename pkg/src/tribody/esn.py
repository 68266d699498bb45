"""Echo state network: fixed sparse reservoir, ridge-trained linear readout.

Reservoir update, with leak rate ``alpha`` (``alpha = 1`` is the plain form)::

    h(n) = (1 - alpha) h(n-1) + alpha tanh(W h(n-1) + W_in x(n))

and readout ``y(n) = f(W_out h(n))`` with ``f`` the identity by default.
Inputs are flattened states; they are standardised per dimension with
statistics taken from the training sequences.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace

import numpy as np

from . import serialize
from .errors import DegenerateReservoir, DimensionMismatch, IllConditioned, NoConvergence, Untrained


@dataclass(frozen=True)
class EsnConfig:
    reservoir_size: int = 300
    density: float = 0.05
    spectral_radius: float = 0.9
    input_scale: float = 0.5
    ridge: float = 1e-6
    washout: int = 20
    leak_rate: float = 1.0
    readout_activation: str = "identity"
    normalize_inputs: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.reservoir_size < 1:
            raise ValueError("reservoir_size must be >= 1")
        if not 0 < self.density <= 1:
            raise ValueError("density must lie in (0, 1]")
        if not self.spectral_radius > 0:
            raise ValueError("spectral_radius must be positive")
        if not 0 < self.leak_rate <= 1:
            raise ValueError("leak_rate must lie in (0, 1]")
        if self.ridge < 0:
            raise ValueError("ridge must be non-negative")
        if self.washout < 0:
            raise ValueError("washout must be non-negative")
        if self.readout_activation not in ("identity", "tanh"):
            raise ValueError(f"unknown readout_activation {self.readout_activation!r}")


@dataclass
class EsnModel:
    config: EsnConfig
    W_in: np.ndarray
    W: np.ndarray
    achieved_radius: float
    W_out: np.ndarray | None = None
    input_mean: np.ndarray | None = None
    input_std: np.ndarray | None = None
    train_mse: float | None = None

    @property
    def input_dim(self) -> int:
        return self.W_in.shape[1]

    @property
    def trained(self) -> bool:
        return self.W_out is not None


def spectral_radius(A, tol=1e-10, max_iter=10_000, block=8, seed=0, stall=500) -> float:
    """Largest eigenvalue modulus by block power iteration with Rayleigh-Ritz.

    Iterating a small orthonormal block (instead of a single vector) lets
    complex-conjugate or near-degenerate dominant eigenvalues converge.
    Stops when the dominant Ritz pair's relative residual is below ``tol``;
    if the residual stops improving for ``stall`` sweeps the block is
    restarted from a perturbed copy. Raises :class:`NoConvergence` (with the
    best estimate) after ``max_iter`` sweeps.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"spectral_radius needs a square matrix, got shape {A.shape}")
    n = A.shape[0]
    k = min(block, n)
    rng = np.random.default_rng(seed)
    Q, _ = np.linalg.qr(rng.standard_normal((n, k)))
    best_res, best_est, since_best = math.inf, 0.0, 0
    for _ in range(max_iter):
        Z = A @ Q
        if not np.any(Z):
            return 0.0
        B = Q.T @ Z
        vals, vecs = np.linalg.eig(B)
        j = int(np.argmax(np.abs(vals)))
        theta = vals[j]
        est = float(abs(theta))
        if est == 0.0:
            return 0.0
        y = vecs[:, j]
        res = float(np.linalg.norm(Z @ y - theta * (Q @ y)) / (est * np.linalg.norm(y)))
        if res < best_res:
            best_res, best_est, since_best = res, est, 0
        else:
            since_best += 1
        if res <= tol or k == n:
            return est
        if since_best >= stall:
            Z = Z + 1e-3 * np.linalg.norm(Z) * rng.standard_normal(Z.shape) / math.sqrt(Z.size)
            since_best = 0
        Q, _ = np.linalg.qr(Z)
    raise NoConvergence(f"spectral radius not converged after {max_iter} sweeps "
                        f"(residual {best_res:.2e})", best_est)


def _raw_reservoir(config: EsnConfig, rng):
    n = config.reservoir_size
    mask = rng.random((n, n)) < config.density
    return np.where(mask, rng.uniform(-1.0, 1.0, (n, n)), 0.0)


def scale_to_radius(W_raw, target) -> tuple[np.ndarray, float]:
    rho = spectral_radius(W_raw)
    if rho == 0.0:
        raise DegenerateReservoir("reservoir matrix has zero spectral radius")
    return W_raw * (target / rho), rho


def init_reservoir(config: EsnConfig, input_dim: int) -> EsnModel:
    """Random sparse reservoir rescaled to ``config.spectral_radius``.

    Raw nonzeros (probability ``density``) are uniform in [-1, 1]; a draw
    with zero spectral radius is redrawn up to 100 times.
    """
    rng = np.random.default_rng(config.seed)
    for _ in range(100):
        W_raw = _raw_reservoir(config, rng)
        try:
            W, _ = scale_to_radius(W_raw, config.spectral_radius)
        except DegenerateReservoir:
            continue
        break
    else:
        raise DegenerateReservoir("100 consecutive reservoir draws had zero spectral radius")
    W_in = rng.uniform(-config.input_scale, config.input_scale, (config.reservoir_size, input_dim))
    return EsnModel(config, W_in, W, spectral_radius(W))


def advance(model: EsnModel, h_prev, x):
    """One reservoir update with an already-normalised input ``x``."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != model.input_dim or np.shape(h_prev)[-1] != model.W.shape[0]:
        raise DimensionMismatch(f"input {x.shape} / state {np.shape(h_prev)} do not fit the reservoir")
    a = model.config.leak_rate
    pre = np.tanh(model.W @ h_prev + model.W_in @ x)
    if a == 1.0:
        return pre
    return (1.0 - a) * h_prev + a * pre


def echo_state_distance(model: EsnModel, inputs, h_a, h_b) -> np.ndarray:
    """Distance between two reservoir states driven by the same inputs, per step.

    Shrinking distances are the practical face of the echo state property.
    """
    inputs = np.asarray(inputs, dtype=float)
    out = np.empty(inputs.shape[0])
    for n, x in enumerate(inputs):
        h_a = advance(model, h_a, x)
        h_b = advance(model, h_b, x)
        out[n] = np.linalg.norm(h_a - h_b)
    return out


def _normalize(model, x):
    if model.input_mean is None:
        return x
    return (x - model.input_mean) / model.input_std


def _run(model, inputs, h0=None):
    """Teacher-forced reservoir states for one input sequence, shape (T, N_h)."""
    h = np.zeros(model.W.shape[0]) if h0 is None else h0
    out = np.empty((inputs.shape[0], model.W.shape[0]))
    for n, x in enumerate(_normalize(model, inputs)):
        h = advance(model, h, x)
        out[n] = h
    return out


def ridge_readout(H, Y, ridge) -> np.ndarray:
    """``W_out = Y H^T (H H^T + ridge I)^-1`` for states ``H`` (N_h x T), targets ``Y`` (D x T)."""
    G = H @ H.T + ridge * np.eye(H.shape[0])
    try:
        sol = np.linalg.solve(G, H @ Y.T)
    except np.linalg.LinAlgError as exc:
        raise IllConditioned(f"regularised normal matrix is singular ({exc})") from exc
    if not np.isfinite(sol).all():
        raise IllConditioned("ridge solution is not finite")
    return sol.T


def _readout(model, H):
    y = H @ model.W_out.T
    return np.tanh(y) if model.config.readout_activation == "tanh" else y


def fit_readout(model: EsnModel, input_sequences, target_sequences) -> EsnModel:
    """Teacher-force every sequence, drop the washout, solve the ridge readout.

    Returns a new trained model; the reservoir matrices are shared.
    """
    inputs = [np.asarray(s, dtype=float) for s in input_sequences]
    targets = [np.asarray(s, dtype=float) for s in target_sequences]
    if not inputs or len(inputs) != len(targets):
        raise ValueError("need matching, non-empty lists of input and target sequences")
    wash = model.config.washout
    for x, y in zip(inputs, targets):
        if x.shape[0] != y.shape[0] or x.shape[0] <= wash:
            raise ValueError(f"each sequence must be longer than the washout ({wash}) and aligned")
        if x.shape[1] != model.input_dim:
            raise DimensionMismatch(f"inputs have {x.shape[1]} features, reservoir expects {model.input_dim}")

    mean = std = None
    if model.config.normalize_inputs:
        stacked = np.concatenate(inputs)
        mean = stacked.mean(0)
        std = stacked.std(0)
        std[std < 1e-12] = 1.0
    trained = replace(model, input_mean=mean, input_std=std)

    n_h = model.W.shape[0]
    out_dim = targets[0].shape[1]
    HHt = np.zeros((n_h, n_h))
    HYt = np.zeros((n_h, out_dim))
    states, kept = [], []
    for x, y in zip(inputs, targets):
        H = _run(trained, x)[wash:]
        Y = y[wash:]
        if model.config.readout_activation == "tanh":
            Y = np.arctanh(np.clip(Y, -1 + 1e-12, 1 - 1e-12))
        HHt += H.T @ H
        HYt += H.T @ Y
        states.append(H)
        kept.append(y[wash:])
    G = HHt + model.config.ridge * np.eye(n_h)
    try:
        W_out = np.ascontiguousarray(np.linalg.solve(G, HYt).T)
    except np.linalg.LinAlgError as exc:
        raise IllConditioned(f"regularised normal matrix is singular ({exc})") from exc
    if not np.isfinite(W_out).all():
        raise IllConditioned("ridge solution is not finite")
    trained.W_out = W_out
    pred = _readout(trained, np.concatenate(states))
    trained.train_mse = float(np.mean((pred - np.concatenate(kept)) ** 2))
    return trained


def forecast(model: EsnModel, warmup, n_steps: int) -> np.ndarray:
    """Teacher-force through ``warmup`` then run closed loop for ``n_steps``.

    Row ``k`` of the result predicts the state ``k + 1`` samples after the
    last warmup state.
    """
    if not model.trained:
        raise Untrained("ESN readout has not been fitted")
    warmup = np.asarray(warmup, dtype=float)
    if warmup.shape[0] < max(1, model.config.washout):
        raise ValueError(f"warmup needs at least {max(1, model.config.washout)} states")
    out = np.empty((n_steps, model.W_out.shape[0]))
    if n_steps == 0:
        return out
    h = _run(model, warmup)[-1]
    for k in range(n_steps):
        y = _readout(model, h)
        out[k] = y
        if k + 1 < n_steps:
            h = advance(model, h, _normalize(model, y))
    return out


def save_model(model: EsnModel, path) -> None:
    n = model.W.shape[0]
    rows, cols = np.nonzero(model.W)
    arrays = {"W_in": model.W_in, "W_rows": rows, "W_cols": cols, "W_vals": model.W[rows, cols]}
    if model.trained:
        arrays["W_out"] = model.W_out
    if model.input_mean is not None:
        arrays["input_mean"] = model.input_mean
        arrays["input_std"] = model.input_std
    header = {"config": asdict(model.config), "achieved_radius": model.achieved_radius,
              "reservoir_size": n, "train_mse": model.train_mse}
    serialize.save(path, "esn", header, arrays)


def load_model(path) -> EsnModel:
    _, header, arrays = serialize.load(path, "esn")
    n = header["reservoir_size"]
    W = np.zeros((n, n))
    W[arrays["W_rows"].astype(int), arrays["W_cols"].astype(int)] = arrays["W_vals"]
    return EsnModel(EsnConfig(**header["config"]), arrays["W_in"], W, header["achieved_radius"],
                    arrays.get("W_out"), arrays.get("input_mean"), arrays.get("input_std"),
                    header.get("train_mse"))
