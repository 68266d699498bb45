"""Ground-truth trajectory generation.

Fixed-step RK4 and kick-drift-kick leapfrog, an adaptive Bulirsch-Stoer
(Gragg midpoint + polynomial extrapolation), a two-tolerance convergence
certificate, and a Benettin estimate of the largest Lyapunov exponent.
The inner loops live in :mod:`tribody.kernels`.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import kernels
from .dynamics import EPS_SEP, SystemState
from .errors import NotConverged, SingularState, StepUnderflow

METHODS = ("rk4", "leapfrog", "bulirsch_stoer")

UNDERFLOW_RATIO = 1e-14


@dataclass(frozen=True)
class IntegratorConfig:
    method: str = "bulirsch_stoer"
    step: float = 1e-3
    tolerance: float = 1e-10
    sample_interval: float = 0.1
    max_steps_per_sample: int = 200_000
    eps_sep: float = EPS_SEP
    conv_threshold: float = 1e-6

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        for name in ("step", "tolerance", "sample_interval", "eps_sep", "conv_threshold"):
            val = getattr(self, name)
            if not (val > 0 and math.isfinite(val)):
                raise ValueError(f"{name} must be positive and finite, got {val}")
        if self.max_steps_per_sample < 1:
            raise ValueError("max_steps_per_sample must be >= 1")

    def to_dict(self):
        return asdict(self)


@dataclass(eq=False)
class Trajectory:
    """Uniformly sampled states of one system.

    ``positions`` and ``velocities`` have shape (n_samples, n_bodies, d).
    Generated and stored trajectories always hold at least two samples; a
    single sample is accepted only for zero-length model rollouts.
    """

    times: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray
    masses: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.positions = np.asarray(self.positions, dtype=float)
        self.velocities = np.asarray(self.velocities, dtype=float)
        self.masses = np.asarray(self.masses, dtype=float)
        n = self.times.shape[0]
        if n < 1:
            raise ValueError("a trajectory needs at least one state")
        if self.positions.shape[0] != n or self.velocities.shape != self.positions.shape:
            raise ValueError("times, positions and velocities disagree in length/shape")
        gaps = np.diff(self.times)
        if not (gaps > 0).all():
            raise ValueError("sample times must be strictly increasing")
        if n > 2 and np.abs(gaps - gaps.mean()).max() > 1e-9 * max(abs(gaps.mean()), abs(self.times).max()):
            raise ValueError("sample times are not uniform")

    def __len__(self):
        return self.times.shape[0]

    @property
    def dim(self) -> int:
        return self.positions.shape[2]

    @property
    def sample_interval(self) -> float:
        if len(self) < 2:
            return float(self.metadata.get("step", 0.0))
        return float((self.times[-1] - self.times[0]) / (len(self) - 1))

    def state(self, i) -> SystemState:
        return SystemState(self.positions[i], self.velocities[i], self.masses, self.times[i])

    @property
    def states(self) -> list[SystemState]:
        return [self.state(i) for i in range(len(self))]

    def flat(self) -> np.ndarray:
        """Per-sample flattened states, shape (n, 2 * n_bodies * d)."""
        n = len(self)
        return np.concatenate([self.positions.reshape(n, -1), self.velocities.reshape(n, -1)], axis=1)

    @classmethod
    def from_flat(cls, times, flat, masses, metadata=None) -> Trajectory:
        flat = np.asarray(flat, dtype=float)
        masses = np.asarray(masses, dtype=float)
        nb = masses.shape[0]
        d = flat.shape[1] // (2 * nb)
        half = nb * d
        n = flat.shape[0]
        return cls(times, flat[:, :half].reshape(n, nb, d), flat[:, half:].reshape(n, nb, d),
                   masses, dict(metadata or {}))


def _check_step(h):
    if not (math.isfinite(h) and h != 0.0):
        raise ValueError(f"step size must be finite and nonzero, got {h}")


def _work_arrays(state):
    return np.array(state.positions), np.array(state.velocities)


def step_rk4(state: SystemState, h: float, eps_sep: float = EPS_SEP) -> SystemState:
    _check_step(h)
    q, v = _work_arrays(state)
    if kernels.rk4(q, v, state.masses, h, 1, eps_sep) < 1:
        raise SingularState("close encounter during RK4 step", time=state.time)
    return SystemState(q, v, state.masses, state.time + h)


def step_leapfrog(state: SystemState, h: float, eps_sep: float = EPS_SEP) -> SystemState:
    """Kick-drift-kick velocity Verlet. Negative ``h`` steps backward."""
    _check_step(h)
    q, v = _work_arrays(state)
    if kernels.leapfrog(q, v, state.masses, h, 1, eps_sep) < 1:
        raise SingularState("close encounter during leapfrog step", time=state.time)
    return SystemState(q, v, state.masses, state.time + h)


def step_bulirsch_stoer(state: SystemState, h_target: float, tol: float,
                        eps_sep: float = EPS_SEP, h_floor: float | None = None):
    """Adaptive Bulirsch-Stoer step.

    Tries ``h_target`` first and shrinks until the extrapolation error
    estimate is within ``tol`` (mixed absolute/relative scale ``1 + |y|``).
    Returns the advanced state (its time tells the step actually taken)
    and the recommended next step size.
    """
    if not (tol > 0):
        raise ValueError(f"tol must be positive, got {tol}")
    if not (h_target > 0 and math.isfinite(h_target)):
        raise ValueError(f"h_target must be positive and finite, got {h_target}")
    if h_floor is None:
        h_floor = UNDERFLOW_RATIO * h_target
    q, v = _work_arrays(state)
    oq, ov = np.empty_like(q), np.empty_like(v)
    H = h_target
    while True:
        if H < h_floor:
            raise StepUnderflow(f"step {H:.3e} fell below floor {h_floor:.3e}", time=state.time)
        ok, H_next = kernels.bs_step(q, v, state.masses, H, tol, eps_sep, oq, ov)
        if ok:
            return SystemState(oq, ov, state.masses, state.time + H), H_next
        H = H_next


def _sample_grid(t0, t_end, dt):
    span = t_end - t0
    if not span > 0:
        raise ValueError(f"t_end ({t_end}) must exceed the start time ({t0})")
    n = int(math.floor(span / dt + 1e-9))
    if n == 0:
        n, dt = 1, span
    return t0 + dt * np.arange(n + 1), dt


class _Stepper:
    """Advances one system from sample to sample with a fixed config."""

    def __init__(self, state: SystemState, config: IntegratorConfig, dt: float, block: int = 0):
        self.config = config
        self.block = block
        self.q, self.v = _work_arrays(state)
        self.m = state.masses
        self.internal = 0
        if config.method in ("rk4", "leapfrog"):
            nsub = int(round(dt / config.step))
            if nsub < 1 or abs(nsub * config.step - dt) > 1e-9 * dt:
                raise ValueError(f"sample interval {dt} is not an integer multiple of step {config.step}")
            self.nsub = nsub
            self.h = dt / nsub
            self.kernel = kernels.rk4 if config.method == "rk4" else kernels.leapfrog
        else:
            self.h = dt

    def advance(self, t_from: float, t_to: float):
        cfg = self.config
        if cfg.method == "bulirsch_stoer":
            status, steps, self.h, reached = kernels.bs_advance(
                self.q, self.v, self.m, t_to - t_from, self.h, cfg.tolerance, cfg.eps_sep,
                UNDERFLOW_RATIO, cfg.max_steps_per_sample, self.block)
            self.internal += steps
            if status:
                t_fail = float(t_from + reached)
                what = "step underflow" if status == 1 else "step budget exhausted"
                raise StepUnderflow(f"{what} near t={t_fail:.6g}", time=t_fail)
        else:
            done = self.kernel(self.q, self.v, self.m, self.h, self.nsub, cfg.eps_sep, self.block)
            self.internal += done
            if done < self.nsub:
                t_fail = float(t_from + done * self.h)
                raise SingularState(f"close encounter at t={t_fail:.6g}", time=t_fail)


def _metadata(config, dt, internal, seed):
    fixed = config.method != "bulirsch_stoer"
    return {
        "integrator": config.method,
        "tolerance": None if fixed else config.tolerance,
        "step": config.step if fixed else None,
        "sample_interval": dt,
        "internal_steps": internal,
        "seed": seed,
        "converged": None,
    }


def integrate(state: SystemState, t_end: float, config: IntegratorConfig = IntegratorConfig(),
              seed=None) -> Trajectory:
    """Integrate ``state`` to ``t_end`` and sample every ``config.sample_interval``.

    If the span is shorter than one sample interval the trajectory holds the
    start and end states only. Failures carry the failure time in ``.time``.
    """
    times, dt = _sample_grid(state.time, t_end, config.sample_interval)
    stepper = _Stepper(state, config, dt)
    pos = np.empty((len(times),) + state.positions.shape)
    vel = np.empty_like(pos)
    pos[0], vel[0] = stepper.q, stepper.v
    for i in range(1, len(times)):
        stepper.advance(times[i - 1], times[i])
        pos[i], vel[i] = stepper.q, stepper.v
    return Trajectory(times, pos, vel, state.masses.copy(),
                      _metadata(config, dt, stepper.internal, seed))


def position_discrepancy(a: Trajectory, b: Trajectory) -> np.ndarray:
    """Max absolute position difference per sample."""
    return np.abs(a.positions - b.positions).reshape(len(a), -1).max(axis=1)


def converged_integrate(state: SystemState, t_end: float,
                        config: IntegratorConfig = IntegratorConfig(),
                        seed=None, raise_on_failure: bool = True) -> Trajectory:
    """Two-tolerance certificate: integrate at ``tol`` and ``tol/10``.

    Both runs advance in lockstep. The tighter run is returned with
    ``metadata["converged"]`` set. If they disagree by more than
    ``config.conv_threshold`` at any sample, :class:`NotConverged` is raised
    carrying both runs truncated at the divergence sample; with
    ``raise_on_failure=False`` the full tighter run is returned flagged with
    its divergence time instead.
    """
    if config.method != "bulirsch_stoer":
        raise ValueError("converged_integrate requires method='bulirsch_stoer'")
    fine_cfg = replace(config, tolerance=config.tolerance / 10)
    times, dt = _sample_grid(state.time, t_end, config.sample_interval)
    runs = [_Stepper(state, config, dt), _Stepper(state, fine_cfg, dt)]
    shape = (len(times),) + state.positions.shape
    pos = [np.empty(shape), np.empty(shape)]
    vel = [np.empty(shape), np.empty(shape)]
    for r, run in enumerate(runs):
        pos[r][0], vel[r][0] = run.q, run.v
    disc = np.zeros(len(times))
    t_div = None
    last = len(times) - 1
    for i in range(1, len(times)):
        for r, run in enumerate(runs):
            run.advance(times[i - 1], times[i])
            pos[r][i], vel[r][i] = run.q, run.v
        disc[i] = np.abs(pos[0][i] - pos[1][i]).max()
        if t_div is None and disc[i] > config.conv_threshold:
            t_div = float(times[i])
            if raise_on_failure:
                last = i
                break

    def build(r, cfg):
        n = last + 1
        return Trajectory(times[:n], pos[r][:n], vel[r][:n], state.masses.copy(),
                          _metadata(cfg, dt, runs[r].internal, seed))

    coarse, fine = build(0, config), build(1, fine_cfg)
    for traj in (coarse, fine):
        traj.metadata.update(converged=t_div is None, divergence_time=t_div,
                             max_discrepancy=float(disc[:last + 1].max()),
                             conv_threshold=config.conv_threshold)
    if t_div is not None and raise_on_failure:
        raise NotConverged(f"tolerance pair disagrees beyond {config.conv_threshold:g} at t={t_div:.6g}",
                           coarse, fine, t_div)
    return fine


def propagate(state: SystemState, duration: float, config: IntegratorConfig) -> SystemState:
    """Final state after ``duration``; internal sampling is one interval."""
    cfg = config
    if config.method == "bulirsch_stoer":
        cfg = replace(config, sample_interval=duration)
    traj = integrate(state, state.time + duration, cfg)
    return traj.state(-1)


LYAPUNOV_CONFIG = IntegratorConfig(method="bulirsch_stoer", tolerance=1e-12)


def estimate_lyapunov(state: SystemState, config: IntegratorConfig = LYAPUNOV_CONFIG, *,
                      delta0: float = 1e-8, tau: float = 1.0, horizon: float = 200.0,
                      floor: float = 1e-3, seed: int = 0) -> tuple[float, float]:
    """Largest Lyapunov exponent by Benettin renormalization.

    A shadow state offset by ``delta0`` in phase space (random direction
    drawn from ``seed``) is evolved alongside the reference; every ``tau``
    the separation is logged and rescaled to ``delta0``. Returns
    ``(lambda_max, t_lyap)`` with ``t_lyap = inf`` when ``lambda_max <= floor``.

    Reference and shadow are stepped as one non-interacting six-body system
    whose step sizes are chosen by the reference alone. The reference orbit
    is then the same for every ``delta0``, and the shadow sees the same step
    sequence, so their difference is not swamped by independent truncation
    errors. On a regular orbit the
    finite-time estimate decays roughly like ``log(t) / t``, hence the long
    default horizon.
    """
    if not (tau > 0 and horizon >= tau and delta0 > 0):
        raise ValueError("need tau > 0, horizon >= tau and delta0 > 0")
    rng = np.random.default_rng(seed)
    nb, d = state.positions.shape
    direction = rng.standard_normal(2 * nb * d)
    direction /= np.linalg.norm(direction)
    shadow = SystemState.from_flat(state.flat() + delta0 * direction, state.masses, state.time, d)
    joint = SystemState(np.vstack([state.positions, shadow.positions]),
                        np.vstack([state.velocities, shadow.velocities]),
                        np.concatenate([state.masses, state.masses]), state.time)
    stepper = _Stepper(joint, config, tau, block=nb)
    q, v = stepper.q, stepper.v
    n_renorm = int(round(horizon / tau))
    log_sum = 0.0
    t = state.time
    for _ in range(n_renorm):
        stepper.advance(t, t + tau)
        t += tau
        dq, dv = q[nb:] - q[:nb], v[nb:] - v[:nb]
        dist = math.sqrt(float((dq * dq).sum() + (dv * dv).sum()))
        if not dist > 0:
            raise SingularState("shadow orbit collapsed onto the reference", time=t)
        log_sum += math.log(dist / delta0)
        scale = delta0 / dist
        q[nb:] = q[:nb] + dq * scale
        v[nb:] = v[:nb] + dv * scale
    lam = log_sum / (n_renorm * tau)
    t_lyap = math.inf if lam <= floor else 1.0 / lam
    return lam, t_lyap
