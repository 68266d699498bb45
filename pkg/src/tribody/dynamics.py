"""Point-mass gravity in N-body units (G = 1).

A :class:`SystemState` holds positions, velocities and masses of the bodies
plus the time stamp. Canonical momenta are ``p = m * v``. Internals are
generic in the number of bodies; the public containers default to three.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import SingularState, ZeroTotalMass

EPS_SEP = 1e-12
N_BODIES = 3


@dataclass(frozen=True, eq=False)
class SystemState:
    positions: np.ndarray
    velocities: np.ndarray
    masses: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        q = np.ascontiguousarray(self.positions, dtype=float)
        v = np.ascontiguousarray(self.velocities, dtype=float)
        m = np.ascontiguousarray(self.masses, dtype=float)
        if q.ndim != 2 or q.shape[1] not in (2, 3):
            raise ValueError(f"positions must have shape (n, 2|3), got {q.shape}")
        if v.shape != q.shape:
            raise ValueError(f"velocities shape {v.shape} != positions shape {q.shape}")
        if m.shape != (q.shape[0],):
            raise ValueError(f"masses shape {m.shape} does not match {q.shape[0]} bodies")
        if not (np.isfinite(q).all() and np.isfinite(v).all() and np.isfinite(m).all()):
            raise ValueError("state contains non-finite entries")
        if (m < 0).any():
            raise ValueError("masses must be non-negative")
        if not np.isfinite(self.time) or self.time < 0:
            raise ValueError(f"time must be finite and >= 0, got {self.time}")
        for name, arr in (("positions", q), ("velocities", v), ("masses", m)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "time", float(self.time))

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    @property
    def n_bodies(self) -> int:
        return self.positions.shape[0]

    @property
    def momenta(self) -> np.ndarray:
        return self.masses[:, None] * self.velocities

    def flat(self) -> np.ndarray:
        """Positions then velocities, body-major: length ``2 * n * d``."""
        return np.concatenate([self.positions.ravel(), self.velocities.ravel()])

    @classmethod
    def from_flat(cls, vec, masses, time=0.0, dim=None) -> SystemState:
        vec = np.asarray(vec, dtype=float)
        masses = np.asarray(masses, dtype=float)
        n = masses.shape[0]
        if dim is None:
            dim = vec.size // (2 * n)
        if vec.size != 2 * n * dim:
            raise ValueError(f"flat vector of length {vec.size} does not fit {n} bodies in {dim}D")
        half = n * dim
        return cls(vec[:half].reshape(n, dim), vec[half:].reshape(n, dim), masses, time)

    def replace(self, **changes) -> SystemState:
        fields = dict(positions=self.positions, velocities=self.velocities,
                      masses=self.masses, time=self.time)
        fields.update(changes)
        return SystemState(**fields)

    def __eq__(self, other):
        if not isinstance(other, SystemState):
            return NotImplemented
        return (self.time == other.time
                and np.array_equal(self.positions, other.positions)
                and np.array_equal(self.velocities, other.velocities)
                and np.array_equal(self.masses, other.masses))


@dataclass(frozen=True)
class PhaseDerivative:
    dq_dt: np.ndarray
    dp_dt: np.ndarray

    def flat(self) -> np.ndarray:
        return np.concatenate([self.dq_dt.ravel(), self.dp_dt.ravel()])


def min_separation(state: SystemState) -> float:
    q = state.positions
    diff = q[:, None, :] - q[None, :, :]
    r = np.sqrt((diff**2).sum(-1))
    iu = np.triu_indices(q.shape[0], 1)
    return float(r[iu].min())


def accelerations(state: SystemState, eps_sep: float = EPS_SEP) -> np.ndarray:
    """Gravitational acceleration of every body, shape (n, d).

    Raises SingularState when any pair is closer than ``eps_sep``.
    """
    acc = np.empty_like(state.positions)
    rmin = kernels.accelerations(state.positions, state.masses, acc)
    if rmin < eps_sep:
        raise SingularState(f"pairwise separation {rmin:.3e} below floor {eps_sep:.1e}",
                            separation=rmin, time=state.time)
    return acc


def phase_derivative(state: SystemState, eps_sep: float = EPS_SEP) -> PhaseDerivative:
    """Hamilton's equations: dq/dt = p/m (= v), dp/dt = m a."""
    acc = accelerations(state, eps_sep)
    return PhaseDerivative(state.velocities.copy(), state.masses[:, None] * acc)


def potential_energy(state: SystemState) -> float:
    q, m = state.positions, state.masses
    total = 0.0
    for i in range(q.shape[0]):
        for j in range(i + 1, q.shape[0]):
            r = float(np.linalg.norm(q[j] - q[i]))
            if m[i] * m[j] == 0.0:
                continue
            if r == 0.0:
                raise SingularState("coincident massive bodies", separation=0.0, time=state.time)
            total -= m[i] * m[j] / r
    return total


def kinetic_energy(state: SystemState) -> float:
    return float(0.5 * (state.masses * (state.velocities**2).sum(1)).sum())


def total_energy(state: SystemState) -> float:
    """Hamiltonian H(q, p) with p = m v."""
    return kinetic_energy(state) + potential_energy(state)


def linear_momentum(state: SystemState) -> np.ndarray:
    return state.momenta.sum(0)


def angular_momentum(state: SystemState):
    """Scalar L_z in 2D, vector L in 3D."""
    q, p = state.positions, state.momenta
    if state.dim == 2:
        return float((q[:, 0] * p[:, 1] - q[:, 1] * p[:, 0]).sum())
    return np.cross(q, p).sum(0)


def center_of_mass(state: SystemState) -> tuple[np.ndarray, np.ndarray]:
    mtot = state.masses.sum()
    if mtot == 0.0:
        raise ZeroTotalMass("all masses are zero")
    w = state.masses[:, None] / mtot
    return (w * state.positions).sum(0), (w * state.velocities).sum(0)


def recenter_to_com(state: SystemState) -> SystemState:
    """Shift to the barycentric frame: COM at the origin, zero total momentum."""
    rc, vc = center_of_mass(state)
    return state.replace(positions=state.positions - rc, velocities=state.velocities - vc)
