"""Reference initial conditions used by tests, the CLI and training recipes."""

import math

import numpy as np

from .dynamics import SystemState

# Equal-mass figure-eight choreography (Chenciner & Montgomery orbit; values
# as tabulated by C. Simo). Re-verified by the periodicity tests.
FIGURE8_POSITIONS = ((0.97000436, -0.24308753), (-0.97000436, 0.24308753), (0.0, 0.0))
FIGURE8_V3 = (-0.93240737, -0.86473146)
FIGURE8_PERIOD = 6.32591398


def figure8(dim=2) -> SystemState:
    q = np.zeros((3, dim))
    v = np.zeros((3, dim))
    q[:, :2] = FIGURE8_POSITIONS
    v[2, :2] = FIGURE8_V3
    v[0, :2] = v[1, :2] = -0.5 * np.asarray(FIGURE8_V3)
    return SystemState(q, v, np.ones(3), 0.0)


def circular_binary(separation=1.0, far=1e6, dim=2) -> SystemState:
    """Unit masses on a circular orbit plus a massless body far away.

    The binary's barycentre sits at the origin; the test particle is at
    rest at distance ``far``.
    """
    q = np.zeros((3, dim))
    v = np.zeros((3, dim))
    q[0, 0], q[1, 0] = -0.5 * separation, 0.5 * separation
    omega = math.sqrt(2.0 / separation**3)
    speed = 0.5 * separation * omega
    v[0, 1], v[1, 1] = -speed, speed
    q[2, 0] = far
    return SystemState(q, v, np.array([1.0, 1.0, 0.0]), 0.0)


def circular_binary_exact(t, separation=1.0, dim=2) -> np.ndarray:
    """Analytic positions of the two massive bodies of :func:`circular_binary` at ``t``."""
    omega = math.sqrt(2.0 / separation**3)
    r = 0.5 * separation
    c, s = math.cos(omega * t), math.sin(omega * t)
    out = np.zeros((2, dim))
    out[0, :2] = (-r * c, -r * s)
    out[1, :2] = (r * c, r * s)
    return out


def circular_binary_period(separation=1.0) -> float:
    return 2.0 * math.pi / math.sqrt(2.0 / separation**3)


def hierarchical_triple(dim=2) -> SystemState:
    """Tight inner binary with a distant circular companion; regular motion."""
    q = np.zeros((3, dim))
    v = np.zeros((3, dim))
    # inner binary (masses 1, 1), separation 0.2
    a_in = 0.2
    w_in = math.sqrt(2.0 / a_in**3)
    q[0, 0], q[1, 0] = -0.5 * a_in, 0.5 * a_in
    v[0, 1], v[1, 1] = -0.5 * a_in * w_in, 0.5 * a_in * w_in
    # outer body (mass 1) at distance 5 on a circular orbit about the binary
    r_out = 5.0
    w_out = math.sqrt(3.0 / r_out**3)
    q[2, 0] = r_out
    v[2, 1] = w_out * r_out
    state = SystemState(q, v, np.ones(3), 0.0)
    from .dynamics import recenter_to_com
    return recenter_to_com(state)
