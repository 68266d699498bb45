# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled point-mass gravity kernels (G = 1).

Same contracts as :mod:`tribody._pykernels`; arrays are float64,
C-contiguous, shape (n, d) with d <= 3. Stepping kernels update
``pos``/``vel`` in place and return the number of steps completed; a short
count means a pair fell below ``eps_sep``.

``block`` (0 = all bodies) splits the bodies into consecutive groups of that
size that do not interact, so independent copies of a system can share one
adaptive step sequence. Only the first group drives Bulirsch-Stoer step-size
control, so it evolves exactly as it would alone.
"""

import numpy as np
from libc.math cimport sqrt, fabs, isfinite


cdef double _accel(const double[:, ::1] pos, const double[::1] m,
                   double[:, ::1] acc, Py_ssize_t blk) noexcept nogil:
    cdef Py_ssize_t n = pos.shape[0], d = pos.shape[1]
    cdef Py_ssize_t i, j, k, jend
    cdef double r2, inv3, dx, rmin2 = 1e300
    cdef double diff[3]
    for i in range(n):
        for k in range(d):
            acc[i, k] = 0.0
    if blk <= 0:
        blk = n
    for i in range(n):
        jend = (i // blk + 1) * blk
        if jend > n:
            jend = n
        for j in range(i + 1, jend):
            r2 = 0.0
            for k in range(d):
                dx = pos[j, k] - pos[i, k]
                diff[k] = dx
                r2 += dx * dx
            if r2 < rmin2:
                rmin2 = r2
            if r2 == 0.0:
                continue
            inv3 = 1.0 / (r2 * sqrt(r2))
            for k in range(d):
                acc[i, k] += m[j] * diff[k] * inv3
                acc[j, k] -= m[i] * diff[k] * inv3
    return sqrt(rmin2)


cdef Py_ssize_t _leapfrog(double[:, ::1] pos, double[:, ::1] vel, const double[::1] m,
                          double h, Py_ssize_t nsteps, double eps_sep,
                          double[:, ::1] acc, Py_ssize_t blk) noexcept nogil:
    cdef Py_ssize_t n = pos.shape[0], d = pos.shape[1]
    cdef Py_ssize_t s, i, k
    cdef double half = 0.5 * h
    if _accel(pos, m, acc, blk) < eps_sep:
        return 0
    for s in range(nsteps):
        for i in range(n):
            for k in range(d):
                vel[i, k] += half * acc[i, k]
                pos[i, k] += h * vel[i, k]
        if _accel(pos, m, acc, blk) < eps_sep:
            return s
        for i in range(n):
            for k in range(d):
                vel[i, k] += half * acc[i, k]
    return nsteps


cdef Py_ssize_t _rk4(double[:, ::1] pos, double[:, ::1] vel, const double[::1] m,
                     double h, Py_ssize_t nsteps, double eps_sep,
                     double[:, :, ::1] w, Py_ssize_t blk) noexcept nogil:
    cdef Py_ssize_t n = pos.shape[0], d = pos.shape[1]
    cdef Py_ssize_t s, i, k
    cdef double[:, ::1] tq = w[0]
    cdef double[:, ::1] tv = w[1]
    cdef double[:, ::1] a = w[2]
    cdef double[:, ::1] sq = w[3]
    cdef double[:, ::1] sv = w[4]
    cdef double c = h / 6.0, kq
    for s in range(nsteps):
        if _accel(pos, m, a, blk) < eps_sep:
            return s
        for i in range(n):
            for k in range(d):
                sq[i, k] = vel[i, k]
                sv[i, k] = a[i, k]
                tq[i, k] = pos[i, k] + 0.5 * h * vel[i, k]
                tv[i, k] = vel[i, k] + 0.5 * h * a[i, k]
        if _accel(tq, m, a, blk) < eps_sep:
            return s
        for i in range(n):
            for k in range(d):
                kq = tv[i, k]
                sq[i, k] += 2.0 * kq
                sv[i, k] += 2.0 * a[i, k]
                tq[i, k] = pos[i, k] + 0.5 * h * kq
                tv[i, k] = vel[i, k] + 0.5 * h * a[i, k]
        if _accel(tq, m, a, blk) < eps_sep:
            return s
        for i in range(n):
            for k in range(d):
                kq = tv[i, k]
                sq[i, k] += 2.0 * kq
                sv[i, k] += 2.0 * a[i, k]
                tq[i, k] = pos[i, k] + h * kq
                tv[i, k] = vel[i, k] + h * a[i, k]
        if _accel(tq, m, a, blk) < eps_sep:
            return s
        for i in range(n):
            for k in range(d):
                sq[i, k] += tv[i, k]
                sv[i, k] += a[i, k]
                pos[i, k] += c * sq[i, k]
                vel[i, k] += c * sv[i, k]
    return nsteps


cdef int _midpoint(const double[:, ::1] pos, const double[:, ::1] vel, const double[::1] m,
                   double H, Py_ssize_t nsub, double eps_sep,
                   double[:, ::1] out_pos, double[:, ::1] out_vel,
                   double[:, :, ::1] w, Py_ssize_t blk) noexcept nogil:
    cdef Py_ssize_t n = pos.shape[0], d = pos.shape[1]
    cdef Py_ssize_t s, i, k
    cdef double h = H / nsub, tmp
    cdef double[:, ::1] zq0 = w[0]
    cdef double[:, ::1] zv0 = w[1]
    cdef double[:, ::1] zq1 = w[2]
    cdef double[:, ::1] zv1 = w[3]
    cdef double[:, ::1] a = w[4]
    if _accel(pos, m, a, blk) < eps_sep:
        return 1
    for i in range(n):
        for k in range(d):
            zq0[i, k] = pos[i, k]
            zv0[i, k] = vel[i, k]
            zq1[i, k] = pos[i, k] + h * vel[i, k]
            zv1[i, k] = vel[i, k] + h * a[i, k]
    for s in range(1, nsub):
        if _accel(zq1, m, a, blk) < eps_sep:
            return 1
        for i in range(n):
            for k in range(d):
                tmp = zq0[i, k] + 2.0 * h * zv1[i, k]
                zq0[i, k] = zq1[i, k]
                zq1[i, k] = tmp
                tmp = zv0[i, k] + 2.0 * h * a[i, k]
                zv0[i, k] = zv1[i, k]
                zv1[i, k] = tmp
    if _accel(zq1, m, a, blk) < eps_sep:
        return 1
    for i in range(n):
        for k in range(d):
            out_pos[i, k] = 0.5 * (zq0[i, k] + zq1[i, k] + h * zv1[i, k])
            out_vel[i, k] = 0.5 * (zv0[i, k] + zv1[i, k] + h * a[i, k])
    return 0


def accelerations(const double[:, ::1] pos, const double[::1] m, double[:, ::1] acc,
                  Py_ssize_t block=0):
    """Fill ``acc`` and return the minimum pairwise separation."""
    cdef double r
    with nogil:
        r = _accel(pos, m, acc, block)
    return r


def leapfrog(double[:, ::1] pos, double[:, ::1] vel, const double[::1] m,
             double h, Py_ssize_t nsteps, double eps_sep, Py_ssize_t block=0):
    """Kick-drift-kick velocity Verlet, ``nsteps`` steps of size ``h``."""
    cdef double[:, ::1] acc = np.empty((pos.shape[0], pos.shape[1]))
    cdef Py_ssize_t done
    with nogil:
        done = _leapfrog(pos, vel, m, h, nsteps, eps_sep, acc, block)
    return done


def rk4(double[:, ::1] pos, double[:, ::1] vel, const double[::1] m,
        double h, Py_ssize_t nsteps, double eps_sep, Py_ssize_t block=0):
    """Classical fourth-order Runge-Kutta, ``nsteps`` steps of size ``h``."""
    cdef double[:, :, ::1] w = np.empty((5, pos.shape[0], pos.shape[1]))
    cdef Py_ssize_t done
    with nogil:
        done = _rk4(pos, vel, m, h, nsteps, eps_sep, w, block)
    return done


def midpoint(const double[:, ::1] pos, const double[:, ::1] vel, const double[::1] m,
             double H, Py_ssize_t nsub, double eps_sep,
             double[:, ::1] out_pos, double[:, ::1] out_vel, Py_ssize_t block=0):
    """Gragg modified-midpoint sweep over ``H`` with ``nsub`` substeps.

    Returns 0 on success, 1 if a separation fell below ``eps_sep``.
    """
    cdef double[:, :, ::1] w = np.empty((5, pos.shape[0], pos.shape[1]))
    cdef int status
    with nogil:
        status = _midpoint(pos, vel, m, H, nsub, eps_sep, out_pos, out_vel, w, block)
    return status


# Deuflhard step-number sequence; keep in sync with _pykernels.BS_SEQUENCE.
cdef enum:
    KMAX = 8
cdef int SEQ[KMAX]
SEQ[:] = [2, 4, 6, 8, 10, 12, 14, 16]
BS_SEQUENCE = tuple(SEQ[k] for k in range(KMAX))


cdef int _bs_try(const double[:, ::1] q, const double[:, ::1] v, const double[::1] m,
                 double H, double tol, double eps_sep,
                 double[:, :, ::1] T, double[:, ::1] oq, double[:, ::1] ov,
                 double[:, :, ::1] w, double* H_next, Py_ssize_t blk) noexcept nogil:
    cdef Py_ssize_t n = q.shape[0], d = q.shape[1]
    cdef Py_ssize_t half = n * d, N = 2 * n * d
    # with blocks, only the first block's components drive step-size control
    cdef Py_ssize_t ctrl = blk * d if 0 < blk < n else half
    cdef Py_ssize_t k, j, i, b, best
    cdef double hs[KMAX]
    cdef double works[KMAX]
    cdef int count = 0
    cdef double work = 0.0, ratio, err, e, sc, y0i, fac
    for k in range(KMAX):
        if _midpoint(q, v, m, H, SEQ[k], eps_sep, oq, ov, w, blk):
            H_next[0] = 0.25 * H
            return 0
        work += (SEQ[k] + 1) if k == 0 else SEQ[k]
        for i in range(n):
            for b in range(d):
                T[k, 0, i * d + b] = oq[i, b]
                T[k, 0, half + i * d + b] = ov[i, b]
        for j in range(1, k + 1):
            ratio = (<double>SEQ[k] / SEQ[k - j]) ** 2
            for i in range(N):
                T[k, j, i] = T[k, j - 1, i] + (T[k, j - 1, i] - T[k - 1, j - 1, i]) / (ratio - 1.0)
        if k == 0:
            continue
        err = 0.0
        for i in range(N):
            if ctrl < half and (i >= half + ctrl or (ctrl <= i < half)):
                continue
            y0i = q[i // d, i % d] if i < half else v[(i - half) // d, (i - half) % d]
            sc = 1.0 + (fabs(y0i) if fabs(y0i) > fabs(T[k, k, i]) else fabs(T[k, k, i]))
            e = fabs(T[k, k, i] - T[k, k - 1, i]) / sc
            if not (e <= err):
                err = e
        err /= tol
        if not isfinite(err):
            H_next[0] = 0.25 * H
            return 0
        fac = 0.94 * (0.65 / (err if err > 1e-10 else 1e-10)) ** (1.0 / (2 * k + 1))
        if fac > 4.0:
            fac = 4.0
        elif fac < 0.02:
            fac = 0.02
        hs[count] = H * fac
        works[count] = work / hs[count]
        count += 1
        if err <= 1.0:
            best = 0
            for j in range(1, count):
                if works[j] < works[best]:
                    best = j
            H_next[0] = hs[best]
            if best == count - 1 and k + 1 < KMAX:
                H_next[0] = hs[best] * (work + SEQ[k + 1]) / work
                if H_next[0] > 4.0 * H:
                    H_next[0] = 4.0 * H
            for i in range(n):
                for b in range(d):
                    oq[i, b] = T[k, k, i * d + b]
                    ov[i, b] = T[k, k, half + i * d + b]
            return 1
    fac = hs[count - 1]
    if fac > 0.5 * H:
        fac = 0.5 * H
    elif fac < 0.02 * H:
        fac = 0.02 * H
    H_next[0] = fac
    return 0


def bs_step(const double[:, ::1] q, const double[:, ::1] v, const double[::1] m,
            double H, double tol, double eps_sep,
            double[:, ::1] out_q, double[:, ::1] out_v, Py_ssize_t block=0):
    """One Bulirsch-Stoer trial of size ``H > 0``.

    Returns ``(accepted, H_next)``; on acceptance the result is in
    ``out_q``/``out_v``, otherwise ``H_next`` is the size to retry with.
    """
    cdef Py_ssize_t n = q.shape[0], d = q.shape[1]
    cdef double[:, :, ::1] T = np.empty((KMAX, KMAX, 2 * n * d))
    cdef double[:, :, ::1] w = np.empty((5, n, d))
    cdef double Hn = 0.0
    cdef int ok
    with nogil:
        ok = _bs_try(q, v, m, H, tol, eps_sep, T, out_q, out_v, w, &Hn, block)
    return bool(ok), Hn


def bs_advance(double[:, ::1] q, double[:, ::1] v, const double[::1] m,
               double span, double h, double tol, double eps_sep,
               double h_floor, Py_ssize_t max_steps, Py_ssize_t block=0):
    """Advance in place by exactly ``span`` with adaptive BS steps.

    A step fails with underflow when retries shrink it below
    ``h_floor`` times the size it was first attempted with.

    Returns ``(status, steps, h_next, t_reached)``; status 0 = done,
    1 = step underflow, 2 = step budget exhausted.
    """
    cdef Py_ssize_t n = q.shape[0], d = q.shape[1], i, b
    cdef double[:, :, ::1] T = np.empty((KMAX, KMAX, 2 * n * d))
    cdef double[:, :, ::1] w = np.empty((5, n, d))
    cdef double[:, ::1] oq = np.empty((n, d))
    cdef double[:, ::1] ov = np.empty((n, d))
    cdef double t = 0.0, H, Hn = 0.0, remaining, floor
    cdef Py_ssize_t steps = 0
    cdef int status = 0, clipped
    cdef double end_tol = 1e-13 * (span if span > 1.0 else 1.0)
    with nogil:
        while True:
            remaining = span - t
            if remaining <= end_tol:
                break
            if steps >= max_steps:
                status = 2
                break
            H = h if h < remaining else remaining
            clipped = H < h
            floor = h_floor * H
            while True:
                if H < floor:
                    status = 1
                    break
                if _bs_try(q, v, m, H, tol, eps_sep, T, oq, ov, w, &Hn, block):
                    break
                H = Hn
            if status:
                break
            for i in range(n):
                for b in range(d):
                    q[i, b] = oq[i, b]
                    v[i, b] = ov[i, b]
            t += H
            steps += 1
            h = (Hn if Hn > h else h) if clipped else Hn
    return status, steps, h, t
