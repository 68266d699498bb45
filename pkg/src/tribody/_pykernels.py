"""Pure-Python/NumPy twins of the compiled kernels in ``_ckernels.pyx``.

Used when the extension is not built or ``TRIBODY_PURE=1`` is set. Every
function keeps the exact calling convention of its compiled counterpart,
including the optional ``block`` size of mutually non-interacting groups.
"""

import numpy as np


def accelerations(pos, m, acc, block=0):
    """Fill ``acc`` and return the minimum pairwise separation."""
    n = pos.shape[0]
    blk = block if block > 0 else n
    acc[:] = 0.0
    rmin2 = np.inf
    for i in range(n):
        for j in range(i + 1, min(n, (i // blk + 1) * blk)):
            diff = pos[j] - pos[i]
            r2 = float(diff @ diff)
            if r2 < rmin2:
                rmin2 = r2
            if r2 == 0.0:
                continue
            inv3 = 1.0 / (r2 * np.sqrt(r2))
            acc[i] += m[j] * diff * inv3
            acc[j] -= m[i] * diff * inv3
    return float(np.sqrt(rmin2))


def leapfrog(pos, vel, m, h, nsteps, eps_sep, block=0):
    acc = np.empty_like(pos)
    half = 0.5 * h
    if accelerations(pos, m, acc, block) < eps_sep:
        return 0
    for s in range(nsteps):
        vel += half * acc
        pos += h * vel
        if accelerations(pos, m, acc, block) < eps_sep:
            return s
        vel += half * acc
    return nsteps


def rk4(pos, vel, m, h, nsteps, eps_sep, block=0):
    a = np.empty_like(pos)
    for s in range(nsteps):
        if accelerations(pos, m, a, block) < eps_sep:
            return s
        k1q, k1v = vel.copy(), a.copy()
        k2q = vel + 0.5 * h * k1v
        if accelerations(pos + 0.5 * h * k1q, m, a, block) < eps_sep:
            return s
        k2v = a.copy()
        k3q = vel + 0.5 * h * k2v
        if accelerations(pos + 0.5 * h * k2q, m, a, block) < eps_sep:
            return s
        k3v = a.copy()
        k4q = vel + h * k3v
        if accelerations(pos + h * k3q, m, a, block) < eps_sep:
            return s
        k4v = a
        pos += (h / 6.0) * (k1q + 2.0 * k2q + 2.0 * k3q + k4q)
        vel += (h / 6.0) * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
    return nsteps


def midpoint(pos, vel, m, H, nsub, eps_sep, out_pos, out_vel, block=0):
    h = H / nsub
    a = np.empty_like(pos)
    if accelerations(pos, m, a, block) < eps_sep:
        return 1
    zq0, zv0 = pos.copy(), vel.copy()
    zq1, zv1 = pos + h * vel, vel + h * a
    for _ in range(1, nsub):
        if accelerations(zq1, m, a, block) < eps_sep:
            return 1
        zq0, zq1 = zq1, zq0 + 2.0 * h * zv1
        zv0, zv1 = zv1, zv0 + 2.0 * h * a
    if accelerations(zq1, m, a, block) < eps_sep:
        return 1
    out_pos[:] = 0.5 * (zq0 + zq1 + h * zv1)
    out_vel[:] = 0.5 * (zv0 + zv1 + h * a)
    return 0


BS_SEQUENCE = (2, 4, 6, 8, 10, 12, 14, 16)


def bs_step(q, v, m, H, tol, eps_sep, out_q, out_v, block=0):
    """One Bulirsch-Stoer trial of size ``H > 0``; see ``_ckernels.bs_step``."""
    nb, d = q.shape
    half = nb * d
    y0 = np.concatenate([q.ravel(), v.ravel()])
    # with blocks, only the first block's components drive step-size control
    ctrl = np.ones(2 * half, dtype=bool)
    if 0 < block < nb:
        ctrl[block * d:half] = False
        ctrl[half + block * d:] = False
    oq, ov = np.empty_like(q), np.empty_like(v)
    tableau = []
    work = 0.0
    hs, works = [], []
    for k, nsub in enumerate(BS_SEQUENCE):
        if midpoint(q, v, m, H, nsub, eps_sep, oq, ov, block):
            return False, 0.25 * H
        work += nsub + 1 if k == 0 else nsub
        row = [np.concatenate([oq.ravel(), ov.ravel()])]
        for j in range(1, k + 1):
            ratio = (BS_SEQUENCE[k] / BS_SEQUENCE[k - j]) ** 2
            row.append(row[j - 1] + (row[j - 1] - tableau[k - 1][j - 1]) / (ratio - 1.0))
        tableau.append(row)
        if k == 0:
            continue
        scale = 1.0 + np.maximum(np.abs(y0), np.abs(row[k]))
        err = float(np.max((np.abs(row[k] - row[k - 1]) / scale)[ctrl])) / tol
        if not np.isfinite(err):
            return False, 0.25 * H
        fac = 0.94 * (0.65 / max(err, 1e-10)) ** (1.0 / (2 * k + 1))
        hs.append(H * min(4.0, max(0.02, fac)))
        works.append(work / hs[-1])
        if err <= 1.0:
            best = min(range(len(works)), key=works.__getitem__)
            H_next = hs[best]
            if best == len(hs) - 1 and k + 1 < len(BS_SEQUENCE):
                H_next = min(4.0 * H, H_next * (work + BS_SEQUENCE[k + 1]) / work)
            out_q[:] = row[k][:half].reshape(nb, d)
            out_v[:] = row[k][half:].reshape(nb, d)
            return True, H_next
    return False, min(0.5 * H, max(0.02 * H, hs[-1]))


def bs_advance(q, v, m, span, h, tol, eps_sep, h_floor, max_steps, block=0):
    """Advance in place by exactly ``span``; see ``_ckernels.bs_advance``.

    ``h_floor`` is relative to the size each step is first attempted with.
    """
    oq, ov = np.empty_like(q), np.empty_like(v)
    t = 0.0
    steps = 0
    end_tol = 1e-13 * max(span, 1.0)
    while True:
        remaining = span - t
        if remaining <= end_tol:
            return 0, steps, h, t
        if steps >= max_steps:
            return 2, steps, h, t
        H = min(h, remaining)
        clipped = H < h
        floor = h_floor * H
        while True:
            if H < floor:
                return 1, steps, h, t
            ok, Hn = bs_step(q, v, m, H, tol, eps_sep, oq, ov, block)
            if ok:
                break
            H = Hn
        q[:] = oq
        v[:] = ov
        t += H
        steps += 1
        h = max(Hn, h) if clipped else Hn
