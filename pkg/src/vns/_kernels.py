"""Compiled particle-grid kernels (cloud-in-cell).

Interpolation and deposition use the same tensor-product linear kernel,
so they are discrete adjoints of each other.  Deposition splits the
particles into a fixed number of contiguous chunks, each accumulating
into a private grid; the private grids are summed in chunk order.  The
result is therefore independent of the number of worker threads.
"""

import os

import numba as nb
import numpy as np

if "NUMBA_THREADING_LAYER" not in os.environ:
    # the portable layer avoids a noisy TBB version probe on some systems
    nb.config.THREADING_LAYER = "workqueue"

N_CHUNKS = 8
TWO_PI = 2.0 * np.pi


@nb.njit(cache=True, fastmath=False)
def _interp2(values, pos, h):
    nc, n = values.shape[0], values.shape[1]
    npart = pos.shape[0]
    out = np.empty((npart, nc))
    for p in range(npart):
        sx = pos[p, 0] / h
        sy = pos[p, 1] / h
        ix = int(np.floor(sx))
        iy = int(np.floor(sy))
        fx = sx - ix
        fy = sy - iy
        ix0 = ix % n
        iy0 = iy % n
        ix1 = (ix0 + 1) % n
        iy1 = (iy0 + 1) % n
        w00 = (1.0 - fx) * (1.0 - fy)
        w10 = fx * (1.0 - fy)
        w01 = (1.0 - fx) * fy
        w11 = fx * fy
        for c in range(nc):
            out[p, c] = (
                w00 * values[c, ix0, iy0]
                + w10 * values[c, ix1, iy0]
                + w01 * values[c, ix0, iy1]
                + w11 * values[c, ix1, iy1]
            )
    return out


@nb.njit(cache=True, fastmath=False)
def _interp3(values, pos, h):
    nc, n = values.shape[0], values.shape[1]
    npart = pos.shape[0]
    out = np.zeros((npart, nc))
    for p in range(npart):
        sx = pos[p, 0] / h
        sy = pos[p, 1] / h
        sz = pos[p, 2] / h
        ix = int(np.floor(sx))
        iy = int(np.floor(sy))
        iz = int(np.floor(sz))
        fr = (sx - ix, sy - iy, sz - iz)
        base = (ix % n, iy % n, iz % n)
        for a in range(2):
            wa = fr[0] if a else 1.0 - fr[0]
            ia = (base[0] + a) % n
            for b in range(2):
                wb = fr[1] if b else 1.0 - fr[1]
                ib = (base[1] + b) % n
                for cc in range(2):
                    wc = fr[2] if cc else 1.0 - fr[2]
                    ic = (base[2] + cc) % n
                    w = wa * wb * wc
                    for c in range(nc):
                        out[p, c] += w * values[c, ia, ib, ic]
    return out


@nb.njit(cache=True, parallel=True, fastmath=False)
def _deposit2(pos, q, n, h, nchunks):
    npart, nc = q.shape
    priv = np.zeros((nchunks, nc, n, n))
    size = (npart + nchunks - 1) // nchunks
    for t in nb.prange(nchunks):
        lo = t * size
        hi = min(npart, lo + size)
        for p in range(lo, hi):
            sx = pos[p, 0] / h
            sy = pos[p, 1] / h
            ix = int(np.floor(sx))
            iy = int(np.floor(sy))
            fx = sx - ix
            fy = sy - iy
            ix0 = ix % n
            iy0 = iy % n
            ix1 = (ix0 + 1) % n
            iy1 = (iy0 + 1) % n
            w00 = (1.0 - fx) * (1.0 - fy)
            w10 = fx * (1.0 - fy)
            w01 = (1.0 - fx) * fy
            w11 = fx * fy
            for c in range(nc):
                qc = q[p, c]
                priv[t, c, ix0, iy0] += w00 * qc
                priv[t, c, ix1, iy0] += w10 * qc
                priv[t, c, ix0, iy1] += w01 * qc
                priv[t, c, ix1, iy1] += w11 * qc
    out = np.zeros((nc, n, n))
    for t in range(nchunks):
        out += priv[t]
    return out


@nb.njit(cache=True, parallel=True, fastmath=False)
def _deposit3(pos, q, n, h, nchunks):
    npart, nc = q.shape
    priv = np.zeros((nchunks, nc, n, n, n))
    size = (npart + nchunks - 1) // nchunks
    for t in nb.prange(nchunks):
        lo = t * size
        hi = min(npart, lo + size)
        for p in range(lo, hi):
            sx = pos[p, 0] / h
            sy = pos[p, 1] / h
            sz = pos[p, 2] / h
            ix = int(np.floor(sx))
            iy = int(np.floor(sy))
            iz = int(np.floor(sz))
            fr = (sx - ix, sy - iy, sz - iz)
            base = (ix % n, iy % n, iz % n)
            for a in range(2):
                wa = fr[0] if a else 1.0 - fr[0]
                ia = (base[0] + a) % n
                for b in range(2):
                    wb = fr[1] if b else 1.0 - fr[1]
                    ib = (base[1] + b) % n
                    for cc in range(2):
                        wc = fr[2] if cc else 1.0 - fr[2]
                        ic = (base[2] + cc) % n
                        w = wa * wb * wc
                        for c in range(nc):
                            priv[t, c, ia, ib, ic] += w * q[p, c]
    out = np.zeros((nc, n, n, n))
    for t in range(nchunks):
        out += priv[t]
    return out


def interpolate(values, pos, h):
    """Multilinear interpolation of (c, n, ..., n) grid values at positions."""
    values = np.ascontiguousarray(values, dtype=np.float64)
    pos = np.ascontiguousarray(pos, dtype=np.float64)
    if pos.shape[0] == 0:
        return np.zeros((0, values.shape[0]))
    if pos.shape[1] == 2:
        return _interp2(values, pos, h)
    return _interp3(values, pos, h)


def deposit_sum(pos, q, n, h, nchunks=N_CHUNKS):
    """Sum_p q_p K(x_node - x_p) with the CIC kernel; returns (c, n, ..., n)."""
    pos = np.ascontiguousarray(pos, dtype=np.float64)
    q = np.ascontiguousarray(q, dtype=np.float64)
    d = pos.shape[1]
    if pos.shape[0] == 0:
        return np.zeros((q.shape[1],) + (n,) * d)
    if d == 2:
        return _deposit2(pos, q, n, h, nchunks)
    return _deposit3(pos, q, n, h, nchunks)


@nb.njit(cache=True)
def _wrap1(x):
    y = x - TWO_PI * np.floor(x / TWO_PI)
    if y >= TWO_PI or y < 0.0:
        y = 0.0
    return y


@nb.njit(cache=True)
def _cic2(px, py, n, h):
    # positions are already wrapped into [0, 2 pi), so 0 <= ix <= n
    sx = px / h
    sy = py / h
    ix = int(sx)
    iy = int(sy)
    fx = sx - ix
    fy = sy - iy
    if ix >= n:
        ix -= n
    if iy >= n:
        iy -= n
    ix1 = ix + 1
    iy1 = iy + 1
    if ix1 == n:
        ix1 = 0
    if iy1 == n:
        iy1 = 0
    return ix, iy, ix1, iy1, fx, fy


@nb.njit(cache=True, parallel=True)
def _push2(pos, vel, u, h, dt, eps, sig, e, one_minus_e):
    npart = pos.shape[0]
    n = u.shape[1]
    xo = np.empty_like(pos)
    vo = np.empty_like(vel)
    for p in nb.prange(npart):
        mx = _wrap1(pos[p, 0] + 0.5 * dt / sig * vel[p, 0])
        my = _wrap1(pos[p, 1] + 0.5 * dt / sig * vel[p, 1])
        ix0, iy0, ix1, iy1, fx, fy = _cic2(mx, my, n, h)
        w00 = (1.0 - fx) * (1.0 - fy)
        w10 = fx * (1.0 - fy)
        w01 = (1.0 - fx) * fy
        w11 = fx * fy
        for c in range(2):
            U = (
                w00 * u[c, ix0, iy0]
                + w10 * u[c, ix1, iy0]
                + w01 * u[c, ix0, iy1]
                + w11 * u[c, ix1, iy1]
            )
            rel = vel[p, c] - sig * U
            vo[p, c] = sig * U + rel * e
            xo[p, c] = _wrap1(pos[p, c] + dt * U + (eps / sig) * one_minus_e * rel)
    return xo, vo


@nb.njit(cache=True, parallel=True)
def _moments2(pos, vel, wt, u, h, sig, fcoef, nchunks):
    """rho, j = v/sigma and fcoef * (v/sigma - u(x)) deposited in one pass.

    Also returns the interpolated u(x_p), shape (npart, 2).
    """
    npart = pos.shape[0]
    n = u.shape[1]
    priv = np.zeros((nchunks, 5, n, n))
    Up = np.empty((npart, 2))
    size = (npart + nchunks - 1) // nchunks
    for t in nb.prange(nchunks):
        lo = t * size
        hi = min(npart, lo + size)
        for p in range(lo, hi):
            ix0, iy0, ix1, iy1, fx, fy = _cic2(pos[p, 0], pos[p, 1], n, h)
            w00 = (1.0 - fx) * (1.0 - fy)
            w10 = fx * (1.0 - fy)
            w01 = (1.0 - fx) * fy
            w11 = fx * fy
            q = np.empty(5)
            q[0] = wt[p]
            for c in range(2):
                U = (
                    w00 * u[c, ix0, iy0]
                    + w10 * u[c, ix1, iy0]
                    + w01 * u[c, ix0, iy1]
                    + w11 * u[c, ix1, iy1]
                )
                Up[p, c] = U
                vs = vel[p, c] / sig
                q[1 + c] = wt[p] * vs
                q[3 + c] = fcoef * wt[p] * (vs - U)
            for c in range(5):
                priv[t, c, ix0, iy0] += w00 * q[c]
                priv[t, c, ix1, iy0] += w10 * q[c]
                priv[t, c, ix0, iy1] += w01 * q[c]
                priv[t, c, ix1, iy1] += w11 * q[c]
    out = np.zeros((5, n, n))
    for t in range(nchunks):
        out += priv[t]
    return out, Up


@nb.njit(cache=True)
def _stats(vel, wt, U, sig):
    npart, d = vel.shape
    mass = 0.0
    j = np.zeros(d)
    kin = 0.0
    rel2 = 0.0
    rel1 = 0.0
    for p in range(npart):
        w = wt[p]
        mass += w
        s2 = 0.0
        r2 = 0.0
        for c in range(d):
            vs = vel[p, c] / sig
            j[c] += w * vs
            s2 += vel[p, c] * vel[p, c]
            r = vs - U[p, c]
            r2 += r * r
        kin += w * s2
        rel2 += w * r2
        rel1 += w * np.sqrt(r2)
    spread = 0.0
    if mass > 0.0:
        # second pass: spread about the mean drift, free of cancellation
        for p in range(npart):
            s2 = 0.0
            for c in range(d):
                r = vel[p, c] / sig - j[c] / mass
                s2 += r * r
            spread += wt[p] * s2
    return mass, j, kin, rel2, rel1, spread


@nb.njit(cache=True)
def _power_sums(vel, wt, U, scale, rs):
    npart, d = vel.shape
    out = np.zeros(rs.size)
    for p in range(npart):
        r2 = 0.0
        for c in range(d):
            r = vel[p, c] * scale - U[p, c]
            r2 += r * r
        mag = np.sqrt(r2)
        for k in range(rs.size):
            out[k] += wt[p] * mag ** rs[k]
    return out


@nb.njit(cache=True)
def _relent_sums(vel, wt, scale, ref, Ueps, has_g):
    # ref columns: u_ref (d), grad u_ref row-major (d*d), G (d, if has_g)
    npart, d = vel.shape
    kin = 0.0
    strain = 0.0
    work = 0.0
    for p in range(npart):
        w = wt[p]
        k2 = 0.0
        sq = 0.0
        for i in range(d):
            ri = vel[p, i] * scale - ref[p, i]
            k2 += ri * ri
            for j in range(d):
                rj = vel[p, j] * scale - ref[p, j]
                sq += ri * rj * ref[p, d + i * d + j]
            if has_g:
                work += w * (vel[p, i] * scale - Ueps[p, i]) * ref[p, d + d * d + i]
        kin += w * k2
        strain += w * sq
    return kin, strain, work


@nb.njit(cache=True)
def _impulse_q(old_pos, new_pos, old_vel, new_vel, wt, coef):
    npart, d = old_pos.shape
    mid = np.empty((npart, d))
    q = np.empty((npart, d))
    for p in range(npart):
        for c in range(d):
            disp = new_pos[p, c] - old_pos[p, c]
            disp -= TWO_PI * np.round(disp / TWO_PI)
            mid[p, c] = _wrap1(old_pos[p, c] + 0.5 * disp)
            q[p, c] = coef * wt[p] * (new_vel[p, c] - old_vel[p, c])
    return mid, q


def wrap(x):
    """Map coordinates into [0, 2 pi)."""
    y = x - TWO_PI * np.floor(x / TWO_PI)
    y[(y >= TWO_PI) | (y < 0.0)] = 0.0
    return y


def push2(pos, vel, u, h, dt, eps, sig):
    e = np.exp(-dt / eps)
    one_minus_e = -np.expm1(-dt / eps)
    return _push2(
        np.ascontiguousarray(pos), np.ascontiguousarray(vel),
        np.ascontiguousarray(u), h, dt, eps, sig, e, one_minus_e,
    )


def moments2(pos, vel, wt, u, h, sig, fcoef, nchunks=N_CHUNKS):
    """Fused 2D deposit; returns ((5, n, n) sums, interpolated u at particles)."""
    return _moments2(
        np.ascontiguousarray(pos), np.ascontiguousarray(vel),
        np.ascontiguousarray(wt), np.ascontiguousarray(u), h, sig, fcoef, nchunks,
    )


def particle_stats(vel, wt, U, sig):
    """Ensemble sums used by the per-step diagnostics.

    Returns (mass, sum w v/sigma, sum w |v|^2, sum w |v/sigma - U|^2,
    sum w |v/sigma - U|, sum w |v/sigma - drift|^2) where drift is the
    mass-averaged v/sigma.
    """
    vel = np.ascontiguousarray(vel, dtype=np.float64)
    U = np.ascontiguousarray(U, dtype=np.float64)
    if vel.shape[0] == 0:
        return 0.0, np.zeros(vel.shape[1]), 0.0, 0.0, 0.0, 0.0
    return _stats(vel, np.ascontiguousarray(wt, dtype=np.float64), U, sig)


def impulse_charges(old_pos, new_pos, old_vel, new_vel, wt, coef):
    """Mid-path positions and charges coef * w (v+ - v) of a velocity update."""
    return _impulse_q(
        np.ascontiguousarray(old_pos), np.ascontiguousarray(new_pos),
        np.ascontiguousarray(old_vel), np.ascontiguousarray(new_vel),
        np.ascontiguousarray(wt), coef,
    )


def power_sums(vel, wt, U, scale, rs):
    """sum w |scale * v - U|^r for each exponent r."""
    rs = np.asarray(rs, dtype=np.float64)
    if len(vel) == 0:
        return np.zeros(rs.size)
    return _power_sums(
        np.ascontiguousarray(vel, dtype=np.float64), np.ascontiguousarray(wt, dtype=np.float64),
        np.ascontiguousarray(U, dtype=np.float64), float(scale), rs,
    )


def relative_entropy_sums(vel, wt, scale, ref, Ueps, has_g):
    """Particle sums of the relative entropy.

    Returns (sum w |r|^2, sum w r.(grad u_ref) r, sum w (scale v - Ueps).G)
    with r = scale v - u_ref(x); ``ref`` holds u_ref, grad u_ref and
    optionally G interpolated at the particles.
    """
    if len(vel) == 0:
        return 0.0, 0.0, 0.0
    return _relent_sums(
        np.ascontiguousarray(vel, dtype=np.float64), np.ascontiguousarray(wt, dtype=np.float64),
        float(scale), np.ascontiguousarray(ref, dtype=np.float64),
        np.ascontiguousarray(Ueps, dtype=np.float64), bool(has_g),
    )
