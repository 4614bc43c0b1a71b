"""Reference solvers for the two limit systems.

Transport-Navier-Stokes: u solves the unforced Navier-Stokes equation and
rho is passively transported by u.

Inhomogeneous Navier-Stokes: total density 1 + rho,

    (1 + rho)(du/dt + u . grad u) - Lap u + grad p = 0,   div u = 0,
    d rho/dt + u . grad rho = 0.

The density is carried by a semi-Lagrangian scheme with a bounded cubic
interpolant and an exact mass fixer, so no new extrema appear.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba as nb
import numpy as np
from scipy.sparse.linalg import LinearOperator, cg

from . import _kernels
from .fluid import check_cfl, ns_step_hat
from .grid import TorusField, leray_project_hat

__all__ = [
    "TnsState",
    "InsState",
    "PressureSolveError",
    "tns_step",
    "ins_step",
    "transport_density",
    "ns_pressure_force",
]


class PressureSolveError(RuntimeError):
    """Raised when the variable-density pressure solve fails to converge."""


@nb.njit(cache=True)
def _lagrange4(f):
    wm1 = -f * (f - 1.0) * (f - 2.0) / 6.0
    w0 = (f + 1.0) * (f - 1.0) * (f - 2.0) / 2.0
    w1 = -(f + 1.0) * f * (f - 2.0) / 2.0
    w2 = (f + 1.0) * f * (f - 1.0) / 6.0
    return wm1, w0, w1, w2


@nb.njit(cache=True)
def _sl_cubic2(q, dep, h):
    n = q.shape[0]
    out = np.empty_like(q)
    lo = np.empty_like(q)
    hi = np.empty_like(q)
    for i in range(n):
        for j in range(n):
            sx = dep[0, i, j] / h
            sy = dep[1, i, j] / h
            ix = int(np.floor(sx))
            iy = int(np.floor(sy))
            wx = _lagrange4(sx - ix)
            wy = _lagrange4(sy - iy)
            acc = 0.0
            for a in range(4):
                ia = (ix - 1 + a) % n
                row = 0.0
                for b in range(4):
                    row += wy[b] * q[ia, (iy - 1 + b) % n]
                acc += wx[a] * row
            mn = np.inf
            mx = -np.inf
            for a in range(2):
                for b in range(2):
                    val = q[(ix + a) % n, (iy + b) % n]
                    mn = min(mn, val)
                    mx = max(mx, val)
            out[i, j] = acc
            lo[i, j] = mn
            hi[i, j] = mx
    return out, lo, hi


@nb.njit(cache=True)
def _sl_cubic3(q, dep, h):
    n = q.shape[0]
    out = np.empty_like(q)
    lo = np.empty_like(q)
    hi = np.empty_like(q)
    for i in range(n):
        for j in range(n):
            for k in range(n):
                sx = dep[0, i, j, k] / h
                sy = dep[1, i, j, k] / h
                sz = dep[2, i, j, k] / h
                ix = int(np.floor(sx))
                iy = int(np.floor(sy))
                iz = int(np.floor(sz))
                wx = _lagrange4(sx - ix)
                wy = _lagrange4(sy - iy)
                wz = _lagrange4(sz - iz)
                acc = 0.0
                for a in range(4):
                    for b in range(4):
                        for c in range(4):
                            acc += (
                                wx[a] * wy[b] * wz[c]
                                * q[(ix - 1 + a) % n, (iy - 1 + b) % n, (iz - 1 + c) % n]
                            )
                mn = np.inf
                mx = -np.inf
                for a in range(2):
                    for b in range(2):
                        for c in range(2):
                            val = q[(ix + a) % n, (iy + b) % n, (iz + c) % n]
                            mn = min(mn, val)
                            mx = max(mx, val)
                out[i, j, k] = acc
                lo[i, j, k] = mn
                hi[i, j, k] = mx
    return out, lo, hi


def _mass_fix(q, lo, hi, target_mean):
    """Clip to [lo, hi] and shift uniformly (inside the bounds) to hit the mean."""
    q = np.clip(q, lo, hi)

    def mean_at(lam):
        return float(np.mean(np.clip(q + lam, lo, hi)))

    deficit = target_mean - float(np.mean(q))
    if deficit == 0.0:
        return q
    span = float(np.max(hi - lo)) + abs(deficit) + 1e-300
    a, b = (0.0, span) if deficit > 0 else (-span, 0.0)
    if (deficit > 0 and mean_at(b) < target_mean) or (deficit < 0 and mean_at(a) > target_mean):
        return np.clip(q + (b if deficit > 0 else a), lo, hi)
    for _ in range(200):
        mid = 0.5 * (a + b)
        if mid == a or mid == b:
            break
        if mean_at(mid) < target_mean:
            a = mid
        else:
            b = mid
    lam = a if abs(mean_at(a) - target_mean) <= abs(mean_at(b) - target_mean) else b
    return np.clip(q + lam, lo, hi)


def transport_density(grid, rho, u_old, u_new, dt):
    """Semi-Lagrangian step of d rho/dt + u . grad rho = 0.

    Departure points use the midpoint rule on (u_old + u_new)/2; the cubic
    Lagrange value is bounded by the enclosing cell's node values and the
    mean is restored exactly by a bounded uniform shift.
    """
    u_mid = 0.5 * (u_old + u_new)
    x = grid.coords.reshape(grid.dim, -1).T
    flat = u_mid
    half = _kernels.wrap(x - 0.5 * dt * _kernels.interpolate(flat, x, grid.h))
    dep = _kernels.wrap(x - dt * _kernels.interpolate(flat, half, grid.h))
    dep = np.ascontiguousarray(dep.T.reshape((grid.dim,) + grid.shape))
    q = np.ascontiguousarray(rho, dtype=float)
    if grid.dim == 2:
        out, lo, hi = _sl_cubic2(q, dep, grid.h)
    else:
        out, lo, hi = _sl_cubic3(q, dep, grid.h)
    return _mass_fix(out, lo, hi, float(np.mean(q)))


def advective_hat(grid, uhat):
    """Transform of (u . grad) u in advective form."""
    u = grid.ifft(uhat)
    k = grid.deriv_wavenumbers
    out = np.zeros_like(u)
    for j in range(grid.dim):
        du = grid.ifft(1j * k[j] * uhat)
        out += u[j] * du
    return grid.fft(out)


def ns_pressure_force(grid, uhat):
    """G = grad p - Lap u for the constant-density Navier-Stokes flow.

    Since du/dt + (u . grad) u = Lap u - grad p, G equals -Du/Dt.
    """
    adv = advective_hat(grid, uhat) * grid.dealias_mask
    grad_p = -(adv - leray_project_hat(grid, adv))
    return TorusField.from_spectrum(grid, grad_p + grid.k2 * uhat)


@dataclass
class TnsState:
    u: TorusField
    rho: TorusField
    t: float = 0.0

    def pressure_force(self):
        return ns_pressure_force(self.u.grid, self.u.spectrum())


def tns_step(state, dt, cfl=0.5):
    """Advance the Transport-Navier-Stokes pair by dt."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    grid = state.u.grid
    check_cfl(grid, state.u.values, dt, cfl)
    uhat = ns_step_hat(grid, state.u.spectrum(), None, dt)
    u_new = grid.ifft(uhat)
    rho = transport_density(grid, state.rho.values[0], state.u.values, u_new, dt)
    return TnsState(
        TorusField.from_spectrum(grid, uhat, div_free=True),
        TorusField(grid, rho),
        state.t + dt,
    )


class _VariableProjector:
    """P_a w = w - a grad p with div(a grad p) = div w, a = 1/(1 + rho)."""

    def __init__(self, grid, a, tol=1e-10, maxiter=500):
        self.grid = grid
        self.a = a
        self.tol = tol
        self.maxiter = maxiter
        self.k = grid.deriv_wavenumbers
        kk = np.sum(self.k**2, axis=0)
        abar = float(np.mean(a))
        self.inv = np.zeros_like(kk)
        self.inv[kk > 0] = 1.0 / (abar * kk[kk > 0])
        self.constant = bool(np.ptp(a) == 0.0)
        self.p_guess = None
        self.iterations = 0
        size = int(np.prod(grid.shape))
        self.op = LinearOperator((size, size), matvec=self._neg_div_a_grad, dtype=float)
        self.prec = LinearOperator((size, size), matvec=self._precondition, dtype=float)

    def _grad(self, phat):
        return self.grid.ifft(1j * self.k * phat)

    def _div_hat(self, w):
        return np.sum(1j * self.k * self.grid.fft(w), axis=0)

    def _neg_div_a_grad(self, p):
        phat = self.grid.fft(p.reshape(self.grid.shape))
        out = -self._div_hat(self.a * self._grad(phat))
        return self.grid.ifft(out).ravel()

    def _precondition(self, r):
        rhat = self.grid.fft(r.reshape(self.grid.shape))
        return self.grid.ifft(rhat * self.inv).ravel()

    def a_grad_p(self, what):
        """Return a grad p for the spectral field ``what``."""
        grid = self.grid
        b_hat = -np.sum(1j * self.k * what, axis=0)
        if self.constant:
            return self.a * self._grad(b_hat * self.inv)
        b = grid.ifft(b_hat).ravel()
        if not np.any(b):
            return np.zeros((grid.dim,) + grid.shape)
        count = [0]

        def tick(_):
            count[0] += 1

        p, info = cg(
            self.op, b, x0=self.p_guess, rtol=self.tol, atol=0.0,
            maxiter=self.maxiter, M=self.prec, callback=tick,
        )
        if info != 0:
            raise PressureSolveError(
                f"pressure CG did not reach residual {self.tol:g} in {self.maxiter} iterations"
            )
        self.iterations += count[0]
        self.p_guess = p
        return self.a * self._grad(grid.fft(p.reshape(grid.shape)))

    def project(self, what):
        return what - self.grid.fft(self.a_grad_p(what))


@dataclass
class InsState:
    u: TorusField
    rho: TorusField
    t: float = 0.0
    G: TorusField | None = None
    cg_iterations: int = 0

    def __post_init__(self):
        if np.any(self.rho.values < -1e-12):
            raise ValueError("density perturbation must be non-negative")

    def momentum_mean(self):
        return np.mean((1.0 + self.rho.values) * self.u.values, axis=tuple(range(1, self.u.values.ndim)))

    def kinetic_energy(self):
        return 0.5 * float(np.mean((1.0 + self.rho.values[0]) * np.sum(self.u.values**2, axis=0)))


def _ins_rhs_factory(grid, proj, a, c):
    lap_weight = a - c

    def rhs(uhat):
        w = -advective_hat(grid, uhat)
        if np.any(lap_weight):
            w = w + grid.fft(lap_weight * grid.ifft(-grid.k2 * uhat))
        w = w * grid.dealias_mask
        return proj.project(w)

    return rhs


def _ins_u_step(grid, uhat, rho_mid, dt, tol, maxiter):
    a = 1.0 / (1.0 + rho_mid)
    c = float(np.mean(a))
    proj = _VariableProjector(grid, a, tol, maxiter)
    rhs = _ins_rhs_factory(grid, proj, a, c)
    e_half = np.exp(-c * grid.k2 * (0.5 * dt))
    e_full = e_half * e_half
    k1 = rhs(uhat)
    k2 = rhs(e_half * (uhat + 0.5 * dt * k1))
    k3 = rhs(e_half * uhat + 0.5 * dt * k2)
    k4 = rhs(e_full * uhat + dt * e_half * k3)
    out = e_full * uhat + (dt / 6.0) * (e_full * k1 + 2.0 * e_half * (k2 + k3) + k4)
    return leray_project_hat(grid, out), proj.iterations


def ins_pressure_force(grid, uhat, rho, tol=1e-10, maxiter=500):
    """G = (grad p - Lap u)/(1 + rho) = -Du/Dt at one instant."""
    a = 1.0 / (1.0 + rho)
    proj = _VariableProjector(grid, a, tol, maxiter)
    lap = grid.ifft(-grid.k2 * uhat)
    w = (-advective_hat(grid, uhat) + grid.fft(a * lap)) * grid.dealias_mask
    return TorusField(grid, proj.a_grad_p(w) - a * lap)


def ins_step(state, dt, cfl=0.5, tol=1e-10, maxiter=500):
    """Advance the Inhomogeneous Navier-Stokes system by dt.

    rho is transported with u_n (predictor), the velocity is advanced by an
    integrating-factor RK4 whose stages are projected with the
    variable-coefficient operator at the mid-step density, and rho is then
    re-transported with (u_n + u_{n+1})/2.  The pressure force G is
    exported at the new time level.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    grid = state.u.grid
    check_cfl(grid, state.u.values, dt, cfl)
    rho0 = state.rho.values[0]
    u0 = state.u.values
    rho_pred = transport_density(grid, rho0, u0, u0, dt)
    uhat, iters = _ins_u_step(grid, state.u.spectrum(), 0.5 * (rho0 + rho_pred), dt, tol, maxiter)
    u_new = grid.ifft(uhat)
    rho_new = transport_density(grid, rho0, u0, u_new, dt)
    G = ins_pressure_force(grid, uhat, rho_new, tol, maxiter)
    return InsState(
        TorusField.from_spectrum(grid, uhat, div_free=True),
        TorusField(grid, rho_new),
        state.t + dt,
        G,
        iters,
    )
