"""Pseudospectral incompressible Navier-Stokes with an external grid forcing.

The momentum equation

    du/dt + (u . grad) u - Lap u + grad p = F,   div u = 0,

is advanced with a Lawson-type integrating-factor RK4: the viscous factor
exp(-|k|^2 dt) is applied exactly per mode, the convection term is written
in rotational form (omega x u, whose gradient part is removed by the
projection), and the total explicit right-hand side is dealiased with the
2/3 rule before the Leray projection.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .grid import TorusField, gradient_values, leray_project_hat, sobolev_norm_hat

__all__ = [
    "CFLError",
    "FluidState",
    "ExistenceMonitor",
    "ns_step",
    "ns_step_hat",
    "ns_rhs_hat",
    "monitor_update",
    "GRAD_THRESHOLD",
]

GRAD_THRESHOLD = 1.0 / 30.0
CFL_LIMIT = 0.5


class CFLError(RuntimeError):
    """Raised when a step would violate dt <= 0.5 h / max(1, |u|_inf)."""


@dataclass
class FluidState:
    u: TorusField
    t: float = 0.0

    @property
    def grid(self):
        return self.u.grid

    def energy(self):
        return 0.5 * float(np.mean(np.sum(self.u.values**2, axis=0)))


def check_cfl(grid, u_values, dt, limit=CFL_LIMIT):
    umax = float(np.max(np.abs(u_values))) if u_values.size else 0.0
    bound = limit * grid.h / max(1.0, umax)
    if dt > bound * (1.0 + 1e-12):
        raise CFLError(f"dt={dt:g} exceeds CFL bound {bound:g} (max|u|={umax:g})")


def convection_hat(grid, uhat, u=None):
    """Dealiasing-ready transform of -(omega x u), the rotational convection."""
    if u is None:
        u = grid.ifft(uhat)
    k = grid.deriv_wavenumbers
    if grid.dim == 2:
        w = grid.ifft(1j * (k[0] * uhat[1] - k[1] * uhat[0]))
        prod = np.stack([w * u[1], -w * u[0]])
    else:
        curl_hat = 1j * np.stack(
            [
                k[1] * uhat[2] - k[2] * uhat[1],
                k[2] * uhat[0] - k[0] * uhat[2],
                k[0] * uhat[1] - k[1] * uhat[0],
            ]
        )
        w = grid.ifft(curl_hat)
        prod = -np.cross(w, u, axis=0)
    return grid.fft(prod)


def nonlinear_hat(grid, uhat, fhat):
    """Projected, dealiased explicit right-hand side P[-(omega x u) + F]."""
    rhs = convection_hat(grid, uhat)
    if fhat is not None:
        rhs = rhs + fhat
    return leray_project_hat(grid, rhs * grid.dealias_mask)


def ns_rhs_hat(grid, uhat, fhat):
    """Instantaneous du/dt in spectral form, viscous term included."""
    return nonlinear_hat(grid, uhat, fhat) - grid.k2 * uhat


def ns_step_hat(grid, uhat, fhat, dt):
    """One integrating-factor RK4 step on rfft coefficients.

    ``fhat`` is held constant over the step (may be None for F = 0).
    """
    e_half = np.exp(-grid.k2 * (0.5 * dt))
    e_full = e_half * e_half
    k1 = nonlinear_hat(grid, uhat, fhat)
    k2 = nonlinear_hat(grid, e_half * (uhat + 0.5 * dt * k1), fhat)
    k3 = nonlinear_hat(grid, e_half * uhat + 0.5 * dt * k2, fhat)
    k4 = nonlinear_hat(grid, e_full * uhat + dt * e_half * k3, fhat)
    out = e_full * uhat + (dt / 6.0) * (e_full * k1 + 2.0 * e_half * (k2 + k3) + k4)
    return leray_project_hat(grid, out)


def ns_step(state, forcing=None, dt=1e-3, cfl=CFL_LIMIT):
    """Advance a FluidState by dt under the grid forcing.

    Raises CFLError without touching the state when the step is too large.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    grid = state.grid
    if forcing is not None and forcing.grid != grid:
        raise ValueError("forcing lives on a different grid")
    check_cfl(grid, state.u.values, dt, cfl)
    fhat = None if forcing is None else forcing.spectrum()
    uhat = ns_step_hat(grid, state.u.spectrum(), fhat, dt)
    return FluidState(TorusField.from_spectrum(grid, uhat, div_free=True), state.t + dt)


@dataclass
class ExistenceMonitor:
    """Running integrals behind the strong-existence conditions.

    accum_grad   int_0^t |grad u|_inf ds
    accum_f_l2   int_0^t |F|_{L2}^2 ds
    accum_heat   int_0^t |exp(s Lap) u0|_{H1 hom}^4 ds
    """

    accum_grad: float = 0.0
    accum_f_l2: float = 0.0
    accum_heat: float = 0.0
    threshold_grad: float = GRAD_THRESHOLD
    c_star: float | None = None
    t: float | None = None
    last_grad: float = 0.0
    last_f_l2: float = 0.0
    last_heat: float = 0.0
    u0_hat: np.ndarray | None = field(default=None, repr=False)

    def flags(self):
        out = {
            "strong_grad_ok": self.accum_grad <= self.threshold_grad,
            "accum_grad": self.accum_grad,
            "accum_f_l2": self.accum_f_l2,
            "accum_heat": self.accum_heat,
        }
        if self.c_star is not None:
            out["c_star_ok"] = max(self.accum_heat, self.accum_f_l2) <= 0.5 * self.c_star
        return out


def heat_h1_fourth(grid, u0_hat, t):
    """|exp(t Lap) u0|_{H1 hom}^4."""
    val = sobolev_norm_hat(grid, u0_hat * np.exp(-grid.k2 * t), 1.0, True)
    return val**4


def monitor_sample(grid, u_hat, F_hat, t, u0_hat):
    """(|grad u|_inf, |F|_2^2, |e^{t Lap} u0|_{H1}^4) at one instant."""
    g = gradient_values(grid, u_hat)
    grad = float(np.sqrt(np.sum(g**2, axis=(0, 1))).max())
    f2 = 0.0 if F_hat is None else grid.mean_square_hat(F_hat)
    return grad, f2, heat_h1_fourth(grid, u0_hat, t)


def monitor_update(mon, state, F=None, dt=None, sample=None):
    """Advance the monitor to ``state`` by the trapezoid rule.

    The first call only records the sample (and adopts ``state.u`` as u0
    if none was set).  ``dt`` defaults to the elapsed time since the last
    sample.  ``sample`` may supply precomputed (grad, |F|^2, heat) values.
    """
    grid = state.grid
    mon = dataclasses.replace(mon)
    if mon.u0_hat is None:
        mon.u0_hat = state.u.spectrum().copy()
    if sample is None:
        F_hat = None if F is None else F.spectrum()
        sample = monitor_sample(grid, state.u.spectrum(), F_hat, state.t, mon.u0_hat)
    grad, f2, heat = sample
    if mon.t is not None:
        step = state.t - mon.t if dt is None else dt
        if step < 0:
            raise ValueError("monitor cannot move backward in time")
        mon.accum_grad += 0.5 * step * (mon.last_grad + grad)
        mon.accum_f_l2 += 0.5 * step * (mon.last_f_l2 + f2)
        mon.accum_heat += 0.5 * step * (mon.last_heat + heat)
    mon.t = state.t
    mon.last_grad, mon.last_f_l2, mon.last_heat = grad, f2, heat
    return mon, mon.flags()
