"""Energy-type functionals, convergence metrics and diagnostic records.

Particle sums stand in for phase-space integrals: for an ensemble with
weights w_i, the integral of phi(x, v) f dx dv against the normalized
measure is sum_i w_i phi(x_i, v_i).  Grid fields enter through
multilinear interpolation at particle positions.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .grid import TorusField, gradient_values, sobolev_norm_hat
from .kinetic import deposit, interpolate_field
from .wasserstein import wasserstein1

__all__ = [
    "C_POINCARE",
    "GN_ALPHA",
    "GN_BETA",
    "energy",
    "dissipation",
    "dissipation_integral",
    "modulated_energy",
    "modulated_energy_terms",
    "modulated_terms_from_sums",
    "lambda_bound",
    "higher_dissipation",
    "phase_space_concentration",
    "FineKeyTrace",
    "fine_key_sample",
    "fine_key_residual",
    "relative_entropy",
    "hminus1_distance",
    "wasserstein1",
    "DiagnosticRecord",
    "write_diagnostics",
    "read_diagnostics",
]

# Poincare-Wirtinger constant on the 2 pi torus: |grad u|^2 >= |u - <u>|^2
C_POINCARE = 1.0


def GN_ALPHA(p):
    """Interpolation exponent (5p - 6)/(7p - 6); informational only."""
    return (5.0 * p - 6.0) / (7.0 * p - 6.0)


def GN_BETA(p):
    """Interpolation exponent 5p/(7p - 6); informational only."""
    return 5.0 * p / (7.0 * p - 6.0)


def _u_at(ens, u):
    return interpolate_field(u, ens.positions)


def _grad_sq(u):
    g = u.grid
    return float(np.sum(g.multiplicity * g.k2 * np.abs(u.spectrum()) ** 2))


def _l2_sq(u):
    return float(np.mean(np.sum(u.values**2, axis=0)))


def energy(ens, u, regime):
    """eps/(sigma^2 gamma) * 1/2 sum w|v|^2 + 1/2 |u|_2^2."""
    kin = 0.5 * float(np.sum(ens.weights * np.sum(ens.velocities**2, axis=1)))
    return regime.kinetic_prefactor * kin + 0.5 * _l2_sq(u)


def dissipation(ens, u, regime):
    """|grad u|_2^2 + (1/gamma) sum w |v/sigma - u(x)|^2."""
    return _grad_sq(u) + phase_space_concentration(ens, u, regime, 2) / regime.gamma


def dissipation_integral(t, D):
    """Cumulative int_0^t D for a non-negative sampled series.

    Each interval uses the logarithmic mean (D_a - D_b)/ln(D_a/D_b), which
    is exact for exponential decay (the friction relaxation the pusher
    integrates exactly) and second-order accurate for smooth series.  It
    never exceeds the trapezoid value; intervals touching zero fall back to
    the trapezoid rule.
    """
    t = np.asarray(t, dtype=float)
    D = np.asarray(D, dtype=float)
    a, b = D[:-1], D[1:]
    mean = 0.5 * (a + b)
    use_log = (a > 0) & (b > 0) & (np.abs(a - b) > 1e-12 * np.maximum(a, b))
    with np.errstate(divide="ignore", invalid="ignore"):
        logm = (a - b) / np.log(a / b)
    mean = np.where(use_log, logm, mean)
    return np.concatenate(([0.0], np.cumsum(mean * np.diff(t))))


def phase_space_concentration(ens, u, regime, power=2, u_at=None):
    """sum w |v/sigma - u(x)|^power, the distance of f to the monokinetic state.

    ``u_at`` optionally supplies u already interpolated at the particles.
    """
    if power not in (1, 2):
        raise ValueError("power must be 1 or 2")
    if ens.count == 0:
        return 0.0
    rel = ens.velocities / regime.sigma - (_u_at(ens, u) if u_at is None else u_at)
    mag2 = np.sum(rel**2, axis=1)
    vals = mag2 if power == 2 else np.sqrt(mag2)
    return float(np.sum(ens.weights * vals))


def modulated_energy_terms(ens, u, regime):
    """The three non-negative pieces of the modulated energy."""
    u_mean = u.mean()
    fluct = u.values - u_mean.reshape((-1,) + (1,) * u.grid.dim)
    term2 = 0.5 * float(np.mean(np.sum(fluct**2, axis=0)))
    mass, j, _, _, _, spread = _kernels.particle_stats(
        ens.velocities, ens.weights, np.zeros_like(ens.velocities), regime.sigma
    )
    return modulated_terms_from_sums(regime, mass, j, spread, u_mean, term2)


def modulated_terms_from_sums(regime, mass, j, spread, u_mean, term2):
    """Modulated energy pieces from ensemble sums.

    ``j`` is sum w v/sigma, ``spread`` is sum w |v/sigma - j/mass|^2 and
    ``term2`` is half the mean-square fluctuation of u.
    """
    if mass <= 0:
        return 0.0, term2, 0.0
    eps, gam = regime.epsilon, regime.gamma
    drift = np.asarray(j) / mass
    term1 = 0.5 * (eps / gam) * float(spread)
    term3 = eps * mass / (2.0 * (gam + eps * mass)) * float(np.sum((drift - u_mean) ** 2))
    return term1, term2, term3


def modulated_energy(ens, u, regime):
    """Energy relative to the mean bulk motion; zero mass gives term1 = term3 = 0."""
    return float(sum(modulated_energy_terms(ens, u, regime)))


def lambda_bound(rho_linf, regime_or_eps, c_p=C_POINCARE):
    """Decay-rate bound min(c_P/(eps(c_P + 4R)), c_P/2)."""
    eps = getattr(regime_or_eps, "epsilon", regime_or_eps)
    if rho_linf < 0:
        raise ValueError("R must be non-negative")
    return min(c_p / (eps * (c_p + 4.0 * rho_linf)), 0.5 * c_p)


def higher_dissipation(ens, u, r, epsilon, sigma=None, u_at=None):
    """sum w |v - u(x)|^r / eps^r; with ``sigma`` the misalignment is v/sigma - u."""
    if r < 2:
        raise ValueError("r must be at least 2")
    if ens.count == 0:
        return 0.0
    U = _u_at(ens, u) if u_at is None else u_at
    scale = 1.0 if sigma is None else 1.0 / sigma
    return float(_kernels.power_sums(ens.velocities, ens.weights, U, scale, [r])[0]) / epsilon**r


def hminus1_distance(rho_a, rho_b):
    """Homogeneous H^{-1} norm of the difference of two scalar fields."""
    g = rho_a.grid
    return sobolev_norm_hat(g, rho_a.spectrum() - rho_b.spectrum(), -1.0, True)


# fine-key identity -------------------------------------------------------


def fine_key_sample(ens, u, dudt, epsilon, rs, grad=None):
    """Integrands of the fine-key identity at one instant.

    Returns {r: (D_r, B_r, S_r)} with W = v - u(x),
        D_r = sum w |W|^r / eps^r,
        B_r = sum w |W|^r / eps^(r-1),
        S_r = sum w (du/dt + (v . grad) u) . W |W|^(r-2) / eps^(r-1),
    where du/dt and grad u are evaluated at the particles.
    """
    grid = u.grid
    d = grid.dim
    if grad is None:
        grad = gradient_values(grid, u.spectrum()).reshape((d * d,) + grid.shape)
    pos = ens.positions
    U = interpolate_field(u.values, pos, grid)
    A = interpolate_field(dudt, pos, grid)
    Gd = interpolate_field(grad, pos, grid).reshape(-1, d, d)
    v = ens.velocities
    W = v - U
    mag = np.sqrt(np.sum(W**2, axis=1))
    src = A + np.einsum("pij,pj->pi", Gd, v)
    dot = np.sum(src * W, axis=1)
    out = {}
    w = ens.weights
    for r in rs:
        mr = mag**r
        D = float(np.sum(w * mr)) / epsilon**r
        B = float(np.sum(w * mr)) / epsilon ** (r - 1)
        with np.errstate(divide="ignore", invalid="ignore"):
            fac = np.where(mag > 0, mag ** (r - 2), 0.0 if r > 2 else 1.0)
        S = float(np.sum(w * dot * fac)) / epsilon ** (r - 1)
        out[r] = (D, B, S)
    return out


@dataclass
class FineKeyTrace:
    """Time samples of the fine-key integrands for a set of exponents."""

    rs: tuple
    times: list = field(default_factory=list)
    samples: dict = field(default_factory=dict)

    def append(self, t, sample):
        self.times.append(float(t))
        for r in self.rs:
            self.samples.setdefault(r, []).append(sample[r])

    def arrays(self, r):
        arr = np.asarray(self.samples[r], dtype=float)
        return np.asarray(self.times), arr[:, 0], arr[:, 1], arr[:, 2]


def fine_key_residual(trace, r, floor=1e-300):
    """Relative mismatch of the two sides of the fine-key identity.

    LHS = int_0^T D_r,  RHS = -(1/r)[B_r]_0^T - int_0^T S_r, time integrals
    by the trapezoid rule.
    """
    if len(trace.times) < 3:
        raise ValueError("fine-key residual needs at least three samples")
    t, D, B, S = trace.arrays(r)
    lhs = float(np.trapezoid(D, t))
    rhs = -(B[-1] - B[0]) / r - float(np.trapezoid(S, t))
    return abs(lhs - rhs) / (abs(lhs) + abs(rhs) + floor)


# relative entropy ----------------------------------------------------------


def relative_entropy(ens, u_eps, u_ref, rho_ref, regime, G=None, rho_eps=None, form=None, u_at=None):
    """Relative entropy of (f, u_eps) with respect to (rho_ref x delta_{u_ref}, u_ref).

    ``form`` is "fine" (default for the fine regime) or "light".  Returns
    (H, terms) where terms holds I1..I4 (fine) or J1..J4 (light); the
    G-dependent terms are NaN when G is not supplied.
    """
    form = form or ("fine" if regime.name == "fine" else "light")
    grid = u_eps.grid
    d = grid.dim
    eps, sig = regime.epsilon, regime.sigma
    pos = ens.positions
    gref = gradient_values(grid, u_ref.spectrum())  # (d, d, n..): d u_i / d x_j
    stack = [u_ref.values, gref.reshape((d * d,) + grid.shape)]
    if G is not None:
        stack.append(G.values)
    ref = interpolate_field(np.concatenate(stack, axis=0), pos, grid)
    Ueps = interpolate_field(u_eps, pos) if u_at is None else u_at
    du = u_eps.values - u_ref.values
    fluid = 0.5 * float(np.mean(np.sum(du**2, axis=0)))
    I2 = -float(np.mean(np.einsum("i...,j...,ij...->...", du, du, gref)))
    if rho_eps is None:
        rho_eps = deposit(ens, u_eps, grid, regime).rho
    if form == "fine":
        scale, pref = 1.0, 1.0
        rho_w = rho_eps.values[0] - rho_ref.values[0]
    elif form == "light":
        scale, pref = 1.0 / sig, eps
        rho_w = eps * rho_eps.values[0]
    else:
        raise ValueError(f"unknown relative entropy form {form!r}")
    kin, strain, work = _kernels.relative_entropy_sums(
        ens.velocities, ens.weights, scale, ref, Ueps, G is not None
    )
    H = 0.5 * pref * kin + fluid
    T1 = -pref * strain
    if G is not None:
        T3 = pref * work
        T4 = float(np.mean(rho_w * np.sum(du * G.values, axis=0)))
    else:
        T3 = T4 = float("nan")
    names = ("I1", "I2", "I3", "I4") if form == "fine" else ("J1", "J2", "J3", "J4")
    return H, dict(zip(names, (T1, I2, T3, T4)))


# diagnostic records --------------------------------------------------------


@dataclass
class DiagnosticRecord:
    """One sample of every monitored functional.

    The CSV column order is the field order below, with one ``D_r<r>``
    column per configured exponent inserted after ``lambda_bound``.
    """

    t: float
    energy: float
    dissipation: float
    modulated: float
    lambda_bound: float
    higher: dict
    rel_entropy: float
    term1: float
    term2: float
    term3: float
    term4: float
    conc_p2: float
    conc_p1: float
    brinkman_l2: float
    rho_linf: float
    mass: float
    momentum: tuple
    strong_grad_ok: bool
    accum_grad: float
    accum_f_l2: float
    accum_heat: float
    err_u_l2: float = float("nan")
    err_rho_hm1: float = float("nan")
    err_rho_w1: float = float("nan")

    def columns(self):
        cols = ["t", "energy", "dissipation", "modulated", "lambda_bound"]
        cols += [f"D_r{r:g}" for r in sorted(self.higher)]
        cols += [
            "rel_entropy", "term1", "term2", "term3", "term4",
            "conc_p2", "conc_p1", "brinkman_l2", "rho_linf", "mass",
        ]
        cols += [f"momentum_{i}" for i in range(len(self.momentum))]
        cols += [
            "strong_grad_ok", "accum_grad", "accum_f_l2", "accum_heat",
            "err_u_l2", "err_rho_hm1", "err_rho_w1",
        ]
        return cols

    def row(self):
        vals = [self.t, self.energy, self.dissipation, self.modulated, self.lambda_bound]
        vals += [self.higher[r] for r in sorted(self.higher)]
        vals += [
            self.rel_entropy, self.term1, self.term2, self.term3, self.term4,
            self.conc_p2, self.conc_p1, self.brinkman_l2, self.rho_linf, self.mass,
        ]
        vals += list(self.momentum)
        vals += [
            int(self.strong_grad_ok), self.accum_grad, self.accum_f_l2, self.accum_heat,
            self.err_u_l2, self.err_rho_hm1, self.err_rho_w1,
        ]
        return vals


def write_diagnostics(path, records):
    """Write records as CSV with a mandatory header row."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        if not records:
            return
        writer.writerow(records[0].columns())
        for rec in records:
            writer.writerow([repr(float(v)) if not isinstance(v, (int, np.integer)) else v for v in rec.row()])


def read_diagnostics(path):
    """Read a diagnostics CSV into a dict of float arrays keyed by column."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(x) for x in row] for row in reader]
    data = np.array(rows, dtype=float).reshape(-1, len(header))
    return {name: data[:, i] for i, name in enumerate(header)}

