"""Particle representation of the kinetic distribution.

The distribution f(t, x, v) is carried by weighted particles that follow
the characteristics

    dX/dt = V / sigma,     dV/dt = (sigma u(t, X) - V) / eps.

The push integrates these exactly for a field frozen at the predicted
midpoint, so it is stable for every eps and collapses to V = sigma U as
eps / dt -> 0.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from . import _kernels
from .fluid import GRAD_THRESHOLD
from .grid import TorusField, TorusGrid, gradient_values

__all__ = [
    "ScalingRegime",
    "ParticleEnsemble",
    "InitialDataSpec",
    "MomentFields",
    "FieldTrajectory",
    "JacobianResult",
    "sample_initial",
    "push",
    "deposit",
    "interpolate_field",
    "jacobian_probe",
    "wrap",
    "write_ensemble",
    "read_ensemble",
]

TWO_PI = 2.0 * np.pi
ENSEMBLE_MAGIC = b"VNSP"
ENSEMBLE_VERSION = 1


@dataclass(frozen=True)
class ScalingRegime:
    """Friction parameter eps with force scale gamma and velocity scale sigma."""

    epsilon: float
    gamma: float = 1.0
    sigma: float = 1.0
    alpha: float | None = None
    name: str = "custom"

    def __post_init__(self):
        if not 0.0 < self.epsilon <= 1.0:
            raise ValueError(f"epsilon must lie in (0, 1], got {self.epsilon}")
        if self.gamma <= 0 or self.sigma <= 0:
            raise ValueError("gamma and sigma must be positive")
        if self.alpha is not None and not 0.0 <= self.alpha <= 0.5:
            raise ValueError(f"alpha must lie in [0, 1/2], got {self.alpha}")

    @classmethod
    def light(cls, epsilon):
        return cls(epsilon, 1.0, 1.0, None, "light")

    @classmethod
    def light_fast(cls, epsilon, alpha=0.25):
        if not 0.0 <= alpha <= 0.5:
            raise ValueError(f"alpha must lie in [0, 1/2], got {alpha}")
        return cls(epsilon, 1.0, epsilon**alpha, alpha, "light_fast")

    @classmethod
    def fine(cls, epsilon):
        return cls(epsilon, epsilon, 1.0, None, "fine")

    @classmethod
    def preset(cls, name, epsilon, alpha=0.25):
        if name == "light":
            return cls.light(epsilon)
        if name == "light_fast":
            return cls.light_fast(epsilon, alpha)
        if name == "fine":
            return cls.fine(epsilon)
        raise ValueError(f"unknown regime {name!r}")

    @property
    def kinetic_prefactor(self):
        """eps / (sigma^2 gamma), the weight of the particle kinetic energy."""
        return self.epsilon / (self.sigma**2 * self.gamma)


@dataclass
class ParticleEnsemble:
    positions: np.ndarray
    velocities: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float)
        self.velocities = np.asarray(self.velocities, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        n = self.weights.shape[0]
        if self.positions.shape[0] != n or self.velocities.shape != self.positions.shape:
            raise ValueError("positions, velocities and weights disagree in size")
        if np.any(self.weights < 0):
            raise ValueError("particle weights must be non-negative")

    @property
    def count(self):
        return self.weights.shape[0]

    @property
    def dim(self):
        return self.positions.shape[1]

    @property
    def mass(self):
        return float(np.sum(self.weights))

    @classmethod
    def empty(cls, dim):
        return cls(np.zeros((0, dim)), np.zeros((0, dim)), np.zeros(0))

    def copy(self):
        return ParticleEnsemble(
            self.positions.copy(), self.velocities.copy(), self.weights.copy()
        )


@dataclass
class MomentFields:
    rho: TorusField
    current: TorusField
    brinkman: TorusField
    u_at: np.ndarray | None = None  # u interpolated at the particles


@dataclass
class InitialDataSpec:
    """Initial kinetic data.

    ``rho0`` and ``velocity`` are vectorized callables of the coordinates;
    ``velocity`` returns the monokinetic velocity (or Maxwellian mean) in
    v-units, i.e. already multiplied by sigma.  ``mode`` selects weighted
    sampling (uniform low-discrepancy positions, weights proportional to
    rho0) or ``"counts"`` (equal weights, per-cell counts proportional to
    the cell mass of rho0).
    """

    kind: str
    rho0: object
    velocity: object
    theta: float = 0.0
    mode: str = "weighted"
    dim: int = 2

    def __post_init__(self):
        if self.kind not in ("monokinetic", "maxwellian"):
            raise ValueError(f"unknown initial data kind {self.kind!r}")
        if self.mode not in ("weighted", "counts"):
            raise ValueError(f"unknown sampling mode {self.mode!r}")
        if self.theta < 0:
            raise ValueError("temperature must be non-negative")

    def mass(self, n=None):
        """Integral of rho0 against the normalized measure (grid quadrature)."""
        n = n or (256 if self.dim == 2 else 64)
        g = TorusGrid(self.dim, n)
        vals = np.broadcast_to(np.asarray(self.rho0(*g.coords), dtype=float), g.shape)
        if np.any(vals < 0):
            raise ValueError("rho0 must be non-negative")
        return float(vals.mean())


def _r2_alphas(d):
    # generalized golden ratio: positive root of x^(d+1) = x + 1
    phi = 2.0
    for _ in range(64):
        phi = (1.0 + phi) ** (1.0 / (d + 1))
    return np.array([phi ** -(j + 1) for j in range(d)])


def _r2_points(count, d, shift):
    idx = np.arange(1, count + 1, dtype=float)[:, None]
    return np.mod(shift[None, :] + idx * _r2_alphas(d)[None, :], 1.0)


wrap = _kernels.wrap


def sample_initial(spec, N, seed=0, cells=None):
    """Deterministic stratified sample of the initial distribution.

    Randomness comes from a Philox counter-based generator seeded with
    ``seed``: one global shift of the R2 low-discrepancy sequence and the
    standard normals of the Maxwellian.  Maxwellian velocities come in
    antithetic pairs (+z, -z) sharing one position.  A zero density gives
    the empty ensemble.
    """
    d = spec.dim
    if N < 0:
        raise ValueError("N must be non-negative")
    mass = spec.mass() if N else 0.0
    if mass == 0.0:
        return ParticleEnsemble.empty(d)
    rng = np.random.Generator(np.random.Philox(seed))
    shift = rng.random(d)
    antithetic = spec.kind == "maxwellian" and spec.theta > 0
    n_pos = (N + 1) // 2 if antithetic else N

    if spec.mode == "weighted":
        x = TWO_PI * _r2_points(n_pos, d, shift)
        rho = np.broadcast_to(np.asarray(spec.rho0(*x.T), dtype=float), (n_pos,))
        if np.any(rho < 0):
            raise ValueError("rho0 must be non-negative")
        mult = np.full(n_pos, 2.0 if antithetic else 1.0)
        if antithetic and N % 2:
            mult[-1] = 1.0
        total = float(np.sum(rho * mult))
        if total <= 0:
            raise ValueError("rho0 vanishes at every sample point")
        w = rho * (mass / total)
    else:
        if cells is None:
            # at least 16 particles per cell on average, at most 64 cells per axis
            cells = 1
            while 16 * (2 * cells) ** d <= n_pos and 2 * cells <= 64:
                cells *= 2
        hc = TWO_PI / cells
        c1 = (np.arange(cells) + 0.5) * hc
        centers = np.array(np.meshgrid(*([c1] * d), indexing="ij")).reshape(d, -1)
        cm = np.broadcast_to(np.asarray(spec.rho0(*centers), dtype=float), (centers.shape[1],))
        if np.any(cm < 0):
            raise ValueError("rho0 must be non-negative")
        quota = cm / cm.sum() * n_pos
        counts = np.floor(quota).astype(int)
        rest = n_pos - counts.sum()
        order = np.argsort(-(quota - counts), kind="stable")
        counts[order[:rest]] += 1
        local = _r2_points(n_pos, d, shift)
        cell_of = np.repeat(np.arange(counts.size), counts)
        corner = centers[:, cell_of].T - 0.5 * hc
        x = corner + hc * local
        w = np.full(n_pos, mass / N)
    x = wrap(x)

    mean_v = np.asarray(spec.velocity(*x.T), dtype=float)
    mean_v = np.broadcast_to(mean_v.T if mean_v.ndim == 2 else mean_v, (n_pos, d)).copy()
    if spec.kind == "monokinetic" or spec.theta == 0:
        v = mean_v
    else:
        z = rng.standard_normal((n_pos, d)) * np.sqrt(spec.theta)
        v = np.empty((2 * n_pos, d))
        v[0::2] = mean_v + z
        v[1::2] = mean_v - z
        x = np.repeat(x, 2, axis=0)
        w = np.repeat(w, 2)
        if N % 2:
            v[-2] = mean_v[-1]
            v, x, w = v[:N], x[:N], w[:N]
    return ParticleEnsemble(x, v, w)


def interpolate_field(field_or_values, positions, grid=None):
    """Multilinear interpolation of a TorusField (or raw values) at positions."""
    if isinstance(field_or_values, TorusField):
        grid = field_or_values.grid
        vals = field_or_values.values
    else:
        vals = field_or_values
    return _kernels.interpolate(vals, positions, grid.h)


def push(ens, u, regime, dt):
    """Exponential push of every particle through one step of length dt."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    if ens.count == 0:
        return ens.copy()
    if not np.all(np.isfinite(u.values)):
        raise ValueError("non-finite field values")
    eps, sig = regime.epsilon, regime.sigma
    x, v = ens.positions, ens.velocities
    if ens.dim == 2:
        x_new, v_new = _kernels.push2(x, v, u.values, u.grid.h, dt, eps, sig)
        return ParticleEnsemble(x_new, v_new, ens.weights)
    xm = wrap(x + (0.5 * dt / sig) * v)
    U = interpolate_field(u, xm)
    e = np.exp(-dt / eps)
    one_minus_e = -np.expm1(-dt / eps)
    rel = v - sig * U
    v_new = sig * U + rel * e
    x_new = wrap(x + dt * U + (eps / sig) * one_minus_e * rel)
    return ParticleEnsemble(x_new, v_new, ens.weights)


def deposit(ens, u, grid, regime, relax_weight=1.0):
    """Cloud-in-cell moments rho, j and the Brinkman force.

    The force is deposited in relative-flux form
    F = (1/gamma) sum_i w_i (v_i/sigma - u(x_i)) K(x - x_i), scaled by
    ``relax_weight`` (1 gives the instantaneous force).
    """
    d = grid.dim
    if ens.count == 0:
        z1 = TorusField.zeros(grid, 1)
        return MomentFields(z1, TorusField.zeros(grid, d), TorusField.zeros(grid, d))
    sig, gam = regime.sigma, regime.gamma
    if d == 2:
        acc, U = _kernels.moments2(
            ens.positions, ens.velocities, ens.weights, u.values, grid.h, sig,
            relax_weight / gam,
        )
    else:
        w = ens.weights[:, None]
        vs = ens.velocities / sig
        U = interpolate_field(u, ens.positions)
        q = np.concatenate([w, w * vs, (relax_weight / gam) * w * (vs - U)], axis=1)
        acc = _kernels.deposit_sum(ens.positions, q, grid.n, grid.h)
    acc *= float(grid.n) ** d
    return MomentFields(
        TorusField(grid, acc[:1]),
        TorusField(grid, acc[1 : 1 + d]),
        TorusField(grid, acc[1 + d :]),
        U,
    )


class FieldTrajectory:
    """Stored velocity snapshots, linear in time and multilinear in space."""

    def __init__(self, grid, times, values):
        self.grid = grid
        self.times = np.asarray(times, dtype=float)
        self.values = np.asarray(values, dtype=float)
        if self.values.shape[0] != self.times.size or self.times.size < 1:
            raise ValueError("times and snapshots disagree")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("snapshot times must increase")
        d = grid.dim
        grads = [gradient_values(grid, grid.fft(v)) for v in self.values]
        # (T, d*d, n..): row i, column j is d u_i / d x_j
        self.grads = np.array([g.reshape((d * d,) + grid.shape) for g in grads])
        self.grad_linf = np.array(
            [float(np.sqrt(np.sum(g**2, axis=0)).max()) for g in self.grads]
        )

    @classmethod
    def from_fields(cls, times, fields):
        return cls(fields[0].grid, times, [f.values for f in fields])

    def accum_grad(self, t):
        """Trapezoid integral of |grad u|_inf over [0, t]."""
        ts, gs = self.times, self.grad_linf
        if ts.size == 1:
            return float(gs[0] * t)
        sel = ts <= t
        tt = np.append(ts[sel], t) if t > ts[sel][-1] else ts[sel]
        gg = np.interp(tt, ts, gs)
        return float(np.trapezoid(gg, tt))

    def _bracket(self, t):
        ts = self.times
        if ts.size == 1 or t <= ts[0]:
            return 0, 0, 0.0
        if t >= ts[-1]:
            k = ts.size - 1
            return k, k, 0.0
        k = int(np.searchsorted(ts, t) - 1)
        return k, k + 1, (t - ts[k]) / (ts[k + 1] - ts[k])

    def sample(self, t, x):
        """(u(t, x), grad u(t, x)) at one point."""
        i, j, a = self._bracket(t)
        pos = wrap(np.asarray(x, dtype=float).reshape(1, -1))
        h = self.grid.h
        ui = _kernels.interpolate(self.values[i], pos, h)[0]
        gi = _kernels.interpolate(self.grads[i], pos, h)[0]
        if a > 0.0:
            uj = _kernels.interpolate(self.values[j], pos, h)[0]
            gj = _kernels.interpolate(self.grads[j], pos, h)[0]
            ui = (1 - a) * ui + a * uj
            gi = (1 - a) * gi + a * gj
        d = self.grid.dim
        return ui, gi.reshape(d, d)


@dataclass
class JacobianResult:
    det: float
    lower_bound: float
    accum_grad: float
    guaranteed: bool
    tag: str = field(default="")

    @property
    def satisfies_bound(self):
        return self.det >= self.lower_bound


def jacobian_probe(x, v, trajectory, t, regime, rtol=1e-10, atol=1e-12):
    """det D_v V(0; t, x, v) along the backward characteristic from (t, x, v).

    The variational system is integrated in tau = t - s with the
    exponential factor exp(tau/eps) scaled out of V, dX/dv and dV/dv, so
    the case u = 0 is reproduced exactly.  The result is tagged
    "bound not guaranteed" when the trajectory violates
    int_0^t |grad u|_inf <= 1/30.
    """
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    d = x.size
    eps, sig = regime.epsilon, regime.sigma
    accum = trajectory.accum_grad(t)
    guaranteed = accum <= GRAD_THRESHOLD
    bound = 0.5 * np.exp(d * t / eps)
    if t == 0:
        return JacobianResult(1.0, bound, accum, guaranteed, "" if guaranteed else "bound not guaranteed")

    def rhs(tau, y):
        X = y[:d]
        Vt = y[d : 2 * d]
        At = y[2 * d : 2 * d + d * d].reshape(d, d)
        Bt = y[2 * d + d * d :].reshape(d, d)
        s = t - tau
        uu, gu = trajectory.sample(s, X)
        grow = np.exp(tau / eps)
        dX = -grow * Vt / sig
        dV = -np.exp(-tau / eps) * sig * uu / eps
        dA = -Bt / sig - At / eps
        dB = -(sig / eps) * gu @ At
        return np.concatenate([dX, dV, dA.ravel(), dB.ravel()])

    y0 = np.concatenate([x, v, np.zeros(d * d), np.eye(d).ravel()])
    sol = solve_ivp(rhs, (0.0, t), y0, method="DOP853", rtol=rtol, atol=atol)
    if not sol.success:
        raise RuntimeError(f"jacobian probe integration failed: {sol.message}")
    Bt = sol.y[2 * d + d * d :, -1].reshape(d, d)
    det = np.exp(d * t / eps) * float(np.linalg.det(Bt))
    return JacobianResult(det, bound, accum, guaranteed, "" if guaranteed else "bound not guaranteed")


_REC_HEAD = struct.Struct("<4sIIQ")


def write_ensemble(path, ens):
    """Write a particle snapshot in the versioned little-endian VNSP format."""
    d, n = ens.dim, ens.count
    rec = np.empty((n, 2 * d + 1), dtype="<f8")
    rec[:, :d] = ens.positions
    rec[:, d : 2 * d] = ens.velocities
    rec[:, 2 * d] = ens.weights
    with open(path, "wb") as fh:
        fh.write(_REC_HEAD.pack(ENSEMBLE_MAGIC, ENSEMBLE_VERSION, d, n))
        fh.write(rec.tobytes())


def read_ensemble(path):
    with open(path, "rb") as fh:
        head = fh.read(_REC_HEAD.size)
        magic, version, d, n = _REC_HEAD.unpack(head)
        if magic != ENSEMBLE_MAGIC:
            raise ValueError(f"{path}: not a particle snapshot")
        if version != ENSEMBLE_VERSION:
            raise ValueError(f"{path}: unsupported particle format version {version}")
        data = np.frombuffer(fh.read(), dtype="<f8")
    if data.size != n * (2 * d + 1):
        raise ValueError(f"{path}: truncated particle snapshot")
    rec = data.reshape(n, 2 * d + 1).astype(float)
    return ParticleEnsemble(rec[:, :d].copy(), rec[:, d : 2 * d].copy(), rec[:, 2 * d].copy())
