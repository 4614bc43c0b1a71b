"""Oracle suite: closed-form checks of every solver component.

Each check returns a CheckResult; failures are report content, never
exceptions.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from ..fluid import FluidState, ns_step
from ..grid import TorusField, TorusGrid, leray_project
from ..kinetic import FieldTrajectory, ParticleEnsemble, ScalingRegime, jacobian_probe, push
from ..wasserstein import wasserstein1

__all__ = ["CheckResult", "CHECKS", "validate", "format_report"]


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    tolerance: float
    detail: str = ""
    seconds: float = 0.0

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.name:<22s} value={self.value:.3e} tol={self.tolerance:.1e}  {self.detail}"


def taylor_green_error(n=64, dt=1e-3, t_end=0.5):
    """Relative L2 error of the Taylor-Green vortex against exp(-2t) decay."""
    grid = TorusGrid(2, n)

    def tg(x, y):
        return np.array([np.sin(x) * np.cos(y), -np.cos(x) * np.sin(y)])

    u0 = TorusField.from_function(grid, tg, div_free=True)
    state = FluidState(u0, 0.0)
    for _ in range(int(round(t_end / dt))):
        state = ns_step(state, None, dt)
    exact = u0.values * np.exp(-2.0 * t_end)
    return float(np.linalg.norm(state.u.values - exact) / np.linalg.norm(exact))


def check_taylor_green():
    err = taylor_green_error()
    return CheckResult("taylor_green", err <= 1e-6, err, 1e-6, "64^2, dt=1e-3, t=0.5")


def pusher_error(eps, dt=0.01, steps=7, sigma=1.0):
    """Max error of repeated pushes in a constant field against the characteristics."""
    grid = TorusGrid(2, 16)
    c = np.array([0.3, -0.2])
    u = TorusField(grid, np.broadcast_to(c[:, None, None], (2,) + grid.shape).copy())
    regime = ScalingRegime(epsilon=eps, gamma=1.0, sigma=sigma, name="check")
    rng = np.random.default_rng(1)
    x0 = rng.uniform(1.0, 2.0, (64, 2))
    v0 = rng.normal(0.0, 1.0, (64, 2))
    ens = ParticleEnsemble(x0.copy(), v0.copy(), np.full(64, 1.0 / 64))
    for _ in range(steps):
        ens = push(ens, u, regime, dt)
    t = steps * dt
    decay = np.exp(-t / eps)
    v_exact = sigma * c + (v0 - sigma * c) * decay
    x_exact = x0 + t * c + (eps / sigma) * (-np.expm1(-t / eps)) * (v0 - sigma * c)
    dx = ens.positions - x_exact
    dx -= 2.0 * np.pi * np.round(dx / (2.0 * np.pi))
    return float(max(np.abs(dx).max(), np.abs(ens.velocities - v_exact).max()))


def check_pusher():
    errs = [pusher_error(eps) for eps in (1.0, 1e-2, 1e-6)]
    worst = max(errs)
    return CheckResult("pusher_closed_form", worst <= 1e-14, worst, 1e-14, "eps in {1, 1e-2, 1e-6}")


def check_projector():
    grid = TorusGrid(2, 32)
    x, y = grid.coords
    # divergence-free part plus a gradient; the projection must return the former
    sol = np.array([np.sin(y), np.zeros_like(x)])
    grad = np.array([np.cos(x) * np.cos(y), -np.sin(x) * np.sin(y)])
    p = leray_project(TorusField(grid, sol + grad))
    err = float(np.abs(p.values - sol).max())
    again = float(np.abs(leray_project(p).values - p.values).max())
    worst = max(err, again, p.divergence_max())
    return CheckResult("leray_projector", worst <= 1e-12, worst, 1e-12, "gradient removed, idempotent")


def _atoms(grid, points, masses):
    vals = np.zeros(grid.shape)
    for idx, m in zip(points, masses):
        vals[tuple(idx)] += m * grid.n**grid.dim
    return TorusField(grid, vals[None])


def check_w1_atoms():
    grid = TorusGrid(2, 16)
    h = grid.h
    worst = 0.0
    for a, b in (((0, 0), (3, 0)), ((2, 5), (2, 13)), ((1, 1), (4, 5)), ((0, 0), (15, 15))):
        mu = _atoms(grid, [a], [1.0])
        nu = _atoms(grid, [b], [1.0])
        diff = np.abs(np.subtract(a, b))
        diff = np.minimum(diff, grid.n - diff) * h
        worst = max(worst, abs(wasserstein1(mu, nu) - float(np.hypot(*diff))))
    return CheckResult("w1_atom_pairs", worst <= 1e-3, worst, 1e-3, "unit atoms on a 16^2 grid")


def check_w1_split():
    # mass 1 at a point against halves at the same point and across the circle
    grid = TorusGrid(2, 16)
    mu = _atoms(grid, [(0, 0)], [1.0])
    nu = _atoms(grid, [(0, 0), (8, 0)], [0.5, 0.5])
    val = wasserstein1(mu, nu)
    err = abs(val - 0.5 * np.pi)
    return CheckResult("w1_split_mass", err <= 1e-3, err, 1e-3, f"W1={val:.6f}, expected pi/2")


def check_w1_axioms(triples=50, seed=3):
    grid = TorusGrid(2, 8)
    rng = np.random.default_rng(seed)

    def rand():
        v = rng.uniform(0.0, 1.0, grid.shape)
        return TorusField(grid, (v / v.mean())[None])

    fields = [rand() for _ in range(3 * triples)]
    sym = 0.0
    ident = 0.0
    slack = 0.0
    for k in range(triples):
        a, b, c = fields[3 * k : 3 * k + 3]
        ab, ba = wasserstein1(a, b), wasserstein1(b, a)
        bc, ac = wasserstein1(b, c), wasserstein1(a, c)
        sym = max(sym, abs(ab - ba))
        ident = max(ident, wasserstein1(a, a))
        slack = max(slack, ac - (ab + bc))
    ok = sym <= 1e-10 and ident <= 1e-10 and slack <= 1e-6
    return CheckResult(
        "w1_metric_axioms", ok, max(sym, ident, slack), 1e-6,
        f"symmetry {sym:.1e}, identity {ident:.1e}, triangle excess {slack:.1e}",
    )


def jacobian_probes(count=100, eps=0.2, t=0.5, amplitude=0.02, seed=7):
    """Probe det D_v V on a weak steady shear flow; returns the results."""
    grid = TorusGrid(2, 32)
    x, y = grid.coords
    vals = amplitude * np.array([np.sin(y), np.cos(x)])
    traj = FieldTrajectory(grid, [0.0], [vals])
    regime = ScalingRegime.light(eps)
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        xp = rng.uniform(0.0, 2.0 * np.pi, 2)
        vp = rng.normal(0.0, 1.0, 2)
        out.append(jacobian_probe(xp, vp, traj, t, regime))
    return out


def check_jacobian(count=100):
    res = jacobian_probes(count)
    admissible = all(r.guaranteed for r in res)
    ratio = min(r.det / r.lower_bound for r in res)
    ok = admissible and all(r.satisfies_bound for r in res)
    return CheckResult(
        "jacobian_bound", ok, ratio, 1.0,
        f"{count} probes, min det/bound = {ratio:.4f}, accum_grad = {res[0].accum_grad:.4f}",
    )


CHECKS = {
    "taylor_green": check_taylor_green,
    "pusher_closed_form": check_pusher,
    "leray_projector": check_projector,
    "w1_atom_pairs": check_w1_atoms,
    "w1_split_mass": check_w1_split,
    "w1_metric_axioms": check_w1_axioms,
    "jacobian_bound": check_jacobian,
}


def validate(name_filter=None):
    """Run every check whose name contains ``name_filter``."""
    results = []
    for name, fn in CHECKS.items():
        if name_filter and name_filter not in name:
            continue
        start = time.perf_counter()
        try:
            res = fn()
        except Exception as exc:  # a crashing check is a failed check
            res = CheckResult(name, False, float("nan"), float("nan"), f"{type(exc).__name__}: {exc}")
        res.seconds = time.perf_counter() - start
        results.append(res)
    return results


def format_report(results):
    lines = [r.line() for r in results]
    passed = sum(r.passed for r in results)
    lines.append(f"{passed}/{len(results)} checks passed")
    return "\n".join(lines)
