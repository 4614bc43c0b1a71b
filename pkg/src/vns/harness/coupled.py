"""Coupled fluid-kinetic time loop.

Each step (default "fkf" splitting):

1. deposit rho, j and the relative-flux Brinkman force F_n at t_n;
2. half fluid step with phi1(dt/eps) F_n, where phi1(z) = (1 - e^-z)/z is
   the time average of the exponentially relaxing drag over the step;
3. exponential push of the particles against the mid-step field;
4. deposit the drag impulse actually exchanged by the particles,
   F_imp = -(eps/gamma) sum w (v+ - v)/(sigma dt), at mid-path positions;
5. second half fluid step with 2 F_imp - phi1 F_n.

The fluid therefore receives exactly dt * F_imp over the step, which
makes the total momentum <(eps/gamma) j + u> conserved to round-off.
The "kfk" splitting (half push, fluid step, half push, with the drag
impulses applied as velocity kicks) is available for comparison.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .. import _kernels
from ..fluid import (
    CFLError,
    ExistenceMonitor,
    FluidState,
    check_cfl,
    heat_h1_fourth,
    monitor_update,
    ns_rhs_hat,
    ns_step_hat,
)
from ..functionals import (
    DiagnosticRecord,
    FineKeyTrace,
    fine_key_sample,
    hminus1_distance,
    higher_dissipation,
    lambda_bound,
    modulated_terms_from_sums,
    relative_entropy,
    wasserstein1,
    write_diagnostics,
)
from ..grid import TorusField, TorusGrid, gradient_values, leray_project_hat, read_field, write_field
from ..kinetic import (
    InitialDataSpec,
    ScalingRegime,
    deposit,
    interpolate_field,
    push,
    read_ensemble,
    sample_initial,
    write_ensemble,
)
from ..limits import (
    InsState,
    PressureSolveError,
    TnsState,
    ins_pressure_force,
    ins_step,
    ns_pressure_force,
    tns_step,
)
from .config import RunConfig
from .presets import deviation_field, density_preset, velocity_preset

__all__ = [
    "RunFailure",
    "RunResult",
    "Reference",
    "initial_data",
    "run_reference",
    "run_coupled",
]


class RunFailure(RuntimeError):
    """Numerical failure of a run; ``record`` is a machine-readable summary."""

    def __init__(self, record):
        super().__init__(f"{record['error']}: {record['message']}")
        self.record = record


def make_regime(cfg):
    return ScalingRegime.preset(cfg.regime, cfg.epsilon, cfg.alpha)


def initial_data(cfg):
    """Grid, regime, initial velocity field and initial particle ensemble.

    The velocity field is band-limited and projected; particle velocities
    are built from its grid interpolant so that monokinetic data are exactly
    monokinetic for the deposition.
    """
    grid = TorusGrid(cfg.dim, cfg.n)
    regime = make_regime(cfg)
    ufunc = velocity_preset(cfg.u0, cfg.dim, cfg.u0_amplitude, cfg.u0_mean)
    raw = TorusField.from_function(grid, ufunc)
    uhat = leray_project_hat(grid, raw.spectrum() * grid.dealias_mask)
    u0 = TorusField.from_spectrum(grid, uhat, div_free=True)

    sig = regime.sigma
    dev_amp = cfg.deviation * cfg.epsilon**cfg.deviation_power
    dev = deviation_field(cfg.dim)

    def velocity(*xs):
        pts = np.stack([np.asarray(x, dtype=float) for x in xs], axis=-1).reshape(-1, cfg.dim)
        out = interpolate_field(u0, pts)
        if dev_amp:
            out = out + dev_amp * np.stack(dev(*pts.T), axis=-1)
        return (sig * out).T

    rho0 = density_preset(cfg.rho0, cfg.dim, cfg.rho0_mean, cfg.rho0_amplitude)
    spec = InitialDataSpec(cfg.f0, rho0, velocity, cfg.theta, cfg.sampling, cfg.dim)
    ens = sample_initial(spec, cfg.N, cfg.seed)
    return grid, regime, u0, ens


@dataclass
class Reference:
    """Limit-system trajectory sampled at the diagnostic steps."""

    model: str
    steps: dict = field(default_factory=dict)  # step -> (u values, rho values, G values)
    cg_iterations: int = 0
    wall: float = 0.0

    def at(self, step):
        return self.steps.get(step)


def run_reference(cfg, grid, u0, rho_init, record_steps, model=None):
    """Advance the limit system selected for the regime and sample it."""
    model = model or cfg.resolved_reference()
    start = time.perf_counter()
    ref = Reference(model)
    rec = set(record_steps)
    if model == "tns":
        state = TnsState(u0, rho_init)
        step_fn = lambda s: tns_step(s, cfg.dt, cfg.cfl)  # noqa: E731
        force = lambda s: ns_pressure_force(grid, s.u.spectrum()).values  # noqa: E731
    elif model == "ins":
        state = InsState(u0, rho_init)
        step_fn = lambda s: ins_step(s, cfg.dt, cfg.cfl)  # noqa: E731

        def force(s):
            if s.G is not None:
                return s.G.values
            return ins_pressure_force(grid, s.u.spectrum(), s.rho.values[0]).values
    else:
        raise ValueError(f"unknown reference model {model!r}")
    for step in range(cfg.n_steps + 1):
        if step in rec:
            ref.steps[step] = (state.u.values.copy(), state.rho.values.copy(), force(state))
        if step == cfg.n_steps:
            break
        state = step_fn(state)
        if model == "ins":
            ref.cg_iterations += state.cg_iterations
    ref.wall = time.perf_counter() - start
    return ref


@dataclass
class RunResult:
    cfg: RunConfig
    regime: ScalingRegime
    records: list
    series: dict
    u: TorusField
    ensemble: object
    monitor: ExistenceMonitor
    fine_key: FineKeyTrace | None
    initial_bracket: float
    rho_init: TorusField
    u0: TorusField
    wall: float
    reference: Reference | None = None


def _phi1(z):
    return 1.0 if z == 0 else -np.expm1(-z) / z


def _impulse(grid, old, new, regime, dt):
    """Drag impulse rate deposited at mid-path positions."""
    coef = -(regime.epsilon / regime.gamma) / (regime.sigma * dt)
    mid, q = _kernels.impulse_charges(
        old.positions, new.positions, old.velocities, new.velocities, old.weights, coef
    )
    acc = _kernels.deposit_sum(mid, q, grid.n, grid.h)
    return grid.fft(acc * float(grid.n) ** grid.dim)


def _save_snapshot(directory, tag, uhat, grid, ens, step, t, mon, u0):
    os.makedirs(directory, exist_ok=True)
    write_field(os.path.join(directory, f"u_{tag}.vnsf"), TorusField(grid, grid.ifft(uhat)))
    write_ensemble(os.path.join(directory, f"particles_{tag}.vnsp"), ens)
    write_field(os.path.join(directory, "u_initial.vnsf"), u0)
    meta = {
        "step": step,
        "t": t,
        "monitor": {
            k: getattr(mon, k)
            for k in ("accum_grad", "accum_f_l2", "accum_heat", "t", "last_grad", "last_f_l2", "last_heat")
        },
    }
    with open(os.path.join(directory, f"state_{tag}.json"), "w") as fh:
        json.dump(meta, fh, indent=1)


def load_restart(directory, tag=None):
    """Read the (u, ensemble, step, monitor) snapshot written by a run."""
    if tag is None:
        tags = sorted(
            f[len("state_"):-len(".json")] for f in os.listdir(directory) if f.startswith("state_")
        )
        if not tags:
            raise FileNotFoundError(f"no snapshot found in {directory}")
        tag = max(tags, key=lambda s: json.load(open(os.path.join(directory, f"state_{s}.json")))["step"])
    with open(os.path.join(directory, f"state_{tag}.json")) as fh:
        meta = json.load(fh)
    u = read_field(os.path.join(directory, f"u_{tag}.vnsf"))
    ens = read_ensemble(os.path.join(directory, f"particles_{tag}.vnsp"))
    u0 = read_field(os.path.join(directory, "u_initial.vnsf"))
    return u, ens, meta, u0


def run_coupled(cfg, reference=None, progress=None):
    """Run the coupled system described by ``cfg``.

    Returns a RunResult with cadence records, per-step series (energy,
    dissipation, modulated energy, momentum, mass, monitor), final fields
    and, when ``cfg.fine_key`` is set, the fine-key trace.  Numerical
    failures raise RunFailure after writing ``error.json`` to the output
    directory (if any).
    """
    cfg.validate()
    start = time.perf_counter()
    grid, regime, u0, ens = initial_data(cfg)
    mom0 = deposit(ens, u0, grid, regime)
    rho_init = mom0.rho
    eps, gam, sig = regime.epsilon, regime.gamma, regime.sigma
    dt = cfg.dt
    cad = cfg.cadence_steps
    record_steps = list(range(0, cfg.n_steps + 1, cad))
    if record_steps[-1] != cfg.n_steps:
        record_steps.append(cfg.n_steps)

    model = cfg.resolved_reference()
    if reference is None and model != "none":
        reference = run_reference(cfg, grid, u0, rho_init, record_steps, model)

    uhat = u0.spectrum().copy()
    mon = ExistenceMonitor(c_star=cfg.c_star, u0_hat=u0.spectrum().copy())
    first = 0
    if cfg.restart_from:
        u_r, ens, meta, u0_r = load_restart(cfg.restart_from)
        uhat = u_r.spectrum().copy()
        first = int(meta["step"])
        mon = ExistenceMonitor(c_star=cfg.c_star, u0_hat=u0_r.spectrum().copy(), **meta["monitor"])

    trace = FineKeyTrace(tuple(cfg.higher_r)) if cfg.fine_key else None
    series = {k: [] for k in ("t", "energy", "dissipation", "modulated", "conc_p2", "mass", "strong_grad_ok", "accum_grad")}
    series["momentum"] = []
    records = []
    d = grid.dim
    kin_pref = regime.kinetic_prefactor
    w1_count = 0

    def fail(exc, step):
        record = {
            "error": type(exc).__name__,
            "message": str(exc),
            "step": step,
            "t": step * dt,
            "epsilon": eps,
            "regime": regime.name,
        }
        if cfg.directory:
            os.makedirs(cfg.directory, exist_ok=True)
            with open(os.path.join(cfg.directory, "error.json"), "w") as fh:
                json.dump(record, fh, indent=1)
        raise RunFailure(record) from exc

    for step in range(first, cfg.n_steps + 1):
        t = step * dt
        u_vals = grid.ifft(uhat)
        u = TorusField(grid, u_vals) if np.all(np.isfinite(u_vals)) else None
        if u is None:
            fail(FloatingPointError("non-finite fluid velocity"), step)
        mom = deposit(ens, u, grid, regime)
        F_hat = mom.brinkman.spectrum()

        # per-step diagnostics
        U = mom.u_at if mom.u_at is not None else interpolate_field(u, ens.positions)
        mass, j_sum, kin2, conc2, conc1, spread = _kernels.particle_stats(ens.velocities, ens.weights, U, sig)
        grad_sq = float(np.sum(grid.multiplicity * grid.k2 * np.abs(uhat) ** 2))
        u_mean = np.real(uhat[(slice(None),) + (0,) * d])
        l2_sq = grid.mean_square_hat(uhat)
        E = 0.5 * kin_pref * kin2 + 0.5 * l2_sq
        Dn = grad_sq + conc2 / gam
        mod = sum(modulated_terms_from_sums(regime, mass, j_sum, spread, u_mean, 0.5 * (l2_sq - np.sum(u_mean**2))))
        momentum = (eps / gam) * np.asarray(j_sum) + u_mean
        grads = gradient_values(grid, uhat)
        grad_linf = float(np.sqrt(np.sum(grads**2, axis=(0, 1))).max())
        f2 = grid.mean_square_hat(F_hat)
        heat = heat_h1_fourth(grid, mon.u0_hat, t)
        mon, flags = monitor_update(mon, FluidState(u, t), None, sample=(grad_linf, f2, heat))
        for key, val in (
            ("t", t), ("energy", E), ("dissipation", Dn), ("modulated", mod),
            ("conc_p2", conc2), ("mass", mass), ("strong_grad_ok", flags["strong_grad_ok"]),
            ("accum_grad", flags["accum_grad"]),
        ):
            series[key].append(val)
        series["momentum"].append(momentum)
        if trace is not None:
            dudt = grid.ifft(ns_rhs_hat(grid, uhat, F_hat))
            trace.append(t, fine_key_sample(ens, u, dudt, eps, cfg.higher_r, grads.reshape((d * d,) + grid.shape)))

        if step in record_steps or step == cfg.n_steps:
            rho = mom.rho
            rho_linf = float(rho.values.max())
            higher = {
                r: higher_dissipation(ens, u, r, eps, None if regime.name == "fine" else sig, u_at=U)
                for r in cfg.higher_r
            }
            H = float("nan")
            terms = [float("nan")] * 4
            err_u = err_hm1 = err_w1 = float("nan")
            ref = reference.at(step) if reference is not None else None
            if ref is not None:
                u_ref = TorusField(grid, ref[0])
                rho_ref = TorusField(grid, ref[1])
                G = TorusField(grid, ref[2])
                H, tdict = relative_entropy(ens, u, u_ref, rho_ref, regime, G=G, rho_eps=rho, u_at=U)
                terms = list(tdict.values())
                err_u = float(np.sqrt(np.mean(np.sum((u_vals - ref[0]) ** 2, axis=0))))
                err_hm1 = hminus1_distance(rho, rho_ref)
                if w1_count % cfg.w1_every == 0 or step == cfg.n_steps:
                    err_w1 = wasserstein1(rho, rho_ref, resolution=cfg.w1_resolution)
                w1_count += 1
            records.append(
                DiagnosticRecord(
                    t=t, energy=E, dissipation=Dn, modulated=mod,
                    lambda_bound=lambda_bound(max(rho_linf, 0.0), eps),
                    higher=higher, rel_entropy=H,
                    term1=terms[0], term2=terms[1], term3=terms[2], term4=terms[3],
                    conc_p2=conc2, conc_p1=conc1,
                    brinkman_l2=float(np.sqrt(f2)), rho_linf=rho_linf, mass=mass,
                    momentum=tuple(float(m) for m in momentum),
                    strong_grad_ok=flags["strong_grad_ok"], accum_grad=flags["accum_grad"],
                    accum_f_l2=flags["accum_f_l2"], accum_heat=flags["accum_heat"],
                    err_u_l2=err_u, err_rho_hm1=err_hm1, err_rho_w1=err_w1,
                )
            )
            if progress is not None:
                progress(step, cfg.n_steps, records[-1])
        if cfg.directory and cfg.snapshots and cfg.snapshot_every and step % cfg.snapshot_every == 0 and step > first:
            _save_snapshot(cfg.directory, f"{step:07d}", uhat, grid, ens, step, t, mon, u0)
        if step == cfg.n_steps:
            break

        # advance one step
        try:
            check_cfl(grid, u_vals, dt, cfg.cfl)
            if cfg.splitting == "fkf":
                Fn_hat = _phi1(dt / eps) * F_hat
                u_half_hat = ns_step_hat(grid, uhat, Fn_hat, 0.5 * dt)
                u_half = TorusField(grid, grid.ifft(u_half_hat))
                new = push(ens, u_half, regime, dt)
                Fimp_hat = _impulse(grid, ens, new, regime, dt)
                uhat = ns_step_hat(grid, u_half_hat, 2.0 * Fimp_hat - Fn_hat, 0.5 * dt)
            else:
                half = push(ens, u, regime, 0.5 * dt)
                kick = _impulse(grid, ens, half, regime, 0.5 * dt) * grid.dealias_mask
                uhat = uhat + 0.5 * dt * leray_project_hat(grid, kick)
                uhat = ns_step_hat(grid, uhat, None, dt)
                u_mid = TorusField(grid, grid.ifft(uhat))
                new = push(half, u_mid, regime, 0.5 * dt)
                kick = _impulse(grid, half, new, regime, 0.5 * dt) * grid.dealias_mask
                uhat = uhat + 0.5 * dt * leray_project_hat(grid, kick)
            ens = new
        except (CFLError, PressureSolveError, ValueError, FloatingPointError) as exc:
            fail(exc, step)

    if cfg.directory:
        os.makedirs(cfg.directory, exist_ok=True)
        write_diagnostics(os.path.join(cfg.directory, "diagnostics.csv"), records)
        if cfg.snapshots:
            _save_snapshot(cfg.directory, "final", uhat, grid, ens, cfg.n_steps, cfg.n_steps * dt, mon, u0)

    out_series = {k: np.asarray(v) for k, v in series.items()}
    first_rec = records[0] if records else None
    bracket = eps
    if first_rec is not None and np.isfinite(first_rec.err_u_l2):
        bracket += first_rec.err_u_l2**2 + first_rec.err_rho_hm1**2
    return RunResult(
        cfg=cfg,
        regime=regime,
        records=records,
        series=out_series,
        u=TorusField(grid, grid.ifft(uhat)),
        ensemble=ens,
        monitor=mon,
        fine_key=trace,
        initial_bracket=bracket,
        rho_init=rho_init,
        u0=u0,
        wall=time.perf_counter() - start,
        reference=reference,
    )
