"""Epsilon sweeps against a shared limit-system reference and rate fits."""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .config import ConfigError
from ..kinetic import deposit
from .coupled import RunFailure, initial_data, make_regime, run_coupled, run_reference

__all__ = ["RateFit", "SweepResult", "fit_rate", "run_sweep", "sweep_metrics", "write_ratefit", "write_plot_script"]

METRICS = ("err_u", "err_w1", "err_hm1", "err_fine", "conc_p1", "speed", "sup_H", "int_conc2", "c_fit")


@dataclass
class RateFit:
    """Least-squares fit log e = slope log eps + intercept."""

    epsilons: np.ndarray
    errors: np.ndarray
    slope: float
    intercept: float
    residual: float

    @property
    def prefactor(self):
        return float(np.exp(self.intercept))


def fit_rate(epsilons, errors):
    """Fit a power law e(eps) = C eps^slope by least squares in log-log.

    ``residual`` is the root-mean-square deviation of log e from the line.
    Needs at least three points with strictly decreasing eps and positive
    errors.
    """
    eps = np.asarray(epsilons, dtype=float)
    err = np.asarray(errors, dtype=float)
    if eps.size != err.size:
        raise ValueError("epsilons and errors differ in length")
    if eps.size < 3:
        raise ValueError("a rate fit needs at least three points")
    if np.any(np.diff(eps) >= 0):
        raise ValueError("epsilons must be strictly decreasing")
    if np.any(eps <= 0) or np.any(~np.isfinite(err)) or np.any(err <= 0):
        raise ValueError("epsilons and errors must be positive and finite")
    x, y = np.log(eps), np.log(err)
    slope, intercept = np.polyfit(x, y, 1)
    res = float(np.sqrt(np.mean((y - (slope * x + intercept)) ** 2)))
    return RateFit(eps, err, float(slope), float(intercept), res)


@dataclass
class SweepResult:
    epsilons: list
    metrics: dict  # metric name -> list over epsilon
    fits: dict  # metric name -> RateFit
    runs: list = field(default_factory=list)
    reference: object = None
    failure: dict | None = None


def sweep_metrics(result):
    """Per-run summary metrics of a coupled run against its reference.

    err_u     sup_t |u_eps - u_ref|_2
    err_w1    time average of the sampled W1(rho_eps, rho_ref)
    err_hm1   sup_t |rho_eps - rho_ref|_{H^-1}
    err_fine  err_u + err_hm1
    conc_p1   sum w |v| at the final time
    speed     sum w |v/sigma - u(x)| at the final time
    sup_H     sup_t of the relative entropy
    int_conc2 time integral of sum w |v/sigma - u(x)|^2
    c_fit     sup_H / (|u0_eps - u0|^2 + |rho0_eps - rho0|_{H^-1}^2 + eps)
    """
    recs = result.records
    t = np.array([r.t for r in recs])
    eu = np.array([r.err_u_l2 for r in recs])
    eh = np.array([r.err_rho_hm1 for r in recs])
    w1 = np.array([r.err_rho_w1 for r in recs])
    H = np.array([r.rel_entropy for r in recs])
    ens = result.ensemble
    s = result.series
    conc_p1 = float(np.sum(ens.weights * np.sqrt(np.sum(ens.velocities**2, axis=1))))
    w1_ok = np.isfinite(w1)
    if np.count_nonzero(w1_ok) >= 2:
        w1_avg = float(np.trapezoid(w1[w1_ok], t[w1_ok]) / (t[w1_ok][-1] - t[w1_ok][0]))
    else:
        w1_avg = float(np.nanmean(w1)) if w1_ok.any() else float("nan")
    sup_H = float(np.nanmax(H)) if np.isfinite(H).any() else float("nan")
    return {
        "err_u": float(np.nanmax(eu)) if np.isfinite(eu).any() else float("nan"),
        "err_w1": w1_avg,
        "err_hm1": float(np.nanmax(eh)) if np.isfinite(eh).any() else float("nan"),
        "err_fine": float(np.nanmax(eu) + np.nanmax(eh)) if np.isfinite(eu).any() else float("nan"),
        "conc_p1": conc_p1,
        "speed": float(recs[-1].conc_p1),
        "sup_H": sup_H,
        "int_conc2": float(np.trapezoid(s["conc_p2"], s["t"])),
        "c_fit": sup_H / result.initial_bracket,
    }


def write_ratefit(path, sweep):
    """One row per epsilon with every metric, then one row per fitted metric."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epsilon"] + list(METRICS))
        for i, eps in enumerate(sweep.epsilons):
            w.writerow([repr(float(eps))] + [repr(float(sweep.metrics[m][i])) for m in METRICS])
        w.writerow([])
        w.writerow(["metric", "slope", "intercept", "prefactor", "residual"])
        for name, fit in sweep.fits.items():
            w.writerow([name, repr(fit.slope), repr(fit.intercept), repr(fit.prefactor), repr(fit.residual)])


def write_plot_script(path, data_path="ratefit.csv", metrics=("err_u", "err_w1", "err_fine")):
    """Emit a gnuplot script drawing log-log error curves; the data path is a variable."""
    cols = {m: METRICS.index(m) + 2 for m in metrics}
    lines = [
        "# usage: gnuplot -e \"data='ratefit.csv'\" plot_rates.gp",
        f"if (!exists(\"data\")) data = '{data_path}'",
        "set datafile separator ','",
        "set logscale xy",
        "set key left top",
        "set xlabel 'epsilon'",
        "set ylabel 'error'",
        "set terminal pngcairo size 800,600",
        "set output data.'.png'",
        "plot " + ", \\\n     ".join(
            f"data every ::1 using 1:{c} with linespoints title '{m}'" for m, c in cols.items()
        ),
    ]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _fit_all(epsilons, metrics):
    fits = {}
    for name in METRICS:
        vals = metrics[name]
        if len(vals) >= 3:
            try:
                fits[name] = fit_rate(epsilons[: len(vals)], vals)
            except ValueError:
                pass
    return fits


def run_sweep(cfg, progress=None):
    """Run cfg for every epsilon in cfg.epsilons against one shared reference.

    Every member uses the same initial velocity field and the same particle
    positions and weights, so rho_eps(0) coincides with the reference
    density.  A failing member stops the sweep; the completed members are
    written out and returned together with the failure record.
    """
    cfg.validate()
    if not cfg.epsilons:
        raise ConfigError("a sweep needs an epsilon list")
    model = cfg.resolved_reference()
    expected = "ins" if cfg.regime == "fine" else "tns"
    if model not in (expected, "none"):
        raise ConfigError(f"the {cfg.regime} regime is compared with {expected}, not {model}")
    first = cfg.with_epsilon(cfg.epsilons[0])
    grid, _, u0, ens = initial_data(first)
    rho_init = deposit(ens, u0, grid, make_regime(first)).rho
    record_steps = list(range(0, cfg.n_steps + 1, cfg.cadence_steps))
    if record_steps[-1] != cfg.n_steps:
        record_steps.append(cfg.n_steps)
    reference = None if model == "none" else run_reference(cfg, grid, u0, rho_init, record_steps, model)

    metrics = {m: [] for m in METRICS}
    runs = []
    done = []
    failure = None
    for eps in cfg.epsilons:
        sub = cfg.with_epsilon(eps)
        if cfg.directory:
            sub.directory = os.path.join(cfg.directory, f"eps_{eps:g}")
        try:
            res = run_coupled(sub, reference=reference)
        except RunFailure as exc:
            failure = exc.record
            break
        runs.append(res)
        done.append(eps)
        for k, v in sweep_metrics(res).items():
            metrics[k].append(v)
        if progress is not None:
            progress(eps, metrics)
    fits = _fit_all(np.asarray(done), metrics)
    out = SweepResult(list(done), metrics, fits, runs, reference, failure)
    if cfg.directory:
        os.makedirs(cfg.directory, exist_ok=True)
        write_ratefit(os.path.join(cfg.directory, "ratefit.csv"), out)
        write_plot_script(os.path.join(cfg.directory, "plot_rates.gp"))
        if failure is not None:
            with open(os.path.join(cfg.directory, "error.json"), "w") as fh:
                json.dump(failure, fh, indent=1)
    if failure is not None:
        exc = RunFailure(dict(failure, completed=list(done)))
        exc.partial = out
        raise exc
    return out
