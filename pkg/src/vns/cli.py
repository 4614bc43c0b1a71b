"""Command-line entry point: ``vns run|sweep|validate``.

Exit codes: 0 success, 1 numerical failure (or failed validation
checks), 2 configuration error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

EXIT_OK = 0
EXIT_NUMERICAL = 1
EXIT_CONFIG = 2


def _load(path):
    from .harness.config import load_config

    cfg = load_config(path)
    if cfg.directory is None:
        stem = os.path.splitext(os.path.basename(path))[0]
        cfg = dataclasses.replace(cfg, directory=f"{stem}_out")
    return cfg


def _cmd_run(args):
    from .harness.coupled import run_coupled

    cfg = _load(args.config)
    if cfg.epsilons:
        print("note: [sweep] epsilons ignored by 'run'; use 'vns sweep'", file=sys.stderr)

    def progress(step, total, rec):
        if not args.quiet:
            print(
                f"t={rec.t:.4f} E={rec.energy:.6e} D={rec.dissipation:.6e} "
                f"mod={rec.modulated:.6e} err_u={rec.err_u_l2:.3e}",
                flush=True,
            )

    res = run_coupled(cfg, progress=progress)
    print(f"wrote {os.path.join(cfg.directory, 'diagnostics.csv')} ({len(res.records)} records, {res.wall:.1f} s)")
    return EXIT_OK


def _cmd_sweep(args):
    from .harness.config import ConfigError
    from .harness.sweep import run_sweep

    cfg = _load(args.config)
    if not cfg.epsilons:
        raise ConfigError("[sweep] epsilons is required for 'vns sweep'")

    def progress(eps, metrics):
        if not args.quiet:
            print(f"eps={eps:g} err_u={metrics['err_u'][-1]:.4e} err_fine={metrics['err_fine'][-1]:.4e}", flush=True)

    res = run_sweep(cfg, progress=progress)
    for name, fit in res.fits.items():
        print(f"{name:<10s} slope={fit.slope:+.4f} prefactor={fit.prefactor:.4e} residual={fit.residual:.2e}")
    print(f"wrote {os.path.join(cfg.directory, 'ratefit.csv')}")
    return EXIT_OK


def _cmd_validate(args):
    from .harness.validate import format_report, validate

    results = validate(args.filter)
    if not results:
        print(f"no check matches {args.filter!r}", file=sys.stderr)
        return EXIT_CONFIG
    print(format_report(results))
    return EXIT_OK if all(r.passed for r in results) else EXIT_NUMERICAL


def build_parser():
    parser = argparse.ArgumentParser(prog="vns", description="Vlasov-Navier-Stokes asymptotics toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run one coupled simulation")
    p_run.add_argument("config")
    p_run.add_argument("-q", "--quiet", action="store_true")
    p_run.set_defaults(func=_cmd_run)
    p_sweep = sub.add_parser("sweep", help="run an epsilon sweep and fit rates")
    p_sweep.add_argument("config")
    p_sweep.add_argument("-q", "--quiet", action="store_true")
    p_sweep.set_defaults(func=_cmd_sweep)
    p_val = sub.add_parser("validate", help="run the oracle suite")
    p_val.add_argument("--filter", default=None, help="only checks whose name contains this text")
    p_val.set_defaults(func=_cmd_validate)
    return parser


def main(argv=None):
    from .harness.config import ConfigError
    from .harness.coupled import RunFailure

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RunFailure as exc:
        print(f"numerical failure: {json.dumps(exc.record)}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
