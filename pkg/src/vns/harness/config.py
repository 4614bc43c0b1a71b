"""Run configuration: parsing, validation and defaults.

Config files are plain ``key = value`` lines grouped in the sections
``[fluid]``, ``[kinetic]``, ``[sweep]`` and ``[output]``; ``#`` starts a
comment.  Every key is validated before anything is allocated and
unknown keys are rejected.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass

from .presets import F0_KINDS, RHO0_PRESETS, U0_PRESETS

__all__ = ["ConfigError", "RunConfig", "load_config", "parse_config", "KEYS"]


class ConfigError(ValueError):
    """Invalid or unknown configuration entry."""


@dataclass
class RunConfig:
    # [fluid]
    dim: int = 2
    n: int = 64
    dt: float = 1e-3
    T: float = 1.0
    cfl: float = 0.5
    c_star: float | None = None
    u0: str = "taylor_green"
    u0_amplitude: float = 0.1
    u0_mean: tuple = (0.0, 0.0)
    # [kinetic]
    regime: str = "light"
    alpha: float = 0.25
    epsilon: float = 0.05
    N: int = 200_000
    f0: str = "monokinetic"
    rho0: str = "uniform"
    rho0_mean: float = 1.0
    rho0_amplitude: float = 0.5
    theta: float = 0.0
    deviation: float = 0.0
    deviation_power: float = 0.0
    seed: int = 0
    sampling: str = "weighted"
    higher_r: tuple = (2.0, 4.0)
    splitting: str = "fkf"
    fine_key: bool = False
    # [sweep]
    epsilons: tuple = ()
    reference: str = "auto"
    w1_resolution: int = 32
    w1_every: int = 10
    # [output]
    directory: str | None = None
    cadence: float | None = None
    snapshots: bool = True
    snapshot_every: int = 0
    restart_from: str | None = None

    @property
    def n_steps(self):
        return int(round(self.T / self.dt))

    @property
    def cadence_steps(self):
        """Steps between diagnostic records: max(dt, T/200) unless overridden."""
        cad = self.cadence if self.cadence is not None else max(self.dt, self.T / 200.0)
        return max(1, int(round(cad / self.dt)))

    def resolved_reference(self):
        if self.reference != "auto":
            return self.reference
        return "ins" if self.regime == "fine" else "tns"

    def with_epsilon(self, eps):
        return dataclasses.replace(self, epsilon=float(eps))

    def validate(self):
        err = []
        if self.dim not in (2, 3):
            err.append("dim must be 2 or 3")
        if self.n < 8 or self.n & (self.n - 1):
            err.append("n must be a power of two >= 8")
        if not self.dt > 0:
            err.append("dt must be positive")
        if not self.T > 0:
            err.append("T must be positive")
        if self.T > 0 and self.dt > 0 and abs(self.n_steps * self.dt - self.T) > 1e-9 * self.T:
            err.append("T must be a whole number of steps")
        if not 0 < self.cfl <= 1:
            err.append("cfl must lie in (0, 1]")
        if self.c_star is not None and not 0 < self.c_star < 1:
            err.append("c_star must lie in (0, 1)")
        if self.u0 not in U0_PRESETS:
            err.append(f"u0 must be one of {sorted(U0_PRESETS)}")
        if len(self.u0_mean) != self.dim:
            err.append("u0_mean needs one entry per dimension")
        if self.regime not in ("light", "light_fast", "fine"):
            err.append("regime must be light, light_fast or fine")
        if not 0 <= self.alpha <= 0.5:
            err.append("alpha must lie in [0, 1/2]")
        eps_all = list(self.epsilons) + [self.epsilon]
        if any(not 0 < e <= 1 for e in eps_all):
            err.append("epsilon values must lie in (0, 1]")
        if self.N < 0:
            err.append("N must be non-negative")
        if self.f0 not in F0_KINDS:
            err.append(f"f0 must be one of {list(F0_KINDS)}")
        if self.rho0 not in RHO0_PRESETS:
            err.append(f"rho0 must be one of {sorted(RHO0_PRESETS)}")
        if self.rho0_mean < 0:
            err.append("rho0_mean must be non-negative")
        if self.rho0 == "cosine" and not 0 <= self.rho0_amplitude <= 1:
            err.append("rho0_amplitude must lie in [0, 1]")
        if self.theta < 0:
            err.append("theta must be non-negative")
        if self.sampling not in ("weighted", "counts"):
            err.append("sampling must be weighted or counts")
        if any(r < 2 for r in self.higher_r):
            err.append("higher_r exponents must be >= 2")
        if self.splitting not in ("fkf", "kfk"):
            err.append("splitting must be fkf or kfk")
        if self.reference not in ("auto", "tns", "ins", "none"):
            err.append("reference must be auto, tns, ins or none")
        if self.epsilons:
            if len(self.epsilons) < 3:
                err.append("a sweep needs at least three epsilon values")
            if any(b >= a for a, b in zip(self.epsilons, self.epsilons[1:])):
                err.append("epsilons must be strictly decreasing")
        if self.w1_resolution < 4 or self.w1_every < 1:
            err.append("w1_resolution >= 4 and w1_every >= 1 required")
        if self.cadence is not None and self.cadence <= 0:
            err.append("cadence must be positive")
        if self.snapshot_every < 0:
            err.append("snapshot_every must be non-negative")
        if err:
            raise ConfigError("; ".join(err))
        return self


def _float(s):
    return float(s)


def _int(s):
    v = float(s)
    if v != int(v):
        raise ValueError(f"{s!r} is not an integer")
    return int(v)


def _bool(s):
    low = s.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"{s!r} is not a boolean")


def _floats(s):
    parts = [p for p in s.replace(",", " ").split() if p]
    return tuple(float(p) for p in parts)


def _opt_float(s):
    return None if s.strip().lower() in ("", "none") else float(s)


def _opt_str(s):
    return None if s.strip().lower() in ("", "none") else s.strip()


def _str(s):
    return s.strip()


# section -> key -> (attribute, parser)
KEYS = {
    "fluid": {
        "dim": ("dim", _int),
        "n": ("n", _int),
        "dt": ("dt", _float),
        "t_final": ("T", _float),
        "cfl": ("cfl", _float),
        "c_star": ("c_star", _opt_float),
        "u0": ("u0", _str),
        "u0_amplitude": ("u0_amplitude", _float),
        "u0_mean": ("u0_mean", _floats),
    },
    "kinetic": {
        "regime": ("regime", _str),
        "alpha": ("alpha", _float),
        "epsilon": ("epsilon", _float),
        "particles": ("N", _int),
        "f0": ("f0", _str),
        "rho0": ("rho0", _str),
        "rho0_mean": ("rho0_mean", _float),
        "rho0_amplitude": ("rho0_amplitude", _float),
        "theta": ("theta", _float),
        "deviation": ("deviation", _float),
        "deviation_power": ("deviation_power", _float),
        "seed": ("seed", _int),
        "sampling": ("sampling", _str),
        "higher_r": ("higher_r", _floats),
        "splitting": ("splitting", _str),
        "fine_key": ("fine_key", _bool),
    },
    "sweep": {
        "epsilons": ("epsilons", _floats),
        "reference": ("reference", _str),
        "w1_resolution": ("w1_resolution", _int),
        "w1_every": ("w1_every", _int),
    },
    "output": {
        "directory": ("directory", _opt_str),
        "cadence": ("cadence", _opt_float),
        "snapshots": ("snapshots", _bool),
        "snapshot_every": ("snapshot_every", _int),
        "restart_from": ("restart_from", _opt_str),
    },
}


def parse_config(text, base=None):
    """Parse config text into a validated RunConfig."""
    parser = configparser.ConfigParser(
        comment_prefixes=("#",), inline_comment_prefixes=("#",),
        delimiters=("=",), interpolation=None,
    )
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    values = {}
    for section in parser.sections():
        if section not in KEYS:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in KEYS[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            attr, conv = KEYS[section][key]
            try:
                values[attr] = conv(raw)
            except ValueError as exc:
                raise ConfigError(f"[{section}] {key}: {exc}") from exc
    cfg = dataclasses.replace(base or RunConfig(), **values)
    if "u0_mean" not in values and len(cfg.u0_mean) != cfg.dim:
        cfg = dataclasses.replace(cfg, u0_mean=(0.0,) * cfg.dim)
    return cfg.validate()


def load_config(path):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)
