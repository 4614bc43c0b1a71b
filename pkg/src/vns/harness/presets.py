"""Named initial-data presets.

Velocity presets return band-limited, divergence-free fields; density
presets return non-negative functions.  All are vectorized callables of
the coordinate arrays.
"""

from __future__ import annotations

import numpy as np

__all__ = ["U0_PRESETS", "RHO0_PRESETS", "F0_KINDS", "velocity_preset", "density_preset", "deviation_field"]


def _taylor_green(dim, amp):
    if dim == 2:
        return lambda x, y: (amp * np.sin(x) * np.cos(y), -amp * np.cos(x) * np.sin(y))
    return lambda x, y, z: (
        amp * np.sin(x) * np.cos(y) * np.cos(z),
        -amp * np.cos(x) * np.sin(y) * np.cos(z),
        0.0 * x,
    )


def _mixed(dim, amp):
    # crossed shears: not a steady state, so convection stays active
    if dim == 2:
        return lambda x, y: (amp * (np.sin(y) + 0.5 * np.cos(2 * y)), amp * (np.cos(x) + 0.5 * np.sin(2 * x)))
    return lambda x, y, z: (amp * np.sin(y), amp * np.sin(z), amp * np.sin(x))


def _zero(dim, amp):
    return lambda *xs: tuple(0.0 * xs[0] for _ in range(dim))


U0_PRESETS = {"taylor_green": _taylor_green, "mixed": _mixed, "zero": _zero}


def velocity_preset(name, dim, amplitude, mean=None):
    if name not in U0_PRESETS:
        raise ValueError(f"unknown velocity preset {name!r}; choose from {sorted(U0_PRESETS)}")
    base = U0_PRESETS[name](dim, amplitude)
    mean = np.zeros(dim) if mean is None else np.asarray(mean, dtype=float)

    def func(*xs):
        comps = base(*xs)
        return tuple(c + m for c, m in zip(comps, mean))

    return func


def _uniform(dim, mean, amp):
    return lambda *xs: mean + 0.0 * xs[0]


def _cosine(dim, mean, amp):
    if not 0.0 <= amp <= 1.0:
        raise ValueError("cosine density amplitude must lie in [0, 1]")
    if dim == 2:
        return lambda x, y: mean * (1.0 + amp * np.cos(x) * np.cos(y))
    return lambda x, y, z: mean * (1.0 + amp * np.cos(x) * np.cos(y) * np.cos(z))


RHO0_PRESETS = {"uniform": _uniform, "cosine": _cosine}
F0_KINDS = ("monokinetic", "maxwellian")


def density_preset(name, dim, mean, amplitude=0.0):
    if name not in RHO0_PRESETS:
        raise ValueError(f"unknown density preset {name!r}; choose from {sorted(RHO0_PRESETS)}")
    if mean < 0:
        raise ValueError("density mean must be non-negative")
    return RHO0_PRESETS[name](dim, mean, amplitude)


def deviation_field(dim):
    """Smooth unit-amplitude velocity perturbation used for ill-prepared data."""
    if dim == 2:
        return lambda x, y: (np.cos(x + y), np.sin(x - y))
    return lambda x, y, z: (np.cos(y + z), np.sin(z - x), np.cos(x - y))
