"""Friction-dominated Vlasov-Navier-Stokes on the periodic torus.

Pseudospectral fluid solver, particle-in-cell kinetic solver with an
exponential friction integrator, the transport and inhomogeneous
Navier-Stokes limit systems, the energy-type functionals and a harness
for epsilon sweeps and rate fits.
"""

from .fluid import ExistenceMonitor, FluidState, ns_step
from .grid import TorusField, TorusGrid, heat_semigroup, leray_project, sobolev_norm
from .kinetic import ParticleEnsemble, ScalingRegime, deposit, jacobian_probe, push, sample_initial
from .limits import InsState, TnsState, ins_step, tns_step

__version__ = "0.1.0"

__all__ = [
    "TorusGrid",
    "TorusField",
    "leray_project",
    "heat_semigroup",
    "sobolev_norm",
    "FluidState",
    "ExistenceMonitor",
    "ns_step",
    "ScalingRegime",
    "ParticleEnsemble",
    "sample_initial",
    "push",
    "deposit",
    "jacobian_probe",
    "TnsState",
    "InsState",
    "tns_step",
    "ins_step",
]
