"""Periodic orbits, Floquet stability and bifurcations of the Hodgkin-Huxley neuron.

The package computes stable and unstable limit cycles of the classical
four-variable membrane model across the external current, by single shooting,
piecewise-polynomial collocation and harmonic balance, and locates the
bifurcations that organize the diagram: the two Hopf points, the three
saddle-node-of-cycles turning points and the period-doubling point.
"""

from .errors import HHCyclesError
from .fields import VectorField, harmonic_oscillator, hh_field
from .model import DEFAULT_PARAMS, HHParams, detect_hopf, find_equilibrium

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_PARAMS",
    "HHCyclesError",
    "HHParams",
    "VectorField",
    "detect_hopf",
    "find_equilibrium",
    "harmonic_oscillator",
    "hh_field",
    "__version__",
]
