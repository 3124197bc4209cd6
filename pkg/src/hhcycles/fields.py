"""Generic vector-field bundle used by the integrators and solvers.

Every solver in this package works against a (f, jacobian) pair so the cheap
analytic oracles (harmonic oscillator) can be swapped in for testing; the
Hodgkin-Huxley binding is the default in the CLI.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import model


@dataclass(frozen=True)
class VectorField:
    """A vector field with analytic Jacobian.

    f and jac must accept either a single state (dim,) or a batch (m, dim)
    and return matching shapes ((m, dim) and (m, dim, dim) for batches).
    """

    dim: int
    f: Callable[[np.ndarray], np.ndarray]
    jac: Callable[[np.ndarray], np.ndarray]
    name: str = "field"


def hh_field(p: model.HHParams = model.DEFAULT_PARAMS, I: float = 0.0) -> VectorField:
    """Hodgkin-Huxley field at fixed stimulus current."""
    return VectorField(
        dim=4,
        f=lambda x: model.vector_field(x, p, I),
        jac=lambda x: model.jacobian(x, p, I),
        name=f"hh(I={I:g})",
    )


def harmonic_oscillator(omega: float = 1.0) -> VectorField:
    """Test field xdot = y, ydot = -omega^2 x; period 2*pi/omega."""
    J = np.array([[0.0, 1.0], [-omega * omega, 0.0]])

    def f(x):
        x = np.asarray(x, dtype=float)
        return np.stack([x[..., 1], -omega * omega * x[..., 0]], axis=-1)

    def jac(x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(J, x.shape[:-1] + (2, 2)).copy()

    return VectorField(dim=2, f=f, jac=jac, name=f"sho(omega={omega:g})")
