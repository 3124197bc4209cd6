"""Fixed-step RK4 time integration and variational (monodromy) flow."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import NonFinite, NotPeriodic
from .fields import VectorField


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray   # (m,), strictly increasing, ms
    states: np.ndarray  # (m, dim)

    def __post_init__(self):
        if len(self.times) != len(self.states):
            raise ValueError("times/states length mismatch")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")


@dataclass(frozen=True)
class MonodromyResult:
    matrix: np.ndarray
    cycle_period: float


def _rk4_step(f, x, h):
    k1 = f(x)
    k2 = f(x + 0.5 * h * k1)
    k3 = f(x + 0.5 * h * k2)
    k4 = f(x + h * k3)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate_rk4(field: VectorField, x0, t0: float, t1: float, h: float) -> Trajectory:
    """Classical RK4 with fixed step; the last step is shortened to hit t1.

    Raises NonFinite if the state blows up mid-integration.
    """
    if h <= 0:
        raise ValueError("step must be positive")
    if t1 <= t0:
        raise ValueError("t1 must exceed t0")
    x = np.array(x0, dtype=float)
    times = [t0]
    states = [x.copy()]
    t = t0
    while t < t1 - 1e-14 * max(1.0, abs(t1)):
        step = min(h, t1 - t)
        x = _rk4_step(field.f, x, step)
        t = t + step
        if not np.all(np.isfinite(x)):
            raise NonFinite(f"integration blew up at t={t:.6g}")
        times.append(t)
        states.append(x.copy())
    return Trajectory(np.array(times), np.array(states))


def flow(field: VectorField, x0, T: float, nsteps: int) -> np.ndarray:
    """Endpoint of the flow over time T (no trajectory storage)."""
    x = np.array(x0, dtype=float)
    h = T / nsteps
    for _ in range(nsteps):
        x = _rk4_step(field.f, x, h)
    if not np.all(np.isfinite(x)):
        raise NonFinite("flow blew up")
    return x


def flow_with_monodromy(field: VectorField, x0, T: float, nsteps: int):
    """Flow endpoint plus the fundamental matrix Y(T), Y(0)=I.

    State and variational equations are advanced together in a single coupled
    RK4 pass, which avoids interpolation error in J(x(t)).
    """
    dim = field.dim
    x = np.array(x0, dtype=float)
    Y = np.eye(dim)

    def f(z):
        xx = z[:dim]
        YY = z[dim:].reshape(dim, dim)
        return np.concatenate([field.f(xx), (field.jac(xx) @ YY).ravel()])

    z = np.concatenate([x, Y.ravel()])
    h = T / nsteps
    for _ in range(nsteps):
        z = _rk4_step(f, z, h)
    if not np.all(np.isfinite(z)):
        raise NonFinite("variational flow blew up")
    return z[:dim], z[dim:].reshape(dim, dim)


def variational_along(field: VectorField, x_of_t: Callable[[np.ndarray], np.ndarray],
                      t0: float, t1: float, nsteps: int,
                      Y0: Optional[np.ndarray] = None) -> np.ndarray:
    """Integrate Ydot = J(x(t)) Y with x(t) supplied externally.

    Used when the cycle is available in closed form (Fourier series), so the
    only discretization error is in the variational RK4 itself.
    """
    dim = field.dim
    Y = np.eye(dim) if Y0 is None else np.array(Y0, dtype=float)
    h = (t1 - t0) / nsteps
    # all stage times up front so x and J evaluate in one batched call each
    t_half = t0 + 0.5 * h * np.arange(2 * nsteps + 1)
    xs = np.asarray(x_of_t(t_half))
    Js = field.jac(xs)
    for i in range(nsteps):
        J1 = Js[2 * i]
        Jm = Js[2 * i + 1]
        J2 = Js[2 * i + 2]
        k1 = J1 @ Y
        k2 = Jm @ (Y + 0.5 * h * k1)
        k3 = Jm @ (Y + 0.5 * h * k2)
        k4 = J2 @ (Y + h * k3)
        Y = Y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(Y)):
        raise NonFinite("variational flow blew up")
    return Y


DEFAULT_MONODROMY_STEPS = 4000


def monodromy(field: VectorField, cycle_samples: Trajectory,
              nsteps: int = DEFAULT_MONODROMY_STEPS,
              endpoint_tol: float = 1e-6) -> MonodromyResult:
    """Monodromy matrix of a one-period trajectory.

    The samples must cover exactly one period (first and last state equal to
    endpoint_tol); the variational system is re-integrated in a coupled pass
    from the first sample rather than interpolating the given samples.
    """
    x0 = cycle_samples.states[0]
    x1 = cycle_samples.states[-1]
    scale = max(1.0, float(np.max(np.abs(x0))))
    if np.max(np.abs(x1 - x0)) > endpoint_tol * scale:
        raise NotPeriodic(
            f"endpoint mismatch {np.max(np.abs(x1 - x0)):.3g} exceeds tolerance")
    T = float(cycle_samples.times[-1] - cycle_samples.times[0])
    _, M = flow_with_monodromy(field, x0, T, nsteps)
    return MonodromyResult(matrix=M, cycle_period=T)


def liouville_determinant(field: VectorField, traj: Trajectory) -> float:
    """exp of the integral of trace J along the trajectory (trapezoid rule)."""
    tr = np.array([np.trace(field.jac(x)) for x in traj.states])
    return float(np.exp(np.trapezoid(tr, traj.times)))


def signed_log_determinant(chunks) -> tuple:
    """(sign, log|det|) of a product of matrices, one slogdet per factor.

    The determinant of a strongly dissipative monodromy matrix underflows
    double precision (values near 1e-54 occur here), so the product is never
    formed; the signs and log magnitudes are accumulated instead.
    """
    sign = 1.0
    total = 0.0
    for M in chunks:
        s, ld = np.linalg.slogdet(M)
        if s == 0.0:
            return 0.0, -np.inf
        sign *= s
        total += ld
    return float(sign), float(total)


def trace_integral(field: VectorField, x_of_t: Callable[[np.ndarray], np.ndarray],
                   t0: float, t1: float, nsteps: int = 4000) -> float:
    """Integral of trace J(x(t)) over [t0, t1], composite Simpson rule.

    By the Abel-Jacobi-Liouville identity this equals log det of the
    fundamental matrix over the same interval, which gives an independent
    consistency check on a computed monodromy product.
    """
    t = t0 + 0.5 * (t1 - t0) / nsteps * np.arange(2 * nsteps + 1)
    Js = field.jac(np.asarray(x_of_t(t)))
    tr = np.trace(Js, axis1=-2, axis2=-1)
    h = (t1 - t0) / nsteps
    return float(h / 6.0 * (tr[0] + tr[-1] + 4.0 * np.sum(tr[1:-1:2])
                            + 2.0 * np.sum(tr[2:-1:2])))
