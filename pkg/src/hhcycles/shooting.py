"""Single shooting for periodic orbits, and cycle construction from transients.

Shooting solves the 5-unknown system

    G(X0, T) = phi(X0, T) - X0 = 0
    <X0 - a, f(a)> = 0                (Poincare hyperplane at the guess anchor a)

by damped Newton, with the sensitivity dphi/dX0 obtained from a coupled
variational pass.  It converges fast on stable cycles; for strongly unstable
cycles the forward flow amplifies roundoff and collocation / harmonic balance
must be used instead.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import integrate
from .errors import NoConvergence, NoOscillation, SingularJacobian
from .fields import VectorField
from .integrate import Trajectory


@dataclass(frozen=True)
class Cycle:
    """A periodic orbit in time-domain form."""

    period: float
    anchor_state: np.ndarray
    samples: Trajectory
    source: str = "shooting"  # shooting | collocation | harmonic-balance

    def v_extrema(self):
        V = self.samples.states[:, 0]
        return float(V.min()), float(V.max())


DEFAULT_FLOW_STEPS = 2000


def _sample_cycle(field: VectorField, x0, T: float, nsamples: int = 400) -> Trajectory:
    return integrate.integrate_rk4(field, x0, 0.0, T, T / nsamples)


def shoot(field: VectorField, guess: Cycle, tol: float = 1e-10,
          max_iter: int = 30, flow_steps: int = DEFAULT_FLOW_STEPS) -> Cycle:
    """Refine a guessed cycle by Newton on the return-map displacement."""
    if guess.period <= 0:
        raise ValueError("guess period must be positive")
    dim = field.dim
    a = np.array(guess.anchor_state, dtype=float)
    fa = field.f(a)
    x0 = a.copy()
    T = float(guess.period)

    def residual(x0, T):
        xT, M = integrate.flow_with_monodromy(field, x0, T, flow_steps)
        G = xT - x0
        phase = float(fa @ (x0 - a))
        return np.concatenate([G, [phase]]), xT, M

    r, xT, M = residual(x0, T)
    rn = np.linalg.norm(r, np.inf)
    for _ in range(max_iter):
        if rn < tol:
            break
        A = np.zeros((dim + 1, dim + 1))
        A[:dim, :dim] = M - np.eye(dim)
        A[:dim, dim] = field.f(xT)
        A[dim, :dim] = fa
        cond = np.linalg.cond(A)
        if not np.isfinite(cond) or cond > 1e14:
            raise SingularJacobian(
                f"shooting Newton matrix ill-conditioned (cond={cond:.3g})")
        delta = np.linalg.solve(A, -r)
        # damping: halve the step while the residual fails to decrease
        lam = 1.0
        for _ in range(8):
            x0_new = x0 + lam * delta[:dim]
            T_new = T + lam * delta[dim]
            if T_new > 0:
                try:
                    r_new, xT_new, M_new = residual(x0_new, T_new)
                except Exception:
                    lam *= 0.5
                    continue
                if np.linalg.norm(r_new, np.inf) < rn or lam < 1e-2:
                    break
            lam *= 0.5
        else:
            raise NoConvergence("shooting damping exhausted")
        x0, T, r, xT, M = x0_new, T_new, r_new, xT_new, M_new
        rn = np.linalg.norm(r, np.inf)
    else:
        raise NoConvergence(f"shooting did not reach tol (residual {rn:.3g})")
    samples = _sample_cycle(field, x0, T)
    return Cycle(period=T, anchor_state=x0, samples=samples, source="shooting")


def settle_transient(field: VectorField, settle_time: float = 300.0,
                     x_start=None, h: float = 0.01,
                     min_amplitude: float = 1.0) -> Cycle:
    """One-period cycle guess extracted from a settled transient.

    Integrates from x_start (or must be supplied by the caller for non-HH
    fields), then detects the period from upward crossings of the first state
    component through its late-time mean.  Raises NoOscillation if the
    trajectory has settled onto an equilibrium.
    """
    if x_start is None:
        raise ValueError("x_start required")
    traj = integrate.integrate_rk4(field, x_start, 0.0, settle_time, h)
    t = traj.times
    x = traj.states
    tail = t > 0.5 * settle_time
    V = x[:, 0]
    if V[tail].max() - V[tail].min() < min_amplitude:
        raise NoOscillation("transient settled onto an equilibrium")
    mean = 0.5 * (V[tail].max() + V[tail].min())
    up = np.where((V[:-1] < mean) & (V[1:] >= mean) & tail[1:])[0]
    if len(up) < 4:
        raise NoOscillation("too few oscillation periods in the settle window")
    # linear interpolation of the crossing times; average the last 3 periods
    tc = t[up] + (mean - V[up]) / (V[up + 1] - V[up]) * (t[up + 1] - t[up])
    periods = np.diff(tc[-4:])
    T = float(np.mean(periods))
    # anchor at the last crossing, re-integrate one period for the samples
    i0 = up[-2]
    samples = _sample_cycle(field, x[i0], T)
    return Cycle(period=T, anchor_state=x[i0].copy(), samples=samples,
                 source="shooting")
