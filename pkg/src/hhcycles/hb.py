"""Harmonic balance: truncated Fourier representation of cycles.

The nonlinearity's Fourier spectrum is never computed by quadrature of the
coefficient integrals; instead the candidate series is evaluated at 2n+1
equispaced phase nodes (trigonometric-Lagrange side), the vector field is
applied pointwise, and the leading 2K+1 Fourier coefficients are recovered by
discrete orthogonality.  Oversampling (n = oversample*K) keeps the product
terms from aliasing back onto the retained harmonics.

The algebraic system solved by Newton is

    omega * D xbar - Y_F(xbar) = 0,   omega = 2*pi/T,

per state variable, plus one phase-anchor row (B1 of the first variable = 0).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import NoConvergence, SingularJacobian
from .fields import VectorField


@dataclass(frozen=True)
class FourierCycle:
    """Per-variable truncated Fourier coefficients (A0, A1, B1, ..., AK, BK)."""

    K: int
    period: float
    coeffs: np.ndarray  # (dim, 2K+1)

    def __post_init__(self):
        if self.coeffs.shape[1] != 2 * self.K + 1:
            raise ValueError("coefficient length must be 2K+1")
        if self.period <= 0:
            raise ValueError("period must be positive")

    @property
    def dim(self) -> int:
        return self.coeffs.shape[0]

    @property
    def omega(self) -> float:
        return 2.0 * np.pi / self.period


@dataclass(frozen=True)
class SpectralOperators:
    """Synthesis/analysis matrices and the differentiation operator.

    synthesis rows evaluate (1, cos, sin, ..., cos K, sin K) at the nodes;
    analysis recovers the leading coefficients by discrete orthogonality;
    D applies d/dtheta in coefficient space (block k is [[0, k], [-k, 0]]).
    """

    K: int
    n: int
    nodes: np.ndarray      # (2n+1,) phases in [0, 2pi)
    synthesis: np.ndarray  # (2n+1, 2K+1)
    analysis: np.ndarray   # (2K+1, 2n+1)
    D: np.ndarray          # (2K+1, 2K+1)


def basis_matrix(theta: np.ndarray, K: int) -> np.ndarray:
    """Fourier basis values (1, cos k theta, sin k theta) at given phases."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    cols = [np.ones_like(theta)]
    for k in range(1, K + 1):
        cols.append(np.cos(k * theta))
        cols.append(np.sin(k * theta))
    return np.stack(cols, axis=1)


def diff_operator(K: int) -> np.ndarray:
    D = np.zeros((2 * K + 1, 2 * K + 1))
    for k in range(1, K + 1):
        D[2 * k - 1, 2 * k] = k
        D[2 * k, 2 * k - 1] = -k
    return D


DEFAULT_OVERSAMPLE = 4


def build_operators(K: int, oversample: int = DEFAULT_OVERSAMPLE) -> SpectralOperators:
    if K < 1 or oversample < 1:
        raise ValueError("K and oversample must be >= 1")
    n = oversample * K
    m = 2 * n + 1
    nodes = 2.0 * np.pi * np.arange(m) / m
    synthesis = basis_matrix(nodes, K)
    analysis = (2.0 / m) * synthesis.T.copy()
    analysis[0] *= 0.5
    return SpectralOperators(K=K, n=n, nodes=nodes, synthesis=synthesis,
                             analysis=analysis, D=diff_operator(K))


def evaluate_series(xbar: FourierCycle, t) -> np.ndarray:
    """Pointwise synthesis at times t (scalar or array); exactly T-periodic."""
    theta = 2.0 * np.pi * np.atleast_1d(np.asarray(t, dtype=float)) / xbar.period
    vals = basis_matrix(theta, xbar.K) @ xbar.coeffs.T
    return vals[0] if np.isscalar(t) or np.ndim(t) == 0 else vals


def node_states(xbar: FourierCycle, ops: SpectralOperators) -> np.ndarray:
    """States at the 2n+1 phase nodes, shape (2n+1, dim)."""
    return ops.synthesis @ xbar.coeffs.T


def nonlinear_spectrum(xbar: FourierCycle, field: VectorField,
                       ops: SpectralOperators) -> np.ndarray:
    """Leading Fourier coefficients of f along the candidate cycle, (dim, 2K+1)."""
    if ops.K != xbar.K:
        raise ValueError("operator/coefficient harmonic count mismatch")
    states = node_states(xbar, ops)
    YL = field.f(states)             # Lagrange-side components: f at the nodes
    return (ops.analysis @ YL).T


def hb_residual(xbar: FourierCycle, field: VectorField,
                ops: SpectralOperators, phase_var: int = 0) -> np.ndarray:
    """Stacked residual omega*D xbar - Y_F plus the phase-anchor row."""
    YF = nonlinear_spectrum(xbar, field, ops)
    res = xbar.omega * (xbar.coeffs @ ops.D.T) - YF
    phase = xbar.coeffs[phase_var, 2] if xbar.K >= 1 else 0.0
    return np.concatenate([res.ravel(), [phase]])


def _pack(coeffs: np.ndarray, T: float) -> np.ndarray:
    return np.concatenate([coeffs.ravel(), [T]])


def _unpack(z: np.ndarray, dim: int, K: int):
    return z[:-1].reshape(dim, 2 * K + 1), float(z[-1])


def rotate_phase(xbar: FourierCycle, phase_var: int = 0) -> FourierCycle:
    """Time-shift the series so that B1 of phase_var vanishes (A1 >= 0)."""
    A1 = xbar.coeffs[phase_var, 1]
    B1 = xbar.coeffs[phase_var, 2]
    delta = np.arctan2(B1, A1)  # shift theta -> theta + delta kills B1
    coeffs = xbar.coeffs.copy()
    for k in range(1, xbar.K + 1):
        c, s = np.cos(k * delta), np.sin(k * delta)
        A = xbar.coeffs[:, 2 * k - 1]
        B = xbar.coeffs[:, 2 * k]
        coeffs[:, 2 * k - 1] = A * c + B * s
        coeffs[:, 2 * k] = -A * s + B * c
    return replace(xbar, coeffs=coeffs)


def _newton(residual_fn, z0, tol, max_iter, fd_eps=1e-7, cond_limit=1e14):
    """Damped Newton with forward-difference Jacobian on a dense system."""
    z = np.array(z0, dtype=float)
    r = residual_fn(z)
    rn = np.linalg.norm(r, np.inf)
    stall = 0
    for _ in range(max_iter):
        if rn < tol:
            return z, rn
        m = len(z)
        J = np.empty((len(r), m))
        scale = np.maximum(np.abs(z), 1.0) * fd_eps
        for j in range(m):
            zp = z.copy()
            zp[j] += scale[j]
            J[:, j] = (residual_fn(zp) - r) / scale[j]
        cond = np.linalg.cond(J)
        if not np.isfinite(cond) or cond > cond_limit:
            raise SingularJacobian(f"HB Newton matrix cond={cond:.3g}")
        delta = np.linalg.solve(J, -r)
        lam = 1.0
        for _ in range(8):
            z_new = z + lam * delta
            r_new = residual_fn(z_new)
            if np.all(np.isfinite(r_new)) and (
                    np.linalg.norm(r_new, np.inf) < rn or lam <= 1.0 / 64):
                break
            lam *= 0.5
        else:
            raise NoConvergence("HB damping exhausted")
        rn_new = np.linalg.norm(r_new, np.inf)
        stall = stall + 1 if rn_new >= rn else 0
        if stall >= 3:
            raise NoConvergence(
                f"HB Newton stopped improving (residual {rn_new:.3g})")
        z, r, rn = z_new, r_new, rn_new
    if rn < tol:
        return z, rn
    raise NoConvergence(f"HB Newton stalled at residual {rn:.3g}")


def solve_hb(init: FourierCycle, field: VectorField, ops: SpectralOperators,
             tol: float = 1e-10, max_iter: int = 40,
             phase_var: int = 0) -> FourierCycle:
    """Newton solve of the HB system over (all coefficients, T)."""
    init = rotate_phase(init, phase_var)
    dim, K = init.dim, init.K

    def residual(z):
        coeffs, T = _unpack(z, dim, K)
        if T <= 0:
            return np.full(dim * (2 * K + 1) + 1, np.inf)
        xb = FourierCycle(K=K, period=T, coeffs=coeffs)
        return hb_residual(xb, field, ops, phase_var)

    z, _ = _newton(residual, _pack(init.coeffs, init.period), tol, max_iter)
    coeffs, T = _unpack(z, dim, K)
    return FourierCycle(K=K, period=T, coeffs=coeffs)


def solve_hb_fixed_period(init: FourierCycle, I_guess: float, field_at,
                          ops: SpectralOperators, tol: float = 1e-10,
                          max_iter: int = 40, phase_var: int = 0):
    """HB solve with T frozen and the continuation parameter unknown.

    field_at(I) must return the VectorField at parameter I.  Used to round
    turning points where dI/dT is finite but dT/dI blows up.  Returns
    (FourierCycle, I).
    """
    init = rotate_phase(init, phase_var)
    dim, K = init.dim, init.K
    T = init.period

    def residual(z):
        coeffs = z[:-1].reshape(dim, 2 * K + 1)
        I = float(z[-1])
        xb = FourierCycle(K=K, period=T, coeffs=coeffs)
        return hb_residual(xb, field_at(I), ops, phase_var)

    z, _ = _newton(residual, np.concatenate([init.coeffs.ravel(), [I_guess]]),
                   tol, max_iter)
    coeffs = z[:-1].reshape(dim, 2 * K + 1)
    return FourierCycle(K=K, period=T, coeffs=coeffs), float(z[-1])


def choose_harmonics(xbar: FourierCycle, drop_tol: float = 1e-8) -> int:
    """Smallest K' whose discarded-tail max ratio is below drop_tol."""
    dim, K = xbar.dim, xbar.K
    full = np.abs(xbar.coeffs)
    norms = np.max(full, axis=1)
    norms[norms == 0.0] = 1.0
    for Kp in range(1, K):
        tail = full[:, 2 * Kp + 1:]
        if np.max(np.max(tail, axis=1) / norms) < drop_tol:
            return Kp
    return K


def resize(xbar: FourierCycle, K_new: int) -> FourierCycle:
    """Pad with zeros or truncate the harmonic count."""
    dim = xbar.dim
    coeffs = np.zeros((dim, 2 * K_new + 1))
    ncopy = min(2 * xbar.K + 1, 2 * K_new + 1)
    coeffs[:, :ncopy] = xbar.coeffs[:, :ncopy]
    return FourierCycle(K=K_new, period=xbar.period, coeffs=coeffs)


def from_trajectory(traj_states: np.ndarray, period: float, K: int) -> FourierCycle:
    """Least-squares Fourier fit of one-period samples (first=last allowed)."""
    m = len(traj_states)
    theta = 2.0 * np.pi * np.arange(m) / m
    B = basis_matrix(theta, K)
    coeffs, *_ = np.linalg.lstsq(B, traj_states, rcond=None)
    return FourierCycle(K=K, period=period, coeffs=coeffs.T)


def gibbs_ripple(xbar: FourierCycle, nsamples: int = 2048) -> float:
    """Crude ripple metric: total variation excess of V over its ideal 2*range.

    A clean single-pulse cycle has total variation ~ 2*(Vmax-Vmin); Gibbs
    oscillations inflate it.  Returned value is the relative excess.
    """
    t = np.linspace(0.0, xbar.period, nsamples, endpoint=False)
    V = evaluate_series(xbar, t)[:, 0]
    tv = np.sum(np.abs(np.diff(V)))
    swing = V.max() - V.min()
    if swing == 0:
        return 0.0
    return float(tv / (2.0 * swing) - 1.0)
