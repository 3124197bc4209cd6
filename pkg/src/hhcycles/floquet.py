"""Floquet multipliers of periodic orbits and unit-circle crossing detection.

The monodromy matrix is obtained from the variational flow around one period
(module integrate).  When the cycle is available as a Fourier series or a
collocation solution the variational system is driven by the closed-form
x(t), which keeps the multiplier accuracy at the level of the variational
integrator alone.  Strongly unstable cycles (multiplier magnitudes in the
thousands) are handled by a period-subdivided product accumulated through
successive QR factorizations, so the small multipliers are not washed out
by the ill-conditioned explicit product.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple

import numpy as np

from . import integrate, model
from .collocation import CollocationSolution
from .errors import NoSignChange, TrackingLost
from .fields import VectorField, hh_field
from .hb import FourierCycle, evaluate_series
from .shooting import Cycle

NEAR_THRESHOLD = 0.05
LOW_CONFIDENCE_TRIVIAL = 1e-2


@dataclass(frozen=True)
class FloquetSpectrum:
    """Monodromy eigenvalues with the trivial multiplier singled out.

    multipliers holds the nontrivial eigenvalues sorted by modulus
    descending; the trivial one (the eigenvalue designated as the unit
    multiplier along the flow direction) is kept separately together with
    its deviation from 1.
    """

    multipliers: np.ndarray   # (dim-1,) complex, |.| descending
    trivial: complex
    trivial_error: float
    stability: str            # "stable" | "unstable"
    flags: frozenset

    @property
    def low_confidence(self) -> bool:
        return self.trivial_error > LOW_CONFIDENCE_TRIVIAL

    def all_multipliers(self) -> np.ndarray:
        """Trivial first, then the nontrivial ones in stored order."""
        return np.concatenate([[self.trivial], self.multipliers])


def _monodromy_matrix(cycle, field: VectorField, nsteps: int,
                      nsub: int) -> Tuple[np.ndarray, np.ndarray]:
    """Chunk monodromies over nsub equal subintervals, plus x(0).

    Returns (chunks, x0) where chunks[j] maps variations at t_j to t_{j+1}.
    """
    if isinstance(cycle, FourierCycle):
        T = cycle.period
        x_of_t = lambda t: evaluate_series(cycle, t)
        x0 = evaluate_series(cycle, 0.0)
    elif isinstance(cycle, CollocationSolution):
        T = cycle.period
        x_of_t = lambda t: cycle.evaluate_time(t)
        x0 = cycle.evaluate_time(0.0)
    elif isinstance(cycle, Cycle):
        T = cycle.period
        x_of_t = None
        x0 = np.asarray(cycle.anchor_state, dtype=float)
    else:
        raise TypeError(f"unsupported cycle type {type(cycle)!r}")

    per_chunk = max(1, nsteps // nsub)
    chunks = []
    if x_of_t is not None:
        edges = np.linspace(0.0, T, nsub + 1)
        for j in range(nsub):
            chunks.append(integrate.variational_along(
                field, x_of_t, edges[j], edges[j + 1], per_chunk))
    else:
        # trajectory-only cycle: coupled state+variational pass, restarting
        # the fundamental matrix at each chunk boundary
        x = x0.copy()
        h = T / nsub
        for _ in range(nsub):
            x, Y = integrate.flow_with_monodromy(field, x, h, per_chunk)
            chunks.append(Y)
    return chunks, x0


def _stabilized_product(chunks) -> np.ndarray:
    """Product of the chunk matrices via successive QR accumulation."""
    dim = chunks[0].shape[0]
    Q = np.eye(dim)
    R_acc = np.eye(dim)
    for M in chunks:
        Q, R = np.linalg.qr(M @ Q)
        R_acc = R @ R_acc
    return Q @ R_acc


def _designate_trivial(mu: np.ndarray, vecs: np.ndarray,
                       flow_dir: np.ndarray) -> int:
    """Index of the trivial multiplier: closest to 1, ties broken by
    eigenvector alignment with the flow direction."""
    dist = np.abs(mu - 1.0)
    order = np.argsort(dist)
    best = order[0]
    # a fold puts a second multiplier near +1; use the eigenvector then
    contenders = [i for i in order if dist[i] < dist[best] + 0.02]
    if len(contenders) > 1:
        fhat = flow_dir / np.linalg.norm(flow_dir)
        align = [abs(np.vdot(vecs[:, i], fhat)) / np.linalg.norm(vecs[:, i])
                 for i in contenders]
        best = contenders[int(np.argmax(align))]
    return int(best)


DEFAULT_SPECTRUM_STEPS = 4000


def spectrum(cycle, field: Optional[VectorField] = None, I: float = 0.0,
             p: model.HHParams = model.DEFAULT_PARAMS,
             nsteps: int = DEFAULT_SPECTRUM_STEPS,
             nsub: int = 16) -> FloquetSpectrum:
    """Floquet spectrum of a converged cycle.

    Accepts a time-domain Cycle, a FourierCycle or a CollocationSolution.
    When no field is given the Hodgkin-Huxley field at stimulus I is used.
    The eigenvalues are first estimated from the plain chunk product; if any
    magnitude exceeds 100 the QR-accumulated product is used instead.
    """
    if field is None:
        field = hh_field(p, I)
    chunks, x0 = _monodromy_matrix(cycle, field, nsteps, nsub)
    M = chunks[0]
    for C in chunks[1:]:
        M = C @ M
    mu, vecs = np.linalg.eig(M)
    if np.max(np.abs(mu)) > 100.0:
        M = _stabilized_product(chunks)
        mu, vecs = np.linalg.eig(M)
    k = _designate_trivial(mu, vecs, field.f(x0))
    trivial = complex(mu[k])
    rest = np.delete(mu, k)
    rest = rest[np.argsort(-np.abs(rest))]

    flags = set()
    for m in rest:
        if abs(m - 1.0) < NEAR_THRESHOLD:
            flags.add("near_fold")
        if abs(m + 1.0) < NEAR_THRESHOLD:
            flags.add("near_pd")
        if 0.95 <= abs(m) <= 1.05 and abs(m.imag) > 1e-8:
            flags.add("near_torus")
    stability = "stable" if np.all(np.abs(rest) < 1.0) else "unstable"
    return FloquetSpectrum(multipliers=rest, trivial=trivial,
                           trivial_error=float(abs(trivial - 1.0)),
                           stability=stability, flags=frozenset(flags))


def _tracked_value(spec: FloquetSpectrum, target: float,
                   previous: Optional[complex],
                   threshold: float = 0.5) -> complex:
    """Pick the nontrivial multiplier to follow, by continuity if possible."""
    mus = spec.multipliers
    if previous is None:
        return complex(mus[int(np.argmin(np.abs(mus - target)))])
    d = np.abs(mus - previous)
    j = int(np.argmin(d))
    if d[j] > threshold * max(1.0, abs(previous)):
        raise TrackingLost(
            f"multiplier moved {d[j]:.3g} between consecutive spectra")
    return complex(mus[j])


def detect_crossing(points: Sequence[Tuple[float, FloquetSpectrum]],
                    kind: str,
                    spectrum_at: Optional[Callable[[float], FloquetSpectrum]] = None,
                    tol: float = 1e-6, max_iter: int = 60) -> float:
    """Parameter value where the tracked multiplier crosses +1 or -1.

    points is a monotone-in-I sequence of (I, FloquetSpectrum).  The signed
    distance g(I) = Re(mu_tracked) - target must change sign between two
    consecutive points; the root is then refined by secant steps, evaluating
    fresh spectra through spectrum_at when provided (required for |dI| below
    the sampling resolution of points).
    """
    if kind not in ("fold", "pd"):
        raise ValueError("kind must be 'fold' or 'pd'")
    target = 1.0 if kind == "fold" else -1.0
    if len(points) < 2:
        raise NoSignChange("need at least two sampled spectra")

    # per-point candidate: the real multiplier nearest the target.  Tracking
    # from the first point alone fails when the crossing multiplier starts
    # far from the target while another one idles nearby.
    def candidate(spec):
        mus = spec.multipliers
        real = mus[np.abs(mus.imag) < 1e-6 * np.maximum(1.0, np.abs(mus))]
        if len(real) == 0:
            return None
        return complex(real[int(np.argmin(np.abs(real - target)))])

    tracked = [(I, candidate(spec)) for I, spec in points]
    tracked = [(I, m) for I, m in tracked if m is not None]
    g = [m.real - target for _, m in tracked]
    # among all sign changes keep the tightest one; eigenvalue collisions
    # (real pairs merging into complex) can fake a distant sign flip
    bracket = None
    best = np.inf
    for a in range(len(g) - 1):
        if g[a] == 0.0:
            return tracked[a][0]
        if g[a] * g[a + 1] < 0.0 and abs(g[a]) + abs(g[a + 1]) < best:
            best = abs(g[a]) + abs(g[a + 1])
            bracket = a
    if bracket is None:
        raise NoSignChange(f"no {kind} crossing in the sampled range")

    (Ia, ma), (Ib, mb) = tracked[bracket], tracked[bracket + 1]
    ga, gb = ma.real - target, mb.real - target
    if spectrum_at is None:
        # secant estimate from the sampled data alone
        return Ib - gb * (Ib - Ia) / (gb - ga)
    prev = mb
    # the crossing multiplier may move fast across the bracket; scale the
    # continuity threshold to the observed endpoint spread
    thr = max(0.5, 2.0 * abs(mb - ma))
    def finish(I_out):
        if abs(prev.real - target) > 0.5:
            raise TrackingLost(
                f"refinement converged on a multiplier at {prev:.4g}, "
                f"far from the target {target:+g}")
        return I_out

    for _ in range(max_iter):
        Ic = Ib - gb * (Ib - Ia) / (gb - ga)
        if abs(Ic - Ib) < tol or abs(Ic - Ia) < tol:
            return finish(Ic)
        mc = _tracked_value(spectrum_at(Ic), target, prev, thr)
        prev = mc
        gc = mc.real - target
        if gc == 0.0:
            return finish(Ic)
        # keep the bracket if the new point preserves a sign change
        if ga * gc < 0.0:
            Ib, gb = Ic, gc
        else:
            Ia, ga = Ic, gc
        if abs(Ib - Ia) < tol:
            return finish(0.5 * (Ia + Ib))
    return finish(0.5 * (Ia + Ib))
