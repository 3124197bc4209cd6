"""Periodic BVP solver: piecewise-cubic collocation at 3 Lobatto points.

The cycle is scaled to tau in [0,1] (u' = T f(u)) and represented per
subinterval by the collocation cubic whose derivative is the quadratic
interpolating T*f at the Lobatto points {0, 1/2, 1}.  Eliminating the
polynomial gives the classical Hermite-Simpson equations in the endpoint and
midpoint values, which is what Newton solves; periodicity is exact because the
first and last endpoint are the same unknown.  Mesh refinement is driven by
the sampled interior residual.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (DegenerateCycle, MeshTooCoarse, NoConvergence,
                     SingularJacobian)
from .fields import VectorField
from .integrate import Trajectory
from .shooting import Cycle

LOBATTO_RHO = (0.0, 0.5, 1.0)


@dataclass(frozen=True)
class Mesh:
    breakpoints: np.ndarray  # (N+1,) increasing, endpoints 0 and 1
    rho: tuple = LOBATTO_RHO

    def __post_init__(self):
        b = self.breakpoints
        if b[0] != 0.0 or b[-1] != 1.0 or np.any(np.diff(b) <= 0):
            raise ValueError("breakpoints must increase from 0 to 1")

    @property
    def N(self) -> int:
        return len(self.breakpoints) - 1

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.breakpoints)


@dataclass(frozen=True)
class CollocationSolution:
    """Converged collocation cycle: mesh values plus the period."""

    mesh: Mesh
    y: np.ndarray    # (N, dim) breakpoint values, wraps periodically
    mid: np.ndarray  # (N, dim) midpoint values
    period: float
    field: VectorField

    @property
    def dim(self) -> int:
        return self.y.shape[1]

    def _endpoint(self, i):
        return self.y[(i + 1) % self.mesh.N]

    def evaluate(self, tau):
        """Evaluate the collocation cubic at tau in [0,1] (scalar or array)."""
        scalar = np.ndim(tau) == 0
        tau = np.atleast_1d(np.asarray(tau, dtype=float)) % 1.0
        b = self.mesh.breakpoints
        idx = np.clip(np.searchsorted(b, tau, side="right") - 1, 0, self.mesh.N - 1)
        h = (b[idx + 1] - b[idx])
        s = ((tau - b[idx]) / h)[:, None]
        f_y = self.field.f(self.y)
        f_m = self.field.f(self.mid)
        f0 = f_y[idx]
        fm = f_m[idx]
        f1 = f_y[(idx + 1) % self.mesh.N]
        hT = (h * self.period)[:, None]
        out = (self.y[idx]
               + hT * (f0 * (2 * s**3 / 3 - 1.5 * s**2 + s)
                       + fm * (-4 * s**3 / 3 + 2 * s**2)
                       + f1 * (2 * s**3 / 3 - 0.5 * s**2)))
        return out[0] if scalar else out

    def evaluate_time(self, t):
        return self.evaluate(np.asarray(t, dtype=float) / self.period)

    def to_cycle(self, nsamples: int = 800) -> Cycle:
        tau = np.linspace(0.0, 1.0, nsamples + 1)
        states = self.evaluate(tau)
        states[-1] = states[0]
        traj = Trajectory(tau * self.period, states)
        return Cycle(period=self.period, anchor_state=states[0].copy(),
                     samples=traj, source="collocation")

    def residual_profile(self, nsub: int = 10) -> np.ndarray:
        """Max relative interior residual ||P'/T - f(P)||/(1+||f||) per subinterval."""
        N = self.mesh.N
        h = self.mesh.widths[:, None, None]
        sigma = np.linspace(0.0, 1.0, nsub + 2)[1:-1]
        s = sigma[None, :, None]
        f0 = self.field.f(self.y)[:, None, :]
        fm = self.field.f(self.mid)[:, None, :]
        f1 = np.roll(self.field.f(self.y), -1, axis=0)[:, None, :]
        hT = h * self.period
        P = (self.y[:, None, :]
             + hT * (f0 * (2 * s**3 / 3 - 1.5 * s**2 + s)
                     + fm * (-4 * s**3 / 3 + 2 * s**2)
                     + f1 * (2 * s**3 / 3 - 0.5 * s**2)))
        q = (f0 * (2 * (s - 0.5) * (s - 1))
             + fm * (-4 * s * (s - 1))
             + f1 * (2 * s * (s - 0.5)))
        fP = self.field.f(P.reshape(-1, self.dim)).reshape(P.shape)
        scale = 1.0 + np.max(np.abs(fP), axis=(1, 2), keepdims=True)
        return np.max(np.abs(q - fP) / scale, axis=(1, 2))


def collocation_system(sol: CollocationSolution, phase_ref=None) -> np.ndarray:
    """Residual stack: Hermite-Simpson defects, periodicity, phase row.

    Periodicity is identically zero under the shared-endpoint layout but is
    included so the stack matches the documented contract.
    """
    r1, r2 = _defects(sol.field, sol.mesh, sol.y, sol.mid, sol.period)
    periodicity = np.zeros(sol.dim)
    phase = 0.0 if phase_ref is None else _phase_residual(
        sol.mesh, sol.y, sol.mid, phase_ref)
    return np.concatenate([r1.ravel(), r2.ravel(), periodicity, [phase]])


def _defects(field, mesh, y, mid, T):
    N = mesh.N
    h = mesh.widths
    y1 = np.roll(y, -1, axis=0)
    fy = field.f(y)
    fy1 = np.roll(fy, -1, axis=0)
    fm = field.f(mid)
    hT = (h * T)[:, None]
    r1 = y1 - y - hT / 6.0 * (fy + 4.0 * fm + fy1)
    r2 = mid - 0.5 * (y + y1) - hT / 8.0 * (fy - fy1)
    return r1, r2


class PhaseReference:
    """Integral phase condition data: previous solution on the current mesh."""

    def __init__(self, mesh: Mesh, y_ref, mid_ref, dy_ref, dmid_ref):
        self.mesh = mesh
        self.y = y_ref
        self.mid = mid_ref
        self.dy = dy_ref      # tau-derivatives T*f(ref) at breakpoints
        self.dmid = dmid_ref

    @classmethod
    def from_solution(cls, sol: CollocationSolution, mesh: Mesh):
        tau_b = mesh.breakpoints[:-1]
        tau_m = 0.5 * (mesh.breakpoints[:-1] + mesh.breakpoints[1:])
        y = sol.evaluate(tau_b)
        m = sol.evaluate(tau_m)
        return cls(mesh, y, m, sol.period * sol.field.f(y),
                   sol.period * sol.field.f(m))

    def weights(self):
        """Simpson weights pairing each unknown with <., dref>."""
        h = self.mesh.widths
        N = self.mesh.N
        wy = np.zeros(N)
        np.add.at(wy, np.arange(N), h / 6.0)
        np.add.at(wy, (np.arange(N) + 1) % N, h / 6.0)
        wm = 4.0 * h / 6.0
        return wy, wm


def _phase_residual(mesh, y, mid, ref: PhaseReference):
    wy, wm = ref.weights()
    return float(np.sum(wy[:, None] * (y - ref.y) * ref.dy)
                 + np.sum(wm[:, None] * (mid - ref.mid) * ref.dmid))


def _newton_collocation(field, mesh, y, mid, T, ref, tol, max_iter,
                        fixed_period=False, field_at=None, I=0.0):
    """Damped Newton on the Hermite-Simpson system.

    With fixed_period=True the period column is replaced by the parameter
    derivative dF/dI (field_at(I) required) and I becomes the last unknown.
    """
    N, dim = mesh.N, y.shape[1]
    nun = 2 * N * dim + 1
    h = mesh.widths

    def get_field(Icur):
        return field_at(Icur) if fixed_period else field

    def residual(y, mid, T, I):
        fld = get_field(I)
        r1, r2 = _defects(fld, mesh, y, mid, T)
        ph = _phase_residual(mesh, y, mid, ref)
        return np.concatenate([np.stack([r1, r2], axis=1).ravel(), [ph]])

    r = residual(y, mid, T, I)
    rn = np.linalg.norm(r, np.inf)
    for _ in range(max_iter):
        if rn < tol:
            return y, mid, T, I, rn
        fld = get_field(I)
        fy = fld.f(y)
        fm = fld.f(mid)
        fy1 = np.roll(fy, -1, axis=0)
        Jy = fld.jac(y)
        Jm = fld.jac(mid)
        Jy1 = np.roll(Jy, -1, axis=0)
        rows, cols, vals = [], [], []
        Id = np.eye(dim)
        hT = (h * T)[:, None, None]
        i_arr = np.arange(N)
        rb1 = (2 * i_arr) * dim
        rb2 = (2 * i_arr + 1) * dim
        cy0 = (2 * i_arr) * dim
        cm = (2 * i_arr + 1) * dim
        cy1 = (2 * ((i_arr + 1) % N)) * dim
        rr, cc = np.meshgrid(np.arange(dim), np.arange(dim), indexing="ij")

        def add_blocks(rbase, cbase, B):
            # B has shape (N, dim, dim)
            rows.append((rbase[:, None, None] + rr[None]).ravel())
            cols.append((cbase[:, None, None] + cc[None]).ravel())
            vals.append(B.ravel())

        add_blocks(rb1, cy0, -Id - hT / 6.0 * Jy)
        add_blocks(rb1, cm, -hT * 2.0 / 3.0 * Jm)
        add_blocks(rb1, cy1, Id - hT / 6.0 * Jy1)
        add_blocks(rb2, cy0, -0.5 * Id - hT / 8.0 * Jy)
        add_blocks(rb2, cm, Id + 0.0 * Jm)
        add_blocks(rb2, cy1, -0.5 * Id + hT / 8.0 * Jy1)

        # last column: d/dT (natural) or d/dI (fixed period)
        if fixed_period:
            dI = 1e-6 * max(1.0, abs(I))
            rp = residual(y, mid, T, I + dI)
            last = (rp - r) / dI
        else:
            dr1 = -(h[:, None] / 6.0) * (fy + 4.0 * fm + fy1)
            dr2 = -(h[:, None] / 8.0) * (fy - fy1)
            last = np.concatenate(
                [np.stack([dr1, dr2], axis=1).ravel(), [0.0]])
        rows.append(np.arange(nun))
        cols.append(np.full(nun, nun - 1))
        vals.append(last)

        # phase row
        wy, wm = ref.weights()
        ph_row = np.zeros(nun)
        blocks = ph_row[:-1].reshape(2 * N, dim)
        blocks[0::2] = wy[:, None] * ref.dy
        blocks[1::2] = wm[:, None] * ref.dmid
        rows.append(np.full(nun - 1, nun - 1))
        cols.append(np.arange(nun - 1))
        vals.append(ph_row[:-1])
        rows.append(np.array([nun - 1]))
        cols.append(np.array([nun - 1]))
        vals.append(np.array([ph_row[-1] + (0.0 if not fixed_period else 0.0)]))

        A = sp.coo_matrix(
            (np.concatenate(vals),
             (np.concatenate(rows), np.concatenate(cols))),
            shape=(nun, nun)).tocsc()
        try:
            lu = spla.splu(A)
        except RuntimeError as exc:
            raise SingularJacobian(f"collocation Newton matrix singular: {exc}")
        delta = lu.solve(-r)
        if not np.all(np.isfinite(delta)):
            raise SingularJacobian("collocation Newton step not finite")

        lam = 1.0
        for _ in range(8):
            zy = y + lam * delta[:-1].reshape(2 * N, dim)[0::2]
            zm = mid + lam * delta[:-1].reshape(2 * N, dim)[1::2]
            if fixed_period:
                Tn, In = T, I + lam * delta[-1]
            else:
                Tn, In = T + lam * delta[-1], I
            if Tn > 0:
                r_new = residual(zy, zm, Tn, In)
                if np.all(np.isfinite(r_new)) and (
                        np.linalg.norm(r_new, np.inf) < rn or lam <= 1.0 / 64):
                    break
            lam *= 0.5
        else:
            raise NoConvergence("collocation damping exhausted")
        y, mid, T, I, r = zy, zm, Tn, In, r_new
        rn = np.linalg.norm(r, np.inf)
    if rn < tol:
        return y, mid, T, I, rn
    raise NoConvergence(f"collocation Newton stalled at residual {rn:.3g}")


def refine_mesh(mesh: Mesh, residual_profile: np.ndarray,
                max_N: int = 2000, target: float | None = None) -> Mesh:
    """Split every subinterval whose residual exceeds half the maximum.

    With a target tolerance, subintervals above it are instead split into
    ceil((res/target)^(1/4)) pieces (capped at 16), equidistributing the
    order-4 residual so refinement reaches the target in a few rounds.
    """
    rmax = float(np.max(residual_profile))
    if target is None:
        pieces = np.where(residual_profile > 0.5 * rmax, 2, 1)
    else:
        pieces = np.ones(mesh.N, dtype=int)
        above = residual_profile > target
        pieces[above] = np.clip(
            np.ceil((residual_profile[above] / target) ** 0.25).astype(int),
            2, 16)
    extra = int(np.sum(pieces - 1))
    if mesh.N + extra > max_N:
        # scale the split counts down to fit the cap, biggest residuals first
        budget = max_N - mesh.N
        if budget <= 0:
            raise MeshTooCoarse(
                f"refinement would exceed {max_N} subintervals")
        order = np.argsort(-residual_profile)
        scaled = np.ones(mesh.N, dtype=int)
        for i in order:
            want = pieces[i] - 1
            take = min(want, budget)
            scaled[i] = 1 + take
            budget -= take
            if budget == 0:
                break
        pieces = scaled
    pts = [mesh.breakpoints[0]]
    for i in range(mesh.N):
        for j in range(1, pieces[i]):
            pts.append(mesh.breakpoints[i]
                       + (mesh.breakpoints[i + 1] - mesh.breakpoints[i])
                       * j / pieces[i])
        pts.append(mesh.breakpoints[i + 1])
    return Mesh(np.array(sorted(set(pts))))


def _initial_data(init, field, mesh: Mesh):
    """Resample an initial guess (Cycle, FourierCycle or callable) onto a mesh."""
    from .hb import FourierCycle, evaluate_series

    tau_b = mesh.breakpoints[:-1]
    tau_m = 0.5 * (mesh.breakpoints[:-1] + mesh.breakpoints[1:])
    if isinstance(init, Cycle):
        T = init.period
        t = init.samples.times - init.samples.times[0]
        states = init.samples.states

        def interp(tau):
            tt = tau * T
            return np.stack(
                [np.interp(tt, t, states[:, j]) for j in range(states.shape[1])],
                axis=-1)
        return interp(tau_b), interp(tau_m), T
    if isinstance(init, FourierCycle):
        T = init.period
        return (evaluate_series(init, tau_b * T),
                evaluate_series(init, tau_m * T), T)
    if isinstance(init, CollocationSolution):
        return init.evaluate(tau_b), init.evaluate(tau_m), init.period
    raise TypeError(f"unsupported initial guess {type(init)!r}")


def solve_bvp(field: VectorField, init, tol: float = 1e-8,
              N: int = 100, max_N: int = 2000, newton_tol: float = 1e-11,
              max_iter: int = 30, max_refinements: int = 8,
              mesh: Mesh | None = None) -> CollocationSolution:
    """Solve the periodic BVP with residual-driven mesh refinement.

    tol bounds the sampled interior residual ||P'/T - f(P)|| everywhere;
    newton_tol is the algebraic stopping tolerance for the discrete system.
    """
    if mesh is None:
        mesh = Mesh(np.linspace(0.0, 1.0, N + 1))
    y, mid, T = _initial_data(init, field, mesh)
    speeds = np.max(np.abs(field.f(y)))
    if speeds * T < 1e-8:
        raise DegenerateCycle("initial guess has no motion along the orbit")
    ref = PhaseReference(mesh, y, mid, T * field.f(y), T * field.f(mid))
    for _ in range(max_refinements + 1):
        y, mid, T, _, _ = _newton_collocation(
            field, mesh, y, mid, T, ref, newton_tol, max_iter)
        sol = CollocationSolution(mesh=mesh, y=y, mid=mid, period=T, field=field)
        prof = sol.residual_profile()
        if np.max(prof) < tol:
            return sol
        mesh = refine_mesh(mesh, prof, max_N, target=0.25 * tol)
        y, mid, T = _initial_data(sol, field, mesh)
        ref = PhaseReference.from_solution(sol, mesh)
    if np.max(prof) < tol:
        return sol
    raise MeshTooCoarse(
        f"residual {np.max(prof):.3g} above {tol:.3g} after refinement cap")


def solve_bvp_fixed_period(field_at, init, I_guess: float,
                           newton_tol: float = 1e-11, max_iter: int = 30):
    """Re-solve at frozen period with the parameter I as unknown.

    The mesh of the initial CollocationSolution is reused (no refinement);
    used for rounding turning points during continuation.  Returns
    (CollocationSolution, I).
    """
    if not isinstance(init, CollocationSolution):
        raise TypeError("fixed-period solve needs a CollocationSolution seed")
    mesh = init.mesh
    y, mid, T = init.y.copy(), init.mid.copy(), init.period
    ref = PhaseReference.from_solution(init, mesh)
    y, mid, T, I, _ = _newton_collocation(
        init.field, mesh, y, mid, T, ref, newton_tol, max_iter,
        fixed_period=True, field_at=field_at, I=I_guess)
    return CollocationSolution(mesh=mesh, y=y, mid=mid, period=T,
                               field=field_at(I)), I
