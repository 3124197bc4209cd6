"""Command-line front end: equilibria sweeps, cycle solves, diagrams, reports.

Commands
    hhc equilibria --range I0:I1:STEP     equilibrium sweep CSV
    hhc cycle --current I --method hb     single-cycle JSON artifact
    hhc diagram                           full bifurcation-diagram pipeline
    hhc floquet --cycle-file F            multiplier report for a saved cycle
    hhc hopf --range I0:I1                Hopf points from eigenvalue bisection

Configuration is a flat key=value text file ('#' comments, dotted keys);
unknown keys are rejected so typos fail loudly.  Every artifact header
carries the sha256 hash of the effective configuration, making reruns
verifiable.  Exit codes: 0 success, 1 usage/config error, 2 numerical
failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import collocation, continuation, floquet, hb, integrate, model, shooting
from .errors import HHCyclesError, NoSignChange
from .fields import hh_field
from .hb import FourierCycle

TOOL_VERSION = "hhcycles 0.1.0"

DEFAULT_CONFIG = {
    "model.c": 1.0,
    "model.g_na": 120.0,
    "model.g_k": 36.0,
    "model.g_l": 0.3,
    "model.e_na": -115.0,
    "model.e_k": 12.0,
    "model.e_l": -10.599,
    "solver.hb.k": 50,
    "solver.hb.oversample": 4,
    "solver.hb.tol": 1e-10,
    "solver.collocation.n": 100,
    "solver.collocation.max_n": 2000,
    "solver.collocation.tol": 1e-6,
    "solver.shooting.tol": 1e-10,
    "continuation.step.initial": 0.05,
    "continuation.step.max": 0.25,
    "continuation.step.min": 1e-9,
    "continuation.collapse_amplitude": 0.4,
    "continuation.max_orbit_jump": 25.0,
    "continuation.max_points": 400,
    "diagram.i_min": 6.2,
    "diagram.i_max": 160.0,
    "diagram.i_seed": 20.0,
    "floquet.steps": 4000,
    "gibbs.ripple_threshold": 0.05,
    "seed": 0,
}


class ConfigError(Exception):
    pass


def _parse_value(key: str, raw: str):
    default = DEFAULT_CONFIG[key]
    try:
        if isinstance(default, int) and not isinstance(default, bool):
            return int(raw)
        return float(raw)
    except ValueError:
        raise ConfigError(f"cannot parse value for {key!r}: {raw!r}")


def load_config(path=None) -> dict:
    """Defaults overlaid with a key=value file; unknown keys rejected."""
    cfg = dict(DEFAULT_CONFIG)
    if path is None:
        return cfg
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            key, raw = (s.strip() for s in line.split("=", 1))
            if key not in DEFAULT_CONFIG:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            cfg[key] = _parse_value(key, raw)
    _validate(cfg)
    return cfg


def _validate(cfg: dict):
    for key in ("solver.hb.tol", "solver.collocation.tol",
                "solver.shooting.tol", "continuation.step.initial"):
        if cfg[key] <= 0:
            raise ConfigError(f"{key} must be positive")
    if cfg["solver.hb.k"] < 1:
        raise ConfigError("solver.hb.k must be >= 1")


def config_hash(cfg: dict) -> str:
    text = "\n".join(f"{k}={_fmt(cfg[k])}" for k in sorted(cfg))
    return hashlib.sha256(text.encode()).hexdigest()


def params_from_config(cfg: dict) -> model.HHParams:
    return model.HHParams(C=cfg["model.c"], gNa=cfg["model.g_na"],
                          gK=cfg["model.g_k"], gL=cfg["model.g_l"],
                          ENa=cfg["model.e_na"], EK=cfg["model.e_k"],
                          EL=cfg["model.e_l"])


def _fmt(x) -> str:
    if isinstance(x, float):
        return format(x, ".17g")
    return str(x)


def _worker_count() -> int:
    cap = os.environ.get("HHC_THREADS")
    n = os.cpu_count() or 1
    if cap:
        try:
            n = max(1, min(n, int(cap)))
        except ValueError:
            pass
    return n


def _header_lines(cfg: dict) -> list:
    return [f"# {TOOL_VERSION}", f"# config {config_hash(cfg)}"]


def _write_csv(path, cfg, columns, rows):
    with open(path, "w") as fh:
        for line in _header_lines(cfg):
            fh.write(line + "\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) if isinstance(v, float) else str(v)
                             for v in row) + "\n")


def _parse_range(spec: str):
    parts = spec.split(":")
    if len(parts) not in (2, 3):
        raise ConfigError(f"range must be I0:I1[:STEP], got {spec!r}")
    try:
        vals = [float(p) for p in parts]
    except ValueError:
        raise ConfigError(f"malformed range {spec!r}")
    lo, hi = vals[0], vals[1]
    step = vals[2] if len(vals) == 3 else 1.0
    if hi <= lo or step <= 0:
        raise ConfigError(f"empty range {spec!r}")
    return lo, hi, step


# ---------------------------------------------------------------------------
# cycle JSON serialization

CYCLE_SCHEMA = 1
_CYCLE_FIELDS = {"schema", "current", "method", "period", "harmonics",
                 "coefficients", "mesh_tau", "mesh_states", "samples_t",
                 "samples", "spectrum", "residual", "gibbs_warning",
                 "gibbs_ripple"}


def _spectrum_dict(spec: floquet.FloquetSpectrum) -> dict:
    return {
        "trivial": [spec.trivial.real, spec.trivial.imag],
        "trivial_error": spec.trivial_error,
        "multipliers": [[m.real, m.imag] for m in spec.multipliers],
        "stability": spec.stability,
        "flags": sorted(spec.flags),
    }


def write_cycle_json(path, I, method, cyc, spec, residual, cfg,
                     gibbs_ripple=None):
    doc = {"schema": CYCLE_SCHEMA, "current": I, "method": method,
           "period": float(cyc.period), "spectrum": _spectrum_dict(spec),
           "residual": float(residual)}
    if isinstance(cyc, FourierCycle):
        doc["harmonics"] = cyc.K
        doc["coefficients"] = cyc.coeffs.tolist()
    elif isinstance(cyc, collocation.CollocationSolution):
        doc["mesh_tau"] = cyc.mesh.breakpoints.tolist()
        doc["mesh_states"] = cyc.y.tolist()
    else:
        doc["samples_t"] = cyc.samples.times.tolist()
        doc["samples"] = cyc.samples.states.tolist()
    if gibbs_ripple is not None:
        doc["gibbs_ripple"] = float(gibbs_ripple)
        doc["gibbs_warning"] = bool(
            gibbs_ripple > cfg["gibbs.ripple_threshold"])
    with open(path, "w") as fh:
        json.dump({"_meta": {"tool": TOOL_VERSION,
                             "config": config_hash(cfg)}, **doc}, fh)
        fh.write("\n")


def read_cycle_json(path):
    """Load a cycle artifact; unknown fields are rejected."""
    with open(path) as fh:
        doc = json.load(fh)
    doc.pop("_meta", None)
    unknown = set(doc) - _CYCLE_FIELDS
    if unknown:
        raise ConfigError(f"{path}: unknown cycle fields {sorted(unknown)}")
    if doc.get("schema") != CYCLE_SCHEMA:
        raise ConfigError(f"{path}: unsupported schema {doc.get('schema')!r}")
    I = float(doc["current"])
    if "coefficients" in doc:
        coeffs = np.array(doc["coefficients"], dtype=float)
        return I, FourierCycle(K=int(doc["harmonics"]),
                               period=float(doc["period"]), coeffs=coeffs)
    if "samples" in doc:
        from .integrate import Trajectory
        t = np.array(doc["samples_t"], dtype=float)
        states = np.array(doc["samples"], dtype=float)
        return I, shooting.Cycle(period=float(doc["period"]),
                                 anchor_state=states[0].copy(),
                                 samples=Trajectory(t, states))
    raise ConfigError(f"{path}: no cycle payload found")


# ---------------------------------------------------------------------------
# commands


def cmd_hopf(args, cfg) -> int:
    p = params_from_config(cfg)
    lo, hi, step = _parse_range(args.range)
    found = scan_hopf(lo, hi, step, p)
    if not found:
        print("no Hopf crossings found in range")
        return 0
    for I_star, omega in found:
        print(f"hopf I={_fmt(I_star)} omega={_fmt(omega)} "
              f"period={_fmt(2.0 * np.pi / omega)}")
    return 0


def scan_hopf(lo, hi, step, p):
    """Sign changes of the complex pair's real part, bisected."""
    Is = np.arange(lo, hi + 0.5 * step, step)
    vals = [model._complex_pair_real_part(float(I), p) for I in Is]
    found = []
    for a in range(len(Is) - 1):
        if np.sign(vals[a]) != np.sign(vals[a + 1]):
            found.append(model.detect_hopf(float(Is[a]), float(Is[a + 1]),
                                           p=p))
    return found


def cmd_equilibria(args, cfg) -> int:
    p = params_from_config(cfg)
    lo, hi, step = _parse_range(args.range)
    Is = np.arange(lo, hi + 0.5 * step, step)

    def row(I):
        I = float(I)
        x = model.find_equilibrium(I, p)
        lam = model.equilibrium_eigenvalues(I, p)
        max_re = float(np.max(lam.real))
        return (I, float(x[0]), float(x[1]), float(x[2]), float(x[3]),
                max_re, "stable" if max_re < 0 else "unstable")

    try:
        with ThreadPoolExecutor(max_workers=_worker_count()) as ex:
            rows = list(ex.map(row, Is))
    except HHCyclesError as exc:
        print(f"equilibrium solve failed: {exc}", file=sys.stderr)
        return 2
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "equilibria.csv")
    _write_csv(path, cfg,
               ["I", "V", "n", "h", "m", "max_re", "stability"], rows)
    if args.verbose:
        print(f"wrote {path} ({len(rows)} rows)")
    return 0


def _solve_single_cycle(I, method, cfg, p, init=None):
    """Shared cycle-solve used by cmd_cycle; returns (cycle, residual)."""
    fld = hh_field(p, I)
    if init is None:
        eq = model.find_equilibrium(I, p)
        guess = shooting.settle_transient(fld, 300.0,
                                          x_start=eq + np.array([5.0, 0, 0, 0]))
        base = shooting.shoot(fld, guess, tol=cfg["solver.shooting.tol"])
    elif isinstance(init, FourierCycle):
        base = init
    else:
        base = init
    if method == "shoot":
        cyc = base if isinstance(base, shooting.Cycle) else \
            shooting.shoot(fld, continuation._as_time_cycle(base),
                           tol=cfg["solver.shooting.tol"])
        xT = integrate.flow(fld, cyc.anchor_state, cyc.period, 4000)
        return cyc, float(np.max(np.abs(xT - cyc.anchor_state)))
    if method == "hb":
        K = cfg["solver.hb.k"]
        ops = hb.build_operators(K, cfg["solver.hb.oversample"])
        seed = continuation._as_fourier(base, K)
        cyc = hb.solve_hb(seed, fld, ops, tol=cfg["solver.hb.tol"])
        res = float(np.linalg.norm(hb.hb_residual(cyc, fld, ops), np.inf))
        return cyc, res
    if method == "collocation":
        sol = collocation.solve_bvp(fld, continuation._as_time_cycle(base)
                                    if not isinstance(base, FourierCycle) else base,
                                    tol=cfg["solver.collocation.tol"],
                                    N=cfg["solver.collocation.n"],
                                    max_N=cfg["solver.collocation.max_n"])
        return sol, float(np.max(sol.residual_profile()))
    raise ConfigError(f"unknown method {method!r}")


def cmd_cycle(args, cfg) -> int:
    p = params_from_config(cfg)
    I = args.current
    if args.harmonics:
        cfg = dict(cfg)
        cfg["solver.hb.k"] = args.harmonics
    if args.mesh:
        cfg = dict(cfg)
        cfg["solver.collocation.n"] = args.mesh
    init = None
    if args.init:
        _, init = read_cycle_json(args.init)
    try:
        cyc, residual = _solve_single_cycle(I, args.method, cfg, p, init)
        spec = floquet.spectrum(cyc, hh_field(p, I),
                                nsteps=cfg["floquet.steps"])
    except HHCyclesError as exc:
        print(f"cycle solve failed at I={I}: {type(exc).__name__}: {exc}",
              file=sys.stderr)
        return 2
    ripple = hb.gibbs_ripple(cyc) if isinstance(cyc, FourierCycle) else None
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, f"cycle_I{_fmt(float(I))}_{args.method}.json")
    write_cycle_json(path, I, args.method, cyc, spec, residual, cfg,
                     gibbs_ripple=ripple)
    if args.verbose:
        print(f"wrote {path} (period {_fmt(cyc.period)}, "
              f"residual {residual:.3g})")
    return 0


def cmd_floquet(args, cfg) -> int:
    p = params_from_config(cfg)
    try:
        I, cyc = read_cycle_json(args.cycle_file)
    except (OSError, ValueError, KeyError, ConfigError) as exc:
        print(f"cannot read cycle file: {exc}", file=sys.stderr)
        return 2
    try:
        spec = floquet.spectrum(cyc, hh_field(p, I), nsteps=args.steps)
    except HHCyclesError as exc:
        print(f"floquet failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    mus = spec.all_multipliers()
    cols = "  ".join(f"mu{j+1}={m.real:+.6g}{m.imag:+.3g}j"
                     for j, m in enumerate(mus))
    print(f"I={_fmt(float(I))}  {cols}  trivial_error={spec.trivial_error:.3g}"
          f"  {spec.stability}")
    return 0


def run_diagram(cfg, out_dir, verbose=False):
    """Full pipeline: Hopf points, branches, events, artifacts.

    Returns the assembled Diagram.  Partial results are flushed with a
    manifest marking any branch that failed.
    """
    p = params_from_config(cfg)
    fam = continuation.hh_family(p)
    os.makedirs(out_dir, exist_ok=True)
    lo, hi = cfg["diagram.i_min"], cfg["diagram.i_max"]

    hopfs = scan_hopf(max(lo, 0.5), hi, 1.0, p)
    hopf_events = [continuation.BifurcationEvent(
        kind="hopf", I_star=I_star,
        evidence={"omega": omega, "source": "equilibrium eigenvalues"})
        for I_star, omega in hopfs]
    if verbose:
        for ev in hopf_events:
            print(f"hopf at I={ev.I_star:.6f}")

    ctrl = continuation.StepControl(
        initial=cfg["continuation.step.initial"],
        max_step=cfg["continuation.step.max"],
        min_step=cfg["continuation.step.min"],
        collapse_amplitude=cfg["continuation.collapse_amplitude"],
        max_orbit_jump=cfg["continuation.max_orbit_jump"])
    max_pts = cfg["continuation.max_points"]
    K = cfg["solver.hb.k"]
    ad = continuation._SolverAdapter("hb", hb_K=K,
                                     hb_oversample=cfg["solver.hb.oversample"])

    branches = []
    manifest = {"branches": [], "events": "pending"}
    extra_events = list(hopf_events)

    def note(name, status):
        manifest["branches"].append({"name": name, "status": status})
        _flush_manifest(out_dir, manifest, cfg)

    # stable seed
    I_seed = min(max(cfg["diagram.i_seed"], lo), hi)
    fld = hh_field(p, I_seed)
    eq = model.find_equilibrium(I_seed, p)
    guess = shooting.settle_transient(fld, 300.0,
                                      x_start=eq + np.array([5.0, 0, 0, 0]))
    stable = shooting.shoot(fld, guess, tol=cfg["solver.shooting.tol"])
    fc = hb.solve_hb(continuation._as_fourier(stable, K), fld, ad._ops)
    start = continuation.make_point(I_seed, fc, fld,
                                    cfg["floquet.steps"])

    # branch 0: stable, upward to the high-I Hopf endpoint
    try:
        up_ctrl = continuation.StepControl(
            initial=0.5, max_step=2.0, min_step=ctrl.min_step,
            collapse_amplitude=ctrl.collapse_amplitude,
            max_orbit_jump=ctrl.max_orbit_jump)
        br_up = continuation.continue_branch(
            start, +1, (I_seed, hi), step_ctrl=up_ctrl, adapter=ad,
            field_at=fam, spectrum_steps=cfg["floquet.steps"],
            max_points=max_pts)
        branches.append(br_up)
        note("stable-up", "complete")
    except HHCyclesError as exc:
        note("stable-up", f"failed: {exc}")

    # branch 1: from the low-I Hopf seed down through the folds and back
    # up along the stable branch
    if hopfs:
        I2, omega2 = hopfs[0]
        try:
            seed = continuation.hopf_branch_seed(I2 - 0.02, omega2, 1.0, p)
            fc2 = hb.solve_hb(hb.resize(seed, K), fam(I2 - 0.02), ad._ops)
            start2 = continuation.make_point(I2 - 0.02, fc2, fam(I2 - 0.02),
                                             cfg["floquet.steps"])
            br_dn = continuation.continue_branch(
                start2, -1, (lo, I_seed), step_ctrl=ctrl, adapter=ad,
                field_at=fam, spectrum_steps=cfg["floquet.steps"],
                max_points=max_pts)
            branches.append(br_dn)
            note("hopf-seeded", "complete")
        except HHCyclesError as exc:
            br_dn = None
            note("hopf-seeded", f"failed: {exc}")
    else:
        br_dn = None

    # events on the hopf-seeded branch: folds at the I-extrema, then the
    # period-doubling crossing on the strongly unstable segment
    if br_dn is not None and len(br_dn.points) > 4:
        Is = np.array([pt.I for pt in br_dn.points])
        ext = [j for j in range(1, len(Is) - 1)
               if (Is[j] - Is[j - 1]) * (Is[j + 1] - Is[j]) < 0]
        for j in ext:
            try:
                ev = continuation.locate_fold(
                    br_dn, (max(j - 4, 0), min(j + 4, len(Is) - 1)),
                    field_at=fam, adapter=ad)
                extra_events.append(ev)
                if verbose:
                    print(f"fold at I={ev.I_star:.8f}")
            except HHCyclesError as exc:
                if verbose:
                    print(f"fold refinement near I={Is[j]:.6f} failed: {exc}")
        try:
            # the doubling sits just below the upper knee; a second -1
            # crossing exists further down the same segment where the
            # multiplier pair splits after colliding, so restrict the
            # search to the quarter of the segment adjacent to the knee
            if len(ext) >= 2:
                pd_bracket = (ext[0] + 3 * (ext[1] - ext[0]) // 4, ext[1])
            else:
                pd_bracket = None
            # the multiplier moves by ~3e4 per unit I near the knee, so
            # the crossing needs a much tighter current tolerance
            ev = continuation.locate_pd(br_dn, pd_bracket, field_at=fam,
                                        adapter=ad, tol=1e-9,
                                        spectrum_steps=cfg["floquet.steps"])
            extra_events.append(ev)
            if verbose:
                print(f"period doubling at I={ev.I_star:.8f}")
        except (NoSignChange, HHCyclesError) as exc:
            if verbose:
                print(f"period-doubling search: {exc}")

    diagram = continuation.assemble_diagram(branches, extra_events)
    manifest["events"] = "complete"
    _flush_manifest(out_dir, manifest, cfg)
    _write_diagram_files(diagram, branches, out_dir, cfg)
    return diagram


def _flush_manifest(out_dir, manifest, cfg):
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump({"tool": TOOL_VERSION, "config": config_hash(cfg),
                   **manifest}, fh, indent=1)
        fh.write("\n")


def _write_diagram_files(diagram, branches, out_dir, cfg):
    _write_csv(os.path.join(out_dir, "diagram.csv"), cfg,
               ["branch_id", "I", "stability", "v_min", "v_max", "period"],
               [(r["branch_id"], r["I"], r["stability"], r["v_min"],
                 r["v_max"], r["period"]) for r in diagram.records])
    _write_csv(os.path.join(out_dir, "events.csv"), cfg,
               ["kind", "I_star", "evidence"],
               [(e.kind, e.I_star, json.dumps(e.evidence, default=str))
                for e in diagram.events])
    for bid, br in enumerate(branches):
        for tag, attr in (("vmin", "v_min"), ("vmax", "v_max")):
            path = os.path.join(out_dir, f"branch_{bid}_{tag}.dat")
            with open(path, "w") as fh:
                for pt in br.points:
                    fh.write(f"{_fmt(pt.I)} {_fmt(getattr(pt, attr))}\n")
        payload = {"schema": CYCLE_SCHEMA, "solver": br.solver,
                   "points": [{"I": pt.I, "period": pt.period,
                               "v_min": pt.v_min, "v_max": pt.v_max,
                               "stability": pt.spectrum.stability}
                              for pt in br.points],
                   "mode_history": br.mode_history}
        with open(os.path.join(out_dir, f"branch_{bid}.json"), "w") as fh:
            json.dump(payload, fh)
            fh.write("\n")


def cmd_diagram(args, cfg) -> int:
    try:
        diagram = run_diagram(cfg, args.out, verbose=args.verbose)
    except HHCyclesError as exc:
        print(f"diagram run failed: {type(exc).__name__}: {exc}",
              file=sys.stderr)
        return 2
    print(f"{len(diagram.records)} points, {len(diagram.events)} events "
          f"-> {args.out}")
    for ev in diagram.events:
        print(f"  {ev.kind:16s} I*={_fmt(ev.I_star)}")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="hhc", description="Periodic orbits and bifurcations of the "
        "Hodgkin-Huxley neuron across the stimulus current.")
    ap.add_argument("--config", default=None, help="key=value config file")
    ap.add_argument("--out", default="out", help="output directory")
    ap.add_argument("--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    eq = sub.add_parser("equilibria", help="equilibrium sweep CSV")
    eq.add_argument("--range", required=True, help="I0:I1:STEP")

    cy = sub.add_parser("cycle", help="solve one periodic orbit")
    cy.add_argument("--current", type=float, required=True)
    cy.add_argument("--method", choices=("hb", "collocation", "shoot"),
                    default="hb")
    cy.add_argument("--harmonics", type=int, default=None)
    cy.add_argument("--mesh", type=int, default=None)
    cy.add_argument("--init", default=None, help="cycle JSON used as seed")

    sub.add_parser("diagram", help="full bifurcation diagram pipeline")

    fl = sub.add_parser("floquet", help="multiplier report for a cycle file")
    fl.add_argument("--cycle-file", required=True)
    fl.add_argument("--steps", type=int, default=4000)

    hp = sub.add_parser("hopf", help="Hopf points from eigenvalue bisection")
    hp.add_argument("--range", default="1:160", help="I0:I1[:STEP]")
    return ap


COMMANDS = {
    "equilibria": cmd_equilibria,
    "cycle": cmd_cycle,
    "diagram": cmd_diagram,
    "floquet": cmd_floquet,
    "hopf": cmd_hopf,
}


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code not in (0, None) else 0
    try:
        cfg = load_config(args.config)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    try:
        return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except HHCyclesError as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}",
              file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
