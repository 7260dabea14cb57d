"""Command-line entry point.

Exit codes: 0 success, 2 input error, 3 numerical or state-validation
failure, 4 target or threshold not reached. Reports are canonical JSON
(sorted keys); wall-clock data goes to a ``.timing.json`` sidecar so that
repeated runs produce byte-identical reports.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
import time

import numpy as np

from . import __version__
from .channel import (
    is_completely_positive,
    is_hermiticity_preserving,
    is_ti_markovian,
    is_trace_preserving,
    effective_liouvillian,
    kl_wedge_membership,
)
from .controllability import (
    accessibility_test,
    h_controllability_test,
    lie_closure,
    open_system_generators,
    skew,
    spin_graph_analysis,
    wh_controllability_test,
)
from .lindblad import (
    NumericalCrossCheckError,
    PiecewiseSchedule,
    StateValidationError,
    full_generator,
    generator_dissipator,
    is_purity_decreasing,
    is_unital,
    propagate,
    steady_state,
)
from .operator_core import NoRealBranch, trace_norm
from .optimizer import (
    ControlProblem,
    OptimizationError,
    grape_optimize,
    minimal_time_estimate,
    time_fidelity_sweep,
    wedge_product_optimize,
)
from .problem import ProblemError, decode_matrix, encode_matrix, load_channel, load_problem, parse_json
from .wedge import conjugation_orbit_cone

EXIT_OK, EXIT_INPUT, EXIT_NUMERICAL, EXIT_UNREACHABLE = 0, 2, 3, 4


# ---------------------------------------------------------------------------
# output helpers

def _jsonable(o):
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, np.ndarray):
        if np.iscomplexobj(o):
            return encode_matrix(o)
        return _jsonable(o.tolist())
    if isinstance(o, (np.bool_, bool)):
        return bool(o)
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (float, np.floating)):
        x = float(o)
        return x if math.isfinite(x) else None
    if isinstance(o, complex):
        return {"re": o.real, "im": o.imag}
    return o


def _atomic_write(path: str, text: str) -> None:
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _report_text(report: dict) -> str:
    return json.dumps(_jsonable(report), sort_keys=True, indent=2, allow_nan=False) + "\n"


def _csv_text(header: list, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])
    return buf.getvalue()


def _sibling(out: str | None, explicit: str | None, suffix: str) -> str | None:
    if explicit:
        return explicit
    if out:
        stem, _ = os.path.splitext(out)
        return stem + suffix
    return None


def _emit(files: dict, out: str | None, report_text: str | None, started: float) -> None:
    """Write every output only after all computation succeeded."""
    for path, text in files.items():
        if path:
            _atomic_write(path, text)
    if report_text is not None:
        if out:
            _atomic_write(out, report_text)
            timing = {"wall_time_s": time.perf_counter() - started,
                      "finished_at": time.strftime("%Y-%m-%dT%H:%M:%S%z")}
            _atomic_write(_sibling(out, None, ".timing.json"), json.dumps(timing, indent=2) + "\n")
        else:
            sys.stdout.write(report_text)


def _report(command: str, digest: str, seed, tolerances: dict, results: dict) -> dict:
    return {"command": command, "input_digest": digest, "seed": seed, "tolerances": tolerances,
            "results": results, "version": __version__}


def _floats(text: str, name: str) -> list[float]:
    try:
        if ":" in text:
            a, b, k = text.split(":")
            return np.linspace(float(a), float(b), int(k)).tolist()
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise ProblemError(f"--{name}: cannot parse {text!r} ({exc})") from exc


def _controls(args, p) -> np.ndarray:
    m = p.generator.n_controls
    if not getattr(args, "controls", None):
        return np.zeros(m)
    u = _floats(args.controls, "controls")
    if len(u) != m:
        raise ProblemError(f"--controls: expected {m} amplitudes, got {len(u)}")
    return np.array(u)


# ---------------------------------------------------------------------------
# commands

def _initial_state(arg: str | None, p) -> np.ndarray:
    n = p.dim
    if arg is None:
        if p.initial_state is not None:
            return p.initial_state
        arg = "ground"
    if arg == "ground":
        rho = np.zeros((n, n), dtype=complex)
        rho[0, 0] = 1
        return rho
    if arg == "excited":
        rho = np.zeros((n, n), dtype=complex)
        rho[-1, -1] = 1
        return rho
    if arg == "mixed":
        return np.eye(n, dtype=complex) / n
    try:
        with open(arg) as fh:
            doc = parse_json(fh.read(), arg)
    except OSError as exc:
        raise ProblemError(f"--initial-state: cannot read {arg} ({exc.strerror})") from exc
    if not isinstance(doc, dict) or not {"rows", "cols", "re"} <= set(doc):
        raise ProblemError(f"{arg}: expected a matrix object with rows, cols, re, im")
    rho = decode_matrix(doc, arg)
    if rho.shape != (n, n):
        raise ProblemError(f"{arg}: expected a {n}x{n} density matrix")
    return rho


def cmd_simulate(args) -> int:
    p = load_problem(args.problem)
    if args.t_final <= 0 or args.steps < 1:
        raise ProblemError("--t-final must be positive and --steps at least 1")
    rho0 = _initial_state(args.initial_state, p)
    u = _controls(args, p)
    grid = np.linspace(0.0, args.t_final, args.steps + 1)
    schedule = None
    if np.any(u):
        schedule = PiecewiseSchedule([args.t_final], u[None, :])
    try:
        states = propagate(p.generator, schedule, rho0, grid, p.tolerances["psd"], p.tolerances["trace"])
    except ValueError as exc:
        raise ProblemError(str(exc)) from exc
    rho_star = steady_state(full_generator(p.generator, u))
    n = p.dim
    header = ["time"]
    for i in range(n):
        for j in range(n):
            header += [f"rho_{i}{j}_re", f"rho_{i}{j}_im"]
    header += ["purity", "trace_distance_to_steady_state"]
    rows = []
    for t, rho in zip(grid, states):
        row = [float(t)]
        for i in range(n):
            for j in range(n):
                row += [float(rho[i, j].real), float(rho[i, j].imag)]
        row += [float(np.real(np.trace(rho @ rho))), trace_norm(rho - rho_star)]
        rows.append(row)
    text = _csv_text(header, rows)
    if args.out:
        _atomic_write(args.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _membership_dict(l_hat, tols) -> dict:
    w = kl_wedge_membership(l_hat, tols["membership"], tols["residual"])
    d = w.as_dict()
    if w.hamiltonian is not None:
        d["hamiltonian"] = encode_matrix(w.hamiltonian)
    return d


def cmd_check_generator(args) -> int:
    started = time.perf_counter()
    p = load_problem(args.problem)
    tols = p.tolerances
    u = _controls(args, p)
    t_grid = _floats(args.t_grid, "t-grid")
    l_hat = full_generator(p.generator, u)
    results = {
        "controls": u,
        "wedge_membership": _membership_dict(l_hat, tols),
        "unital": {"value": is_unital(p.generator, tols["unital"]), "tol": tols["unital"]},
        "purity_decreasing": {"value": is_purity_decreasing(p.generator, t_grid, tols["unital"]),
                              "tol": tols["unital"], "t_grid": t_grid},
    }
    _emit({}, args.out, _report_text(_report("check-generator", p.digest, p.seed, tols, results)), started)
    return EXIT_OK


def cmd_check_channel(args) -> int:
    started = time.perf_counter()
    ch = load_channel(args.matrix_file)
    tols = ch.tolerances
    m = ch.matrix
    results: dict = {"dim": int(round(np.sqrt(m.shape[0])))}
    hp = is_hermiticity_preserving(m, tols["tp"])
    results["hermiticity_preserving"] = {"value": hp, "tol": tols["tp"]}
    tp = is_trace_preserving(m, tols["tp"])
    results["trace_preserving"] = {"value": tp, "tol": tols["tp"]}
    cp = is_completely_positive(m, tols["cp"]) if hp else None
    results["completely_positive"] = ({"value": cp.is_cp, "min_choi_eigenvalue": cp.min_eigenvalue,
                                       "tol": tols["cp"]} if cp else
                                      {"value": None, "diagnosis": "map is not Hermiticity-preserving"})
    if cp is not None and cp.is_cp and tp:
        try:
            mk = is_ti_markovian(m, tols["membership"], tols["residual"], check_preconditions=False)
            results["markovianity"] = {**mk.as_dict(), "tol": tols["membership"]}
        except ValueError as exc:
            results["markovianity"] = {"verdict": None, "diagnosis": str(exc)}
    else:
        results["markovianity"] = {"verdict": None, "diagnosis": "not a quantum channel (needs CP and TP)"}
    if args.t_eff is not None:
        try:
            eff = effective_liouvillian(m, args.t_eff, tols["residual"], tols["membership"])
            results["effective_liouvillian"] = {**eff.as_dict(), "exists": True,
                                                "generator": encode_matrix(eff.generator)}
        except NoRealBranch as exc:
            results["effective_liouvillian"] = {"exists": False, **exc.as_dict()}
        except ValueError as exc:
            results["effective_liouvillian"] = {"exists": False, "diagnosis": str(exc)}
    _emit({}, args.out, _report_text(_report("check-channel", ch.digest, None, tols, results)), started)
    return EXIT_OK


def cmd_controllability(args) -> int:
    started = time.perf_counter()
    p = load_problem(args.problem)
    tols = p.tolerances
    results: dict = {}
    if args.spin_graph_only:
        if p.spin_graph is None:
            raise ProblemError(f"{args.problem}: --spin-graph-only needs a spin_graph section")
    else:
        g = p.generator
        results["h_controllability"] = h_controllability_test(g, tols["rank"]).as_dict()
        kd = lie_closure(skew([g.drift] + g.controls), tols["rank"], certify=False)
        results["closed_system"] = {"k_d_dim": kd.dim, "su_dim": g.dim ** 2 - 1,
                                    "controllable": kd.dim == g.dim ** 2 - 1}
        if is_unital(g, tols["unital"]):
            results["wh_controllability"] = {**wh_controllability_test(g, tols["wh_scalar"], tols["rank"]).as_dict(),
                                             "tol": tols["wh_scalar"]}
            results["accessibility"] = accessibility_test(g, tols["rank"]).as_dict()
        else:
            note = "generator is not unital; homogeneous her_0 reduction does not apply"
            results["wh_controllability"] = {"sufficient_condition_met": None, "diagnosis": note}
            results["accessibility"] = {"accessible": None, "diagnosis": note}
    if p.spin_graph is not None:
        results["spin_graph"] = spin_graph_analysis(p.spin_graph, rank_tol=tols["rank"]).as_dict()
    _emit({}, args.out, _report_text(_report("controllability", p.digest, p.seed, tols, results)), started)
    return EXIT_OK


def cmd_closure(args) -> int:
    started = time.perf_counter()
    p = load_problem(args.problem)
    tols = p.tolerances
    g = p.generator
    if args.which == "kc":
        gens, ambient = skew(g.controls), "su(N)"
    elif args.which == "kd":
        gens, ambient = skew([g.drift] + g.controls), "su(N)"
    else:
        if not is_unital(g, tols["unital"]):
            raise ProblemError("closure --which open needs a unital generator")
        gens, ambient = open_system_generators(g), "gl(her_0(N))"
    basis = lie_closure(gens, tols["rank"], ambient=ambient)
    results = {"which": args.which, "dim": basis.dim, "generations": basis.generations,
               "ambient": ambient, "certified": basis.certified,
               "certificate_residual": basis.certificate_residual, "ill_conditioned": basis.ill_conditioned}
    if args.dump_basis:
        results["basis"] = [encode_matrix(e) for e in basis.elements]
    _emit({}, args.out, _report_text(_report("closure", p.digest, p.seed, tols, results)), started)
    return EXIT_OK


def _control_problem(p, seed: int, horizon: float | None = None) -> ControlProblem:
    t = horizon if horizon is not None else p.horizon
    if t is None:
        raise ProblemError("targets.horizon is required")
    try:
        if p.target_map is not None:
            return ControlProblem(p.generator, t, p.segments, target_map=p.target_map,
                                  amplitude_bound=p.amplitude_bound, seed=seed, fidelity=p.fidelity)
        if p.initial_state is not None and p.target_state is not None:
            return ControlProblem(p.generator, t, p.segments, rho0=p.initial_state, rho_target=p.target_state,
                                  amplitude_bound=p.amplitude_bound, seed=seed, fidelity=p.fidelity)
    except ValueError as exc:
        raise ProblemError(str(exc)) from exc
    raise ProblemError("targets: need target_map/target_unitary or initial_state and target_state")


def cmd_optimize(args) -> int:
    started = time.perf_counter()
    p = load_problem(args.problem)
    tols = p.tolerances
    seed = p.seed if args.seed is None else args.seed
    files = {}
    if args.method == "grape":
        cp = _control_problem(p, seed)
        res = grape_optimize(cp, None, args.iters)
        results = {"method": "grape", **res.as_dict(), "kind": cp.kind, "fidelity_definition": cp.fidelity}
        files[_sibling(args.out, args.pulse_out, ".pulse.json")] = _report_text(res.pulse.to_dict())
        files[_sibling(args.out, args.trace_out, ".trace.csv")] = _csv_text(
            ["iteration", "fidelity"], [(i, f) for i, f in enumerate(res.trace)])
        reached = args.threshold is None or res.fidelity >= args.threshold
    else:
        if p.target_map is None:
            raise ProblemError("targets: the wedge method needs target_map or target_unitary")
        try:
            cone = conjugation_orbit_cone(generator_dissipator(p.generator), p.cone_samples, p.cone_seed)
        except ValueError as exc:
            raise ProblemError(f"cannot build a dissipator cone: {exc}") from exc
        try:
            res = wedge_product_optimize(p.target_map, cone, args.n, args.iters, seed, args.restarts,
                                         args.n_max, tols["wedge_product"])
        except ValueError as exc:
            raise ProblemError(str(exc)) from exc
        factors = [is_completely_positive(f, tols["cp"]) for f in res.factor_superops(cone)]
        results = {"method": "wedge", **res.as_dict(),
                   "cone": {"samples": cone.sample_count, "seed": cone.seed, "generators": len(cone.generators),
                            "provenance": cone.provenance},
                   "factors_cp": {"value": all(f.is_cp for f in factors),
                                  "min_choi_eigenvalues": [f.min_eigenvalue for f in factors], "tol": tols["cp"]},
                   "tol": tols["wedge_product"]}
        files[_sibling(args.out, args.pulse_out, ".product.json")] = _report_text(res.product.to_dict())
        files[_sibling(args.out, args.trace_out, ".trace.csv")] = _csv_text(
            ["n", "residual"], res.schedule)
        reached = args.threshold is None or res.residual <= args.threshold
    results["threshold"] = args.threshold
    results["reached"] = reached
    _emit(files, args.out, _report_text(_report("optimize", p.digest, seed, tols, results)), started)
    return EXIT_OK if reached else EXIT_UNREACHABLE


def cmd_sweep(args) -> int:
    started = time.perf_counter()
    p = load_problem(args.problem)
    tols = p.tolerances
    seed = p.seed if args.seed is None else args.seed
    grid = _floats(args.t_grid, "t-grid")
    gamma, source = args.gamma, "argument"
    if gamma is None:
        source = "none"
        if is_unital(p.generator, tols["unital"]):
            wh = wh_controllability_test(p.generator, tols["wh_scalar"], tols["rank"])
            if wh.sufficient_condition_met:
                gamma, source = wh.gamma, "WH test"
    cp = _control_problem(p, seed, horizon=grid[0] if grid and grid[0] > 0 else 1.0)
    try:
        sw = time_fidelity_sweep(cp, grid, gamma, args.iters, args.restarts)
    except ValueError as exc:
        raise ProblemError(str(exc)) from exc
    results = {**sw.as_dict(), "gamma_source": source}
    files = {_sibling(args.out, args.table_out, ".sweep.csv"): _csv_text(
        ["T", "g", "g_scaled"], [(r["T"], r["g"], r["g_scaled"]) for r in sw.rows()])}
    _emit(files, args.out, _report_text(_report("sweep", p.digest, seed, tols, results)), started)
    return EXIT_OK


def cmd_mintime(args) -> int:
    started = time.perf_counter()
    p = load_problem(args.problem)
    tols = p.tolerances
    seed = p.seed if args.seed is None else args.seed
    threshold = args.threshold if args.threshold is not None else p.threshold
    if threshold is None:
        raise ProblemError("--threshold or targets.threshold is required")
    grid = _floats(args.t_grid, "t-grid")
    cp = _control_problem(p, seed, horizon=1.0)
    try:
        est = minimal_time_estimate(cp, threshold, grid, args.iters, args.restarts)
    except ValueError as exc:
        raise ProblemError(str(exc)) from exc
    _emit({}, args.out, _report_text(_report("mintime", p.digest, seed, tols, est.as_dict())), started)
    return EXIT_OK if est.reached else EXIT_UNREACHABLE


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lindwedge", description="Lindblad generators, channels and control.")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="integrate the master equation, write a CSV trajectory")
    s.add_argument("--problem", required=True)
    s.add_argument("--t-final", type=float, required=True)
    s.add_argument("--steps", type=int, default=100)
    s.add_argument("--initial-state", help="ground | excited | mixed | path to a matrix JSON")
    s.add_argument("--controls", help="constant amplitudes, comma separated")
    s.add_argument("--out")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("check-generator", help="wedge membership, unitality, purity decrease")
    s.add_argument("--problem", required=True)
    s.add_argument("--controls")
    s.add_argument("--t-grid", default="0.1,1,10")
    s.add_argument("--out")
    s.set_defaults(func=cmd_check_generator)

    s = sub.add_parser("check-channel", help="CP/TP, Markovianity, effective Liouvillian")
    s.add_argument("--matrix-file", required=True)
    s.add_argument("--t-eff", type=float)
    s.add_argument("--out")
    s.set_defaults(func=cmd_check_channel)

    s = sub.add_parser("controllability", help="Lie-algebraic controllability and accessibility")
    s.add_argument("--problem", required=True)
    s.add_argument("--spin-graph-only", action="store_true")
    s.add_argument("--out")
    s.set_defaults(func=cmd_controllability)

    s = sub.add_parser("closure", help="dimension (and basis) of one Lie closure")
    s.add_argument("--problem", required=True)
    s.add_argument("--which", choices=("kc", "kd", "open"), required=True)
    s.add_argument("--dump-basis", action="store_true")
    s.add_argument("--out")
    s.set_defaults(func=cmd_closure)

    s = sub.add_parser("optimize", help="GRAPE or wedge-product optimization")
    s.add_argument("--problem", required=True)
    s.add_argument("--method", choices=("grape", "wedge"), default="grape")
    s.add_argument("--n", type=int, default=1)
    s.add_argument("--n-max", type=int)
    s.add_argument("--iters", type=int, default=2000)
    s.add_argument("--restarts", type=int, default=8)
    s.add_argument("--threshold", type=float,
                   help="exit 4 unless the fidelity reaches (grape) or the residual drops below (wedge) it")
    s.add_argument("--seed", type=int)
    s.add_argument("--out")
    s.add_argument("--pulse-out")
    s.add_argument("--trace-out")
    s.set_defaults(func=cmd_optimize)

    s = sub.add_parser("sweep", help="optimized fidelity against total time")
    s.add_argument("--problem", required=True)
    s.add_argument("--t-grid", required=True, help="comma list or start:stop:count")
    s.add_argument("--gamma", type=float)
    s.add_argument("--iters", type=int, default=2000)
    s.add_argument("--restarts", type=int, default=0)
    s.add_argument("--seed", type=int)
    s.add_argument("--out")
    s.add_argument("--table-out")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("mintime", help="grid upper bound on the minimal steering time")
    s.add_argument("--problem", required=True)
    s.add_argument("--t-grid", required=True)
    s.add_argument("--threshold", type=float)
    s.add_argument("--iters", type=int, default=2000)
    s.add_argument("--restarts", type=int, default=2)
    s.add_argument("--seed", type=int)
    s.add_argument("--out")
    s.set_defaults(func=cmd_mintime)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ProblemError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except StateValidationError as exc:
        print(f"state validation failed: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (NumericalCrossCheckError, OptimizationError, OverflowError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
