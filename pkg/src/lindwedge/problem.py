"""Problem and channel files: JSON with matrices stored as split real/imaginary lists."""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from importlib import resources

import jsonschema
import numpy as np

from .controllability import SpinGraph
from .lindblad import LindbladGenerator, unitary_superop

SCHEMA_VERSION = 1
PROFILE_ENV = "LINDWEDGE_TOL_PROFILE"

DEFAULT_TOLERANCES = {
    "hermiticity": 1e-10,
    "psd": 1e-8,
    "trace": 1e-9,
    "cp": 1e-9,
    "tp": 1e-10,
    "unital": 1e-10,
    "membership": 1e-8,
    "residual": 1e-9,
    "rank": 1e-9,
    "wh_scalar": 1e-10,
    "cone": 1e-6,
    "wedge_product": 1e-6,
}
PROFILES = {"default": 1.0, "strict": 0.1, "loose": 100.0}


class ProblemError(ValueError):
    """Malformed or inconsistent input; the message names the offending field."""


def tolerance_profile(overrides: dict | None = None) -> dict:
    name = os.environ.get(PROFILE_ENV, "default")
    if name not in PROFILES:
        raise ProblemError(f"{PROFILE_ENV}={name!r} is not one of {sorted(PROFILES)}")
    tols = {k: v * PROFILES[name] for k, v in DEFAULT_TOLERANCES.items()}
    for k, v in (overrides or {}).items():
        if k not in DEFAULT_TOLERANCES:
            raise ProblemError(f"tolerances.{k}: unknown tolerance (known: {', '.join(sorted(tols))})")
        tols[k] = float(v)
    return tols


def _schema(name: str) -> dict:
    return json.loads(resources.files("lindwedge").joinpath("schemas", name).read_text())


def encode_matrix(m) -> dict:
    m = np.atleast_2d(np.asarray(m, dtype=complex))
    return {"rows": m.shape[0], "cols": m.shape[1],
            "re": m.real.reshape(-1).tolist(), "im": m.imag.reshape(-1).tolist()}


def decode_matrix(d: dict, where: str = "matrix") -> np.ndarray:
    rows, cols = d["rows"], d["cols"]
    re = np.asarray(d["re"], dtype=float)
    im = np.asarray(d.get("im", np.zeros(re.size)), dtype=float)
    if re.size != rows * cols or im.size != rows * cols:
        raise ProblemError(f"{where}: expected {rows * cols} entries for a {rows}x{cols} matrix, "
                           f"got re={re.size}, im={im.size}")
    return (re + 1j * im).reshape(rows, cols)


def parse_json(text: str, source: str) -> dict:
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ProblemError(f"{source}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc


def _validate(doc, schema_name: str, source: str) -> None:
    validator = jsonschema.Draft202012Validator(_schema(schema_name))
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        lines = []
        for e in errors:
            path = ".".join(str(p) for p in e.absolute_path) or "<root>"
            lines.append(f"{source}: field {path}: {e.message}")
        raise ProblemError("\n".join(lines))


def input_digest(*blobs: bytes) -> str:
    h = hashlib.sha256()
    for b in blobs:
        h.update(hashlib.sha256(b).digest())
    return h.hexdigest()


@dataclass
class Problem:
    dim: int
    generator: LindbladGenerator
    spin_graph: SpinGraph | None = None
    initial_state: np.ndarray | None = None
    target_state: np.ndarray | None = None
    target_map: np.ndarray | None = None
    horizon: float | None = None
    segments: int = 20
    amplitude_bound: float | list | None = None
    fidelity: str = "full"
    threshold: float | None = None
    cone_samples: int = 64
    cone_seed: int = 0
    tolerances: dict = field(default_factory=dict)
    seed: int = 0
    digest: str = ""


def _square(m: np.ndarray, n: int, where: str) -> np.ndarray:
    if m.shape != (n, n):
        raise ProblemError(f"{where}: expected a {n}x{n} matrix, got {m.shape[0]}x{m.shape[1]}")
    return m


def problem_from_dict(doc: dict, source: str = "<problem>", raw: bytes = b"") -> Problem:
    _validate(doc, "problem.schema.json", source)
    n = doc["dim"]
    tols = tolerance_profile(doc.get("tolerances"))
    drift = (_square(decode_matrix(doc["drift_hamiltonian"], "drift_hamiltonian"), n, "drift_hamiltonian")
             if "drift_hamiltonian" in doc else np.zeros((n, n), dtype=complex))
    controls = [_square(decode_matrix(m, f"control_hamiltonians.{i}"), n, f"control_hamiltonians.{i}")
                for i, m in enumerate(doc.get("control_hamiltonians", []))]
    ops = [_square(decode_matrix(m, f"lindblad_ops.{i}"), n, f"lindblad_ops.{i}")
           for i, m in enumerate(doc.get("lindblad_ops", []))]
    try:
        gen = LindbladGenerator(drift, controls, ops, tols["hermiticity"])
    except ValueError as exc:
        raise ProblemError(f"{source}: {exc}") from exc

    graph = None
    if "spin_graph" in doc:
        sg = doc["spin_graph"]
        try:
            graph = SpinGraph(sg["n"], [tuple(c) for c in sg["couplings"]])
        except ValueError as exc:
            raise ProblemError(f"{source}: field spin_graph: {exc}") from exc

    p = Problem(n, gen, graph, tolerances=tols, seed=doc.get("seed", 0), digest=input_digest(raw))
    t = doc.get("targets", {})
    if "initial_state" in t:
        p.initial_state = _square(decode_matrix(t["initial_state"], "targets.initial_state"), n,
                                  "targets.initial_state")
    if "target_state" in t:
        p.target_state = _square(decode_matrix(t["target_state"], "targets.target_state"), n,
                                 "targets.target_state")
    if "target_unitary" in t and "target_map" in t:
        raise ProblemError(f"{source}: field targets: give target_unitary or target_map, not both")
    if "target_unitary" in t:
        u = _square(decode_matrix(t["target_unitary"], "targets.target_unitary"), n, "targets.target_unitary")
        if np.max(np.abs(u.conj().T @ u - np.eye(n))) > 1e-8:
            raise ProblemError(f"{source}: field targets.target_unitary: matrix is not unitary")
        p.target_map = unitary_superop(u)
    if "target_map" in t:
        p.target_map = _square(decode_matrix(t["target_map"], "targets.target_map"), n * n, "targets.target_map")
    p.horizon = t.get("horizon")
    p.segments = t.get("segments", 20)
    p.amplitude_bound = t.get("amplitude_bound")
    if isinstance(p.amplitude_bound, list) and len(p.amplitude_bound) != len(controls):
        raise ProblemError(f"{source}: field targets.amplitude_bound: expected {len(controls)} bounds")
    p.fidelity = t.get("fidelity", "full")
    p.threshold = t.get("threshold")
    cone = doc.get("cone", {})
    p.cone_samples = cone.get("samples", 64)
    p.cone_seed = cone.get("seed", 0)
    return p


def load_problem(path: str) -> Problem:
    raw = _read(path)
    doc = parse_json(raw.decode("utf-8", errors="replace"), path)
    return problem_from_dict(doc, path, raw)


@dataclass
class ChannelFile:
    matrix: np.ndarray
    tolerances: dict
    digest: str


def load_channel(path: str) -> ChannelFile:
    raw = _read(path)
    doc = parse_json(raw.decode("utf-8", errors="replace"), path)
    _validate(doc, "channel.schema.json", path)
    m = decode_matrix(doc["channel"], "channel")
    k = int(round(np.sqrt(m.shape[0])))
    if m.shape[0] != m.shape[1] or k * k != m.shape[0]:
        raise ProblemError(f"{path}: field channel: expected an N^2 x N^2 matrix, got {m.shape}")
    return ChannelFile(m, tolerance_profile(doc.get("tolerances")), input_digest(raw))


def _read(path: str) -> bytes:
    try:
        with open(path, "rb") as fh:
            return fh.read()
    except OSError as exc:
        raise ProblemError(f"{path}: cannot read ({exc.strerror})") from exc


def problem_to_dict(gen: LindbladGenerator, **extra) -> dict:
    """Serialize a generator (plus optional top-level sections) as a problem document."""
    doc = {"schema_version": SCHEMA_VERSION, "dim": gen.dim,
           "drift_hamiltonian": encode_matrix(gen.drift),
           "control_hamiltonians": [encode_matrix(h) for h in gen.controls],
           "lindblad_ops": [encode_matrix(v) for v in gen.lindblad_ops]}
    doc.update(extra)
    return doc


def channel_to_dict(m) -> dict:
    return {"schema_version": SCHEMA_VERSION, "channel": encode_matrix(m)}
