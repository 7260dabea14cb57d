"""Kossakowski-Lindblad generators in superoperator form.

Sign convention (shared by the whole package): the generator is

    L_u = i ad_{H_u} + Gamma_L,      d rho/dt = -L_u(rho),

so a constant control propagates as ``expm(-t * L_u)``. Superoperators are
plain ``(N^2, N^2)`` complex arrays acting on column-stacked ``vec(rho)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .operator_core import (
    DEFAULT_HERMITICITY_TOL,
    PAULIS,
    SZ,
    as_matrix,
    dag,
    expm,
    gellmann_basis,
    random_hermitian,
    require_hermitian,
    trace_norm,
    unvec,
    vec,
)

PSD_TOL = 1e-8
TRACE_TOL = 1e-9


class StateValidationError(RuntimeError):
    def __init__(self, message: str, step: int | None = None, time: float | None = None):
        self.step = step
        self.time = time
        super().__init__(message)


@dataclass
class LindbladGenerator:
    """Drift and control Hamiltonians plus Lindblad operators V_k."""

    drift: np.ndarray
    controls: list = field(default_factory=list)
    lindblad_ops: list = field(default_factory=list)
    hermiticity_tol: float = DEFAULT_HERMITICITY_TOL

    def __post_init__(self):
        self.drift = require_hermitian(self.drift, self.hermiticity_tol, "drift Hamiltonian")
        n = self.drift.shape[0]
        self.controls = [require_hermitian(h, self.hermiticity_tol, f"control Hamiltonian {j}")
                         for j, h in enumerate(self.controls)]
        self.lindblad_ops = [as_matrix(v, square=True, name=f"Lindblad operator {k}")
                             for k, v in enumerate(self.lindblad_ops)]
        for m in self.controls + self.lindblad_ops:
            if m.shape != (n, n):
                raise ValueError(f"all matrices must be {n}x{n}, got {m.shape}")

    @property
    def dim(self) -> int:
        return self.drift.shape[0]

    @property
    def n_controls(self) -> int:
        return len(self.controls)

    def hamiltonian(self, u: Sequence[float] | None = None) -> np.ndarray:
        u = np.zeros(self.n_controls) if u is None else np.asarray(u, dtype=float)
        if u.shape != (self.n_controls,):
            raise ValueError(f"expected {self.n_controls} control amplitudes, got {u.shape}")
        h = self.drift.copy()
        for uj, hj in zip(u, self.controls):
            h = h + uj * hj
        return h

    def without_dissipation(self) -> "LindbladGenerator":
        return LindbladGenerator(self.drift, list(self.controls), [])


@dataclass
class PiecewiseSchedule:
    """Piecewise-constant controls: ``amplitudes[s]`` is held for ``durations[s]``."""

    durations: np.ndarray
    amplitudes: np.ndarray

    def __post_init__(self):
        self.durations = np.asarray(self.durations, dtype=float).reshape(-1)
        self.amplitudes = np.asarray(self.amplitudes, dtype=float)
        if self.amplitudes.ndim == 1:
            self.amplitudes = self.amplitudes.reshape(len(self.durations), -1)
        if self.amplitudes.shape[0] != len(self.durations):
            raise ValueError("one amplitude row per segment required")
        if np.any(self.durations < 0) or not np.all(np.isfinite(self.amplitudes)):
            raise ValueError("durations must be nonnegative and amplitudes finite")

    @classmethod
    def uniform(cls, total: float, amplitudes) -> "PiecewiseSchedule":
        amplitudes = np.atleast_2d(np.asarray(amplitudes, dtype=float))
        n = amplitudes.shape[0]
        return cls(np.full(n, total / n), amplitudes)

    @property
    def total(self) -> float:
        return float(np.sum(self.durations))


# ---------------------------------------------------------------------------
# superoperators

def hamiltonian_superop(h) -> np.ndarray:
    """Matrix of ``rho -> [H, rho]``: ``1 (x) H - H^T (x) 1``."""
    h = require_hermitian(h, name="Hamiltonian")
    one = np.eye(h.shape[0])
    return np.kron(one, h) - np.kron(h.T, one)


def dissipator_superop(ops: Sequence[np.ndarray], dim: int | None = None) -> np.ndarray:
    """Matrix of Gamma_L(rho) = 1/2 sum_k (V^dag V rho + rho V^dag V - 2 V rho V^dag)."""
    ops = [as_matrix(v, square=True, name="Lindblad operator") for v in ops]
    if not ops:
        if dim is None:
            raise ValueError("dim required for an empty operator list")
        return np.zeros((dim * dim, dim * dim), dtype=complex)
    n = ops[0].shape[0]
    if dim is not None and dim != n:
        raise ValueError(f"operators are {n}x{n}, expected {dim}x{dim}")
    one = np.eye(n)
    out = np.zeros((n * n, n * n), dtype=complex)
    for v in ops:
        if v.shape != (n, n):
            raise ValueError("Lindblad operators must share one shape")
        vdv = dag(v) @ v
        out += 0.5 * (np.kron(one, vdv) + np.kron(vdv.T, one)) - np.kron(v.conj(), v)
    return out


def generator_dissipator(g: LindbladGenerator) -> np.ndarray:
    return dissipator_superop(g.lindblad_ops, g.dim)


def full_generator(g: LindbladGenerator, u: Sequence[float] | None = None) -> np.ndarray:
    """``i * Hhat(H_d + sum_j u_j H_j) + Gammahat``."""
    return 1j * hamiltonian_superop(g.hamiltonian(u)) + generator_dissipator(g)


def apply(s: np.ndarray, rho: np.ndarray) -> np.ndarray:
    n = rho.shape[0]
    return unvec(s @ vec(rho), n)


def lindblad_rhs(g: LindbladGenerator, u, rho: np.ndarray) -> np.ndarray:
    """Direct right-hand side ``-i[H_u, rho] - Gamma_L(rho)``, no superoperators."""
    h = g.hamiltonian(u)
    out = -1j * (h @ rho - rho @ h)
    for v in g.lindblad_ops:
        vdv = dag(v) @ v
        out -= 0.5 * (vdv @ rho + rho @ vdv - 2 * v @ rho @ dag(v))
    return out


def unitary_superop(u: np.ndarray) -> np.ndarray:
    """Matrix of ``rho -> U rho U^dag``."""
    u = np.asarray(u)
    return np.kron(u.conj(), u)


# ---------------------------------------------------------------------------
# states and propagation

def validate_state(rho: np.ndarray, psd_tol: float = PSD_TOL, trace_tol: float = TRACE_TOL) -> None:
    herm = np.max(np.abs(rho - dag(rho)))
    if herm > trace_tol:
        raise StateValidationError(f"state not Hermitian (deviation {herm:.3e})")
    tr = np.trace(rho).real
    if abs(tr - 1) > trace_tol:
        raise StateValidationError(f"trace {tr:.12f} deviates from 1")
    lmin = np.linalg.eigvalsh((rho + dag(rho)) / 2)[0]
    if lmin < -psd_tol:
        raise StateValidationError(f"state not positive (lambda_min = {lmin:.3e})")


def _segments(schedule: PiecewiseSchedule | None, n_controls: int):
    if schedule is None:
        return np.zeros(0), np.zeros((0, n_controls))
    if schedule.amplitudes.shape[1] != n_controls:
        raise ValueError(f"schedule has {schedule.amplitudes.shape[1]} controls, "
                         f"generator has {n_controls}")
    return np.concatenate([[0.0], np.cumsum(schedule.durations)]), schedule.amplitudes


def propagate(g: LindbladGenerator, schedule: PiecewiseSchedule | None, rho0, grid,
              psd_tol: float = PSD_TOL, trace_tol: float = TRACE_TOL) -> list[np.ndarray]:
    """States on ``grid`` (strictly increasing from 0) under piecewise-constant controls.

    Controls are zero outside the schedule. Each output state is validated and
    a :class:`StateValidationError` names the offending grid step.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0 or grid[0] != 0 or np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be strictly increasing and start at 0")
    rho0 = as_matrix(rho0, square=True, name="initial state")
    if rho0.shape != (g.dim, g.dim):
        raise ValueError("initial state has wrong dimension")
    try:
        validate_state(rho0, psd_tol, trace_tol)
    except StateValidationError as exc:
        raise ValueError(f"invalid initial state: {exc}") from exc

    edges, amps = _segments(schedule, g.n_controls)
    zero_u = np.zeros(g.n_controls)
    cache: dict[int, np.ndarray] = {}

    def generator_for(seg: int) -> np.ndarray:
        if seg not in cache:
            cache[seg] = full_generator(g, amps[seg] if seg >= 0 else zero_u)
        return cache[seg]

    def segment_at(t: float) -> int:
        if edges.size == 0 or t >= edges[-1]:
            return -1
        return int(np.searchsorted(edges, t, side="right") - 1)

    v = vec(rho0).astype(complex)
    states = [rho0.copy()]
    for step in range(1, grid.size):
        t0, t1 = grid[step - 1], grid[step]
        cuts = [t0] + [e for e in edges if t0 < e < t1] + [t1]
        for a, b in zip(cuts[:-1], cuts[1:]):
            v = expm(-(b - a) * generator_for(segment_at(a))) @ v
        rho = unvec(v, g.dim)
        try:
            validate_state(rho, psd_tol, trace_tol)
        except StateValidationError as exc:
            raise StateValidationError(f"step {step} (t = {t1:g}): {exc}", step, t1) from exc
        states.append(rho)
    return states


def steady_state(l_hat: np.ndarray) -> np.ndarray:
    """Trace-one kernel vector of ``l_hat`` (smallest singular direction)."""
    n = int(round(np.sqrt(l_hat.shape[0])))
    _, _, vh = np.linalg.svd(l_hat)
    rho = unvec(vh[-1].conj(), n)
    rho = rho / np.trace(rho)
    return (rho + dag(rho)) / 2


# ---------------------------------------------------------------------------
# structural properties

def is_unital(g: LindbladGenerator, tol: float = 1e-10) -> bool:
    n = g.dim
    gamma_one = apply(generator_dissipator(g), np.eye(n, dtype=complex))
    scale = max(1.0, max((np.linalg.norm(v) ** 2 for v in g.lindblad_ops), default=0.0))
    return float(np.linalg.norm(gamma_one)) <= tol * scale


class NumericalCrossCheckError(RuntimeError):
    pass


def purity_contraction_margin(g: LindbladGenerator, t_grid) -> float:
    """``max_t sigma_max(expm(-t Gammahat)) - 1`` over the grid.

    vec is an isometry for the Hilbert-Schmidt norm, so the largest singular
    value is the operator norm on her(N).
    """
    gamma = generator_dissipator(g)
    worst = -np.inf
    for t in np.asarray(t_grid, dtype=float):
        s = np.linalg.svd(expm(-t * gamma), compute_uv=False)[0]
        worst = max(worst, s - 1.0)
    return float(worst)


def is_purity_decreasing(g: LindbladGenerator, t_grid, tol: float = 1e-10,
                         contraction_tol: float = 1e-9) -> bool:
    """Unitality verdict, cross-checked against Hilbert-Schmidt contractivity on ``t_grid``."""
    verdict = is_unital(g, tol)
    numeric = purity_contraction_margin(g, t_grid) <= contraction_tol
    if verdict != numeric:
        raise NumericalCrossCheckError(
            f"unitality says {verdict} but contraction check on the time grid says {numeric}")
    return verdict


def traceless_basis(n: int) -> list[np.ndarray]:
    return gellmann_basis(n)


def restrict_to_traceless(s: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Real ``(N^2-1) x (N^2-1)`` matrix of ``s`` on her_0(N) in the Gell-Mann basis.

    ``s`` must map traceless Hermitian matrices to traceless Hermitian ones.
    """
    s = np.asarray(s)
    n = int(round(np.sqrt(s.shape[0])))
    basis = gellmann_basis(n)
    fv = np.array([vec(f) for f in basis]).T  # columns vec(F_j)
    images = s @ fv
    scale = max(1.0, float(np.max(np.abs(s))) if s.size else 0.0)
    for j in range(images.shape[1]):
        img = unvec(images[:, j], n)
        if abs(np.trace(img)) > tol * scale:
            raise ValueError("superoperator does not preserve tracelessness")
        if np.max(np.abs(img - dag(img))) > tol * scale:
            raise ValueError("superoperator does not preserve Hermiticity")
    r = fv.conj().T @ images
    return np.ascontiguousarray(r.real)


def lift_from_traceless(r: np.ndarray, n: int, identity_image: np.ndarray | None = None) -> np.ndarray:
    """Superoperator acting as ``r`` on her_0(n).

    The identity is sent to ``identity_image`` (default: 0, i.e. a homogeneous generator).
    """
    basis = gellmann_basis(n)
    fv = np.array([vec(f) for f in basis]).T
    out = fv @ np.asarray(r, dtype=complex) @ fv.conj().T
    e0 = vec(np.eye(n)) / np.sqrt(n)
    if identity_image is not None:
        out = out + np.outer(vec(identity_image) / np.sqrt(n), e0.conj())
    return out


def is_double_commutator_form(g: LindbladGenerator, tol: float = 1e-10) -> bool:
    """True when every V_k is Hermitian, so Gamma_L = 1/2 sum_k ad_{V_k}^2."""
    return all(np.max(np.abs(v - dag(v))) <= tol * max(1.0, np.max(np.abs(v)))
               for v in g.lindblad_ops)


def trace_norm_contraction_ratio(s_t: np.ndarray, a: np.ndarray) -> float:
    """``||T(A)||_1 / ||A||_1`` for a Hermitian ``a``."""
    return trace_norm(apply(s_t, a)) / trace_norm(a)


# ---------------------------------------------------------------------------
# standard examples

def amplitude_damping(gamma: float, drift=None) -> LindbladGenerator:
    sm = np.array([[0, 1], [0, 0]], dtype=complex)  # |0><1|
    h = np.zeros((2, 2)) if drift is None else drift
    return LindbladGenerator(h, [], [np.sqrt(gamma) * sm])


def dephasing(gamma: float, drift=None, controls=(), axis=None) -> LindbladGenerator:
    """V = sqrt(gamma) * sigma (default sigma_z); Gamma on her_0 is diag(2g, 2g, 0) about the axis."""
    op = SZ if axis is None else axis
    h = np.zeros((2, 2)) if drift is None else drift
    return LindbladGenerator(h, list(controls), [np.sqrt(gamma) * op])


def depolarizing(gamma: float, drift=None, controls=()) -> LindbladGenerator:
    """Gamma restricted to her_0(2) equals gamma * identity."""
    h = np.zeros((2, 2)) if drift is None else drift
    return LindbladGenerator(h, list(controls), [np.sqrt(gamma / 4) * p for p in PAULIS])


def random_generator(n: int, rng: np.random.Generator, n_ops: int = 2,
                     n_controls: int = 0, scale: float = 1.0) -> LindbladGenerator:
    ops = [scale * (rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))) / np.sqrt(2 * n)
           for _ in range(n_ops)]
    return LindbladGenerator(random_hermitian(n, rng),
                             [random_hermitian(n, rng) for _ in range(n_controls)],
                             ops)
