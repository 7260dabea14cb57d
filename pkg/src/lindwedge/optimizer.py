"""Numerical control on the bilinear superoperator system.

Two engines live here: GRAPE over piecewise-constant amplitudes, and an
optimizer over products ``e^{Omega_n} ... e^{Omega_1}`` whose exponents are
drawn from ``i ad_H`` directions plus a cone of dissipators.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm_frechet, schur
from scipy.optimize import minimize, nnls

from .channel import QuantumChannel
from .lindblad import (
    LindbladGenerator,
    PiecewiseSchedule,
    full_generator,
    hamiltonian_superop,
    restrict_to_traceless,
)
from .operator_core import expm, gellmann_basis, vec
from .wedge import GeneratorCone, polar_traceless

DEFAULT_ITERS = 2000
DEFAULT_RESTARTS = 8
FD_STEP = 1e-5
FIDELITY_KINDS = ("full", "traceless")


class OptimizationError(FloatingPointError):
    pass


@dataclass
class ControlProblem:
    """Steer ``rho0 -> rho_target`` or realize ``target_map`` in time ``horizon``.

    ``fidelity="traceless"`` (maps only) compares the maps on the traceless
    Hermitian sector, ``tr(P0 T^dag P0 X) / (N^2 - 1)``, which makes the
    fidelity of a depolarized evolution exactly ``e^{-gamma T}`` times the
    unitary one.
    """

    generator: LindbladGenerator
    horizon: float
    segments: int
    rho0: np.ndarray | None = None
    rho_target: np.ndarray | None = None
    target_map: np.ndarray | None = None
    amplitude_bound: float | np.ndarray | None = None
    seed: int = 0
    fidelity: str = "full"

    def __post_init__(self):
        n = self.generator.dim
        if not self.horizon > 0:
            raise ValueError(f"horizon must be positive, got {self.horizon}")
        if int(self.segments) < 1:
            raise ValueError("need at least one segment")
        self.segments = int(self.segments)
        if self.fidelity not in FIDELITY_KINDS:
            raise ValueError(f"fidelity must be one of {FIDELITY_KINDS}")
        if self.target_map is not None:
            t = self.target_map.matrix if isinstance(self.target_map, QuantumChannel) else self.target_map
            self.target_map = np.asarray(t, dtype=complex)
            if self.target_map.shape != (n * n, n * n):
                raise ValueError(f"target map has shape {self.target_map.shape}, expected {(n * n, n * n)}")
        elif self.rho0 is not None and self.rho_target is not None:
            self.rho0 = np.asarray(self.rho0, dtype=complex)
            self.rho_target = np.asarray(self.rho_target, dtype=complex)
            for name, r in (("rho0", self.rho0), ("rho_target", self.rho_target)):
                if r.shape != (n, n):
                    raise ValueError(f"{name} has shape {r.shape}, expected {(n, n)}")
            if self.fidelity != "full":
                raise ValueError("traceless fidelity is defined for map targets only")
        else:
            raise ValueError("need either target_map or both rho0 and rho_target")
        if self.amplitude_bound is not None:
            b = np.broadcast_to(np.asarray(self.amplitude_bound, dtype=float), (self.n_controls,))
            if np.any(b <= 0):
                raise ValueError("amplitude bounds must be positive")

    @property
    def kind(self) -> str:
        return "map" if self.target_map is not None else "state"

    @property
    def n_controls(self) -> int:
        return self.generator.n_controls

    @property
    def dt(self) -> float:
        return self.horizon / self.segments

    def bounds(self) -> np.ndarray | None:
        if self.amplitude_bound is None:
            return None
        return np.broadcast_to(np.asarray(self.amplitude_bound, dtype=float), (self.n_controls,)).copy()

    def with_horizon(self, horizon: float) -> "ControlProblem":
        return dataclasses.replace(self, horizon=float(horizon))

    def closed(self) -> "ControlProblem":
        return dataclasses.replace(self, generator=self.generator.without_dissipation())

    def weight(self) -> np.ndarray:
        """``W`` with fidelity ``Re tr(W^dag X)``."""
        n = self.generator.dim
        if self.kind == "state":
            v0, vf = vec(self.rho0), vec(self.rho_target)
            return np.outer(vf, v0.conj()) / (np.linalg.norm(v0) * np.linalg.norm(vf))
        if self.fidelity == "full":
            return self.target_map / (n * n)
        e0 = vec(np.eye(n)) / np.sqrt(n)
        p0 = np.eye(n * n) - np.outer(e0, e0.conj())
        return p0 @ self.target_map @ p0 / (n * n - 1)


@dataclass
class ControlPulse:
    amplitudes: np.ndarray  # (n_seg, m)
    horizon: float

    def __post_init__(self):
        self.amplitudes = np.atleast_2d(np.asarray(self.amplitudes, dtype=float))
        if not np.all(np.isfinite(self.amplitudes)):
            raise ValueError("pulse amplitudes must be finite")

    @property
    def durations(self) -> np.ndarray:
        k = self.amplitudes.shape[0]
        return np.full(k, self.horizon / k)

    def schedule(self) -> PiecewiseSchedule:
        return PiecewiseSchedule.uniform(self.horizon, self.amplitudes)

    def to_dict(self) -> dict:
        return {"horizon": self.horizon, "durations": self.durations.tolist(),
                "amplitudes": self.amplitudes.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "ControlPulse":
        return cls(np.array(d["amplitudes"], dtype=float), float(d["horizon"]))


# ---------------------------------------------------------------------------
# propagators and fidelities

class _Engine:
    """Segment propagators and fidelity for a fixed problem."""

    def __init__(self, p: ControlProblem):
        self.p = p
        g = p.generator
        self.l0 = full_generator(g, np.zeros(g.n_controls))
        self.lj = [1j * hamiltonian_superop(h) for h in g.controls]
        self.w = p.weight()
        self.size = self.l0.shape[0]

    def segment(self, u: np.ndarray) -> np.ndarray:
        l = self.l0.copy()
        for uj, lj in zip(u, self.lj):
            l += uj * lj
        return expm(-self.p.dt * l)

    def propagator(self, amps: np.ndarray) -> np.ndarray:
        x = np.eye(self.size, dtype=complex)
        for u in amps:
            x = self.segment(u) @ x
        return x

    def fidelity_of(self, x: np.ndarray) -> float:
        return float(np.real(np.vdot(self.w, x)))

    def fidelity(self, amps: np.ndarray) -> float:
        return self.fidelity_of(self.propagator(amps))

    def fidelity_and_gradient(self, amps: np.ndarray, h_rel: float = FD_STEP):
        """Fidelity plus central finite differences, one segment at a time.

        With prefix ``B_s`` and suffix ``A_s`` held fixed the fidelity is
        ``Re <A_s^dag W B_s^dag, E_s>``, so each perturbation costs a single
        exponential.
        """
        k = amps.shape[0]
        segs = [self.segment(u) for u in amps]
        prefix = [np.eye(self.size, dtype=complex)]
        for e in segs:
            prefix.append(e @ prefix[-1])
        f = self.fidelity_of(prefix[-1])
        grad = np.zeros_like(amps)
        suffix = np.eye(self.size, dtype=complex)
        for s in range(k - 1, -1, -1):
            m = suffix.conj().T @ self.w @ prefix[s].conj().T
            for j in range(amps.shape[1]):
                h = h_rel * max(1.0, abs(amps[s, j]))
                up, dn = amps[s].copy(), amps[s].copy()
                up[j] += h
                dn[j] -= h
                fp = float(np.real(np.vdot(m, self.segment(up))))
                fm = float(np.real(np.vdot(m, self.segment(dn))))
                grad[s, j] = (fp - fm) / (2 * h)
            suffix = suffix @ segs[s]
        return f, grad


def propagator(p: ControlProblem, pulse: ControlPulse | np.ndarray) -> np.ndarray:
    amps = pulse.amplitudes if isinstance(pulse, ControlPulse) else np.atleast_2d(pulse)
    return _Engine(p).propagator(amps)


def fidelity(p: ControlProblem, pulse: ControlPulse | np.ndarray) -> float:
    amps = pulse.amplitudes if isinstance(pulse, ControlPulse) else np.atleast_2d(pulse)
    return _Engine(p).fidelity(amps)


def fd_gradient(p: ControlProblem, amplitudes, h_rel: float = FD_STEP) -> np.ndarray:
    return _Engine(p).fidelity_and_gradient(np.atleast_2d(np.asarray(amplitudes, dtype=float)), h_rel)[1]


def richardson_ratio(p: ControlProblem, amplitudes, h_rel: float = 1e-2) -> float:
    """``|g(h) - g(h/2)| / |g(h/2) - g(h/4)|``; close to 4 for central differences.

    The base step must sit where truncation error dominates roundoff.
    """
    e = _Engine(p)
    a = np.atleast_2d(np.asarray(amplitudes, dtype=float))
    g1, g2, g4 = (e.fidelity_and_gradient(a, h_rel / d)[1] for d in (1, 2, 4))
    return float(np.linalg.norm(g1 - g2) / np.linalg.norm(g2 - g4))


# ---------------------------------------------------------------------------
# GRAPE

@dataclass
class GrapeResult:
    pulse: ControlPulse
    fidelity: float
    trace: list
    iterations: int
    stop_reason: str
    seed: int

    def as_dict(self) -> dict:
        return {"fidelity": self.fidelity, "iterations": self.iterations,
                "stop_reason": self.stop_reason, "seed": self.seed, "pulse": self.pulse.to_dict()}


def initial_pulse(p: ControlProblem, seed: int | None = None, scale: float = 0.5) -> ControlPulse:
    rng = np.random.default_rng(p.seed if seed is None else seed)
    b = p.bounds()
    width = scale * (np.ones(p.n_controls) if b is None else np.minimum(b, 1.0))
    amps = rng.uniform(-1.0, 1.0, size=(p.segments, p.n_controls)) * width
    return ControlPulse(amps, p.horizon)


def _project(x: np.ndarray, b: np.ndarray | None) -> np.ndarray:
    return x if b is None else np.clip(x, -b, b)


def _lbfgs_direction(g: np.ndarray, memory: list) -> np.ndarray:
    # two-loop recursion for ascent on f
    q = g.copy()
    alphas = []
    for s, y, rho in reversed(memory):
        a = rho * np.dot(s, q)
        alphas.append(a)
        q -= a * y
    if memory:
        s, y, _ = memory[-1]
        q *= np.dot(s, y) / np.dot(y, y)
    for (s, y, rho), a in zip(memory, reversed(alphas)):
        b = rho * np.dot(y, q)
        q += (a - b) * s
    return q


def grape_optimize(p: ControlProblem, init: ControlPulse | np.ndarray | str | None = None,
                   iters: int = DEFAULT_ITERS, step: float = 0.1, fd_step: float = FD_STEP,
                   memory: int = 10, armijo: float = 1e-4, max_backtracks: int = 40,
                   target: float | None = None) -> GrapeResult:
    """Maximize the fidelity over piecewise-constant amplitudes.

    Search directions come from limited-memory BFGS on the finite-difference
    gradient (falling back to the gradient itself); a step is accepted only if
    the fidelity strictly increases, so the trace is monotone. Bounds are
    enforced by projection. ``init`` may be a pulse, an amplitude array,
    ``"zeros"`` or ``None`` (seeded random). ``step`` is the first trial step
    measured in the largest amplitude change.
    """
    if p.segments * p.n_controls < 1:
        raise ValueError("need at least one amplitude to optimize")
    if init is None:
        amps = initial_pulse(p).amplitudes
    elif isinstance(init, str):
        if init != "zeros":
            raise ValueError(f"unknown init {init!r}")
        amps = np.zeros((p.segments, p.n_controls))
    else:
        amps = init.amplitudes if isinstance(init, ControlPulse) else np.atleast_2d(init)
        amps = np.array(amps, dtype=float)
        if amps.shape != (p.segments, p.n_controls):
            raise ValueError(f"init has shape {amps.shape}, expected {(p.segments, p.n_controls)}")
        if not np.all(np.isfinite(amps)):
            raise ValueError("init amplitudes must be finite")
    b = p.bounds()
    x = _project(amps.reshape(-1).copy(), None if b is None else np.tile(b, p.segments))
    bflat = None if b is None else np.tile(b, p.segments)
    shape = (p.segments, p.n_controls)
    eng = _Engine(p)

    def evaluate(v):
        f, g = eng.fidelity_and_gradient(v.reshape(shape), fd_step)
        if not np.isfinite(f) or not np.all(np.isfinite(g)):
            raise OptimizationError(f"non-finite fidelity or gradient at amplitudes with max |u| = "
                                    f"{np.max(np.abs(v)):.3e}")
        return f, g.reshape(-1)

    f, g = evaluate(x)
    trace = [f]
    mem: list = []
    reason = "iteration cap"
    it = 0
    while it < iters:
        if target is not None and f >= target:
            reason = "target reached"
            break
        gp = g.copy()
        if bflat is not None:
            # freeze coordinates pushing against an active bound
            gp[(x >= bflat) & (g > 0)] = 0.0
            gp[(x <= -bflat) & (g < 0)] = 0.0
        if not np.any(gp):
            reason = "stationary"
            break
        accepted = False
        for use_memory in ((True, False) if mem else (False,)):
            d = _lbfgs_direction(gp, mem) if use_memory else gp
            if np.dot(d, gp) <= 0:
                continue
            alpha = 1.0 if use_memory else step / np.max(np.abs(gp))
            for _ in range(max_backtracks):
                x_new = _project(x + alpha * d, bflat)
                f_new, g_new = evaluate(x_new)
                if f_new > f + armijo * np.dot(g, x_new - x) and f_new > f:
                    accepted = True
                    break
                alpha *= 0.5
            if accepted:
                break
            mem.clear()
        if not accepted:
            reason = "line search stalled"
            break
        s, y = x_new - x, -(g_new - g)
        sy = np.dot(s, y)
        if sy > 1e-14 * np.linalg.norm(s) * np.linalg.norm(y):
            mem.append((s, y, 1.0 / sy))
            if len(mem) > memory:
                mem.pop(0)
        x, f, g = x_new, f_new, g_new
        trace.append(f)
        it += 1
    return GrapeResult(ControlPulse(x.reshape(shape), p.horizon), f, trace, it, reason, p.seed)


def _best_of(runs: list[tuple[GrapeResult, int]]) -> GrapeResult:
    # deterministic merge: highest fidelity, ties broken by lowest seed
    return sorted(runs, key=lambda r: (-r[0].fidelity, r[1]))[0][0]


# ---------------------------------------------------------------------------
# sweeps over the horizon

@dataclass
class SweepResult:
    times: np.ndarray
    fidelities: np.ndarray
    gamma: float
    results: list = field(default_factory=list, repr=False)

    @property
    def scaled(self) -> np.ndarray:
        return self.fidelities * np.exp(-self.gamma * self.times)

    @property
    def t_prime_star(self) -> float:
        return float(self.times[int(np.argmax(self.scaled))])

    def rows(self) -> list[dict]:
        return [{"T": float(t), "g": float(g), "g_scaled": float(s)}
                for t, g, s in zip(self.times, self.fidelities, self.scaled)]

    def as_dict(self) -> dict:
        return {"gamma": self.gamma, "t_prime_star": self.t_prime_star, "table": self.rows()}


def time_fidelity_sweep(p: ControlProblem, t_grid, gamma: float | None = None,
                        iters: int = DEFAULT_ITERS, restarts: int = 0, **grape_kw) -> SweepResult:
    """``g(T)`` on an increasing grid, each point warm-started from the previous one.

    ``restarts`` extra seeded random starts run at every grid point. With a
    WH rate ``gamma`` the table also carries ``g(T) exp(-gamma T)`` and its
    argmax ``T'_*``.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.size == 0 or np.any(t_grid <= 0) or np.any(np.diff(t_grid) <= 0):
        raise ValueError("time grid must be positive and strictly increasing")
    results, values = [], []
    prev = None
    for i, t in enumerate(t_grid):
        q = p.with_horizon(t)
        runs = []
        if prev is not None:
            runs.append((grape_optimize(q, prev.amplitudes, iters, **grape_kw), q.seed))
        else:
            runs.append((grape_optimize(q, None, iters, **grape_kw), q.seed))
        for r in range(restarts):
            qs = dataclasses.replace(q, seed=q.seed + 1 + r)
            runs.append((grape_optimize(qs, None, iters, **grape_kw), qs.seed))
        best = _best_of(runs)
        results.append(best)
        values.append(best.fidelity)
        prev = best.pulse
    return SweepResult(t_grid, np.array(values), 0.0 if gamma is None else float(gamma), results)


@dataclass
class MinimalTimeEstimate:
    t_upper_bound: float | None
    reached: bool
    threshold: float
    best_fidelity: float
    best_time: float
    table: list
    label: str = "upper bound on T*"

    def as_dict(self) -> dict:
        return {"t_upper_bound": self.t_upper_bound, "reached": self.reached,
                "threshold": self.threshold, "best_fidelity": self.best_fidelity,
                "best_time": self.best_time, "table": self.table, "label": self.label}


def minimal_time_estimate(p: ControlProblem, threshold: float, t_grid, iters: int = DEFAULT_ITERS,
                          restarts: int = 2, **grape_kw) -> MinimalTimeEstimate:
    """Smallest grid time whose optimized closed-system fidelity reaches ``threshold``.

    Dissipation is dropped. ``T = 0`` is allowed and scores the identity map.
    Returns an unreached estimate carrying the best value when no grid point
    qualifies.
    """
    q0 = p.closed()
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.size == 0 or np.any(t_grid < 0) or np.any(np.diff(t_grid) <= 0):
        raise ValueError("time grid must be nonnegative and strictly increasing")
    eng = _Engine(q0)
    table = []
    best = (-np.inf, float("nan"))
    prev = None
    for t in t_grid:
        if t == 0:
            f = eng.fidelity_of(np.eye(eng.size, dtype=complex))
        else:
            q = q0.with_horizon(t)
            runs = [(grape_optimize(q, prev.amplitudes if prev is not None else None, iters,
                                    target=threshold, **grape_kw), q.seed)]
            for r in range(restarts):
                if runs[0][0].fidelity >= threshold:
                    break
                qs = dataclasses.replace(q, seed=q.seed + 1 + r)
                runs.append((grape_optimize(qs, None, iters, target=threshold, **grape_kw), qs.seed))
            res = _best_of(runs)
            f, prev = res.fidelity, res.pulse
        table.append({"T": float(t), "fidelity": float(f)})
        if f > best[0]:
            best = (float(f), float(t))
        if f >= threshold:
            return MinimalTimeEstimate(float(t), True, threshold, best[0], best[1], table)
    return MinimalTimeEstimate(None, False, threshold, best[0], best[1], table)


# ---------------------------------------------------------------------------
# products of cone exponentials

@dataclass
class WedgeProduct:
    """Factors ``Omega_i = -sum_a h_ia A_a - sum_k lambda_ik G_k`` on her_0(N)."""

    hamiltonian_coeffs: np.ndarray  # (n, n_h)
    cone_coeffs: np.ndarray  # (n, K)

    def __post_init__(self):
        self.hamiltonian_coeffs = np.atleast_2d(np.asarray(self.hamiltonian_coeffs, dtype=float))
        self.cone_coeffs = np.atleast_2d(np.asarray(self.cone_coeffs, dtype=float))
        if np.any(self.cone_coeffs < 0):
            raise ValueError("cone coefficients must be nonnegative")

    @property
    def n(self) -> int:
        return self.cone_coeffs.shape[0]

    @property
    def dissipation(self) -> float:
        return float(np.sum(self.cone_coeffs))

    def to_dict(self) -> dict:
        return {"n": self.n, "hamiltonian_coeffs": self.hamiltonian_coeffs.tolist(),
                "cone_coeffs": self.cone_coeffs.tolist()}


def _real_rep(t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """her_0 block and translation column of a Hermiticity-preserving map."""
    n = int(round(np.sqrt(t.shape[0])))
    r = restrict_to_traceless(t)
    image = (t @ vec(np.eye(n))) / np.sqrt(n)
    fs = gellmann_basis(n)
    tau = np.array([np.real(np.vdot(vec(f), image)) for f in fs])
    return r, tau


@dataclass
class WedgeProductResult:
    product: WedgeProduct
    residual: float
    schedule: list
    hamiltonian_basis: list = field(repr=False, default_factory=list)
    seed: int = 0
    restarts: int = 0

    def omegas(self, cone: GeneratorCone) -> list[np.ndarray]:
        dirs = [restrict_to_traceless(1j * hamiltonian_superop(f)) for f in self.hamiltonian_basis]
        return [_omega(h, lam, dirs, cone.generators)
                for h, lam in zip(self.product.hamiltonian_coeffs, self.product.cone_coeffs)]

    def factor_superops(self, cone: GeneratorCone) -> list[np.ndarray]:
        """Full ``N^2 x N^2`` factors ``expm(-(i ad_H + sum lambda_k Gammahat_k))``."""
        if cone.lifts is None:
            raise ValueError("cone carries no full-space dissipators")
        out = []
        for h, lam in zip(self.product.hamiltonian_coeffs, self.product.cone_coeffs):
            ham = sum(c * f for c, f in zip(h, self.hamiltonian_basis))
            gen = 1j * hamiltonian_superop(ham) + sum(c * lf for c, lf in zip(lam, cone.lifts))
            out.append(expm(-gen))
        return out

    def as_dict(self) -> dict:
        return {"residual": self.residual, "n": self.product.n,
                "dissipation": self.product.dissipation,
                "schedule": [{"n": k, "residual": r} for k, r in self.schedule],
                "seed": self.seed, "restarts": self.restarts, "product": self.product.to_dict()}


def _omega(h, lam, dirs, gens) -> np.ndarray:
    return -np.tensordot(h, dirs, axes=1) - np.tensordot(lam, gens, axes=1)


def _rotation_log(o: np.ndarray) -> np.ndarray | None:
    """Real skew-symmetric ``K`` with ``expm(K) = o`` for orthogonal ``o``, or None."""
    t, z = schur(o, output="real")
    k = np.zeros_like(t)
    minus = []
    i = 0
    while i < t.shape[0]:
        if i + 1 < t.shape[0] and abs(t[i + 1, i]) > 1e-12:
            theta = np.arctan2(t[i + 1, i], t[i, i])
            k[i + 1, i], k[i, i + 1] = theta, -theta
            i += 2
        else:
            if t[i, i] < 0:
                minus.append(i)
            i += 1
    if len(minus) % 2:
        return None
    # pairs of -1 eigenvalues are half turns in their common plane
    for a, b in zip(minus[::2], minus[1::2]):
        k[b, a], k[a, b] = np.pi, -np.pi
    return z @ k @ z.T


def _structured_start(t: np.ndarray, dirs: np.ndarray, gens: np.ndarray, m: int) -> np.ndarray:
    """Polar start ``T|her_0 = P O``: the rotation ``O`` first, then dissipation for ``P``."""
    nh, k = len(dirs), len(gens)
    x = np.zeros((m, nh + k))
    pos, o, _ = polar_traceless(t)
    w, v = np.linalg.eigh(pos)
    if w[0] > 1e-12:
        log_p = (v * np.log(w)) @ v.T
        lam, _ = nnls(gens.reshape(k, -1).T, -log_p.reshape(-1))
        x[min(1, m - 1), nh:] = lam
    rot = _rotation_log(o)
    if rot is not None:
        h, *_ = np.linalg.lstsq(dirs.reshape(nh, -1).T, -rot.reshape(-1), rcond=None)
        x[0, :nh] = h
    return x.reshape(-1)


class _ProductObjective:
    def __init__(self, target: np.ndarray, dirs: np.ndarray, gens: np.ndarray, n: int):
        self.r, self.tau = _real_rep(target)
        self.dirs, self.gens, self.n = dirs, gens, n
        self.nh, self.k = len(dirs), len(gens)
        self.size = self.r.shape[0]
        # squared HS norm of the whole target: unit trace row, her_0 block, translation
        self.norm2 = 1.0 + float(np.sum(self.r ** 2) + np.sum(self.tau ** 2))
        self.offset = float(np.sum(self.tau ** 2))

    def split(self, x: np.ndarray):
        x = x.reshape(self.n, self.nh + self.k)
        return x[:, :self.nh], x[:, self.nh:]

    def residual(self, x: np.ndarray) -> float:
        h, lam = self.split(x)
        p = np.eye(self.size)
        for hi, li in zip(h, lam):
            p = expm(_omega(hi, li, self.dirs, self.gens)).real @ p
        return float(np.sqrt((np.sum((p - self.r) ** 2) + self.offset) / self.norm2))

    def __call__(self, x: np.ndarray):
        h, lam = self.split(x)
        omegas = [_omega(hi, li, self.dirs, self.gens) for hi, li in zip(h, lam)]
        es = [expm(o).real for o in omegas]
        right = [np.eye(self.size)]
        for e in es:
            right.append(e @ right[-1])
        diff = right[-1] - self.r
        val = 0.5 * (np.sum(diff ** 2) + self.offset) / self.norm2
        resid = diff / self.norm2
        grad = np.zeros((self.n, self.nh + self.k))
        left = np.eye(self.size)
        for i in range(self.n - 1, -1, -1):
            g_e = left.T @ resid @ right[i].T
            # adjoint of the Frechet derivative: <G, L(O, E)> = <L(O^T, G), E>
            g_o = expm_frechet(omegas[i].T, g_e, compute_expm=False)
            grad[i, :self.nh] = -np.tensordot(self.dirs, g_o, axes=([1, 2], [0, 1]))
            grad[i, self.nh:] = -np.tensordot(self.gens, g_o, axes=([1, 2], [0, 1]))
            left = left @ es[i]
        return float(val), grad.reshape(-1)


def wedge_product_optimize(target: QuantumChannel | np.ndarray, cone: GeneratorCone, n: int = 1,
                           iters: int = DEFAULT_ITERS, seed: int = 0, restarts: int = DEFAULT_RESTARTS,
                           n_max: int | None = None, tol: float = 1e-6,
                           hamiltonian_basis=None) -> WedgeProductResult:
    """Best approximation of ``target`` by ``e^{Omega_n} ... e^{Omega_1}``.

    The relative Hilbert-Schmidt residual of the full superoperators is
    minimized by bound-constrained L-BFGS with an exact gradient, keeping
    every ``lambda >= 0``. Each factor count gets ``restarts`` seeded random
    starts plus, above the first count, a warm start extending the previous
    best by an identity factor, so the residual never increases with ``n``.
    While the residual exceeds ``tol`` the count grows up to ``n_max``.
    ``hamiltonian_basis`` restricts the Hamiltonian directions (default: all
    of su(N)).
    """
    t = target.matrix if isinstance(target, QuantumChannel) else np.asarray(target, dtype=complex)
    dim = cone.dim
    if t.shape != (dim * dim, dim * dim):
        raise ValueError(f"target shape {t.shape} does not match cone dimension {dim}")
    e1 = vec(np.eye(dim))
    if np.max(np.abs(t.conj().T @ e1 - e1)) > 1e-8:
        raise ValueError("target is not trace preserving")
    basis = gellmann_basis(dim) if hamiltonian_basis is None else [np.asarray(b, dtype=complex)
                                                                    for b in hamiltonian_basis]
    dirs = np.array([restrict_to_traceless(1j * hamiltonian_superop(f)) for f in basis])
    gens = np.array(cone.generators)
    n_max = n if n_max is None else max(n, n_max)
    nh, k = len(dirs), len(gens)

    r_target, _ = _real_rep(t)
    sign, logdet = np.linalg.slogdet(r_target)
    mean_trace = float(np.mean([np.trace(g) for g in gens]))
    decay = max(0.0, -logdet) if sign != 0 else 1.0

    schedule = []
    best_x, best_val = None, np.inf
    # a deterministic polar start precedes the seeded random restarts
    for m in range(n, n_max + 1):
        obj = _ProductObjective(t, dirs, gens, m)
        bounds = [(None, None)] * nh + [(0.0, None)] * k
        lam_mask = np.tile(np.r_[np.zeros(nh, bool), np.ones(k, bool)], m)
        starts = [_structured_start(t, dirs, gens, m)]
        if best_x is not None:
            prev = best_x.reshape(m - 1, nh + k)
            starts.append(np.vstack([prev, np.zeros((1, nh + k))]).reshape(-1))
        for r in range(restarts):
            rng = np.random.default_rng([seed, m, r])
            h0 = rng.normal(0.0, 1.0, size=(m, nh))
            lam0 = rng.uniform(0.0, 2.0, size=(m, k)) * decay / (m * k * max(mean_trace, 1e-12)) * (dim * dim - 1)
            starts.append(np.hstack([h0, lam0]).reshape(-1))
        round_best = (np.inf, None)
        for x0 in starts:
            f0 = obj(x0)[0]
            sol = minimize(obj, x0, jac=True, method="L-BFGS-B", bounds=bounds * m,
                           options={"maxiter": iters, "ftol": 1e-16, "gtol": 1e-14, "maxcor": 20})
            x, val = (sol.x, float(sol.fun)) if sol.fun <= f0 else (x0, f0)
            x = x.copy()
            x[lam_mask] = np.maximum(x[lam_mask], 0.0)
            if val < round_best[0]:
                round_best = (val, x)
        best_val, best_x = round_best
        resid = obj.residual(best_x)
        schedule.append((m, resid))
        if resid <= tol:
            break
    h, lam = _ProductObjective(t, dirs, gens, len(schedule) + n - 1).split(best_x)
    product = WedgeProduct(h.copy(), lam.copy())
    return WedgeProductResult(product, schedule[-1][1], schedule, basis, seed, restarts)
