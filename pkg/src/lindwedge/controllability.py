"""Lie closures and the reachability / controllability tests built on them."""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import Sequence

import numpy as np

from .lindblad import (
    LindbladGenerator,
    generator_dissipator,
    hamiltonian_superop,
    is_unital,
    restrict_to_traceless,
)
from .operator_core import (
    DEFAULT_RANK_TOL,
    I2,
    SX,
    SY,
    SZ,
    kron_all,
    orthonormalize,
    traceless_part,
)

CERTIFY_TOL = 1e-7


class ClosureTruncated(RuntimeError):
    def __init__(self, message: str, partial: "LieBasis"):
        self.partial = partial
        super().__init__(message)


@dataclass
class LieBasis:
    """Orthonormal (real Hilbert-Schmidt) basis of a computed Lie closure."""

    elements: list
    generations: int
    ambient: str = ""
    certified: bool = False
    certificate_residual: float = float("nan")
    ill_conditioned: bool = False

    @property
    def dim(self) -> int:
        return len(self.elements)


def _flat(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m).reshape(-1)
    if np.iscomplexobj(m):
        return np.concatenate([m.real, m.imag])
    return m.astype(float)


def _unflat(v: np.ndarray, shape, is_complex: bool) -> np.ndarray:
    if is_complex:
        k = v.size // 2
        return (v[:k] + 1j * v[k:]).reshape(shape)
    return v.reshape(shape)


def _closure(generators: Sequence[np.ndarray], rank_tol: float, max_dim: int):
    gens = [np.asarray(g) for g in generators]
    if not gens:
        return [], 0, None, False
    shape = gens[0].shape
    is_complex = any(np.iscomplexobj(g) for g in gens)
    gens = [g.astype(complex) if is_complex else g.astype(float) for g in gens]
    seed = orthonormalize(gens, rank_tol).elements
    if not seed:
        return [], 0, shape, False
    q = np.array([_flat(e) for e in seed]).reshape(len(seed), -1)
    mats = list(seed)
    frontier = list(range(len(mats)))
    generations = 0
    while frontier:
        generations += 1
        new: list[int] = []
        fset = set(frontier)
        for i in frontier:
            for j in range(len(mats)):
                if j == i or (j < i and j in fset):
                    continue
                b = mats[i] @ mats[j] - mats[j] @ mats[i]
                w = _flat(b)
                nb = np.linalg.norm(w)
                if nb <= rank_tol:
                    continue
                for _ in range(2):
                    w = w - q.T @ (q @ w)
                nw = np.linalg.norm(w)
                if nw <= rank_tol * max(1.0, nb):
                    continue
                w /= nw
                q = np.vstack([q, w])
                mats.append(_unflat(w, shape, is_complex))
                new.append(len(mats) - 1)
                if len(mats) > max_dim:
                    return mats, generations, shape, True
        frontier = new
    return mats, generations, shape, False


def _certificate(mats: list) -> float:
    if not mats:
        return 0.0
    q = np.array([_flat(m) for m in mats])
    worst = 0.0
    for a, b in combinations(mats, 2):
        w = _flat(a @ b - b @ a)
        nb = np.linalg.norm(w)
        if nb == 0:
            continue
        worst = max(worst, float(np.linalg.norm(w - q.T @ (q @ w))) / max(1.0, nb))
    return worst


def lie_closure(generators: Sequence[np.ndarray], rank_tol: float = DEFAULT_RANK_TOL,
                max_dim: int = 4096, certify: bool = True, ambient: str = "") -> LieBasis:
    """Real Lie algebra generated by ``generators`` (square real or complex matrices).

    Brackets every new element against the current basis until a sweep adds
    nothing. With ``certify`` the result is recomputed at a looser tolerance;
    a dimension mismatch sets ``ill_conditioned``.
    """
    mats, gens, _, truncated = _closure(generators, rank_tol, max_dim)
    basis = LieBasis(mats, gens, ambient)
    if truncated:
        raise ClosureTruncated(f"closure exceeded max_dim={max_dim}", basis)
    if certify:
        basis.certificate_residual = _certificate(mats)
        basis.certified = basis.certificate_residual <= CERTIFY_TOL
        if rank_tol < CERTIFY_TOL:
            loose, _, _, _ = _closure(generators, CERTIFY_TOL, max_dim)
            basis.ill_conditioned = len(loose) != len(mats)
    return basis


# ---------------------------------------------------------------------------
# closed systems

def skew(hs: Sequence[np.ndarray]) -> list[np.ndarray]:
    """``i H`` for the traceless part of each Hamiltonian (elements of su(N))."""
    return [1j * traceless_part(np.asarray(h, dtype=complex)) for h in hs]


@dataclass
class HControllabilityReport:
    dim: int
    target_dim: int
    sufficient_condition_met: bool
    label: str = "sufficient condition (k_c = su(N))"

    def as_dict(self) -> dict:
        return {"k_c_dim": self.dim, "su_dim": self.target_dim,
                "sufficient_condition_met": self.sufficient_condition_met, "label": self.label}


def h_controllability_test(g: LindbladGenerator, rank_tol: float = DEFAULT_RANK_TOL) -> HControllabilityReport:
    n = g.dim
    kc = lie_closure(skew(g.controls), rank_tol, ambient="su(N)")
    return HControllabilityReport(kc.dim, n * n - 1, kc.dim == n * n - 1)


@dataclass
class WHControllabilityReport:
    k_d_dim: int
    target_dim: int
    gamma: float
    scalar_deviation: float
    sufficient_condition_met: bool
    label: str = "sufficient condition (k_d = su(N), Gamma = gamma*1 on her_0)"

    def scaling_factor(self, t_star: float) -> float:
        """Smallest lambda with Ad_U in lambda * closure(P): exp(gamma * T*)."""
        return float(np.exp(self.gamma * t_star))

    def as_dict(self) -> dict:
        return {"k_d_dim": self.k_d_dim, "su_dim": self.target_dim, "gamma": self.gamma,
                "scalar_deviation": self.scalar_deviation,
                "sufficient_condition_met": self.sufficient_condition_met, "label": self.label}


def wh_controllability_test(g: LindbladGenerator, tol: float = 1e-10,
                            rank_tol: float = DEFAULT_RANK_TOL) -> WHControllabilityReport:
    n = g.dim
    if not is_unital(g):
        raise ValueError("WH-controllability test needs a unital generator")
    kd = lie_closure(skew([g.drift] + g.controls), rank_tol, ambient="su(N)")
    r = restrict_to_traceless(generator_dissipator(g))
    gamma = float(np.trace(r)) / (n * n - 1)
    dev = float(np.linalg.norm(r - gamma * np.eye(n * n - 1)))
    met = kd.dim == n * n - 1 and dev <= tol * max(1.0, abs(gamma))
    return WHControllabilityReport(kd.dim, n * n - 1, gamma, dev, met)


# ---------------------------------------------------------------------------
# open systems on her_0(N)

@dataclass
class AccessibilityReport:
    dim: int
    target_dim: int
    accessible: bool
    ill_conditioned: bool = False

    def as_dict(self) -> dict:
        return {"s_open_dim": self.dim, "gl_her0_dim": self.target_dim,
                "accessible": self.accessible, "ill_conditioned": self.ill_conditioned}


def open_system_generators(g: LindbladGenerator) -> list[np.ndarray]:
    """``i ad_{H_d} + Gamma_L`` and ``i ad_{H_j}`` as real matrices on her_0(N)."""
    drift = 1j * hamiltonian_superop(g.drift) + generator_dissipator(g)
    out = [restrict_to_traceless(drift)]
    out += [restrict_to_traceless(1j * hamiltonian_superop(h)) for h in g.controls]
    return out


def system_algebra(g: LindbladGenerator, rank_tol: float = DEFAULT_RANK_TOL) -> LieBasis:
    if not is_unital(g):
        raise ValueError("homogeneous reduction needs a unital generator; "
                         "non-unital systems require the affine variant (not supported)")
    return lie_closure(open_system_generators(g), rank_tol, ambient="gl(her_0(N))")


def accessibility_test(g: LindbladGenerator, rank_tol: float = DEFAULT_RANK_TOL) -> AccessibilityReport:
    s = system_algebra(g, rank_tol)
    target = (g.dim ** 2 - 1) ** 2
    return AccessibilityReport(s.dim, target, s.dim == target, s.ill_conditioned)


# ---------------------------------------------------------------------------
# spin graphs

@dataclass
class SpinGraph:
    n: int
    couplings: list = field(default_factory=list)

    def __post_init__(self):
        seen = set()
        clean = []
        for edge in self.couplings:
            k, l = int(edge[0]), int(edge[1])
            j = float(edge[2]) if len(edge) > 2 else 1.0
            if not 1 <= k < l <= self.n:
                raise ValueError(f"coupling ({k}, {l}) must satisfy 1 <= k < l <= {self.n}")
            if j == 0:
                raise ValueError(f"coupling ({k}, {l}) has zero strength")
            if (k, l) in seen:
                raise ValueError(f"duplicate coupling ({k}, {l})")
            seen.add((k, l))
            clean.append((k, l, j))
        self.couplings = clean


def connected_components(graph: SpinGraph) -> list[list[int]]:
    parent = list(range(graph.n + 1))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for k, l, _ in graph.couplings:
        rk, rl = find(k), find(l)
        if rk != rl:
            parent[max(rk, rl)] = min(rk, rl)
    groups: dict[int, list[int]] = {}
    for v in range(1, graph.n + 1):
        groups.setdefault(find(v), []).append(v)
    return sorted(groups.values())


def local_pauli(n: int, k: int, p: np.ndarray) -> np.ndarray:
    """``p`` acting on qubit ``k`` (1-based) of ``n``."""
    return kron_all(*[p if q == k else I2 for q in range(1, n + 1)])


def ising_system(graph: SpinGraph) -> LindbladGenerator:
    """Drift sum J_kl Z_k Z_l with local X_k, Y_k controls (closed)."""
    n = graph.n
    drift = np.zeros((2 ** n, 2 ** n), dtype=complex)
    for k, l, j in graph.couplings:
        drift += j * local_pauli(n, k, SZ) @ local_pauli(n, l, SZ)
    controls = []
    for k in range(1, n + 1):
        controls += [local_pauli(n, k, SX), local_pauli(n, k, SY)]
    return LindbladGenerator(drift, controls, [])


@dataclass
class SpinGraphReport:
    components: list
    group: str
    predicted_dim: int
    closure_dim: int | None = None

    @property
    def verified(self) -> bool | None:
        return None if self.closure_dim is None else self.closure_dim == self.predicted_dim

    def as_dict(self) -> dict:
        return {"components": self.components, "group": self.group,
                "predicted_dim": self.predicted_dim, "closure_dim": self.closure_dim,
                "verified": self.verified}


def spin_graph_analysis(graph: SpinGraph, verify: bool | None = None,
                        rank_tol: float = DEFAULT_RANK_TOL) -> SpinGraphReport:
    """Reachable group SU(2^n1) (x) ... (x) SU(2^nr) from the graph's components.

    ``verify`` (default: n <= 3) also computes the closure of the Ising system.
    """
    comps = connected_components(graph)
    sizes = [len(c) for c in comps]
    group = " (x) ".join(f"SU({2 ** s})" for s in sizes)
    predicted = sum(4 ** s - 1 for s in sizes)
    report = SpinGraphReport(comps, group, predicted)
    if verify is None:
        verify = graph.n <= 3
    if verify:
        sys = ising_system(graph)
        report.closure_dim = lie_closure(skew([sys.drift] + sys.controls), rank_tol,
                                         certify=False).dim
    return report
