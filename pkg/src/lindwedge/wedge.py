"""Finitely generated cones of PSD dissipators on her_0(N).

The conjugation-orbit cone ``conv{lambda Theta Gamma Theta^T}`` is infinite;
here it is sampled, so every cone is an inner approximation and every
non-membership verdict is relative to the sampled generators.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
from scipy.optimize import nnls

from .lindblad import hamiltonian_superop, restrict_to_traceless, unitary_superop
from .operator_core import SX, SY, SZ, expm, gellmann_basis, orthonormalize, random_unitary

SAMPLED_LABEL = "relative to sampled cone"


@dataclass
class GeneratorCone:
    """Convex cone spanned by PSD operators on her_0(N) (real symmetric matrices)."""

    dim: int
    generators: list
    provenance: str = "user-supplied"
    sample_count: int = 0
    seed: int | None = None
    base: np.ndarray | None = None
    lifts: list | None = None  # full N^2 x N^2 dissipator superoperators, when known
    psd_tol: float = 1e-10

    def __post_init__(self):
        size = self.dim * self.dim - 1
        gens = [np.asarray(g, dtype=float) for g in self.generators]
        if not gens:
            raise ValueError("a cone needs at least one generator")
        for k, g in enumerate(gens):
            if g.shape != (size, size):
                raise ValueError(f"generator {k} has shape {g.shape}, expected {(size, size)}")
            scale = max(1.0, float(np.max(np.abs(g))))
            if np.max(np.abs(g - g.T)) > self.psd_tol * scale:
                raise ValueError(f"generator {k} is not symmetric")
            w = np.linalg.eigvalsh((g + g.T) / 2)
            if w[0] < -self.psd_tol * max(1.0, w[-1]):
                raise ValueError(f"generator {k} is not positive semidefinite (lambda_min {w[0]:.3e})")
            # trace is a strictly positive functional on nonzero PSD generators,
            # which certifies that the cone is pointed
            if np.trace(g) <= self.psd_tol * scale:
                raise ValueError(f"generator {k} is zero")
        self.generators = [(g + g.T) / 2 for g in gens]

    @property
    def matrix(self) -> np.ndarray:
        """Generators as columns of a ``(size^2, K)`` array."""
        return np.array([g.reshape(-1) for g in self.generators]).T

    def combine(self, coefficients) -> np.ndarray:
        return np.tensordot(np.asarray(coefficients, dtype=float), np.array(self.generators), axes=1)

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "provenance": self.provenance,
            "sample_count": self.sample_count,
            "seed": self.seed,
            "generators": [g.tolist() for g in self.generators],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorCone":
        return cls(d["dim"], [np.array(g) for g in d["generators"]], d.get("provenance", "user-supplied"),
                   d.get("sample_count", 0), d.get("seed"))


def deterministic_unitaries(n: int) -> list[np.ndarray]:
    """Identity, plus quarter turns about the Pauli axes when n = 2."""
    out = [np.eye(n, dtype=complex)]
    if n == 2:
        for p in (SX, SY, SZ):
            for sign in (1, -1):
                out.append(expm(-1j * sign * np.pi / 4 * p))
    return out


def conjugation_orbit_cone(gamma_hat: np.ndarray, samples: int = 64, seed: int = 0,
                           psd_tol: float = 1e-10) -> GeneratorCone:
    """Sampled cone over ``{Theta Gamma Theta^T : Theta in Ad_SU(N)}``.

    ``gamma_hat`` is the full dissipator superoperator. Its restriction to
    her_0(N) must be symmetric PSD.
    """
    gamma_hat = np.asarray(gamma_hat, dtype=complex)
    n = int(round(np.sqrt(gamma_hat.shape[0])))
    base = restrict_to_traceless(gamma_hat)
    scale = max(1.0, float(np.max(np.abs(base))))
    w = np.linalg.eigvalsh((base + base.T) / 2)
    if np.max(np.abs(base - base.T)) > psd_tol * scale or w[0] < -psd_tol * max(1.0, w[-1]):
        raise ValueError("dissipator restricted to her_0 is not positive semidefinite")
    rng = np.random.default_rng(seed)
    unitaries = deterministic_unitaries(n) + [random_unitary(n, rng) for _ in range(samples)]
    gens, lifts = [], []
    for u in unitaries:
        ad = unitary_superop(u)
        lift = ad @ gamma_hat @ ad.conj().T
        lifts.append(lift)
        gens.append(restrict_to_traceless(lift))
    return GeneratorCone(n, gens, "conjugation-orbit", samples, seed, base, lifts, psd_tol)


@dataclass
class ConeMembership:
    is_member: bool
    coefficients: np.ndarray
    residual: float
    tol: float
    certificate: np.ndarray | None = None
    label: str = SAMPLED_LABEL

    def as_dict(self) -> dict:
        return {"is_member": self.is_member, "residual": self.residual, "tol": self.tol,
                "coefficient_sum": float(np.sum(self.coefficients)), "label": self.label}


def cone_membership(x: np.ndarray, cone: GeneratorCone, tol: float = 1e-8) -> ConeMembership:
    """Nonnegative least squares ``min ||sum_k lambda_k G_k - x||`` over ``lambda >= 0``.

    Membership iff the residual is at most ``tol * max(1, ||x||)``. For a
    non-member the normalized residual direction ``r`` separates: ``<r, G_k> <= 0``
    for all generators while ``<r, x> > 0``.
    """
    x = np.asarray(x, dtype=float)
    a = cone.matrix
    coeffs, res = nnls(a, x.reshape(-1), maxiter=50 * a.shape[1])
    xnorm = float(np.linalg.norm(x))
    member = res <= tol * max(1.0, xnorm)
    cert = None
    if not member:
        r = x.reshape(-1) - a @ coeffs
        cert = (r / np.linalg.norm(r)).reshape(x.shape)
    return ConeMembership(bool(member), coeffs, float(res), tol, cert)


def hamiltonian_directions(n: int, basis=None) -> list[np.ndarray]:
    """``i ad_F`` restricted to her_0(n) for each Hermitian ``F`` (default: Gell-Mann basis)."""
    basis = gellmann_basis(n) if basis is None else basis
    return [restrict_to_traceless(1j * hamiltonian_superop(f)) for f in basis]


def _projector_residual(x: np.ndarray, q: np.ndarray) -> float:
    v = x.reshape(-1)
    return float(np.linalg.norm(v - q.T @ (q @ v)))


@dataclass
class WedgeConditions:
    gamma_in_cone: bool
    brackets_ok: bool
    conjugation_invariant: bool
    gamma_residual: float
    cc_residual: float
    ck_residual: float
    conjugation_residual: float
    tol: float

    @property
    def all_hold(self) -> bool:
        return self.gamma_in_cone and self.brackets_ok and self.conjugation_invariant

    def as_dict(self) -> dict:
        return {
            "gamma_in_cone": self.gamma_in_cone, "brackets_ok": self.brackets_ok,
            "conjugation_invariant": self.conjugation_invariant,
            "gamma_residual": self.gamma_residual, "cc_residual": self.cc_residual,
            "ck_residual": self.ck_residual, "conjugation_residual": self.conjugation_residual,
            "tol": self.tol, "label": SAMPLED_LABEL,
        }


def check_wedge_conditions(cone: GeneratorCone, tol: float = 1e-8, gamma: np.ndarray | None = None,
                           unitaries=None, n_unitaries: int = 20, seed: int = 1,
                           bracket_tol: float | None = None, conjugation_tol: float | None = None,
                           generators_per_unitary: int | None = None) -> WedgeConditions:
    """Numerically test the three structural conditions on a cone.

    1. the dissipator ``gamma`` (default ``cone.base``) lies in the cone;
    2. ``[c, c]`` lies in ``ad su(N)`` and ``[c, ad su(N)]`` in ``span(c)``;
    3. ``Theta G Theta^T`` stays in the cone for sampled ``Theta`` in Ad_SU(N).

    Residuals are relative to the norm of the tested element. Condition 1
    uses ``tol``; ``bracket_tol`` and ``conjugation_tol`` default to ``tol``.
    Conjugated generators of a sampled orbit cone are extreme rays of the
    exact cone, so condition 3 only holds up to the sampling gap, which
    shrinks with the sample count. ``generators_per_unitary`` restricts
    condition 3 to an evenly spaced subset of generators.
    """
    n = cone.dim
    bracket_tol = tol if bracket_tol is None else bracket_tol
    conjugation_tol = tol if conjugation_tol is None else conjugation_tol
    gamma = cone.base if gamma is None else np.asarray(gamma, dtype=float)
    if gamma is None:
        raise ValueError("no dissipator given and the cone has no base")
    gnorm = float(np.linalg.norm(gamma))
    g_res = cone_membership(gamma / gnorm, cone, tol).residual if gnorm > 0 else 0.0

    ks = hamiltonian_directions(n)
    qk = np.array([b.reshape(-1) for b in orthonormalize(ks).elements])
    qc = np.array([b.reshape(-1) for b in orthonormalize(cone.generators).elements])
    gens = cone.generators
    cc = 0.0
    for a, b in combinations(gens, 2):
        br = a @ b - b @ a
        nb = np.linalg.norm(a) * np.linalg.norm(b)
        if nb > 0:
            cc = max(cc, _projector_residual(br, qk) / nb)
    ck = 0.0
    for a in gens:
        for k in ks:
            br = a @ k - k @ a
            nb = np.linalg.norm(a) * np.linalg.norm(k)
            ck = max(ck, _projector_residual(br, qc) / nb)

    if unitaries is None:
        rng = np.random.default_rng(seed)
        unitaries = [random_unitary(n, rng) for _ in range(n_unitaries)]
    tested = gens
    if generators_per_unitary is not None and generators_per_unitary < len(gens):
        idx = np.linspace(0, len(gens) - 1, generators_per_unitary).round().astype(int)
        tested = [gens[i] for i in idx]
    conj = 0.0
    for u in unitaries:
        theta = restrict_to_traceless(unitary_superop(u))
        for g in tested:
            y = theta @ g @ theta.T
            conj = max(conj, cone_membership(y / np.linalg.norm(y), cone, tol).residual)
    return WedgeConditions(bool(g_res <= tol), bool(cc <= bracket_tol and ck <= bracket_tol),
                           bool(conj <= conjugation_tol), g_res, float(cc), float(ck), conj, tol)


@dataclass
class SemigroupMembership:
    is_member: bool
    rotation_ok: bool
    cone: ConeMembership | None
    positive_part: np.ndarray
    rotation: np.ndarray
    margin: float
    diagnosis: str = ""
    label: str = SAMPLED_LABEL

    def as_dict(self) -> dict:
        out = {"is_member": self.is_member, "rotation_ok": self.rotation_ok,
               "margin": self.margin, "diagnosis": self.diagnosis, "label": self.label}
        if self.cone is not None:
            out["cone"] = self.cone.as_dict()
        return out


def polar_traceless(t: np.ndarray):
    """``T|her_0 = P O`` with ``P`` symmetric positive semidefinite and ``O`` orthogonal."""
    r = restrict_to_traceless(t)
    w, s, vt = np.linalg.svd(r)
    return w @ np.diag(s) @ w.T, w @ vt, (w, s)


def semigroup_membership_n2(t, cone: GeneratorCone, tol: float = 1e-6) -> SemigroupMembership:
    """Is the qubit channel ``t`` in ``exp(-c) . Ad_SU(2)``?"""
    m = t.matrix if hasattr(t, "matrix") else np.asarray(t, dtype=complex)
    if m.shape != (4, 4) or cone.dim != 2:
        raise ValueError("semigroup membership test is only defined for N = 2")
    one = np.array([1, 0, 0, 1], dtype=complex)
    if np.max(np.abs(one @ m - one)) > 1e-9:
        raise ValueError("channel is not trace-preserving")
    if np.max(np.abs(m @ one - one)) > 1e-9:
        raise ValueError("channel is not unital")
    p, o, (w, s) = polar_traceless(m)
    if np.min(s) <= 1e-14:
        return SemigroupMembership(False, False, None, p, o, float("inf"), "singular channel")
    rotation_ok = bool(np.linalg.det(o) > 0)
    c = w @ np.diag(-np.log(s)) @ w.T
    memb = cone_membership(c, cone, tol)
    ok = rotation_ok and memb.is_member
    diag = "" if ok else ("orthogonal part has det -1" if not rotation_ok
                          else "-log P outside the cone")
    return SemigroupMembership(ok, rotation_ok, memb, p, o, memb.residual, diag)


def orbit_cone_margin_n2(x: np.ndarray, base: np.ndarray) -> float:
    """Exact distance-to-boundary score for the full qubit orbit cone.

    Ad_SU(2) acts on her_0(2) as all of SO(3), so ``conv{Theta B Theta^T}``
    consists of the symmetric matrices whose spectrum is majorized by a
    nonnegative multiple of the spectrum of ``B`` (Schur-Horn). Returns the
    smallest slack of the majorization inequalities divided by ``tr(x)``:
    nonnegative iff ``x`` is in the exact cone. Independent of sampling.
    """
    c = np.sort(np.linalg.eigvalsh((x + x.T) / 2))[::-1]
    d = np.sort(np.linalg.eigvalsh((base + base.T) / 2))[::-1]
    total = float(np.sum(c))
    if total <= 0:
        return 0.0 if np.allclose(c, 0) else -np.inf
    s = total / float(np.sum(d))
    slack = [s * np.sum(d[:k]) - np.sum(c[:k]) for k in (1, 2)]
    return float(min(slack) / total)
