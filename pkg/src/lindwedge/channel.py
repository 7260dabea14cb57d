"""Completely positive maps: Choi matrices, CP/TP tests, the Kossakowski-Lindblad
wedge test for generators and time-independent Markovianity of channels."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .lindblad import hamiltonian_superop, unitary_superop
from .operator_core import (
    PAULIS,
    NoRealBranch,
    SingularMatrixError,
    dag,
    expm,
    gellmann_basis,
    logm_principal,
    vec,
)

MEMBERSHIP_TOL = 1e-8
RESIDUAL_TOL = 1e-9
CP_TOL = 1e-9


@dataclass
class QuantumChannel:
    """A superoperator matrix plus the properties established for it so far.

    ``flags`` maps a property name to ``(value, tol)``; a missing key means
    the test has not been run.
    """

    matrix: np.ndarray
    flags: dict = field(default_factory=dict)

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=complex)
        d2 = self.matrix.shape[0]
        n = int(round(np.sqrt(d2)))
        if self.matrix.shape != (d2, d2) or n * n != d2:
            raise ValueError(f"superoperator must be N^2 x N^2, got {self.matrix.shape}")
        if not np.all(np.isfinite(self.matrix)):
            raise ValueError("superoperator has non-finite entries")

    @property
    def dim(self) -> int:
        return int(round(np.sqrt(self.matrix.shape[0])))


def _mat(t) -> np.ndarray:
    return t.matrix if isinstance(t, QuantumChannel) else np.asarray(t, dtype=complex)


def _dim(m: np.ndarray) -> int:
    return int(round(np.sqrt(m.shape[0])))


# ---------------------------------------------------------------------------
# standard channels

def identity_channel(n: int) -> QuantumChannel:
    return QuantumChannel(np.eye(n * n))


def transpose_channel(n: int) -> QuantumChannel:
    m = np.zeros((n * n, n * n))
    for i in range(n):
        for j in range(n):
            m[i * n + j, j * n + i] = 1.0
    return QuantumChannel(m)


def channel_from_kraus(kraus) -> QuantumChannel:
    kraus = [np.asarray(k, dtype=complex) for k in kraus]
    return QuantumChannel(sum(np.kron(k.conj(), k) for k in kraus))


def unitary_channel(u) -> QuantumChannel:
    return QuantumChannel(unitary_superop(u))


def pauli_channel(t1: float, t2: float, t3: float) -> QuantumChannel:
    """Qubit channel with Bloch multipliers: 1 -> 1 and sigma_k -> t_k sigma_k."""
    p = np.array([1 + t1 + t2 + t3, 1 + t1 - t2 - t3, 1 - t1 + t2 - t3, 1 - t1 - t2 + t3]) / 4
    ops = [np.eye(2)] + list(PAULIS)
    return QuantumChannel(sum(pk * np.kron(s.conj(), s) for pk, s in zip(p, ops)))


# ---------------------------------------------------------------------------
# Choi representation

def reshuffle(m: np.ndarray) -> np.ndarray:
    """Superoperator (column-stacking) -> Choi matrix ``sum_ij T(E_ij) (x) E_ij``."""
    n = _dim(m)
    return np.asarray(m).reshape(n, n, n, n).transpose(1, 3, 0, 2).reshape(n * n, n * n)


def unreshuffle(c: np.ndarray) -> np.ndarray:
    """Inverse of :func:`reshuffle`."""
    n = _dim(c)
    return np.asarray(c).reshape(n, n, n, n).transpose(2, 0, 3, 1).reshape(n * n, n * n)


def choi_from_superop(t) -> np.ndarray:
    return reshuffle(_mat(t))


def superop_from_choi(c: np.ndarray) -> np.ndarray:
    return unreshuffle(c)


class CPResult(NamedTuple):
    is_cp: bool
    min_eigenvalue: float


def is_hermiticity_preserving(t, tol: float = 1e-10) -> bool:
    c = choi_from_superop(t)
    return float(np.max(np.abs(c - dag(c)))) <= tol * max(1.0, float(np.max(np.abs(c))))


def is_completely_positive(t, tol: float = CP_TOL) -> CPResult:
    """Choi matrix PSD within ``tol`` (relative to ``max(1, lambda_max)``)."""
    c = choi_from_superop(t)
    scale = max(1.0, float(np.max(np.abs(c))))
    if float(np.max(np.abs(c - dag(c)))) > 1e-8 * scale:
        raise ValueError("map is not Hermiticity-preserving; complete positivity undefined")
    w = np.linalg.eigvalsh((c + dag(c)) / 2)
    ok = bool(w[0] >= -tol * max(1.0, w[-1]))
    if isinstance(t, QuantumChannel):
        t.flags["completely_positive"] = (ok, tol)
        t.flags["hermiticity_preserving"] = (True, 1e-8)
    return CPResult(ok, float(w[0]))


def is_trace_preserving(t, tol: float = 1e-10) -> bool:
    m = _mat(t)
    n = _dim(m)
    one = vec(np.eye(n))
    ok = bool(np.max(np.abs(one.conj() @ m - one.conj())) <= tol)
    if isinstance(t, QuantumChannel):
        t.flags["trace_preserving"] = (ok, tol)
    return ok


def compose(t1, t2) -> QuantumChannel:
    """Apply ``t1`` first, then ``t2``. CP/TP flags survive when both inputs carry them."""
    m1, m2 = _mat(t1), _mat(t2)
    if m1.shape != m2.shape:
        raise ValueError(f"dimension mismatch: {m1.shape} vs {m2.shape}")
    out = QuantumChannel(m2 @ m1)
    if isinstance(t1, QuantumChannel) and isinstance(t2, QuantumChannel):
        for key in ("completely_positive", "trace_preserving", "hermiticity_preserving"):
            a, b = t1.flags.get(key), t2.flags.get(key)
            if a and b and a[0] and b[0]:
                out.flags[key] = (True, max(a[1], b[1]))
    return out


# ---------------------------------------------------------------------------
# Kossakowski-Lindblad wedge membership

@dataclass
class WedgeMembershipReport:
    is_member: bool
    hamiltonian: np.ndarray | None
    kossakowski: np.ndarray | None
    min_eigenvalue: float
    residual: float
    tol: float
    residual_tol: float
    diagnosis: str = ""

    @property
    def kossakowski_spectrum(self) -> np.ndarray:
        if self.kossakowski is None:
            return np.zeros(0)
        return np.linalg.eigvalsh(self.kossakowski)[::-1]

    def as_dict(self) -> dict:
        return {
            "is_member": self.is_member,
            "min_eigenvalue": self.min_eigenvalue,
            "residual": self.residual,
            "tol": self.tol,
            "residual_tol": self.residual_tol,
            "diagnosis": self.diagnosis,
            "kossakowski_spectrum": [float(x) for x in self.kossakowski_spectrum],
        }


def _row_vec(m: np.ndarray) -> np.ndarray:
    return np.asarray(m).reshape(-1)


def kossakowski_decomposition(l_hat: np.ndarray):
    """Split ``L`` into ``(H, A)`` with

        L(rho) = i[H, rho] + 1/2 sum_ij A_ij ({F_j^dag F_i, rho} - 2 F_i rho F_j^dag)

    over the Gell-Mann basis ``F_i``. Exact for trace-annihilating,
    Hermiticity-preserving ``L``.
    """
    n = _dim(l_hat)
    basis = [np.eye(n) / np.sqrt(n)] + gellmann_basis(n)
    r = np.array([_row_vec(f) for f in basis]).T
    # rho -> sum_ij c_ij F_i rho F_j^dag has Choi matrix sum_ij c_ij r(F_i) r(F_j)^dag
    c = dag(r) @ reshuffle(-l_hat) @ r
    c = (c + dag(c)) / 2
    a = c[1:, 1:]
    f = sum(c[i, 0] * basis[i] for i in range(1, n * n)) / np.sqrt(n)
    h = 1j * (f - dag(f)) / 2
    return (h + dag(h)) / 2, a


def kossakowski_superop(h: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Rebuild ``L`` from a Hamiltonian and a Kossakowski matrix."""
    n = h.shape[0]
    fs = gellmann_basis(n)
    one = np.eye(n)
    d = np.zeros((n, n), dtype=complex)
    jump = np.zeros((n * n, n * n), dtype=complex)
    for i, fi in enumerate(fs):
        for j, fj in enumerate(fs):
            if a[i, j] == 0:
                continue
            d += a[i, j] * dag(fj) @ fi
            jump += a[i, j] * np.kron(fj.conj(), fi)
    return 1j * hamiltonian_superop(h) + 0.5 * (np.kron(one, d) + np.kron(d.T, one)) - jump


def kl_wedge_membership(l_hat, tol: float = MEMBERSHIP_TOL,
                        residual_tol: float = RESIDUAL_TOL) -> WedgeMembershipReport:
    """Is ``-L`` a Kossakowski-Lindblad generator?"""
    l_hat = np.asarray(l_hat, dtype=complex)
    n = _dim(l_hat)
    scale = max(1.0, float(np.linalg.norm(l_hat)))
    choi = reshuffle(l_hat)
    if float(np.linalg.norm(choi - dag(choi))) > residual_tol * scale:
        return WedgeMembershipReport(False, None, None, float("nan"), float("inf"), tol, residual_tol,
                                     "not Hermiticity-preserving")
    one = vec(np.eye(n))
    if float(np.linalg.norm(one.conj() @ l_hat)) > residual_tol * scale:
        return WedgeMembershipReport(False, None, None, float("nan"), float("inf"), tol, residual_tol,
                                     "not trace-annihilating")
    h, a = kossakowski_decomposition(l_hat)
    residual = float(np.linalg.norm(kossakowski_superop(h, a) - l_hat)) / scale
    w = np.linalg.eigvalsh(a)
    lmin = float(w[0])
    psd = lmin >= -tol * max(1.0, float(np.max(np.abs(w))))
    member = bool(psd and residual <= residual_tol)
    diagnosis = "" if member else ("Kossakowski matrix not PSD" if not psd
                                   else "decomposition residual above tolerance")
    return WedgeMembershipReport(member, h, a, lmin, residual, tol, residual_tol, diagnosis)


# ---------------------------------------------------------------------------
# Markovianity

TI_MARKOVIAN = "TI-Markovian"
NO_REAL_LOG = "not-TI-Markovian(no real log)"
WEDGE_FAILS = "not-TI-Markovian(log exists, wedge fails)"
INCONCLUSIVE = "inconclusive(branch ambiguity)"


@dataclass
class MarkovianityReport:
    verdict: str
    generator: np.ndarray | None = None
    wedge: WedgeMembershipReport | None = None
    diagnosis: str = ""
    log_failure: dict | None = None

    @property
    def is_markovian(self) -> bool:
        return self.verdict == TI_MARKOVIAN

    def as_dict(self) -> dict:
        out = {"verdict": self.verdict, "diagnosis": self.diagnosis}
        if self.wedge is not None:
            out["wedge"] = self.wedge.as_dict()
        if self.log_failure is not None:
            out["log_failure"] = self.log_failure
        return out


def _unique_real_log(m: np.ndarray, tol: float = 1e-8) -> bool:
    """A real logarithm is unique iff the spectrum is positive real and simple."""
    w = np.linalg.eigvals(m)
    if np.any(np.abs(w.imag) > tol * np.maximum(1, np.abs(w))) or np.any(w.real <= 0):
        return False
    w = np.sort(w.real)
    return bool(np.all(np.diff(w) > 1e-6 * np.maximum(1, np.abs(w[1:]))))


def is_ti_markovian(t, tol: float = MEMBERSHIP_TOL, residual_tol: float = RESIDUAL_TOL,
                    check_preconditions: bool = True) -> MarkovianityReport:
    """Is ``t = expm(-L)`` for a Kossakowski-Lindblad ``L``? Only the principal branch is searched."""
    m = _mat(t)
    if check_preconditions:
        if not is_trace_preserving(t, 1e-9):
            raise ValueError("channel is not trace-preserving")
        if not is_completely_positive(t, CP_TOL).is_cp:
            raise ValueError("channel is not completely positive")
    try:
        log_t = logm_principal(m)
    except SingularMatrixError as exc:
        raise ValueError("channel is not invertible") from exc
    except NoRealBranch as exc:
        verdict = NO_REAL_LOG if exc.reason == "no-real-log" else INCONCLUSIVE
        return MarkovianityReport(verdict, diagnosis=exc.diagnosis, log_failure=exc.as_dict())
    gen = -log_t
    wedge = kl_wedge_membership(gen, tol, residual_tol)
    if wedge.is_member:
        return MarkovianityReport(TI_MARKOVIAN, gen, wedge, "principal logarithm is a KL generator")
    if _unique_real_log(m):
        return MarkovianityReport(WEDGE_FAILS, gen, wedge,
                                  f"unique real logarithm fails the wedge test ({wedge.diagnosis})")
    return MarkovianityReport(INCONCLUSIVE, gen, wedge,
                              "principal logarithm fails the wedge test; other real branches not searched")


@dataclass
class EffectiveLiouvillian:
    generator: np.ndarray
    t_eff: float
    reproduction_error: float
    reproduces: bool
    wedge: WedgeMembershipReport

    def as_dict(self) -> dict:
        return {"t_eff": self.t_eff, "reproduction_error": self.reproduction_error,
                "reproduces": self.reproduces, "wedge": self.wedge.as_dict()}


def effective_liouvillian(t, t_eff: float, tol: float = 1e-9,
                          membership_tol: float = MEMBERSHIP_TOL) -> EffectiveLiouvillian:
    """Time-independent ``L_eff`` with ``expm(-t_eff * L_eff) == t``.

    Raises :class:`NoRealBranch` when the principal logarithm does not exist.
    """
    if t_eff <= 0:
        raise ValueError("t_eff must be positive")
    m = _mat(t)
    l_eff = -logm_principal(m) / t_eff
    err = float(np.linalg.norm(expm(-t_eff * l_eff) - m)) / max(1.0, float(np.linalg.norm(m)))
    wedge = kl_wedge_membership(l_eff, membership_tol, max(RESIDUAL_TOL, tol))
    return EffectiveLiouvillian(l_eff, t_eff, err, err <= tol, wedge)
