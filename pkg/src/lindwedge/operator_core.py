"""Dense complex matrix helpers shared by every other module.

Conventions
-----------
Matrices are vectorized by column stacking, so that::

    vec(A @ rho @ B) == kron(B.T, A) @ vec(rho)

All tolerances are relative and floored at a small multiple of machine
epsilon, so the same defaults behave sensibly for N = 2 and N = 16.
"""
from __future__ import annotations

from typing import NamedTuple, Sequence

import numpy as np
import scipy.linalg as sla

EPS = np.finfo(float).eps

I2 = np.eye(2, dtype=complex)
SX = np.array([[0, 1], [1, 0]], dtype=complex)
SY = np.array([[0, -1j], [1j, 0]], dtype=complex)
SZ = np.array([[1, 0], [0, -1]], dtype=complex)
PAULIS = (SX, SY, SZ)

DEFAULT_HERMITICITY_TOL = 1e-10
DEFAULT_RANK_TOL = 1e-9
# eigenvalues closer than this (relative) to the closed negative real axis
# are treated as lying on it
NEGATIVE_AXIS_BAND = 1e-8


class SingularMatrixError(np.linalg.LinAlgError):
    pass


class NoRealBranch(ValueError):
    """The principal logarithm does not exist (spectrum touches the negative real axis).

    ``reason`` is ``"no-real-log"`` when some negative eigenvalue has odd
    algebraic multiplicity, which rules out any real logarithm, and
    ``"branch-ambiguity"`` when all negative eigenvalues pair up, so a real
    logarithm may exist off the principal branch.
    """

    def __init__(self, reason: str, negative_eigenvalues: np.ndarray,
                 multiplicities: list[int], diagnosis: str):
        self.reason = reason
        self.negative_eigenvalues = np.asarray(negative_eigenvalues)
        self.multiplicities = list(multiplicities)
        self.diagnosis = diagnosis
        super().__init__(f"{reason}: {diagnosis}")

    def as_dict(self) -> dict:
        return {
            "reason": self.reason,
            "diagnosis": self.diagnosis,
            "negative_eigenvalues": [float(x.real) for x in self.negative_eigenvalues],
            "multiplicities": self.multiplicities,
        }


class PSDResult(NamedTuple):
    is_psd: bool
    min_eigenvalue: float


class OrthonormalBasis(NamedTuple):
    elements: list
    rank: int


def as_matrix(a, *, square: bool = False, name: str = "matrix") -> np.ndarray:
    """Convert to a finite 2-D complex array, raising on NaN/Inf."""
    m = np.asarray(a)
    if m.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {m.shape}")
    if square and m.shape[0] != m.shape[1]:
        raise ValueError(f"{name} must be square, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} has non-finite entries")
    return m.astype(complex, copy=False)


def dag(a: np.ndarray) -> np.ndarray:
    return np.conj(np.transpose(a))


def max_abs(a: np.ndarray) -> float:
    return float(np.max(np.abs(a))) if np.size(a) else 0.0


def hermiticity_error(a: np.ndarray) -> float:
    """Relative deviation ``max|A - A^dag| / max(1, max|A|)``."""
    return max_abs(a - dag(a)) / max(1.0, max_abs(a))


def is_hermitian(a: np.ndarray, tol: float = DEFAULT_HERMITICITY_TOL) -> bool:
    return hermiticity_error(a) <= tol


def require_hermitian(a, tol: float = DEFAULT_HERMITICITY_TOL, name: str = "matrix") -> np.ndarray:
    m = as_matrix(a, square=True, name=name)
    err = hermiticity_error(m)
    if err > tol:
        raise ValueError(f"{name} is not Hermitian (relative error {err:.3e} > {tol:.1e})")
    return m


def is_traceless_hermitian(a: np.ndarray, tol: float = DEFAULT_HERMITICITY_TOL) -> bool:
    scale = max(1.0, max_abs(a))
    return is_hermitian(a, tol) and abs(np.trace(a)) <= tol * scale


def traceless_part(a: np.ndarray) -> np.ndarray:
    n = a.shape[0]
    return a - np.trace(a) / n * np.eye(n)


def kron(a, b) -> np.ndarray:
    return np.kron(np.asarray(a), np.asarray(b))


def kron_all(*ops) -> np.ndarray:
    out = np.ones((1, 1), dtype=complex)
    for op in ops:
        out = np.kron(out, op)
    return out


def vec(m) -> np.ndarray:
    """Column-stacking vectorization (1-D result)."""
    return np.asarray(m).reshape(-1, order="F")


def unvec(v, dim: int | None = None) -> np.ndarray:
    """Inverse of :func:`vec` for square matrices."""
    v = np.asarray(v).reshape(-1)
    if dim is None:
        dim = int(round(np.sqrt(v.size)))
    if v.size != dim * dim:
        raise ValueError(f"vector of length {v.size} cannot be unvec'd to {dim}x{dim}")
    return v.reshape((dim, dim), order="F")


def commutator(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a @ b - b @ a


# ---------------------------------------------------------------------------
# matrix exponential: scaling and squaring with a diagonal Pade core
# (degrees and switching thresholds after Higham, SIMAX 26 (2005))

_PADE_COEFFS = {
    3: [120.0, 60.0, 12.0, 1.0],
    5: [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0],
    7: [17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0],
    9: [17643225600.0, 8821612800.0, 2075673600.0, 302702400.0, 30270240.0,
        2162160.0, 110880.0, 3960.0, 90.0, 1.0],
    13: [64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
         1187353796428800.0, 129060195264000.0, 10559470521600.0,
         670442572800.0, 33522128640.0, 1323241920.0, 40840800.0,
         960960.0, 16380.0, 182.0, 1.0],
}
_THETA = {3: 1.495585217958292e-2, 5: 2.539398330063230e-1,
          7: 9.504178996162932e-1, 9: 2.097847961257068e0,
          13: 5.371920351148152e0}


def _pade(a: np.ndarray, m: int) -> tuple[np.ndarray, np.ndarray]:
    b = _PADE_COEFFS[m]
    ident = np.eye(a.shape[0], dtype=a.dtype)
    a2 = a @ a
    if m < 13:
        powers = [ident, a2]
        while len(powers) <= m // 2:
            powers.append(powers[-1] @ a2)
        u = sum(b[2 * k + 1] * powers[k] for k in range(m // 2 + 1))
        v = sum(b[2 * k] * powers[k] for k in range(m // 2 + 1))
        return a @ u, v
    a4 = a2 @ a2
    a6 = a4 @ a2
    u = a @ (a6 @ (b[13] * a6 + b[11] * a4 + b[9] * a2)
             + b[7] * a6 + b[5] * a4 + b[3] * a2 + b[1] * ident)
    v = (a6 @ (b[12] * a6 + b[10] * a4 + b[8] * a2)
         + b[6] * a6 + b[4] * a4 + b[2] * a2 + b[0] * ident)
    return u, v


def expm(a) -> np.ndarray:
    """Matrix exponential.

    Raises ``OverflowError`` instead of returning Inf entries.
    """
    a = np.asarray(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expm needs a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("expm input has non-finite entries")
    dtype = np.result_type(a.dtype, float)
    a = a.astype(dtype, copy=False)
    if a.shape[0] == 0:
        return a.copy()
    norm1 = float(np.linalg.norm(a, 1))
    s = 0
    for m in (3, 5, 7, 9):
        if norm1 <= _THETA[m]:
            break
    else:
        m = 13
        if norm1 > _THETA[13]:
            s = int(np.ceil(np.log2(norm1 / _THETA[13])))
    if s > 1000:
        raise OverflowError(f"expm: norm {norm1:.3e} too large")
    scaled = a / (2.0 ** s)
    u, v = _pade(scaled, m)
    r = np.linalg.solve(v - u, v + u)
    with np.errstate(over="raise", invalid="raise"):
        try:
            for _ in range(s):
                r = r @ r
        except FloatingPointError as exc:
            raise OverflowError(f"expm overflow (norm {norm1:.3e})") from exc
    if not np.all(np.isfinite(r)):
        raise OverflowError(f"expm overflow (norm {norm1:.3e})")
    return r


# ---------------------------------------------------------------------------
# principal logarithm

def _cluster(values: np.ndarray, tol: float) -> list[list[int]]:
    clusters: list[list[int]] = []
    for i, x in enumerate(values):
        for c in clusters:
            if abs(values[c[0]] - x) <= tol * max(1.0, abs(x)):
                c.append(i)
                break
        else:
            clusters.append([i])
    return clusters


def logm_principal(a, band: float = NEGATIVE_AXIS_BAND,
                   cluster_tol: float = 1e-6) -> np.ndarray:
    """Principal matrix logarithm.

    Raises :class:`SingularMatrixError` for (numerically) singular input and
    :class:`NoRealBranch` when an eigenvalue sits on the closed negative real
    axis, within a relative band of width ``band``.
    """
    a = as_matrix(a, square=True)
    eig = np.linalg.eigvals(a)
    scale = max(1.0, float(np.max(np.abs(eig))))
    if np.min(np.abs(eig)) <= 1e3 * EPS * scale * a.shape[0]:
        raise SingularMatrixError("logm of a singular matrix")
    on_axis = (eig.real < 0) & (np.abs(eig.imag) <= band * np.maximum(1.0, np.abs(eig)))
    if np.any(on_axis):
        neg = np.sort(eig[on_axis].real)
        clusters = _cluster(neg, cluster_tol)
        mult = [len(c) for c in clusters]
        if any(k % 2 for k in mult):
            if all(k == 1 for k in mult):
                diag = "pairwise distinct negative eigenvalues"
            else:
                diag = "negative eigenvalue of odd multiplicity"
            raise NoRealBranch("no-real-log", neg, mult, diag)
        raise NoRealBranch("branch-ambiguity", neg, mult,
                           "negative eigenvalues of even multiplicity; "
                           "a real logarithm may exist off the principal branch")
    out = sla.logm(a)
    if not np.all(np.isfinite(out)):
        raise np.linalg.LinAlgError("logm produced non-finite entries")
    return np.asarray(out, dtype=complex)


# ---------------------------------------------------------------------------
# orthonormalization over the reals

def _to_real(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m)
    flat = m.reshape(-1)
    if np.iscomplexobj(flat):
        return np.concatenate([flat.real, flat.imag])
    return flat.astype(float)


def _from_real(v: np.ndarray, shape, is_complex: bool) -> np.ndarray:
    if is_complex:
        n = v.size // 2
        return (v[:n] + 1j * v[n:]).reshape(shape)
    return v.reshape(shape)


def hs_inner(a: np.ndarray, b: np.ndarray) -> float:
    """Real part of the Hilbert-Schmidt product ``tr(a^dag b)``."""
    return float(np.real(np.vdot(a, b)))


def orthonormalize(vectors: Sequence[np.ndarray], rank_tol: float = DEFAULT_RANK_TOL) -> OrthonormalBasis:
    """Real Gram-Schmidt (two passes) under ``Re tr(A^dag B)``.

    Elements whose residual falls to ``rank_tol`` times the largest input
    norm are dropped.
    """
    vectors = [np.asarray(v) for v in vectors]
    if not vectors:
        return OrthonormalBasis([], 0)
    shape = vectors[0].shape
    if any(v.shape != shape for v in vectors):
        raise ValueError("all elements must share one shape")
    is_complex = any(np.iscomplexobj(v) for v in vectors)
    real = [_to_real(v.astype(complex) if is_complex else v) for v in vectors]
    ref = max(float(np.linalg.norm(r)) for r in real)
    if ref == 0.0:
        return OrthonormalBasis([], 0)
    q = np.zeros((0, real[0].size))
    for r in real:
        w = r.copy()
        for _ in range(2):
            w -= q.T @ (q @ w)
        nw = np.linalg.norm(w)
        if nw > rank_tol * ref:
            q = np.vstack([q, w / nw])
    elements = [_from_real(row, shape, is_complex) for row in q]
    return OrthonormalBasis(elements, len(elements))


def psd_check(a, tol: float = 1e-10, hermiticity_tol: float = 1e-8) -> PSDResult:
    """``lambda_min >= -tol * max(1, lambda_max)`` for a Hermitian matrix."""
    m = require_hermitian(a, hermiticity_tol)
    w = np.linalg.eigvalsh((m + dag(m)) / 2)
    lmin, lmax = float(w[0]), float(w[-1])
    return PSDResult(lmin >= -tol * max(1.0, lmax), lmin)


# ---------------------------------------------------------------------------
# bases and random sampling

def gellmann_basis(n: int) -> list[np.ndarray]:
    """Orthonormal traceless Hermitian basis of her_0(n).

    Order: symmetric (j<k), antisymmetric (j<k), then diagonal, each
    lexicographic. ``tr(F_a F_b) = delta_ab``.
    """
    sym, anti, diag = [], [], []
    for j in range(n):
        for k in range(j + 1, n):
            s = np.zeros((n, n), dtype=complex)
            s[j, k] = s[k, j] = 1 / np.sqrt(2)
            sym.append(s)
            t = np.zeros((n, n), dtype=complex)
            t[j, k] = -1j / np.sqrt(2)
            t[k, j] = 1j / np.sqrt(2)
            anti.append(t)
    for l in range(1, n):
        d = np.zeros((n, n), dtype=complex)
        d[np.arange(l), np.arange(l)] = 1.0
        d[l, l] = -l
        diag.append(d / np.sqrt(l * (l + 1)))
    return sym + anti + diag


def random_hermitian(n: int, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
    g = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    return scale * (g + dag(g)) / 2


def random_unitary(n: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-random element of SU(n). For n = 2, uniform unit quaternions."""
    if n == 2:
        q = rng.normal(size=4)
        a, b, c, d = q / np.linalg.norm(q)
        return np.array([[a + 1j * b, c + 1j * d], [-c + 1j * d, a - 1j * b]])
    z = (rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))) / np.sqrt(2)
    qm, r = np.linalg.qr(z)
    ph = np.diag(r) / np.abs(np.diag(r))
    u = qm * ph
    return u / np.linalg.det(u) ** (1.0 / n)


def trace_norm(a: np.ndarray) -> float:
    """Sum of singular values."""
    return float(np.sum(np.linalg.svd(a, compute_uv=False)))
