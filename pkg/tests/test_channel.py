import numpy as np
import pytest
from hypothesis import given, strategies as st

from lindwedge.channel import (
    INCONCLUSIVE, NO_REAL_LOG, TI_MARKOVIAN, WEDGE_FAILS, QuantumChannel, channel_from_kraus,
    choi_from_superop, compose, effective_liouvillian, identity_channel, is_completely_positive,
    is_hermiticity_preserving, is_ti_markovian, is_trace_preserving, kl_wedge_membership,
    kossakowski_decomposition, kossakowski_superop, pauli_channel, reshuffle, superop_from_choi,
    transpose_channel, unitary_channel, unreshuffle,
)
from lindwedge.lindblad import (
    LindbladGenerator, amplitude_damping, dephasing, full_generator, generator_dissipator,
    hamiltonian_superop, random_generator, unitary_superop,
)
from lindwedge.operator_core import SX, SZ, NoRealBranch, expm, gellmann_basis, random_unitary, unvec, vec


def choi_by_definition(t: np.ndarray) -> np.ndarray:
    n = int(round(np.sqrt(t.shape[0])))
    c = np.zeros((n * n, n * n), dtype=complex)
    for i in range(n):
        for j in range(n):
            e = np.zeros((n, n))
            e[i, j] = 1
            c += np.kron(unvec(t @ vec(e), n), e)
    return c


def test_choi_examples():
    c = choi_from_superop(identity_channel(2))
    omega = vec(np.eye(2))
    assert np.allclose(c, np.outer(omega, omega))
    w = np.linalg.eigvalsh(c)
    assert np.isclose(w[-1], 2) and np.allclose(w[:-1], 0)
    swap = choi_from_superop(transpose_channel(2))
    assert np.allclose(np.linalg.eigvalsh(swap), [-1, 1, 1, 1])


def test_choi_matches_definition(rng):
    for _ in range(5):
        t = expm(-0.3 * full_generator(random_generator(3, rng)))
        assert np.allclose(choi_from_superop(t), choi_by_definition(t))


@given(st.integers(2, 3), st.integers(0, 2 ** 31))
def test_reshuffle_round_trip(n, seed):
    m = np.random.default_rng(seed).normal(size=(n * n, n * n))
    assert np.array_equal(unreshuffle(reshuffle(m)), m)
    assert np.array_equal(superop_from_choi(choi_from_superop(m)), m)


def test_amplitude_damping_choi_via_kraus():
    # gamma t = ln 2: K0 = diag(1, sqrt(1/2)), K1 = sqrt(1/2)|0><1|
    t = expm(-np.log(2) * full_generator(amplitude_damping(1.0)))
    k = channel_from_kraus([np.diag([1, np.sqrt(0.5)]), np.sqrt(0.5) * np.array([[0, 1], [0, 0]])]).matrix
    assert np.allclose(t, k)
    w = np.linalg.eigvalsh(choi_from_superop(t))
    assert np.sum(w > 1e-12) == 2 and w[0] > -1e-12


def test_cp_examples(rng):
    assert not is_completely_positive(transpose_channel(2)).is_cp
    assert np.isclose(is_completely_positive(transpose_channel(2)).min_eigenvalue, -1)
    for t in (0.0, 0.01, 1.0, 10.0):
        assert is_completely_positive(expm(-t * full_generator(random_generator(2, rng)))).is_cp
    with pytest.raises(ValueError):
        is_completely_positive(1j * np.eye(4))
    ch = QuantumChannel(np.eye(4))
    is_completely_positive(ch)
    assert ch.flags["completely_positive"][0] is True


def test_negated_dissipator_breaks_cp():
    g = amplitude_damping(1.0)
    anti = 1j * hamiltonian_superop(g.drift) - generator_dissipator(g)
    assert any(not is_completely_positive(expm(-t * anti)).is_cp for t in np.linspace(0.01, 0.1, 10))


def test_tp_examples():
    assert is_trace_preserving(identity_channel(3))
    assert not is_trace_preserving(QuantumChannel(0.5 * np.eye(4)))
    assert is_hermiticity_preserving(transpose_channel(2))


def test_compose(rng):
    g = random_generator(2, rng)
    l_hat = full_generator(g)
    t1 = QuantumChannel(expm(-0.3 * l_hat))
    assert np.allclose(compose(t1, identity_channel(2)).matrix, t1.matrix)
    assert np.max(np.abs(compose(t1, expm(-0.4 * l_hat)).matrix - expm(-0.7 * l_hat))) <= 1e-10
    a = channel_from_kraus([random_unitary(2, rng) * np.sqrt(0.5), random_unitary(2, rng) * np.sqrt(0.5)])
    b = QuantumChannel(expm(-full_generator(random_generator(2, rng))))
    assert is_completely_positive(compose(a, b)).is_cp
    # order: t1 acts first
    u, v = unitary_channel(random_unitary(2, rng)), unitary_channel(random_unitary(2, rng))
    assert np.allclose(compose(u, v).matrix, v.matrix @ u.matrix)


def test_kossakowski_matches_lindblad_operators(rng):
    n = 3
    fs = gellmann_basis(n)
    ops = [rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n)) for _ in range(2)]
    ops = [v - np.trace(v) / n * np.eye(n) for v in ops]
    g = LindbladGenerator(np.zeros((n, n)), [], ops)
    coeffs = np.array([[np.vdot(f, v) for f in fs] for v in ops])  # v = sum_i c_i F_i
    expected = coeffs.T @ coeffs.conj()
    h, a = kossakowski_decomposition(full_generator(g))
    assert np.allclose(a, expected, atol=1e-12)
    assert np.allclose(h, 0, atol=1e-12)


def test_membership_examples():
    r = kl_wedge_membership(1j * hamiltonian_superop(SZ))
    assert r.is_member and np.allclose(r.kossakowski, 0, atol=1e-14)
    assert np.allclose(r.hamiltonian - np.trace(r.hamiltonian) / 2 * np.eye(2), SZ)
    r = kl_wedge_membership(full_generator(amplitude_damping(0.6)))
    assert r.is_member and np.sum(np.abs(r.kossakowski_spectrum) > 1e-12) == 1
    assert abs(r.min_eigenvalue) < 1e-12
    g = dephasing(0.4, SZ)
    r = kl_wedge_membership(1j * hamiltonian_superop(g.drift) - generator_dissipator(g))
    assert not r.is_member and r.min_eigenvalue < 0
    assert np.allclose(kl_wedge_membership(full_generator(dephasing(0.4))).kossakowski_spectrum, [0.8, 0, 0])


def test_membership_rejects_non_generators():
    assert kl_wedge_membership(np.eye(4)).diagnosis == "not trace-annihilating"
    assert not kl_wedge_membership(1j * np.eye(4)).is_member


@given(st.integers(2, 3), st.integers(0, 2 ** 31), st.floats(0, 1))
def test_wedge_is_convex_and_ad_invariant(n, seed, s):
    r = np.random.default_rng(seed)
    l1 = full_generator(random_generator(n, r))
    l2 = full_generator(random_generator(n, r))
    assert kl_wedge_membership(s * l1 + (1 - s) * l2).is_member
    ad = unitary_superop(random_unitary(n, r))
    assert kl_wedge_membership(ad @ l1 @ ad.conj().T).is_member


def test_reconstruction_residual(rng):
    l_hat = full_generator(random_generator(3, rng, n_controls=1), [0.4])
    h, a = kossakowski_decomposition(l_hat)
    assert np.linalg.norm(kossakowski_superop(h, a) - l_hat) <= 1e-9 * np.linalg.norm(l_hat)


def test_markovianity_examples():
    r = is_ti_markovian(identity_channel(2))
    assert r.verdict == TI_MARKOVIAN and np.allclose(r.generator, 0)
    l_hat = full_generator(amplitude_damping(0.9, 0.3 * SX))
    r = is_ti_markovian(expm(-l_hat))
    assert r.verdict == TI_MARKOVIAN and np.max(np.abs(r.generator - l_hat)) <= 1e-8
    pauli = pauli_channel(-0.9, -0.8, 0.72)
    cp = is_completely_positive(pauli)
    assert cp.is_cp and cp.min_eigenvalue >= -1e-10
    assert is_ti_markovian(pauli).verdict == NO_REAL_LOG


def test_markovianity_wedge_failures():
    # Bloch multipliers with positive simple spectrum whose unique log has a negative Pauli rate
    t = pauli_channel(0.72, 0.68, 0.45)
    assert is_completely_positive(t).is_cp
    assert is_ti_markovian(t).verdict == WEDGE_FAILS
    # same failure with a degenerate spectrum: other real logs exist, so no verdict
    assert is_ti_markovian(pauli_channel(0.7, 0.7, 0.45)).verdict == INCONCLUSIVE


def test_markovianity_preconditions():
    with pytest.raises(ValueError):
        is_ti_markovian(transpose_channel(2))
    with pytest.raises(ValueError):
        is_ti_markovian(0.5 * np.eye(4))


def test_effective_liouvillian_constant_control(rng):
    l_hat = full_generator(random_generator(2, rng, n_controls=1), [0.7])
    eff = effective_liouvillian(expm(-1.3 * l_hat), 1.3)
    assert np.max(np.abs(eff.generator - l_hat)) <= 1e-9 and eff.reproduces


def test_effective_liouvillian_commuting_segments():
    l1 = full_generator(dephasing(0.3, SZ))
    l2 = full_generator(dephasing(0.1, -2 * SZ))
    t1, t2 = 0.4, 0.9
    eff = effective_liouvillian(expm(-t2 * l2) @ expm(-t1 * l1), t1 + t2)
    assert np.max(np.abs(eff.generator - (t1 * l1 + t2 * l2) / (t1 + t2))) <= 1e-10


def test_effective_liouvillian_non_commuting_segments():
    l1 = full_generator(dephasing(0.2, SZ))
    l2 = full_generator(dephasing(0.2, SX))
    t = expm(-0.5 * l2) @ expm(-0.5 * l1)
    eff = effective_liouvillian(t, 1.0)
    assert eff.reproduction_error <= 1e-9 and eff.reproduces
    # the verdict agrees with the Kossakowski spectrum of the recovered generator
    _, a = kossakowski_decomposition(eff.generator)
    lam = np.linalg.eigvalsh((a + a.conj().T) / 2)[0]
    assert eff.wedge.is_member == (lam >= -eff.wedge.tol)


def test_effective_liouvillian_without_branch():
    with pytest.raises(NoRealBranch):
        effective_liouvillian(pauli_channel(-0.9, -0.8, 0.72), 1.0)
    with pytest.raises(ValueError):
        effective_liouvillian(identity_channel(2), 0.0)
