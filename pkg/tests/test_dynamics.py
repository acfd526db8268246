import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from lrbqfi.dynamics import (
    HamiltonianTerms,
    KrylovConvergenceError,
    Propagator,
    build_xy_hamiltonian,
    evolve,
    heisenberg_operator,
    hopping_matrix,
    krylov_expm_apply,
    single_excitation_index,
    total_magnetization,
)
from lrbqfi.hilbert import DensityOperator, LocalOperatorSpec, PureState, embed_local, operator_norm


def random_pure(rng, n):
    v = rng.normal(size=2**n) + 1j * rng.normal(size=2**n)
    return PureState.from_vector(v, normalize=True)


def random_hamiltonian(rng, n):
    axes = "xyz"
    couplings = [(i, i + 1, axes[rng.integers(3)], axes[rng.integers(3)], rng.normal())
                 for i in range(n - 1)]
    fields = [(i, axes[rng.integers(3)], rng.normal()) for i in range(n)]
    return HamiltonianTerms(n, tuple(couplings), tuple(fields))


# --- Hamiltonian -------------------------------------------------------------


def test_two_site_flip_flop_element():
    h = build_xy_hamiltonian(2, coupling=1.0).to_dense()
    assert h.shape == (4, 4)
    assert h[1, 2] == 2 and h[2, 1] == 2
    assert not np.any(np.diag(h))


def test_default_coupling_gives_unit_hopping():
    h = build_xy_hamiltonian(3).to_dense()
    a, b = single_excitation_index(0, 3), single_excitation_index(1, 3)
    assert h[a, b] == 1.0


def test_xy_terms():
    h = build_xy_hamiltonian(4)
    assert len(h.couplings) == 6 and h.fields == ()
    assert {c[2] for c in h.couplings} == {"x", "y"}


@pytest.mark.parametrize("bits", ["000000", "111111"])
def test_polarized_states_are_zero_modes(bits):
    h = build_xy_hamiltonian(6).to_dense()
    assert np.allclose(h @ PureState.basis(bits).amplitudes, 0)


def test_too_few_qubits():
    with pytest.raises(ValueError):
        build_xy_hamiltonian(1)


def test_bad_terms():
    with pytest.raises(IndexError):
        HamiltonianTerms(2, ((0, 2, "x", "x", 1.0),))
    with pytest.raises(ValueError):
        HamiltonianTerms(2, ((1, 1, "x", "x", 1.0),))
    with pytest.raises(ValueError):
        HamiltonianTerms(2, boundary="twisted")


def test_hermitian_and_matvec():
    rng = np.random.default_rng(0)
    h = random_hamiltonian(rng, 5)
    dense = h.to_dense()
    assert np.abs(dense - dense.conj().T).max() < 1e-12
    v = random_pure(rng, 5).amplitudes
    assert np.allclose(h.matvec(v), dense @ v)


def test_periodic_adds_wrap_bond():
    assert len(build_xy_hamiltonian(5, "periodic").couplings) == 10
    hm = hopping_matrix(5, "periodic")
    assert hm[0, 4] == 1.0


def test_single_excitation_block_is_hopping_matrix():
    n = 6
    h = build_xy_hamiltonian(n).to_dense()
    idx = [single_excitation_index(k, n) for k in range(n)]
    assert np.allclose(h[np.ix_(idx, idx)], hopping_matrix(n))


# --- evolution ---------------------------------------------------------------


def test_evolve_t0_identity():
    prop = Propagator.dense(build_xy_hamiltonian(4))
    psi = random_pure(np.random.default_rng(1), 4)
    assert np.allclose(evolve(psi, prop, 0.0).amplitudes, psi.amplitudes)


def test_vacuum_is_stationary():
    prop = Propagator.dense(build_xy_hamiltonian(5))
    vac = PureState.basis("00000")
    for t in (0.3, 2.0, 7.5):
        assert np.allclose(evolve(vac, prop, t).amplitudes, vac.amplitudes, atol=1e-12)


def test_single_excitation_matches_hopping_oracle():
    n, t = 9, 1.0
    prop = Propagator.dense(build_xy_hamiltonian(n))
    out = evolve(PureState.basis("1" + "0" * (n - 1)), prop, t).amplitudes
    oracle = expm(-1j * t * hopping_matrix(n))[:, 0]
    got = np.array([out[single_excitation_index(k, n)] for k in range(n)])
    assert np.abs(got - oracle).max() < 1e-10


def test_dimension_mismatch():
    prop = Propagator.dense(build_xy_hamiltonian(3))
    with pytest.raises(ValueError):
        evolve(PureState.basis("00"), prop, 1.0)
    with pytest.raises(ValueError):
        heisenberg_operator(np.eye(4), prop, 1.0)


def test_density_evolution_matches_pure():
    rng = np.random.default_rng(2)
    prop = Propagator.dense(build_xy_hamiltonian(4))
    psi = random_pure(rng, 4)
    a = evolve(psi, prop, 0.8).to_density().matrix
    b = evolve(psi.to_density(), prop, 0.8)
    assert isinstance(b, DensityOperator)
    assert np.allclose(a, b.matrix, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 6), st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 2**31 - 1))
def test_group_law(n, t1, t2, seed):
    rng = np.random.default_rng(seed)
    prop = Propagator.dense(random_hamiltonian(rng, n))
    psi = random_pure(rng, n)
    a = evolve(evolve(psi, prop, t1), prop, t2).amplitudes
    b = evolve(psi, prop, t1 + t2).amplitudes
    assert np.abs(a - b).max() < 1e-9


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 6), st.floats(0, 5), st.integers(0, 2**31 - 1))
def test_energy_norm_and_magnetization_conserved(n, t, seed):
    rng = np.random.default_rng(seed)
    h = build_xy_hamiltonian(n)
    prop = Propagator.dense(h)
    hd = h.to_dense()
    psi = random_pure(rng, n)
    out = prop.apply(psi.amplitudes, t)
    assert abs(np.linalg.norm(out) - 1) < 1e-10
    e0 = np.vdot(psi.amplitudes, hd @ psi.amplitudes).real
    e1 = np.vdot(out, hd @ out).real
    assert abs(e0 - e1) < 1e-10
    assert abs(total_magnetization(psi) - total_magnetization(PureState.from_vector(out, True))) < 1e-10


@pytest.mark.parametrize("n", [2, 5, 8, 10])
def test_krylov_matches_dense(n):
    rng = np.random.default_rng(n)
    h = build_xy_hamiltonian(n)
    psi = random_pure(rng, n).amplitudes
    dense = Propagator.dense(h)
    kry = Propagator.krylov(h)
    for t in (0.1, 1.0, 3.0, -2.0):
        assert np.abs(dense.apply(psi, t) - kry.apply(psi, t)).max() < 1e-8


def test_krylov_random_hamiltonian():
    rng = np.random.default_rng(11)
    h = random_hamiltonian(rng, 7)
    psi = random_pure(rng, 7).amplitudes
    ref = expm(-1j * 2.5 * h.to_dense()) @ psi
    assert np.abs(Propagator.krylov(h).apply(psi, 2.5) - ref).max() < 1e-8


def test_krylov_budget_reports_residual():
    h = build_xy_hamiltonian(8)
    v = random_pure(np.random.default_rng(3), 8).amplitudes
    with pytest.raises(KrylovConvergenceError) as err:
        krylov_expm_apply(h.matvec, v, 50.0, tol=1e-14, m=3, max_substeps=5)
    assert err.value.residual > 0


def test_dense_spectrum_is_cached():
    h = build_xy_hamiltonian(6)
    a = Propagator.dense(h).spectrum
    b = Propagator.dense(build_xy_hamiltonian(6)).spectrum
    assert a[0] is b[0]


# --- Heisenberg picture --------------------------------------------------------


def test_heisenberg_t0():
    prop = Propagator.dense(build_xy_hamiltonian(4))
    op = embed_local(LocalOperatorSpec(2, "minus"), 4)
    assert np.array_equal(heisenberg_operator(op, prop, 0.0), op)


def test_heisenberg_leaves_h_invariant():
    h = build_xy_hamiltonian(5)
    prop = Propagator.dense(h)
    for t in (0.5, 3.0):
        assert np.allclose(heisenberg_operator(h.to_dense(), prop, t), h.to_dense(), atol=1e-12)


def test_heisenberg_lowering_n6_against_expm():
    h = build_xy_hamiltonian(6)
    prop = Propagator.dense(h)
    sm = embed_local(LocalOperatorSpec(3, "minus"), 6)
    u = expm(-1j * h.to_dense())
    oracle = u.conj().T @ sm @ u
    got = heisenberg_operator(sm, prop, 1.0)
    assert np.abs(got - oracle).max() < 1e-12
    assert abs(operator_norm(got) - operator_norm(sm)) < 1e-10
    # pinned entry: <000000| sigma_-(1) |001000>, the hop back to site 3 itself
    assert abs(got[0, single_excitation_index(3, 6)] - 0.22507102853927913) < 1e-12


def test_heisenberg_krylov_matches_dense():
    h = build_xy_hamiltonian(5)
    op = embed_local(LocalOperatorSpec(1, "x"), 5)
    a = heisenberg_operator(op, Propagator.dense(h), 1.3)
    b = heisenberg_operator(op, Propagator.krylov(h), 1.3)
    assert np.abs(a - b).max() < 1e-8
