import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from fluxdec import config
from fluxdec.errors import (
    DimensionOverflow,
    InvalidSiteError,
    MalformedFile,
    NonHermitianError,
    NormViolation,
    ValidationError,
    VersionMismatch,
)
from fluxdec.hilbert import (
    DensityOperator,
    HamiltonianSpec,
    StateVector,
    SystemGeometry,
    Term,
    evolve,
    linear_entropy,
    make_register,
    partial_trace,
    purity,
    state_from_json,
    tensor,
)


def qubit(amps, n=1):
    geom = SystemGeometry.qubits(n)
    return StateVector.from_amplitudes(geom, make_register(geom), amps)


def random_density(rng, d, rank=None):
    rank = rank or d
    X = rng.normal(size=(d, rank)) + 1j * rng.normal(size=(d, rank))
    rho = X @ X.conj().T
    return rho / np.trace(rho)


# registers


def test_register_sizes():
    assert make_register(SystemGeometry.qubits(3)).size == 8
    assert make_register(SystemGeometry.bosons(4), "fixedN", N=2).size == 10
    assert make_register(SystemGeometry.bosons(2, cutoff=1), "truncated", N_max=2).size == 4


def test_fock_order_matches_enumeration():
    basis = make_register(SystemGeometry.bosons(3), "fixedN", N=3)
    assert [tuple(s) for s in basis.states] == oracles.fock_tuples(3, 3)


def test_register_errors():
    with pytest.raises(ValidationError):
        SystemGeometry.bosons(3, cutoff=-1)
    with pytest.raises(InvalidSiteError):
        SystemGeometry.qubits(3, contact_sites=(0, 3))
    with pytest.raises(ValidationError):
        SystemGeometry.qubits(3, contact_sites=(1, 1))
    with config.using(budget=100):
        with pytest.raises(DimensionOverflow):
            make_register(SystemGeometry.qubits(7))


@pytest.mark.parametrize("geom,kw", [
    (SystemGeometry.qubits(4), {}),
    (SystemGeometry.bosons(3), {"basis": "fixedN", "N": 4}),
    (SystemGeometry.bosons(3, cutoff=2), {"basis": "truncated", "N_max": 4}),
])
def test_index_label_round_trip(geom, kw):
    basis = make_register(geom, **kw)
    for i in range(basis.size):
        assert basis.index(basis.label(i)) == i


def test_qubit_index_convention():
    basis = make_register(SystemGeometry.qubits(3))
    assert basis.index((1, 0, 0)) == 1
    assert basis.index((0, 0, 1)) == 4


# states and tensor products


def test_tensor_basis_states():
    zero, one = qubit([1, 0]), qubit([0, 1])
    prod = tensor(zero, one)
    assert prod.amplitudes[prod.basis.index((0, 1))] == pytest.approx(1)
    plus = qubit([1, 1])
    assert np.linalg.norm(tensor(plus, zero).amplitudes) == pytest.approx(1, abs=1e-12)
    rho = tensor(DensityOperator.from_state(plus), DensityOperator.from_state(zero))
    assert purity(rho) == pytest.approx(1, abs=1e-12)


def test_unnormalized_state_rejected():
    geom = SystemGeometry.qubits(1)
    with pytest.raises(ValidationError):
        StateVector(geom, make_register(geom), np.array([1.0, 1.0]))


def test_density_operator_checks():
    with pytest.raises(NonHermitianError):
        DensityOperator(np.array([[0.5, 0.1], [0.0, 0.5]]))
    with pytest.raises(ValidationError):
        DensityOperator(np.eye(2))
    with pytest.raises(ValidationError):
        DensityOperator(np.diag([1.5, -0.5]))


# partial trace


def test_bell_reduced_state():
    bell = np.array([1, 0, 0, 1]) / math.sqrt(2)
    red = partial_trace(DensityOperator(np.outer(bell, bell), (2, 2)), [0])
    assert np.allclose(red.matrix, np.eye(2) / 2)
    assert purity(red) == pytest.approx(0.5)


def test_ghz3_keep_two():
    psi = oracles.ghz(3)
    red = partial_trace(DensityOperator(np.outer(psi, psi.conj()), (2, 2, 2)), [0, 2])
    assert np.allclose(red.matrix, np.diag([0.5, 0, 0, 0.5]))
    assert purity(red) == pytest.approx(0.5)


def test_partial_trace_matches_reshape():
    rng = np.random.default_rng(3)
    rho = random_density(rng, 8)
    # site 0 is least significant: numpy axes are (site2, site1, site0)
    t = rho.reshape(2, 2, 2, 2, 2, 2)
    keep1 = np.einsum("abcaBc->bB", t)
    got = partial_trace(DensityOperator(rho, (2, 2, 2)), [1]).matrix
    assert np.allclose(got, keep1, atol=1e-12)


def test_partial_trace_product_is_pure():
    psi = oracles.product(4, np.array([1, 1j]) / math.sqrt(2))
    rho = DensityOperator(np.outer(psi, psi.conj()), (2,) * 4)
    for keep in ([0], [1, 3], [0, 1, 2]):
        assert purity(partial_trace(rho, keep)) == pytest.approx(1, abs=1e-12)


def test_partial_trace_invalid_site():
    rho = DensityOperator(np.eye(4) / 4, (2, 2))
    with pytest.raises(InvalidSiteError):
        partial_trace(rho, [2])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(2, 4), st.integers(2, 3))
def test_partial_trace_of_tensor(seed, da, db):
    rng = np.random.default_rng(seed)
    ra = DensityOperator(random_density(rng, da))
    rb = DensityOperator(random_density(rng, db))
    out = partial_trace(tensor(ra, rb), [0])
    assert np.abs(out.matrix - ra.matrix).max() < 1e-10


# purity


def test_purity_examples():
    assert purity(np.diag([1.0, 0.0])) == 1.0
    assert linear_entropy(np.eye(4) / 4) == pytest.approx(0.75)
    plus = np.array([1, 1]) / math.sqrt(2)
    mix = 0.5 * np.diag([1.0, 0.0]) + 0.5 * np.outer(plus, plus)
    assert purity(DensityOperator(mix)) == pytest.approx(0.75)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_linear_entropy_of_pure_products(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=2) + 1j * rng.normal(size=2)
    b = rng.normal(size=2) + 1j * rng.normal(size=2)
    rho = tensor(DensityOperator.from_state(a / np.linalg.norm(a)),
                 DensityOperator.from_state(b / np.linalg.norm(b)))
    assert abs(linear_entropy(rho)) < 1e-12


# evolution


def test_evolve_zero_time_and_eigenstate():
    geom = SystemGeometry.qubits(2)
    basis = make_register(geom)
    H = HamiltonianSpec(basis, (Term(0.7, (0,), ("z",)), Term(0.3, (1,), ("x",))))
    rng = np.random.default_rng(0)
    psi = StateVector.from_amplitudes(geom, basis, rng.normal(size=4) + 1j * rng.normal(size=4))
    assert np.allclose(evolve(psi, H, 0.0).amplitudes, psi.amplitudes)
    w, v = np.linalg.eigh(H.dense())
    eig = StateVector.from_amplitudes(geom, basis, v[:, 1])
    out = evolve(eig, H, 3.3).amplitudes
    assert abs(abs(np.vdot(v[:, 1], out)) - 1) < 1e-10


def test_evolve_spin_flip():
    omega = 1.3
    geom = SystemGeometry.qubits(1)
    H = HamiltonianSpec(make_register(geom), (Term(omega / 2, (0,), ("z",)),))
    out = evolve(qubit([1, 1]), H, math.pi / omega).amplitudes
    minus = np.array([1, -1]) / math.sqrt(2)
    assert abs(abs(np.vdot(minus, out)) - 1) < 1e-10


def test_evolve_rejects_non_hermitian():
    geom = SystemGeometry.qubits(1)
    H = HamiltonianSpec.from_matrix(make_register(geom), np.array([[0, 1], [0, 0]]))
    with pytest.raises(NonHermitianError):
        evolve(qubit([1, 0]), H, 1.0)


@pytest.mark.parametrize("switch", [4096, 2])
def test_norm_and_energy_conservation(switch):
    rng = np.random.default_rng(11)
    n = 6
    geom = SystemGeometry.qubits(n)
    basis = make_register(geom)
    X = rng.normal(size=(64, 64)) + 1j * rng.normal(size=(64, 64))
    H = HamiltonianSpec.from_matrix(basis, (X + X.conj().T) / 2)
    psi = StateVector.from_amplitudes(geom, basis, rng.normal(size=64) + 1j * rng.normal(size=64))
    e0 = psi.expect(H.matrix).real
    with config.using(eig_switch_dim=switch):
        out = evolve(psi, H, 2.5)
    ref = expm_apply(H.dense(), psi.amplitudes, 2.5)
    assert np.linalg.norm(out.amplitudes - ref) < 1e-8
    assert abs(np.linalg.norm(out.amplitudes) - 1) < 1e-10
    assert abs(out.expect(H.matrix).real - e0) < 1e-8 * max(1, abs(e0))


def expm_apply(H, psi, t):
    from scipy.linalg import expm

    return expm(-1j * H * t) @ psi


# file format


def test_state_file_errors():
    good = {"v": 1, "kind": "qubit", "n_sites": 1, "amplitudes": [[1, 0], [0, 0]]}
    assert state_from_json(good).dim == 2
    with pytest.raises(NormViolation):
        state_from_json({**good, "amplitudes": [[math.sqrt(1.1), 0], [0, 0]]})
    with pytest.raises(VersionMismatch):
        state_from_json({**good, "v": 2})
    with pytest.raises(MalformedFile):
        state_from_json({**good, "extra": 1})
    with pytest.raises(MalformedFile):
        state_from_json({**good, "amplitudes": [[1, 0]]})
