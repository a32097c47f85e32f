import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from fluxdec import config
from fluxdec.decoherence import (
    DecoherenceTrace,
    EnvironmentSpec,
    InteractionChannel,
    build_environment,
    build_interaction,
    channel_fluctuation,
    channel_sweep,
    check_translation_invariance,
    env_correlation,
    extract_rate,
    gamma_bound,
    joint_hamiltonian,
    leaky_box,
    lindblad_evolve,
    lindblad_surrogate,
    simulate_joint,
    verify_rate_bound,
)
from fluxdec.decoherence.dynamics import embed_truncated, leaky_box_quasifree
from fluxdec.errors import (
    NegativeInput,
    NoLinearWindowError,
    NonzeroMeanError,
    NoPlateauError,
    NyquistViolation,
    PreconditionViolation,
    UnpairedSite,
    ValidationError,
)
from fluxdec.hilbert import PAULI, StateVector, SystemGeometry, make_register, pauli_op
from fluxdec.models import ModelSpec, bh_ppv, bh_sgs, ghz_state, make_state, product_state

CONFIGS = Path(__file__).resolve().parents[1] / "src" / "fluxdec" / "configs"
INDEPENDENT = EnvironmentSpec(kind="independent_baths", seed=7)
COMMON = EnvironmentSpec(kind="common_mode", seed=7)


def dephasing(lam=0.02, **kw):
    return InteractionChannel(label="dephasing", **{"lambda": lam}, **kw)


def basis_state(bits):
    n = len(bits)
    geom = SystemGeometry.qubits(n)
    basis = make_register(geom)
    amps = np.zeros(basis.size)
    amps[basis.index(bits)] = 1
    return StateVector(geom, basis, amps)


# couplings


def small_env():
    return build_environment(EnvironmentSpec(kind="random_matrix", n_env_sites=1, seed=3))


def test_interaction_zero_lambda():
    env = small_env()
    st_ = product_state(1)
    H = build_interaction(dephasing(0.0), st_.basis, env).matrix
    assert abs(H).max() == 0 if H.nnz else True


def test_interaction_single_term():
    env = small_env()
    st_ = product_state(1)
    H = build_interaction(dephasing(0.1), st_.basis, env).matrix.toarray()
    # system factor is the low index, the environment spin the high one
    assert np.allclose(H, 0.1 * np.kron(PAULI["x"], PAULI["z"]))


def test_interaction_norm_bound():
    env = build_environment(EnvironmentSpec(kind="random_matrix", n_env_sites=2, seed=1))
    st_ = product_state(2)
    H = build_interaction(dephasing(0.3), st_.basis, env).matrix.toarray()
    assert np.linalg.norm(H, 2) <= 2 * 0.3 + 1e-12


def test_channel_errors():
    env = build_environment(EnvironmentSpec(kind="random_matrix", n_env_sites=2, seed=1))
    with pytest.raises(UnpairedSite):
        build_interaction(dephasing(), product_state(3).basis, env)
    with pytest.raises(UnpairedSite):
        build_interaction(dephasing(pairing=(0, 5)), product_state(2).basis, env)
    polarized = build_environment(
        EnvironmentSpec(kind="spin_bath", n_env_sites=1, bandwidth=0.0, initial="ground"))
    with pytest.raises(NonzeroMeanError):
        build_interaction(dephasing(b="z"), product_state(1).basis, polarized)
    with pytest.raises(Exception):
        InteractionChannel(**{"lambda": -0.1})


# correlation functions


def test_single_spin_has_no_plateau():
    omega = 0.5
    env = build_environment(
        EnvironmentSpec(kind="spin_bath", n_env_sites=1, bandwidth=0.0, omega=omega,
                        initial="ground"))
    with pytest.raises(NoPlateauError) as err:
        env_correlation(env, dephasing(), n_sys_sites=1)
    curve = np.array(err.value.details["running"])
    T = curve[:, 0]
    assert np.allclose(curve[:, 1], 2 * np.sin(omega * T) / omega, atol=1e-10)


def test_running_integral_matches_propagator_oracle():
    spec = EnvironmentSpec(kind="common_mode", aux_levels=32, seed=4, corr_t_max=10.0)
    env = build_environment(spec)
    blk = env.blocks[0]
    corr = env_correlation(env, dephasing(), n_sys_sites=1)
    C, I = oracles.correlation_running(blk.H, blk.rho, blk.operator(0, "x"), corr.times)
    assert np.abs(corr.correlation - C).max() < 1e-10
    # trapezoid error is O(dt^2)
    assert np.abs(corr.running - I).max() < 1e-3


@pytest.mark.parametrize("spec,power", [(INDEPENDENT, 1), (COMMON, 2)])
def test_g00_contact_scaling(spec, power):
    single = env_correlation(build_environment(spec, n_contact=1), dephasing(), n_sys_sites=1).g00
    for vc in range(2, 7):
        env = build_environment(spec, n_contact=vc)
        g = env_correlation(env, dephasing(), n_sys_sites=vc).g00
        assert g == pytest.approx(vc**power * single, rel=0.02)


def test_g_matrix_positive():
    env = build_environment(INDEPENDENT, n_contact=4)
    corr = env_correlation(env, dephasing(), n_sys_sites=4, momenta=True)
    g = corr.g_matrix
    assert np.abs(g - g.conj().T).max() < 1e-8
    assert np.linalg.eigvalsh(g).min() > -1e-8


def test_nyquist():
    env = build_environment(INDEPENDENT, n_contact=1)
    with pytest.raises(NyquistViolation):
        env_correlation(env, dephasing(), dt=5.0, n_sys_sites=1)


def test_environment_stationary():
    for spec in (INDEPENDENT, COMMON, EnvironmentSpec(kind="random_matrix", n_env_sites=3),
                 EnvironmentSpec(kind="boson_modes", n_env_sites=2, initial="vacuum")):
        assert build_environment(spec, n_contact=2).stationarity_error() < 1e-9


# bound arithmetic


def test_gamma_bound_examples():
    assert gamma_bound(0.1, 2.0, 0.5) == pytest.approx(0.01)
    assert gamma_bound(0.1, 2.0, 0.0) == 0.0
    assert gamma_bound(0.0, 2.0, 0.5) == 0.0
    with config.using(hbar=2.0):
        assert gamma_bound(0.1, 2.0, 0.5) == pytest.approx(0.0025)
    with pytest.raises(NegativeInput):
        gamma_bound(0.1, -1.0, 0.5)


@settings(max_examples=50, deadline=None)
@given(st.floats(1e-4, 1.0), st.floats(0.01, 10), st.floats(0, 1), st.floats(0.1, 10))
def test_gamma_bound_quadratic_in_lambda(lam, g, fl, k):
    a = gamma_bound(lam, g, fl)
    b = gamma_bound(k * lam, g, fl)
    assert b == pytest.approx(k * k * a, rel=1e-12, abs=1e-300)


# exact joint dynamics


TIMES = np.arange(0, 101) * 0.2


def test_zero_coupling_gives_zero_entropy():
    env = build_environment(INDEPENDENT, n_contact=3)
    tr = simulate_joint(ghz_state(3), env, [dephasing(0.0)], times=TIMES)
    assert np.all(tr.s_lin == 0)


def test_z_eigenstate_stays_pure():
    env = build_environment(INDEPENDENT, n_contact=3)
    tr = simulate_joint(product_state(3, "z"), env, [dephasing(0.1)], times=TIMES, mode="conditional")
    assert np.abs(tr.s_lin).max() < 1e-10
    small = build_environment(EnvironmentSpec(kind="random_matrix", n_env_sites=3, seed=2))
    tr = simulate_joint(product_state(3, "z"), small, [dephasing(0.1)], times=TIMES[:20], mode="dense")
    assert np.abs(tr.s_lin).max() < 1e-10


def test_conditional_matches_dense():
    env = build_environment(EnvironmentSpec(kind="random_matrix", n_env_sites=3, seed=2), n_contact=3)
    a = simulate_joint(ghz_state(3), env, [dephasing(0.1)], times=TIMES[:30], mode="conditional")
    b = simulate_joint(ghz_state(3), env, [dephasing(0.1)], times=TIMES[:30], mode="dense")
    assert np.abs(a.purity - b.purity).max() < 1e-10


def test_joint_norm_and_energy_conserved():
    from fluxdec.hilbert import Propagator

    env = build_environment(EnvironmentSpec(kind="random_matrix", n_env_sites=2, seed=5))
    st_ = ghz_state(2)
    H, _, _ = joint_hamiltonian(st_, env, [dephasing(0.2)], H_sys=pauli_op(2, 0, "x"))
    rng = np.random.default_rng(0)
    env_vec = rng.normal(size=4) + 1j * rng.normal(size=4)
    psi = np.kron(env_vec / np.linalg.norm(env_vec), st_.amplitudes)
    e0 = np.vdot(psi, H @ psi).real
    out = Propagator(H).apply_many(psi, [0.5, 3.0, 7.0])
    for v in out:
        assert abs(np.linalg.norm(v) - 1) < 1e-8
        assert abs(np.vdot(v, H @ v).real - e0) < 1e-8 * max(1, abs(e0))


def test_trace_metadata_and_entropy_identity():
    env = build_environment(INDEPENDENT, n_contact=2)
    tr = simulate_joint(ghz_state(2), env, [dephasing(0.05)], times=TIMES[:10])
    assert tr.metadata["seed"] == 7
    assert np.array_equal(tr.s_lin, 1 - tr.purity)
    assert abs(tr.s_lin[0]) < 1e-9
    assert np.all(tr.s_lin <= 1 - 1 / 4 + 1e-9)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=20))
def test_entropy_is_one_minus_purity(p):
    tr = DecoherenceTrace(np.arange(len(p)), np.array(p), "test")
    assert np.array_equal(tr.s_lin, 1.0 - np.array(p))


def test_random_matrix_joint_against_surrogate():
    cfg = json.loads((CONFIGS / "ghz4_random_matrix.json").read_text())
    env = build_environment(EnvironmentSpec(**cfg["env"]))
    ch = InteractionChannel(**cfg["channels"][0])
    st_ = make_state(ModelSpec(**cfg["system"]))
    times = np.arange(0, 201) * 0.1
    exact = simulate_joint(st_, env, [ch], times=times)
    surr = lindblad_surrogate(st_, env, [ch], times=times)
    r_exact = extract_rate(exact).gamma
    r_surr = extract_rate(surr).gamma
    assert r_surr == pytest.approx(r_exact, rel=0.10)


# Markovian dynamics


def test_single_qubit_dephasing_closed_form():
    kappa = 0.07
    t = np.linspace(0, 10, 41)
    plus = product_state(1, "x").amplitudes
    tr = lindblad_evolve(plus, None, [(PAULI["z"], kappa)], t)
    assert np.abs(tr.s_lin - 0.5 * (1 - np.exp(-4 * kappa * t))).max() < 1e-6
    ode = lindblad_evolve(plus, None, [(PAULI["z"], kappa)], t, method="ode")
    assert np.abs(ode.s_lin - tr.s_lin).max() < 1e-8


@pytest.mark.parametrize("N", [2, 4, 6])
def test_ghz_dephasing_closed_form(N):
    kappa = 0.03
    t = np.linspace(0, 8, 17)
    jumps = [(pauli_op(N, x, "z"), kappa) for x in range(N)]
    tr = lindblad_evolve(ghz_state(N).amplitudes, None, jumps, t)
    assert np.abs(tr.purity - 0.5 * (1 + np.exp(-4 * N * kappa * t))).max() < 1e-6


def test_lindblad_against_dense_superoperator():
    rng = np.random.default_rng(8)
    d = 4
    X = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    H = (X + X.conj().T) / 2
    L = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    psi = rng.normal(size=d) + 1j * rng.normal(size=d)
    psi /= np.linalg.norm(psi)
    t = np.linspace(0, 2, 9)
    tr, states = lindblad_evolve(psi, H, [(L, 0.3)], t, keep_states=True)
    ref = oracles.lindblad_dense(np.outer(psi, psi.conj()), H, [(L, 0.3)], t)
    for a, b in zip(states, ref):
        assert np.abs(a - b).max() < 1e-9


def test_lindblad_no_jumps_and_errors():
    psi = ghz_state(2).amplitudes
    t = np.linspace(0, 5, 11)
    tr = lindblad_evolve(psi, pauli_op(2, 0, "x"), [], t)
    assert np.allclose(tr.purity, 1, atol=1e-12)
    with pytest.raises(NegativeInput):
        lindblad_evolve(psi, None, [(pauli_op(2, 0, "z"), -0.1)], t)


# rate extraction


def test_extract_rate_linear():
    t = np.linspace(0, 1.5, 31)
    fit = extract_rate((t, 0.05 * t))
    assert fit.gamma == pytest.approx(0.05, abs=1e-12)


def test_extract_rate_exponential_early_window():
    t = np.linspace(0, 5, 501)
    fit = extract_rate((t, 1 - np.exp(-2 * 0.03 * t)), s_max=0.03)
    assert fit.gamma == pytest.approx(0.06, rel=0.02)


def test_extract_rate_zero_trace():
    t = np.linspace(0, 5, 51)
    with pytest.raises(NoLinearWindowError):
        extract_rate((t, np.zeros_like(t)))


def test_extract_rate_prefers_earliest_window():
    t = np.arange(0, 30) * 1.0
    y = np.concatenate([0.001 * t[:15], 0.015 + 0.002 * (t[15:] - 15)])
    fit = extract_rate((t, y), r2_min=0.999999, min_samples=10)
    assert fit.window[0] == 0.0


# bound verification


def test_translation_checks():
    ghz = check_translation_invariance(ghz_state(5))
    assert ghz.passed and ghz.deviation == 0
    assert check_translation_invariance(product_state(5, "x")).passed
    assert not check_translation_invariance(basis_state((1, 0, 0, 0))).passed
    assert check_translation_invariance(bh_sgs(4, 4, U=1.0)).passed
    open_ghz = make_state(ModelSpec(family="ghz", V=4, boundary="open"))
    with pytest.raises(ValidationError):
        check_translation_invariance(open_ghz)


def test_verify_ghz6_and_product_ratio():
    times = np.arange(0, 201) * 0.1
    env = build_environment(INDEPENDENT, n_contact=6)
    ghz = verify_rate_bound(ghz_state(6), env, dephasing(), times=times)
    assert ghz.satisfied
    assert ghz.gamma_fit >= 0.8 * ghz.gamma_bound
    prod = verify_rate_bound(product_state(6, "x"), env, dephasing(), times=times)
    assert ghz.gamma_bound / prod.gamma_bound == pytest.approx(6.0, rel=1e-12)


def test_verify_rejects_defect():
    env = build_environment(INDEPENDENT, n_contact=6)
    with pytest.raises(PreconditionViolation) as err:
        verify_rate_bound(basis_state((0, 0, 0, 1, 1, 1)), env, dephasing(), times=TIMES)
    assert err.value.details["check"] == "translation-invariance"


def test_channel_sweep_swap():
    env = build_environment(INDEPENDENT, n_contact=6)
    chans = [dephasing(a="z"), InteractionChannel(label="flip", **{"lambda": 0.02}, a="x")]
    z = channel_sweep(ghz_state(6), chans, env)
    assert z.worst_channel == "dephasing"
    x = channel_sweep(make_state(ModelSpec(family="ghz", V=6, local_basis="x")), chans, env)
    assert x.worst_channel == "flip"
    zero = channel_sweep(product_state(6, "z"), [dephasing()], env)
    assert zero.worst_gamma == pytest.approx(0, abs=1e-20)


def test_channel_fluctuation_matches_magnetization():
    assert channel_fluctuation(ghz_state(5), dephasing()) == pytest.approx(1.0)
    assert channel_fluctuation(product_state(5, "x"), dephasing()) == pytest.approx(0.2)


# leaky box


def test_quasifree_matches_master_equation():
    t = np.linspace(0, 3, 31)
    st_ = bh_sgs(3, 2, U=0.0)
    from fluxdec.models import model_hamiltonian

    emb = embed_truncated(st_)
    H = model_hamiltonian(ModelSpec(family="bh_sgs", M=3, N=2), emb.basis)
    dense = leaky_box(emb, 0.2, t, H)
    qf = leaky_box_quasifree(3, t, 0.2, n_particles=2)
    assert np.abs(dense.purity - qf.purity).max() < 1e-9


def test_coherent_state_stays_pure_in_leaky_box():
    from fluxdec.models import model_hamiltonian

    t = np.linspace(0, 2, 11)
    st_ = bh_ppv(2, 1.0)
    H = model_hamiltonian(ModelSpec(family="bh_ppv", M=2, alpha=1.0), st_.basis)
    tr = leaky_box(st_, 0.3, t, H)
    # the truncation tail only allows tiny mixing
    assert tr.s_lin.max() < 1e-5


def test_leaky_box_without_loss():
    t = np.linspace(0, 2, 5)
    tr = leaky_box(bh_sgs(3, 2, U=1.0), 0.0, t)
    assert np.allclose(tr.s_lin, 0, atol=1e-14)
