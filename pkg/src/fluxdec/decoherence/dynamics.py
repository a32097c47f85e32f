"""System-plus-environment dynamics and the linear entropy of the reduced state.

Two exact joint-unitary routes:

* ``conditional``: when ``H_sys`` and every coupling ``a(x)`` are diagonal in
  the system basis, each basis state ``s`` drives the environment with its own
  Hamiltonian ``H_E + sum lam a_s b``.  Then
  ``rho_ss'(t) = phi_s phi_s'^* e^{-i(E_s - E_s')t} prod_blocks Tr[U_s rho_E U_s'^dag]``
  and only environment-block eigendecompositions are needed.
* ``dense``: full joint Hamiltonian, mixed ``rho_E`` expanded over its
  eigenvectors (weights below 1e-8 dropped).

``lindblad_evolve`` integrates a Markovian master equation for surrogate and
leaky-box runs.
"""
from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.integrate import solve_ivp
from scipy.sparse.linalg import expm_multiply

from .. import config
from ..errors import (
    DimensionOverflow,
    NegativeInput,
    NumericalError,
    StepInstability,
    ValidationError,
)
from ..hilbert import (
    FockBasis,
    Propagator,
    StateVector,
    _check_budget,
    annihilation,
    as_matrix,
    embed,
    fock_basis,
)
from .environment import (
    EnvironmentModel,
    InteractionChannel,
    build_interaction,
    check_channel,
    joint_basis,
    pair_correlation_integrals,
    system_operator,
)


@dataclass(frozen=True, eq=False)
class DecoherenceTrace:
    times: np.ndarray
    purity: np.ndarray
    provenance: str
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        p = np.asarray(self.purity, dtype=float)
        if t.shape != p.shape:
            raise ValidationError("times and purity differ in length")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "purity", p)

    @property
    def s_lin(self) -> np.ndarray:
        return 1.0 - self.purity

    def to_csv(self, header: dict | None = None) -> str:
        buf = io.StringIO()
        for k, v in (header or {}).items():
            buf.write(f"# {k}: {v}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "s_lin", "purity"])
        for t, s, p in zip(self.times, self.s_lin, self.purity):
            w.writerow([format(t, ".17g"), format(s, ".17g"), format(p, ".17g")])
        return buf.getvalue()


def _check_trace(trace: DecoherenceTrace, d_sys: int) -> DecoherenceTrace:
    s = trace.s_lin
    if s.size and abs(s[0]) > 1e-9:
        raise NumericalError(f"S_lin(0) = {s[0]:.3e}; initial state is not pure")
    upper = 1 - 1 / d_sys
    if np.any(s < -1e-9) or np.any(s > upper + 1e-9):
        raise NumericalError("linear entropy left [0, 1 - 1/d]")
    return trace


def _diagonal(m) -> np.ndarray | None:
    m = sp.csr_matrix(m)
    off = m - sp.diags(m.diagonal())
    if off.nnz and abs(off).max() > 1e-14:
        return None
    return m.diagonal()


def _sys_dim(state: StateVector) -> int:
    return state.amplitudes.shape[0]


def _coupling_terms(state, env, channels):
    """(lambda, system matrix, env site, b tag) for every contact site."""
    n_sys = state.geometry.n_sites
    out = []
    for ch in channels:
        contact, pairing = check_channel(ch, env, n_sys)
        for x, e in zip(contact, pairing):
            out.append((ch.lam, system_operator(state.basis, x, ch.a), e, ch.b))
    return out


def _conditional_possible(state, env, channels, H_sys) -> bool:
    if H_sys is not None and _diagonal(as_matrix(H_sys)) is None:
        return False
    for ch in channels:
        for x in ch.sites(state.geometry.n_sites):
            if _diagonal(system_operator(state.basis, x, ch.a)) is None:
                return False
    return True


def _simulate_conditional(state, env: EnvironmentModel, channels, times, hbar):
    phi = state.amplitudes
    support = np.flatnonzero(np.abs(phi) > 1e-14)
    weights = np.abs(phi[support]) ** 2
    terms = _coupling_terms(state, env, channels)
    # per block: list of (lam * diag(a) restricted to support, B_eff)
    per_block: dict[int, list] = {}
    for lam, a_mat, e, tag in terms:
        blk, b = env.operator(e, tag)
        if np.abs(b - b.conj().T).max() > 1e-14:
            b = b + b.conj().T
        coeff = lam * a_mat.diagonal()[support].real
        per_block.setdefault(blk, []).append((coeff, b))
    # class label of every support state = tuple of per-block key indices
    block_data = []
    labels = np.zeros((support.size, 0), dtype=int)
    for blk, items in per_block.items():
        coeffs = np.stack([c for c, _ in items], axis=1)  # (S, n_items)
        keys, inv = np.unique(np.round(coeffs, 13), axis=0, return_inverse=True)
        block = env.blocks[blk]
        eigs = []
        for key in keys:
            H = block.H + sum(k * b for k, (_, b) in zip(key, items))
            eigs.append(np.linalg.eigh(H))
        n_t = len(times)
        F = np.empty((len(keys), len(keys), n_t), dtype=complex)
        scaled = np.asarray(times) / hbar
        phases = [np.exp(-1j * np.outer(scaled, E)) for E, _ in eigs]
        for i, (E1, V1) in enumerate(eigs):
            for j, (E2, V2) in enumerate(eigs):
                if j < i:
                    F[i, j] = F[j, i].conj()
                    continue
                X = V1.conj().T @ block.rho @ V2
                W = X * (V2.conj().T @ V1).T
                F[i, j] = np.sum((phases[i] @ W) * phases[j].conj(), axis=1)
        diag = np.array([F[i, i] for i in range(len(keys))])
        if len(diag) and np.abs(diag - 1).max() > 1e-9:
            raise NumericalError("joint evolution does not conserve the trace")
        block_data.append(F)
        labels = np.concatenate([labels, np.asarray(inv).reshape(-1, 1)], axis=1)
    if not block_data:
        return np.ones(len(times))
    classes, cls_inv = np.unique(labels, axis=0, return_inverse=True)
    w = np.bincount(np.asarray(cls_inv).ravel(), weights=weights)
    n_c = len(classes)
    purity = np.zeros(len(times))
    for i in range(n_c):
        for j in range(n_c):
            prod = np.ones(len(times))
            for b, F in enumerate(block_data):
                prod = prod * np.abs(F[classes[i, b], classes[j, b]]) ** 2
            purity += w[i] * w[j] * prod
    return purity


def _env_components(env: EnvironmentModel, cutoff: float = 1e-8):
    """Pure components (weight, vector) of the product environment state."""
    per_block = []
    for b in env.blocks:
        p, v = np.linalg.eigh(b.rho)
        keep = p > cutoff
        per_block.append([(float(p[k]), v[:, k]) for k in np.flatnonzero(keep)])
    count = math.prod(len(c) for c in per_block)
    if count > 4096:
        raise DimensionOverflow(f"mixed environment needs {count} pure components")
    out = []
    for combo in itertools.product(*per_block):
        w = math.prod(c[0] for c in combo)
        vec = np.array([1.0 + 0j])
        for _, v in combo:
            vec = np.kron(v, vec)
        out.append((w, vec))
    total = sum(w for w, _ in out)
    return [(w / total, v) for w, v in out]


def joint_hamiltonian(state, env: EnvironmentModel, channels, H_sys=None):
    jb = joint_basis(state.basis, env)
    dims = jb.dims
    n_env = len(env.blocks)
    n_sys_f = len(dims) - n_env
    d_sys = math.prod(dims[:n_sys_f])
    d_env = math.prod(dims[n_sys_f:])
    H = sp.csr_matrix((d_sys * d_env, d_sys * d_env), dtype=complex)
    if H_sys is not None:
        H = H + sp.kron(sp.identity(d_env), sp.csr_matrix(as_matrix(H_sys)), format="csr")
    for k, blk in enumerate(env.blocks):
        H = H + embed(blk.H, n_sys_f + k, dims)
    for ch in channels:
        if ch.lam != 0:
            H = H + build_interaction(ch, state.basis, env).matrix
    return H.tocsr(), d_sys, d_env


def _simulate_dense(state, env, channels, H_sys, times, hbar):
    _check_budget(state.amplitudes.size * math.prod(env.dims), "joint state")
    H, d_sys, d_env = joint_hamiltonian(state, env, channels, H_sys)
    prop = Propagator(H, hbar)
    purity = np.zeros(len(times))
    rhos = np.zeros((len(times), d_sys, d_sys), dtype=complex)
    for w, env_vec in _env_components(env):
        psi0 = np.kron(env_vec, state.amplitudes)
        traj = prop.apply_many(psi0, times)  # (n_t, dim)
        if np.abs(np.linalg.norm(traj, axis=1) - 1).max() > 1e-9:
            raise NumericalError("joint evolution does not conserve the norm")
        m = traj.reshape(len(times), d_env, d_sys)
        rhos += w * np.einsum("tei,tej->tij", m, m.conj())
    purity = np.einsum("tij,tji->t", rhos, rhos).real
    return purity


def simulate_joint(state: StateVector, env: EnvironmentModel, channels: Sequence[InteractionChannel],
                   H_sys=None, times=None, mode: str = "auto") -> DecoherenceTrace:
    """Exact linear-entropy trace of the reduced system state."""
    hbar = config.get().hbar
    times = np.asarray(times, dtype=float)
    channels = list(channels)
    if mode == "auto":
        mode = "conditional" if _conditional_possible(state, env, channels, H_sys) else "dense"
    if all(ch.lam == 0 for ch in channels) and mode == "conditional":
        purity = np.ones(times.size)
    elif mode == "conditional":
        if not _conditional_possible(state, env, channels, H_sys):
            raise ValidationError("conditional route needs diagonal H_sys and couplings")
        for ch in channels:
            check_channel(ch, env, state.geometry.n_sites)
        purity = _simulate_conditional(state, env, channels, times, hbar)
    elif mode == "dense":
        purity = _simulate_dense(state, env, channels, H_sys, times, hbar)
    else:
        raise ValidationError(f"unknown simulation mode {mode!r}")
    meta = {
        "route": mode,
        "seed": env.spec.seed,
        "env_kind": env.spec.kind,
        "lambda": [ch.lam for ch in channels],
        "channels": [ch.label for ch in channels],
    }
    return _check_trace(DecoherenceTrace(times, purity, "exact-joint", meta), _sys_dim(state))


# ---------------------------------------------------------------------------
# Markovian dynamics
# ---------------------------------------------------------------------------


def _liouvillian(H_eff, ops, d):
    # row-major vectorization: vec(A X B) = (A kron B^T) vec(X)
    eye = sp.identity(d, format="csr", dtype=complex)
    out = -1j * (sp.kron(H_eff, eye) - sp.kron(eye, H_eff.conj()))
    for L, k in ops:
        out = out + k * sp.kron(L, L.conj())
    return out.tocsr()


def lindblad_evolve(rho0, H_sys, jumps, times, keep_states: bool = False,
                    method: str = "auto", rtol: float = 1e-10, atol: float = 1e-12):
    """Integrate ``d rho/dt = -i/hbar [H, rho] + sum k (L rho L^dag - 1/2 {L^dag L, rho})``.

    ``jumps`` is a list of ``(L, kappa)``.  ``method`` is ``"expm"`` (exact
    propagation of the vectorized generator between grid points, uniform grids
    only), ``"ode"`` (adaptive DOP853) or ``"auto"``.  Returns the trace, and
    the density matrices on the grid when ``keep_states`` is set.
    """
    hbar = config.get().hbar
    rho0 = np.asarray(rho0.matrix if hasattr(rho0, "matrix") else rho0, dtype=complex)
    if rho0.ndim == 1:
        rho0 = np.outer(rho0, rho0.conj())
    d = rho0.shape[0]
    _check_budget(d * d, "density matrix")
    times = np.asarray(times, dtype=float)
    H = sp.csr_matrix((d, d), dtype=complex) if H_sys is None else sp.csr_matrix(as_matrix(H_sys))
    ops = []
    for L, kappa in jumps:
        if kappa < 0:
            raise NegativeInput(f"negative jump rate {kappa}")
        if kappa > 0:
            ops.append((sp.csr_matrix(L, dtype=complex), float(kappa)))
    H_eff = H / hbar
    for L, k in ops:
        H_eff = H_eff - 0.5j * k * (L.conj().T @ L)
    H_eff = sp.csr_matrix(H_eff)
    steps = np.diff(times)
    uniform = steps.size > 0 and np.allclose(steps, steps[0], rtol=1e-12, atol=0)
    if method == "auto":
        method = "expm" if uniform else "ode"
    if method not in ("expm", "ode"):
        raise ValidationError(f"unknown integration method {method!r}")
    if method == "expm" and not uniform and times.size > 1:
        raise ValidationError("the expm route needs a uniform time grid")

    def rhs(_t, y):
        rho = y.reshape(d, d)
        X = H_eff @ rho
        out = -1j * X + 1j * X.conj().T
        for L, k in ops:
            Y = L @ rho
            out = out + k * (L @ Y.conj().T).conj().T
        return out.ravel()

    track = keep_states or d <= 512
    states = np.empty((times.size, d, d), dtype=complex) if track else None
    purity = np.empty(times.size)
    tr = np.empty(times.size, dtype=complex)
    last = [rho0]

    def record(i, rho):
        if track:
            states[i] = rho
        last[0] = rho
        purity[i] = float(np.sum(np.abs(rho) ** 2))
        tr[i] = np.trace(rho)

    if times.size == 1 or (not ops and H.nnz == 0):
        for i in range(times.size):
            record(i, rho0)
    elif method == "expm":
        gen = _liouvillian(H_eff, ops, d) * steps[0]
        y = rho0.ravel()
        if times[0] != 0:
            y = expm_multiply(_liouvillian(H_eff, ops, d) * times[0], y)
        record(0, y.reshape(d, d))
        for i in range(1, times.size):
            y = expm_multiply(gen, y)
            if not np.all(np.isfinite(y)):
                raise StepInstability("propagation produced non-finite values")
            record(i, y.reshape(d, d))
    else:
        sol = solve_ivp(rhs, (times[0], times[-1]), rho0.ravel(), method="DOP853",
                        t_eval=times, rtol=rtol, atol=atol)
        if not sol.success:
            raise StepInstability(f"master-equation integration failed: {sol.message}")
        for i in range(times.size):
            record(i, sol.y[:, i].reshape(d, d))
    if not track:
        states = None
    if np.abs(tr - 1).max() > 1e-9:
        raise NumericalError(f"trace drifted by {np.abs(tr - 1).max():.2e}")
    for i, rho in (enumerate(states) if states is not None else [(times.size - 1, last[0])]):
        if np.linalg.eigvalsh(0.5 * (rho + rho.conj().T)).min() < -1e-8:
            raise NumericalError(f"density matrix lost positivity at t={times[i]}")
    unital = all(
        abs(L - L.conj().T).max() < 1e-14 if L.nnz else True for L, _ in ops
    )
    if unital and np.any(np.diff(purity) > 1e-9):
        raise NumericalError("purity increased under a unital jump set")
    meta = {"jumps": len(ops), "rates": [k for _, k in ops]}
    trace = DecoherenceTrace(times, purity, "lindblad", meta)
    return (trace, states) if keep_states else trace


def markov_jumps(state: StateVector, env: EnvironmentModel, channels: Sequence[InteractionChannel]):
    """Jump operators of the Born-Markov surrogate (system Hamiltonian neglected).

    Rates come from the plateau integrals ``gamma_jk = int <b_j b_k(s)> ds``;
    the Lamb shift is dropped.
    """
    channels = [ch for ch in channels if ch.lam > 0]
    if not channels:
        return []
    n_sys = state.geometry.n_sites
    terms, Gamma = pair_correlation_integrals(env, channels, n_sys)
    A = []
    for ch, x, _ in terms:
        a = system_operator(state.basis, x, ch.a)
        A.append(ch.lam * a)
    rates, U = np.linalg.eigh(Gamma.T)
    scale = max(abs(rates).max(), 1e-300)
    if rates.min() < -1e-8 * scale:
        raise NegativeInput(f"surrogate rate matrix is not positive ({rates.min():.3e})")
    jumps = []
    for m in np.flatnonzero(rates > 1e-12 * scale):
        L = sum(U[k, m] * A[k] for k in range(len(A)))
        jumps.append((sp.csr_matrix(L), float(rates[m])))
    return jumps


def lindblad_surrogate(state: StateVector, env: EnvironmentModel,
                       channels: Sequence[InteractionChannel], H_sys=None, times=None
                       ) -> DecoherenceTrace:
    jumps = markov_jumps(state, env, channels)
    trace = lindblad_evolve(state.amplitudes, H_sys, jumps, times)
    trace.metadata.update({"seed": env.spec.seed, "env_kind": env.spec.kind})
    return _check_trace(trace, _sys_dim(state))


# ---------------------------------------------------------------------------
# leaky box
# ---------------------------------------------------------------------------


def embed_truncated(state: StateVector, n_max: int | None = None) -> StateVector:
    """Move a boson state onto the truncated basis with at most ``n_max`` particles."""
    basis = state.basis
    if not isinstance(basis, FockBasis):
        raise ValidationError("leaky-box runs need a boson state")
    if basis.kind == "truncated" and (n_max is None or n_max == basis.n_particles):
        return state
    n_max = basis.n_particles if n_max is None else n_max
    target = fock_basis(basis.n_sites, "truncated", n_max, basis.cutoff)
    idx = target.lookup(basis.states)
    if np.any(idx < 0):
        raise ValidationError("state does not fit in the truncated basis")
    amps = np.zeros(target.size, dtype=complex)
    amps[idx] = state.amplitudes
    return StateVector(state.geometry, target, amps, state.label)


def leaky_box(state: StateVector, kappa: float, times, H_sys=None, site: int = 0,
              keep_states: bool = False):
    """Lindblad loss ``sqrt(kappa) psi(site)`` into an empty reservoir."""
    state = embed_truncated(state)
    L, target = annihilation(state.basis, site)
    if target != state.basis:
        raise ValidationError("loss operator needs a truncated basis")
    out = lindblad_evolve(state.amplitudes, H_sys, [(L, kappa)], times, keep_states=keep_states)
    trace = out[0] if keep_states else out
    trace.metadata.update({"kappa": kappa, "site": site})
    return out


def leaky_box_quasifree(M: int, times, kappa: float, J_hop: float = 1.0, n_particles: int | None = None,
                        coherent: bool = False, site: int = 0, boundary: str = "periodic"
                        ) -> DecoherenceTrace:
    """Closed-form leaky box at U = 0.

    Hopping plus loss is quadratic, so the zero-momentum mode evolves into
    ``sqrt(eta) s^dag + sqrt(1 - eta) e^dag`` with ``eta(t) = |G(t) u0|^2``.
    A Fock state of that mode leaves a binomial mixture of Fock states of
    ``s``; a coherent state stays pure.
    """
    from scipy.linalg import expm
    from scipy.stats import binom

    hbar = config.get().hbar
    if kappa < 0:
        raise NegativeInput(f"negative leak rate {kappa}")
    times = np.asarray(times, dtype=float)
    h = np.zeros((M, M))
    for x in range(M if boundary == "periodic" and M > 2 else M - 1):
        y = (x + 1) % M
        h[x, y] -= J_hop
        h[y, x] -= J_hop
    gen = -1j * h / hbar
    gen[site, site] -= 0.5 * kappa
    u0 = np.ones(M) / math.sqrt(M)
    eta = np.array([np.linalg.norm(expm(gen * t) @ u0) ** 2 for t in times])
    if coherent:
        purity = np.ones(times.size)
    else:
        k = np.arange(n_particles + 1)
        purity = np.array([np.sum(binom.pmf(k, n_particles, e) ** 2) for e in eta])
    meta = {"kappa": kappa, "site": site, "route": "quasi-free"}
    return DecoherenceTrace(times, purity, "lindblad", meta)
