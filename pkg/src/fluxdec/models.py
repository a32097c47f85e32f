"""Exemplar states: qubit families, transverse-field Ising SGS/PPV and the
Bose-Hubbard symmetric ground state |N,G> and pure-phase vacuum |alpha,G>.

Ising model: ``H = -J sum_<xy> sz_x sz_y - g sum_x sx_x`` on a ring.  The
symmetric ground state (SGS) is the lowest state of the even sector of the
spin-flip parity ``P = prod_x sx_x``; the pure-phase vacuum (PPV) is
``(|E0> + |E1>)/sqrt(2)`` with ``|E1>`` the lowest odd-parity state, signed so
that the magnetization is non-negative.

Bose-Hubbard model: ``H = -J_hop sum_<xy> (b_x^dag b_y + h.c.) + U/2 sum_x n_x (n_x - 1)``.
Sector ground states carry a phase fixed by a real positive overlap with the
zero-momentum condensate ``(b_0^dag)^N |vac>``.
"""
from __future__ import annotations

import dataclasses
import functools
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from . import config
from .errors import (
    DegenerateGroundState,
    EigensolverError,
    GeometryMismatch,
    MalformedFile,
    TruncationOverflow,
    ValidationError,
)
from .fluctuation import AdditiveOperator, additive_variance, psi_stats
from .hilbert import (
    FockBasis,
    HamiltonianSpec,
    StateVector,
    SystemGeometry,
    Term,
    TensorBasis,
    annihilation,
    enumerate_fock,
    fock_basis,
    fock_dimension,
    make_register,
    state_from_json,
)

QUBIT_FAMILIES = ("product", "ghz", "w", "dicke", "ising_sgs", "ising_ppv")
BOSON_FAMILIES = ("bh_sgs", "bh_ppv")


class ModelSpec(BaseModel):
    """Factory parameters for :func:`make_state`."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    family: Literal["product", "ghz", "w", "dicke", "ising_sgs", "ising_ppv", "bh_sgs", "bh_ppv"]
    V: int | None = None
    M: int | None = None
    N: int | None = None
    k: int | None = None
    J: float = 1.0
    g: float = 0.5
    U: float = 0.0
    J_hop: float = 1.0
    alpha: float | tuple[float, float] | None = None
    N_max: int | None = None
    cutoff: int | None = None
    axis: Literal["x", "y", "z"] = "z"
    local_basis: Literal["z", "x"] = "z"
    boundary: Literal["periodic", "open"] = "periodic"
    label: str | None = None

    @field_validator("alpha", mode="before")
    @classmethod
    def _alpha_pair(cls, v):
        if isinstance(v, list):
            return tuple(v)
        return v

    @model_validator(mode="after")
    def _check(self):
        if self.family in BOSON_FAMILIES:
            if self.M is None:
                raise ValueError(f"{self.family} needs M")
            if self.M < 2:
                raise ValueError("sizes must be >= 2")
            if self.family == "bh_sgs" and self.N is None:
                raise ValueError("bh_sgs needs N")
            if self.family == "bh_ppv":
                if self.alpha is None and self.N is None:
                    raise ValueError("bh_ppv needs alpha or N")
                need = ppv_cutoff(abs(self.alpha_complex))
                if self.N_max is not None and self.N_max < need:
                    raise ValueError(
                        f"N_max={self.N_max} below the required truncation {need} for |alpha|="
                        f"{abs(self.alpha_complex):.4g}"
                    )
        else:
            if self.V is None:
                raise ValueError(f"{self.family} needs V")
            if self.V < 2:
                raise ValueError("sizes must be >= 2")
            if self.family == "dicke" and (self.k is None or not 0 <= self.k <= self.V):
                raise ValueError("dicke needs 0 <= k <= V")
        return self

    @property
    def size(self) -> int:
        return self.M if self.family in BOSON_FAMILIES else self.V

    @property
    def alpha_complex(self) -> complex:
        if self.alpha is None:
            return complex(math.sqrt(self.N)) if self.N is not None else 0j
        if isinstance(self.alpha, tuple):
            return complex(self.alpha[0], self.alpha[1])
        return complex(self.alpha)

    @property
    def n_max(self) -> int:
        if self.N_max is not None:
            return self.N_max
        return ppv_cutoff(abs(self.alpha_complex))

    def with_size(self, size: int) -> ModelSpec:
        """Same template at another size; boson families keep the filling N/M."""
        if self.family in BOSON_FAMILIES:
            upd = {"M": size}
            if self.N is not None and self.M:
                upd["N"] = round(self.N * size / self.M)
            if self.family == "bh_ppv":
                upd["alpha"] = None
                upd["N_max"] = None
                if self.N is None:
                    upd["alpha"] = abs(self.alpha_complex) * math.sqrt(size / self.M)
            return self.model_copy(update=upd)
        return self.model_copy(update={"V": size})

    def describe(self) -> str:
        return self.label or f"{self.family}-{self.size}"


def ppv_cutoff(abs_alpha: float, tail: float | None = None) -> int:
    """Truncation for a Poisson mixture of mean |alpha|^2.

    At least ceil(|alpha|^2 + 5|alpha|) and large enough that the weight from
    N_max upward is below ``tail``.
    """
    tail = config.get().ppv_tail if tail is None else tail
    mean = abs_alpha**2
    n = math.ceil(mean + 5 * abs_alpha)
    if mean == 0:
        return max(n, 1)
    while _poisson_upper_tail(mean, n) >= tail:
        n += 1
    return n


def _poisson_upper_tail(mean: float, n: int) -> float:
    # P(N >= n), summed directly from the log-pmf
    total, k = 0.0, n
    while True:
        term = math.exp(-mean + k * math.log(mean) - math.lgamma(k + 1))
        total += term
        if term < 1e-18 * max(total, 1e-300) or k > n + 2000:
            return total
        k += 1


# ---------------------------------------------------------------------------
# qubit families
# ---------------------------------------------------------------------------

_LOCAL_PLUS = {
    "z": np.array([1.0, 0.0], dtype=complex),
    "x": np.array([1.0, 1.0], dtype=complex) / math.sqrt(2),
    "y": np.array([1.0, 1.0j], dtype=complex) / math.sqrt(2),
}
HADAMARD = np.array([[1, 1], [1, -1]], dtype=complex) / math.sqrt(2)


def _qubit_state(V: int, amps, label: str) -> StateVector:
    geom = SystemGeometry.qubits(V)
    return StateVector.from_amplitudes(geom, make_register(geom), amps, label)


def product_state(V: int, axis: str = "z") -> StateVector:
    local = _LOCAL_PLUS[axis]
    amps = np.ones(1, dtype=complex)
    for _ in range(V):
        amps = np.kron(local, amps)
    return _qubit_state(V, amps, f"product_{axis}-{V}")


def ghz_state(V: int) -> StateVector:
    amps = np.zeros(2**V, dtype=complex)
    amps[0] = amps[-1] = 1 / math.sqrt(2)
    return _qubit_state(V, amps, f"ghz-{V}")


def dicke_state(V: int, k: int) -> StateVector:
    idx = np.arange(2**V)
    weight = np.array([bin(i).count("1") for i in idx])
    amps = (weight == k).astype(complex)
    return _qubit_state(V, amps, f"dicke{k}-{V}")


def w_state(V: int) -> StateVector:
    return dicke_state(V, 1).with_label(f"w-{V}")


def rotate_all(state: StateVector, unitary: np.ndarray) -> StateVector:
    """Apply the same single-qubit unitary to every site."""
    V = state.geometry.n_sites
    t = state.amplitudes.reshape((2,) * V)
    for ax in range(V):
        t = np.moveaxis(np.tensordot(unitary, t, axes=([1], [ax])), 0, ax)
    return StateVector(state.geometry, state.basis, t.reshape(-1), state.label)


def ising_hamiltonian(V: int, J: float, g: float, boundary: str = "periodic") -> sp.csr_matrix:
    idx = np.arange(2**V)
    bits = (idx[:, None] >> np.arange(V)) & 1
    spins = 1 - 2 * bits
    bonds = _bonds(V, boundary)
    diag = np.zeros(2**V)
    for x, y in bonds:
        diag -= J * spins[:, x] * spins[:, y]
    rows, cols = [], []
    for x in range(V):
        rows.append(idx ^ (1 << x))
        cols.append(idx)
    off = sp.csr_matrix(
        (np.full(V * 2**V, -g), (np.concatenate(rows), np.concatenate(cols))),
        shape=(2**V, 2**V),
    )
    return (sp.diags(diag) + off).tocsr()


def _bonds(n: int, boundary: str) -> list[tuple[int, int]]:
    bonds = [(x, x + 1) for x in range(n - 1)]
    if boundary == "periodic" and n > 2:
        bonds.append((n - 1, 0))
    return bonds


def ising_hamiltonian_spec(V: int, J: float, g: float, boundary: str = "periodic"
                           ) -> HamiltonianSpec:
    terms = [Term(-J, b, ("z", "z")) for b in _bonds(V, boundary)]
    terms += [Term(-g, (x,), ("x",)) for x in range(V)]
    return HamiltonianSpec(TensorBasis((2,) * V), tuple(terms))


def _parity_isometry(V: int, sign: int) -> sp.csr_matrix:
    half = 2 ** (V - 1)
    reps = np.arange(half)
    partners = reps ^ (2**V - 1)
    data = np.concatenate([np.ones(half), sign * np.ones(half)]) / math.sqrt(2)
    return sp.csr_matrix(
        (data, (np.concatenate([reps, partners]), np.concatenate([reps, reps]))),
        shape=(2**V, half),
    )


def lowest_eigenpairs(H, k: int = 2) -> tuple[np.ndarray, np.ndarray]:
    """Lowest ``k`` eigenpairs; dense below the switch dimension, Lanczos above."""
    n = H.shape[0]
    k = min(k, n)
    if n < config.get().eig_switch_dim or n <= k + 1:
        dense = H.toarray() if sp.issparse(H) else np.asarray(H)
        w, v = np.linalg.eigh(dense)
        return w[:k], v[:, :k]
    try:
        w, v = spla.eigsh(H, k=k, which="SA", tol=1e-12, ncv=max(2 * k + 1, 30))
    except spla.ArpackError as exc:
        raise EigensolverError(f"eigsh failed: {exc}") from exc
    order = np.argsort(w)
    w, v = w[order], v[:, order]
    norm_h = spla.norm(H, 1)
    res = np.linalg.norm(H @ v[:, 0] - w[0] * v[:, 0])
    if res > 1e-9 * max(norm_h, 1.0):
        raise EigensolverError(f"ground-state residual {res:.2e}")
    return w, v


@functools.lru_cache(maxsize=32)
def ising_sector_states(V: int, J: float, g: float, boundary: str = "periodic"):
    """((E0, |E0>), (E1, |E1>)): lowest even- and odd-parity eigenstates."""
    H = ising_hamiltonian(V, J, g, boundary)
    out = []
    for sign in (+1, -1):
        B = _parity_isometry(V, sign)
        w, v = lowest_eigenpairs((B.T @ H @ B).tocsr(), 2)
        if sign == 1 and len(w) > 1 and w[1] - w[0] < 1e-12:
            raise DegenerateGroundState(
                f"even-sector gap {w[1] - w[0]:.2e} below 1e-12", gap=float(w[1] - w[0])
            )
        vec = B @ v[:, 0]
        # real eigenvectors; fix the sign by the largest component
        vec = vec * np.sign(vec[np.argmax(np.abs(vec))])
        out.append((float(w[0]), vec))
    return tuple(out)


def ising_sgs(V: int, J: float = 1.0, g: float = 0.5, boundary: str = "periodic") -> StateVector:
    (_, v0), _ = ising_sector_states(V, J, g, boundary)
    return _qubit_state(V, v0, f"ising_sgs-{V}")


def ising_ppv(V: int, J: float = 1.0, g: float = 0.5, boundary: str = "periodic") -> StateVector:
    (_, v0), (_, v1) = ising_sector_states(V, J, g, boundary)
    mz = AdditiveOperator.magnetization(V).intensive_matrix()
    cross = np.vdot(v0, mz @ v1).real
    sign = 1.0 if cross >= 0 else -1.0
    return _qubit_state(V, (v0 + sign * v1) / math.sqrt(2), f"ising_ppv-{V}")


# ---------------------------------------------------------------------------
# Bose-Hubbard
# ---------------------------------------------------------------------------


def bose_hubbard_spec(basis: FockBasis, J_hop: float, U: float, boundary: str = "periodic"
                      ) -> HamiltonianSpec:
    terms = []
    for x, y in _bonds(basis.n_sites, boundary):
        terms.append(Term(-J_hop, (x, y), ("bdag", "b")))
        terms.append(Term(-J_hop, (y, x), ("bdag", "b")))
    if U != 0:
        terms += [Term(U / 2, (x,), ("n(n-1)",)) for x in range(basis.n_sites)]
    return HamiltonianSpec(basis, tuple(terms))


def _condensate_amplitudes(states: np.ndarray) -> np.ndarray:
    """<n | (b_0^dag)^N |vac> / sqrt(N!) for occupation rows ``states``."""
    states = np.asarray(states, dtype=np.int64)
    M = states.shape[1]
    N = states.sum(axis=1)
    logs = 0.5 * (_lgamma(N + 1) - _lgamma(states + 1).sum(axis=1)) - 0.5 * N * math.log(M)
    return np.exp(logs)


def _lgamma(a) -> np.ndarray:
    from scipy.special import gammaln

    return gammaln(np.asarray(a, dtype=float))


def _fix_phase(vec: np.ndarray, reference: np.ndarray) -> np.ndarray:
    ov = np.vdot(reference, vec)
    if abs(ov) > 1e-12:
        return vec * (abs(ov) / ov)
    j = np.argmax(np.abs(vec))
    return vec * (abs(vec[j]) / vec[j])


@functools.lru_cache(maxsize=256)
def sector_ground_state(M: int, N: int, J_hop: float, U: float, cutoff: int | None = None,
                        boundary: str = "periodic") -> tuple[float, np.ndarray]:
    """Ground energy and phase-fixed |N,G> in the fixedN Fock basis."""
    basis = fock_basis(M, "fixedN", N, cutoff)
    if basis.size == 1:
        return 0.0 if N < 2 else float(_fock_diag_energy(basis, U)), np.ones(1, dtype=complex)
    H = bose_hubbard_spec(basis, J_hop, U, boundary).matrix.real
    w, v = lowest_eigenpairs(H.tocsr(), 2)
    if w[1] - w[0] < 1e-12:
        raise DegenerateGroundState(
            f"sector N={N} ground state is degenerate (gap {w[1] - w[0]:.2e})",
            gap=float(w[1] - w[0]),
        )
    vec = _fix_phase(v[:, 0].astype(complex), _condensate_amplitudes(basis.states))
    vec.setflags(write=False)
    return float(w[0]), vec


def _fock_diag_energy(basis: FockBasis, U: float) -> float:
    n = basis.states[0].astype(float)
    return float(U / 2 * np.sum(n * (n - 1)))


def bh_sgs(M: int, N: int, J_hop: float = 1.0, U: float = 0.0, cutoff: int | None = None,
           boundary: str = "periodic") -> StateVector:
    geom = SystemGeometry.bosons(M, cutoff, boundary=boundary)
    basis = make_register(geom, "fixedN", N=N)
    _, vec = sector_ground_state(M, N, float(J_hop), float(U), cutoff, boundary)
    return StateVector(geom, basis, vec, f"bh_sgs-{M}")


def poisson_weights(alpha: complex, n_max: int) -> np.ndarray:
    """Normalized e^{-|a|^2/2} a^N / sqrt(N!) for N = 0..n_max."""
    a = abs(alpha)
    n = np.arange(n_max + 1)
    if a == 0:
        w = (n == 0).astype(complex)
        return w
    logs = -0.5 * a**2 + n * math.log(a) - 0.5 * _lgamma(n + 1)
    w = np.exp(logs) * np.exp(1j * n * np.angle(alpha))
    return w / np.linalg.norm(w)


def bh_ppv(M: int, alpha: complex, J_hop: float = 1.0, U: float = 0.0,
           N_max: int | None = None, cutoff: int | None = None,
           boundary: str = "periodic") -> StateVector:
    """sum_N c_N |N,G> with Poisson weights, on the truncated Fock basis."""
    n_max = ppv_cutoff(abs(alpha)) if N_max is None else N_max
    geom = SystemGeometry.bosons(M, cutoff, boundary=boundary)
    basis = make_register(geom, "truncated", N_max=n_max)
    weights = poisson_weights(alpha, n_max)
    amps = np.zeros(basis.size, dtype=complex)
    for N in range(n_max + 1):
        if weights[N] == 0:
            continue
        sector = fock_basis(M, "fixedN", N, cutoff)
        _, vec = sector_ground_state(M, N, float(J_hop), float(U), cutoff, boundary)
        amps[basis.lookup(sector.states)] = weights[N] * vec
    return StateVector.from_amplitudes(geom, basis, amps, f"bh_ppv-{M}")


def make_state(spec: ModelSpec) -> StateVector:
    f = spec.family
    if f == "product":
        st = product_state(spec.V, spec.axis)
    elif f == "ghz":
        st = ghz_state(spec.V)
    elif f == "w":
        st = w_state(spec.V)
    elif f == "dicke":
        st = dicke_state(spec.V, spec.k)
    elif f == "ising_sgs":
        st = ising_sgs(spec.V, spec.J, spec.g, spec.boundary)
    elif f == "ising_ppv":
        st = ising_ppv(spec.V, spec.J, spec.g, spec.boundary)
    elif f == "bh_sgs":
        return bh_sgs(spec.M, spec.N, spec.J_hop, spec.U, spec.cutoff, spec.boundary).with_label(
            spec.describe())
    else:
        return bh_ppv(spec.M, spec.alpha_complex, spec.J_hop, spec.U, spec.n_max, spec.cutoff,
                      spec.boundary).with_label(spec.describe())
    if spec.local_basis == "x":
        st = rotate_all(st, HADAMARD)
    if st.geometry.boundary != spec.boundary:
        geom = dataclasses.replace(st.geometry, boundary=spec.boundary)
        st = StateVector(geom, st.basis, st.amplitudes, st.label)
    return st.with_label(spec.describe())


def model_hamiltonian(spec: ModelSpec, basis=None) -> HamiltonianSpec | None:
    """System Hamiltonian belonging to a family, or None for bare qubit states."""
    if spec.family in ("ising_sgs", "ising_ppv"):
        return ising_hamiltonian_spec(spec.V, spec.J, spec.g, spec.boundary)
    if spec.family in BOSON_FAMILIES:
        if basis is None:
            basis = make_state(spec).basis
        return bose_hubbard_spec(basis, spec.J_hop, spec.U, spec.boundary)
    return None


# ---------------------------------------------------------------------------
# order parameters
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OrderParameterStats:
    mean: complex
    fluctuation: float

    def to_dict(self) -> dict:
        return {"mean": [self.mean.real, self.mean.imag], "fluctuation": self.fluctuation}


def order_parameter_stats(state: StateVector, which: str) -> OrderParameterStats:
    if which == "magnetization":
        if state.kind != "qubit":
            raise GeometryMismatch("magnetization needs a qubit register")
        A = AdditiveOperator.magnetization(state.geometry.n_sites)
        mean = state.expect(A.intensive_matrix()).real
        return OrderParameterStats(complex(mean), additive_variance(state, A))
    if which == "psi":
        if state.kind != "boson":
            raise GeometryMismatch("psi needs a boson register")
        mean, fl = psi_stats(state)
        return OrderParameterStats(mean, fl)
    raise ValidationError(f"unknown order parameter {which!r}")


def long_range_order(state: StateVector) -> float:
    """<psi^dag(x) psi(x')> averaged over maximally separated pairs."""
    if state.kind != "boson" or not isinstance(state.basis, FockBasis):
        raise GeometryMismatch("long_range_order needs a boson register")
    basis = state.basis
    M = basis.n_sites
    if basis.kind == "fixedN" and basis.n_particles == 0:
        return 0.0
    images = [annihilation(basis, x)[0] @ state.amplitudes for x in range(M)]
    if state.geometry.boundary == "periodic":
        pairs = [(x, (x + M // 2) % M) for x in range(M)]
    else:
        pairs = [(0, M - 1)]
    vals = [np.vdot(images[x], images[y]) for x, y in pairs]
    return float(np.mean(vals).real)


def load_state(path) -> StateVector:
    try:
        obj = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise MalformedFile(f"cannot read statevector file {path}: {exc}") from exc
    st = state_from_json(obj)
    return st if st.label else st.with_label(Path(path).stem)


# ---------------------------------------------------------------------------
# translation-reduced sector route for the boson order parameter
# ---------------------------------------------------------------------------


class _ZeroMomentumSector:
    """Zero-momentum states of a fixed-N ring, one per translation orbit.

    ``|r~> = L_r^{-1/2} sum_{j<L_r} T^j |r>`` for orbit representative ``r``
    (minimal code) and orbit length ``L_r``.
    """

    def __init__(self, M: int, N: int, cutoff: int | None = None):
        self.M, self.N = M, N
        cap = N if cutoff is None else min(cutoff, N)
        self.cutoff = cutoff
        self.base = max(N, 1) + 1
        full = enumerate_fock(M, N, cap, exact=True)
        rep = self._rep_codes(full)
        self.codes = np.unique(rep)
        self.states = self._decode(self.codes)
        self.orbit = self._orbit_lengths(self.states)
        self.size = self.codes.size

    def _encode(self, states) -> np.ndarray:
        w = self.base ** np.arange(self.M - 1, -1, -1, dtype=np.int64)
        return np.asarray(states, dtype=np.int64) @ w

    def _decode(self, codes) -> np.ndarray:
        out = np.zeros((codes.size, self.M), dtype=np.int64)
        c = codes.copy()
        for x in range(self.M - 1, -1, -1):
            out[:, x] = c % self.base
            c //= self.base
        return out

    def _rep_codes(self, states) -> np.ndarray:
        best = self._encode(states)
        for j in range(1, self.M):
            best = np.minimum(best, self._encode(np.roll(states, j, axis=1)))
        return best

    def _orbit_lengths(self, states) -> np.ndarray:
        base = self._encode(states)
        length = np.full(states.shape[0], self.M)
        for j in range(self.M - 1, 0, -1):
            same = self._encode(np.roll(states, j, axis=1)) == base
            length = np.where(same & (self.M % j == 0), np.minimum(length, j), length)
        return length

    def locate(self, states) -> np.ndarray:
        rep = self._rep_codes(states)
        pos = np.clip(np.searchsorted(self.codes, rep), 0, self.size - 1)
        if not np.all(self.codes[pos] == rep):
            raise ValidationError("state outside the reduced sector")
        return pos


def _reduced_operator(src: _ZeroMomentumSector, dst: _ZeroMomentumSector, terms) -> sp.csr_matrix:
    """Matrix of a translation-invariant operator between zero-momentum sectors.

    ``terms`` is a list of (coefficient, sites, tags); element
    ``<r~'|O|r~> = sum_{s: rep(s)=r'} amp_s sqrt(L_r / L_r')``.
    """
    rows, cols, vals = [], [], []
    for coeff, sites, tags in terms:
        states = src.states.copy()
        amp = np.full(src.size, coeff, dtype=float)
        for site, tag in reversed(list(zip(sites, tags))):
            n = states[:, site]
            if tag == "b":
                amp = amp * np.sqrt(n)
                states[:, site] = n - 1
            elif tag == "bdag":
                amp = amp * np.sqrt(n + 1)
                states[:, site] = n + 1
            elif tag == "n(n-1)":
                amp = amp * n * (n - 1)
        ok = amp != 0
        if dst.cutoff is not None:
            ok &= np.all(states <= dst.cutoff, axis=1)
        if not ok.any():
            continue
        tgt = dst.locate(states[ok])
        src_idx = np.nonzero(ok)[0]
        rows.append(tgt)
        cols.append(src_idx)
        vals.append(amp[ok] * np.sqrt(src.orbit[src_idx] / dst.orbit[tgt]))
    if not rows:
        return sp.csr_matrix((dst.size, src.size))
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(dst.size, src.size),
    )


def _bh_terms(M: int, J_hop: float, U: float):
    terms = []
    for x, y in _bonds(M, "periodic"):
        terms.append((-J_hop, (x, y), ("bdag", "b")))
        terms.append((-J_hop, (y, x), ("bdag", "b")))
    if U != 0:
        terms += [(U / 2, (x,), ("n(n-1)",)) for x in range(M)]
    return terms


@functools.lru_cache(maxsize=512)
def _reduced_sector_data(M: int, N: int, J_hop: float, U: float, cutoff: int | None):
    sector = _ZeroMomentumSector(M, N, cutoff)
    if sector.size == 1:
        vec = np.ones(1)
    else:
        H = _reduced_operator(sector, sector, _bh_terms(M, J_hop, U))
        w, v = lowest_eigenpairs(H.tocsr(), 2)
        vec = v[:, 0]
    ref = np.sqrt(sector.orbit) * _condensate_amplitudes(sector.states)
    vec = _fix_phase(vec.astype(complex), ref)
    return sector, vec


@dataclass(frozen=True)
class SectorPsiStats:
    mean: complex
    fluctuation: float
    n_max: int
    condensate: tuple[float, ...]  # <N,G| b0^dag b0 |N,G>
    transition: tuple[complex, ...]  # <N-1,G| b0 |N,G>
    boundary_weight: float


def reduced_psi_stats(M: int, weights: np.ndarray, J_hop: float, U: float,
                      cutoff: int | None = None) -> SectorPsiStats:
    """Psi statistics of ``sum_N weights[N] |N,G>`` from zero-momentum sectors.

    Never builds the full Fock space; ``Psi = b0 / sqrt(M)`` with the
    zero-momentum mode ``b0 = M^{-1/2} sum_x b_x``.
    """
    if J_hop < 0:
        raise ValidationError("the zero-momentum route needs J_hop >= 0")
    weights = np.asarray(weights, dtype=complex)
    n_max = weights.size - 1
    b0_terms = [(1 / math.sqrt(M), (x,), ("b",)) for x in range(M)]
    live = np.abs(weights) > 0
    n0 = np.zeros(n_max + 1)
    trans = np.zeros(n_max + 1, dtype=complex)
    # free hopping: every |N,G> is (b0^dag)^N |vac> / sqrt(N!), so b0 acts in closed form
    free = U == 0 and J_hop > 0 and cutoff is None
    for N in range(1, n_max + 1):
        if not live[N]:
            continue
        if free:
            n0[N] = N
            trans[N] = math.sqrt(N) if live[N - 1] else 0.0
            continue
        sector, vec = _reduced_sector_data(M, N, float(J_hop), float(U), cutoff)
        lower, lvec = _reduced_sector_data(M, N - 1, float(J_hop), float(U), cutoff)
        img = _reduced_operator(sector, lower, b0_terms) @ vec
        n0[N] = float(np.vdot(img, img).real)
        if live[N - 1]:
            trans[N] = np.vdot(lvec, img)
    probs = np.abs(weights) ** 2
    second = float(np.sum(probs * n0))
    mean_b0 = complex(np.sum(np.conj(weights[:-1]) * weights[1:] * trans[1:]))
    fl = (second - abs(mean_b0) ** 2) / M
    return SectorPsiStats(
        mean=mean_b0 / math.sqrt(M),
        fluctuation=max(fl, 0.0),
        n_max=n_max,
        condensate=tuple(float(v) for v in n0),
        transition=tuple(complex(v) for v in trans),
        boundary_weight=float(probs[-1]),
    )


def psi_fluctuation(spec: ModelSpec, route: str = "auto") -> OrderParameterStats:
    """Psi mean and fluctuation of a boson family.

    ``route="dense"`` builds the state; ``"reduced"`` uses zero-momentum sectors;
    ``"auto"`` picks dense when the state fits the budget.
    """
    if spec.family not in BOSON_FAMILIES:
        raise GeometryMismatch("psi_fluctuation needs a boson family")
    if route == "auto":
        if spec.family == "bh_sgs":
            n_states = fock_dimension(spec.M, spec.N, spec.cutoff, True)
        else:
            n_states = fock_dimension(spec.M, spec.n_max, spec.cutoff, False)
        periodic_ok = spec.boundary == "periodic" and spec.J_hop >= 0
        route = "dense" if (n_states <= config.get().max_amplitudes or not periodic_ok) else "reduced"
    if route == "dense":
        st = make_state(spec)
        return order_parameter_stats(st, "psi")
    if spec.boundary != "periodic":
        raise ValidationError("the zero-momentum route needs a periodic ring")
    if spec.family == "bh_sgs":
        w = np.zeros(spec.N + 1, dtype=complex)
        w[spec.N] = 1.0
    else:
        w = poisson_weights(spec.alpha_complex, spec.n_max)
    stats = reduced_psi_stats(spec.M, w, spec.J_hop, spec.U, spec.cutoff)
    if spec.family == "bh_ppv" and stats.boundary_weight > config.get().ppv_tail:
        raise TruncationOverflow(
            f"weight {stats.boundary_weight:.3e} on the N_max sector", weight=stats.boundary_weight
        )
    return OrderParameterStats(stats.mean, stats.fluctuation)
