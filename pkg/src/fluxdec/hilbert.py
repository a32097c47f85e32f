"""States, operators and exact dynamics on small many-body Hilbert spaces.

Basis conventions
-----------------
* Tensor-product registers (qubits, and joint system/environment spaces):
  site 0 is the least significant index, ``index = sum_k i_k * prod_{j<k} d_j``.
  For qubits ``|0>`` is the +1 eigenstate of sigma_z.
* Bosonic Fock bases: occupation tuples ``(n_0, ..., n_{M-1})`` sorted
  lexicographically (``n_0`` most significant).  ``fixedN`` holds every tuple
  with ``sum(n) == N``; ``truncated`` every tuple with ``sum(n) <= N_max``.
  An optional per-site ``cutoff`` caps each ``n_x``.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from . import config
from .errors import (
    DimensionOverflow,
    EigensolverError,
    GeometryMismatch,
    InvalidSiteError,
    MalformedFile,
    NonHermitianError,
    ValidationError,
    VersionMismatch,
)

FORMAT_VERSION = 1

PAULI = {
    "I": np.eye(2, dtype=complex),
    "x": np.array([[0, 1], [1, 0]], dtype=complex),
    "y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "z": np.array([[1, 0], [0, -1]], dtype=complex),
    # sigma^+ raises |1> -> |0>
    "+": np.array([[0, 1], [0, 0]], dtype=complex),
    "-": np.array([[0, 0], [1, 0]], dtype=complex),
    "n": np.array([[0, 0], [0, 1]], dtype=complex),
}
AXES = ("x", "y", "z")


# ---------------------------------------------------------------------------
# geometry and bases
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SystemGeometry:
    n_sites: int
    local_kind: str = "qubit"
    boson_cutoff: int | None = None
    boundary: str = "periodic"
    contact_sites: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.n_sites < 1:
            raise ValidationError("n_sites must be positive")
        if self.local_kind not in ("qubit", "boson"):
            raise ValidationError(f"unknown local_kind {self.local_kind!r}")
        if self.boundary not in ("periodic", "open"):
            raise ValidationError(f"unknown boundary {self.boundary!r}")
        if self.boson_cutoff is not None and self.boson_cutoff < 0:
            raise ValidationError("invalid cutoff (< 0)")
        if self.contact_sites is None:
            object.__setattr__(self, "contact_sites", tuple(range(self.n_sites)))
        else:
            cs = tuple(int(c) for c in self.contact_sites)
            if len(set(cs)) != len(cs):
                raise ValidationError("contact_sites contains duplicates")
            if any(c < 0 or c >= self.n_sites for c in cs):
                raise InvalidSiteError(f"contact site outside 0..{self.n_sites - 1}")
            object.__setattr__(self, "contact_sites", cs)

    @classmethod
    def qubits(cls, n: int, **kw) -> SystemGeometry:
        return cls(n_sites=n, local_kind="qubit", **kw)

    @classmethod
    def bosons(cls, m: int, cutoff: int | None = None, **kw) -> SystemGeometry:
        return cls(n_sites=m, local_kind="boson", boson_cutoff=cutoff, **kw)


def _check_budget(n_entries: int, what: str = "state") -> None:
    cap = config.get().max_amplitudes
    if n_entries > cap:
        raise DimensionOverflow(
            f"{what} needs {n_entries} complex entries, budget is {cap}",
            requested=int(n_entries),
            budget=int(cap),
        )


class TensorBasis:
    """Full tensor-product basis with local dimensions ``dims``."""

    kind = "full"

    def __init__(self, dims: Sequence[int]):
        self.dims = tuple(int(d) for d in dims)
        if any(d < 1 for d in self.dims):
            raise ValidationError("local dimensions must be positive")
        self.size = int(np.prod(self.dims, dtype=object))
        self._strides = tuple(int(np.prod(self.dims[:k], dtype=object)) for k in range(len(self.dims)))

    @property
    def n_sites(self) -> int:
        return len(self.dims)

    def index(self, label: Sequence[int]) -> int:
        if len(label) != len(self.dims):
            raise ValidationError("label length does not match register")
        idx = 0
        for i, d, s in zip(label, self.dims, self._strides):
            if not 0 <= i < d:
                raise ValidationError(f"local index {i} out of range")
            idx += int(i) * s
        return idx

    def label(self, index: int) -> tuple[int, ...]:
        if not 0 <= index < self.size:
            raise ValidationError("index out of range")
        out = []
        for d in self.dims:
            out.append(index % d)
            index //= d
        return tuple(out)

    def local_values(self, site: int) -> np.ndarray:
        """Local index of ``site`` for every basis element."""
        return (np.arange(self.size) // self._strides[site]) % self.dims[site]

    def __eq__(self, other):
        return isinstance(other, TensorBasis) and self.dims == other.dims

    def __hash__(self):
        return hash(("tensor", self.dims))

    def __repr__(self):
        return f"TensorBasis(dims={self.dims})"


def fock_dimension(m: int, n_total: int, cutoff: int | None, exact: bool) -> int:
    cap = n_total if cutoff is None else min(cutoff, n_total)
    # ways[k] = number of tuples so far summing to k
    ways = [1] + [0] * n_total
    for _ in range(m):
        new = [0] * (n_total + 1)
        for k, w in enumerate(ways):
            if w:
                for n in range(0, min(cap, n_total - k) + 1):
                    new[k + n] += w
        ways = new
    return ways[n_total] if exact else sum(ways)


def enumerate_fock(m: int, n_total: int, cap: int, exact: bool) -> np.ndarray:
    """Occupation tuples of ``m`` modes, each ``<= cap``, summing to (at most) ``n_total``."""
    states = np.zeros((1, 0), dtype=np.int16)
    sums = np.zeros(1, dtype=np.int64)
    for site in range(m):
        blocks, block_sums = [], []
        for n in range(cap + 1):
            ok = sums + n <= n_total
            if exact and site == m - 1:
                ok = sums + n == n_total
            if not ok.any():
                continue
            col = np.full((int(ok.sum()), 1), n, dtype=np.int16)
            blocks.append(np.hstack([states[ok], col]))
            block_sums.append(sums[ok] + n)
        if not blocks:
            return np.zeros((0, m), dtype=np.int16)
        states = np.vstack(blocks)
        sums = np.concatenate(block_sums)
    return states


class FockBasis:
    """Occupation-number basis of ``n_sites`` bosonic modes."""

    def __init__(self, n_sites: int, kind: str, n_particles: int, cutoff: int | None = None):
        if kind not in ("fixedN", "truncated"):
            raise ValidationError(f"unknown Fock basis kind {kind!r}")
        if n_particles < 0:
            raise ValidationError("particle number must be >= 0")
        if cutoff is not None and cutoff < 0:
            raise ValidationError("invalid cutoff (< 0)")
        self.n_sites = int(n_sites)
        self.kind = kind
        self.n_particles = int(n_particles)
        self.cutoff = cutoff
        self.size = fock_dimension(self.n_sites, self.n_particles, cutoff, kind == "fixedN")
        if self.size == 0:
            raise ValidationError("no occupation tuple satisfies the cutoff")
        _check_budget(self.size, "Fock basis")
        self.max_occ = self.n_particles if cutoff is None else min(cutoff, self.n_particles)
        self.base = self.max_occ + 1
        self.states = self._enumerate()
        self.codes = self.encode(self.states)
        self.numbers = self.states.sum(axis=1)

    @property
    def N(self) -> int:
        return self.n_particles

    def _enumerate(self) -> np.ndarray:
        states = enumerate_fock(self.n_sites, self.n_particles, self.max_occ,
                                self.kind == "fixedN")
        order = np.argsort(self.encode(states), kind="stable")
        return states[order]

    def encode(self, states: np.ndarray) -> np.ndarray:
        states = np.asarray(states, dtype=np.int64)
        weights = self.base ** np.arange(self.n_sites - 1, -1, -1, dtype=np.int64)
        return states @ weights

    def lookup(self, states: np.ndarray) -> np.ndarray:
        """Indices of ``states`` (rows); -1 where a row is not in the basis."""
        states = np.atleast_2d(states)
        valid = np.all((states >= 0) & (states <= self.max_occ), axis=1)
        if self.kind == "fixedN":
            valid &= states.sum(axis=1) == self.n_particles
        else:
            valid &= states.sum(axis=1) <= self.n_particles
        codes = self.encode(np.where(valid[:, None], states, 0))
        pos = np.searchsorted(self.codes, codes)
        pos = np.clip(pos, 0, self.size - 1)
        found = valid & (self.codes[pos] == codes)
        return np.where(found, pos, -1)

    def index(self, label: Sequence[int]) -> int:
        idx = int(self.lookup(np.array([label]))[0])
        if idx < 0:
            raise ValidationError(f"{tuple(label)} is not in the basis")
        return idx

    def label(self, index: int) -> tuple[int, ...]:
        if not 0 <= index < self.size:
            raise ValidationError("index out of range")
        return tuple(int(v) for v in self.states[index])

    def lowered(self) -> FockBasis:
        """Basis reached by one annihilation (fixedN: N-1; truncated: itself)."""
        if self.kind == "truncated":
            return self
        if self.n_particles == 0:
            raise ValidationError("cannot lower the vacuum sector")
        return fock_basis(self.n_sites, "fixedN", self.n_particles - 1, self.cutoff)

    def __eq__(self, other):
        return isinstance(other, FockBasis) and self._key() == other._key()

    def __hash__(self):
        return hash(self._key())

    def _key(self):
        return ("fock", self.n_sites, self.kind, self.n_particles, self.cutoff)

    def __repr__(self):
        return (
            f"FockBasis(n_sites={self.n_sites}, kind={self.kind!r}, "
            f"N={self.n_particles}, cutoff={self.cutoff}, size={self.size})"
        )


@functools.lru_cache(maxsize=64)
def fock_basis(n_sites: int, kind: str, n_particles: int, cutoff: int | None = None) -> FockBasis:
    return FockBasis(n_sites, kind, n_particles, cutoff)


def make_register(geometry: SystemGeometry, basis: str = "full", N: int | None = None,
                  N_max: int | None = None):
    """Enumerate the basis of ``geometry``.

    Qubit registers only support ``basis="full"``.  Boson registers need
    ``basis="fixedN"`` with ``N`` or ``basis="truncated"`` with ``N_max``.
    """
    if geometry.local_kind == "qubit":
        if basis != "full":
            raise ValidationError("qubit registers use the full basis")
        _check_budget(2**geometry.n_sites, "qubit register")
        return TensorBasis((2,) * geometry.n_sites)
    if basis == "fixedN":
        if N is None:
            raise ValidationError("fixedN basis needs N")
        return fock_basis(geometry.n_sites, "fixedN", N, geometry.boson_cutoff)
    if basis == "truncated":
        if N_max is None:
            raise ValidationError("truncated basis needs N_max")
        return fock_basis(geometry.n_sites, "truncated", N_max, geometry.boson_cutoff)
    raise ValidationError(f"boson registers need basis 'fixedN' or 'truncated', got {basis!r}")


# ---------------------------------------------------------------------------
# states and density operators
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class StateVector:
    geometry: SystemGeometry
    basis: TensorBasis | FockBasis
    amplitudes: np.ndarray
    label: str = ""

    def __post_init__(self):
        amps = np.array(self.amplitudes, dtype=complex).ravel()
        if amps.shape[0] != self.basis.size:
            raise GeometryMismatch(
                f"{amps.shape[0]} amplitudes for a basis of size {self.basis.size}"
            )
        norm = np.linalg.norm(amps)
        if abs(norm - 1.0) > 1e-10:
            raise ValidationError(f"state is not normalized (norm {norm:.12g})")
        amps.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)

    @classmethod
    def from_amplitudes(cls, geometry, basis, amplitudes, label: str = "", normalize=True):
        amps = np.asarray(amplitudes, dtype=complex)
        if normalize:
            nrm = np.linalg.norm(amps)
            if nrm == 0:
                raise ValidationError("zero vector cannot be normalized")
            amps = amps / nrm
        return cls(geometry, basis, amps, label)

    @property
    def dim(self) -> int:
        return self.basis.size

    @property
    def kind(self) -> str:
        return self.geometry.local_kind

    def expect(self, op) -> complex:
        psi = self.amplitudes
        return complex(np.vdot(psi, op @ psi))

    def with_label(self, label: str) -> StateVector:
        return StateVector(self.geometry, self.basis, self.amplitudes, label)


def _hermitian_error(m) -> float:
    diff = m - m.conj().T
    if sp.issparse(diff):
        return float(abs(diff).max()) if diff.nnz else 0.0
    return float(np.abs(diff).max()) if diff.size else 0.0


@dataclass(frozen=True, eq=False)
class DensityOperator:
    matrix: np.ndarray
    dims: tuple[int, ...] | None = None
    validate: bool = field(default=True, repr=False)

    def __post_init__(self):
        m = np.array(self.matrix, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValidationError("density matrix must be square")
        if self.dims is not None:
            dims = tuple(int(d) for d in self.dims)
            if int(np.prod(dims)) != m.shape[0]:
                raise GeometryMismatch("dims do not multiply to the matrix dimension")
            object.__setattr__(self, "dims", dims)
        if self.validate:
            if _hermitian_error(m) > 1e-10:
                raise NonHermitianError("density matrix is not Hermitian")
            tr = np.trace(m).real
            if abs(tr - 1.0) > 1e-9:
                raise ValidationError(f"trace {tr:.12g} != 1")
            ev = np.linalg.eigvalsh(m)
            if ev.min() < -1e-9:
                raise ValidationError(f"negative eigenvalue {ev.min():.3e}")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @classmethod
    def from_state(cls, state: StateVector | np.ndarray, dims=None) -> DensityOperator:
        if isinstance(state, StateVector):
            psi = state.amplitudes
            if dims is None and isinstance(state.basis, TensorBasis):
                dims = state.basis.dims
        else:
            psi = np.asarray(state, dtype=complex)
        return cls(np.outer(psi, psi.conj()), dims)

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]


def tensor(a, b):
    """Tensor product with ``a`` on the low sites and ``b`` on the high sites."""
    if isinstance(a, StateVector) and isinstance(b, StateVector):
        if not (isinstance(a.basis, TensorBasis) and isinstance(b.basis, TensorBasis)):
            raise ValidationError("tensor products are defined for tensor-product registers")
        if a.kind != b.kind:
            raise ValidationError("cannot tensor different register kinds")
        dims = a.basis.dims + b.basis.dims
        _check_budget(a.dim * b.dim)
        geom = SystemGeometry(len(dims), a.kind, boundary=a.geometry.boundary)
        return StateVector(geom, TensorBasis(dims), np.kron(b.amplitudes, a.amplitudes),
                           label=f"{a.label}*{b.label}".strip("*"))
    if isinstance(a, DensityOperator) and isinstance(b, DensityOperator):
        da = a.dims or (a.dimension,)
        db = b.dims or (b.dimension,)
        _check_budget((a.dimension * b.dimension) ** 2, "density matrix")
        return DensityOperator(np.kron(b.matrix, a.matrix), da + db)
    raise ValidationError("tensor() needs two states or two density operators")


def partial_trace(rho: DensityOperator, keep: Sequence[int], dims: Sequence[int] | None = None
                  ) -> DensityOperator:
    """Trace out every site not in ``keep``; kept sites stay in increasing order."""
    dims = tuple(dims) if dims is not None else rho.dims
    if dims is None:
        raise GeometryMismatch("partial_trace needs the tensor structure (dims)")
    if int(np.prod(dims)) != rho.dimension:
        raise GeometryMismatch("dims do not match the density matrix")
    n = len(dims)
    keep = sorted(set(int(k) for k in keep))
    if any(k < 0 or k >= n for k in keep):
        raise InvalidSiteError(f"keep sites must lie in 0..{n - 1}")
    # numpy reshape puts the most significant site first
    t = rho.matrix.reshape(dims[::-1] * 2)
    letters = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ"
    if 2 * n > len(letters):
        raise ValidationError("too many sites for partial_trace")
    row = [letters[i] for i in range(n)]
    col = [letters[n + i] for i in range(n)]
    out_r, out_c = [], []
    for site in range(n):
        ax = n - 1 - site
        if site in keep:
            out_r.append(row[ax])
            out_c.append(col[ax])
        else:
            col[ax] = row[ax]
    # output axes: most significant kept site first
    spec = "".join(row) + "".join(col) + "->" + "".join(out_r[::-1]) + "".join(out_c[::-1])
    red = np.einsum(spec, t)
    kd = tuple(dims[k] for k in keep)
    d = int(np.prod(kd)) if kd else 1
    return DensityOperator(red.reshape(d, d), kd if kd else (1,), validate=False)


def purity(rho: DensityOperator | np.ndarray) -> float:
    m = rho.matrix if isinstance(rho, DensityOperator) else np.asarray(rho)
    # Tr[rho^2] = sum |rho_ij|^2 for Hermitian rho
    return float(np.sum(np.abs(m) ** 2))


def linear_entropy(rho: DensityOperator | np.ndarray) -> float:
    return 1.0 - purity(rho)


# ---------------------------------------------------------------------------
# operators
# ---------------------------------------------------------------------------


def embed(op, site: int, dims: Sequence[int]) -> sp.csr_matrix:
    """Sparse matrix of a local operator acting on factor ``site``."""
    dims = tuple(dims)
    lo = int(np.prod(dims[:site], dtype=object))
    hi = int(np.prod(dims[site + 1:], dtype=object))
    op = sp.csr_matrix(op)
    return sp.kron(sp.kron(sp.identity(hi, format="csr"), op), sp.identity(lo, format="csr"),
                   format="csr")


def pauli_op(n_sites: int, site: int, axis: str) -> sp.csr_matrix:
    if not 0 <= site < n_sites:
        raise InvalidSiteError(f"site {site} outside register of {n_sites}")
    return embed(PAULI[axis], site, (2,) * n_sites)


def _fock_apply(basis: FockBasis, target: FockBasis, sites, tags) -> sp.csr_matrix:
    """Matrix of a product of ladder/number operators between Fock bases.

    ``tags`` are applied right to left, like an operator product.
    """
    states = basis.states.astype(np.int64)
    amp = np.ones(basis.size)
    for site, tag in reversed(list(zip(sites, tags))):
        n = states[:, site]
        if tag == "b":
            amp = amp * np.sqrt(n)
            states = states.copy()
            states[:, site] = n - 1
        elif tag == "bdag":
            amp = amp * np.sqrt(n + 1)
            states = states.copy()
            states[:, site] = n + 1
        elif tag == "n":
            amp = amp * n
        elif tag == "n(n-1)":
            amp = amp * n * (n - 1)
        elif tag == "I":
            pass
        else:
            raise ValidationError(f"unknown boson operator tag {tag!r}")
    cols = np.arange(basis.size)
    ok = amp != 0
    rows = target.lookup(states[ok])
    hit = rows >= 0
    return sp.csr_matrix(
        (amp[ok][hit], (rows[hit], cols[ok][hit])), shape=(target.size, basis.size)
    )


def annihilation(basis: FockBasis, site: int) -> tuple[sp.csr_matrix, FockBasis]:
    """psi(site) as a matrix from ``basis`` into ``basis.lowered()``."""
    if not 0 <= site < basis.n_sites:
        raise InvalidSiteError(f"site {site} outside register of {basis.n_sites}")
    target = basis.lowered()
    return _fock_apply(basis, target, [site], ["b"]), target


def number_op(basis: FockBasis, site: int | None = None) -> sp.csr_matrix:
    if site is None:
        return sp.diags(basis.numbers.astype(float), format="csr")
    return sp.diags(basis.states[:, site].astype(float), format="csr")


def local_operator(basis, site: int, tag):
    """Operator ``tag`` on ``site``; tags are Pauli names, boson names or matrices."""
    if isinstance(basis, FockBasis):
        if tag in ("b",):
            return annihilation(basis, site)[0]
        if basis.kind == "fixedN" and tag == "bdag":
            raise ValidationError("bdag leaves a fixedN sector")
        return _fock_apply(basis, basis, [site], [tag])
    if isinstance(tag, str):
        if basis.dims[site] != 2 or tag not in PAULI:
            raise ValidationError(f"operator tag {tag!r} does not fit factor {site}")
        tag = PAULI[tag]
    return embed(tag, site, basis.dims)


# ---------------------------------------------------------------------------
# Hamiltonians
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Term:
    coefficient: complex
    sites: tuple[int, ...]
    ops: tuple  # str tags or ndarrays, one per site


@dataclass(frozen=True, eq=False)
class HamiltonianSpec:
    basis: TensorBasis | FockBasis
    terms: tuple[Term, ...] = ()
    extra: object = None  # pre-assembled sparse/dense matrix added to the terms

    @functools.cached_property
    def matrix(self) -> sp.csr_matrix:
        n = self.basis.size
        out = sp.csr_matrix((n, n), dtype=complex)
        for term in self.terms:
            out = out + term.coefficient * self._term_matrix(term)
        if self.extra is not None:
            out = out + sp.csr_matrix(self.extra)
        out = sp.csr_matrix(out)
        err = _hermitian_error(out)
        scale = max(1.0, float(abs(out).max()) if out.nnz else 0.0)
        if err > 1e-10 * scale:
            raise NonHermitianError(f"Hamiltonian is not Hermitian (error {err:.2e})")
        return out

    def _term_matrix(self, term: Term):
        if isinstance(self.basis, FockBasis):
            return _fock_apply(self.basis, self.basis, term.sites, term.ops)
        m = sp.identity(self.basis.size, format="csr", dtype=complex)
        for site, op in zip(term.sites, term.ops):
            m = local_operator(self.basis, site, op) @ m
        return m

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()

    @classmethod
    def from_matrix(cls, basis, matrix) -> HamiltonianSpec:
        return cls(basis, (), matrix)

    def __add__(self, other: HamiltonianSpec) -> HamiltonianSpec:
        if other.basis != self.basis:
            raise GeometryMismatch("cannot add Hamiltonians on different bases")
        extra = None
        if self.extra is not None or other.extra is not None:
            extra = sp.csr_matrix((self.basis.size,) * 2, dtype=complex)
            for e in (self.extra, other.extra):
                if e is not None:
                    extra = extra + sp.csr_matrix(e)
        return HamiltonianSpec(self.basis, self.terms + other.terms, extra)


def as_matrix(H) -> sp.csr_matrix | np.ndarray:
    if isinstance(H, HamiltonianSpec):
        return H.matrix
    return H


# ---------------------------------------------------------------------------
# time evolution
# ---------------------------------------------------------------------------


def _lanczos_step(Hm, v: np.ndarray, dt: float, m: int) -> tuple[np.ndarray, float]:
    """One Krylov step of exp(-i H dt) v; returns (vector, error estimate)."""
    n = v.shape[0]
    m = min(m, n)
    beta0 = np.linalg.norm(v)
    Q = np.zeros((m + 1, n), dtype=complex)
    alpha = np.zeros(m)
    beta = np.zeros(m)
    Q[0] = v / beta0
    k = m
    for j in range(m):
        w = Hm @ Q[j]
        alpha[j] = np.vdot(Q[j], w).real
        w = w - alpha[j] * Q[j] - (beta[j - 1] * Q[j - 1] if j else 0)
        # full reorthogonalization keeps the small basis clean
        w -= Q[: j + 1].T @ (Q[: j + 1].conj() @ w)
        beta[j] = np.linalg.norm(w)
        if beta[j] < 1e-12:
            k = j + 1
            break
        Q[j + 1] = w / beta[j]
    T = np.diag(alpha[:k]) + np.diag(beta[: k - 1], 1) + np.diag(beta[: k - 1], -1)
    ev, U = np.linalg.eigh(T)
    c = U @ (np.exp(-1j * ev * dt) * U[0].conj())
    err = abs(beta[k - 1] * c[k - 1]) if k == m else 0.0
    return beta0 * (Q[:k].T @ c), err


def _krylov_propagate(Hm, psi: np.ndarray, t: float, m: int, tol: float = 1e-12) -> np.ndarray:
    if t == 0:
        return psi.copy()
    norm_h = sp.linalg.norm(Hm, 1) if sp.issparse(Hm) else np.linalg.norm(Hm, 1)
    dt = min(abs(t), 10.0 / max(norm_h, 1e-300))
    sign = np.sign(t)
    done = 0.0
    v = psi
    while done < abs(t) - 1e-15:
        step = min(dt, abs(t) - done)
        for _ in range(60):
            w, err = _lanczos_step(Hm, v, sign * step, m)
            if err <= tol * max(step, 1e-300):
                break
            step *= 0.5
        else:
            raise EigensolverError("Krylov propagation failed to converge")
        v = w
        done += step
        dt = step * 1.5
    return v


class Propagator:
    """exp(-i H t / hbar) applied to vectors for many times.

    Uses a full eigendecomposition below ``eig_switch_dim``, Lanczos steps above.
    """

    def __init__(self, H, hbar: float | None = None):
        Hm = as_matrix(H)
        if _hermitian_error(Hm) > 1e-10 * max(1.0, float(abs(Hm).max()) if Hm.size else 1.0):
            raise NonHermitianError("Hamiltonian is not Hermitian")
        settings = config.get()
        self.hbar = settings.hbar if hbar is None else hbar
        self.dim = Hm.shape[0]
        self.krylov_dim = settings.krylov_dim
        if self.dim < settings.eig_switch_dim:
            dense = Hm.toarray() if sp.issparse(Hm) else np.asarray(Hm)
            self.evals, self.evecs = np.linalg.eigh(dense)
            self.H = None
        else:
            self.evals = self.evecs = None
            self.H = sp.csr_matrix(Hm)

    def apply(self, psi: np.ndarray, t: float) -> np.ndarray:
        if self.evecs is not None:
            c = self.evecs.conj().T @ psi
            return self.evecs @ (np.exp(-1j * self.evals * t / self.hbar) * c)
        return _krylov_propagate(self.H, psi, t / self.hbar, self.krylov_dim)

    def apply_many(self, psi: np.ndarray, times: Sequence[float]) -> np.ndarray:
        times = np.asarray(times, dtype=float)
        if self.evecs is not None:
            c = self.evecs.conj().T @ psi
            phases = np.exp(-1j * np.outer(times, self.evals) / self.hbar)
            return (phases * c) @ self.evecs.T
        out = np.empty((len(times), self.dim), dtype=complex)
        prev_t, v = 0.0, psi
        for i, t in enumerate(times):
            v = _krylov_propagate(self.H, v, (t - prev_t) / self.hbar, self.krylov_dim)
            out[i] = v
            prev_t = t
        return out


def evolve(state: StateVector, H, t: float, hbar: float | None = None) -> StateVector:
    """Apply exp(-i H t / hbar) to ``state``."""
    Hm = as_matrix(H)
    if Hm.shape[0] != state.dim:
        raise GeometryMismatch("Hamiltonian and state dimensions differ")
    psi = Propagator(Hm, hbar).apply(state.amplitudes, t)
    nrm = np.linalg.norm(psi)
    if abs(nrm - 1) > 1e-9:
        raise EigensolverError(f"norm drifted to {nrm:.12g}")
    return StateVector(state.geometry, state.basis, psi / nrm, state.label)


# ---------------------------------------------------------------------------
# statevector file format
# ---------------------------------------------------------------------------


def state_to_json(state: StateVector) -> dict:
    g = state.geometry
    out: dict = {"v": FORMAT_VERSION, "kind": g.local_kind, "n_sites": g.n_sites}
    if isinstance(state.basis, FockBasis):
        out["basis"] = state.basis.kind
        out["N"] = state.basis.n_particles
        if state.basis.cutoff is not None:
            out["cutoff"] = state.basis.cutoff
    else:
        out["basis"] = "full"
    out["amplitudes"] = [[float(a.real), float(a.imag)] for a in state.amplitudes]
    return out


def state_from_json(obj: dict, renormalize_tol: float = 1e-6) -> StateVector:
    if not isinstance(obj, dict):
        raise MalformedFile("statevector file must hold a JSON object")
    if obj.get("v") != FORMAT_VERSION:
        raise VersionMismatch(f"unsupported statevector format version {obj.get('v')!r}")
    allowed = {"v", "kind", "n_sites", "cutoff", "basis", "N", "amplitudes", "label"}
    unknown = set(obj) - allowed
    if unknown:
        raise MalformedFile(f"unknown keys {sorted(unknown)}")
    try:
        kind = obj["kind"]
        n_sites = int(obj["n_sites"])
        basis_kind = obj.get("basis", "full")
        raw = np.asarray(obj["amplitudes"], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedFile(f"malformed statevector file: {exc}") from exc
    if raw.ndim != 2 or raw.shape[1] != 2:
        raise MalformedFile("amplitudes must be a list of [re, im] pairs")
    if kind == "qubit":
        geom = SystemGeometry.qubits(n_sites)
        basis = make_register(geom, "full")
    elif kind == "boson":
        geom = SystemGeometry.bosons(n_sites, obj.get("cutoff"))
        if "N" not in obj:
            raise MalformedFile("boson statevectors need N")
        basis = make_register(geom, basis_kind, N=obj["N"], N_max=obj["N"])
    else:
        raise MalformedFile(f"unknown kind {kind!r}")
    amps = raw[:, 0] + 1j * raw[:, 1]
    if amps.shape[0] != basis.size:
        raise MalformedFile(f"{amps.shape[0]} amplitudes for basis of size {basis.size}")
    nrm = np.linalg.norm(amps)
    if abs(nrm - 1.0) >= renormalize_tol:
        from .errors import NormViolation

        raise NormViolation(f"state norm {nrm:.9g} deviates from 1", norm=float(nrm))
    return StateVector(geom, basis, amps / nrm, str(obj.get("label", "")))
