"""Fluctuations of intensive operators and the AFS/NFS classification.

For a qubit register an additive operator is ``A_ext = sum_x sum_a c[x, a] sigma_a(x)``
and the intensive operator is ``A = A_ext / V``.  Coefficients are normalized to
``sum c**2 == V``.  Under that constraint

    <dA^2> = c^T C c / V^2   and   max <dA^2> = lambda_max(C) / V,

where ``C[(x,a),(y,b)] = 1/2 <{dsigma_a(x), dsigma_b(y)}>`` is the 3V x 3V
covariance matrix.  Rows and columns of ``C`` are ordered ``3*x + a`` with
``a`` running over (x, y, z).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np
import scipy.sparse as sp

from . import config
from .errors import (
    EigensolverError,
    GeometryMismatch,
    InsufficientData,
    NonpositiveValue,
    TruncationOverflow,
    ValidationError,
)
from .fitting import fit_power
from .hilbert import AXES, FockBasis, StateVector, TensorBasis, annihilation, pauli_op


@dataclass(frozen=True, eq=False)
class AdditiveOperator:
    n_sites: int
    coefficients: np.ndarray  # shape (n_sites, 3)
    hermitian: bool = True

    def __post_init__(self):
        c = np.array(self.coefficients, dtype=float).reshape(self.n_sites, 3)
        norm2 = float(np.sum(c**2))
        if abs(norm2 - self.n_sites) > 1e-9:
            raise ValidationError(
                f"coefficients must satisfy sum c^2 = V = {self.n_sites}, got {norm2:.12g}"
            )
        c.setflags(write=False)
        object.__setattr__(self, "coefficients", c)

    @classmethod
    def from_raw(cls, coefficients) -> AdditiveOperator:
        """Rescale an arbitrary nonzero (V, 3) field to the normalization."""
        c = np.asarray(coefficients, dtype=float)
        c = c.reshape(-1, 3)
        norm = np.linalg.norm(c)
        if norm == 0:
            raise ValidationError("coefficient field is zero")
        return cls(c.shape[0], c * np.sqrt(c.shape[0]) / norm)

    @classmethod
    def uniform(cls, n_sites: int, axis: str) -> AdditiveOperator:
        """Same Pauli axis on every site (``"z"`` is the magnetization)."""
        c = np.zeros((n_sites, 3))
        c[:, AXES.index(axis)] = 1.0
        return cls(n_sites, c)

    @classmethod
    def magnetization(cls, n_sites: int) -> AdditiveOperator:
        return cls.uniform(n_sites, "z")

    def intensive_matrix(self) -> sp.csr_matrix:
        V = self.n_sites
        out = sp.csr_matrix((2**V, 2**V), dtype=complex)
        for x in range(V):
            for a, axis in enumerate(AXES):
                if self.coefficients[x, a] != 0:
                    out = out + self.coefficients[x, a] * pauli_op(V, x, axis)
        return out / V

    def triples(self) -> list[list]:
        return [
            [x, AXES[a], float(self.coefficients[x, a])]
            for x in range(self.n_sites)
            for a in range(3)
            if self.coefficients[x, a] != 0
        ]


@dataclass(frozen=True, eq=False)
class CovarianceMatrix:
    n_sites: int
    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.shape != (3 * self.n_sites,) * 2:
            raise GeometryMismatch("covariance matrix must be 3V x 3V")
        if np.abs(m - m.T).max() > 1e-10:
            raise ValidationError("covariance matrix is not symmetric")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    def block(self, x: int, y: int) -> np.ndarray:
        return self.matrix[3 * x: 3 * x + 3, 3 * y: 3 * y + 3]

    def axis_block(self, axis: str) -> np.ndarray:
        a = AXES.index(axis)
        return self.matrix[a::3, a::3]


@dataclass(frozen=True, eq=False)
class FluctuationReport:
    value: float
    optimal: AdditiveOperator
    lambda_max: float
    n_sites: int
    state_label: str = ""
    residual: float = 0.0

    def to_dict(self) -> dict:
        return {
            "state_label": self.state_label,
            "V": self.n_sites,
            "value": self.value,
            "lambda_max": self.lambda_max,
            "coefficients": self.optimal.triples(),
        }

    def dominant_axes(self, tol: float = 1e-9) -> list[str]:
        weight = np.sum(self.optimal.coefficients**2, axis=0)
        return [AXES[a] for a in range(3) if weight[a] > tol]


def _require_qubits(state: StateVector) -> int:
    if state.kind != "qubit" or not isinstance(state.basis, TensorBasis):
        raise GeometryMismatch("operation needs a qubit register")
    return state.geometry.n_sites


def additive_variance(state: StateVector, A: AdditiveOperator) -> float:
    """<phi| dA^2 |phi> with A = (1/V) sum c sigma, evaluated with the full operator."""
    V = _require_qubits(state)
    if A.n_sites != V:
        raise GeometryMismatch(f"operator on {A.n_sites} sites, state on {V}")
    psi = state.amplitudes
    a_psi = A.intensive_matrix() @ psi
    mean = np.vdot(psi, a_psi).real
    var = float(np.vdot(a_psi, a_psi).real - mean**2)
    return max(var, 0.0) if var > -1e-12 else var


def pauli_images(psi: np.ndarray, n_sites: int) -> np.ndarray:
    """Columns sigma_a(x)|psi> in the order 3*x + a."""
    idx = np.arange(psi.shape[0])
    out = np.empty((psi.shape[0], 3 * n_sites), dtype=complex)
    for x in range(n_sites):
        mask = 1 << x
        bit = (idx >> x) & 1
        flipped = psi[idx ^ mask]
        out[:, 3 * x] = flipped
        out[:, 3 * x + 1] = np.where(bit == 1, 1j, -1j) * flipped
        out[:, 3 * x + 2] = (1 - 2 * bit) * psi
    return out


def covariance_matrix(state: StateVector) -> CovarianceMatrix:
    V = _require_qubits(state)
    psi = state.amplitudes
    W = pauli_images(psi, V)
    # 1/2 <{P_a, P_b}> = Re <P_a psi | P_b psi> for Hermitian P
    second = (W.conj().T @ W).real
    means = (psi.conj() @ W).real
    C = second - np.outer(means, means)
    C = 0.5 * (C + C.T)
    return CovarianceMatrix(V, C)


def _canonical_top_vector(evecs: np.ndarray, evals: np.ndarray, tol: float) -> np.ndarray:
    """Lexicographically largest unit vector of the top eigenspace.

    The first coordinate with a nonzero projection onto the eigenspace is
    maximized; this also fixes the sign.
    """
    top = evals[-1]
    sel = evals >= top - tol
    Q = evecs[:, sel]
    for i in range(Q.shape[0]):
        v = Q @ Q[i]
        n = np.linalg.norm(v)
        if n > 1e-6:
            return v / n
    raise EigensolverError("empty top eigenspace")


def max_intensive_fluctuation(state: StateVector) -> FluctuationReport:
    V = _require_qubits(state)
    C = covariance_matrix(state).matrix
    evals, evecs = np.linalg.eigh(C)
    lam = float(evals[-1])
    scale = max(np.linalg.norm(C, 2), 1.0)
    v = _canonical_top_vector(evecs, evals, 1e-9 * scale)
    residual = float(np.linalg.norm(C @ v - lam * v))
    if residual > 1e-8 * scale:
        raise EigensolverError(f"eigenpair residual {residual:.2e} too large")
    v = np.where(np.abs(v) < 1e-12, 0.0, v)  # drop round-off components
    coeffs = v.reshape(V, 3) * np.sqrt(V) / np.linalg.norm(v)
    return FluctuationReport(
        value=lam / V,
        optimal=AdditiveOperator(V, coeffs),
        lambda_max=lam,
        n_sites=V,
        state_label=state.label,
        residual=residual,
    )


def psi_operator(basis: FockBasis) -> tuple[sp.csr_matrix, FockBasis]:
    """Psi = (1/M) sum_x psi(x), from ``basis`` into ``basis.lowered()``."""
    M = basis.n_sites
    total = None
    target = None
    for x in range(M):
        op, target = annihilation(basis, x)
        total = op if total is None else total + op
    return total / M, target


def check_truncation(state: StateVector, threshold: float = 1e-6) -> float:
    """Weight on the truncation boundary; raises above ``threshold``."""
    basis = state.basis
    if not isinstance(basis, FockBasis):
        return 0.0
    prob = np.abs(state.amplitudes) ** 2
    edge = np.zeros(basis.size, dtype=bool)
    if basis.kind == "truncated":
        edge |= basis.numbers == basis.n_particles
    if basis.cutoff is not None and basis.cutoff < basis.n_particles:
        edge |= np.any(basis.states == basis.cutoff, axis=1)
    weight = float(prob[edge].sum())
    if weight > threshold:
        raise TruncationOverflow(
            f"state carries weight {weight:.3e} on the truncation boundary", weight=weight
        )
    return weight


def psi_stats(state: StateVector, check: bool = True) -> tuple[complex, float]:
    """(<Psi>, <dPsi^dag dPsi>) for a boson state."""
    if state.kind != "boson" or not isinstance(state.basis, FockBasis):
        raise GeometryMismatch("Psi is defined on boson registers only")
    if check:
        check_truncation(state)
    if state.basis.kind == "fixedN" and state.basis.n_particles == 0:
        return 0j, 0.0
    op, target = psi_operator(state.basis)
    v = op @ state.amplitudes
    second = float(np.vdot(v, v).real)
    mean = complex(np.vdot(state.amplitudes, v)) if target == state.basis else 0j
    return mean, max(second - abs(mean) ** 2, 0.0)


def boson_fluctuation(state: StateVector) -> float:
    """<dPsi^dag dPsi> = <Psi^dag Psi> - |<Psi>|^2."""
    return psi_stats(state)[1]


@dataclass(frozen=True)
class FamilyClassification:
    exponent: float
    stderr: float
    r2: float
    verdict: str

    def to_dict(self) -> dict:
        return {"q": self.exponent, "stderr": self.stderr, "r2": self.r2, "verdict": self.verdict}


def verdict_for(q: float, afs_threshold: float | None = None,
                nfs_threshold: float | None = None) -> str:
    s = config.get()
    afs = s.afs_threshold if afs_threshold is None else afs_threshold
    nfs = s.nfs_threshold if nfs_threshold is None else nfs_threshold
    if q > afs:
        return "AFS"
    if q < nfs:
        return "NFS"
    return "intermediate"


def classify_family(rows: Iterable, afs_threshold: float | None = None,
                    nfs_threshold: float | None = None) -> FamilyClassification:
    """Exponent of the largest fluctuation against V, and the AFS/NFS verdict."""
    rows = [tuple(r)[:2] for r in rows]
    if len({r[0] for r in rows}) < 4:
        raise InsufficientData("classification needs at least 4 distinct sizes")
    if any(r[1] <= 0 for r in rows):
        raise NonpositiveValue("fluctuation values must be positive")
    fit = fit_power(rows, min_rows=4)
    return FamilyClassification(
        fit.exponent, fit.stderr, fit.r2, verdict_for(fit.exponent, afs_threshold, nfs_threshold)
    )
