"""Finite environments, local couplings and environment correlation integrals.

An environment is a product of independent *blocks* (each a small dense
Hilbert space with Hamiltonian ``H`` and stationary state ``rho``).  Coupling
sites ("env sites") live inside blocks.  The coupling of one channel is

    H_int = lam * sum_{x in V_C} a(x) (x) b(x)        (+ h.c. if a or b is not Hermitian)

and the environment correlation entering the rate bound is

    g00 = 1/2 * int ds <b0^dag b0(s)>,   b0 = sum_{x in V_C} b(x).

For a finite environment the integral is evaluated as a running integral
``I(T) = int_{-T}^{T} C(s) ds`` (closed form in the eigenbasis) and ``g00`` is
half its value on a detected plateau.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
import scipy.sparse as sp
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .. import config
from ..errors import (
    GeometryMismatch,
    NonzeroMeanError,
    NoPlateauError,
    NumericalError,
    NyquistViolation,
    UnpairedSite,
    ValidationError,
)
from ..hilbert import PAULI, FockBasis, HamiltonianSpec, TensorBasis, Term, annihilation, embed


class EnvironmentSpec(BaseModel):
    """Environment recipe.

    kinds
      ``independent_baths``  one broadened two-level bath per group of
                             ``V_E_corr`` contact sites (default 1)
      ``common_mode``        a single broadened two-level bath shared by all sites
      ``random_matrix``      ``n_env_sites`` spins with a GUE Hamiltonian
      ``spin_bath``          ``n_env_sites`` spins, XX ring with random fields
      ``boson_modes``        ``n_env_sites`` truncated bosonic modes
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: Literal["spin_bath", "random_matrix", "boson_modes", "independent_baths", "common_mode"]
    n_env_sites: int | None = None
    bandwidth: float = 1.0
    omega: float = 0.5
    aux_levels: int = 128
    mode_frequencies: tuple[float, ...] | None = None
    mode_cutoff: int = 3
    mode_hopping: float = 0.0
    initial: Literal["ground", "vacuum", "thermal"] = "thermal"
    beta: float = 0.0
    V_E_corr: int | None = None
    identical: bool = True
    seed: int = 0
    corr_t_max: float = 20.0
    corr_dt: float = 0.05

    @model_validator(mode="after")
    def _check(self):
        if self.n_env_sites is not None and self.n_env_sites < 1:
            raise ValueError("n_env_sites must be positive")
        if self.aux_levels < 1 or self.mode_cutoff < 1:
            raise ValueError("aux_levels and mode_cutoff must be positive")
        if self.V_E_corr is not None and self.V_E_corr < 1:
            raise ValueError("V_E_corr must be positive")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if self.corr_t_max <= 0 or self.corr_dt <= 0:
            raise ValueError("correlation grid must be positive")
        return self


class InteractionChannel(BaseModel):
    """One local coupling term ``lam * sum_x a(x) (x) b(x)``."""

    model_config = ConfigDict(extra="forbid", frozen=True, populate_by_name=True)

    label: str = "channel"
    lam: float = Field(alias="lambda", ge=0.0)
    contact_sites: tuple[int, ...] | None = None
    a: str = "z"
    b: str = "x"
    pairing: tuple[int, ...] | None = None

    def sites(self, n_sites: int) -> tuple[int, ...]:
        cs = tuple(range(n_sites)) if self.contact_sites is None else self.contact_sites
        if len(set(cs)) != len(cs) or any(c < 0 or c >= n_sites for c in cs):
            raise ValidationError(f"invalid contact sites {cs} for {n_sites} system sites")
        return cs


# ---------------------------------------------------------------------------
# environment realization
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class EnvBlock:
    H: np.ndarray
    rho: np.ndarray
    kind: str  # "two_level", "spins", "modes"
    n_local: int  # coupling sites inside the block
    local_dim: int = 2
    _eig: tuple | None = field(default=None, repr=False)

    @property
    def dim(self) -> int:
        return self.H.shape[0]

    def eig(self):
        if self._eig is None:
            self._eig = np.linalg.eigh(self.H)
        return self._eig

    def operator(self, local: int, tag: str) -> np.ndarray:
        if self.kind == "modes":
            c = self.local_dim
            a = np.diag(np.sqrt(np.arange(1, c)), 1).astype(complex)
            ops = {"a": a, "adag": a.conj().T, "x": a + a.conj().T,
                   "n": np.diag(np.arange(c)).astype(complex)}
            if tag not in ops:
                raise ValidationError(f"unknown mode operator {tag!r}")
            dims = (c,) * self.n_local
            return embed(ops[tag], local, dims).toarray()
        if tag not in PAULI:
            raise ValidationError(f"unknown spin operator {tag!r}")
        if self.kind == "two_level":
            aux = self.dim // 2
            return np.kron(np.eye(aux), PAULI[tag])
        return embed(PAULI[tag], local, (2,) * self.n_local).toarray()


def _gue(d: int, rng: np.random.Generator) -> np.ndarray:
    """GUE matrix scaled to spectral radius 1."""
    A = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    G = (A + A.conj().T) / 2
    return G / np.abs(np.linalg.eigvalsh(G)).max()


def _initial_state(H: np.ndarray, spec: EnvironmentSpec) -> np.ndarray:
    w, v = np.linalg.eigh(H)
    if spec.initial == "thermal":
        p = np.exp(-spec.beta * (w - w.min()))
    else:
        # ground manifold, equally weighted so the state stays stationary
        p = (w - w[0] < 1e-10).astype(float)
    p = p / p.sum()
    rho = (v * p) @ v.conj().T
    return 0.5 * (rho + rho.conj().T)


def _two_level_block(spec: EnvironmentSpec, rng) -> EnvBlock:
    aux = spec.aux_levels
    d = 2 * aux
    H = spec.bandwidth * _gue(d, rng) + np.kron(np.eye(aux), np.diag([spec.omega / 2, -spec.omega / 2]))
    return EnvBlock(H, _initial_state(H, spec), "two_level", 1)


@dataclass(eq=False)
class EnvironmentModel:
    spec: EnvironmentSpec
    blocks: list[EnvBlock]
    site_map: list[tuple[int, int]]  # env site -> (block, local index)
    group: int = 1  # contact sites per bath for independent_baths

    @property
    def n_env_sites(self) -> int:
        return len(self.site_map)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(b.dim for b in self.blocks)

    def operator(self, env_site: int, tag: str) -> tuple[int, np.ndarray]:
        if not 0 <= env_site < self.n_env_sites:
            raise UnpairedSite(f"environment site {env_site} does not exist")
        blk, loc = self.site_map[env_site]
        return blk, self.blocks[blk].operator(loc, tag)

    def default_pairing(self, n_contact: int) -> tuple[int, ...]:
        k = self.spec.kind
        if k == "common_mode":
            return (0,) * n_contact
        if k == "independent_baths":
            return tuple(i // self.group for i in range(n_contact))
        return tuple(range(n_contact))

    def pairing(self, channel: InteractionChannel, n_contact: int) -> tuple[int, ...]:
        pairing = channel.pairing if channel.pairing is not None else self.default_pairing(n_contact)
        if len(pairing) != n_contact:
            raise UnpairedSite(
                f"channel {channel.label!r}: {len(pairing)} pairings for {n_contact} contact sites"
            )
        for e in pairing:
            if not 0 <= e < self.n_env_sites:
                raise UnpairedSite(f"channel {channel.label!r}: env site {e} does not exist")
        return tuple(pairing)

    def mean(self, env_site: int, tag: str) -> complex:
        blk, op = self.operator(env_site, tag)
        return complex(np.trace(self.blocks[blk].rho @ op))

    def stationarity_error(self) -> float:
        return max(float(np.abs(b.H @ b.rho - b.rho @ b.H).max()) for b in self.blocks)


def build_environment(spec: EnvironmentSpec, n_contact: int | None = None) -> EnvironmentModel:
    """Realize ``spec``; ``n_contact`` sizes baths when ``n_env_sites`` is unset."""
    rng = np.random.default_rng(spec.seed)
    kind = spec.kind
    n = spec.n_env_sites
    if kind == "independent_baths":
        group = spec.V_E_corr or 1
        if n is None:
            if n_contact is None:
                raise ValidationError("independent_baths needs n_env_sites or a contact count")
            n = math.ceil(n_contact / group)
        first = _two_level_block(spec, rng)
        blocks = [first]
        for _ in range(n - 1):
            if spec.identical:
                blocks.append(EnvBlock(first.H, first.rho, "two_level", 1))
            else:
                blocks.append(_two_level_block(spec, rng))
        model = EnvironmentModel(spec, blocks, [(i, 0) for i in range(n)], group)
    elif kind == "common_mode":
        model = EnvironmentModel(spec, [_two_level_block(spec, rng)], [(0, 0)])
    elif kind in ("random_matrix", "spin_bath"):
        n = n if n is not None else (n_contact or 1)
        d = 2**n
        if kind == "random_matrix":
            H = spec.bandwidth * _gue(d, rng)
        else:
            H = np.zeros((d, d), dtype=complex)
            fields = spec.omega + spec.bandwidth * rng.uniform(-1, 1, size=n)
            for j in range(n):
                H += 0.5 * fields[j] * embed(PAULI["z"], j, (2,) * n).toarray()
            for j in range(n - 1 if n < 3 else n):
                k = (j + 1) % n
                hop = embed(PAULI["+"], j, (2,) * n) @ embed(PAULI["-"], k, (2,) * n)
                hop = hop.toarray()
                H += spec.bandwidth * (hop + hop.conj().T)
        blk = EnvBlock(H, _initial_state(H, spec), "spins", n)
        model = EnvironmentModel(spec, [blk], [(0, j) for j in range(n)])
    else:  # boson_modes
        n = n if n is not None else (n_contact or 1)
        c = spec.mode_cutoff + 1
        freqs = spec.mode_frequencies or tuple(spec.omega + spec.bandwidth * j / max(n - 1, 1)
                                               for j in range(n))
        if len(freqs) != n:
            raise ValidationError("mode_frequencies must list one frequency per mode")
        dims = (c,) * n
        a = np.diag(np.sqrt(np.arange(1, c)), 1)
        H = sp.csr_matrix((c**n, c**n), dtype=complex)
        for j, w in enumerate(freqs):
            H = H + w * embed(a.T @ a, j, dims)
        if spec.mode_hopping:
            for j in range(n - 1):
                hop = embed(a.T, j, dims) @ embed(a, j + 1, dims)
                H = H + spec.mode_hopping * (hop + hop.conj().T)
        H = H.toarray()
        blk = EnvBlock(H, _initial_state(H, spec), "modes", n, local_dim=c)
        model = EnvironmentModel(spec, [blk], [(0, j) for j in range(n)])
    err = model.stationarity_error()
    if err > 1e-9:
        raise ValidationError(f"environment state is not stationary ([H, rho] = {err:.2e})")
    return model


# ---------------------------------------------------------------------------
# couplings
# ---------------------------------------------------------------------------


def system_operator(basis, site: int, tag: str):
    """Sparse matrix of the channel's a(x) on the system basis."""
    if isinstance(basis, FockBasis):
        if basis.kind != "truncated":
            raise ValidationError("boson couplings need a truncated Fock basis")
        if tag == "psi":
            return annihilation(basis, site)[0]
        if tag == "psidag":
            return annihilation(basis, site)[0].conj().T.tocsr()
        if tag == "n":
            return sp.diags(basis.states[:, site].astype(complex), format="csr")
        raise ValidationError(f"unknown boson system operator {tag!r}")
    if tag not in PAULI:
        raise ValidationError(f"unknown qubit system operator {tag!r}")
    return embed(PAULI[tag], site, basis.dims)


def _is_hermitian(m) -> bool:
    d = m - m.conj().T
    if sp.issparse(d):
        return d.nnz == 0 or abs(d).max() < 1e-14
    return np.abs(d).max() < 1e-14


def check_channel(channel: InteractionChannel, env: EnvironmentModel, n_sys_sites: int):
    """Validate pairing and zero environment mean; returns (contact, pairing)."""
    contact = channel.sites(n_sys_sites)
    pairing = env.pairing(channel, len(contact))
    for e in sorted(set(pairing)):
        m = env.mean(e, channel.b)
        if abs(m) > 1e-9:
            raise NonzeroMeanError(
                f"channel {channel.label!r}: <b> = {m:.3e} on env site {e}", env_site=e
            )
    return contact, pairing


def joint_basis(sys_basis, env: EnvironmentModel) -> TensorBasis:
    """System factors (one per qubit, or one Fock factor) followed by env blocks."""
    sys_dims = sys_basis.dims if isinstance(sys_basis, TensorBasis) else (sys_basis.size,)
    return TensorBasis(sys_dims + env.dims)


def build_interaction(channel: InteractionChannel, sys_basis, env: EnvironmentModel
                      ) -> HamiltonianSpec:
    """Joint-space Hamiltonian of one channel (system factors first)."""
    n_sys = sys_basis.n_sites
    contact, pairing = check_channel(channel, env, n_sys)
    jb = joint_basis(sys_basis, env)
    n_sys_factors = len(jb.dims) - len(env.blocks)
    terms = []
    for x, e in zip(contact, pairing):
        blk, b_op = env.operator(e, channel.b)
        a_op = system_operator(sys_basis, x, channel.a)
        if isinstance(sys_basis, TensorBasis):
            a_local = PAULI[channel.a]
            sys_factor = x
        else:
            a_local = a_op.toarray()
            sys_factor = 0
        support = (sys_factor, n_sys_factors + blk)
        terms.append(Term(channel.lam, support, (a_local, b_op)))
        if not (_is_hermitian(a_op) and _is_hermitian(b_op)):
            terms.append(Term(channel.lam, support, (a_local.conj().T, b_op.conj().T)))
    return HamiltonianSpec(jb, tuple(terms))


# ---------------------------------------------------------------------------
# correlation functions
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class EnvironmentCorrelation:
    times: np.ndarray
    correlation: np.ndarray  # C_B(s) on times
    running: np.ndarray  # int_{-T}^{T} C_B(s) ds on times
    g00: float
    plateau: tuple[float, float]
    momenta: np.ndarray | None = None
    g_matrix: np.ndarray | None = None

    def to_dict(self) -> dict:
        out = {"g00": self.g00, "plateau": list(self.plateau)}
        if self.g_matrix is not None:
            out["momenta"] = self.momenta.tolist()
            out["g_matrix_real"] = self.g_matrix.real.tolist()
            out["g_matrix_imag"] = self.g_matrix.imag.tolist()
        return out


class _Spectral:
    """``C(s) = sum w_nm exp(i (E_m - E_n) s)`` for one pair of block operators."""

    def __init__(self, block: EnvBlock, left: np.ndarray, right: np.ndarray):
        E, V = block.eig()
        Lt = V.conj().T @ left @ V
        Rt = V.conj().T @ right @ V
        rho_t = V.conj().T @ block.rho @ V
        X = rho_t @ Lt.conj().T  # rho B_left^dag
        self.E = E
        self.W = X * Rt.T
        self.w = self.W.ravel()
        self.omega = (E[None, :] - E[:, None]).ravel()
        keep = np.abs(self.w) > 1e-15 * max(np.abs(self.w).max(), 1e-300)
        self.w, self.omega = self.w[keep], self.omega[keep]

    def correlation(self, s: np.ndarray) -> np.ndarray:
        P = np.exp(1j * np.outer(s, self.E))
        return np.sum((P.conj() @ self.W) * P, axis=1)

    def running(self, T: np.ndarray) -> np.ndarray:
        om = self.omega
        small = np.abs(om) < 1e-12
        safe = np.where(small, 1.0, om)
        k = np.where(small[None, :], 2 * T[:, None], 2 * np.sin(np.outer(T, safe)) / safe[None, :])
        return k @ self.w

    @property
    def max_frequency(self) -> float:
        return float(np.abs(self.omega).max()) if self.omega.size else 0.0


def _find_plateau(T: np.ndarray, I: np.ndarray):
    s = config.get()
    n = len(T) - 1
    width = max(int(math.ceil(s.plateau_min_frac * n)), 1)
    for j in range(0, n - width + 1):
        seg = I[j: j + width + 1]
        mean = seg.mean()
        if mean != 0 and (seg.max() - seg.min()) / abs(mean) < s.plateau_rel_tol:
            return j, j + width
    return None


def _block_sums(env: EnvironmentModel, pairing, tag: str) -> dict[int, np.ndarray]:
    sums: dict[int, np.ndarray] = {}
    for e in pairing:
        blk, op = env.operator(e, tag)
        sums[blk] = sums.get(blk, 0) + op
    return sums


def env_correlation(env: EnvironmentModel, channel: InteractionChannel, t_max: float | None = None,
                    dt: float | None = None, n_sys_sites: int | None = None,
                    momenta: bool = False) -> EnvironmentCorrelation:
    """Correlation of the contact-summed coupling operator and its plateau integral.

    ``C_B(s) = <b0^dag b0(s)>`` with ``b0`` the sum of ``b`` over contact sites.
    Cross-block terms are products of means (zero by the channel check).
    """
    t_max = env.spec.corr_t_max if t_max is None else t_max
    dt = env.spec.corr_dt if dt is None else dt
    hbar = config.get().hbar
    n_contact = len(channel.contact_sites) if channel.contact_sites is not None else n_sys_sites
    if n_contact is None:
        raise ValidationError("env_correlation needs contact sites or the system size")
    sys_sites = n_sys_sites if n_sys_sites is not None else max(channel.contact_sites) + 1
    contact, pairing = check_channel(channel, env, sys_sites)
    if env.stationarity_error() > 1e-9:
        raise ValidationError("environment state is not stationary")
    times = np.arange(0, int(round(t_max / dt)) + 1) * dt
    # times are in units where the frequencies are E/hbar
    sums = _block_sums(env, pairing, channel.b)
    # identical blocks with identical operators share one spectral computation
    groups: dict = {}
    for b, op in sums.items():
        blk = env.blocks[b]
        key = (id(blk.H), id(blk.rho), op.tobytes())
        groups.setdefault(key, [b, op, 0])[2] += 1
    spectra = [(_Spectral(env.blocks[b], op, op), m) for b, op, m in groups.values()]
    fmax = max((sp_.max_frequency for sp_, _ in spectra), default=0.0) / hbar
    if fmax > 0 and dt > math.pi / fmax:
        raise NyquistViolation(
            f"dt={dt} does not resolve the fastest environment frequency {fmax:.4g}",
            dt=dt, max_frequency=fmax,
        )
    scaled = times / hbar
    C = sum(m * sp_.correlation(scaled) for sp_, m in spectra)
    I = sum(m * sp_.running(scaled) for sp_, m in spectra) * hbar
    means = {b: complex(np.trace(env.blocks[b].rho @ op)) for b, op in sums.items()}
    cross = sum(np.conj(means[a]) * means[b] for a in means for b in means if a != b)
    if abs(cross) > 1e-12:
        raise NonzeroMeanError("cross-block correlations do not vanish")
    I = np.real_if_close(I, tol=1e6)
    if np.iscomplexobj(I) and np.abs(I.imag).max() > 1e-9 * max(np.abs(I).max(), 1.0):
        raise NumericalError("running integral is not real")
    I = np.real(I)
    window = _find_plateau(times, I)
    if window is None:
        raise NoPlateauError(
            "running correlation integral has no plateau",
            running=[[float(t), float(v)] for t, v in zip(times, I)],
        )
    j0, j1 = window
    g00 = 0.5 * float(I[j0: j1 + 1].mean())
    out = EnvironmentCorrelation(times, C, I, g00, (float(times[j0]), float(times[j1])))
    if momenta:
        ks, g = _g_matrix(env, channel, contact, pairing, scaled, (j0, j1), hbar)
        out = EnvironmentCorrelation(times, C, I, g00, out.plateau, ks, g)
    return out


def _g_matrix(env, channel, contact, pairing, scaled, window, hbar):
    """g_{k1 k2} on the momentum grid of the contact sites (inspection only)."""
    n = len(contact)
    G = np.zeros((n, n), dtype=complex)
    j0, j1 = window
    ops = [env.operator(e, channel.b) for e in pairing]
    for i in range(n):
        for j in range(n):
            bi, oi = ops[i]
            bj, oj = ops[j]
            if bi != bj:
                continue
            spec_ij = _Spectral(env.blocks[bi], oi, oj)
            G[i, j] = 0.5 * hbar * spec_ij.running(scaled[j0: j1 + 1]).mean()
    G = 0.5 * (G + G.conj().T)
    L = max(contact) + 1
    ks = 2 * np.pi * np.arange(L) / L
    F = np.exp(-1j * np.outer(np.asarray(contact), ks))  # b_k = sum_x b(x) e^{-ikx}
    g = F.conj().T @ G @ F
    g = 0.5 * (g + g.conj().T)
    ev = np.linalg.eigvalsh(g)
    if ev.min() < -1e-8 * max(1.0, abs(ev).max()):
        raise NumericalError(f"g matrix is not positive (min eigenvalue {ev.min():.3e})")
    return ks, g


def pair_correlation_integrals(env: EnvironmentModel, channels: list[InteractionChannel],
                               n_sys_sites: int, t_max: float | None = None,
                               dt: float | None = None):
    """Plateau integrals ``int <b_j^dag b_k(s)> ds`` over all coupling terms.

    Returns (terms, Gamma) where ``terms`` lists (channel, system site, env site)
    and ``Gamma`` is the Hermitian matrix of integrals.  Each block's plateau
    window is taken from its own summed correlation.
    """
    t_max = env.spec.corr_t_max if t_max is None else t_max
    dt = env.spec.corr_dt if dt is None else dt
    hbar = config.get().hbar
    times = np.arange(0, int(round(t_max / dt)) + 1) * dt / hbar
    terms = []
    for ch in channels:
        contact, pairing = check_channel(ch, env, n_sys_sites)
        terms += [(ch, x, e) for x, e in zip(contact, pairing)]
    ops = [env.operator(e, ch.b) for ch, _, e in terms]
    windows = {}
    for blk in {b for b, _ in ops}:
        total = sum(op for b, op in ops if b == blk)
        I = np.real(_Spectral(env.blocks[blk], total, total).running(times))
        w = _find_plateau(times, I)
        if w is None:
            raise NoPlateauError(f"no plateau for environment block {blk}")
        windows[blk] = w
    n = len(terms)
    Gamma = np.zeros((n, n), dtype=complex)
    for i in range(n):
        for j in range(n):
            bi, oi = ops[i]
            bj, oj = ops[j]
            if bi != bj:
                continue
            j0, j1 = windows[bi]
            Gamma[i, j] = hbar * _Spectral(env.blocks[bi], oi, oj).running(times[j0: j1 + 1]).mean()
    return terms, 0.5 * (Gamma + Gamma.conj().T)


def check_geometry(basis, n_sites: int) -> None:
    if basis.n_sites != n_sites:
        raise GeometryMismatch("system basis does not match the geometry")
