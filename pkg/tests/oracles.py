"""Brute-force reference computations, independent of the package internals.

Everything here is built from dense Kronecker products and explicit loops so
that it shares no code path with ``fluxdec``.  Running this module regenerates
``tests/data/frozen_values.json``:

    python3 tests/oracles.py
"""
from __future__ import annotations

import itertools
import json
import math
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.linalg import expm

FROZEN = Path(__file__).parent / "data" / "frozen_values.json"

SX = np.array([[0, 1], [1, 0]], dtype=complex)
SY = np.array([[0, -1j], [1j, 0]], dtype=complex)
SZ = np.array([[1, 0], [0, -1]], dtype=complex)
SIGMAS = (SX, SY, SZ)


# ---------------------------------------------------------------------------
# qubits
# ---------------------------------------------------------------------------


def site_op(op, site, n):
    """``op`` on ``site`` of ``n`` qubits; site 0 is the least significant bit."""
    return np.kron(np.kron(np.eye(2 ** (n - 1 - site)), op), np.eye(2**site))


def ghz(n):
    psi = np.zeros(2**n, dtype=complex)
    psi[0] = psi[-1] = 1 / math.sqrt(2)
    return psi


def w_state(n):
    psi = np.zeros(2**n, dtype=complex)
    for x in range(n):
        psi[1 << x] = 1 / math.sqrt(n)
    return psi


def product(n, single):
    psi = np.array([1.0 + 0j])
    for _ in range(n):
        psi = np.kron(single, psi)
    return psi


def covariance(psi, n):
    """3n x 3n symmetrized covariance, explicit loops over site pairs."""
    ops = [site_op(s, x, n) for x in range(n) for s in SIGMAS]
    means = [np.vdot(psi, o @ psi).real for o in ops]
    C = np.zeros((3 * n, 3 * n))
    for i, a in enumerate(ops):
        for j, b in enumerate(ops):
            anti = np.vdot(psi, (a @ b + b @ a) @ psi).real / 2
            C[i, j] = anti - means[i] * means[j]
    return C


def variance_of_field(psi, n, c):
    """<dA^2> for A = (1/n) sum c[x,a] sigma_a(x), dense operator."""
    A = sum(c[x, a] * site_op(SIGMAS[a], x, n) for x in range(n) for a in range(3)) / n
    m = np.vdot(psi, A @ psi).real
    return np.vdot(psi, A @ A @ psi).real - m * m


def ising_dense(n, J, g):
    H = np.zeros((2**n, 2**n), dtype=complex)
    for x in range(n):
        H -= J * site_op(SZ, x, n) @ site_op(SZ, (x + 1) % n, n)
        H -= g * site_op(SX, x, n)
    return H


def ising_pair(n, J=1.0, g=0.5):
    """(sgs, ppv) from a full eigendecomposition and an explicit parity check."""
    H = ising_dense(n, J, g)
    evals, evecs = np.linalg.eigh(H)
    P = np.eye(1)
    for _ in range(n):
        P = np.kron(SX, P)
    lo = [evecs[:, 0], evecs[:, 1]]
    par = [np.vdot(v, P @ v).real for v in lo]
    even = lo[int(np.argmax(par))]
    odd = lo[int(np.argmin(par))]
    Mz = sum(site_op(SZ, x, n) for x in range(n))
    ppv = (even + odd) / math.sqrt(2)
    if np.vdot(ppv, Mz @ ppv).real < 0:
        ppv = (even - odd) / math.sqrt(2)
    return even, ppv


# ---------------------------------------------------------------------------
# bosons on a ring, full local spaces with a per-site cap
# ---------------------------------------------------------------------------


def boson_ops(m, cap):
    d = cap + 1
    b = sp.diags(np.sqrt(np.arange(1, d)), 1, format="csr", dtype=complex)
    out = []
    for x in range(m):
        op = sp.identity(1, format="csr", dtype=complex)
        for y in range(m - 1, -1, -1):
            op = sp.kron(op, b if y == x else sp.identity(d, dtype=complex), format="csr")
        out.append(op)
    return out


def bh_sector_ground(m, n, J, U, cap):
    """Sector ground state, full-space vector, phase fixed by the condensate overlap."""
    b = boson_ops(m, cap)
    num = [o.conj().T @ o for o in b]
    ntot = sum(num).diagonal().real
    idx = np.flatnonzero(np.isclose(ntot, n))
    H = sp.csr_matrix(b[0].shape, dtype=complex)
    for x in range(m):
        y = (x + 1) % m
        hop = b[x].conj().T @ b[y]
        H = H - J * (hop + hop.conj().T)
        H = H + 0.5 * U * num[x] @ (num[x] - sp.identity(num[x].shape[0]))
    Hs = H[idx][:, idx].toarray()
    evals, evecs = np.linalg.eigh(Hs)
    v = np.zeros(H.shape[0], dtype=complex)
    v[idx] = evecs[:, 0]
    vac = np.zeros(H.shape[0], dtype=complex)
    vac[0] = 1
    b0dag = sum(o.conj().T for o in b) / math.sqrt(m)
    cond = vac
    for _ in range(n):
        cond = b0dag @ cond
    ov = np.vdot(cond, v)
    if abs(ov) > 1e-12:
        v = v * abs(ov) / ov
    return v, b


def psi_moments(v, b):
    m = len(b)
    Psi = sum(b) / m
    w = Psi @ v
    mean = np.vdot(v, w)
    return mean, float(np.vdot(w, w).real - abs(mean) ** 2)


def bh_sgs_psi(m, n, J=1.0, U=1.0):
    v, b = bh_sector_ground(m, n, J, U, cap=n)
    return psi_moments(v, b)


def bh_ppv_psi(m, alpha, n_max, J=1.0, U=1.0):
    a = abs(alpha)
    w = np.array([math.exp(-a * a / 2) * a**k / math.sqrt(math.factorial(k))
                  for k in range(n_max + 1)])
    w = w / np.linalg.norm(w)
    total = None
    b = None
    for k in range(n_max + 1):
        v, b = bh_sector_ground(m, k, J, U, cap=n_max)
        total = w[k] * v if total is None else total + w[k] * v
    return psi_moments(total, b)


def fock_tuples(m, n):
    """Occupation tuples with sum n, lexicographic with n_0 most significant."""
    out = [t for t in itertools.product(range(n + 1), repeat=m) if sum(t) == n]
    return sorted(out)


# ---------------------------------------------------------------------------
# environment correlations and master equations
# ---------------------------------------------------------------------------


def correlation_running(H, rho, B, times):
    """int_{-T}^{T} Tr[rho B^dag(0) B(s)] ds by explicit propagators and trapezoids."""
    C = []
    for s in times:
        U = expm(-1j * H * s)
        Bs = U.conj().T @ B @ U
        C.append(np.trace(rho @ B.conj().T @ Bs))
    C = np.array(C)
    # C(-s) = conj(C(s)) for a stationary state
    integrand = 2 * C.real
    I = np.concatenate([[0.0], np.cumsum(0.5 * (integrand[1:] + integrand[:-1]) * np.diff(times))])
    return C, I


def lindblad_dense(rho0, H, jumps, times):
    """Column-stacked superoperator exponentiated with scipy.linalg.expm."""
    d = rho0.shape[0]
    eye = np.eye(d)
    L = -1j * (np.kron(eye, H) - np.kron(H.T, eye))
    for op, k in jumps:
        LdL = op.conj().T @ op
        L += k * (np.kron(op.conj(), op) - 0.5 * np.kron(eye, LdL) - 0.5 * np.kron(LdL.T, eye))
    v0 = rho0.reshape(-1, order="F")
    out = []
    for t in times:
        out.append((expm(L * t) @ v0).reshape(d, d, order="F"))
    return out


# ---------------------------------------------------------------------------
# frozen values
# ---------------------------------------------------------------------------


def compute_frozen() -> dict:
    from fluxdec.models import ppv_cutoff

    out: dict = {}
    out["w_state_max_fluct"] = {
        str(n): float(np.linalg.eigvalsh(covariance(w_state(n), n))[-1] / n) for n in range(4, 9)
    }
    out["ising_sgs_max_fluct"] = {}
    out["ising_ppv_max_fluct"] = {}
    out["ising_ppv_energy_gap"] = {}
    for n in (6, 8):
        sgs, ppv = ising_pair(n)
        out["ising_sgs_max_fluct"][str(n)] = float(np.linalg.eigvalsh(covariance(sgs, n))[-1] / n)
        out["ising_ppv_max_fluct"][str(n)] = float(np.linalg.eigvalsh(covariance(ppv, n))[-1] / n)
        H = ising_dense(n, 1.0, 0.5)
        out["ising_ppv_energy_gap"][str(n)] = float(
            np.vdot(ppv, H @ ppv).real - np.vdot(sgs, H @ sgs).real)
    out["bh_sgs_psi_fluct_U1"] = {str(m): bh_sgs_psi(m, m)[1] for m in (3, 4, 5)}
    n_max = ppv_cutoff(math.sqrt(3))
    mean, fl = bh_ppv_psi(3, math.sqrt(3), n_max)
    out["bh_ppv_psi_U1_M3"] = {"n_max": n_max, "mean_abs": float(abs(mean)), "fluct": fl}
    # U = 0: condensate answers
    out["bh_sgs_psi_fluct_U0"] = {str(m): bh_sgs_psi(m, m, U=0.0)[1] for m in (3, 4)}
    return out


if __name__ == "__main__":
    FROZEN.parent.mkdir(exist_ok=True)
    FROZEN.write_text(json.dumps(compute_frozen(), indent=2, sort_keys=True) + "\n")
    print(FROZEN.read_text())
