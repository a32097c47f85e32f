"""Process-wide numerical settings.

Values are read through :func:`get` and temporarily replaced with
:func:`using`.  The budget can also be set from the ``FLUXDEC_BUDGET``
environment variable.
"""
from __future__ import annotations

import contextlib
import contextvars
import dataclasses
import os
from dataclasses import dataclass

DEFAULT_BUDGET = 2**20


@dataclass(frozen=True)
class Settings:
    hbar: float = 1.0
    # Largest number of complex entries a single state or density matrix may hold.
    budget: int | None = None
    # Dense eigendecomposition below this dimension, Krylov stepping above.
    eig_switch_dim: int = 4096
    krylov_dim: int = 30
    # AFS/NFS exponent thresholds.
    afs_threshold: float = -0.25
    nfs_threshold: float = -0.75
    # Rate-fit window policy.
    fit_s_lin_max: float = 0.1
    fit_r2_min: float = 0.99
    fit_min_samples: int = 10
    # Plateau policy for running correlation integrals.
    plateau_rel_tol: float = 0.02
    plateau_min_frac: float = 0.2
    # Poisson weight allowed above the PPV truncation.
    ppv_tail: float = 1e-6

    @property
    def max_amplitudes(self) -> int:
        if self.budget is not None:
            return int(self.budget)
        env = os.environ.get("FLUXDEC_BUDGET")
        if env:
            return int(float(env))
        return DEFAULT_BUDGET


_current: contextvars.ContextVar[Settings] = contextvars.ContextVar(
    "fluxdec_settings", default=Settings()
)


def get() -> Settings:
    return _current.get()


@contextlib.contextmanager
def using(**overrides):
    """Temporarily override settings, e.g. ``with using(hbar=2.0): ...``."""
    new = dataclasses.replace(_current.get(), **overrides)
    token = _current.set(new)
    try:
        yield new
    finally:
        _current.reset(token)
