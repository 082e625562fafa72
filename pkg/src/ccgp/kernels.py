"""Spectral kernels on cochains: CC-Matérn, reaction-diffusion and generic filters.

Every kernel here has the form ``K = sigma2 * U diag(phi) U.T`` where ``U``
is a weighted-orthonormal eigenbasis and ``phi`` a per-eigenvalue filter.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ArgumentError, DegenerateHyperparameterError, IndefiniteKernelError, OperatorError
from .operators import SpectralBasis

__all__ = [
    "KernelMatrix",
    "MaternHyper",
    "RDHyper",
    "chain_covariance",
    "laplacian_spectrum",
    "matern_filter",
    "matern_kernel",
    "rd_filter",
    "rd_kernel",
    "sample_prior",
    "save_kernel",
    "spectral_filter_kernel",
]

CLAMP_TOL = 1e-10


def _positive(name, value):
    value = float(value)
    if not math.isfinite(value) or value <= 0:
        raise ArgumentError(f"{name} must be positive and finite, got {value}")
    return value


@dataclass(frozen=True)
class MaternHyper:
    nu: float = 2.0
    lengthscale: float = 1.0
    sigma2: float = 1.0

    def __post_init__(self):
        for name in ("nu", "lengthscale", "sigma2"):
            _positive(name, getattr(self, name))


@dataclass(frozen=True)
class RDHyper:
    """Reaction ``r``, cross-diffusion ``c``, diffusion ``d``, order ``nu``."""

    r: float = 1.0
    c: float = 0.0
    d: float = 1.0
    nu: float = 2.0
    sigma2: float = 1.0

    def __post_init__(self):
        for name in ("r", "c", "d"):
            v = float(getattr(self, name))
            if not math.isfinite(v) or v < 0:
                raise ArgumentError(f"{name} must be non-negative and finite, got {v}")
        _positive("nu", self.nu)
        _positive("sigma2", self.sigma2)


@dataclass(frozen=True, eq=False)
class KernelMatrix:
    """Dense covariance plus the spectral data that generated it."""

    K: np.ndarray
    basis: SpectralBasis
    phi: np.ndarray
    sigma2: float
    hyper: dict = field(default_factory=dict)

    @property
    def layout(self):
        return self.basis.layout

    @property
    def size(self) -> int:
        return self.K.shape[0]


def laplacian_spectrum(basis: SpectralBasis) -> np.ndarray:
    """Non-negative Laplacian eigenvalues of ``basis``.

    A Dirac basis is squared; Laplacian eigenvalues within ``-1e-10`` of zero
    are clamped.
    """
    lam = np.asarray(basis.values, dtype=float)
    if basis.is_dirac:
        return lam**2
    scale = max(1.0, float(np.max(np.abs(lam)))) if lam.size else 1.0
    if lam.size and lam.min() < -CLAMP_TOL * scale:
        raise OperatorError(f"Laplacian basis has negative eigenvalue {lam.min():.3e}")
    return np.maximum(lam, 0.0)


def matern_filter(s, nu: float, lengthscale: float) -> np.ndarray:
    """``(2 nu / l^2 + s)^(-nu)`` for Laplacian eigenvalues ``s``."""
    return (2.0 * nu / lengthscale**2 + np.asarray(s, dtype=float)) ** (-nu)


def _is_even_integer(nu: float) -> bool:
    return float(nu).is_integer() and int(nu) % 2 == 0


def rd_filter(lam, r: float, c: float, d: float, nu: float, allow_non_even: bool = False) -> np.ndarray:
    """``(r - c lam + d lam^2)^(-nu)`` on signed Dirac eigenvalues.

    Raises :class:`DegenerateHyperparameterError` where the polynomial
    vanishes.  Unless ``nu`` is an even integer the polynomial must be
    strictly positive, and ``allow_non_even`` must be set.
    """
    lam = np.asarray(lam, dtype=float)
    p = r - c * lam + d * lam**2
    scale = r + c * np.abs(lam) + d * lam**2 + 1.0
    bad = np.abs(p) < 1e-12 * scale
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise DegenerateHyperparameterError(
            f"r - c*lam + d*lam^2 vanishes at eigenvalue {lam[i]:.6g} (index {i})"
        )
    if not _is_even_integer(nu):
        if not allow_non_even:
            raise ArgumentError(
                f"reaction-diffusion order nu={nu} is not an even integer; "
                "pass allow_non_even=True to accept a positive filter"
            )
        if np.any(p <= 0):
            raise IndefiniteKernelError(
                f"nu={nu} with a sign-changing filter gives an indefinite kernel"
            )
    return p ** (-nu)


def spectral_filter_kernel(basis: SpectralBasis, phi, sigma2: float = 1.0, hyper=None) -> KernelMatrix:
    """``sigma2 * U diag(phi) U.T``."""
    phi = np.asarray(phi, dtype=float)
    if phi.shape != basis.values.shape:
        raise ArgumentError(f"filter length {phi.shape} does not match spectrum {basis.values.shape}")
    if not np.all(np.isfinite(phi)):
        raise ArgumentError("filter values must be finite")
    if np.any(phi <= 0):
        raise IndefiniteKernelError("filter has non-positive entries")
    sigma2 = float(sigma2)
    if not sigma2 >= 0:
        raise ArgumentError("amplitude must be non-negative")
    U = basis.vectors
    K = sigma2 * (U * phi) @ U.T
    K = 0.5 * (K + K.T)
    return KernelMatrix(K, basis, phi, sigma2, dict(hyper or {}))


def matern_kernel(basis: SpectralBasis, h: MaternHyper) -> KernelMatrix:
    """CC-Matérn kernel on a Hodge, super-Laplacian or Dirac basis."""
    phi = matern_filter(laplacian_spectrum(basis), h.nu, h.lengthscale)
    hyper = {"family": "matern", "nu": h.nu, "lengthscale": h.lengthscale, "sigma2": h.sigma2}
    return spectral_filter_kernel(basis, phi, h.sigma2, hyper)


def rd_kernel(basis: SpectralBasis, h: RDHyper, allow_non_even: bool = False) -> KernelMatrix:
    """Reaction-diffusion kernel on a Dirac basis."""
    if not basis.is_dirac:
        raise ArgumentError(f"reaction-diffusion kernel needs a Dirac basis, got {basis.role!r}")
    phi = rd_filter(basis.values, h.r, h.c, h.d, h.nu, allow_non_even)
    hyper = {"family": "rd", "r": h.r, "c": h.c, "d": h.d, "nu": h.nu, "sigma2": h.sigma2}
    return spectral_filter_kernel(basis, phi, h.sigma2, hyper)


def chain_covariance(kernel, c, d) -> float:
    """``c.T @ K @ d`` for chains in the kernel's index space."""
    K = kernel.K if isinstance(kernel, KernelMatrix) else np.asarray(kernel)
    c = np.asarray(c, dtype=float)
    d = np.asarray(d, dtype=float)
    if c.shape != (K.shape[0],) or d.shape != (K.shape[0],):
        raise ArgumentError(f"chains must have length {K.shape[0]}")
    return float(c @ K @ d)


def sample_prior(kernel: KernelMatrix, count: int, seed=None) -> np.ndarray:
    """Draw ``count`` prior samples, one per row: ``U diag(sqrt(sigma2 phi)) eps``."""
    rng = np.random.default_rng(seed)
    if np.any(kernel.phi < 0):
        raise IndefiniteKernelError("kernel filter is negative; cannot sample")
    eps = rng.standard_normal((count, kernel.phi.size))
    scale = np.sqrt(kernel.sigma2 * kernel.phi)
    return (eps * scale) @ kernel.basis.vectors.T


def save_kernel(kernel: KernelMatrix, path: str | Path) -> Path:
    """Write the matrix (``.csv`` or ``.npy``) plus a ``.json`` sidecar."""
    path = Path(path)
    if path.suffix == ".csv":
        np.savetxt(path, kernel.K, delimiter=",", fmt="%.17g")
    else:
        np.save(path, kernel.K)
    sidecar = path.with_suffix(path.suffix + ".json")
    sidecar.write_text(
        json.dumps(
            {
                "hyper": kernel.hyper,
                "sigma2": kernel.sigma2,
                "basis_role": kernel.basis.role,
                "basis_hash": kernel.basis.complex_hash,
                "layout": [list(b) for b in kernel.layout],
                "filter": kernel.phi.tolist(),
            },
            indent=1,
        )
    )
    return sidecar
