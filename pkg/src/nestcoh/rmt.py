"""Random-matrix ensembles, spectral normalization and eigendecomposition.

Conventions
-----------
GOE samples with width ``sigma`` have ``Var(H_ij) = sigma**2`` off the
diagonal and ``Var(H_ii) = 2 sigma**2``.  GUE samples have
``Var(Re H_ij) = Var(Im H_ij) = sigma**2 / 2`` off the diagonal and
``Var(H_ii) = sigma**2``, i.e. ``<H_ab H_cd> = sigma**2 delta_ad delta_bc``.

Random streams are counter based (Philox) and keyed by ``(seed, *key)`` so
that realization ``i`` always sees the same numbers regardless of which
worker draws it.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import ParameterError, ValidationError

HERMITIAN_RTOL = 1e-12


class Kind(str, Enum):
    GOE = "GOE"
    GUE = "GUE"

    @property
    def beta(self) -> int:
        return 1 if self is Kind.GOE else 2


def as_kind(kind) -> Kind:
    try:
        return Kind(str(getattr(kind, "value", kind)).upper())
    except ValueError:
        raise ParameterError(f"unknown ensemble kind {kind!r}; expected GOE or GUE") from None


def stream_rng(seed: int, *key: int) -> np.random.Generator:
    """Independent counter-based generator for the stream ``(seed, *key)``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class EnsembleSpec:
    kind: Kind
    dimension: int
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", as_kind(self.kind))
        if int(self.dimension) != self.dimension or self.dimension < 2:
            raise ParameterError(f"ensemble dimension must be an integer >= 2, got {self.dimension!r}")
        object.__setattr__(self, "dimension", int(self.dimension))
        if not 0 <= int(self.seed) < 2**64:
            raise ParameterError("seed must be an unsigned 64-bit integer")

    @property
    def beta(self) -> int:
        return self.kind.beta


def sample_gaussian_ensemble(spec: EnsembleSpec, sigma: float = 1.0, draw: int = 0,
                             rng: np.random.Generator | None = None) -> np.ndarray:
    """Draw one Hermitian matrix from the Gaussian ensemble described by ``spec``.

    Without an explicit ``rng`` the matrix is a pure function of
    ``(spec.seed, draw)``.
    """
    if not np.isfinite(sigma) or sigma <= 0:
        raise ParameterError(f"sigma must be positive, got {sigma!r}")
    if rng is None:
        rng = stream_rng(spec.seed, draw)
    n = spec.dimension
    if spec.kind is Kind.GOE:
        a = rng.normal(scale=sigma, size=(n, n))
        return (a + a.T) / np.sqrt(2.0)
    a = rng.normal(scale=sigma, size=(n, n)) + 1j * rng.normal(scale=sigma, size=(n, n))
    a /= np.sqrt(2.0)
    return (a + a.conj().T) / np.sqrt(2.0)


def center_scale(dimension: int) -> float:
    """Factor that brings a unit-width ensemble to unit level density at E = 0.

    The semicircle of radius ``2 sqrt(N) sigma`` has density
    ``sqrt(N) / (pi sigma)`` at its center.
    """
    return np.sqrt(dimension) / np.pi


def normalize_center_spacing(H: np.ndarray, kind=Kind.GOE) -> np.ndarray:
    """Rescale a ``sigma = 1`` sample so that the mean level spacing at E = 0 is one."""
    as_kind(kind)
    H = np.asarray(H)
    return H * center_scale(H.shape[0])


def mean_center_spacing(eigenvalues: np.ndarray, fraction: float = 0.1) -> float:
    """Mean nearest-neighbour spacing of the central ``fraction`` of an ascending spectrum."""
    e = np.sort(np.asarray(eigenvalues, dtype=float))
    n = e.size
    m = max(2, int(round(fraction * n)))
    lo = (n - m) // 2
    window = e[lo:lo + m]
    return float(np.mean(np.diff(window)))


def check_hermitian(H: np.ndarray, rtol: float = HERMITIAN_RTOL) -> np.ndarray:
    H = np.asarray(H)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ValidationError(f"expected a square matrix, got shape {H.shape}")
    scale = max(np.linalg.norm(H), np.finfo(float).tiny)
    err = np.linalg.norm(H - H.conj().T)
    if err > rtol * scale:
        raise ValidationError(f"matrix is not Hermitian (relative asymmetry {err / scale:.2e})")
    return H


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Spectrum:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def reconstruct(self) -> np.ndarray:
        U = self.eigenvectors
        return (U * self.eigenvalues) @ U.conj().T

    def propagator(self, t: float) -> np.ndarray:
        """``exp(-i H t)``."""
        U = self.eigenvectors
        return (U * np.exp(-1j * self.eigenvalues * t)) @ U.conj().T


def eigendecompose(H: np.ndarray) -> Spectrum:
    H = check_hermitian(H)
    w, U = np.linalg.eigh(H)
    return Spectrum(_readonly(w), _readonly(U))


@dataclass(frozen=True)
class HamiltonianPair:
    """Unperturbed ``H0``, perturbation ``Veff`` and ``H_lambda = H0 + lam Veff``."""

    H0: np.ndarray
    Veff: np.ndarray
    lam: float
    eig0: Spectrum = field(repr=False)
    eiglam: Spectrum = field(repr=False)

    @property
    def dimension(self) -> int:
        return self.H0.shape[0]

    @property
    def H_lambda(self) -> np.ndarray:
        return self.H0 + self.lam * self.Veff


def build_h_lambda(H0: np.ndarray, Veff: np.ndarray, lam: float) -> HamiltonianPair:
    H0 = check_hermitian(H0)
    Veff = check_hermitian(Veff)
    if H0.shape != Veff.shape:
        raise ValidationError(f"dimension mismatch: H0 {H0.shape} vs Veff {Veff.shape}")
    lam = float(lam)
    eig0 = eigendecompose(H0)
    eiglam = eig0 if lam == 0.0 else eigendecompose(H0 + lam * Veff)
    return HamiltonianPair(_readonly(H0), _readonly(Veff), lam, eig0, eiglam)
