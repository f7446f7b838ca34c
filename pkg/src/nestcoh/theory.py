"""Linear-response predictions for the damped relative coherence.

Main convolution formula::

    f_{lam,Gamma}(t) = (1 - Gamma t) f_lam(t) + Gamma int_0^t f_lam(tau) f_lam(t - tau) dtau

where ``f_lam`` is the undamped fidelity amplitude.  Also provided: the
Gaussian closed form ``g_alpha``, the exponentiated linear response (ELR)
fidelity with the two-point form factor, and the per-realization matrix
expression that precedes self-averaging.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.integrate import quad
from scipy.interpolate import CubicSpline
from scipy.signal import fftconvolve
from scipy.special import erf

from . import kernels
from .echo import (CoherenceTrace, HEISENBERG_TIME, TimeGrid, echo_weights, exp_sum,
                   validate_density_matrix)
from .errors import ParameterError, QuadratureError, ValidationError
from .rmt import HamiltonianPair

CONV_TOL = 1e-10
CONV_MAX_DEPTH = 40
ELR_TOL = 1e-10


class TheoryKind(str, Enum):
    LR_CONVOLUTION = "LR_CONVOLUTION"
    PERTURBATIVE_G = "PERTURBATIVE_G"
    ELR = "ELR"
    FULL_MATRIX_LR = "FULL_MATRIX_LR"


@dataclass
class TheoryCurve:
    grid: TimeGrid
    values: np.ndarray
    kind: TheoryKind
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex)
        self.kind = TheoryKind(self.kind)
        if self.values.shape != (len(self.grid),):
            raise ValidationError("theory values and grid lengths differ")
        if abs(self.values[0] - 1.0) > 1e-12:
            raise ValidationError(f"theory curve must start at 1, got {self.values[0]}")

    @property
    def t(self) -> np.ndarray:
        return self.grid.points

    def as_trace(self) -> CoherenceTrace:
        meta = dict(self.meta, kind=self.kind.value)
        return CoherenceTrace(self.grid, self.values.copy(), meta=meta)


@dataclass(frozen=True)
class SplineModel:
    """Complex natural cubic spline in SciPy ``PPoly`` layout.

    ``coefficients[m, i]`` multiplies ``(t - knots[i])**(3 - m)`` on
    ``[knots[i], knots[i + 1]]``.
    """

    knots: np.ndarray
    coefficients: np.ndarray

    def __post_init__(self):
        k = np.ascontiguousarray(self.knots, dtype=float)
        c = np.ascontiguousarray(self.coefficients, dtype=complex)
        if k.ndim != 1 or k.size < 2 or np.any(np.diff(k) <= 0):
            raise ValidationError("spline knots must be strictly ascending")
        if c.shape != (4, k.size - 1):
            raise ValidationError(f"coefficients must have shape (4, {k.size - 1})")
        k.setflags(write=False)
        c.setflags(write=False)
        object.__setattr__(self, "knots", k)
        object.__setattr__(self, "coefficients", c)

    @property
    def t_max(self) -> float:
        return float(self.knots[-1])

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < self.knots[0] - 1e-12) or np.any(t > self.knots[-1] + 1e-12):
            raise ParameterError(
                f"spline evaluated outside [{self.knots[0]}, {self.knots[-1]}]")
        i = np.clip(np.searchsorted(self.knots, t, side="right") - 1, 0, self.knots.size - 2)
        dx = t - self.knots[i]
        c = self.coefficients
        return ((c[0, i] * dx + c[1, i]) * dx + c[2, i]) * dx + c[3, i]


def fit_spline(trace: CoherenceTrace) -> SplineModel:
    """Natural cubic spline through the trace values (real and imaginary parts)."""
    t = trace.grid.points
    if t.size < 4:
        raise ValidationError(f"spline fit needs at least 4 points, got {t.size}")
    cs = CubicSpline(t, trace.values, bc_type="natural")
    return SplineModel(t, cs.c)


def convolution_integral(f_base: SplineModel, times, tol: float = CONV_TOL,
                         max_depth: int = CONV_MAX_DEPTH) -> np.ndarray:
    """``K(t) = int_0^t f(tau) f(t - tau) dtau`` by adaptive Simpson on the spline."""
    times = np.asarray(times, dtype=float)
    if times.size and (times.min() < 0 or times.max() > f_base.t_max + 1e-12):
        raise ParameterError(f"convolution times must lie in [0, {f_base.t_max}]")
    times = np.minimum(times, f_base.t_max)
    K, (idx, a, b, err) = kernels.conv_simpson(f_base.knots, f_base.coefficients,
                                               np.ascontiguousarray(times), float(tol),
                                               int(max_depth))
    if idx >= 0:
        raise QuadratureError(
            f"convolution at t={times[idx]:.6g} did not converge on [{a:.6g}, {b:.6g}] "
            f"(local error {err:.2e}, depth cap {max_depth})")
    return np.asarray(K)


def lr_convolution(f_base: SplineModel, Gamma: float, grid: TimeGrid,
                   tol: float = CONV_TOL, K: np.ndarray | None = None) -> TheoryCurve:
    """Linear-response coherence from the undamped fidelity amplitude.

    The curve is computed wherever requested; it is only trustworthy while
    ``Gamma t`` is small.  ``K`` may pass a precomputed convolution on ``grid``.
    """
    if not np.isfinite(Gamma) or Gamma < 0:
        raise ParameterError(f"Gamma must be >= 0, got {Gamma!r}")
    t = grid.points
    f = f_base(t)
    if abs(f[0] - 1.0) > 1e-12:
        raise ValidationError(f"base fidelity must satisfy f(0) = 1, got {f[0]}")
    if Gamma == 0.0:
        values = f
    else:
        if K is None:
            K = convolution_integral(f_base, t, tol)
        values = (1.0 - Gamma * t) * f + Gamma * K
    values = np.asarray(values, dtype=complex).copy()
    values[0] = 1.0
    return TheoryCurve(grid, values, TheoryKind.LR_CONVOLUTION, {"Gamma": float(Gamma)})


def perturbative_g(alpha, x):
    """Gaussian-regime coherence ``g_alpha(x)``, ``alpha = Gamma/lam``, ``x = lam t``.

    Real valued; broadcasts over ``alpha`` and ``x``.
    """
    alpha = np.asarray(alpha, dtype=float)
    x = np.asarray(x, dtype=float)
    if np.any(alpha < 0) or np.any(x < 0):
        raise ParameterError("perturbative_g needs alpha >= 0 and x >= 0")
    return ((1.0 - alpha * x) * np.exp(-x * x)
            + alpha * np.sqrt(np.pi / 2) * np.exp(-x * x / 2) * erf(x / np.sqrt(2)))


def form_factor_b2(tau, beta: int = 1):
    """Two-point form factor of the GOE (``beta=1``) or GUE (``beta=2``)."""
    tau = np.asarray(tau, dtype=float)
    if np.any(tau < 0) or np.any(~np.isfinite(tau)):
        raise ParameterError("form factor needs finite tau >= 0")
    if beta == 2:
        return np.where(tau <= 1.0, 1.0 - tau, 0.0)
    if beta != 1:
        raise ParameterError(f"beta must be 1 or 2, got {beta!r}")
    lo = np.minimum(tau, 1.0)
    hi = np.maximum(tau, 1.0)
    left = 1.0 - 2.0 * lo + lo * np.log(2.0 * lo + 1.0)
    right = -1.0 + hi * np.log((2.0 * hi + 1.0) / (2.0 * hi - 1.0))
    return np.where(tau <= 1.0, left, right)


def _b2_double_integral(T: float, beta: int) -> float:
    """``int_0^T dt' int_0^t' b2 = int_0^T (T - s) b2(s) ds``."""
    if T == 0.0:
        return 0.0
    points = [1.0] if T > 1.0 else None
    val, err = quad(lambda s: (T - s) * float(form_factor_b2(s, beta)), 0.0, T,
                    points=points, epsabs=ELR_TOL, epsrel=0.0, limit=200)
    if err > 10 * ELR_TOL:
        raise QuadratureError(f"form-factor integral at T={T:.6g} has error {err:.2e}")
    return val


def elr_exponent(t, beta: int = 1) -> np.ndarray:
    """``C(t) = t^2 + pi t - 4 pi^2 int int b2`` with time in units of hbar/d0."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ParameterError("elr_exponent needs t >= 0")
    flat = t.ravel()
    dbl = np.array([_b2_double_integral(x / HEISENBERG_TIME, beta) for x in flat])
    out = flat**2 + np.pi * flat - 4.0 * np.pi**2 * dbl
    return out.reshape(t.shape)


def elr_fidelity(lam: float, grid: TimeGrid, beta: int = 1) -> TheoryCurve:
    """Exponentiated linear response fidelity ``exp(-lam^2 C(t))`` (GOE only)."""
    if beta != 1:
        raise NotImplementedError("ELR fidelity is implemented for the GOE (beta=1) only")
    if not np.isfinite(lam) or lam < 0:
        raise ParameterError(f"lambda must be >= 0, got {lam!r}")
    C = elr_exponent(grid.points, beta)
    return TheoryCurve(grid, np.exp(-lam**2 * C), TheoryKind.ELR, {"lambda": float(lam)})


def _simpson_convolution(a: np.ndarray, b: np.ndarray, h: float, stride: int) -> np.ndarray:
    """Composite Simpson of ``int_0^{t_n} a(tau) b(t_n - tau)`` for ``t_n = n*stride*h``.

    ``stride`` must be even so every output time has an even number of panels.
    """
    n = a.size
    even = np.zeros(n, dtype=complex)
    odd = np.zeros(n, dtype=complex)
    even[0::2] = a[0::2]
    odd[1::2] = a[1::2]
    E = fftconvolve(even, b)[:n]
    O = fftconvolve(odd, b)[:n]
    idx = np.arange(0, n, stride)
    S = h / 3.0 * (2.0 * E[idx] + 4.0 * O[idx] - a[0] * b[idx] - a[idx] * b[0])
    S[0] = 0.0
    return S


def full_lr_matrix(pair: HamiltonianPair, rho_e: np.ndarray | None, Gamma: float,
                   grid: TimeGrid, tol: float = 1e-8, max_refine: int = 7) -> TheoryCurve:
    """Linear-response coherence of one realization before self-averaging.

    Uses ``tr[M(tau)^dagger M(t)] = tr M(t - tau)`` so that the integrand is
    ``a(tau) b(t - tau)`` with ``a = tr[rho M]`` and ``b = tr M``, both exact
    from the spectral decompositions.  The integral is composite Simpson on a
    refinement of the (uniform) output grid; the refinement doubles until the
    Richardson estimate of the error in ``f`` is below ``tol``.
    """
    if not grid.is_uniform:
        raise ValidationError("full_lr_matrix needs a uniform grid")
    if not np.isfinite(Gamma) or Gamma < 0:
        raise ParameterError(f"Gamma must be >= 0, got {Gamma!r}")
    N = pair.dimension
    if rho_e is not None:
        rho_e = validate_density_matrix(rho_e, N)
    t = grid.points
    e0, el = pair.eig0.eigenvalues, pair.eiglam.eigenvalues
    Ca = echo_weights(pair, rho_e)
    Cb = echo_weights(pair, None) * N
    base = exp_sum(Ca, e0, el, t)
    if Gamma == 0.0 or t.size == 1:
        values = base
        err = 0.0
    else:
        h_out = grid.step
        m = 2 * max(1, int(np.ceil(h_out / 0.01 / 2)))
        for _ in range(max_refine):
            fine = np.arange((t.size - 1) * m + 1) * (h_out / m)
            a = exp_sum(Ca, e0, el, fine)
            b = exp_sum(Cb, e0, el, fine)
            S = _simpson_convolution(a, b, h_out / m, m)
            if m % 4 == 0:
                S2 = _simpson_convolution(a[::2], b[::2], 2 * h_out / m, m // 2)
            else:
                S2 = None
            if S2 is not None:
                err = Gamma / N * np.max(np.abs(S - S2)) / 15.0
                if err <= tol:
                    S = S + (S - S2) / 15.0
                    break
            m *= 2
        else:
            raise QuadratureError(
                f"full_lr_matrix quadrature did not reach tol={tol:.1e} "
                f"(estimated error {err:.2e} with {m // 2} sub-steps per output step)")
        values = (1.0 - Gamma * t) * base + Gamma / N * S
    values = np.asarray(values, dtype=complex).copy()
    values[0] = 1.0
    return TheoryCurve(grid, values, TheoryKind.FULL_MATRIX_LR,
                       {"Gamma": float(Gamma), "lambda": pair.lam, "n_env": N,
                        "quad_error": float(err)})
