"""Exact echo operator and fidelity amplitude of the near environment.

Time is measured in units of hbar/d0 with hbar = d0 = 1, so the Heisenberg
time is 2*pi.  Everything here is evaluated from the cached spectral
decompositions of ``H0`` and ``H_lambda``; no time stepping is involved.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError, UndefinedCoherenceError, ValidationError
from .rmt import HamiltonianPair, check_hermitian

HEISENBERG_TIME = 2.0 * np.pi


@dataclass(frozen=True)
class TimeGrid:
    points: np.ndarray
    step: float | None = None

    def __post_init__(self):
        p = np.array(self.points, dtype=float).ravel()
        if p.size == 0 or p[0] != 0.0:
            raise ValidationError("time grid must start at t = 0")
        if p.size > 1 and np.any(np.diff(p) <= 0):
            raise ValidationError("time grid must be strictly increasing")
        p.setflags(write=False)
        object.__setattr__(self, "points", p)
        if self.step is None and p.size > 1:
            object.__setattr__(self, "step", float(p[1] - p[0]))

    @classmethod
    def uniform(cls, t_max: float, step: float) -> "TimeGrid":
        if step <= 0 or t_max < 0:
            raise ParameterError("need step > 0 and t_max >= 0")
        n = int(round(t_max / step))
        if abs(n * step - t_max) > 1e-9 * max(1.0, t_max):
            raise ParameterError(f"t_max={t_max} is not a multiple of step={step}")
        return cls(np.arange(n + 1) * step, step)

    def __len__(self) -> int:
        return self.points.size

    @property
    def t_max(self) -> float:
        return float(self.points[-1])

    @property
    def is_uniform(self) -> bool:
        if self.points.size < 3:
            return True
        d = np.diff(self.points)
        return bool(np.allclose(d, d[0], rtol=1e-9, atol=1e-12))


@dataclass
class CoherenceTrace:
    """Complex relative coherence on a time grid with per-point standard errors.

    ``stderr_re`` and ``stderr_im`` are the standard errors of the real and
    imaginary parts; :attr:`stderr_abs` propagates them to ``|values|``.
    """

    grid: TimeGrid
    values: np.ndarray
    stderr_re: np.ndarray | None = None
    stderr_im: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex)
        n = len(self.grid)
        if self.stderr_re is None:
            self.stderr_re = np.zeros(n)
        if self.stderr_im is None:
            self.stderr_im = np.zeros(n)
        self.stderr_re = np.asarray(self.stderr_re, dtype=float)
        self.stderr_im = np.asarray(self.stderr_im, dtype=float)
        if not (self.values.shape == self.stderr_re.shape == self.stderr_im.shape == (n,)):
            raise ValidationError("values, stderr and grid lengths differ")

    @property
    def t(self) -> np.ndarray:
        return self.grid.points

    @property
    def stderr_abs(self) -> np.ndarray:
        a = np.abs(self.values)
        with np.errstate(invalid="ignore", divide="ignore"):
            s = np.hypot(self.values.real * self.stderr_re, self.values.imag * self.stderr_im) / a
        return np.where(a > 0, s, np.hypot(self.stderr_re, self.stderr_im))

    def window(self, t_min: float, t_max: float) -> np.ndarray:
        """Boolean mask of grid points with ``t_min < t <= t_max``."""
        return (self.t > t_min) & (self.t <= t_max + 1e-12)


def maximally_mixed(n: int) -> np.ndarray:
    return np.eye(n, dtype=complex) / n


def random_pure_state(n: int, rng: np.random.Generator) -> np.ndarray:
    psi = rng.normal(size=n) + 1j * rng.normal(size=n)
    psi /= np.linalg.norm(psi)
    return np.outer(psi, psi.conj())


def validate_density_matrix(rho: np.ndarray, n: int, atol: float = 1e-10) -> np.ndarray:
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (n, n):
        raise ValidationError(f"density matrix must be {n}x{n}, got {rho.shape}")
    try:
        check_hermitian(rho, rtol=1e-10)
    except ValidationError as exc:
        raise ValidationError(f"density matrix: {exc}") from None
    if abs(np.trace(rho) - 1.0) > atol:
        raise ValidationError(f"density matrix has trace {np.trace(rho).real:.6g} != 1")
    if np.linalg.eigvalsh(rho).min() < -atol:
        raise ValidationError("density matrix is not positive semidefinite")
    return rho


def echo_operator(pair: HamiltonianPair, t: float) -> np.ndarray:
    """``M(t) = exp(i H0 t) exp(-i H_lambda t)``."""
    if t < 0:
        raise ParameterError("echo operator requires t >= 0")
    return pair.eig0.propagator(-t) @ pair.eiglam.propagator(t)


def echo_weights(pair: HamiltonianPair, rho_e: np.ndarray | None = None) -> np.ndarray:
    """Weights ``C`` with ``tr[rho M(t)] = sum_ab C_ab exp(i(E0_a - El_b) t)``."""
    U0 = pair.eig0.eigenvectors
    Ul = pair.eiglam.eigenvectors
    W = U0.conj().T @ Ul
    if rho_e is None:
        return (np.abs(W) ** 2) / pair.dimension
    R = Ul.conj().T @ rho_e @ U0
    return W * R.T


def exp_sum(C: np.ndarray, e0: np.ndarray, el: np.ndarray, times: np.ndarray,
            chunk: int = 4096) -> np.ndarray:
    """Evaluate ``sum_ab C_ab exp(i (e0_a - el_b) t)`` for every ``t``."""
    times = np.asarray(times, dtype=float)
    out = np.empty(times.size, dtype=complex)
    for s in range(0, times.size, chunk):
        t = times[s:s + chunk, None]
        out[s:s + chunk] = np.sum((np.exp(1j * e0 * t) @ C) * np.exp(-1j * el * t), axis=1)
    return out


def fidelity_amplitude(pair: HamiltonianPair, rho_e: np.ndarray | None = None,
                       grid: TimeGrid | None = None) -> CoherenceTrace:
    """``f(t) = tr[rho_e M(t)]``; ``rho_e=None`` means the maximally mixed state."""
    if grid is None:
        grid = TimeGrid.uniform(30.0, 0.1)
    if rho_e is not None:
        rho_e = validate_density_matrix(rho_e, pair.dimension)
    C = echo_weights(pair, rho_e)
    values = exp_sum(C, pair.eig0.eigenvalues, pair.eiglam.eigenvalues, grid.points)
    values[grid.points == 0.0] = 1.0  # M(0) = I and tr rho = 1
    return CoherenceTrace(grid, values, meta={"lambda": pair.lam, "Gamma": 0.0,
                                              "n_env": pair.dimension, "n_run": 1,
                                              "method": "exact"})


def relative_coherence(rho_jk_0: complex, eps_j: float, eps_k: float,
                       raw: CoherenceTrace) -> CoherenceTrace:
    """Remove the initial value and the free phase ``exp(-i (eps_j - eps_k) t)``."""
    if rho_jk_0 == 0:
        raise UndefinedCoherenceError("relative coherence is undefined for rho_jk(0) = 0")
    ref = rho_jk_0 * np.exp(-1j * (eps_j - eps_k) * raw.t)
    # dividing by ref rotates (Re, Im) by phi; errors treated as independent
    phi = -np.angle(ref)
    c2, s2 = np.cos(phi) ** 2, np.sin(phi) ** 2
    scale = abs(rho_jk_0)
    se_re = np.sqrt(c2 * raw.stderr_re**2 + s2 * raw.stderr_im**2) / scale
    se_im = np.sqrt(s2 * raw.stderr_re**2 + c2 * raw.stderr_im**2) / scale
    return CoherenceTrace(raw.grid, raw.values / ref, se_re, se_im, dict(raw.meta))
