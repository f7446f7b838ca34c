"""Quick internal consistency checks run by ``nestcoh selftest`` (a few seconds)."""
from __future__ import annotations

import numpy as np

from . import kernels
from .echo import CoherenceTrace, TimeGrid, fidelity_amplitude
from .errors import NumericError
from .fitting import fit_gamma
from .lindblad import DissipatorSpec, propagate_coherence, superoperator_reference
from .rmt import (EnsembleSpec, build_h_lambda, normalize_center_spacing,
                  sample_gaussian_ensemble, stream_rng)
from .theory import elr_exponent, fit_spline, form_factor_b2, lr_convolution, perturbative_g


def _instance(n: int, lam: float, seed: int):
    rng = stream_rng(seed, 0)
    H0 = normalize_center_spacing(sample_gaussian_ensemble(EnsembleSpec("GOE", n), rng=rng))
    V = sample_gaussian_ensemble(EnsembleSpec("GOE", n), rng=rng)
    Vp = sample_gaussian_ensemble(EnsembleSpec("GUE", n), rng=rng)
    return build_h_lambda(H0, V, lam), Vp


def _checks():
    grid = TimeGrid.uniform(10.0, 0.1)
    pair, Vp = _instance(6, 0.1, 11)
    diss = DissipatorSpec(0.1, Vp)
    a = propagate_coherence(pair, diss, grid=grid).values
    b = superoperator_reference(pair, diss, grid=grid).values
    yield "propagator vs superoperator (N=6)", np.max(np.abs(a - b)), 1e-7

    pair, Vp = _instance(20, 0.1, 12)
    a = propagate_coherence(pair, DissipatorSpec(0.0, Vp), grid=grid).values
    b = fidelity_amplitude(pair, grid=grid).values
    yield "Gamma=0 propagator vs exact echo (N=20)", np.max(np.abs(a - b)), 1e-8

    x = np.linspace(0, 5, 101)
    yield "g_0(x) = exp(-x^2)", np.max(np.abs(perturbative_g(0.0, x) - np.exp(-x * x))), 1e-14
    yield "b2 continuity at tau=1", abs(form_factor_b2(1.0) - form_factor_b2(1.0 + 1e-15)), 1e-12
    h = 1e-6
    C = elr_exponent(np.array([0.0, h, 2 * h]))
    yield "C'(0) = pi", abs((-3 * C[0] + 4 * C[1] - C[2]) / (2 * h) - np.pi), 1e-4

    f = fidelity_amplitude(pair, grid=grid)
    s = fit_spline(f)
    syn = CoherenceTrace(grid, lr_convolution(s, 0.05, grid).values)
    yield "fit recovers Gamma=0.05", abs(fit_gamma(syn, s, (0.0, 10.0)).parameter - 0.05), 1e-6


def run_selftest(emit=print) -> int:
    emit(f"kernel backend: {kernels.BACKEND}")
    failed = []
    for name, err, tol in _checks():
        ok = bool(err <= tol)
        emit(f"{'PASS' if ok else 'FAIL'}  {name}: {err:.2e} (tol {tol:.0e})")
        if not ok:
            failed.append(name)
    if failed:
        raise NumericError(f"selftest failed: {', '.join(failed)}")
    return 0
