"""Compare the compiled kernels with the pure-Python fallback.

Usage::

    python benchmarks/bench_kernels.py [--repeat 5]

Prints median wall times per call and the speedup for the split-step
propagation (several environment sizes) and the spline convolution.
"""
import argparse
import statistics
import time

import numpy as np

from nestcoh import _kernels_py
from nestcoh.echo import TimeGrid, fidelity_amplitude
from nestcoh.lindblad import _Splitter
from nestcoh.rmt import (EnsembleSpec, build_h_lambda, normalize_center_spacing,
                         sample_gaussian_ensemble, stream_rng)
from nestcoh.theory import fit_spline

try:
    from nestcoh import _kernels as _compiled
except ImportError:
    _compiled = None


def _median_time(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def _pair(n, lam=0.1, seed=0):
    rng = stream_rng(seed, 0)
    H0 = normalize_center_spacing(sample_gaussian_ensemble(EnsembleSpec("GOE", n), rng=rng))
    V = sample_gaussian_ensemble(EnsembleSpec("GOE", n), rng=rng)
    Vp = sample_gaussian_ensemble(EnsembleSpec("GUE", n), rng=rng)
    return build_h_lambda(H0, V, lam), Vp


def bench_propagation(n, repeat, n_out=20, n_sub=5):
    pair, Vp = _pair(n)
    sp = _Splitter(pair, Vp, [0.01], "yoshida4")
    L, R, damp, shift, ops = sp.tables(0.02)
    X0 = np.ascontiguousarray(sp.to_basis(np.eye(n, dtype=complex) / n)[None])
    out = {}
    for name, mod in (("python", _kernels_py), ("cython", _compiled)):
        if mod is None:
            continue
        out[name] = _median_time(
            lambda: mod.propagate_split(X0.copy(), L, R, damp, shift, ops, n_sub, n_out), repeat)
    return out, n_out * n_sub


def bench_convolution(repeat, t_max=15.0):
    pair, _ = _pair(50)
    grid = TimeGrid.uniform(t_max, 0.1)
    s = fit_spline(fidelity_amplitude(pair, grid=grid))
    times = np.ascontiguousarray(grid.points)
    out = {}
    for name, mod in (("python", _kernels_py), ("cython", _compiled)):
        if mod is None:
            continue
        out[name] = _median_time(
            lambda: mod.conv_simpson(s.knots, s.coefficients, times, 1e-10, 40), repeat)
    return out, times.size


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if _compiled is None:
        print("compiled extension not built; only the fallback is timed")
    print(f"{'kernel':<28}{'python [ms]':>14}{'cython [ms]':>14}{'speedup':>10}")
    rows = []
    for n in (8, 20, 50):
        res, steps = bench_propagation(n, args.repeat)
        rows.append((f"propagate N={n} ({steps} steps)", res))
    res, m = bench_convolution(args.repeat)
    rows.append((f"convolution ({m} times)", res))
    for label, res in rows:
        py, cy = res.get("python"), res.get("cython")
        speed = f"{py / cy:9.1f}x" if cy else "      n/a"
        cy_s = f"{1e3 * cy:14.2f}" if cy else f"{'n/a':>14}"
        print(f"{label:<28}{1e3 * py:14.2f}{cy_s}{speed}")


if __name__ == "__main__":
    main()
