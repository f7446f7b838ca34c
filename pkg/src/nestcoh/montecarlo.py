"""Ensemble averaging over random-matrix realizations.

Realization ``i`` of a plan draws, from the stream ``(base_seed, i)`` and in
this order: ``H0`` (GOE, unit mean spacing at the band center), ``Veff``
(GOE, unit width), ``V'`` (GUE, unit width, so ``<(V'^2)_ii> = N``) and, for
pure initial states, the state vector.  All three matrices are always drawn
so that frozen and resampled modes see the same ``H0``.  Frozen matrices
come from a separate stream and are shared by every realization.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import __version__
from .echo import CoherenceTrace, TimeGrid, fidelity_amplitude, random_pure_state
from .errors import NestcohError, ParameterError
from .lindblad import SCHEMES, propagate_coherence_many
from .rmt import (EnsembleSpec, Kind, as_kind, build_h_lambda, normalize_center_spacing,
                  sample_gaussian_ensemble, stream_rng)
from .theory import full_lr_matrix

VPRIME_MODES = ("resampled", "fixed", "isotropic")
METHODS = ("auto", "propagate", "exact", "full_lr")
RHO_CHOICES = ("mixed", "pure")
FIXED_STREAM = 0xF1ED


@dataclass(frozen=True)
class Scenario:
    """Physical and numerical parameters of one ensemble.

    ``method='auto'`` uses the exact spectral fidelity for ``Gamma = 0`` and
    split-step propagation otherwise; ``'full_lr'`` evaluates the
    per-realization linear-response matrix formula instead of simulating.
    """

    n_env: int = 50
    lam: float = 0.1
    Gamma: float = 0.0
    t_max: float = 15.0
    step: float = 0.1
    kind_h0: Kind = Kind.GOE
    kind_veff: Kind = Kind.GOE
    kind_vprime: Kind = Kind.GUE
    vprime_mode: str = "resampled"
    freeze_veff: bool = False
    rho: str = "mixed"
    scheme: str = "yoshida4"
    dt: float = 0.01
    method: str = "auto"

    def __post_init__(self):
        for name in ("kind_h0", "kind_veff", "kind_vprime"):
            object.__setattr__(self, name, as_kind(getattr(self, name)))
        if int(self.n_env) != self.n_env or self.n_env < 2:
            raise ParameterError(f"n_env must be an integer >= 2, got {self.n_env!r}")
        object.__setattr__(self, "n_env", int(self.n_env))
        for name in ("lam", "Gamma", "t_max", "step", "dt"):
            v = float(getattr(self, name))
            if not np.isfinite(v):
                raise ParameterError(f"{name} must be finite")
            object.__setattr__(self, name, v)
        if self.Gamma < 0 or self.t_max < 0 or self.step <= 0 or self.dt <= 0:
            raise ParameterError("need Gamma >= 0, t_max >= 0, step > 0 and dt > 0")
        if self.vprime_mode not in VPRIME_MODES:
            raise ParameterError(f"vprime_mode must be one of {VPRIME_MODES}")
        if self.rho not in RHO_CHOICES:
            raise ParameterError(f"rho must be one of {RHO_CHOICES}")
        if self.scheme not in SCHEMES:
            raise ParameterError(f"scheme must be one of {SCHEMES}")
        if self.method not in METHODS:
            raise ParameterError(f"method must be one of {METHODS}")
        if self.method == "exact" and self.Gamma != 0.0:
            raise ParameterError("method 'exact' is only available for Gamma = 0")
        self.grid()

    def grid(self) -> TimeGrid:
        return TimeGrid.uniform(self.t_max, self.step)

    @property
    def resolved_method(self) -> str:
        if self.method == "auto":
            return "exact" if self.Gamma == 0.0 else "propagate"
        return self.method

    def with_gamma(self, Gamma: float) -> "Scenario":
        return dataclasses.replace(self, Gamma=float(Gamma))

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for name in ("kind_h0", "kind_veff", "kind_vprime"):
            d[name] = d[name].value
        return d


@dataclass(frozen=True)
class RunPlan:
    scenario: Scenario
    n_run: int
    base_seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if int(self.n_run) != self.n_run or self.n_run < 1:
            raise ParameterError(f"n_run must be an integer >= 1, got {self.n_run!r}")
        if not 0 <= int(self.base_seed) < 2**64:
            raise ParameterError("base_seed must be an unsigned 64-bit integer")
        if int(self.workers) < 1:
            raise ParameterError("workers must be >= 1")

    def fingerprint(self) -> str:
        """Hash of everything that determines the result (not the worker count)."""
        payload = {"scenario": self.scenario.to_dict(), "n_run": int(self.n_run),
                   "base_seed": int(self.base_seed), "version": __version__}
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:20]


def sample_realization(sc: Scenario, base_seed: int, index: int):
    """Matrices of realization ``index``: ``(pair, Vprime or None, rho or None)``."""
    n = sc.n_env
    rng = stream_rng(base_seed, index)
    H0 = normalize_center_spacing(
        sample_gaussian_ensemble(EnsembleSpec(sc.kind_h0, n), rng=rng), sc.kind_h0)
    Veff = sample_gaussian_ensemble(EnsembleSpec(sc.kind_veff, n), rng=rng)
    Vp = sample_gaussian_ensemble(EnsembleSpec(sc.kind_vprime, n), rng=rng)
    rho = random_pure_state(n, rng) if sc.rho == "pure" else None
    if sc.freeze_veff:
        Veff = sample_gaussian_ensemble(EnsembleSpec(sc.kind_veff, n),
                                        rng=stream_rng(base_seed, FIXED_STREAM, 0))
    if sc.vprime_mode == "fixed":
        Vp = sample_gaussian_ensemble(EnsembleSpec(sc.kind_vprime, n),
                                      rng=stream_rng(base_seed, FIXED_STREAM, 1))
    elif sc.vprime_mode == "isotropic":
        Vp = None
    return build_h_lambda(H0, Veff, sc.lam), Vp, rho


def realization_traces(sc: Scenario, Gammas, base_seed: int, index: int) -> np.ndarray:
    """Traces of one realization for each rate in ``Gammas``; shape ``(k, T)``."""
    grid = sc.grid()
    method = sc.with_gamma(max(Gammas)).resolved_method if sc.method == "auto" else sc.method
    pair, Vp, rho = sample_realization(sc, base_seed, index)
    if method == "exact":
        f = fidelity_amplitude(pair, rho, grid).values
        return np.repeat(f[None], len(Gammas), axis=0)
    if method == "full_lr":
        return np.stack([full_lr_matrix(pair, rho, G, grid).values for G in Gammas])
    traces = propagate_coherence_many(pair, Gammas, Vp, rho, grid, sc.scheme, sc.dt)
    return np.stack([tr.values for tr in traces])


def _run_chunk(args):
    sc, Gammas, base_seed, indices = args
    out = []
    for i in indices:
        try:
            out.append(realization_traces(sc, Gammas, base_seed, i))
        except NestcohError as exc:
            raise type(exc)(f"realization {i} (base_seed={base_seed}) failed: {exc}") from exc
    return indices, out


def _neumaier(rows: np.ndarray) -> np.ndarray:
    """Compensated sum over axis 0, taken in index order."""
    s = np.zeros(rows.shape[1:], dtype=rows.dtype)
    c = np.zeros_like(s)
    for x in rows:
        t = s + x
        big = np.abs(s) >= np.abs(x)
        c += np.where(big, (s - t) + x, (x - t) + s)
        s = t
    return s + c


def aggregate_traces(samples: np.ndarray):
    """Mean and standard errors of real-valued or complex samples along axis 0.

    Returns ``(mean, stderr_re, stderr_im)``.  The standard error is the
    sample standard deviation over ``sqrt(n)``, and zero for ``n = 1``.
    """
    samples = np.asarray(samples)
    n = samples.shape[0]
    re = np.ascontiguousarray(samples.real, dtype=float)
    im = np.ascontiguousarray(samples.imag, dtype=float)
    mean_re = _neumaier(re) / n
    mean_im = _neumaier(im) / n
    if n == 1:
        z = np.zeros_like(mean_re)
        return mean_re + 1j * mean_im, z, z.copy()
    se_re = np.sqrt(_neumaier((re - mean_re) ** 2) / (n - 1) / n)
    se_im = np.sqrt(_neumaier((im - mean_im) ** 2) / (n - 1) / n)
    return mean_re + 1j * mean_im, se_re, se_im


def _compute_samples(sc: Scenario, Gammas, n_run: int, base_seed: int, workers: int) -> np.ndarray:
    """Per-realization traces, shape ``(n_run, k, T)``, independent of ``workers``."""
    indices = list(range(n_run))
    if workers <= 1 or n_run == 1:
        _, rows = _run_chunk((sc, Gammas, base_seed, indices))
        return np.stack(rows)
    chunks = [indices[w::workers] for w in range(workers)]
    out = [None] * n_run
    with ProcessPoolExecutor(max_workers=workers) as pool:
        for idx, rows in pool.map(_run_chunk, [(sc, Gammas, base_seed, c) for c in chunks]):
            for i, r in zip(idx, rows):
                out[i] = r
    return np.stack(out)


def _trace_from_samples(plan: RunPlan, values, se_re, se_im) -> CoherenceTrace:
    sc = plan.scenario
    meta = {"lambda": sc.lam, "Gamma": sc.Gamma, "n_env": sc.n_env, "n_run": plan.n_run,
            "base_seed": int(plan.base_seed), "method": sc.resolved_method,
            "integrator": sc.scheme, "dt": sc.dt, "vprime": sc.vprime_mode, "rho": sc.rho,
            "plan_hash": plan.fingerprint()}
    return CoherenceTrace(sc.grid(), values, se_re, se_im, meta)


def _cache_path(cache_dir, plan: RunPlan):
    return None if cache_dir is None else os.path.join(cache_dir, plan.fingerprint() + ".npz")


def _load_cached(cache_dir, plan):
    path = _cache_path(cache_dir, plan)
    if path is None or not os.path.exists(path):
        return None
    with np.load(path) as z:
        return _trace_from_samples(plan, z["values"], z["se_re"], z["se_im"])


def _store_cached(cache_dir, plan, trace):
    path = _cache_path(cache_dir, plan)
    if path is None:
        return
    os.makedirs(cache_dir, exist_ok=True)
    tmp = path + ".tmp.npz"
    np.savez(tmp, values=trace.values, se_re=trace.stderr_re, se_im=trace.stderr_im)
    os.replace(tmp, path)


def run_ensemble(plan: RunPlan, cache_dir: str | None = None) -> CoherenceTrace:
    """Ensemble-mean relative coherence with per-point standard errors.

    The result is bit-identical for any ``plan.workers``.  With ``cache_dir``
    the aggregated trace is stored under the plan fingerprint and reused.
    """
    return run_scenario_sweep([plan], cache_dir)[0]


def _group_key(plan: RunPlan):
    sc = plan.scenario
    method = sc.resolved_method
    if method in ("propagate", "full_lr"):
        sc = dataclasses.replace(sc, Gamma=0.0, method=method)
    return sc, plan.n_run, plan.base_seed, method


def run_scenario_sweep(plans: list[RunPlan], cache_dir: str | None = None) -> list[CoherenceTrace]:
    """Run several plans, returning traces in input order.

    Plans that differ only in ``Gamma`` (propagated or full_lr) share each
    realization's matrices and eigendecompositions.
    """
    results: list[CoherenceTrace | None] = [None] * len(plans)
    groups: dict = {}
    for j, plan in enumerate(plans):
        cached = _load_cached(cache_dir, plan)
        if cached is not None:
            results[j] = cached
            continue
        groups.setdefault(_group_key(plan), []).append(j)
    for key, members in groups.items():
        sc, n_run, seed, _ = key
        gammas = sorted({plans[j].scenario.Gamma for j in members})
        workers = max(plans[j].workers for j in members)
        samples = _compute_samples(sc, gammas, n_run, seed, workers)
        for j in members:
            q = gammas.index(plans[j].scenario.Gamma)
            trace = _trace_from_samples(plans[j], *aggregate_traces(samples[:, q]))
            _store_cached(cache_dir, plans[j], trace)
            results[j] = trace
    return results
