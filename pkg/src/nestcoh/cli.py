"""Command-line driver.

Subcommands ``fidelity``, ``simulate``, ``compare``, ``saturation`` and
``selftest``.  Exit codes: 0 success, 2 configuration or IO error,
3 numerical failure.
"""
from __future__ import annotations

import argparse
import datetime
import os
import sys

import numpy as np

from . import __version__
from .config import PRESETS, ConfigError, ScenarioConfig, config_hash, dump_config, load_config
from .errors import NestcohError, NumericError
from .experiments import SweepResult, comparison_table, run_sweep
from .fitting import fit_saturation
from .io import (ensure_dir, read_sweep_csv, save_spline, write_json, write_sweep_csv,
                 write_trace_csv)
from .montecarlo import run_scenario_sweep
from .theory import fit_spline

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _stamp(cfg: ScenarioConfig) -> dict:
    return {"config_hash": config_hash(cfg), "seed": int(cfg.base_seed), "config": cfg.name}


def _manifest(cfg: ScenarioConfig, out: str, command: str, files: list, extra=None) -> str:
    rec = {"command": command, "version": __version__, **_stamp(cfg),
           "n_run": cfg.n_run, "files": sorted(os.path.relpath(f, out) for f in files),
           "config_text": dump_config(cfg),
           "created": datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")}
    rec.update(extra or {})
    return write_json(os.path.join(out, "manifest.json"), rec)


def _fmt_gamma(G: float) -> str:
    return format(G, ".6g").replace("-", "m")


def cmd_fidelity(cfg: ScenarioConfig) -> list[str]:
    """Undamped ensemble trace plus its spline cache."""
    out = ensure_dir(cfg.resolve(cfg.out_dir))
    cache = cfg.resolve(cfg.cache_dir) if cfg.cache_dir else None
    trace = run_scenario_sweep([cfg.plan(0.0)], cache)[0]
    files = [write_trace_csv(os.path.join(out, "fidelity.csv"), trace, _stamp(cfg)),
             save_spline(os.path.join(out, "fidelity_spline.npz"), fit_spline(trace))]
    _manifest(cfg, out, "fidelity", files)
    return files


def cmd_simulate(cfg: ScenarioConfig) -> list[str]:
    """One damped ensemble trace per configured rate."""
    gammas = cfg.gamma_list
    if not gammas:
        raise ConfigError("[dissipator] lists no damping rates")
    out = ensure_dir(cfg.resolve(cfg.out_dir))
    cache = cfg.resolve(cfg.cache_dir) if cfg.cache_dir else None
    traces = run_scenario_sweep([cfg.plan(G) for G in gammas], cache)
    files = []
    for i, (G, tr) in enumerate(zip(gammas, traces)):
        name = f"coherence_{i:02d}_G{_fmt_gamma(G)}.csv"
        files.append(write_trace_csv(os.path.join(out, name), tr, _stamp(cfg)))
    _manifest(cfg, out, "simulate", files, {"gammas": gammas})
    return files


def _write_comparison(res: SweepResult, cfg: ScenarioConfig, out: str) -> list[str]:
    files = []
    for i, G in enumerate(res.gammas):
        tab = comparison_table(res, i)
        path = os.path.join(out, f"compare_{i:02d}_G{_fmt_gamma(G)}.csv")
        cols = ["t", "sim_re", "sim_im", "stderr_re", "stderr_im", "elr",
                "sim_minus_elr_re", "sim_minus_elr_im", "theory_minus_elr_re",
                "theory_minus_elr_im", "fit_theory_minus_elr_re", "fit_theory_minus_elr_im",
                "base_minus_elr_re"]
        data = np.column_stack([
            tab["t"], tab["sim"].real, tab["sim"].imag, tab["stderr_re"], tab["stderr_im"],
            tab["elr"].real, tab["sim_minus_elr"].real, tab["sim_minus_elr"].imag,
            tab["theory_minus_elr"].real, tab["theory_minus_elr"].imag,
            tab["fit_theory_minus_elr"].real, tab["fit_theory_minus_elr"].imag,
            tab["base_minus_elr"].real])
        fit = res.fits[i]
        meta = {**_stamp(cfg), "Gamma": G, "lambda": res.lam,
                "Gamma_fit": fit.parameter if fit else G}
        try:
            with open(path, "w") as fh:
                fh.writelines(f"# {k}={v}\n" for k, v in sorted(meta.items()))
                np.savetxt(fh, data, delimiter=",", fmt="%.17g", header=",".join(cols),
                           comments="")
        except OSError as exc:
            raise ConfigError(f"cannot write {path!r}: {exc}") from None
        files.append(path)
    rows = res.fit_rows()
    files.append(write_sweep_csv(os.path.join(out, "fits.csv"), rows))
    files.append(write_json(os.path.join(out, "fits.json"), {
        **_stamp(cfg), "window": list(res.window), "objective": cfg.objective,
        "fits": [dict(fr.to_dict(), Gamma_nominal=G) for G, fr in zip(res.gammas, res.fits) if fr]}))
    return files


def _sweep(cfg: ScenarioConfig, n_env: int | None = None) -> SweepResult:
    gammas = cfg.gamma_list
    if not gammas:
        raise ConfigError("[dissipator] lists no damping rates")
    cache = cfg.resolve(cfg.cache_dir) if cfg.cache_dir else None
    return run_sweep(cfg.scenario(0.0, n_env), gammas, cfg.n_run, cfg.base_seed, cfg.workers,
                     cfg.fit_window, cfg.objective, cfg.weighted, cache)


def cmd_compare(cfg: ScenarioConfig) -> list[str]:
    """Simulation and theory minus ELR for every rate, plus the fitted-rate table."""
    out = ensure_dir(cfg.resolve(cfg.out_dir))
    res = _sweep(cfg)
    files = _write_comparison(res, cfg, out)
    _manifest(cfg, out, "compare", files)
    return files


def cmd_saturation(cfg: ScenarioConfig) -> list[str]:
    """Combine fitted-rate tables across scenarios and fit the saturation scale."""
    out = ensure_dir(cfg.resolve(cfg.out_dir))
    rows = []
    for table in cfg.tables:
        rows += read_sweep_csv(cfg.resolve(table))
    files = []
    for src in cfg.sources:
        # "name@N" pins the dimension; otherwise n_env_variants (or the source's own N) apply
        name, _, pinned = src.partition("@")
        scfg = load_config(name if name in PRESETS else cfg.resolve(name))
        scfg = scfg.replace(base_seed=cfg.base_seed, workers=cfg.workers, n_run=cfg.n_run,
                            cache_dir=cfg.resolve(cfg.cache_dir) if cfg.cache_dir else None)
        try:
            dims = (int(pinned),) if pinned else (cfg.n_env_variants or (scfg.n_env,))
        except ValueError:
            raise ConfigError(f"bad saturation source {src!r}; expected NAME or NAME@N") from None
        for n_env in dims:
            sub = ensure_dir(os.path.join(out, f"{scfg.name}_N{n_env}"))
            res = _sweep(scfg, n_env)
            files += _write_comparison(res, scfg.replace(n_env=n_env), sub)
            rows += res.fit_rows()
    pts = [(r["Gamma_nominal"] / r["lambda"], r["Gamma_fit"] / r["lambda"])
           for r in rows if r["Gamma_nominal"] > 0]
    fr = fit_saturation(pts)
    files.append(write_sweep_csv(os.path.join(out, "saturation_points.csv"), rows))
    files.append(write_json(os.path.join(out, "saturation.json"), {
        **_stamp(cfg), "b": fr.parameter, "residual": fr.residual, "stderr_b": fr.stderr_param,
        "n_points": fr.n_points, "points": pts}))
    _manifest(cfg, out, "saturation", files, {"b": fr.parameter})
    return files


def cmd_selftest(cfg: ScenarioConfig | None = None) -> list[str]:
    """Fast internal consistency checks; raises NumericError on the first failure."""
    from .selftest import run_selftest
    run_selftest(print)
    return []


COMMANDS = {"fidelity": cmd_fidelity, "simulate": cmd_simulate, "compare": cmd_compare,
            "saturation": cmd_saturation, "selftest": cmd_selftest}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nestcoh", description=__doc__.split("\n\n")[0])
    p.add_argument("--version", action="version", version=f"nestcoh {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        sp = sub.add_parser(name, help=fn.__doc__.splitlines()[0])
        sp.add_argument("--config", required=name != "selftest",
                        help="config file or preset name (fig1 ... fig4)")
        sp.add_argument("--seed", type=int, help="override [run] base_seed (unsigned 64-bit)")
        sp.add_argument("--workers", type=int, help="override [run] workers")
        sp.add_argument("--out", help="override [output] dir")
        sp.add_argument("--n-run", type=int, dest="n_run", help="override [run] n_run")
        sp.add_argument("--cache", help="reuse ensemble results stored in this directory")
    return p


def _apply_overrides(cfg: ScenarioConfig, args) -> ScenarioConfig:
    kw = {}
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        kw["base_seed"] = args.seed
    if args.workers is not None:
        if args.workers < 1:
            raise ConfigError("--workers must be >= 1")
        kw["workers"] = args.workers
    if args.n_run is not None:
        if args.n_run < 1:
            raise ConfigError("--n-run must be >= 1")
        kw["n_run"] = args.n_run
    if args.out is not None:
        kw["out_dir"] = os.path.abspath(args.out)
    if args.cache is not None:
        kw["cache_dir"] = os.path.abspath(args.cache)
    return cfg.replace(**kw)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = None
        if args.config is not None:
            cfg = _apply_overrides(load_config(args.config), args)
        files = COMMANDS[args.command](cfg)
    except NumericError as exc:
        print(f"nestcoh: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (NestcohError, OSError) as exc:
        print(f"nestcoh: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for f in files:
        print(f)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
