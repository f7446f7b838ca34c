"""Scenario configuration files.

Configs are INI files (``configparser`` dialect, ``#`` comments).  Sections
and keys, with defaults in brackets::

    [scenario]    name [scenario], n_env [50], lambda, kind_h0 [GOE],
                  kind_veff [GOE], kind_vprime [GUE]
    [central]     energies, dephasing  (comma lists), pair [0, 1]
                  lambda is derived as dephasing[j] - dephasing[k]
    [grid]        t_max [15], step [0.1]
    [dissipator]  gammas  or  gamma_over_lambda  (comma list),
                  vprime_mode [resampled]
    [integrator]  scheme [yoshida4], dt [0.01], method [auto]
    [run]         n_run [1000], base_seed [0], workers [1], rho [mixed],
                  freeze_veff [false]
    [fit]         window [0, min(15, t_max)], objective [complex], weighted [false]
    [output]      dir [out], cache [none]
    [saturation]  sources (configs or preset names, optionally NAME@N to
                  pin the dimension), n_env_variants, tables (existing fit CSVs)

Exactly one of ``[scenario] lambda`` and ``[central]`` must fix lambda; if
both are present they must agree.  Relative paths are resolved against the
directory of the config file.  :func:`dump_config` writes the canonical form,
which loads back to an equal :class:`ScenarioConfig`.
"""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
import io
import os
from dataclasses import dataclass, field
from importlib import resources

from .errors import ConfigError, NestcohError
from .fitting import OBJECTIVES
from .lindblad import SCHEMES
from .montecarlo import METHODS, RHO_CHOICES, VPRIME_MODES, RunPlan, Scenario
from .rmt import Kind, as_kind

PRESETS = ("fig1", "fig2", "fig3", "fig4")


@dataclass(frozen=True)
class CentralSystemSpec:
    """Central-system levels ``(eps_j, nu_j)`` and the coherence ``(j, k)`` followed."""

    energies: tuple
    dephasing: tuple
    pair: tuple = (0, 1)

    def __post_init__(self):
        if len(self.energies) != len(self.dephasing) or len(self.energies) < 2:
            raise ConfigError("central system needs >= 2 levels with energies and dephasing")
        j, k = self.pair
        n = len(self.energies)
        if not (0 <= j < n and 0 <= k < n) or j == k:
            raise ConfigError(f"pair {self.pair} must name two distinct levels of {n}")

    @property
    def lam(self) -> float:
        j, k = self.pair
        return float(self.dephasing[j]) - float(self.dephasing[k])

    @property
    def energy_gap(self) -> float:
        j, k = self.pair
        return float(self.energies[j]) - float(self.energies[k])


@dataclass(frozen=True)
class ScenarioConfig:
    name: str = "scenario"
    n_env: int = 50
    lam: float | None = None
    kind_h0: str = "GOE"
    kind_veff: str = "GOE"
    kind_vprime: str = "GUE"
    central: CentralSystemSpec | None = None
    t_max: float = 15.0
    step: float = 0.1
    gammas: tuple | None = None
    gamma_over_lambda: tuple | None = None
    vprime_mode: str = "resampled"
    scheme: str = "yoshida4"
    dt: float = 0.01
    method: str = "auto"
    n_run: int = 1000
    base_seed: int = 0
    workers: int = 1
    rho: str = "mixed"
    freeze_veff: bool = False
    window: tuple | None = None
    objective: str = "complex"
    weighted: bool = False
    out_dir: str = "out"
    cache_dir: str | None = None
    sources: tuple = ()
    n_env_variants: tuple = ()
    tables: tuple = ()
    base_dir: str = field(default=".", compare=False)

    def __post_init__(self):
        if self.central is not None:
            lam_c = self.central.lam
            if self.lam is not None and abs(self.lam - lam_c) > 1e-12:
                raise ConfigError(f"lambda={self.lam} disagrees with central dephasing gap {lam_c}")
            object.__setattr__(self, "lam", lam_c)
        if self.gammas is not None and self.gamma_over_lambda is not None:
            raise ConfigError("give either gammas or gamma_over_lambda, not both")
        for name, allowed in (("vprime_mode", VPRIME_MODES), ("scheme", SCHEMES),
                              ("method", METHODS), ("rho", RHO_CHOICES),
                              ("objective", OBJECTIVES)):
            if getattr(self, name) not in allowed:
                raise ConfigError(f"{name}={getattr(self, name)!r} not in {allowed}")
        for name in ("kind_h0", "kind_veff", "kind_vprime"):
            try:
                object.__setattr__(self, name, as_kind(getattr(self, name)).value)
            except NestcohError as exc:
                raise ConfigError(str(exc)) from None
        if self.window is not None and len(self.window) != 2:
            raise ConfigError("fit window needs two numbers")

    @property
    def fit_window(self) -> tuple:
        """Configured window, else ``(0, min(15, t_max))``."""
        if self.window is not None:
            return tuple(self.window)
        return (0.0, min(15.0, self.t_max))

    @property
    def gamma_list(self) -> list[float]:
        """Absolute damping rates; rates given relative to lambda need lambda."""
        if self.gamma_over_lambda is not None:
            if self.lam is None:
                raise ConfigError("gamma_over_lambda needs lambda")
            return [a * self.lam for a in self.gamma_over_lambda]
        return list(self.gammas or [])

    def scenario(self, Gamma: float = 0.0, n_env: int | None = None) -> Scenario:
        if self.lam is None:
            raise ConfigError("lambda is not set ([scenario] lambda or [central])")
        try:
            return Scenario(n_env=n_env or self.n_env, lam=self.lam, Gamma=Gamma,
                            t_max=self.t_max, step=self.step, kind_h0=Kind(self.kind_h0),
                            kind_veff=Kind(self.kind_veff), kind_vprime=Kind(self.kind_vprime),
                            vprime_mode=self.vprime_mode, freeze_veff=self.freeze_veff,
                            rho=self.rho, scheme=self.scheme, dt=self.dt, method=self.method)
        except NestcohError as exc:
            raise ConfigError(f"invalid scenario: {exc}") from None

    def plan(self, Gamma: float = 0.0, n_env: int | None = None) -> RunPlan:
        try:
            return RunPlan(self.scenario(Gamma, n_env), self.n_run, self.base_seed, self.workers)
        except ConfigError:
            raise
        except NestcohError as exc:
            raise ConfigError(f"invalid run plan: {exc}") from None

    def resolve(self, path: str) -> str:
        return path if os.path.isabs(path) else os.path.join(self.base_dir, path)

    def replace(self, **kw) -> "ScenarioConfig":
        return dataclasses.replace(self, **kw)


def _floats(s: str) -> tuple:
    try:
        return tuple(float(x) for x in s.replace(";", ",").split(",") if x.strip())
    except ValueError:
        raise ConfigError(f"expected a comma-separated list of numbers, got {s!r}") from None


def _names(s: str) -> tuple:
    return tuple(x.strip() for x in s.split(",") if x.strip())


_KNOWN = {
    "scenario": {"name", "n_env", "lambda", "kind_h0", "kind_veff", "kind_vprime"},
    "central": {"energies", "dephasing", "pair"},
    "grid": {"t_max", "step"},
    "dissipator": {"gammas", "gamma_over_lambda", "vprime_mode"},
    "integrator": {"scheme", "dt", "method"},
    "run": {"n_run", "base_seed", "workers", "rho", "freeze_veff"},
    "fit": {"window", "objective", "weighted"},
    "output": {"dir", "cache"},
    "saturation": {"sources", "n_env_variants", "tables"},
}


def parse_config(text: str, base_dir: str = ".") -> ScenarioConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    for sec in cp.sections():
        if sec not in _KNOWN:
            raise ConfigError(f"unknown section [{sec}]")
        extra = set(cp[sec]) - _KNOWN[sec]
        if extra:
            raise ConfigError(f"unknown keys in [{sec}]: {sorted(extra)}")

    def get(sec, key, conv=str, default=None):
        if not cp.has_option(sec, key):
            return default
        raw = cp.get(sec, key).strip()
        try:
            return conv(raw)
        except ValueError:
            raise ConfigError(f"[{sec}] {key} = {raw!r} is not valid") from None

    def boolean(s):
        if s.lower() in ("1", "true", "yes", "on"):
            return True
        if s.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(s)

    def integer(s):
        v = float(s)
        if v != int(v):
            raise ValueError(s)
        return int(v)

    central = None
    if cp.has_section("central"):
        pair = get("central", "pair", _floats, (0, 1))
        central = CentralSystemSpec(get("central", "energies", _floats, ()),
                                    get("central", "dephasing", _floats, ()),
                                    tuple(int(p) for p in pair))
    cache = get("output", "cache")
    kw = dict(
        name=get("scenario", "name", str, "scenario"),
        n_env=get("scenario", "n_env", integer, 50),
        lam=get("scenario", "lambda", float),
        kind_h0=get("scenario", "kind_h0", str, "GOE"),
        kind_veff=get("scenario", "kind_veff", str, "GOE"),
        kind_vprime=get("scenario", "kind_vprime", str, "GUE"),
        central=central,
        t_max=get("grid", "t_max", float, 15.0),
        step=get("grid", "step", float, 0.1),
        gammas=get("dissipator", "gammas", _floats),
        gamma_over_lambda=get("dissipator", "gamma_over_lambda", _floats),
        vprime_mode=get("dissipator", "vprime_mode", str, "resampled"),
        scheme=get("integrator", "scheme", str, "yoshida4"),
        dt=get("integrator", "dt", float, 0.01),
        method=get("integrator", "method", str, "auto"),
        n_run=get("run", "n_run", integer, 1000),
        base_seed=get("run", "base_seed", integer, 0),
        workers=get("run", "workers", integer, 1),
        rho=get("run", "rho", str, "mixed"),
        freeze_veff=get("run", "freeze_veff", boolean, False),
        window=get("fit", "window", _floats),
        objective=get("fit", "objective", str, "complex"),
        weighted=get("fit", "weighted", boolean, False),
        out_dir=get("output", "dir", str, "out"),
        cache_dir=None if cache in (None, "", "none") else cache,
        sources=get("saturation", "sources", _names, ()),
        n_env_variants=tuple(int(x) for x in get("saturation", "n_env_variants", _floats, ())),
        tables=get("saturation", "tables", _names, ()),
        base_dir=base_dir,
    )
    return ScenarioConfig(**kw)


def load_config(path: str) -> ScenarioConfig:
    """Load a config file, or a bundled preset when ``path`` is a preset name."""
    if path in PRESETS:
        text = resources.files("nestcoh").joinpath("presets", f"{path}.ini").read_text()
        return parse_config(text, base_dir=".")
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc}") from None
    return parse_config(text, base_dir=os.path.dirname(os.path.abspath(path)))


def _list(xs) -> str:
    return ", ".join(repr(float(x)) if isinstance(x, float) else str(x) for x in xs)


def dump_config(cfg: ScenarioConfig) -> str:
    """Canonical INI text for ``cfg``."""
    cp = configparser.ConfigParser(interpolation=None)
    sc = {"name": cfg.name, "n_env": str(cfg.n_env), "kind_h0": cfg.kind_h0,
          "kind_veff": cfg.kind_veff, "kind_vprime": cfg.kind_vprime}
    if cfg.central is None and cfg.lam is not None:
        sc["lambda"] = repr(float(cfg.lam))
    cp["scenario"] = sc
    if cfg.central is not None:
        cp["central"] = {"energies": _list(cfg.central.energies),
                         "dephasing": _list(cfg.central.dephasing),
                         "pair": _list(cfg.central.pair)}
    cp["grid"] = {"t_max": repr(cfg.t_max), "step": repr(cfg.step)}
    dis = {"vprime_mode": cfg.vprime_mode}
    if cfg.gammas is not None:
        dis["gammas"] = _list(cfg.gammas)
    if cfg.gamma_over_lambda is not None:
        dis["gamma_over_lambda"] = _list(cfg.gamma_over_lambda)
    cp["dissipator"] = dis
    cp["integrator"] = {"scheme": cfg.scheme, "dt": repr(cfg.dt), "method": cfg.method}
    cp["run"] = {"n_run": str(cfg.n_run), "base_seed": str(cfg.base_seed),
                 "workers": str(cfg.workers), "rho": cfg.rho,
                 "freeze_veff": str(cfg.freeze_veff).lower()}
    fit = {"objective": cfg.objective, "weighted": str(cfg.weighted).lower()}
    if cfg.window is not None:
        fit["window"] = _list(cfg.window)
    cp["fit"] = fit
    cp["output"] = {"dir": cfg.out_dir, "cache": cfg.cache_dir or "none"}
    if cfg.sources or cfg.tables or cfg.n_env_variants:
        cp["saturation"] = {"sources": ", ".join(cfg.sources),
                            "n_env_variants": _list(cfg.n_env_variants),
                            "tables": ", ".join(cfg.tables)}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def config_hash(cfg: ScenarioConfig) -> str:
    """Hash of the physics and numerics; output location and worker count excluded."""
    canon = dump_config(cfg.replace(out_dir="out", cache_dir=None, workers=1))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]
