"""Run configuration: TOML schema, defaults, validation, serialization.

A config file is a TOML document with tables [grid], [model], [coefficients],
[time], [initial], [outputs], [flags], [validation] and a top-level `rho`.
Viscosity/coupling coefficients are either plain numbers (constants) or
nested arrays-of-arrays giving polynomial coefficients in (theta, tau),
row index = theta power, column index = tau power.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np
import tomli

from .grid import Grid
from .thermo import (BivariatePoly, CoefficientSet, FreeEnergyModel,
                     COEFF_NAMES, validate_condition_P)


class ConfigError(ValueError):
    """Invalid configuration; .violations lists every failed constraint."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


@dataclass
class TimeConfig:
    dt: Optional[float] = None      # None -> auto from the CFL limit
    cfl_safety: float = 0.5         # fraction of the limit when dt is auto
    t_final: float = 1.0
    scheme: str = "rk4"
    diag_every: int = 10


@dataclass
class InitialConfig:
    kind: str = "eq_perturb"
    amplitude: float = 0.01
    seed: int = 0


@dataclass
class OutputConfig:
    dir: str = "out"
    snapshots: bool = False
    snapshot_every: int = 0         # 0 -> only final


@dataclass
class Flags:
    renormalize_d: bool = False
    isothermal: bool = False


@dataclass
class RunConfig:
    grid: Grid = field(default_factory=lambda: Grid(32, 32))
    model: FreeEnergyModel = field(default_factory=FreeEnergyModel)
    coeffs: CoefficientSet = field(default_factory=lambda: CoefficientSet.from_values())
    time: TimeConfig = field(default_factory=TimeConfig)
    initial: InitialConfig = field(default_factory=InitialConfig)
    outputs: OutputConfig = field(default_factory=OutputConfig)
    flags: Flags = field(default_factory=Flags)
    theta_box: tuple = (0.5, 2.0)
    tau_box: tuple = (0.0, 4.0)

    # ------------------------------------------------------------------
    def cfl_limit(self, samples: int = 9) -> float:
        """dt bound 0.2 h^2 / nu_max with nu_max sampled over the (theta, tau) box."""
        th = np.linspace(*self.theta_box, samples)
        ta = np.linspace(*self.tau_box, samples)
        T, U = np.meshgrid(th, ta, indexing="ij")
        vals = self.coeffs.evaluate(T, U)
        lam = self.model.lam(T)
        nu = max(
            float(np.max(vals["mu_s"])) / self.coeffs.rho,
            float(np.max(vals["alpha"])) / (self.coeffs.rho * self.model.c_v),
            float(np.max(lam)) / float(np.min(vals["gamma"])),
        )
        h2 = min(self.grid.hx, self.grid.hy) ** 2
        return 0.2 * h2 / nu

    def resolved_dt(self) -> float:
        limit = self.cfl_limit()
        if self.time.dt is None:
            return self.time.cfl_safety * limit
        return self.time.dt

    def canonical_dict(self) -> dict:
        d = {
            "rho": self.coeffs.rho,
            "grid": {"nx": self.grid.nx, "ny": self.grid.ny,
                     "lx": self.grid.lx, "ly": self.grid.ly, "bc": self.grid.bc},
            "model": {"c_v": self.model.c_v, "lambda_0": self.model.lambda_0,
                      "b": self.model.b, "theta_ref": self.model.theta_ref},
            "coefficients": {},
            "time": asdict(self.time),
            "initial": asdict(self.initial),
            "outputs": asdict(self.outputs),
            "flags": asdict(self.flags),
            "validation": {"theta_box": list(self.theta_box),
                           "tau_box": list(self.tau_box)},
        }
        for name in COEFF_NAMES:
            poly: BivariatePoly = getattr(self.coeffs, name)
            if poly.is_constant():
                d["coefficients"][name] = float(poly.coeffs[0, 0])
            else:
                d["coefficients"][name] = [[float(c) for c in row]
                                           for row in poly.coeffs]
        return d

    def digest(self) -> str:
        return hashlib.sha256(serialize(self).encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------

def _coerce_poly(name, value, violations):
    if isinstance(value, (int, float)):
        return BivariatePoly.constant(float(value))
    if isinstance(value, list):
        try:
            return BivariatePoly(np.array(value, dtype=float))
        except Exception as exc:
            violations.append(f"coefficients.{name}: bad polynomial table ({exc})")
            return BivariatePoly.constant(1.0)
    violations.append(f"coefficients.{name}: expected number or array-of-arrays")
    return BivariatePoly.constant(1.0)


def from_dict(raw: dict) -> RunConfig:
    violations = []

    def sect(key):
        v = raw.get(key, {})
        if not isinstance(v, dict):
            violations.append(f"[{key}] must be a table")
            return {}
        return dict(v)

    g = sect("grid")
    try:
        grid = Grid(int(g.pop("nx", 32)), int(g.pop("ny", 32)),
                    float(g.pop("lx", 1.0)), float(g.pop("ly", 1.0)),
                    str(g.pop("bc", "periodic")))
    except ValueError as exc:
        violations.append(f"grid: {exc}")
        grid = Grid(32, 32)
    for k in g:
        violations.append(f"grid: unknown key {k!r}")

    m = sect("model")
    model = FreeEnergyModel(
        c_v=float(m.pop("c_v", 1.0)), lambda_0=float(m.pop("lambda_0", 1.0)),
        b=float(m.pop("b", 0.0)), theta_ref=float(m.pop("theta_ref", 1.0)))
    for k in m:
        violations.append(f"model: unknown key {k!r}")

    c = sect("coefficients")
    rho = float(raw.get("rho", 1.0))
    polys = {}
    for name in COEFF_NAMES:
        default = 0.0 if name in ("mu_P", "mu_L", "mu_0") else 1.0
        polys[name] = _coerce_poly(name, c.pop(name, default), violations)
    for k in c:
        violations.append(f"coefficients: unknown key {k!r}")
    coeffs = CoefficientSet(rho=rho, **polys)

    t = sect("time")
    time = TimeConfig(
        dt=(float(t["dt"]) if "dt" in t else None),
        cfl_safety=float(t.pop("cfl_safety", 0.5)),
        t_final=float(t.pop("t_final", 1.0)),
        scheme=str(t.pop("scheme", "rk4")),
        diag_every=int(t.pop("diag_every", 10)))
    t.pop("dt", None)
    for k in t:
        violations.append(f"time: unknown key {k!r}")

    i = sect("initial")
    initial = InitialConfig(kind=str(i.pop("kind", "eq_perturb")),
                            amplitude=float(i.pop("amplitude", 0.01)),
                            seed=int(i.pop("seed", 0)))
    for k in i:
        violations.append(f"initial: unknown key {k!r}")

    o = sect("outputs")
    outputs = OutputConfig(dir=str(o.pop("dir", "out")),
                           snapshots=bool(o.pop("snapshots", False)),
                           snapshot_every=int(o.pop("snapshot_every", 0)))
    for k in o:
        violations.append(f"outputs: unknown key {k!r}")

    f = sect("flags")
    flags = Flags(renormalize_d=bool(f.pop("renormalize_d", False)),
                  isothermal=bool(f.pop("isothermal", False)))
    for k in f:
        violations.append(f"flags: unknown key {k!r}")

    v = sect("validation")
    theta_box = tuple(float(x) for x in v.pop("theta_box", (0.5, 2.0)))
    tau_box = tuple(float(x) for x in v.pop("tau_box", (0.0, 4.0)))
    for k in v:
        violations.append(f"validation: unknown key {k!r}")

    for k in raw:
        if k not in ("grid", "model", "coefficients", "rho", "time", "initial",
                     "outputs", "flags", "validation"):
            violations.append(f"unknown top-level key {k!r}")

    cfg = RunConfig(grid=grid, model=model, coeffs=coeffs, time=time,
                    initial=initial, outputs=outputs, flags=flags,
                    theta_box=theta_box, tau_box=tau_box)
    violations.extend(validate(cfg))
    if violations:
        raise ConfigError(violations)
    return cfg


def validate(cfg: RunConfig) -> list:
    """All violated constraints, empty when the config is runnable."""
    out = []
    if cfg.coeffs.rho <= 0:
        out.append("rho must be > 0")
    if cfg.model.c_v <= 0:
        out.append("model.c_v must be > 0 (kappa = c_v > 0)")
    if cfg.model.theta_ref <= 0:
        out.append("model.theta_ref must be > 0")
    if not (0 < cfg.theta_box[0] < cfg.theta_box[1]):
        out.append("validation.theta_box must be 0 < lo < hi")
    if not (0 <= cfg.tau_box[0] < cfg.tau_box[1]):
        out.append("validation.tau_box must be 0 <= lo < hi")
    if not out:
        report = validate_condition_P(cfg.coeffs, cfg.model,
                                      cfg.theta_box, cfg.tau_box)
        for name, margin in report.violations():
            rel = ">" if report.strict[name] else ">="
            out.append(f"condition (P) violated: {name} {rel} 0 fails on the "
                       f"(theta, tau) box (margin {margin:.3e})")
    if cfg.time.t_final <= 0:
        out.append("time.t_final must be > 0")
    if cfg.time.scheme not in ("rk4", "imex"):
        out.append(f"time.scheme must be rk4 or imex, got {cfg.time.scheme!r}")
    if cfg.time.diag_every < 1:
        out.append("time.diag_every must be >= 1")
    if not (0 < cfg.time.cfl_safety <= 1):
        out.append("time.cfl_safety must lie in (0, 1]")
    if cfg.initial.kind not in ("eq_perturb", "taylor_green_director", "random_smooth"):
        out.append(f"initial.kind unknown: {cfg.initial.kind!r}")
    if cfg.initial.amplitude < 0:
        out.append("initial.amplitude must be >= 0")
    if cfg.time.dt is not None:
        if cfg.time.dt <= 0:
            out.append("time.dt must be > 0")
        elif cfg.time.scheme == "rk4" and not out:
            limit = cfg.cfl_limit()
            if cfg.time.dt > limit * (1 + 1e-12):
                out.append(f"time.dt={cfg.time.dt:g} exceeds the CFL limit "
                           f"{limit:.6g} for rk4")
    return out


def parse_and_validate(path) -> RunConfig:
    with open(path, "rb") as fh:
        try:
            raw = tomli.load(fh)
        except tomli.TOMLDecodeError as exc:
            raise ConfigError([f"TOML parse error: {exc}"]) from exc
    return from_dict(raw)


# ---------------------------------------------------------------------------
# serialization (minimal TOML emitter for the schema above)
# ---------------------------------------------------------------------------

def _toml_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        x = float(v)
        if math.isinf(x) or math.isnan(x):
            raise ValueError("non-finite value in config")
        return repr(x)
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise TypeError(f"cannot serialize {type(v)}")


def serialize(cfg: RunConfig) -> str:
    d = cfg.canonical_dict()
    lines = [f"rho = {_toml_value(d['rho'])}", ""]
    for table in ("grid", "model", "coefficients", "time", "initial",
                  "outputs", "flags", "validation"):
        lines.append(f"[{table}]")
        for k, v in d[table].items():
            if v is None:
                continue
            lines.append(f"{k} = {_toml_value(v)}")
        lines.append("")
    return "\n".join(lines)
