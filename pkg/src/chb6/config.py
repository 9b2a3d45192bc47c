"""Run configuration: one JSON document, validated before any solve.

Top-level sections::

    grid      {"dim", "sizes", "lengths"}                       required
    time      {"T", "n_steps"}                                  required
    physics   eta, lambda, nu, sigma, h, potential, kappa_s
    control   M, beta, kappa
    targets   {"v_Q", "phi_Q", "phi_T"}: field specs
    initial   field spec for phi0                               required
    optimize  tol_rel, max_iter, alpha0, kappa_sweep
    options   snapshot_every, seed, out, threads

Field specs form a small catalog: ``{"type": "constant", "value": c}``,
``{"type": "mode", "amplitude": a, "mode": [m1, m2], "phase": "cos"|"sin", "component": i}``,
``{"type": "random", "seed": s, "amplitude": a}`` and ``{"type": "file", "path": p}``.
An initial datum may add ``"relax": {"T": t, "n_steps": n}`` to pre-evolve it
with zero control.
"""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from chb6.model import ControlParams, PhysParams, Targets
from chb6.spectral import GridSpec, smooth_random_field
from chb6.state import Control, TimeGrid, solve_state


class ConfigError(ValueError):
    pass


SECTIONS = {"grid", "time", "physics", "control", "targets", "initial", "optimize", "options"}
REQUIRED = ("grid", "time", "initial")
OPTIONS_DEFAULTS = {"snapshot_every": 0, "seed": 0, "out": None, "threads": 1}
OPTIMIZE_DEFAULTS = {"tol_rel": 1e-4, "max_iter": 500, "alpha0": None, "kappa_sweep": None}
FIELD_KEYS = {"type", "value", "amplitude", "mode", "phase", "component", "seed", "path", "relax", "decay"}


def _require(d: dict, key: str, where: str):
    if key not in d:
        raise ConfigError(f"missing required key '{where}.{key}'" if where else f"missing required key '{key}'")
    return d[key]


def _check_keys(d: dict, allowed: set[str], where: str) -> None:
    extra = set(d) - allowed
    if extra:
        raise ConfigError(f"unknown keys in {where}: {sorted(extra)}")


@dataclass
class RunConfig:
    raw: dict[str, Any]
    grid: GridSpec
    time: TimeGrid
    phys: PhysParams
    ctrl: ControlParams | None
    options: dict[str, Any] = field(default_factory=dict)
    optimize: dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> RunConfig:
        raw = copy.deepcopy(raw)
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        _check_keys(raw, SECTIONS, "config")
        for key in REQUIRED:
            _require(raw, key, "")
        g = raw["grid"]
        _check_keys(g, {"dim", "sizes", "lengths"}, "grid")
        sizes = _require(g, "sizes", "grid")
        dim = g.get("dim", len(sizes))
        lengths = g.get("lengths", [2 * np.pi] * dim)
        if len(sizes) != dim or len(lengths) != dim:
            raise ConfigError("grid.sizes and grid.lengths must have dim entries")
        t = raw["time"]
        _check_keys(t, {"T", "n_steps"}, "time")
        try:
            grid = GridSpec(tuple(sizes), tuple(lengths))
            time = TimeGrid(float(_require(t, "T", "time")), int(_require(t, "n_steps", "time")))
            phys = PhysParams.from_dict(raw.get("physics", {}))
        except ConfigError:
            raise
        except (ValueError, TypeError, KeyError) as exc:
            raise ConfigError(str(exc)) from exc
        if grid.dim < 2:
            raise ConfigError("the coupled solver needs dim >= 2")
        ctrl = None
        if "control" in raw:
            c = raw["control"]
            _check_keys(c, {"M", "beta", "kappa"}, "control")
            try:
                ctrl = ControlParams(float(c.get("M", 1.0)), tuple(c.get("beta", (1.0, 0.0, 0.0, 1.0))), float(c.get("kappa", 0.0)))
            except (ValueError, TypeError) as exc:
                raise ConfigError(str(exc)) from exc
        options = dict(OPTIONS_DEFAULTS)
        _check_keys(raw.get("options", {}), set(OPTIONS_DEFAULTS), "options")
        options.update(raw.get("options", {}))
        opt = dict(OPTIMIZE_DEFAULTS)
        _check_keys(raw.get("optimize", {}), set(OPTIMIZE_DEFAULTS), "optimize")
        opt.update(raw.get("optimize", {}))
        _check_field_spec(raw["initial"], "initial")
        for name, spec in raw.get("targets", {}).items():
            if name not in ("v_Q", "phi_Q", "phi_T"):
                raise ConfigError(f"unknown target '{name}'")
            _check_field_spec(spec, f"targets.{name}")
        return cls(raw, grid, time, phys, ctrl, options, opt)

    @classmethod
    def load(cls, path: str | Path, overrides: dict[str, Any] | None = None) -> RunConfig:
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if overrides:
            raw.setdefault("options", {}).update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_dict(raw)

    @property
    def seed(self) -> int:
        return int(self.options.get("seed") or 0)

    def require_control(self) -> ControlParams:
        if self.ctrl is None:
            raise ConfigError("missing required key 'control'")
        return self.ctrl

    def initial_field(self, base_dir: Path | None = None) -> np.ndarray:
        spec = self.raw["initial"]
        phi0 = build_field(spec, self.grid, None, self.seed, base_dir)
        relax = spec.get("relax")
        if relax:
            tg = TimeGrid(float(relax["T"]), int(relax["n_steps"]))
            phi0 = solve_state(self.grid, tg, self.phys, Control.zeros(self.grid, tg), phi0).phi[-1]
        return phi0

    def targets(self, base_dir: Path | None = None) -> Targets:
        specs = self.raw.get("targets", {})
        zero = {"type": "constant", "value": 0.0}
        vq = build_field(specs.get("v_Q", zero), self.grid, self.grid.dim, self.seed, base_dir)
        pq = build_field(specs.get("phi_Q", zero), self.grid, None, self.seed, base_dir)
        pt = build_field(specs.get("phi_T", zero), self.grid, None, self.seed, base_dir)
        return Targets.steady(self.time.n_steps, vq, pq, pt)


def _check_field_spec(spec: Any, where: str) -> None:
    if not isinstance(spec, dict):
        raise ConfigError(f"{where} must be an object")
    _check_keys(spec, FIELD_KEYS, where)
    kind = _require(spec, "type", where)
    if kind not in ("constant", "mode", "random", "file"):
        raise ConfigError(f"{where}.type must be constant|mode|random|file, got {kind!r}")
    if kind == "file":
        _require(spec, "path", where)
    if kind == "mode":
        _require(spec, "mode", where)


def build_field(spec: dict, grid: GridSpec, components: int | None, seed: int = 0, base_dir: Path | None = None) -> np.ndarray:
    """Materialize a catalog field; ``components=None`` gives a scalar."""
    shape = grid.shape if components is None else (components,) + grid.shape
    kind = spec["type"]
    if kind == "constant":
        val = np.asarray(spec.get("value", 0.0), dtype=float)
        if components is not None and val.ndim == 1:
            if val.size != components:
                raise ConfigError(f"constant vector needs {components} entries")
            return np.broadcast_to(val.reshape((components,) + (1,) * grid.dim), shape).copy()
        return np.full(shape, float(val))
    if kind == "mode":
        mode = spec["mode"]
        if len(mode) != grid.dim:
            raise ConfigError("mode needs one integer per axis")
        xs = grid.coordinates()
        arg = sum(2 * np.pi * m * x / L for m, x, L in zip(mode, xs, grid.lengths))
        wave = np.sin(arg) if spec.get("phase", "cos") == "sin" else np.cos(arg)
        wave = float(spec.get("amplitude", 1.0)) * np.broadcast_to(wave, grid.shape)
        if components is None:
            return np.array(wave)
        out = np.zeros(shape)
        out[int(spec.get("component", 0))] = wave
        return out
    if kind == "random":
        rng = np.random.default_rng(int(spec.get("seed", seed)))
        return smooth_random_field(
            grid, rng, components=components, amplitude=float(spec.get("amplitude", 1.0)), decay=float(spec.get("decay", 4.0))
        )
    if kind == "file":
        from chb6.io import read_field

        path = Path(spec["path"])
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        fgrid, values = read_field(path)
        if fgrid.sizes != grid.sizes:
            raise ConfigError(f"field file {path} has grid {fgrid.sizes}, expected {grid.sizes}")
        if values.shape != shape:
            raise ConfigError(f"field file {path} has shape {values.shape}, expected {shape}")
        return values
    raise ConfigError(f"unknown field type {kind!r}")
