"""Declarative run configuration: TOML in, canonical JSON manifest out.

A config resolves to a plain dict with all defaults filled; its canonical
serialization (sorted keys, no whitespace) is hashed so that semantically
identical configs produce identical manifests and any change that could alter
results changes the hash.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Optional

import numpy as np

try:
    import tomllib  # Python >= 3.11
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

from . import coefficients as coeff_mod
from .action import MinimizeOptions, TargetSpec
from .errors import ConfigError
from .grid_kernel import EllipticCoefficients, Grid, KernelOperator, assemble_operator, build_grid
from .stochastics import Control, control_from_csv, make_time_grid

_PRESET_NU = {"burgers": 2.0, "reaction_diffusion": 1.0, "linear_gaussian": 1.0}


def _get(d: dict, section: str, key: str, default=None, required=False):
    sec = d.get(section, {})
    if key in sec:
        return sec[key]
    if required:
        raise ConfigError(f"{section}.{key}", "required field is missing")
    return default


@dataclass
class RunConfig:
    """Validated, fully resolved run configuration."""

    resolved: dict

    # -- construction ------------------------------------------------------

    @staticmethod
    def from_dict(raw: dict) -> "RunConfig":
        r: dict = {}

        # grid
        extents = _get(raw, "grid", "extents", default=[[0.0, 1.0]])
        resolution = _get(raw, "grid", "resolution", default=64)
        try:
            ext = np.asarray(extents, dtype=float)
        except (TypeError, ValueError) as exc:
            raise ConfigError("grid.extents", f"not numeric: {exc}") from None
        if ext.ndim == 1:
            ext = ext[None, :]
        d = int(ext.shape[0])
        r["grid"] = {"extents": ext.tolist(), "resolution": resolution}

        # operator
        b = _get(raw, "operator", "b", default=1.0)
        kappa = _get(raw, "operator", "kappa", default=1.0)
        if not np.isscalar(b) and np.asarray(b, dtype=float).shape != (d, d):
            raise ConfigError("operator.b", f"must be scalar or {d}x{d}")
        if kappa <= 0:
            raise ConfigError("operator.kappa", f"must be positive, got {kappa}")
        r["operator"] = {"b": b if np.isscalar(b) else np.asarray(b).tolist(),
                         "kappa": float(kappa)}

        # coefficients
        csec = dict(raw.get("coefficients", {}))
        preset = csec.get("preset")
        k = int(csec.get("k", 1))
        if k < 1:
            raise ConfigError("coefficients.k", f"noise dimension must be >= 1, got {k}")
        if preset is not None and preset not in _PRESET_NU:
            raise ConfigError("coefficients.preset",
                              f"unknown preset {preset!r}; choose from {sorted(_PRESET_NU)}")
        nu: Optional[float] = None
        if preset is not None:
            nu = _PRESET_NU[preset]
        elif "nu" in csec:
            nu = float(csec["nu"])
        r["coefficients"] = {key: csec[key] for key in sorted(csec)}
        r["coefficients"]["k"] = k

        # run parameters
        T = float(_get(raw, "run", "T", default=0.25))
        dt = float(_get(raw, "run", "dt", default=T / 64))
        if T <= 0:
            raise ConfigError("run.T", f"must be positive, got {T}")
        if dt <= 0 or dt > T:
            raise ConfigError("run.dt", f"must satisfy 0 < dt <= T, got {dt}")
        eps = _get(raw, "run", "eps", default=0.1)
        if eps < 0:
            raise ConfigError("run.eps", f"must be >= 0, got {eps}")
        eps_grid = _get(raw, "run", "eps_grid", default=None)
        rho = _get(raw, "run", "rho", default=None)
        if rho is None:
            if nu is None:
                raise ConfigError(
                    "rho", "missing and no default derivable: declare run.rho or "
                           "coefficients.nu (rho defaults to max(2 nu, d+1) + 1)")
            rho = float(max(2 * nu, d + 1) + 1)
        rho = float(rho)
        if rho <= d:
            raise ConfigError("run.rho", f"must exceed the dimension d={d}, got {rho}")
        r["run"] = {
            "T": T, "dt": dt, "eps": float(eps),
            "eps_grid": None if eps_grid is None else [float(e) for e in eps_grid],
            "rho": rho,
            "seed": int(_get(raw, "run", "seed", default=0)),
            "n_paths": int(_get(raw, "run", "n_paths", default=1000)),
        }

        # optional sections copied with defaults
        r["initial"] = {"kind": "sine", "amplitude": 1.0, "mode": 1,
                        **raw.get("initial", {})}
        if "event" in raw:
            r["event"] = dict(raw["event"])
        r["estimate"] = {"method": "plain", "bias": "none", **raw.get("estimate", {})}
        r["optimizer"] = dict(raw.get("optimizer", {}))
        r["converge"] = {"xi_perturbation": 0.05, "phi_value": [0.5],
                         "gamma": "identity", **raw.get("converge", {})}
        r["tightness"] = {"C_grid": [0.5, 1.0, 2.0, 4.0], **raw.get("tightness", {})}
        r["control"] = dict(raw.get("control", {}))
        r["output"] = {"dir": "out", **raw.get("output", {})}
        cfg = RunConfig(resolved=r)
        cfg.time_grid()   # validates T/dt combination
        return cfg

    @staticmethod
    def load(path, overrides: Optional[dict] = None,
             seed: Optional[int] = None, out: Optional[str] = None) -> "RunConfig":
        try:
            with open(path, "rb") as fh:
                raw = tomllib.load(fh)
        except FileNotFoundError:
            raise ConfigError("config", f"file not found: {path}") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError("config", f"TOML parse error: {exc}") from None
        if overrides:
            for dotted, value in overrides.items():
                _apply_override(raw, dotted, value)
        if seed is not None:
            raw.setdefault("run", {})["seed"] = int(seed)
        if out is not None:
            raw.setdefault("output", {})["dir"] = str(out)
        return RunConfig.from_dict(raw)

    # -- derived objects ---------------------------------------------------

    def grid(self) -> Grid:
        g = self.resolved["grid"]
        return build_grid(g["extents"], g["resolution"])

    def operator(self) -> KernelOperator:
        o = self.resolved["operator"]
        b = o["b"]
        return assemble_operator(self.grid(),
                                 EllipticCoefficients(b if np.isscalar(b) else np.asarray(b),
                                                      o["kappa"]))

    def coefficients(self) -> coeff_mod.CoefficientSet:
        csec = self.resolved["coefficients"]
        d = len(self.resolved["grid"]["extents"])
        k = csec["k"]
        if "preset" in csec:
            kwargs = {key: csec[key] for key in
                      ("sigma_scale", "sigma_flatten", "rd_a", "rd_b") if key in csec}
            c = coeff_mod.make_preset(csec["preset"], d=d, k=k, **kwargs)
        else:
            if "nu" not in csec:
                raise ConfigError("coefficients.nu",
                                  "custom coefficient tables must declare nu")
            c = coeff_mod.make_custom(
                d, k, nu=csec["nu"], K=csec.get("K", 1.0), L=csec.get("L", 1.0),
                f_poly=csec.get("f_poly"), g2_polys=csec.get("g2_polys"),
                sigma_polys=csec.get("sigma_polys"))
        level = csec.get("truncation_level")
        if level is not None:
            c = coeff_mod.truncate_coefficients(c, float(level))
        return c

    def time_grid(self) -> np.ndarray:
        run = self.resolved["run"]
        n_steps = int(round(run["T"] / run["dt"]))
        if n_steps < 1 or abs(n_steps * run["dt"] - run["T"]) > 1e-9 * run["T"]:
            raise ConfigError("run.dt", f"dt={run['dt']} does not evenly divide T={run['T']}")
        return make_time_grid(run["T"], n_steps)

    def initial_field(self, grid: Grid) -> np.ndarray:
        spec = self.resolved["initial"]
        kind = spec.get("kind", "sine")
        amp = float(spec.get("amplitude", 1.0))
        coords = grid.interior_coords()
        if kind == "zero":
            return np.zeros(grid.n_interior)
        if kind == "nodes":
            vals = np.asarray(spec.get("values", []), dtype=float)
            if vals.shape != (grid.n_interior,):
                raise ConfigError("initial.values",
                                  f"needs {grid.n_interior} node values, got {vals.shape}")
            return vals
        hats = np.ones(grid.n_interior)
        for ax in range(grid.dim):
            a, b = grid.extents[ax]
            xhat = (coords[:, ax] - a) / (b - a)
            if kind == "sine":
                hats *= np.sin(np.pi * int(spec.get("mode", 1)) * xhat)
            elif kind == "bump":
                hats *= 4.0 * xhat * (1.0 - xhat)
            else:
                raise ConfigError("initial.kind", f"unknown kind {kind!r}")
        return amp * hats

    def target(self) -> TargetSpec:
        if "event" not in self.resolved:
            raise ConfigError("event", "this subcommand needs an [event] section")
        ev = self.resolved["event"]
        kind = ev.get("kind")
        if kind == "point_exceedance":
            return TargetSpec.point_exceedance(ev.get("x0", [0.5]), ev["level"])
        if kind == "lp_exceedance":
            return TargetSpec.lp_exceedance(ev["level"], ev.get("p"))
        if kind == "tube_exit":
            return TargetSpec.tube_exit(ev["delta"])
        raise ConfigError("event.kind",
                          f"unknown kind {kind!r}; choose point_exceedance, "
                          f"lp_exceedance, or tube_exit")

    def minimize_options(self) -> MinimizeOptions:
        o = self.resolved["optimizer"]
        opts = MinimizeOptions()
        for key in ("mu0", "mu_factor", "rounds", "max_rounds", "max_inner",
                    "gtol", "feas_tol", "n_starts", "start_scale", "seed"):
            if key in o:
                setattr(opts, key, type(getattr(opts, key))(o[key]))
        opts.trace = bool(o.get("trace", True))
        return opts

    def control(self, time_grid: np.ndarray, k: int) -> Control:
        spec = self.resolved["control"]
        if "csv" in spec:
            return control_from_csv(spec["csv"])
        if "value" in spec:
            return Control.constant(spec["value"], time_grid)
        return Control.zero(time_grid, k)

    # -- manifest ----------------------------------------------------------

    def canonical_json(self) -> str:
        semantic = {k: v for k, v in self.resolved.items() if k != "output"}
        return json.dumps(semantic, sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()


def _apply_override(raw: dict, dotted: str, value: str) -> None:
    """Set raw[a][b] = parsed(value) for an override 'a.b=value'."""
    keys = dotted.split(".")
    if not all(keys):
        raise ConfigError("override", f"malformed key {dotted!r}")
    node = raw
    for key in keys[:-1]:
        node = node.setdefault(key, {})
        if not isinstance(node, dict):
            raise ConfigError("override", f"{dotted!r} crosses a non-table value")
    node[keys[-1]] = _parse_literal(value)


def _parse_literal(text: str):
    s = text.strip()
    lowered = s.lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    for cast in (int, float):
        try:
            return cast(s)
        except ValueError:
            pass
    if s.startswith("["):
        try:
            return json.loads(s)
        except json.JSONDecodeError:
            pass
    return s


def manifest(config: RunConfig, extra: Optional[dict] = None) -> dict:
    """Canonical hash plus the resolved config echo (and any run metadata)."""
    from . import __version__

    out = {
        "config_hash": config.config_hash(),
        "config": config.resolved,
        "package_version": __version__,
    }
    if extra:
        out.update(extra)
    return out
