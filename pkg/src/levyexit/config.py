"""Experiment configuration: JSON loading, schema validation, object building.

A configuration is a JSON object validated against the bundled
``schema.json``; :func:`load_config` adds the semantic checks that a
schema cannot express (parameter regime, dimensions) and returns an
:class:`ExperimentConfig` that builds the field, domain, coupling and
Lévy model on demand.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Dict, List, Optional

import jsonschema
import numpy as np

from . import coupling as cp
from . import dynamics as dy
from . import geometry as geo
from .levy import DiscreteSpectral, LevyModel, LomaxCorrection, sphere_area
from .montecarlo import ConfigError, Scenario, SimConfig, validate_regime


def schema() -> dict:
    return json.loads(resources.files("levyexit").joinpath("schema.json").read_text())


def _key(path) -> str:
    return "/".join(str(p) for p in path) or "<root>"


class Expression:
    """Scalar function of the state from a numpy expression in x0, x1, ...

    Evaluated with no builtins; only ``np`` and the coordinates are visible.
    """

    def __init__(self, expr: str, dim: int):
        self.expr = expr
        self.dim = dim
        self._code = compile(expr, "<levelset>", "eval")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        env = {"np": np}
        env.update({f"x{i}": x[..., i] for i in range(self.dim)})
        return np.asarray(eval(self._code, {"__builtins__": {}}, env), dtype=float)

    def __getstate__(self):
        return {"expr": self.expr, "dim": self.dim}

    def __setstate__(self, state):
        self.__init__(state["expr"], state["dim"])


def build_region(spec: dict) -> geo.Region:
    kind = spec["kind"]
    if kind == "halfspace":
        return geo.HalfSpace(spec["normal"], spec.get("offset", 0.0))
    if kind == "ball":
        return geo.Ball(spec["center"], spec["radius"])
    if kind == "annulus":
        return geo.Annulus(spec["center"], spec["r_in"], spec["r_out"])
    if kind == "polygon":
        return geo.Polygon(spec["vertices"])
    if kind == "complement":
        return geo.Complement(build_region(spec["of"]))
    raise ConfigError(f"unknown region kind {kind!r}")


@dataclass
class ExperimentConfig:
    raw: dict
    source: Optional[Path] = None
    overrides: Dict[str, object] = field(default_factory=dict)

    # -- plain settings -----------------------------------------------------

    @property
    def name(self) -> str:
        return self.raw["scenario"]

    @property
    def eps(self) -> List[float]:
        return [float(e) for e in self.raw["eps"]]

    @property
    def gamma(self) -> float:
        return float(self.raw.get("gamma", 0.1))

    @property
    def rho(self) -> float:
        return float(self.raw.get("rho", 0.25))

    @property
    def mc(self) -> dict:
        out = {"base_seed": 0, "ode_step": 0.01, "small_noise": "compound+gaussian",
               "t_max": 50.0, "chunk_size": 5000}
        out.update(self.raw["mc"])
        if self.overrides.get("seed") is not None:
            out["base_seed"] = int(self.overrides["seed"])
        return out

    @property
    def n_angles(self) -> int:
        return int(self.raw.get("predictor", {}).get("n_angles", 1024))

    @property
    def assertions(self) -> dict:
        out = {"ks": False, "ks_level": 0.01, "mean_norm": None, "mean_norm_at": "all",
               "locations": False, "monotone_mean": False}
        out.update(self.raw.get("assertions", {}))
        return out

    @property
    def output_dir(self) -> Path:
        if self.overrides.get("out"):
            return Path(self.overrides["out"])
        d = self.raw.get("outputs", {}).get("directory", f"out/{self.name}")
        return Path(d)

    @property
    def formats(self) -> List[str]:
        return list(self.raw.get("outputs", {}).get("formats", ["csv", "json"]))

    # -- built objects ------------------------------------------------------

    @cached_property
    def model(self) -> LevyModel:
        s = self.raw["levy"]
        alpha, dim = float(s["alpha"]), int(s["dim"])
        spec = s.get("spectral", "isotropic")
        spectral = None if spec == "isotropic" else DiscreteSpectral(spec["directions"], spec["weights"])
        sv = LomaxCorrection(alpha) if s.get("slowly_varying", "none") == "lomax" else None
        scale = s.get("tail_scale", sphere_area(dim) / alpha)
        return LevyModel(alpha, dim, spectral, scale, sv, s.get("drift"), s.get("diffusion"))

    @cached_property
    def field(self):
        s = self.raw["field"]
        if s["kind"] == "linear":
            return dy.linear(int(s.get("dim", self.raw["levy"]["dim"])), float(s.get("rate", 1.0)))
        return dy.van_der_pol(float(s.get("mu", 1.0)))

    @cached_property
    def coupling(self) -> cp.JumpCoupling:
        s = self.raw["coupling"]
        if s["kind"] == "additive":
            return cp.additive(self.field.dim)
        if "phi" not in s:
            raise ConfigError("coupling/phi: required for ito and marcus couplings")
        kw = {"substeps": s["substeps"]} if "substeps" in s else {}
        make = cp.ito if s["kind"] == "ito" else cp.marcus
        phi = s["phi"]
        if isinstance(phi, dict):
            dg = phi["diagonal_of_state"]
            phi = cp.DiagonalOfState(dg["scale"], dg.get("offset"))
        else:
            phi = np.asarray(phi, dtype=float)
        return make(phi, **kw)

    @cached_property
    def _raw_attractor(self) -> dy.ErgodicMeasure:
        # detected without a domain, since cycle_annulus is built from it
        a = self.raw.get("attractor", {})
        seed = a.get("seed")
        if seed is None:
            seed = np.full(self.field.dim, 0.5)
        return dy.detect_attractor(self.field, None, seed, step=a.get("step", 1e-3),
                                   horizon=a.get("horizon", 50.0),
                                   n_points=a.get("n_points", 512))

    @cached_property
    def attractor(self) -> dy.ErgodicMeasure:
        """The ergodic measure P, checked to lie inside the domain."""
        P = self._raw_attractor
        if not np.all(self.domain.contains(P.points)):
            raise dy.AttractorUndetected("attractor reached from the seed is not inside D")
        return dy._with_margin(P, self.domain, 0.0)

    @cached_property
    def domain(self) -> geo.Domain:
        s = self.raw["domain"]
        k = s["kind"]
        if k == "ball":
            return geo.ball(s["center"], s["radius"])
        if k == "annulus":
            return geo.annulus(s["center"], s["r_in"], s["r_out"])
        if k == "polygon":
            return geo.polygon(s["vertices"])
        if k == "levelset":
            return geo.levelset(Expression(s["expr"], len(s["lower"])), s["level"],
                                s["lower"], s["upper"])
        # cycle_annulus: scaled copy of the detected cycle about ``center``
        P = self._raw_attractor
        if P.kind != "limit_cycle":
            raise ConfigError("domain/kind: cycle_annulus needs a limit-cycle attractor")
        c = np.asarray(s.get("center", np.zeros(2)), dtype=float)
        return geo.star_annulus(c + s["scale"] * (P.points - c), s["r_in"], c)

    @cached_property
    def targets(self) -> Dict[str, geo.Region]:
        return {k: build_region(v) for k, v in self.raw.get("targets", {}).items()}

    def start_point(self, eps: float) -> np.ndarray:
        s = self.raw.get("start", "attractor")
        if isinstance(s, str):
            return self.attractor.points[0].copy()
        return np.asarray(s, dtype=float)

    def sim_config(self, eps: float) -> SimConfig:
        m = self.mc
        return SimConfig(eps=eps, gamma=self.gamma, rho=self.rho, ode_step=m["ode_step"],
                         small_noise=m["small_noise"], t_max=m["t_max"],
                         n_paths=m["n_paths"], base_seed=m["base_seed"],
                         chunk_size=m["chunk_size"])

    def scenario(self, eps: float, rate: float) -> Scenario:
        return Scenario(self.field, self.domain, self.coupling, self.model,
                        self.start_point(eps), rate, self.targets, self.name)


def validate_raw(raw: dict) -> None:
    """Schema plus semantic validation; raises ConfigError naming the key."""
    v = jsonschema.Draft202012Validator(schema())
    err = jsonschema.exceptions.best_match(v.iter_errors(raw))
    if err is not None:
        raise ConfigError(f"{_key(err.absolute_path)}: {err.message}")
    gamma = raw.get("gamma", 0.1)
    rho = raw.get("rho", 0.25)
    for i, e in enumerate(raw["eps"]):
        try:
            validate_regime(e, gamma, rho)
        except ConfigError as exc:
            raise ConfigError(f"eps/{i}: {exc}") from None
    dim = raw["levy"]["dim"]
    fk = raw["field"]["kind"]
    fdim = 2 if fk == "van_der_pol" else raw["field"].get("dim", dim)
    ck = raw["coupling"]["kind"]
    if ck == "additive" and fdim != dim:
        raise ConfigError(f"levy/dim: additive coupling needs jump dimension {fdim}")
    if ck != "additive":
        phi = raw["coupling"].get("phi", [])
        if isinstance(phi, dict):
            dg = phi["diagonal_of_state"]
            shape = (len(dg["scale"]), len(dg["scale"]))
            if "offset" in dg and len(dg["offset"]) != shape[0]:
                raise ConfigError("coupling/phi/diagonal_of_state/offset: length must match scale")
        else:
            shape = np.asarray(phi, dtype=float).shape
        if shape != (fdim, dim):
            raise ConfigError(f"coupling/phi: shape {shape}, expected {(fdim, dim)}")
    d = raw["domain"]
    if d["kind"] == "annulus" and not 0 < d["r_in"] < d["r_out"]:
        raise ConfigError("domain/r_in: need 0 < r_in < r_out")
    if d["kind"] == "cycle_annulus" and fk != "van_der_pol":
        raise ConfigError("domain/kind: cycle_annulus needs a field with a limit cycle")
    start = raw.get("start", "attractor")
    if not isinstance(start, str) and len(start) != fdim:
        raise ConfigError(f"start: expected {fdim} coordinates")
    if d["kind"] == "levelset":
        try:
            Expression(d["expr"], len(d["lower"]))
        except SyntaxError as exc:
            raise ConfigError(f"domain/expr: {exc.msg}") from None
    spec = raw["levy"].get("spectral", "isotropic")
    if isinstance(spec, dict):
        dirs = np.asarray(spec["directions"], dtype=float)
        if dirs.ndim != 2 or dirs.shape[1] != dim or len(dirs) != len(spec["weights"]):
            raise ConfigError("levy/spectral: directions must be (k, dim) with k weights")


def load_config(path, **overrides) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    validate_raw(raw)
    return ExperimentConfig(raw, path, overrides)
