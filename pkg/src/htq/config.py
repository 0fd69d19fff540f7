"""Experiment configuration: YAML documents checked against a versioned schema."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import jsonschema
import numpy as np
import yaml

from . import analysis, capacity, systems
from .model import ConfigurationError
from .policies import ScheduleSet
from .simulate import SimConfig
from .stochastic import FAMILIES, ChannelDist, FiniteJointDist, build_family, moments

CONFIG_VERSION = 1
SEED_ENV = "HTQ_SEED"

_vector = {"type": "array", "items": {"type": "number"}, "minItems": 1}
_int_vector = {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1}
_family = {
    "type": "object",
    "required": ["family"],
    "additionalProperties": False,
    "properties": {
        "family": {"enum": list(FAMILIES)},
        "params": {"type": "object"},
        "mean": _vector,
        "bound": {"type": "integer", "minimum": 0},
    },
}

SCHEMA: dict[str, Any] = {
    "type": "object",
    "required": ["config_version", "name", "system", "epsilons"],
    "additionalProperties": False,
    "properties": {
        "config_version": {"const": CONFIG_VERSION},
        "name": {"type": "string", "pattern": "^[A-Za-z0-9_.-]+$"},
        "description": {"type": "string"},
        "system": {
            "type": "object",
            "required": ["kind", "arrivals"],
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": list(systems.KINDS)},
                "policy": {"enum": ["jsq", "po2", "random-uniform", "maxweight", "switch-maxweight"]},
                "arrivals": _family,
                "services": _family,
                "schedules": {
                    "type": "object",
                    "minProperties": 1,
                    "additionalProperties": {"type": "array", "items": _int_vector, "minItems": 1},
                },
                "complete_schedules": {"type": "boolean"},
                "channels": {"type": "object", "minProperties": 1, "additionalProperties": {"type": "number", "minimum": 0}},
                "r": _vector,
                "N": {"type": "integer", "minimum": 1},
                "q0": _int_vector,
            },
        },
        "epsilons": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 1},
        "simulation": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "measure_slots": {"type": "integer", "minimum": 1},
                "measure_scale": {"type": "number", "exclusiveMinimum": 0},
                "warmup_slots": {"type": "integer", "minimum": 0},
                "batches": {"type": "integer", "minimum": 10},
                "seed": {"type": "integer", "minimum": 0},
                "replications": {"type": "integer", "minimum": 1},
                "theta_grid": _vector,
                "thin": {"type": "integer", "minimum": 1},
            },
        },
        "prediction": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"limit_mean": {"type": "number", "minimum": 0}},
        },
        "oracle": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "enabled": {"type": "boolean"},
                "q_cap": {"type": "integer", "minimum": 1},
                "boundary_threshold": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "thresholds": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "final_gap": {"type": "number", "exclusiveMinimum": 0},
                "ks": {"type": "number", "exclusiveMinimum": 0},
                "ssc_ratio": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"dir": {"type": "string"}},
        },
    },
}

DEFAULT_SIM = {"batches": 20, "seed": 0, "replications": 1, "theta_grid": [-1.0, 0.0, 1.0], "measure_scale": 2e4}
DEFAULT_THRESHOLDS = {"final_gap": 0.2, "ks": 0.05, "ssc_ratio": 0.5}


def schema_errors(doc: Any) -> list[str]:
    validator = jsonschema.Draft7Validator(SCHEMA)
    out = []
    for err in sorted(validator.iter_errors(doc), key=lambda e: list(map(str, e.absolute_path))):
        path = "/".join(str(p) for p in err.absolute_path) or "<root>"
        out.append(f"{path}: {err.message}")
    return out


@dataclass
class ExperimentConfig:
    name: str
    system: dict
    epsilons: list
    simulation: dict = field(default_factory=dict)
    oracle: dict = field(default_factory=dict)
    thresholds: dict = field(default_factory=dict)
    prediction_override: Optional[float] = None
    output_dir: str = "results"
    source: Optional[str] = None

    @property
    def kind(self) -> str:
        return self.system["kind"]

    @property
    def policy(self) -> str:
        default = {"single": "jsq", "lb": "jsq", "gs": "maxweight", "switch": "switch-maxweight"}
        return self.system.get("policy", default[self.kind])

    @property
    def replications(self) -> int:
        return int(self.simulation["replications"])

    @property
    def theta_grid(self) -> list:
        return [float(t) for t in self.simulation["theta_grid"]]

    def seed(self, cli_seed: Optional[int] = None) -> int:
        """Config seed, overridden by the command line, overridden by HTQ_SEED."""
        seed = int(self.simulation["seed"])
        if cli_seed is not None:
            seed = int(cli_seed)
        env = os.environ.get(SEED_ENV)
        if env not in (None, ""):
            try:
                seed = int(env)
            except ValueError:
                raise ConfigurationError(f"{SEED_ENV}={env!r} is not an integer") from None
        if seed < 0:
            raise ConfigurationError(f"seed must be nonnegative, got {seed}")
        return seed

    def measure_slots(self, epsilon: float) -> int:
        B = int(self.simulation["batches"])
        if "measure_slots" in self.simulation:
            return int(self.simulation["measure_slots"])
        raw = float(self.simulation["measure_scale"]) / epsilon**2
        return int(math.ceil(raw / B)) * B

    def sim_config(self, epsilon: float, seed: int, replication: int = 0) -> SimConfig:
        sim = self.simulation
        return SimConfig(
            measure_slots=self.measure_slots(epsilon),
            warmup_slots=sim.get("warmup_slots"),
            batches=int(sim["batches"]),
            seed=seed,
            theta_grid=tuple(self.theta_grid),
            replication_id=replication,
            thin=sim.get("thin"),
        )

    # ---------------------------------------------------------- systems

    def _services(self) -> FiniteJointDist:
        svc = self.system["services"]
        if svc["family"] == "pmf":
            params = svc.get("params", {})
            if "per_epsilon" in params:
                raise ConfigurationError("system/services: a service pmf cannot depend on epsilon")
            pairs = list(zip([tuple(np.atleast_1d(v)) for v in params["support"]], params["probs"]))
            return FiniteJointDist.from_pairs(pairs, bound=svc.get("bound"))
        if "mean" not in svc:
            raise ConfigurationError("system/services: 'mean' is required for parametric families")
        return build_family(svc["family"], svc.get("params"), svc["mean"], bound=svc.get("bound"))

    def _schedules(self) -> ScheduleSet:
        raw = self.system["schedules"]
        if self.system.get("complete_schedules", False):
            return ScheduleSet.from_maximal(raw)
        return ScheduleSet(raw)

    def _channels(self) -> ChannelDist:
        ch = self.system["channels"]
        return ChannelDist(tuple(ch), np.array([float(v) for v in ch.values()]))

    def build_system(self, epsilon: float) -> systems.SystemModel:
        s = self.system
        arr = s["arrivals"]
        kw = {"name": self.name}
        if "q0" in s:
            kw["q0"] = np.asarray(s["q0"], dtype=np.int64)
        if self.kind == "single":
            return systems.single_server(self._services(), arr["family"], arr.get("params"), epsilon, **kw)
        if self.kind == "lb":
            return systems.load_balancing(self._services(), arr["family"], arr.get("params"), epsilon,
                                          policy=self.policy, **kw)
        if self.kind == "gs":
            return systems.generalized_switch(self._schedules(), self._channels(), s["r"],
                                              arr["family"], arr.get("params"), epsilon, **kw)
        return systems.input_queued_switch(int(s["N"]), arr["family"], arr.get("params"), epsilon, **kw)

    # ---------------------------------------------------------- prediction

    def prediction(self) -> analysis.HTPrediction:
        """Limiting exponential mean, using the arrival law at epsilon -> 0."""
        s = self.system
        arr = s["arrivals"]
        if self.kind in ("single", "lb"):
            srv = self._services()
            mom = moments(srv)
            limit = [float(mom.mean.sum())]
        elif self.kind == "gs":
            facets = capacity.capacity_region(self._schedules(), self._channels())
            rep = capacity.check_crp(s["r"], facets)
            if not rep.holds:
                raise ConfigurationError(f"CRP fails at r={s['r']}")
            facet = facets[rep.facet_index]
            limit = list(s["r"])
        else:
            N = int(s["N"])
            limit = [1.0 / N] * N
        if self.prediction_override is not None:
            mean = float(self.prediction_override)
            direction = self.build_system(self.epsilons[0]).direction
            return analysis.HTPrediction(mean, direction, "config")
        if arr["family"] == "pmf":
            raise ConfigurationError("prediction/limit_mean is required when arrivals are an explicit pmf")
        a_lim = moments(build_family(arr["family"], arr.get("params"), limit, epsilon=0.0))
        if self.kind == "single":
            return analysis.predict_single(float(a_lim.cov[0, 0]), float(mom.cov[0, 0]))
        if self.kind == "lb":
            return analysis.predict_lb(srv.dim, float(a_lim.cov[0, 0]), mom.cov)
        if self.kind == "gs":
            bd = capacity.b_distribution(facet.c, self._schedules(), self._channels())
            return analysis.predict_gs(facet.c, a_lim.cov, bd.variance)
        N = int(s["N"])
        cov = np.zeros((N * N, N * N))
        cov[:N, :N] = a_lim.cov
        return analysis.predict_switch(N, cov)

    def check_semantics(self) -> list[str]:
        """Checks the schema cannot express: admissible epsilon, pmf sums, buildable systems."""
        errs = []
        for i, eps in enumerate(self.epsilons):
            try:
                self.build_system(eps)
            except ConfigurationError as exc:
                errs.append(f"epsilons/{i}: {exc}")
        if len(set(self.epsilons)) != len(self.epsilons):
            errs.append("epsilons: duplicate values")
        return errs


def from_dict(doc: dict, source: Optional[str] = None, semantic: bool = True) -> ExperimentConfig:
    errs = schema_errors(doc)
    if errs:
        raise ConfigurationError("invalid config:\n  " + "\n  ".join(errs))
    sim = {**DEFAULT_SIM, **doc.get("simulation", {})}
    if "measure_slots" in doc.get("simulation", {}):
        sim.pop("measure_scale", None)
    cfg = ExperimentConfig(
        name=doc["name"],
        system=doc["system"],
        epsilons=[float(e) for e in doc["epsilons"]],
        simulation=sim,
        oracle={"enabled": False, "q_cap": 200, "boundary_threshold": 1e-8, **doc.get("oracle", {})},
        thresholds={**DEFAULT_THRESHOLDS, **doc.get("thresholds", {})},
        prediction_override=doc.get("prediction", {}).get("limit_mean"),
        output_dir=doc.get("output", {}).get("dir", "results"),
        source=source,
    )
    kind = cfg.kind
    need = {"single": ["services"], "lb": ["services"], "gs": ["schedules", "channels", "r"], "switch": ["N"]}[kind]
    missing = [f"system/{k}: required for kind {kind!r}" for k in need if k not in cfg.system]
    if missing:
        raise ConfigurationError("invalid config:\n  " + "\n  ".join(missing))
    errs = cfg.check_semantics() if semantic else []
    if errs:
        raise ConfigurationError("invalid config:\n  " + "\n  ".join(errs))
    return cfg


def load(path, semantic: bool = True) -> ExperimentConfig:
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"config {path} is not valid YAML: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigurationError(f"config {path} must be a mapping at the top level")
    return from_dict(doc, source=str(path), semantic=semantic)
