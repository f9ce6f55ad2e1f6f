"""Experiment configuration files (JSON, schema-validated)."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path
from typing import Mapping

import jsonschema

from .horizon import Scenario
from .lti import LtiSystem
from .mvn import IntegrationConfig
from .quantization import RectQuantizer
from .signals import InputSignal
from .solver import SolverConfig


class ConfigError(ValueError):
    """Invalid or unreadable experiment configuration."""


def _schema() -> dict:
    return json.loads(resources.files("privmap").joinpath("data/config.schema.json").read_text())


def _read_json(path: Path):
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc


def _parse_epsilon(value) -> float:
    return math.inf if isinstance(value, str) else float(value)


def _dump_epsilon(value: float):
    if math.isinf(value):
        return "inf"
    return int(value) if float(value).is_integer() else value


def epsilon_tag(value: float) -> str:
    """Short file-name token for a budget, e.g. ``inf`` or ``7``."""
    return "inf" if math.isinf(value) else f"{value:g}"


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    name: str
    system: LtiSystem
    sensor: RectQuantizer
    private: RectQuantizer
    n_noise: int
    K: int
    epsilons: tuple
    k_first: int
    k_last: int
    inputs: InputSignal
    sim_seed: int = 0
    integration: IntegrationConfig = IntegrationConfig()
    solver: SolverConfig = SolverConfig()
    k_max: int | None = None
    output_dir: str | None = None
    system_path: str | None = None
    base_dir: Path = Path(".")

    @property
    def k_range(self) -> range:
        return range(self.k_first, self.k_last + 1)

    def scenario(self) -> Scenario:
        return Scenario(self.system, self.sensor, self.private, self.n_noise, self.K, self.inputs)

    @classmethod
    def from_dict(cls, data: Mapping, base_dir=".") -> "ExperimentConfig":
        """Validate against the shipped schema and build every component.

        A string ``system`` is a path, relative to ``base_dir``, to a JSON
        file holding either the system object or ``{"system": {...}}``.
        """
        base_dir = Path(base_dir)
        errors = sorted(jsonschema.Draft202012Validator(_schema()).iter_errors(data), key=lambda e: list(e.path))
        if errors:
            err = errors[0]
            where = "/".join(str(p) for p in err.absolute_path) or "<root>"
            raise ConfigError(f"config field {where}: {err.message}")

        system_path = None
        system_data = data["system"]
        if isinstance(system_data, str):
            system_path = system_data
            full = base_dir / system_path
            if not full.exists():
                raise ConfigError(f"system file {full} does not exist")
            loaded = _read_json(full)
            system_data = loaded.get("system", loaded) if isinstance(loaded, dict) else loaded
            schema = _schema()
            sub_schema = {"$defs": schema["$defs"], "$ref": "#/$defs/system"}
            sub_errors = list(jsonschema.Draft202012Validator(sub_schema).iter_errors(system_data))
            if sub_errors:
                raise ConfigError(f"system file {full}: {sub_errors[0].message}")

        k_first, k_last = data["k_range"]
        if k_last < k_first:
            raise ConfigError(f"k_range {data['k_range']} is empty")
        seeds = data.get("seeds", {})
        try:
            system = LtiSystem.from_dict(system_data)
            integ = dict(data.get("integration", {}))
            integ["seed"] = int(seeds.get("integration", 0))
            cfg = cls(
                name=data.get("name", "experiment"),
                system=system,
                sensor=RectQuantizer.from_dict(data["sensor_quantizer"]),
                private=RectQuantizer.from_dict(data["private_quantizer"]),
                n_noise=int(data["n_noise"]),
                K=int(data["K"]),
                epsilons=tuple(_parse_epsilon(e) for e in data["epsilons"]),
                k_first=int(k_first),
                k_last=int(k_last),
                inputs=InputSignal.from_dict(data.get("input", {"kind": "zero"}), system.n_u),
                sim_seed=int(seeds.get("simulation", 0)),
                integration=IntegrationConfig(**integ),
                solver=SolverConfig(**data.get("solver", {})),
                k_max=data.get("simulation", {}).get("k_max"),
                output_dir=data.get("output_dir"),
                system_path=system_path,
                base_dir=base_dir,
            )
            cfg.scenario()
        except ConfigError:
            raise
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from exc
        return cfg

    def to_dict(self) -> dict:
        integ = self.integration.to_dict()
        seed = integ.pop("seed")
        solver = self.solver.to_dict()
        solver.pop("line_tol")
        out = {
            "name": self.name,
            "system": self.system_path if self.system_path is not None else self.system.to_dict(),
            "sensor_quantizer": self.sensor.to_dict(),
            "private_quantizer": self.private.to_dict(),
            "n_noise": self.n_noise,
            "K": self.K,
            "epsilons": [_dump_epsilon(e) for e in self.epsilons],
            "k_range": [self.k_first, self.k_last],
            "input": self.inputs.to_dict(),
            "seeds": {"simulation": self.sim_seed, "integration": seed},
            "integration": integ,
            "solver": solver,
        }
        if self.k_max is not None:
            out["simulation"] = {"k_max": self.k_max}
        if self.output_dir is not None:
            out["output_dir"] = self.output_dir
        return out

    def __eq__(self, other):
        return isinstance(other, ExperimentConfig) and self.to_dict() == other.to_dict()

    def with_overrides(self, seed=None, epsilons=None) -> "ExperimentConfig":
        changes: dict = {}
        if seed is not None:
            changes["sim_seed"] = int(seed)
        if epsilons is not None:
            if not epsilons:
                raise ConfigError("epsilon list is empty")
            if any(math.isnan(e) or e < 0 for e in epsilons):
                raise ConfigError("budgets must be nonnegative")
            changes["epsilons"] = tuple(epsilons)
        return replace(self, **changes)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    data = _read_json(path)
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return ExperimentConfig.from_dict(data, base_dir=path.parent)


def builtin_config(name: str = "reactor") -> ExperimentConfig:
    """One of the configurations shipped with the package."""
    res = resources.files("privmap").joinpath(f"data/{name}.json")
    if not res.is_file():
        raise ConfigError(f"no built-in configuration named {name!r}")
    return ExperimentConfig.from_dict(json.loads(res.read_text()))


def parse_epsilon_list(text: str) -> list[float]:
    """Parse ``"inf,7,2"`` style budget lists."""
    out = []
    for item in text.split(","):
        item = item.strip().lower()
        if not item:
            continue
        try:
            value = math.inf if item in ("inf", "infinity") else float(item)
        except ValueError as exc:
            raise ConfigError(f"cannot parse budget {item!r}") from exc
        out.append(value)
    if not out:
        raise ConfigError("epsilon list is empty")
    return out
