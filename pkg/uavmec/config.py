import argparse
import copy
import dataclasses
import hashlib
import io
import logging
import os
import re
from typing import Any, Callable, Dict, List, Optional, Sequence, Union

import yaml

from uavmec import bargaining
from uavmec import channel
from uavmec import scenario
from uavmec import simulator
from uavmec import trajectory
from uavmec import utils

LOG = logging.getLogger(__name__)


class ConfigError(BaseException):
    pass


Converter = Union[float, Callable[[float], float]]

# the space between the number and its unit is optional
QUANTITY = re.compile(
    r"^\s*(?P<number>[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)"
    r"\s*(?P<unit>\S*)\s*$"
)

UNITS: Dict[str, Dict[str, Converter]] = {
    "frequency": {"Hz": 1.0, "kHz": 1e3, "MHz": 1e6, "GHz": 1e9},
    "bits": {"b": 1.0, "kb": 1e3, "Mb": 1e6},
    "time": {"s": 1.0, "ms": 1e-3},
    "power": {"W": 1.0, "mW": 1e-3, "dBm": utils.dbm_to_watt},
    "gain": {"dB": utils.db_to_linear},
    "density": {"W/Hz": 1.0, "dBm/Hz": utils.dbm_to_watt},
    "length": {"m": 1.0},
    "speed": {"m/s": 1.0},
    # spreads given in dB stay in dB
    "decibel": {"dB": 1.0},
    "plain": {},
}

SWEEP_AXES = ["task-size", "arrival-rate", "md-count"]
STRATEGIES = [s.value for s in simulator.Strategy]


@dataclasses.dataclass(frozen=True)
class Field:
    kind: str
    shape: str
    default: Any
    choices: Optional[Sequence[Any]] = None


@dataclasses.dataclass(frozen=True)
class FieldList:
    fields: Dict[str, Any]
    default: List[Dict[str, Any]]


def _server_fields(**defaults) -> Dict[str, Field]:
    fields = {
        "cores": Field("plain", "int_range", defaults["cores"]),
        "core_capacity": Field(
            "frequency", "range", defaults["core_capacity"]
        ),
        "energy_cap": Field("plain", "scalar", defaults["energy_cap"]),
        "price_cap": Field("plain", "scalar", 1.0),
        "weight": Field("plain", "scalar", 0.5),
        "capacitance": Field("plain", "scalar", 1e-28),
    }
    for key in ("position", "start", "destination"):
        if key in defaults:
            fields[key] = Field("length", "pair", defaults[key])
    if "altitude" in defaults:
        fields["altitude"] = Field("length", "scalar", defaults["altitude"])
        fields["max_speed"] = Field("speed", "scalar", defaults["max_speed"])
    return fields


MBS_FIELDS = _server_fields(
    position=[250.0, 250.0],
    cores=[4, 8],
    core_capacity=[20e9, 40e9],
    energy_cap=1000.0,
)
UAV_FIELDS = _server_fields(
    start=[0.0, 0.0],
    destination=[500.0, 0.0],
    altitude=100.0,
    max_speed=25.0,
    cores=[2, 4],
    core_capacity=[10e9, 20e9],
    energy_cap=500.0,
)

SCHEMA: Dict[str, Any] = {
    "scenario": {
        "arena": Field("length", "pair", [500.0, 500.0]),
        "md_count": Field("plain", "int", 20),
        "md": {
            "cpu_capacity": Field("frequency", "range", [0.5e9, 1e9]),
            "transmit_power": Field("power", "range", [0.01, 1.0]),
            "energy_cap": Field("plain", "scalar", 10.0),
            "budget": Field("plain", "scalar", 5.0),
            "weight": Field("plain", "scalar", 0.5),
            "capacitance": Field("plain", "scalar", 1e-28),
        },
        "task": {
            "size": Field("bits", "range", [1e6, 5e6]),
            "cycle_density": Field("plain", "range", [500.0, 1500.0]),
            "deadline": Field("time", "range", [0.5, 5.0]),
        },
        "mbs": FieldList(
            MBS_FIELDS,
            [{"position": [250.0, 250.0]}],
        ),
        "uavs": FieldList(
            UAV_FIELDS,
            [
                {"start": [0.0, 0.0], "destination": [500.0, 0.0]},
                {"start": [500.0, 0.0], "destination": [0.0, 0.0]},
            ],
        ),
    },
    "mobility": {
        "memory": Field("plain", "scalar", 0.8),
        "mean_speed": Field("speed", "range", [0.5, 1.5]),
        "std": Field("speed", "scalar", 0.3),
    },
    "channel": {
        "bandwidth": Field("frequency", "scalar", 1e6),
        "noise_density": Field(
            "density", "scalar", utils.dbm_to_watt(-174.0)
        ),
        "terrestrial_d1": Field("length", "scalar", 18.0),
        "terrestrial_d2": Field("length", "scalar", 36.0),
        "aerial_a": Field("plain", "scalar", 10.0),
        "aerial_b": Field("plain", "scalar", 0.6),
        "exponent_los": Field("plain", "scalar", 2.2),
        "exponent_nlos": Field("plain", "scalar", 3.5),
        "reference_gain": Field("gain", "scalar", 1e-4),
        "nakagami_los": Field("plain", "scalar", 3.0),
        "nakagami_nlos": Field("plain", "scalar", 1.0),
        "shadow_los": Field("decibel", "scalar", 4.0),
        "shadow_nlos": Field("decibel", "scalar", 8.2),
        "mode": Field(
            "plain",
            "choice",
            "expected",
            choices=[m.value for m in channel.ChannelMode],
        ),
    },
    "cost": {
        "propulsion": {
            "blade_profile": Field("power", "scalar", 79.86),
            "induced": Field("power", "scalar", 88.63),
            "induced_velocity": Field("plain", "scalar", 263.7),
            "parasite": Field("plain", "scalar", 0.00925),
            "tip_speed": Field("speed", "scalar", 120.0),
        },
    },
    "bargaining": {
        "max_rounds": Field("plain", "int", 100),
        "horizon": Field("plain", "int", 2),
        "ceiling_sentinel": Field("plain", "scalar", 1e9),
        "relative_tolerance": Field("plain", "scalar", 1e-6),
    },
    "trajectory": {
        "tolerance": Field("plain", "scalar", 1e-3),
        "max_iterations": Field("plain", "int", 50),
        "ascent_iterations": Field("plain", "int", 500),
        "step_tolerance": Field("length", "scalar", 1e-6),
    },
    "simulation": {
        "horizon": Field("plain", "int", 500),
        "slot_duration": Field("time", "scalar", 0.1),
        "epoch_length": Field("plain", "int", 10),
        "arrival_rate": Field("plain", "scalar", 0.05),
    },
    "experiment": {
        "seeds": Field("plain", "int_list", [1]),
        "strategies": Field("plain", "choice_list", STRATEGIES, STRATEGIES),
        "audit": Field("plain", "bool", False),
        "output_dir": Field("plain", "str", "results"),
        "workers": Field("plain", "int", 1),
        "sweep": {
            "axis": Field("plain", "optional_choice", None, SWEEP_AXES),
            "grid": Field("plain", "float_list", []),
        },
    },
}


def _line_index(node, path: str, lines: Dict[str, int]) -> None:
    lines[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        for key_node, value_node in node.value:
            sub = f"{path}.{key_node.value}" if path else str(key_node.value)
            _line_index(value_node, sub, lines)
    elif isinstance(node, yaml.SequenceNode):
        for n, item in enumerate(node.value):
            _line_index(item, f"{path}[{n}]", lines)


class _Resolver:
    def __init__(self, lines: Dict[str, int]) -> None:
        self._lines = lines

    def error(self, path: str, problem: str) -> ConfigError:
        key = path
        while key and key not in self._lines:
            key = key.rpartition(".")[0]
        line = self._lines.get(key)
        where = f" (line {line})" if line else ""
        return ConfigError(f"Invalid config at {path}{where}: {problem}")

    def quantity(self, value: Any, kind: str, path: str) -> float:
        if isinstance(value, bool):
            raise self.error(path, f"expected a number, got {value!r}")
        if isinstance(value, (int, float)):
            return float(value)
        if not isinstance(value, str):
            raise self.error(path, f"expected a number, got {value!r}")
        match = QUANTITY.match(value)
        if match is None:
            raise self.error(path, f"cannot read {value!r} as a quantity")
        amount = float(match.group("number"))
        unit = match.group("unit")
        if not unit:
            return amount
        units = UNITS[kind]
        if unit not in units:
            raise self.error(
                path,
                f"unknown unit {unit!r}, expected one of {sorted(units)}",
            )
        converter = units[unit]
        if callable(converter):
            return converter(amount)
        return amount * converter

    def integer(self, value: Any, path: str) -> int:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise self.error(path, f"expected an integer, got {value!r}")
        if isinstance(value, float) and not value.is_integer():
            raise self.error(path, f"expected an integer, got {value!r}")
        return int(value)

    def pair(self, value: Any, path: str) -> List[Any]:
        if not isinstance(value, list) or len(value) != 2:
            raise self.error(path, f"expected [min, max], got {value!r}")
        return value

    def non_empty_list(self, value: Any, path: str) -> List[Any]:
        if not isinstance(value, list) or not value:
            raise self.error(path, f"expected a non-empty list, got {value!r}")
        return value

    def field(self, spec: Field, value: Any, path: str) -> Any:
        shape = spec.shape
        if shape == "scalar":
            return self.quantity(value, spec.kind, path)
        if shape == "int":
            return self.integer(value, path)
        if shape in ("range", "pair"):
            low, high = [
                self.quantity(v, spec.kind, path)
                for v in self.pair(value, path)
            ]
            if shape == "range" and low > high:
                raise self.error(path, f"range min {low} exceeds max {high}")
            return [low, high]
        if shape == "int_range":
            low, high = [self.integer(v, path) for v in self.pair(value, path)]
            if low > high:
                raise self.error(path, f"range min {low} exceeds max {high}")
            return [low, high]
        if shape == "bool":
            if not isinstance(value, bool):
                raise self.error(
                    path, f"expected true or false, got {value!r}"
                )
            return value
        if shape == "str":
            if not isinstance(value, str):
                raise self.error(path, f"expected a string, got {value!r}")
            return value
        if shape in ("choice", "optional_choice"):
            if value is None and shape == "optional_choice":
                return None
            if value not in (spec.choices or []):
                raise self.error(
                    path, f"{value!r} is not one of {list(spec.choices or [])}"
                )
            return value
        if shape == "int_list":
            return [
                self.integer(v, path) for v in self.non_empty_list(value, path)
            ]
        if shape == "choice_list":
            items = self.non_empty_list(value, path)
            for item in items:
                if item not in (spec.choices or []):
                    raise self.error(
                        path,
                        f"{item!r} is not one of {list(spec.choices or [])}",
                    )
            return list(items)
        if shape == "float_list":
            if not isinstance(value, list):
                raise self.error(path, f"expected a list, got {value!r}")
            return [self.quantity(v, "plain", path) for v in value]
        raise ValueError(f"unknown field shape {shape}")

    def section(
        self, schema: Dict[str, Any], raw: Any, path: str
    ) -> Dict[str, Any]:
        if raw is None:
            raw = {}
        if not isinstance(raw, dict):
            raise self.error(path, f"expected a mapping, got {raw!r}")
        unknown = sorted(set(raw) - set(schema))
        if unknown:
            raise self.error(
                path or "top level",
                f"unknown keys {unknown}, expected some of {sorted(schema)}",
            )
        resolved: Dict[str, Any] = {}
        for key, spec in schema.items():
            sub = f"{path}.{key}" if path else key
            if isinstance(spec, dict):
                resolved[key] = self.section(spec, raw.get(key), sub)
            elif isinstance(spec, FieldList):
                items = raw.get(key, spec.default)
                if not isinstance(items, list):
                    raise self.error(sub, f"expected a list, got {items!r}")
                resolved[key] = [
                    self.section(spec.fields, item, f"{sub}[{n}]")
                    for n, item in enumerate(items)
                ]
            elif key in raw:
                resolved[key] = self.field(spec, raw[key], sub)
            else:
                resolved[key] = copy.deepcopy(spec.default)
        return resolved


def resolve(raw: Any, lines: Optional[Dict[str, int]] = None) -> Dict:
    return _Resolver(lines or {}).section(SCHEMA, raw, "")


class ExperimentConfig:
    """A fully resolved experiment description in SI units."""

    def __init__(self, resolved: Dict[str, Any]) -> None:
        self._resolved = resolved
        try:
            settings = self.run_settings
            clock = scenario.Clock(
                slot_duration=settings.simulation.slot_duration,
                epoch_length=settings.simulation.epoch_length,
                horizon=settings.simulation.horizon,
            )
            for spec in settings.scenario.servers:
                spec.check_reachable(clock)
        except ValueError as e:
            raise ConfigError(f"Invalid config: {e}") from e
        if self.workers < 1:
            raise ConfigError(
                "Invalid config: experiment.workers must be >= 1"
            )

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, ExperimentConfig)
            and self._resolved == other._resolved
        )

    @property
    def resolved(self) -> Dict[str, Any]:
        return self._resolved

    def _section(self, *keys: str) -> Dict[str, Any]:
        section = self._resolved
        for key in keys:
            section = section[key]
        return section

    @property
    def scenario_params(self) -> scenario.ScenarioParams:
        section = self._section("scenario")
        md = section["md"]
        task = section["task"]
        servers = [
            scenario.ServerSpec(
                kind=scenario.ServerKind.TERRESTRIAL,
                position=tuple(mbs["position"]),
                cores=tuple(mbs["cores"]),
                core_capacity=tuple(mbs["core_capacity"]),
                energy_cap=mbs["energy_cap"],
                price_cap=mbs["price_cap"],
                weight=mbs["weight"],
                capacitance=mbs["capacitance"],
            )
            for mbs in section["mbs"]
        ] + [
            scenario.ServerSpec(
                kind=scenario.ServerKind.AERIAL,
                position=tuple(uav["start"]),
                destination=tuple(uav["destination"]),
                altitude=uav["altitude"],
                max_speed=uav["max_speed"],
                cores=tuple(uav["cores"]),
                core_capacity=tuple(uav["core_capacity"]),
                energy_cap=uav["energy_cap"],
                price_cap=uav["price_cap"],
                weight=uav["weight"],
                capacitance=uav["capacitance"],
            )
            for uav in section["uavs"]
        ]
        return scenario.ScenarioParams(
            arena=scenario.Arena(*section["arena"]),
            md_count=section["md_count"],
            md=scenario.MdSpec(
                cpu_capacity=tuple(md["cpu_capacity"]),
                transmit_power=tuple(md["transmit_power"]),
                energy_cap=md["energy_cap"],
                budget=md["budget"],
                weight=md["weight"],
                capacitance=md["capacitance"],
            ),
            task=scenario.TaskSpec(
                size=tuple(task["size"]),
                cycle_density=tuple(task["cycle_density"]),
                deadline=tuple(task["deadline"]),
            ),
            servers=tuple(servers),
        )

    @property
    def mobility_params(self) -> scenario.MobilityParams:
        section = self._section("mobility")
        return scenario.MobilityParams(
            memory=section["memory"],
            mean_speed=tuple(section["mean_speed"]),
            std=section["std"],
        )

    @property
    def propulsion_params(self) -> scenario.PropulsionParams:
        section = self._section("cost", "propulsion")
        return scenario.PropulsionParams(
            blade_profile=section["blade_profile"],
            induced=section["induced"],
            induced_velocity=section["induced_velocity"],
            parasite=section["parasite"],
            tip_speed=section["tip_speed"],
        )

    @property
    def channel_params(self) -> channel.ChannelParams:
        section = dict(self._section("channel"))
        density = section.pop("noise_density")
        section["mode"] = channel.ChannelMode(section["mode"])
        return channel.ChannelParams(
            noise_power=density * section["bandwidth"], **section
        )

    @property
    def bargaining_params(self) -> bargaining.BargainingParams:
        return bargaining.BargainingParams(**self._section("bargaining"))

    @property
    def trajectory_params(self) -> trajectory.TrajectoryParams:
        return trajectory.TrajectoryParams(**self._section("trajectory"))

    @property
    def simulation_params(self) -> simulator.SimulationParams:
        return simulator.SimulationParams(
            audit=self.audit, **self._section("simulation")
        )

    @property
    def run_settings(self) -> simulator.RunSettings:
        return simulator.RunSettings(
            scenario=self.scenario_params,
            mobility=self.mobility_params,
            propulsion=self.propulsion_params,
            channel=self.channel_params,
            bargaining=self.bargaining_params,
            trajectory=self.trajectory_params,
            simulation=self.simulation_params,
        )

    @property
    def seeds(self) -> List[int]:
        return self._section("experiment")["seeds"]

    @property
    def strategies(self) -> List[simulator.Strategy]:
        return [
            simulator.Strategy(s)
            for s in self._section("experiment")["strategies"]
        ]

    @property
    def audit(self) -> bool:
        return self._section("experiment")["audit"]

    @property
    def output_dir(self) -> str:
        return self._section("experiment")["output_dir"]

    @property
    def workers(self) -> int:
        return self._section("experiment")["workers"]

    @property
    def sweep_axis(self) -> Optional[str]:
        return self._section("experiment", "sweep")["axis"]

    @property
    def sweep_grid(self) -> List[float]:
        return self._section("experiment", "sweep")["grid"]

    def to_dict(self) -> Dict[str, Any]:
        return copy.deepcopy(self._resolved)

    def dump(self) -> str:
        stream = io.StringIO()
        yaml.safe_dump(self._resolved, stream, sort_keys=True)
        return stream.getvalue()

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.dump().encode()).hexdigest()

    def with_overrides(
        self,
        seeds: Optional[List[int]] = None,
        audit: Optional[bool] = None,
        output_dir: Optional[str] = None,
        mode: Optional[str] = None,
        workers: Optional[int] = None,
        axis: Optional[str] = None,
        grid: Optional[List[float]] = None,
    ) -> "ExperimentConfig":
        resolved = self.to_dict()
        experiment = resolved["experiment"]
        if seeds:
            experiment["seeds"] = list(seeds)
        if audit:
            experiment["audit"] = True
        if output_dir:
            experiment["output_dir"] = output_dir
        if mode:
            resolved["channel"]["mode"] = mode
        if workers:
            experiment["workers"] = workers
        if axis:
            experiment["sweep"]["axis"] = axis
        if grid:
            experiment["sweep"]["grid"] = list(grid)
        return ExperimentConfig(resolve(resolved))

    def for_sweep(self, axis: str, point: float) -> "ExperimentConfig":
        resolved = self.to_dict()
        if axis == "task-size":
            mean = point * 1e6
            resolved["scenario"]["task"]["size"] = [mean / 2, 3 * mean / 2]
        elif axis == "arrival-rate":
            resolved["simulation"]["arrival_rate"] = point
        elif axis == "md-count":
            resolved["scenario"]["md_count"] = int(point)
        else:
            raise ConfigError(
                f"Unknown sweep axis {axis}, expected one of {SWEEP_AXES}"
            )
        return ExperimentConfig(resolved)


def parse_config_text(text: str, source: str = "<string>") -> ExperimentConfig:
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
        raw = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigError(f"Cannot parse {source}: {e}") from e
    lines: Dict[str, int] = {}
    if root is not None:
        _line_index(root, "", lines)
    return ExperimentConfig(resolve(raw, lines))


def parse_config(path: str) -> ExperimentConfig:
    if not os.path.isfile(path):
        raise ConfigError(f"The config file {path} does not exist.")
    LOG.debug(f"Reading config file {path}")
    with open(path) as f:
        return parse_config_text(f.read(), path)


class Config:
    """The experiment of a single command invocation based on the config
    file and the command line args"""

    def __init__(self, args: argparse.Namespace) -> None:
        self._args = args
        experiment = parse_config(args.config)
        self._experiment = experiment.with_overrides(
            seeds=getattr(args, "seeds", None),
            audit=getattr(args, "audit", None),
            output_dir=getattr(args, "out", None),
            mode=getattr(args, "mode", None),
            workers=getattr(args, "workers", None),
            axis=getattr(args, "axis", None),
            grid=getattr(args, "grid", None),
        )

    @property
    def experiment(self) -> ExperimentConfig:
        return self._experiment

    @property
    def config_path(self) -> str:
        return self._args.config
