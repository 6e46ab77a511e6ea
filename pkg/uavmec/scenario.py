import dataclasses
import enum
import logging
import math
import zlib
from typing import Dict, List, Optional, Tuple

import numpy as np

from uavmec import constants
from uavmec import utils

LOG = logging.getLogger(__name__)


class KinematicViolation(Exception):
    def __init__(self, msg):
        self.msg = msg
        super().__init__(msg)

    def __str__(self):
        return self.msg


@dataclasses.dataclass
class Clock:
    slot_duration: float = 0.1
    epoch_length: int = 10
    horizon: int = 500
    slot_index: int = 1

    def __post_init__(self) -> None:
        if self.slot_duration <= 0:
            raise ValueError("slot duration must be positive")
        if self.epoch_length < 1:
            raise ValueError("epoch length must be at least one slot")
        if self.horizon < 0 or self.horizon % self.epoch_length:
            raise ValueError(
                f"horizon {self.horizon} is not a multiple of the epoch "
                f"length {self.epoch_length}"
            )

    @property
    def epoch_index(self) -> int:
        return math.ceil(self.slot_index / self.epoch_length)

    @property
    def epoch_count(self) -> int:
        return self.horizon // self.epoch_length

    @property
    def epoch_seconds(self) -> float:
        return self.slot_duration * self.epoch_length

    @property
    def is_epoch_boundary(self) -> bool:
        return self.slot_index % self.epoch_length == 0

    def at(self, slot_index: int) -> "Clock":
        return dataclasses.replace(self, slot_index=slot_index)


@dataclasses.dataclass(frozen=True)
class Arena:
    width: float = 500.0
    height: float = 500.0

    def contains(self, position: np.ndarray) -> bool:
        return bool(
            0.0 <= position[0] <= self.width
            and 0.0 <= position[1] <= self.height
        )


@dataclasses.dataclass(frozen=True)
class GaussMarkovParams:
    memory: float
    mean_velocity: Tuple[float, float]
    std: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.memory <= 1.0:
            raise ValueError("Gauss-Markov memory must be in [0, 1]")
        if self.std < 0.0:
            raise ValueError("Gauss-Markov std must be non-negative")


@dataclasses.dataclass(frozen=True)
class PropulsionParams:
    """Rotary-wing power model constants."""

    blade_profile: float = 79.86
    induced: float = 88.63
    # fourth power of the mean rotor induced velocity in hover
    induced_velocity: float = 263.7
    parasite: float = 0.00925
    tip_speed: float = 120.0


@dataclasses.dataclass
class MobileDevice:
    id: int
    position: np.ndarray
    velocity: np.ndarray
    cpu_capacity: float
    transmit_power: float
    energy_cap: float = 10.0
    budget: float = 5.0
    weight: float = 0.5
    capacitance: float = 1e-28
    mobility: Optional[GaussMarkovParams] = None
    core_count: int = 1
    # last slot the local core is busy with
    busy_until: int = 0
    # last slot the radio is busy uploading
    radio_busy_until: int = 0

    def __post_init__(self) -> None:
        if self.cpu_capacity <= 0 or self.transmit_power <= 0:
            raise ValueError(f"MD {self.id} needs positive cpu and power")
        if not 0.0 <= self.weight <= 1.0 or self.budget <= 0:
            raise ValueError(f"MD {self.id} has invalid weight or budget")

    def core_idle(self, slot: int) -> bool:
        return self.busy_until < slot

    def radio_idle(self, slot: int) -> bool:
        return self.radio_busy_until < slot


class TaskState(enum.Enum):
    PENDING = "pending"
    EXECUTING_LOCAL = "executing-local"
    EXECUTING_EDGE = "executing-edge"
    COMPLETED = "completed"
    DROPPED = "dropped"


_TRANSITIONS = {
    TaskState.PENDING: {
        TaskState.EXECUTING_LOCAL,
        TaskState.EXECUTING_EDGE,
        TaskState.DROPPED,
    },
    TaskState.EXECUTING_LOCAL: {TaskState.COMPLETED, TaskState.DROPPED},
    TaskState.EXECUTING_EDGE: {TaskState.COMPLETED, TaskState.DROPPED},
    TaskState.COMPLETED: set(),
    TaskState.DROPPED: set(),
}


@dataclasses.dataclass
class Task:
    id: int
    owner: int
    generation_slot: int
    size: float
    cycles: float
    deadline: float
    state: TaskState = TaskState.PENDING
    target: Optional[int] = None
    finish_slot: Optional[int] = None
    # total delay promised at decision time, waiting included
    delay: Optional[float] = None

    def __post_init__(self) -> None:
        if self.size <= 0 or self.cycles <= 0 or self.deadline <= 0:
            raise ValueError(f"Task {self.id} needs positive l, mu and tau")

    def move_to(self, state: TaskState) -> None:
        if state not in _TRANSITIONS[self.state]:
            raise ValueError(
                f"Task {self.id} cannot go from {self.state.value} to "
                f"{state.value}"
            )
        self.state = state

    def waited(self, slot: int, slot_duration: float) -> float:
        return (slot - self.generation_slot) * slot_duration

    def remaining_deadline(self, slot: int, slot_duration: float) -> float:
        return self.deadline - self.waited(slot, slot_duration)

    def as_request(self, slot: int, slot_duration: float) -> "Task":
        """The task re-posed with the deadline left at the given slot."""
        return dataclasses.replace(
            self, deadline=self.remaining_deadline(slot, slot_duration)
        )


class ServerKind(enum.Enum):
    TERRESTRIAL = "terrestrial"
    AERIAL = "aerial"


@dataclasses.dataclass
class Core:
    busy_until: int = 0
    # first slot the core computes, earlier reserved slots are uploads
    compute_from: int = 0
    task_id: Optional[int] = None
    allocation: float = 0.0

    def idle(self, slot: int) -> bool:
        return self.busy_until < slot

    def computing(self, slot: int) -> bool:
        return self.compute_from <= slot <= self.busy_until


@dataclasses.dataclass
class EdgeServer:
    id: int
    kind: ServerKind
    position: np.ndarray
    core_count: int
    core_capacity: float
    energy_cap: float
    price_cap: float = 1.0
    weight: float = 0.5
    capacitance: float = 1e-28
    altitude: float = 0.0
    cores: List[Core] = dataclasses.field(default_factory=list)

    def __post_init__(self) -> None:
        if self.core_count < 1 or self.core_capacity <= 0:
            raise ValueError(f"Server {self.id} needs cores and capacity")
        if not self.cores:
            self.cores = [Core() for _ in range(self.core_count)]

    @property
    def aerial(self) -> bool:
        return self.kind == ServerKind.AERIAL

    def idle_cores(self, slot: int) -> int:
        return sum(1 for core in self.cores if core.idle(slot))

    def available_cycles(self, slot: int) -> float:
        return self.idle_cores(slot) * self.core_capacity

    def reserved_cycles(self, slot: int) -> float:
        return sum(c.allocation for c in self.cores if not c.idle(slot))

    def computing_cores(self, slot: int) -> int:
        return sum(1 for core in self.cores if core.computing(slot))

    def reserve_core(
        self,
        slot: int,
        task_id: int,
        allocation: float,
        upload_slots: int,
        compute_slots: int,
    ) -> Core:
        for core in self.cores:
            if core.idle(slot):
                core.task_id = task_id
                core.allocation = allocation
                core.compute_from = slot + upload_slots
                core.busy_until = slot + upload_slots + compute_slots - 1
                return core
        raise ValueError(f"Server {self.id} has no idle core at slot {slot}")


@dataclasses.dataclass
class UavState(EdgeServer):
    max_speed: float = 25.0
    start: np.ndarray = dataclasses.field(
        default_factory=lambda: np.zeros(2)
    )
    destination: np.ndarray = dataclasses.field(
        default_factory=lambda: np.zeros(2)
    )
    propulsion: PropulsionParams = PropulsionParams()
    # implied speed of the last accepted move
    speed: float = 0.0
    # one accepted position per epoch, index 0 is epoch 1
    history: List[np.ndarray] = dataclasses.field(default_factory=list)

    def __post_init__(self) -> None:
        super().__post_init__()
        if self.altitude <= 0:
            raise ValueError(f"UAV {self.id} needs a positive altitude")
        if not self.history:
            self.history = [np.array(self.position, dtype=float)]


@dataclasses.dataclass
class KinematicCheck:
    name: str
    passed: bool
    slack: float


@dataclasses.dataclass
class KinematicReport:
    uav_id: int
    epoch: int
    checks: List[KinematicCheck]

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)

    def violations(self) -> List[KinematicCheck]:
        return [check for check in self.checks if not check.passed]


class RngStreams:
    """Independent counter-based random streams, one per named entity."""

    def __init__(self, seed: int) -> None:
        self.seed = seed
        self._streams: Dict[Tuple, np.random.Generator] = {}

    def stream(self, name: str, *ids: int) -> np.random.Generator:
        key = (name, *ids)
        if key not in self._streams:
            sequence = np.random.SeedSequence(
                self.seed, spawn_key=(zlib.crc32(name.encode()), *ids)
            )
            self._streams[key] = np.random.Generator(
                np.random.Philox(sequence)
            )
        return self._streams[key]


def advance_md_mobility(
    md: MobileDevice,
    params: GaussMarkovParams,
    rng: np.random.Generator,
    clock: Clock,
    arena: Arena,
) -> MobileDevice:
    alpha = params.memory
    position = md.position + md.velocity * clock.epoch_seconds
    noise = rng.standard_normal(2)
    velocity = (
        alpha * md.velocity
        + (1.0 - alpha) * np.asarray(params.mean_velocity, dtype=float)
        + params.std * math.sqrt(1.0 - alpha * alpha) * noise
    )
    for axis, upper in enumerate((arena.width, arena.height)):
        if position[axis] < 0.0:
            position[axis] = 0.0
            velocity[axis] = abs(velocity[axis])
        elif position[axis] > upper:
            position[axis] = upper
            velocity[axis] = -abs(velocity[axis])
    return dataclasses.replace(md, position=position, velocity=velocity)


def reach_radius(uav: UavState, clock: Clock, epoch: int) -> float:
    """Largest distance from the destination allowed at the given epoch."""
    return uav.max_speed * (clock.epoch_count - epoch) * clock.epoch_seconds


def advance_uav_position(
    uav: UavState, target: np.ndarray, clock: Clock
) -> UavState:
    target = np.asarray(target, dtype=float)
    step = float(np.linalg.norm(target - uav.position))
    max_step = uav.max_speed * clock.epoch_seconds
    if step > max_step + constants.KINEMATIC_TOLERANCE:
        raise KinematicViolation(
            f"UAV {uav.id} move of {step:.6f} m exceeds {max_step:.6f} m"
        )
    next_epoch = len(uav.history) + 1
    remaining = float(np.linalg.norm(uav.destination - target))
    bound = reach_radius(uav, clock, next_epoch)
    if remaining > bound + constants.KINEMATIC_TOLERANCE:
        raise KinematicViolation(
            f"UAV {uav.id} at epoch {next_epoch} would be {remaining:.6f} m "
            f"from its destination, more than the reachable {bound:.6f} m"
        )
    LOG.debug(f"UAV {uav.id} moves {step:.3f} m for epoch {next_epoch}")
    return dataclasses.replace(
        uav,
        position=target,
        speed=step / clock.epoch_seconds,
        history=uav.history + [target],
    )


def check_uav_kinematics(uav: UavState, clock: Clock) -> KinematicReport:
    epoch = clock.epoch_index
    tolerance = constants.KINEMATIC_TOLERANCE

    anchoring = float(np.linalg.norm(uav.history[0] - uav.start))
    if epoch == clock.epoch_count:
        anchoring = max(
            anchoring, float(np.linalg.norm(uav.position - uav.destination))
        )

    max_step = uav.max_speed * clock.epoch_seconds
    moves = [
        float(np.linalg.norm(b - a))
        for a, b in zip(uav.history, uav.history[1:])
    ]
    displacement = max_step - max(moves, default=0.0)

    reachability = reach_radius(uav, clock, epoch) - float(
        np.linalg.norm(uav.destination - uav.position)
    )
    return KinematicReport(
        uav_id=uav.id,
        epoch=epoch,
        checks=[
            KinematicCheck("endpoints", anchoring <= tolerance, -anchoring),
            KinematicCheck(
                "max-step", displacement >= -tolerance, displacement
            ),
            KinematicCheck(
                "reachability", reachability >= -tolerance, reachability
            ),
        ],
    )


@dataclasses.dataclass(frozen=True)
class MdSpec:
    cpu_capacity: Tuple[float, float] = (0.5e9, 1.0e9)
    transmit_power: Tuple[float, float] = (0.01, 1.0)
    energy_cap: float = 10.0
    budget: float = 5.0
    weight: float = 0.5
    capacitance: float = 1e-28

    def __post_init__(self) -> None:
        if not 0.0 <= self.weight <= 1.0:
            raise ValueError(f"MD weight {self.weight} is not in [0, 1]")


@dataclasses.dataclass(frozen=True)
class TaskSpec:
    size: Tuple[float, float] = (1e6, 5e6)
    cycle_density: Tuple[float, float] = (500.0, 1500.0)
    deadline: Tuple[float, float] = (0.5, 5.0)


@dataclasses.dataclass(frozen=True)
class ServerSpec:
    kind: ServerKind
    position: Tuple[float, float]
    cores: Tuple[int, int]
    core_capacity: Tuple[float, float]
    energy_cap: float
    price_cap: float = 1.0
    weight: float = 0.5
    capacitance: float = 1e-28
    altitude: float = 0.0
    max_speed: float = 0.0
    destination: Optional[Tuple[float, float]] = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.weight <= 1.0:
            raise ValueError(
                f"{self.kind.value} weight {self.weight} is not in [0, 1]"
            )

    def check_reachable(self, clock: Clock) -> None:
        """A UAV must be able to reach its destination within the horizon."""
        if self.destination is None or clock.epoch_count < 1:
            return
        gap = math.dist(self.position, self.destination)
        reach = self.max_speed * (clock.epoch_count - 1) * clock.epoch_seconds
        if gap > reach + constants.KINEMATIC_TOLERANCE:
            raise ValueError(
                f"UAV destination {self.destination} is {gap:.1f} m from its "
                f"start, more than the {reach:.1f} m it can fly"
            )


DEFAULT_SERVERS: Tuple[ServerSpec, ...] = (
    ServerSpec(
        kind=ServerKind.TERRESTRIAL,
        position=(250.0, 250.0),
        cores=(4, 8),
        core_capacity=(20e9, 40e9),
        energy_cap=1000.0,
    ),
    ServerSpec(
        kind=ServerKind.AERIAL,
        position=(0.0, 0.0),
        destination=(500.0, 0.0),
        altitude=100.0,
        max_speed=25.0,
        cores=(2, 4),
        core_capacity=(10e9, 20e9),
        energy_cap=500.0,
    ),
    ServerSpec(
        kind=ServerKind.AERIAL,
        position=(500.0, 0.0),
        destination=(0.0, 0.0),
        altitude=100.0,
        max_speed=25.0,
        cores=(2, 4),
        core_capacity=(10e9, 20e9),
        energy_cap=500.0,
    ),
)


@dataclasses.dataclass(frozen=True)
class MobilityParams:
    memory: float = 0.8
    mean_speed: Tuple[float, float] = (0.5, 1.5)
    std: float = 0.3

    def __post_init__(self) -> None:
        if not 0.0 <= self.memory <= 1.0:
            raise ValueError(
                f"Gauss-Markov memory {self.memory} is not in [0, 1]"
            )


@dataclasses.dataclass(frozen=True)
class ScenarioParams:
    arena: Arena = Arena()
    md_count: int = 20
    md: MdSpec = MdSpec()
    task: TaskSpec = TaskSpec()
    servers: Tuple[ServerSpec, ...] = DEFAULT_SERVERS


@dataclasses.dataclass
class World:
    clock: Clock
    arena: Arena
    mds: List[MobileDevice]
    servers: List[EdgeServer]
    streams: RngStreams
    task_spec: TaskSpec = TaskSpec()
    tasks: Dict[int, Task] = dataclasses.field(default_factory=dict)

    @property
    def uavs(self) -> List[UavState]:
        return [s for s in self.servers if isinstance(s, UavState)]

    def server(self, server_id: int) -> EdgeServer:
        return self.servers[server_id - 1]

    def replace_server(self, server: EdgeServer) -> None:
        self.servers[server.id - 1] = server

    def md(self, md_id: int) -> MobileDevice:
        return self.mds[md_id]

    def tasks_in(self, *states: TaskState) -> List[Task]:
        return [task for task in self.tasks.values() if task.state in states]

    def spawn_task(self, md: MobileDevice, slot: int) -> Task:
        rng = self.streams.stream("task", md.id)
        size = rng.uniform(*self.task_spec.size)
        density = rng.uniform(*self.task_spec.cycle_density)
        deadline = rng.uniform(*self.task_spec.deadline)
        task = Task(
            id=len(self.tasks),
            owner=md.id,
            generation_slot=slot,
            size=float(size),
            cycles=float(density * size),
            deadline=float(deadline),
        )
        self.tasks[task.id] = task
        return task


def _build_md(
    md_id: int, params: ScenarioParams, mobility: MobilityParams, rng
) -> MobileDevice:
    spec = params.md
    position = rng.uniform(
        (0.0, 0.0), (params.arena.width, params.arena.height)
    )
    power_dbm = rng.uniform(
        utils.watt_to_dbm(spec.transmit_power[0]),
        utils.watt_to_dbm(spec.transmit_power[1]),
    )
    speed = rng.uniform(*mobility.mean_speed)
    heading = rng.uniform(0.0, 2.0 * math.pi)
    mean_velocity = (speed * math.cos(heading), speed * math.sin(heading))
    return MobileDevice(
        id=md_id,
        position=np.asarray(position, dtype=float),
        velocity=np.array(mean_velocity),
        cpu_capacity=float(rng.uniform(*spec.cpu_capacity)),
        transmit_power=utils.dbm_to_watt(float(power_dbm)),
        energy_cap=spec.energy_cap,
        budget=spec.budget,
        weight=spec.weight,
        capacitance=spec.capacitance,
        mobility=GaussMarkovParams(
            memory=mobility.memory,
            mean_velocity=mean_velocity,
            std=mobility.std,
        ),
    )


def _build_server(
    server_id: int, spec: ServerSpec, propulsion: PropulsionParams, rng
) -> EdgeServer:
    common = dict(
        id=server_id,
        kind=spec.kind,
        position=np.asarray(spec.position, dtype=float),
        core_count=int(rng.integers(spec.cores[0], spec.cores[1] + 1)),
        core_capacity=float(rng.uniform(*spec.core_capacity)),
        energy_cap=spec.energy_cap,
        price_cap=spec.price_cap,
        weight=spec.weight,
        capacitance=spec.capacitance,
        altitude=spec.altitude,
    )
    if spec.kind == ServerKind.TERRESTRIAL:
        return EdgeServer(**common)  # type: ignore[arg-type]
    assert spec.destination is not None
    return UavState(
        **common,  # type: ignore[arg-type]
        max_speed=spec.max_speed,
        start=np.asarray(spec.position, dtype=float),
        destination=np.asarray(spec.destination, dtype=float),
        propulsion=propulsion,
    )


def build_world(
    params: ScenarioParams,
    mobility: MobilityParams,
    propulsion: PropulsionParams,
    clock: Clock,
    seed: int,
) -> World:
    streams = RngStreams(seed)
    mds = [
        _build_md(i, params, mobility, streams.stream("md-init", i))
        for i in range(params.md_count)
    ]
    servers = [
        _build_server(j, spec, propulsion, streams.stream("server-init", j))
        for j, spec in enumerate(params.servers, start=1)
    ]
    LOG.debug(
        f"Built world with {len(mds)} MDs and {len(servers)} servers "
        f"for seed {seed}"
    )
    return World(
        clock=clock,
        arena=params.arena,
        mds=mds,
        servers=servers,
        streams=streams,
        task_spec=params.task,
    )
