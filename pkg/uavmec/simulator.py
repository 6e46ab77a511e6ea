import collections
import dataclasses
import enum
import logging
from typing import Dict, List, Optional, Tuple

from uavmec import bargaining as bargaining_model
from uavmec import channel as channel_model
from uavmec import constants
from uavmec import cost
from uavmec import matching
from uavmec import scenario as scenario_model
from uavmec import trajectory as trajectory_model
from uavmec import utils

LOG = logging.getLogger(__name__)

# slack of the floating point audits
AUDIT_TOLERANCE = 1e-9


class Strategy(enum.Enum):
    TJCCT = "TJCCT"
    LS = "LS"
    GS = "GS"
    NS = "NS"
    CS = "CS"


@dataclasses.dataclass(frozen=True)
class SimulationParams:
    horizon: int = 500
    slot_duration: float = 0.1
    epoch_length: int = 10
    arrival_rate: float = 0.05
    audit: bool = False

    def __post_init__(self) -> None:
        if not 0.0 <= self.arrival_rate <= 1.0:
            raise ValueError("arrival rate must be a probability")


@dataclasses.dataclass(frozen=True)
class RunSettings:
    scenario: scenario_model.ScenarioParams = scenario_model.ScenarioParams()
    mobility: scenario_model.MobilityParams = scenario_model.MobilityParams()
    propulsion: scenario_model.PropulsionParams = (
        scenario_model.PropulsionParams()
    )
    channel: channel_model.ChannelParams = channel_model.ChannelParams()
    bargaining: bargaining_model.BargainingParams = (
        bargaining_model.BargainingParams()
    )
    trajectory: trajectory_model.TrajectoryParams = (
        trajectory_model.TrajectoryParams()
    )
    simulation: SimulationParams = SimulationParams()


@dataclasses.dataclass(frozen=True)
class Violation:
    slot: int
    check: str
    detail: str


@dataclasses.dataclass
class SlotRecord:
    slot: int
    utility: float = 0.0
    qoe: float = 0.0
    revenue: float = 0.0
    generated: int = 0
    completed: int = 0
    dropped: int = 0
    occupancy: Dict[int, int] = dataclasses.field(default_factory=dict)
    negotiations: int = 0
    rounds: int = 0
    requests: int = 0
    shared_revenue: float = 0.0
    wall_time: float = 0.0
    decisions: List[cost.OffloadDecision] = dataclasses.field(
        default_factory=list
    )
    violations: List[Violation] = dataclasses.field(default_factory=list)


@dataclasses.dataclass(frozen=True)
class TrajectoryRow:
    epoch: int
    uav_id: int
    x: float
    y: float


@dataclasses.dataclass
class MetricTrace:
    strategy: Strategy
    seed: int
    records: List[SlotRecord] = dataclasses.field(default_factory=list)
    trajectory: List[TrajectoryRow] = dataclasses.field(default_factory=list)
    # violations not tied to a single slot decision
    run_violations: List[Violation] = dataclasses.field(default_factory=list)
    in_flight: int = 0

    def _total(self, field: str) -> float:
        total = 0.0
        for record in self.records:
            total += getattr(record, field)
        return total

    @property
    def total_utility(self) -> float:
        return self._total("utility")

    @property
    def total_qoe(self) -> float:
        return self._total("qoe")

    @property
    def total_revenue(self) -> float:
        return self._total("revenue")

    @property
    def total_shared_revenue(self) -> float:
        return self._total("shared_revenue")

    @property
    def generated(self) -> int:
        return sum(r.generated for r in self.records)

    @property
    def completed(self) -> int:
        return sum(r.completed for r in self.records)

    @property
    def dropped(self) -> int:
        return sum(r.dropped for r in self.records)

    @property
    def negotiations(self) -> int:
        return sum(r.negotiations for r in self.records)

    @property
    def violations(self) -> List[Violation]:
        found = [v for r in self.records for v in r.violations]
        return found + self.run_violations


class Simulation:
    """One seeded run of one strategy over the whole horizon."""

    def __init__(
        self, settings: RunSettings, strategy: Strategy, seed: int
    ) -> None:
        self.settings = settings
        self.strategy = strategy
        self.seed = seed
        sim = settings.simulation
        self.clock = scenario_model.Clock(
            slot_duration=sim.slot_duration,
            epoch_length=sim.epoch_length,
            horizon=sim.horizon,
        )
        self.world = scenario_model.build_world(
            settings.scenario,
            settings.mobility,
            settings.propulsion,
            self.clock,
            seed,
        )
        self.trace = MetricTrace(strategy=strategy, seed=seed)
        self._links: Dict[Tuple[int, int], channel_model.LinkState] = {}
        # aerial deals committed during the current epoch
        self._served: Dict[
            int, List[Tuple[scenario_model.Task, cost.Deal]]
        ] = collections.defaultdict(list)
        if self.clock.horizon > 0:
            self._record_uavs(1)

    @property
    def audit(self) -> bool:
        return self.settings.simulation.audit

    def _record_uavs(self, epoch: int) -> None:
        for uav in self.world.uavs:
            self.trace.trajectory.append(
                TrajectoryRow(
                    epoch=epoch,
                    uav_id=uav.id,
                    x=float(uav.position[0]),
                    y=float(uav.position[1]),
                )
            )

    def link(
        self,
        md: scenario_model.MobileDevice,
        server: scenario_model.EdgeServer,
    ) -> channel_model.LinkState:
        key = (md.id, server.id)
        if key not in self._links:
            rng = None
            if self.settings.channel.mode == channel_model.ChannelMode.SAMPLED:
                rng = self.world.streams.stream("fading", md.id, server.id)
            self._links[key] = channel_model.evaluate_link(
                md, server, self.settings.channel, rng
            )
        return self._links[key]

    def _capacity(
        self, server: scenario_model.EdgeServer, slot: int
    ) -> bargaining_model.CapacityView:
        return bargaining_model.CapacityView.of(
            server, slot, self.clock.slot_duration
        )

    def _complete_finished(self, slot: int, record: SlotRecord) -> None:
        executing = self.world.tasks_in(
            scenario_model.TaskState.EXECUTING_LOCAL,
            scenario_model.TaskState.EXECUTING_EDGE,
        )
        for task in executing:
            assert task.finish_slot is not None and task.delay is not None
            if task.finish_slot >= slot:
                continue
            if task.delay > task.deadline + AUDIT_TOLERANCE:
                task.move_to(scenario_model.TaskState.DROPPED)
                record.dropped += 1
            else:
                task.move_to(scenario_model.TaskState.COMPLETED)
                record.completed += 1
                if self.audit:
                    self._audit_deadline(task, record)

    def _arrivals(self, slot: int, record: SlotRecord) -> None:
        rate = self.settings.simulation.arrival_rate
        for md in self.world.mds:
            if self.world.streams.stream("arrival", md.id).random() < rate:
                task = self.world.spawn_task(md, slot)
                record.generated += 1
                LOG.debug(f"Slot {slot}: MD {md.id} generated task {task.id}")

    def _pending(self) -> List[scenario_model.Task]:
        return sorted(
            self.world.tasks_in(scenario_model.TaskState.PENDING),
            key=lambda task: task.id,
        )

    def _snapshot(
        self, task: scenario_model.Task, slot: int
    ) -> scenario_model.Task:
        return task.as_request(slot, self.clock.slot_duration)

    def _local_option(
        self, task: scenario_model.Task, slot: int
    ) -> Tuple[float, float, float]:
        md = self.world.md(task.owner)
        delay = cost.local_delay(task, md.cpu_capacity)
        energy = cost.local_energy(task, md.cpu_capacity, md.capacitance)
        utility = cost.md_qoe(md, self._snapshot(task, slot), delay, energy)
        return utility, delay, energy

    def _commit_local(
        self, task: scenario_model.Task, slot: int
    ) -> cost.OffloadDecision:
        md = self.world.md(task.owner)
        utility, delay, energy = self._local_option(task, slot)
        slots = utils.slots_for(delay, self.clock.slot_duration)
        md.busy_until = slot + slots - 1
        task.move_to(scenario_model.TaskState.EXECUTING_LOCAL)
        task.target = constants.LOCAL
        task.finish_slot = slot + slots - 1
        task.delay = task.waited(slot, self.clock.slot_duration) + delay
        return cost.OffloadDecision(
            task_id=task.id,
            md_id=md.id,
            target=constants.LOCAL,
            md_utility=utility,
            delay=delay,
            energy=energy,
        )

    def _commit_edge(
        self, task: scenario_model.Task, deal: cost.Deal, slot: int
    ) -> cost.OffloadDecision:
        md = self.world.md(task.owner)
        server = self.world.server(deal.server_id)
        link = self.link(md, server)
        upload = utils.slots_for(
            cost.upload_delay(task, link.rate), self.clock.slot_duration
        )
        compute = utils.slots_for(
            task.cycles / deal.allocated_cycles, self.clock.slot_duration
        )
        server.reserve_core(
            slot, task.id, deal.allocated_cycles, upload, compute
        )
        md.radio_busy_until = slot + upload - 1
        task.move_to(scenario_model.TaskState.EXECUTING_EDGE)
        task.target = server.id
        task.finish_slot = slot + upload + compute - 1
        task.delay = task.waited(slot, self.clock.slot_duration) + deal.delay
        if server.aerial:
            self._served[server.id].append((self._snapshot(task, slot), deal))
        LOG.debug(
            f"Slot {slot}: task {task.id} runs on server {server.id} until "
            f"slot {task.finish_slot}"
        )
        return cost.OffloadDecision(
            task_id=task.id,
            md_id=md.id,
            target=server.id,
            md_utility=deal.md_utility,
            delay=deal.delay,
            energy=deal.upload_energy,
            server_utility=deal.server_utility,
            deal=deal,
        )

    def _negotiate(
        self,
        task: scenario_model.Task,
        server: scenario_model.EdgeServer,
        slot: int,
        record: SlotRecord,
    ) -> Optional[cost.Deal]:
        md = self.world.md(task.owner)
        record.negotiations += 1
        try:
            deal = bargaining_model.negotiate(
                md,
                server,
                self._snapshot(task, slot),
                self.link(md, server),
                self._capacity(server, slot),
                self.settings.bargaining,
            )
        except bargaining_model.NoDeal as e:
            record.rounds += e.rounds
            LOG.debug(f"Slot {slot}: {e}")
            return None
        record.rounds += deal.rounds
        return deal

    def _run_matching_slot(
        self,
        slot: int,
        record: SlotRecord,
        admission_cap: Optional[int] = None,
    ) -> List[cost.OffloadDecision]:
        decisions: List[cost.OffloadDecision] = []
        requests = []
        reserves: Dict[int, float] = {}
        asked = set()
        for task in self._pending():
            md = self.world.md(task.owner)
            if md.id in asked or not md.radio_idle(slot):
                continue
            asked.add(md.id)
            if md.core_idle(slot):
                utility, _, _ = self._local_option(task, slot)
                if utility > 0:
                    reserves[task.id] = utility
            requests.append(
                matching.OffloadRequest(
                    task=self._snapshot(task, slot),
                    md=md,
                    links={s.id: self.link(md, s) for s in self.world.servers},
                )
            )
        record.requests = len(requests)
        if requests:
            decisions += self._match(
                slot, record, requests, reserves, admission_cap
            )

        for task in self._pending():
            md = self.world.md(task.owner)
            if not md.core_idle(slot):
                continue
            utility, _, _ = self._local_option(task, slot)
            if utility > 0:
                decisions.append(self._commit_local(task, slot))
        return decisions

    def _match(
        self,
        slot: int,
        record: SlotRecord,
        requests: List[matching.OffloadRequest],
        reserves: Dict[int, float],
        admission_cap: Optional[int],
    ) -> List[cost.OffloadDecision]:
        servers = {s.id: s for s in self.world.servers}
        capacities = {
            s.id: self._capacity(s, slot) for s in self.world.servers
        }
        prefs = matching.build_preferences(
            requests,
            capacities,
            servers,
            self.settings.bargaining,
            reserves=reserves,
        )
        result = matching.run_matching(prefs, capacities, admission_cap)
        record.negotiations += prefs.negotiations
        record.rounds += prefs.rounds
        LOG.debug(
            f"Slot {slot}: matched {len(result.deals)} of {len(requests)} "
            f"requests with {result.proposals} proposals"
        )
        if self.audit:
            stable, witness = matching.is_stable(result, prefs)
            if not stable:
                record.violations.append(
                    Violation(slot, "stability", f"blocking pair {witness}")
                )
            self._audit_capacity(result, slot, record)

        return [
            self._commit_edge(self.world.tasks[task_id], deal, slot)
            for task_id, deal in sorted(result.deals.items())
        ]

    def run_baseline(
        self, slot: int, record: SlotRecord
    ) -> List[cost.OffloadDecision]:
        if self.strategy == Strategy.TJCCT:
            raise ValueError("TJCCT is not a baseline")
        if self.strategy == Strategy.CS:
            return self._run_matching_slot(slot, record, admission_cap=1)
        if self.strategy == Strategy.LS:
            return self._local_only(slot)
        if self.strategy == Strategy.GS:
            return self._greedy(slot, record)
        return self._nearest(slot, record)

    def _heads(self) -> List[scenario_model.Task]:
        """The oldest pending task of every MD, in MD id order."""
        heads: Dict[int, scenario_model.Task] = {}
        for task in self._pending():
            heads.setdefault(task.owner, task)
        return [heads[md_id] for md_id in sorted(heads)]

    def _local_only(self, slot: int) -> List[cost.OffloadDecision]:
        return [
            self._commit_local(task, slot)
            for task in self._heads()
            if self.world.md(task.owner).core_idle(slot)
        ]

    def _greedy(
        self, slot: int, record: SlotRecord
    ) -> List[cost.OffloadDecision]:
        decisions = []
        for task in self._heads():
            md = self.world.md(task.owner)
            best: Optional[Tuple[float, int, Optional[cost.Deal]]] = None
            if md.core_idle(slot):
                utility, _, _ = self._local_option(task, slot)
                best = (utility, constants.LOCAL, None)
            if md.radio_idle(slot):
                for server in self.world.servers:
                    if server.idle_cores(slot) < 1:
                        continue
                    deal = self._negotiate(task, server, slot, record)
                    if deal is None:
                        continue
                    if best is None or deal.md_utility > best[0]:
                        best = (deal.md_utility, server.id, deal)
            if best is None or best[0] <= 0:
                continue
            deal = best[2]
            if deal is None:
                decisions.append(self._commit_local(task, slot))
            else:
                decisions.append(self._commit_edge(task, deal, slot))
        return decisions

    def _nearest(
        self, slot: int, record: SlotRecord
    ) -> List[cost.OffloadDecision]:
        decisions = []
        for task in self._heads():
            md = self.world.md(task.owner)
            if not md.radio_idle(slot):
                continue
            server = min(
                self.world.servers,
                key=lambda s: (self.link(md, s).distance, s.id),
            )
            if server.idle_cores(slot) < 1:
                task.move_to(scenario_model.TaskState.DROPPED)
                record.dropped += 1
                LOG.debug(
                    f"Slot {slot}: nearest server {server.id} of task "
                    f"{task.id} is full, dropping it"
                )
                continue
            deal = self._negotiate(task, server, slot, record)
            if deal is not None:
                decisions.append(self._commit_edge(task, deal, slot))
        return decisions

    def _drop_expired(self, slot: int, record: SlotRecord) -> None:
        for task in self._pending():
            left = task.remaining_deadline(slot + 1, self.clock.slot_duration)
            if left <= AUDIT_TOLERANCE:
                task.move_to(scenario_model.TaskState.DROPPED)
                record.dropped += 1

    def _audit_deadline(
        self, task: scenario_model.Task, record: SlotRecord
    ) -> None:
        assert task.delay is not None
        if task.delay > task.deadline + AUDIT_TOLERANCE:
            record.violations.append(
                Violation(
                    record.slot,
                    "deadline",
                    f"task {task.id} took {task.delay:.6g} s of "
                    f"{task.deadline:.6g} s",
                )
            )

    def _audit_capacity(
        self, result: matching.Matching, slot: int, record: SlotRecord
    ) -> None:
        for server_id, task_ids in result.matched.items():
            capacity = result.capacities[server_id]
            if len(task_ids) > capacity.idle_cores:
                record.violations.append(
                    Violation(
                        slot,
                        "core-capacity",
                        f"server {server_id} admitted {len(task_ids)} tasks "
                        f"on {capacity.idle_cores} idle cores",
                    )
                )
            allocated = result.allocated(server_id)
            if allocated > capacity.available_cycles * (1 + AUDIT_TOLERANCE):
                record.violations.append(
                    Violation(
                        slot,
                        "cycle-capacity",
                        f"server {server_id} sold {allocated:.6g} of "
                        f"{capacity.available_cycles:.6g} cycles/s",
                    )
                )

    def _audit_slot(
        self,
        slot: int,
        record: SlotRecord,
        decisions: List[cost.OffloadDecision],
    ) -> None:
        server_count = len(self.world.servers)
        seen = set()
        for decision in decisions:
            indicators = decision.indicators(server_count)
            if any(o not in (0, 1) for o in indicators):
                record.violations.append(
                    Violation(
                        slot, "binary-offload", f"task {decision.task_id}"
                    )
                )
            if sum(indicators) > 1 or decision.task_id in seen:
                record.violations.append(
                    Violation(
                        slot,
                        "single-target",
                        f"task {decision.task_id} decided twice",
                    )
                )
            seen.add(decision.task_id)
            deal = decision.deal
            if deal is not None:
                md = self.world.md(deal.md_id)
                if deal.payment > md.budget * (1 + AUDIT_TOLERANCE):
                    record.violations.append(
                        Violation(
                            slot,
                            "budget",
                            f"task {deal.task_id} pays {deal.payment:.6g} "
                            f"over a budget of {md.budget:.6g}",
                        )
                    )

        for server in self.world.servers:
            busy = [c for c in server.cores if not c.idle(slot)]
            reserved = sum(c.allocation for c in busy)
            limit = server.core_count * server.core_capacity
            if reserved > limit * (1 + AUDIT_TOLERANCE):
                record.violations.append(
                    Violation(
                        slot,
                        "cycle-capacity",
                        f"server {server.id} reserves {reserved:.6g} of "
                        f"{limit:.6g} cycles/s",
                    )
                )
            running = [
                t
                for t in self.world.tasks_in(
                    scenario_model.TaskState.EXECUTING_EDGE
                )
                if t.target == server.id
                and t.finish_slot is not None
                and t.finish_slot >= slot
            ]
            if len(running) > server.core_count:
                record.violations.append(
                    Violation(
                        slot,
                        "core-capacity",
                        f"server {server.id} runs {len(running)} tasks on "
                        f"{server.core_count} cores",
                    )
                )

        if self.strategy not in (Strategy.TJCCT, Strategy.CS):
            return
        servers = len(self.world.servers)
        requests = record.requests
        bound = (
            self.settings.bargaining.max_rounds
            * servers
            * (2 * requests + min(servers, requests))
        )
        if (
            record.rounds > bound
            or record.negotiations > servers * requests
        ):
            record.violations.append(
                Violation(
                    slot,
                    "complexity",
                    f"{record.negotiations} negotiations and {record.rounds} "
                    f"rounds for {requests} requests",
                )
            )

    def run_slot(self, slot: int) -> SlotRecord:
        self.clock.slot_index = slot
        self._links = {}
        record = SlotRecord(slot=slot)
        start = utils.wall_clock()

        self._complete_finished(slot, record)
        self._arrivals(slot, record)
        if self.strategy == Strategy.TJCCT:
            decisions = self._run_matching_slot(slot, record)
        else:
            decisions = self.run_baseline(slot, record)

        record.decisions = decisions
        record.utility = cost.system_utility_slot(decisions)
        record.qoe = sum(d.md_utility for d in decisions)
        record.revenue = sum(d.server_utility for d in decisions)
        record.shared_revenue = cost.shared_propulsion_revenue(
            decisions,
            {s.id: s for s in self.world.servers},
            self.clock.slot_duration,
        )
        record.occupancy = {
            s.id: s.computing_cores(slot) for s in self.world.servers
        }
        self._drop_expired(slot, record)
        if self.audit:
            self._audit_slot(slot, record, decisions)
        record.wall_time = utils.wall_clock() - start
        self.trace.records.append(record)
        return record

    def run_epoch_boundary(self, slot: int) -> None:
        clock = self.clock.at(slot)
        if not clock.is_epoch_boundary:
            return
        epoch = clock.epoch_index
        if epoch >= clock.epoch_count:
            return

        problems = []
        for uav in self.world.uavs:
            served = [
                (task, self.world.md(task.owner), deal)
                for task, deal in self._served.get(uav.id, [])
            ]
            problems.append(
                trajectory_model.epoch_problem(
                    uav, served, self.settings.channel, clock
                )
            )
        result = trajectory_model.optimize_trajectory(
            problems, self.settings.trajectory
        )
        for uav in self.world.uavs:
            moved = scenario_model.advance_uav_position(
                uav, result.positions[uav.id], clock
            )
            self.world.replace_server(moved)
        self._record_uavs(epoch + 1)

        self.world.mds = [
            scenario_model.advance_md_mobility(
                md,
                md.mobility,
                self.world.streams.stream("mobility", md.id),
                clock,
                self.world.arena,
            )
            if md.mobility is not None
            else md
            for md in self.world.mds
        ]
        self._served = collections.defaultdict(list)
        LOG.debug(
            f"Epoch {epoch} closed after {result.iterations} SCA iterations"
        )
        if self.audit:
            self._audit_kinematics(clock.at(slot + 1), slot)

    def _audit_kinematics(
        self, clock: scenario_model.Clock, slot: int
    ) -> None:
        for uav in self.world.uavs:
            report = scenario_model.check_uav_kinematics(uav, clock)
            for check in report.violations():
                self.trace.run_violations.append(
                    Violation(
                        slot,
                        check.name,
                        f"UAV {uav.id} epoch {report.epoch} slack "
                        f"{check.slack:.6g}",
                    )
                )

    def _finish(self) -> None:
        in_flight = self.world.tasks_in(
            scenario_model.TaskState.PENDING,
            scenario_model.TaskState.EXECUTING_LOCAL,
            scenario_model.TaskState.EXECUTING_EDGE,
        )
        self.trace.in_flight = len(in_flight)
        trace = self.trace
        if trace.generated != trace.completed + trace.dropped + len(
            in_flight
        ):
            trace.run_violations.append(
                Violation(
                    self.clock.horizon,
                    "conservation",
                    f"{trace.generated} generated but {trace.completed} "
                    f"completed, {trace.dropped} dropped and "
                    f"{len(in_flight)} in flight",
                )
            )
        if self.audit and self.clock.horizon > 0:
            self._audit_kinematics(
                self.clock.at(self.clock.horizon), self.clock.horizon
            )

    def run(self) -> MetricTrace:
        for slot in range(1, self.clock.horizon + 1):
            self.run_slot(slot)
            self.run_epoch_boundary(slot)
        self._finish()
        LOG.debug(
            f"{self.strategy.value} seed {self.seed}: "
            f"U={self.trace.total_utility:.6g} over "
            f"{len(self.trace.records)} slots"
        )
        return self.trace


def run(settings: RunSettings, strategy: Strategy, seed: int) -> MetricTrace:
    return Simulation(settings, strategy, seed).run()
