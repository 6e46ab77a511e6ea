import collections
import dataclasses
import itertools
import logging
from typing import Callable, Dict, List, Optional, Sequence, Set, Tuple

from uavmec import bargaining
from uavmec import channel
from uavmec import cost
from uavmec import scenario

LOG = logging.getLogger(__name__)

ServerCapacity = bargaining.CapacityView
Negotiator = Callable[..., cost.Deal]

# exhaustive Pareto checks enumerate (servers + 1) ** tasks assignments
MAX_PARETO_TASKS = 6
MAX_PARETO_SERVERS = 3


class InstanceTooLarge(Exception):
    def __init__(self, msg):
        self.msg = msg
        super().__init__(msg)

    def __str__(self):
        return self.msg


@dataclasses.dataclass(frozen=True)
class OffloadRequest:
    # the task with its remaining deadline at the current slot
    task: scenario.Task
    md: scenario.MobileDevice
    links: Dict[int, channel.LinkState]


@dataclasses.dataclass
class PreferenceLists:
    task_prefs: Dict[int, List[int]]
    server_prefs: Dict[int, List[int]]
    deals: Dict[Tuple[int, int], cost.Deal]
    negotiations: int = 0
    rounds: int = 0
    # utility a task keeps when it stays unmatched
    reserves: Dict[int, float] = dataclasses.field(default_factory=dict)

    def task_value(self, task_id: int, server_id: int) -> float:
        return self.deals[(task_id, server_id)].md_utility

    def server_value(self, server_id: int, task_id: int) -> float:
        return self.deals[(task_id, server_id)].server_utility

    def server_rank(self, server_id: int, task_id: int) -> int:
        return self.server_prefs[server_id].index(task_id)

    def task_rank(self, task_id: int, server_id: int) -> int:
        return self.task_prefs[task_id].index(server_id)


@dataclasses.dataclass
class Matching:
    assignment: Dict[int, Optional[int]]
    matched: Dict[int, List[int]]
    rejected: Set[int]
    deals: Dict[int, cost.Deal]
    limits: Dict[int, int]
    capacities: Dict[int, ServerCapacity]
    proposals: int = 0

    def allocated(self, server_id: int) -> float:
        return sum(
            self.deals[task_id].allocated_cycles
            for task_id in self.matched.get(server_id, [])
        )


def build_preferences(
    requests: Sequence[OffloadRequest],
    capacities: Dict[int, ServerCapacity],
    servers: Dict[int, scenario.EdgeServer],
    params: bargaining.BargainingParams = bargaining.BargainingParams(),
    negotiator: Negotiator = bargaining.negotiate,
    reserves: Optional[Dict[int, float]] = None,
) -> PreferenceLists:
    """Run a trial negotiation for every task and server pair.

    Pairs without a deal are left out of both lists. Servers without an idle
    core are not asked at all. A task with a reserve utility, the QoE of
    running it locally, only ranks the servers whose deal beats it.
    """
    reserves = dict(reserves or {})
    deals: Dict[Tuple[int, int], cost.Deal] = {}
    negotiations = 0
    rounds = 0
    task_ids = []
    for request in sorted(requests, key=lambda r: r.task.id):
        task_ids.append(request.task.id)
        for server_id in sorted(servers):
            capacity = capacities[server_id]
            if capacity.idle_cores < 1:
                continue
            negotiations += 1
            try:
                deal = negotiator(
                    request.md,
                    servers[server_id],
                    request.task,
                    request.links[server_id],
                    capacity,
                    params,
                )
            except bargaining.BargainingError as e:
                LOG.debug(f"Trial negotiation failed: {e}")
                rounds += getattr(e, "rounds", 0)
                continue
            rounds += deal.rounds
            reserve = reserves.get(request.task.id)
            if reserve is not None and deal.md_utility <= reserve:
                LOG.debug(
                    f"Task {request.task.id} prefers its reserve to server "
                    f"{server_id}"
                )
                continue
            deals[(request.task.id, server_id)] = deal

    task_prefs = {
        task_id: sorted(
            (s for (t, s) in deals if t == task_id),
            key=lambda s: (-deals[(task_id, s)].md_utility, s),
        )
        for task_id in task_ids
    }
    server_prefs = {
        server_id: sorted(
            (t for (t, s) in deals if s == server_id),
            key=lambda t: (-deals[(t, server_id)].server_utility, t),
        )
        for server_id in sorted(servers)
    }
    return PreferenceLists(
        task_prefs=task_prefs,
        server_prefs=server_prefs,
        deals=deals,
        negotiations=negotiations,
        rounds=rounds,
        reserves=reserves,
    )


def _limits(
    capacities: Dict[int, ServerCapacity], admission_cap: Optional[int]
) -> Dict[int, int]:
    return {
        server_id: (
            capacity.idle_cores
            if admission_cap is None
            else min(capacity.idle_cores, admission_cap)
        )
        for server_id, capacity in capacities.items()
    }


def run_matching(
    prefs: PreferenceLists,
    capacities: Dict[int, ServerCapacity],
    admission_cap: Optional[int] = None,
) -> Matching:
    """Deferred acceptance with tasks proposing to servers.

    A server holds its most preferred proposers up to its idle cores and then
    releases the least preferred ones while the held allocations exceed its
    available cycles.
    """
    limits = _limits(capacities, admission_cap)
    remaining = {task_id: list(p) for task_id, p in prefs.task_prefs.items()}
    held: Dict[int, List[int]] = {server_id: [] for server_id in capacities}
    rejected: Set[int] = set()
    proposals = 0

    waiting = sorted(task_id for task_id, p in remaining.items() if p)
    rejected.update(task_id for task_id, p in remaining.items() if not p)
    round_number = 0
    while waiting:
        round_number += 1
        proposers: Dict[int, List[int]] = collections.defaultdict(list)
        for task_id in waiting:
            server_id = remaining[task_id].pop(0)
            proposals += 1
            proposers[server_id].append(task_id)

        waiting = []
        for server_id, new in sorted(proposers.items()):
            candidates = sorted(
                held[server_id] + new,
                key=lambda t: prefs.server_rank(server_id, t),
            )
            keep = candidates[: limits.get(server_id, 0)]
            avail = capacities[server_id].available_cycles
            while keep and (
                sum(prefs.deals[(t, server_id)].allocated_cycles for t in keep)
                > avail
            ):
                keep.pop()
            held[server_id] = keep
            for task_id in candidates:
                if task_id in keep:
                    continue
                if remaining[task_id]:
                    waiting.append(task_id)
                else:
                    rejected.add(task_id)
        waiting.sort()
        LOG.debug(
            f"Matching round {round_number}: {len(waiting)} tasks re-propose"
        )

    assignment: Dict[int, Optional[int]] = {
        task_id: None for task_id in prefs.task_prefs
    }
    deals = {}
    for server_id, task_ids in held.items():
        for task_id in task_ids:
            assignment[task_id] = server_id
            deals[task_id] = prefs.deals[(task_id, server_id)]
    return Matching(
        assignment=assignment,
        matched=held,
        rejected=rejected,
        deals=deals,
        limits=limits,
        capacities=capacities,
        proposals=proposals,
    )


def is_stable(
    matching: Matching, prefs: PreferenceLists
) -> Tuple[bool, Optional[Tuple[int, int]]]:
    """Search for a blocking task and server pair.

    The pair (K, j) blocks if K prefers j to its match and j can take K by
    letting go only of tasks it ranks below K.
    """
    for task_id, servers in sorted(prefs.task_prefs.items()):
        current = matching.assignment.get(task_id)
        for server_id in servers:
            if server_id == current:
                break
            rank = prefs.server_rank(server_id, task_id)
            above = [
                t
                for t in matching.matched.get(server_id, [])
                if prefs.server_rank(server_id, t) < rank
            ]
            cycles = sum(
                prefs.deals[(t, server_id)].allocated_cycles for t in above
            ) + prefs.deals[(task_id, server_id)].allocated_cycles
            if (
                len(above) + 1 <= matching.limits.get(server_id, 0)
                and cycles <= matching.capacities[server_id].available_cycles
            ):
                return False, (task_id, server_id)
    return True, None


def _utilities(
    assignment: Dict[int, Optional[int]], prefs: PreferenceLists
) -> Tuple[Dict[int, float], Dict[int, float]]:
    tasks = {}
    servers: Dict[int, float] = collections.defaultdict(float)
    for task_id, server_id in assignment.items():
        if server_id is None:
            tasks[task_id] = prefs.reserves.get(task_id, 0.0)
            continue
        tasks[task_id] = prefs.task_value(task_id, server_id)
        servers[server_id] += prefs.server_value(server_id, task_id)
    return tasks, servers


def _feasible(
    assignment: Dict[int, Optional[int]],
    prefs: PreferenceLists,
    matching: Matching,
) -> bool:
    load: Dict[int, List[int]] = collections.defaultdict(list)
    for task_id, server_id in assignment.items():
        if server_id is not None:
            load[server_id].append(task_id)
    for server_id, task_ids in load.items():
        if len(task_ids) > matching.limits.get(server_id, 0):
            return False
        cycles = sum(
            prefs.deals[(t, server_id)].allocated_cycles for t in task_ids
        )
        if cycles > matching.capacities[server_id].available_cycles:
            return False
    return True


def is_weak_pareto(matching: Matching, prefs: PreferenceLists) -> bool:
    """No feasible assignment makes every agent strictly better off.

    The agents are the tasks that have a deal with some server plus the
    servers holding at least one task.
    """
    tasks = sorted(t for t, servers in prefs.task_prefs.items() if servers)
    if (
        len(tasks) > MAX_PARETO_TASKS
        or len(prefs.server_prefs) > MAX_PARETO_SERVERS
    ):
        raise InstanceTooLarge(
            f"Cannot enumerate {len(tasks)} tasks over "
            f"{len(prefs.server_prefs)} servers"
        )
    agents = [s for s, held in matching.matched.items() if held]
    if not tasks and not agents:
        return True

    current = {t: matching.assignment.get(t) for t in tasks}
    task_now, server_now = _utilities(current, prefs)
    options = [[None] + prefs.task_prefs[t] for t in tasks]
    for choice in itertools.product(*options):
        alternative = dict(zip(tasks, choice))
        if not _feasible(alternative, prefs, matching):
            continue
        task_alt, server_alt = _utilities(alternative, prefs)
        if all(task_alt[t] > task_now[t] for t in tasks) and all(
            server_alt[s] > server_now[s] for s in agents
        ):
            LOG.debug(f"Assignment {alternative} dominates the matching")
            return False
    return True
