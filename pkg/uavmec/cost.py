"""Delays, energies and the utilities of MDs, servers and the system."""

import collections
import dataclasses
import logging
import math
from typing import Dict, Iterable, List, Optional

from uavmec import constants
from uavmec import scenario

LOG = logging.getLogger(__name__)


@dataclasses.dataclass(frozen=True)
class Deal:
    md_id: int
    server_id: int
    task_id: int
    allocated_cycles: float
    # currency per GHz
    unit_price: float
    md_utility: float
    server_utility: float
    delay: float
    upload_energy: float
    server_energy: float
    rounds: int = 1
    proposer: str = "md"

    @property
    def payment(self) -> float:
        return payment(self.allocated_cycles, self.unit_price)


@dataclasses.dataclass(frozen=True)
class OffloadDecision:
    task_id: int
    md_id: int
    target: int
    md_utility: float
    delay: float
    energy: float
    server_utility: float = 0.0
    deal: Optional[Deal] = None

    @property
    def local(self) -> bool:
        return self.target == constants.LOCAL

    def indicators(self, server_count: int) -> List[int]:
        """The binary offloading vector over local and every server."""
        return [int(n == self.target) for n in range(server_count + 1)]


def payment(allocation: float, unit_price: float) -> float:
    return allocation / constants.GHZ * unit_price


def local_delay(task: scenario.Task, cpu_capacity: float) -> float:
    return task.cycles / cpu_capacity


def local_energy(
    task: scenario.Task, cpu_capacity: float, capacitance: float
) -> float:
    return capacitance * cpu_capacity**2 * task.cycles


def upload_delay(task: scenario.Task, rate: float) -> float:
    return task.size / rate


def edge_delay(task: scenario.Task, rate: float, allocation: float) -> float:
    return upload_delay(task, rate) + task.cycles / allocation


def upload_energy(task: scenario.Task, power: float, rate: float) -> float:
    return power * task.size / rate


def propulsion_power(speed: float, params: scenario.PropulsionParams) -> float:
    if speed < 0:
        raise ValueError(f"negative speed {speed}")
    blade = params.blade_profile * (1.0 + 3.0 * speed**2 / params.tip_speed**2)
    induced = params.induced * math.sqrt(
        math.sqrt(params.induced_velocity + speed**4 / 4.0) - speed**2 / 2.0
    )
    return blade + induced + params.parasite * speed**3


def propulsion_power_derivative(
    speed: float, params: scenario.PropulsionParams
) -> float:
    blade = 6.0 * params.blade_profile * speed / params.tip_speed**2
    root = math.sqrt(params.induced_velocity + speed**4 / 4.0)
    inner = root - speed**2 / 2.0
    induced = (
        params.induced
        * (speed**3 / (2.0 * root) - speed)
        / (2.0 * math.sqrt(inner))
    )
    return blade + induced + 3.0 * params.parasite * speed**2


def server_compute_energy(
    task: scenario.Task, allocation: float, server: scenario.EdgeServer
) -> float:
    return server.capacitance * allocation**2 * task.cycles


def server_energy(
    task: scenario.Task,
    allocation: float,
    server: scenario.EdgeServer,
    speed: float = 0.0,
    slot_duration: float = 0.1,
) -> float:
    energy = server_compute_energy(task, allocation, server)
    if isinstance(server, scenario.UavState):
        energy += propulsion_power(speed, server.propulsion) * slot_duration
    return energy


def satisfaction(delay: float, deadline: float) -> float:
    return math.log1p(max(0.0, deadline - delay)) / math.log1p(deadline)


def md_qoe(
    md: scenario.MobileDevice,
    task: scenario.Task,
    delay: float,
    energy: float,
    payment: float = 0.0,
) -> float:
    cost = energy / md.energy_cap + payment / md.budget
    return md.weight * satisfaction(delay, task.deadline) - (
        1.0 - md.weight
    ) * cost


def server_revenue(
    allocation: float,
    unit_price: float,
    energy: float,
    server: scenario.EdgeServer,
) -> float:
    reward = (allocation / server.core_capacity) * (
        unit_price / server.price_cap
    )
    return (
        server.weight * reward
        - (1.0 - server.weight) * energy / server.energy_cap
    )


def system_utility_slot(decisions: Iterable[OffloadDecision]) -> float:
    total = 0.0
    for decision in decisions:
        total += decision.md_utility + decision.server_utility
    return total


def shared_propulsion_revenue(
    decisions: Iterable[OffloadDecision],
    servers: Dict[int, scenario.EdgeServer],
    slot_duration: float,
) -> float:
    """Server revenue with one propulsion charge per UAV per slot.

    Each UAV's propulsion energy for the slot is split evenly among the tasks
    it admitted in that slot instead of being charged to every one of them.
    """
    admitted: Dict[int, List[Deal]] = collections.defaultdict(list)
    for decision in decisions:
        if decision.deal is not None:
            admitted[decision.deal.server_id].append(decision.deal)

    total = 0.0
    for server_id, deals in sorted(admitted.items()):
        server = servers[server_id]
        for deal in deals:
            energy = deal.server_energy
            if isinstance(server, scenario.UavState):
                flight = (
                    propulsion_power(server.speed, server.propulsion)
                    * slot_duration
                )
                energy += flight / len(deals) - flight
            total += server_revenue(
                deal.allocated_cycles, deal.unit_price, energy, server
            )
    return total
