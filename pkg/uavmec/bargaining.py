import dataclasses
import enum
import logging
import math
from typing import Tuple

from scipy import optimize  # type: ignore

from uavmec import channel
from uavmec import constants
from uavmec import cost
from uavmec import scenario

LOG = logging.getLogger(__name__)


class BargainingError(Exception):
    def __init__(self, msg):
        self.msg = msg
        super().__init__(msg)

    def __str__(self):
        return self.msg


class NoViableTrade(BargainingError):
    def __init__(self, msg, surplus: "PriceSurplus"):
        super().__init__(msg)
        self.surplus = surplus


class DegenerateDiscounts(BargainingError):
    pass


class InfeasibleAllocation(BargainingError):
    pass


class NoDeal(BargainingError):
    def __init__(self, msg, rounds: int = 0):
        super().__init__(msg)
        self.rounds = rounds


class Proposer(enum.Enum):
    MD = "md"
    SERVER = "server"


@dataclasses.dataclass(frozen=True)
class BargainingParams:
    max_rounds: int = 100
    # alternating-offer horizon T^b in rounds
    horizon: int = 2
    # stands in for an unbounded price ceiling
    ceiling_sentinel: float = 1e9
    relative_tolerance: float = 1e-6

    def __post_init__(self) -> None:
        if self.max_rounds < 1 or self.horizon < 1:
            raise ValueError("bargaining needs at least one round")


@dataclasses.dataclass(frozen=True)
class PriceSurplus:
    floor: float
    ceiling: float

    @property
    def surplus(self) -> float:
        return self.ceiling - self.floor

    @property
    def viable(self) -> bool:
        return self.surplus > 0 and self.floor >= 0


@dataclasses.dataclass(frozen=True)
class Partitions:
    # (proposer share, responder share) when the MD opens
    md_first: Tuple[float, float]
    # (proposer share, responder share) when the server opens
    server_first: Tuple[float, float]

    def md_share(self, proposer: Proposer) -> float:
        if proposer == Proposer.MD:
            return self.md_first[0]
        return self.server_first[1]


@dataclasses.dataclass(frozen=True)
class BargainState:
    iteration: int
    max_rounds: int
    md_discount: float
    server_discount: float
    horizon: int
    proposer: Proposer
    partitions: Partitions


@dataclasses.dataclass(frozen=True)
class CapacityView:
    """What a negotiation may read about a server in the current slot."""

    server_id: int
    idle_cores: int
    available_cycles: float
    speed: float = 0.0
    slot_duration: float = 0.1

    @classmethod
    def of(
        cls, server: scenario.EdgeServer, slot: int, slot_duration: float
    ) -> "CapacityView":
        speed = server.speed if isinstance(server, scenario.UavState) else 0.0
        return cls(
            server_id=server.id,
            idle_cores=server.idle_cores(slot),
            available_cycles=server.available_cycles(slot),
            speed=speed,
            slot_duration=slot_duration,
        )


def _clamp_unit(value: float) -> float:
    return min(1.0, max(0.0, value))


def discount_factors(
    task: scenario.Task, rate: float, allocation: float
) -> Tuple[float, float]:
    md = _clamp_unit(1.0 - task.size / (rate * task.deadline))
    server = _clamp_unit(1.0 - task.cycles / (allocation * task.deadline))
    return md, server


def rubinstein_partition(
    proposer_discount: float, responder_discount: float, horizon: int
) -> Tuple[float, float]:
    """Subgame-perfect split of a unit surplus under a finite horizon.

    Returns the (proposer, responder) shares. They always sum to one.
    """
    product = proposer_discount * responder_discount
    if math.isclose(product, 1.0):
        raise DegenerateDiscounts(
            "both parties are fully patient, the partition is undefined"
        )
    tail = product ** math.ceil(horizon / 2)
    impatience = 1.0 - proposer_discount
    proposer = proposer_discount - impatience * (1.0 - tail) / (1.0 - product)
    responder = impatience * (2.0 - product - tail) / (1.0 - product)
    return proposer, responder


def partitions_for(
    md_discount: float, server_discount: float, horizon: int
) -> Partitions:
    return Partitions(
        md_first=rubinstein_partition(md_discount, server_discount, horizon),
        server_first=rubinstein_partition(
            server_discount, md_discount, horizon
        ),
    )


def price_bounds(
    md: scenario.MobileDevice,
    server: scenario.EdgeServer,
    task: scenario.Task,
    allocation: float,
    link: channel.LinkState,
    capacity: CapacityView,
    params: BargainingParams = BargainingParams(),
) -> PriceSurplus:
    if allocation <= 0 or link.rate <= 0:
        raise ValueError("price bounds need a positive allocation and rate")

    if server.weight <= 0:
        floor = math.inf
    else:
        energy = cost.server_energy(
            task, allocation, server, capacity.speed, capacity.slot_duration
        )
        floor = (
            (1.0 - server.weight)
            * energy
            * server.price_cap
            * server.core_capacity
            / (server.weight * server.energy_cap * allocation)
        )

    if md.weight >= 1:
        ceiling = params.ceiling_sentinel
    else:
        delay = cost.edge_delay(task, link.rate, allocation)
        margin = md.weight * cost.satisfaction(delay, task.deadline) / (
            1.0 - md.weight
        ) - md.transmit_power * task.size / (link.rate * task.deadline)
        ceiling = min(
            margin * md.budget * constants.GHZ / allocation,
            params.ceiling_sentinel,
        )

    surplus = PriceSurplus(floor=floor, ceiling=ceiling)
    if not surplus.viable:
        raise NoViableTrade(
            f"No price surplus for task {task.id} on server {server.id}: "
            f"floor {floor:.6g} ceiling {ceiling:.6g}",
            surplus,
        )
    return surplus


def optimal_price(
    surplus: PriceSurplus, partitions: Partitions, proposer: Proposer
) -> float:
    price = surplus.ceiling - surplus.surplus * partitions.md_share(proposer)
    return min(surplus.ceiling, max(surplus.floor, price))


def _md_utility_at(
    md: scenario.MobileDevice,
    task: scenario.Task,
    rate: float,
    allocation: float,
    price: float,
) -> float:
    return cost.md_qoe(
        md,
        task,
        cost.edge_delay(task, rate, allocation),
        cost.upload_energy(task, md.transmit_power, rate),
        cost.payment(allocation, price),
    )


def allocation_box(
    md: scenario.MobileDevice,
    server: scenario.EdgeServer,
    task: scenario.Task,
    price: float,
    link: channel.LinkState,
    capacity: CapacityView,
) -> Tuple[float, float]:
    slack = task.deadline - cost.upload_delay(task, link.rate)
    if slack <= 0:
        raise InfeasibleAllocation(
            f"Uploading task {task.id} alone misses its deadline"
        )
    lower = task.cycles / slack
    upper = min(capacity.available_cycles, server.core_capacity)
    if price > 0:
        upper = min(upper, md.budget * constants.GHZ / price)
    if lower > upper:
        raise InfeasibleAllocation(
            f"Task {task.id} needs {lower:.6g} cycles/s but server "
            f"{server.id} can sell at most {upper:.6g} at price {price:.6g}"
        )
    return lower, upper


def optimal_allocation(
    md: scenario.MobileDevice,
    server: scenario.EdgeServer,
    task: scenario.Task,
    price: float,
    link: channel.LinkState,
    capacity: CapacityView,
    params: BargainingParams = BargainingParams(),
) -> float:
    lower, upper = allocation_box(md, server, task, price, link, capacity)
    if upper - lower <= params.relative_tolerance * upper:
        return upper

    def utility(f: float) -> float:
        return _md_utility_at(md, task, link.rate, f, price)

    result = optimize.minimize_scalar(
        lambda f: -utility(f),
        bounds=(lower, upper),
        method="bounded",
        options={"xatol": params.relative_tolerance * upper},
    )
    # the bounded search never evaluates the box ends themselves
    candidates = [float(result.x), lower, upper]
    return max(candidates, key=utility)


def select_proposer(md_utility: float, server_utility: float) -> Proposer:
    if md_utility <= 0 < server_utility:
        return Proposer.SERVER
    return Proposer.MD


def negotiate(
    md: scenario.MobileDevice,
    server: scenario.EdgeServer,
    task: scenario.Task,
    link: channel.LinkState,
    capacity: CapacityView,
    params: BargainingParams = BargainingParams(),
) -> cost.Deal:
    """Alternate price offers and allocation updates until both sides gain.

    The price comes from the Rubinstein split of the current surplus and the
    allocation from the MD's best response to that price. Raises NoDeal if
    the sides do not agree within the round cap.
    """
    if capacity.idle_cores < 1 or capacity.available_cycles <= 0:
        raise NoDeal(f"Server {server.id} has no idle core", rounds=0)

    allocation = min(capacity.available_cycles, server.core_capacity)
    proposer = Proposer.MD
    for iteration in range(1, params.max_rounds + 1):
        try:
            surplus = price_bounds(
                md, server, task, allocation, link, capacity, params
            )
            md_discount, server_discount = discount_factors(
                task, link.rate, allocation
            )
            state = BargainState(
                iteration=iteration,
                max_rounds=params.max_rounds,
                md_discount=md_discount,
                server_discount=server_discount,
                horizon=params.horizon,
                proposer=proposer,
                partitions=partitions_for(
                    md_discount, server_discount, params.horizon
                ),
            )
            price = optimal_price(surplus, state.partitions, proposer)
            viable = True
        except NoViableTrade as e:
            # the server quotes its reservation price and the MD answers
            price = min(e.surplus.floor, server.price_cap)
            viable = False
        except DegenerateDiscounts as e:
            raise NoDeal(str(e), rounds=iteration) from e

        delay = cost.edge_delay(task, link.rate, allocation)
        energy = cost.upload_energy(task, md.transmit_power, link.rate)
        paid = cost.payment(allocation, price)
        md_utility = cost.md_qoe(md, task, delay, energy, paid)
        spent = cost.server_energy(
            task, allocation, server, capacity.speed, capacity.slot_duration
        )
        server_utility = cost.server_revenue(allocation, price, spent, server)

        if (
            viable
            and md_utility > 0
            and server_utility > 0
            and paid <= md.budget
            and delay <= task.deadline
        ):
            LOG.debug(
                f"Task {task.id} agreed with server {server.id} after "
                f"{iteration} rounds: f={allocation:.6g} p={price:.6g}"
            )
            return cost.Deal(
                md_id=md.id,
                server_id=server.id,
                task_id=task.id,
                allocated_cycles=allocation,
                unit_price=price,
                md_utility=md_utility,
                server_utility=server_utility,
                delay=delay,
                upload_energy=energy,
                server_energy=spent,
                rounds=iteration,
                proposer=proposer.value,
            )

        next_proposer = select_proposer(md_utility, server_utility)
        try:
            next_allocation = optimal_allocation(
                md, server, task, price, link, capacity, params
            )
        except InfeasibleAllocation as e:
            raise NoDeal(str(e), rounds=iteration) from e

        stalled = math.isclose(
            next_allocation, allocation, rel_tol=params.relative_tolerance
        ) and (not viable or next_proposer == proposer)
        if stalled:
            raise NoDeal(
                f"Negotiation of task {task.id} with server {server.id} "
                f"stalled after {iteration} rounds",
                rounds=iteration,
            )
        allocation = next_allocation
        proposer = next_proposer

    raise NoDeal(
        f"No consensus for task {task.id} with server {server.id} within "
        f"{params.max_rounds} rounds",
        rounds=params.max_rounds,
    )
