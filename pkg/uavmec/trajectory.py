"""Per-epoch UAV trajectory control by successive convex approximation.

Every iteration replaces each expected uplink rate by its tangent in the
squared horizontal distance, which is a global lower bound, and maximises the
resulting objective over the kinematic feasible set of the next epoch: the
intersection of the one-epoch displacement disk and the disk of positions
from which the destination is still reachable. The problem separates across
UAVs, so every UAV is solved on its own in two dimensions.
"""

import dataclasses
import logging
import math
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from uavmec import channel
from uavmec import cost
from uavmec import scenario

LOG = logging.getLogger(__name__)

# containment slack of the lens projection
LENS_TOLERANCE = 1e-9
ARMIJO = 1e-4


class TrajectoryError(Exception):
    def __init__(self, msg):
        self.msg = msg
        super().__init__(msg)

    def __str__(self):
        return self.msg


class InfeasibleEpoch(TrajectoryError):
    pass


class MaxItersExceeded(TrajectoryError):
    def __init__(self, msg, result: "TrajectoryResult"):
        super().__init__(msg)
        self.result = result


@dataclasses.dataclass(frozen=True)
class TrajectoryParams:
    tolerance: float = 1e-3
    max_iterations: int = 50
    ascent_iterations: int = 500
    step_tolerance: float = 1e-6

    def __post_init__(self) -> None:
        if self.tolerance < 0 or self.max_iterations < 1:
            raise ValueError("invalid SCA stopping rule")


@dataclasses.dataclass(frozen=True)
class RateModel:
    """Expected uplink rate towards a UAV as a function of its position."""

    md_position: np.ndarray
    altitude: float
    bandwidth: float
    snr_scale: float
    exponent: float

    @classmethod
    def from_link(
        cls,
        md: scenario.MobileDevice,
        uav: scenario.UavState,
        params: channel.ChannelParams,
    ) -> "RateModel":
        geometry = channel.link_geometry(md, uav)
        los = channel.los_probability(geometry, params)
        mixture = los + (1.0 - los) * geometry.distance ** (
            params.exponent_los - params.exponent_nlos
        )
        return cls(
            md_position=np.array(md.position, dtype=float),
            altitude=uav.altitude,
            bandwidth=params.bandwidth,
            snr_scale=md.transmit_power
            * params.reference_gain
            * mixture
            / params.noise_power,
            exponent=params.exponent_los,
        )

    def squared_distance(self, position: np.ndarray) -> float:
        offset = np.asarray(position, dtype=float) - self.md_position
        return float(offset @ offset)

    def snr(self, squared_distance: float) -> float:
        return self.snr_scale * (self.altitude**2 + squared_distance) ** (
            -self.exponent / 2.0
        )

    def rate(self, position: np.ndarray) -> float:
        return self.bandwidth * math.log2(
            1.0 + self.snr(self.squared_distance(position))
        )

    def slope(self, squared_distance: float) -> float:
        """Derivative of the rate in the squared horizontal distance."""
        snr = self.snr(squared_distance)
        return (
            -self.bandwidth
            * self.exponent
            / (2.0 * math.log(2.0))
            * snr
            / ((1.0 + snr) * (self.altitude**2 + squared_distance))
        )


def surrogate_rate(
    position: np.ndarray, local_point: np.ndarray, model: RateModel
) -> float:
    base = model.squared_distance(local_point)
    return model.rate(local_point) + model.slope(base) * (
        model.squared_distance(position) - base
    )


def minimal_phi(speed: float, params: scenario.PropulsionParams) -> float:
    """Smallest auxiliary value compatible with the induced-power bound."""
    return math.sqrt(
        math.sqrt(params.induced_velocity + speed**4 / 4.0) - speed**2 / 2.0
    )


def surrogate_phi(
    phi: float,
    velocity: np.ndarray,
    phi_hat: float,
    velocity_hat: np.ndarray,
    params: scenario.PropulsionParams,
) -> Tuple[float, float]:
    """Linearised phi^2 + v^2 at the local point and the bound residual.

    The residual is positive where the induced-power constraint is violated
    and infinite in hover.
    """
    velocity = np.asarray(velocity, dtype=float)
    velocity_hat = np.asarray(velocity_hat, dtype=float)
    bound = (
        phi_hat**2
        + 2.0 * phi_hat * (phi - phi_hat)
        + 2.0 * float(velocity_hat @ velocity)
        - float(velocity_hat @ velocity_hat)
    )
    speed_sq = float(velocity @ velocity)
    if speed_sq == 0.0:
        return bound, math.inf
    return bound, params.induced_velocity / speed_sq - bound


@dataclasses.dataclass(frozen=True)
class ServedTask:
    task_id: int
    size: float
    deadline: float
    # w / (1 + tau)
    theta0: float
    # mu / f, the computation delay
    theta1: float
    # (1 - w) P / E_max, the upload energy weight
    theta2: float
    rate: RateModel

    @classmethod
    def of(
        cls,
        task: scenario.Task,
        md: scenario.MobileDevice,
        deal: cost.Deal,
        rate: RateModel,
    ) -> "ServedTask":
        return cls(
            task_id=task.id,
            size=task.size,
            deadline=task.deadline,
            theta0=md.weight / (1.0 + task.deadline),
            theta1=task.cycles / deal.allocated_cycles,
            theta2=(1.0 - md.weight) * md.transmit_power / md.energy_cap,
            rate=rate,
        )


@dataclasses.dataclass(frozen=True)
class EpochProblem:
    uav_id: int
    position: np.ndarray
    destination: np.ndarray
    # one-epoch displacement bound
    step_radius: float
    # distance to the destination allowed at the end of the move
    reach_radius: float
    # epochs left including the one being planned
    epochs_left: int
    tasks: Tuple[ServedTask, ...]
    # (1 - w_j) / E_j_max, the propulsion energy weight
    theta3: float
    epoch_seconds: float
    slot_duration: float
    propulsion: scenario.PropulsionParams

    def speed(self, position: np.ndarray) -> float:
        return float(
            np.linalg.norm(np.asarray(position) - self.position)
            / self.epoch_seconds
        )

    def velocity(self, position: np.ndarray) -> np.ndarray:
        return (np.asarray(position) - self.position) / self.epoch_seconds


@dataclasses.dataclass
class ScaState:
    iteration: int
    local_point: np.ndarray
    phi: float
    objective: float
    tolerance: float


@dataclasses.dataclass
class TrajectoryResult:
    positions: Dict[int, np.ndarray]
    objectives: Dict[int, List[float]]
    iterations: int
    converged: bool


def epoch_problem(
    uav: scenario.UavState,
    served: Sequence[Tuple[scenario.Task, scenario.MobileDevice, cost.Deal]],
    channel_params: channel.ChannelParams,
    clock: scenario.Clock,
) -> EpochProblem:
    """The planning problem of one UAV at the end of the current epoch."""
    epoch = clock.epoch_index
    return EpochProblem(
        uav_id=uav.id,
        position=np.array(uav.position, dtype=float),
        destination=np.array(uav.destination, dtype=float),
        step_radius=uav.max_speed * clock.epoch_seconds,
        reach_radius=scenario.reach_radius(uav, clock, epoch + 1),
        epochs_left=clock.epoch_count - epoch,
        tasks=tuple(
            ServedTask.of(
                task, md, deal, RateModel.from_link(md, uav, channel_params)
            )
            for task, md, deal in served
        ),
        theta3=(1.0 - uav.weight) / uav.energy_cap,
        epoch_seconds=clock.epoch_seconds,
        slot_duration=clock.slot_duration,
        propulsion=uav.propulsion,
    )


def _project_disk(
    point: np.ndarray, center: np.ndarray, radius: float
) -> np.ndarray:
    offset = point - center
    distance = float(np.linalg.norm(offset))
    if distance <= radius:
        return point
    return center + offset * (radius / distance)


def _inside(point: np.ndarray, center: np.ndarray, radius: float) -> bool:
    return float(np.linalg.norm(point - center)) <= radius + LENS_TOLERANCE


def project_to_lens(point: np.ndarray, problem: EpochProblem) -> np.ndarray:
    """Euclidean projection onto the kinematically feasible set."""
    point = np.asarray(point, dtype=float)
    c1, r1 = problem.position, problem.step_radius
    c2, r2 = problem.destination, problem.reach_radius
    gap = float(np.linalg.norm(c2 - c1))
    if gap > r1 + r2 + LENS_TOLERANCE:
        raise InfeasibleEpoch(
            f"UAV {problem.uav_id} cannot reach its destination in time: "
            f"{gap:.6f} m away with {r1 + r2:.6f} m of travel left"
        )
    if _inside(point, c1, r1) and _inside(point, c2, r2):
        return point

    candidates = [
        p
        for p, other in (
            (_project_disk(point, c1, r1), (c2, r2)),
            (_project_disk(point, c2, r2), (c1, r1)),
        )
        if _inside(p, *other)
    ]
    if not candidates and gap > 0:
        along = (r1**2 - r2**2 + gap**2) / (2.0 * gap)
        half_chord = math.sqrt(max(0.0, r1**2 - along**2))
        axis = (c2 - c1) / gap
        normal = np.array([-axis[1], axis[0]])
        base = c1 + along * axis
        candidates = [base + half_chord * normal, base - half_chord * normal]
    if not candidates:
        return np.array(c2, dtype=float)
    return min(candidates, key=lambda p: float(np.linalg.norm(p - point)))


def straight_line_point(problem: EpochProblem) -> np.ndarray:
    return problem.position + (problem.destination - problem.position) / max(
        1, problem.epochs_left
    )


def epoch_objective(
    problem: EpochProblem,
    position: np.ndarray,
    local_point: Optional[np.ndarray] = None,
) -> float:
    """Trajectory-dependent share of the system utility for one UAV.

    With a local point the rates are replaced by their tangent lower bounds
    taken there.
    """
    flight = (
        problem.theta3
        * cost.propulsion_power(problem.speed(position), problem.propulsion)
        * problem.slot_duration
    )
    total = 0.0
    for task in problem.tasks:
        if local_point is None:
            rate = task.rate.rate(position)
        else:
            rate = surrogate_rate(position, local_point, task.rate)
        if rate <= 0:
            return -math.inf
        upload = task.size / rate
        total += (
            task.theta0
            * math.log1p(max(0.0, task.deadline - task.theta1 - upload))
            - task.theta2 * upload
            - flight
        )
    return total


def _objective_gradient(
    problem: EpochProblem, position: np.ndarray, local_point: np.ndarray
) -> np.ndarray:
    gradient = np.zeros(2)
    for task in problem.tasks:
        base = task.rate.squared_distance(local_point)
        slope = task.rate.slope(base)
        rate = surrogate_rate(position, local_point, task.rate)
        upload = task.size / rate
        margin = task.deadline - task.theta1 - upload
        d_rate = task.theta2 * task.size / rate**2
        if margin > 0:
            d_rate += task.theta0 * (task.size / rate**2) / (1.0 + margin)
        gradient += d_rate * slope * 2.0 * (position - task.rate.md_position)

    offset = position - problem.position
    distance = float(np.linalg.norm(offset))
    if distance > 0:
        d_power = cost.propulsion_power_derivative(
            problem.speed(position), problem.propulsion
        )
        gradient -= (
            len(problem.tasks)
            * problem.theta3
            * problem.slot_duration
            * d_power
            * offset
            / (distance * problem.epoch_seconds)
        )
    return gradient


def _ascend(
    problem: EpochProblem,
    start: np.ndarray,
    local_point: np.ndarray,
    params: TrajectoryParams,
) -> Tuple[np.ndarray, float]:
    position = project_to_lens(start, problem)
    value = epoch_objective(problem, position, local_point)
    if not math.isfinite(value):
        return position, value
    max_step = max(problem.step_radius, params.step_tolerance)
    step = max_step
    for _ in range(params.ascent_iterations):
        gradient = _objective_gradient(problem, position, local_point)
        norm = float(np.linalg.norm(gradient))
        if norm == 0.0:
            break
        direction = gradient / norm
        accepted = False
        while step >= params.step_tolerance:
            candidate = project_to_lens(position + step * direction, problem)
            candidate_value = epoch_objective(problem, candidate, local_point)
            gain = float(gradient @ (candidate - position))
            if candidate_value >= value + ARMIJO * gain and (
                candidate_value > value
            ):
                accepted = True
                break
            step /= 2.0
        if not accepted:
            break
        moved = float(np.linalg.norm(candidate - position))
        position, value = candidate, candidate_value
        step = min(2.0 * step, max_step)
        if moved < params.step_tolerance:
            break
    return position, value


def solve_epoch_subproblem(
    problem: EpochProblem,
    state: ScaState,
    params: TrajectoryParams = TrajectoryParams(),
) -> Tuple[np.ndarray, float]:
    """Maximise the surrogate objective built at the state's local point."""
    starts = [state.local_point, straight_line_point(problem)]
    best_position = project_to_lens(state.local_point, problem)
    best_value = epoch_objective(problem, best_position, state.local_point)
    for start in starts:
        position, value = _ascend(problem, start, state.local_point, params)
        if value > best_value:
            best_position, best_value = position, value

    _, residual = surrogate_phi(
        minimal_phi(problem.speed(best_position), problem.propulsion),
        problem.velocity(best_position),
        state.phi,
        problem.velocity(state.local_point),
        problem.propulsion,
    )
    LOG.debug(
        f"UAV {problem.uav_id} SCA step {state.iteration}: surrogate "
        f"{best_value:.9g}, induced-power residual {residual:.3g}"
    )
    return best_position, best_value


def _optimize_one(
    problem: EpochProblem, params: TrajectoryParams
) -> Tuple[np.ndarray, List[float], int, bool]:
    if not problem.tasks:
        position = project_to_lens(straight_line_point(problem), problem)
        return position, [0.0], 1, True

    start = project_to_lens(problem.position, problem)
    state = ScaState(
        iteration=0,
        local_point=start,
        phi=minimal_phi(problem.speed(start), problem.propulsion),
        objective=epoch_objective(problem, start),
        tolerance=params.tolerance,
    )
    objectives = [state.objective]
    best_position, best_value = start, state.objective
    for iteration in range(1, params.max_iterations + 1):
        state.iteration = iteration
        position, _ = solve_epoch_subproblem(problem, state, params)
        value = epoch_objective(problem, position)
        objectives.append(value)
        if value >= best_value:
            best_position, best_value = position, value
        previous = state.objective
        state.local_point = position
        state.phi = minimal_phi(problem.speed(position), problem.propulsion)
        state.objective = value
        if abs(value - previous) <= params.tolerance:
            return best_position, objectives, iteration, True
    return best_position, objectives, params.max_iterations, False


def optimize_trajectory(
    problems: Sequence[EpochProblem],
    params: TrajectoryParams = TrajectoryParams(),
    strict: bool = False,
) -> TrajectoryResult:
    """Plan the next-epoch position of every UAV.

    Reaching the iteration cap keeps the best iterate and logs a warning, or
    raises MaxItersExceeded carrying that result when strict is set.
    """
    result = TrajectoryResult(
        positions={}, objectives={}, iterations=0, converged=True
    )
    for problem in problems:
        position, objectives, iterations, converged = _optimize_one(
            problem, params
        )
        result.positions[problem.uav_id] = position
        result.objectives[problem.uav_id] = objectives
        result.iterations = max(result.iterations, iterations)
        result.converged = result.converged and converged

    if not result.converged:
        msg = (
            f"Trajectory control did not converge within "
            f"{params.max_iterations} iterations, keeping the best iterate"
        )
        if strict:
            raise MaxItersExceeded(msg, result)
        LOG.warning(msg)
    return result
