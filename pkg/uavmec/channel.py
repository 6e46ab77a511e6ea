import dataclasses
import enum
import logging
import math
from typing import Optional, Union

import numpy as np

from uavmec import scenario
from uavmec import utils

LOG = logging.getLogger(__name__)

# the reference distance of the path-loss gain
MIN_DISTANCE = 1.0


class ChannelMode(enum.Enum):
    EXPECTED = "expected"
    SAMPLED = "sampled"


@dataclasses.dataclass(frozen=True)
class ChannelParams:
    bandwidth: float = 1e6
    noise_power: float = utils.dbm_to_watt(-174.0) * 1e6
    terrestrial_d1: float = 18.0
    terrestrial_d2: float = 36.0
    aerial_a: float = 10.0
    aerial_b: float = 0.6
    exponent_los: float = 2.2
    exponent_nlos: float = 3.5
    reference_gain: float = 1e-4
    nakagami_los: float = 3.0
    nakagami_nlos: float = 1.0
    shadow_los: float = 4.0
    shadow_nlos: float = 8.2
    mode: ChannelMode = ChannelMode.EXPECTED

    def __post_init__(self) -> None:
        if self.bandwidth <= 0 or self.noise_power <= 0:
            raise ValueError("bandwidth and noise power must be positive")
        if self.aerial_a <= 0 or self.aerial_b <= 0:
            raise ValueError("aerial LoS fit constants must be positive")
        if self.exponent_los > self.exponent_nlos:
            raise ValueError("the LoS exponent cannot exceed the NLoS one")
        if min(self.nakagami_los, self.nakagami_nlos) < 0.5:
            raise ValueError("Nakagami shape must be at least 0.5")


@dataclasses.dataclass(frozen=True)
class LinkGeometry:
    horizontal_distance: float
    altitude: float = 0.0
    aerial: bool = False

    @property
    def distance(self) -> float:
        return max(
            MIN_DISTANCE, math.hypot(self.horizontal_distance, self.altitude)
        )


@dataclasses.dataclass(frozen=True)
class LinkState:
    md_id: int
    server_id: int
    horizontal_distance: float
    los_probability: float
    gain: float
    rate: float
    distance: float = 0.0


def los_prob_terrestrial(distance: float, params: ChannelParams) -> float:
    if distance < 0:
        raise ValueError(f"negative distance {distance}")
    decay = math.exp(-distance / params.terrestrial_d2)
    near = 1.0 if distance == 0 else min(params.terrestrial_d1 / distance, 1.0)
    return near * (1.0 - decay) + decay


def los_prob_aerial(
    distance: float, altitude: float, params: ChannelParams
) -> float:
    if altitude <= 0 or distance < 0:
        raise ValueError(
            f"invalid aerial geometry d={distance} H={altitude}"
        )
    elevation = math.degrees(math.atan2(altitude, distance))
    return 1.0 / (
        1.0
        + params.aerial_a
        * math.exp(-params.aerial_b * (elevation - params.aerial_a))
    )


def link_geometry(
    md: scenario.MobileDevice, server: scenario.EdgeServer
) -> LinkGeometry:
    return LinkGeometry(
        horizontal_distance=float(
            np.linalg.norm(md.position - server.position)
        ),
        altitude=server.altitude,
        aerial=server.aerial,
    )


def los_probability(geometry: LinkGeometry, params: ChannelParams) -> float:
    if geometry.aerial:
        return los_prob_aerial(
            geometry.horizontal_distance, geometry.altitude, params
        )
    return los_prob_terrestrial(geometry.horizontal_distance, params)


def path_gain(
    distance: float, exponent: float, params: ChannelParams
) -> float:
    return params.reference_gain * max(MIN_DISTANCE, distance) ** -exponent


def sample_fading(
    rng: np.random.Generator,
    nakagami: float,
    shadow_db: float,
    size: Optional[int] = None,
) -> Union[float, np.ndarray]:
    """Mean-one small-scale fading power times mean-one shadowing."""
    power = rng.gamma(nakagami, 1.0 / nakagami, size=size)
    shadow_mean = -(shadow_db**2) * math.log(10.0) / 20.0
    shadow = 10.0 ** (rng.normal(shadow_mean, shadow_db, size=size) / 10.0)
    return power * shadow


def channel_gain(
    geometry: LinkGeometry,
    params: ChannelParams,
    rng: Optional[np.random.Generator] = None,
) -> float:
    los = los_probability(geometry, params)
    gain_los = path_gain(geometry.distance, params.exponent_los, params)
    gain_nlos = path_gain(geometry.distance, params.exponent_nlos, params)
    if params.mode == ChannelMode.SAMPLED:
        if rng is None:
            raise ValueError("sampled channel mode needs a random stream")
        gain_los *= float(
            sample_fading(rng, params.nakagami_los, params.shadow_los)
        )
        gain_nlos *= float(
            sample_fading(rng, params.nakagami_nlos, params.shadow_nlos)
        )
    return los * gain_los + (1.0 - los) * gain_nlos


def data_rate(
    bandwidth: float, power: float, gain: float, noise_power: float
) -> float:
    return bandwidth * math.log2(1.0 + power * gain / noise_power)


def evaluate_link(
    md: scenario.MobileDevice,
    server: scenario.EdgeServer,
    params: ChannelParams,
    rng: Optional[np.random.Generator] = None,
) -> LinkState:
    geometry = link_geometry(md, server)
    gain = channel_gain(geometry, params, rng)
    return LinkState(
        md_id=md.id,
        server_id=server.id,
        horizontal_distance=geometry.horizontal_distance,
        los_probability=los_probability(geometry, params),
        gain=gain,
        rate=data_rate(
            params.bandwidth, md.transmit_power, gain, params.noise_power
        ),
        distance=geometry.distance,
    )
