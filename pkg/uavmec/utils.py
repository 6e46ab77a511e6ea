import math
import time


def wall_clock() -> float:
    # needs to wrap it, so we can mock in during test
    return time.perf_counter()


def dbm_to_watt(dbm: float) -> float:
    return math.pow(10.0, (dbm - 30.0) / 10.0)


def watt_to_dbm(watt: float) -> float:
    return 10.0 * math.log10(watt) + 30.0


def db_to_linear(db: float) -> float:
    return math.pow(10.0, db / 10.0)


def slots_for(duration: float, slot_duration: float) -> int:
    """Number of whole slots needed to cover the duration, at least one."""
    # guard against 0.3 / 0.1 == 3.0000000000000004
    return max(1, math.ceil(duration / slot_duration - 1e-9))
