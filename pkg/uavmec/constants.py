GHZ = 1e9
MBIT = 1e6

# positions accepted by the UAV kinematic checks may overshoot by this much
KINEMATIC_TOLERANCE = 1e-6

# local execution target, servers are numbered from 1
LOCAL = 0

TRACE_COLUMNS = [
    "slot",
    "strategy",
    "seed",
    "U_t",
    "qoe_t",
    "revenue_t",
    "generated",
    "completed",
    "dropped",
]
TRAJECTORY_COLUMNS = ["epoch", "uav_id", "x", "y"]
# 17 significant digits round-trips every double
FLOAT_FORMAT = "%.17g"
