"""Quasi-static rope simulator with floating grippers."""

from glsig.sim.simulator import (
    ExcessVelocity,
    NotGrasping,
    OutOfReach,
    PathBlocked,
    RejectedOverlap,
    Simulator,
)
from glsig.sim.state import (
    Attach,
    Box,
    Capsule,
    GripperState,
    OutOfRange,
    RopeState,
    SimError,
    SimParams,
    SimState,
    WorldConfig,
    geodesic,
    l_to_index,
    p_of_l,
    rope_between,
)

__all__ = [
    "Attach", "Box", "Capsule", "ExcessVelocity", "GripperState", "NotGrasping", "OutOfRange",
    "OutOfReach", "PathBlocked", "RejectedOverlap", "RopeState", "SimError", "SimParams",
    "SimState", "Simulator", "WorldConfig", "geodesic", "l_to_index", "p_of_l", "rope_between",
]
