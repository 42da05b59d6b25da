"""World model: vehicles, nearest-neighbor perception, scripted HDV motion,
collision detection and time-to-collision.

Perception follows the nearest-vehicle rule: each CAV senses only the nearest
front vehicle in its current lane and the nearest front/back vehicles in the
target lane, with lane membership decided by the nearest lane center.
HDVs follow open-loop piecewise-acceleration scripts with an optional smooth
lane-change maneuver; they ignore every other vehicle.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .certificates import Neighborhood, NeighborObservation
from .vehicle import LaneGeometry, VehicleGeometry, VehicleState


# ---------------------------------------------------------------------------
# scripted HDVs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HdvSegment:
    start: float                      # segment start time [s]
    accel: float                      # acceleration [m/s^2]
    v_target: Optional[float] = None  # stop accelerating at this speed


@dataclass(frozen=True)
class LaneManeuver:
    start: float       # maneuver start time [s]
    target_lane: int
    duration: float    # lateral blend duration [s]


@dataclass(frozen=True)
class HdvScript:
    v0: float
    y0: float
    segments: tuple[HdvSegment, ...] = ()
    maneuver: Optional[LaneManeuver] = None

    def __post_init__(self):
        starts = [s.start for s in self.segments]
        if starts != sorted(starts):
            raise ValueError("segments must be time-ordered")
        if self.v0 < 0:
            raise ValueError("speeds must be nonnegative")


def _segment_speed(v_in: float, seg: HdvSegment, dt: float) -> float:
    v = v_in + seg.accel * dt
    if seg.v_target is not None:
        if seg.accel > 0:
            v = min(v, seg.v_target)
        elif seg.accel < 0:
            v = max(v, seg.v_target)
    return max(v, 0.0)


def hdv_speed(script: HdvScript, t: float, lanes: LaneGeometry = LaneGeometry()) -> tuple[float, float]:
    """Speed and lateral position of a scripted HDV at time t (closed form)."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    v = script.v0
    boundaries = [s.start for s in script.segments] + [np.inf]
    for seg, nxt in zip(script.segments, boundaries[1:]):
        if t <= seg.start:
            break
        v = _segment_speed(v, seg, min(t, nxt) - seg.start)
    return v, _lateral(script, t, lanes)[0]


def _quintic(tau: float) -> tuple[float, float]:
    """Smooth monotone blend s(tau) on [0, 1] and its derivative."""
    s = 10 * tau**3 - 15 * tau**4 + 6 * tau**5
    ds = 30 * tau**2 - 60 * tau**3 + 30 * tau**4
    return s, ds


def _lateral(script: HdvScript, t: float, lanes: LaneGeometry) -> tuple[float, float]:
    """(y, dy/dt) of the script at time t."""
    m = script.maneuver
    if m is None or t <= m.start:
        return script.y0, 0.0
    y1 = lanes.lane_center(m.target_lane)
    if t >= m.start + m.duration:
        return y1, 0.0
    tau = (t - m.start) / m.duration
    s, ds = _quintic(tau)
    return script.y0 + (y1 - script.y0) * s, (y1 - script.y0) * ds / m.duration


def hdv_state(script: HdvScript, t: float, x: float, lanes: LaneGeometry) -> VehicleState:
    """Full HDV pose at time t for a given integrated longitudinal position."""
    v, _ = hdv_speed(script, t, lanes)
    y, ydot = _lateral(script, t, lanes)
    psi = float(np.arctan2(ydot, max(v, 1e-9))) if ydot else 0.0
    return VehicleState(x=x, y=y, psi=psi, v=v)


# ---------------------------------------------------------------------------
# world container and perception
# ---------------------------------------------------------------------------

@dataclass
class WorldVehicle:
    id: str
    kind: str  # "cav" | "hdv"
    state: VehicleState
    geom: VehicleGeometry = field(default_factory=VehicleGeometry)
    script: Optional[HdvScript] = None

    @property
    def is_cav(self) -> bool:
        return self.kind == "cav"


def _observe(vehicle: WorldVehicle, ego_index: int, slot: str) -> NeighborObservation:
    s = vehicle.state
    return NeighborObservation(
        x=s.x, y=s.y, psi=s.psi, v=s.v,
        index_pair=(ego_index, slot),
        vehicle_id=vehicle.id,
        is_cav=vehicle.is_cav,
    )


def perceive(
    ego_id: str,
    vehicles: dict[str, WorldVehicle],
    target_lane: int,
    lanes: LaneGeometry,
    ego_index: int = 0,
) -> Neighborhood:
    """Nearest front vehicle in the ego's lane plus the nearest front/back
    vehicles in the target lane."""
    ego = vehicles[ego_id]
    current = lanes.lane_of(ego.state.y)

    fc = ft = bt = None
    for other in vehicles.values():
        if other.id == ego_id:
            continue
        lane = lanes.lane_of(other.state.y)
        dx = other.state.x - ego.state.x
        if lane == current and dx > 0 and (fc is None or dx < fc[0]):
            fc = (dx, other)
        if lane == target_lane and dx > 0 and (ft is None or dx < ft[0]):
            ft = (dx, other)
        if lane == target_lane and dx < 0 and (bt is None or -dx < -bt[0]):
            bt = (dx, other)

    return Neighborhood(
        fc=_observe(fc[1], ego_index, "fc") if fc else None,
        ft=_observe(ft[1], ego_index, "ft") if ft else None,
        bt=_observe(bt[1], ego_index, "bt") if bt else None,
    )


# ---------------------------------------------------------------------------
# collision detection and TTC
# ---------------------------------------------------------------------------

def footprint(state: VehicleState, geom: VehicleGeometry) -> np.ndarray:
    """Corners of the oriented bounding rectangle, 4x2.

    The body spans [-l_rc, +l_fc] longitudinally and +-w/2 laterally around
    the c.g., rotated by the heading.
    """
    local = np.array(
        [
            [geom.l_fc, geom.w / 2],
            [geom.l_fc, -geom.w / 2],
            [-geom.l_rc, -geom.w / 2],
            [-geom.l_rc, geom.w / 2],
        ]
    )
    c, s = np.cos(state.psi), np.sin(state.psi)
    rot = np.array([[c, -s], [s, c]])
    return local @ rot.T + np.array([state.x, state.y])


def _separated(a: np.ndarray, b: np.ndarray) -> bool:
    """Separating-axis test for two convex quadrilaterals."""
    for rect in (a, b):
        for i in range(4):
            edge = rect[(i + 1) % 4] - rect[i]
            axis = np.array([-edge[1], edge[0]])
            pa = a @ axis
            pb = b @ axis
            if pa.max() < pb.min() or pb.max() < pa.min():
                return True
    return False


def detect_collisions(vehicles: dict[str, WorldVehicle]) -> list[tuple[str, str]]:
    """All overlapping vehicle pairs in the snapshot (order-normalized)."""
    ids = sorted(vehicles)
    rects = {vid: footprint(vehicles[vid].state, vehicles[vid].geom) for vid in ids}
    out = []
    for i, vid_a in enumerate(ids):
        for vid_b in ids[i + 1:]:
            # cheap reject before the axis test
            if abs(vehicles[vid_a].state.x - vehicles[vid_b].state.x) > 15.0:
                continue
            if not _separated(rects[vid_a], rects[vid_b]):
                out.append((vid_a, vid_b))
    return out


def ttc(ego: WorldVehicle, neighbor: WorldVehicle) -> float:
    """Bumper-to-bumper gap over closing speed; +inf when not closing."""
    if neighbor.state.x >= ego.state.x:
        gap = (neighbor.state.x - neighbor.geom.l_rc) - (ego.state.x + ego.geom.l_fc)
        closing = ego.state.v - neighbor.state.v
    else:
        gap = (ego.state.x - ego.geom.l_rc) - (neighbor.state.x + neighbor.geom.l_fc)
        closing = neighbor.state.v - ego.state.v
    if closing <= 0.0:
        return float("inf")
    return max(gap, 0.0) / closing


def min_pairwise_ttc(vehicles: dict[str, WorldVehicle]) -> float:
    """Smallest TTC among laterally overlapping pairs in the snapshot."""
    ids = sorted(vehicles)
    best = float("inf")
    for i, vid_a in enumerate(ids):
        for vid_b in ids[i + 1:]:
            a, b = vehicles[vid_a], vehicles[vid_b]
            if abs(a.state.y - b.state.y) >= (a.geom.w + b.geom.w) / 2:
                continue
            best = min(best, ttc(a, b))
    return best
