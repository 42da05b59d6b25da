"""Rule-based platoon coordination layer.

Each CAV carries one FSM state per tick, driven by five shared signals:
e (safe lane change), ps (prepare split), pj (prepare join), c (lane-change
command) and p (lane position progress).  The coordinator computes signals
from the previous tick's world snapshot, commits all transitions atomically,
schedules the split/join headway profiles and renumbers the platoon when the
lane changer departs.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Optional

from .certificates import (
    CbfParams,
    ClfParams,
    MissingNeighbor,
    Neighborhood,
    barrier_front,
    barrier_rear,
)
from .fsm_states import FsmState
from .vehicle import LaneGeometry, VehicleGeometry, VehicleState

log = logging.getLogger(__name__)

RETRY_DEBOUNCE_TICKS = 10   # consecutive safe ticks before a lane-change retry
P_COMPLETE_PSI = 0.05       # heading tolerance for p = 1 [rad]
JOIN_SETTLE_FRACTION = 0.05
SAFE_EVAL_SLACK = 0.1       # barrier tolerance for the e flag [m]; a vehicle
                            # pressed against an active barrier rides h = 0
                            # within one Euler step of slack


@dataclass
class SignalSet:
    e: int = 1      # 1 = safe lane change condition
    ps: int = 0     # 1 = preparing for a split
    pj: int = 0     # 1 = preparing for a join
    c: int = 0      # -1/0/+1 lane-change command (direction of lane index)
    p: float = 0.0  # 0 in original lane, 0.5 crossing, 1 in target lane


@dataclass
class HeadwayProfile:
    t0: float = 0.0
    mode: str = "hold"          # "split" | "join" | "hold"
    tau_min: float = 0.6
    tau_max: float = 1.4
    rate: float = 0.2           # headway slew rate [s/s]
    start_tau: float | None = None  # ramp origin; None = canonical endpoint

    def clamp(self, tau: float) -> float:
        return min(max(tau, self.tau_min), self.tau_max)


def headway(profile: HeadwayProfile, t_now: float) -> float:
    """Scheduled time headway.

    Split ramps up toward tau_max and join ramps down toward tau_min at the
    slew rate; hold keeps a constant value.  The canonical ramps start at
    0.6 s (split) and 1.4 s (join); a profile created mid-maneuver carries
    its current headway in start_tau so the schedule stays continuous.
    """
    if t_now < profile.t0:
        raise ValueError("t_now precedes the profile start")
    elapsed = t_now - profile.t0
    if profile.mode == "split":
        start = profile.clamp(profile.start_tau if profile.start_tau is not None else profile.tau_min)
        return min(start + profile.rate * elapsed, profile.tau_max)
    if profile.mode == "join":
        start = profile.clamp(profile.start_tau if profile.start_tau is not None else profile.tau_max)
        return max(start - profile.rate * elapsed, profile.tau_min)
    return profile.clamp(profile.start_tau if profile.start_tau is not None else profile.tau_min)


def lane_change_safe(ego: VehicleState, neighborhood: Neighborhood, cbf_params: CbfParams) -> int:
    """e = 1 iff every present lane-change barrier is nonnegative right now
    (up to one discretization step of slack)."""
    checks = (
        (barrier_front, neighborhood.fc, "fc"),
        (barrier_front, neighborhood.ft, "ft"),
        (barrier_rear, neighborhood.bt, "bt"),
    )
    for builder, neighbor, slot in checks:
        if neighbor is None or not neighbor.present:
            continue
        try:
            h, _ = builder(ego, neighbor, cbf_params, slot=slot)
        except MissingNeighbor:
            continue
        if h < -SAFE_EVAL_SLACK:
            return 0
    return 1


def transition(
    current: FsmState,
    signals: SignalSet,
    peer_signals: Optional[list[SignalSet]] = None,
) -> FsmState:
    """One deterministic step of the per-CAV state machine.

    Unlisted signal combinations keep the current state, which makes the map
    total.  Join completion is signalled by the coordinator clearing pj once
    the headway has contracted and spacing tracking has settled.
    """
    peers = peer_signals or []
    if current is FsmState.CAR_FOLLOWING:
        if signals.c != 0 and signals.e == 1:
            return FsmState.LANE_CHANGE
        if signals.ps == 1:
            return FsmState.SPLIT
    elif current is FsmState.LANE_CHANGE:
        if signals.p == 1.0:
            return FsmState.CAR_FOLLOWING
        if signals.e == 0:
            return FsmState.BACK_TO_INITIAL_LANE
    elif current is FsmState.BACK_TO_INITIAL_LANE:
        if signals.p == 0.0 and signals.e == 1 and signals.c != 0:
            return FsmState.LANE_CHANGE
    elif current is FsmState.SPLIT:
        if any(peer.p == 1.0 for peer in peers):
            return FsmState.JOIN
    elif current is FsmState.JOIN:
        if signals.pj == 0:
            return FsmState.CAR_FOLLOWING
    return current


def renumber(platoon: list[str], departed: str) -> list[str]:
    """Remove a departed CAV; followers shift up one slot.

    Unknown ids leave the order unchanged (with a warning record) so a stale
    command cannot corrupt the platoon.
    """
    if departed not in platoon:
        log.warning("renumber: departed CAV %r not in platoon %r", departed, platoon)
        return list(platoon)
    return [cav for cav in platoon if cav != departed]


# ---------------------------------------------------------------------------
# Coordinator
# ---------------------------------------------------------------------------

@dataclass
class ControlTargets:
    """Per-tick controller bindings resolved by the coordinator."""

    fsm: FsmState
    tau: float
    y_d: float
    leader_id: Optional[str]  # spacing-CLF binding
    peer_id: Optional[str]    # Split/Join barrier binding
    platoon_slot: bool = True  # formation standstill vs plain-following standstill


@dataclass
class FsmEvent:
    t: float
    cav: str
    source: FsmState
    target: FsmState


@dataclass
class _CavRuntime:
    fsm: FsmState = FsmState.CAR_FOLLOWING
    signals: SignalSet = field(default_factory=SignalSet)
    profile: HeadwayProfile = field(default_factory=HeadwayProfile)
    origin_lane: int = 0
    target_lane: Optional[int] = None
    safe_streak: int = 0
    departed: bool = False
    profile_ready: bool = False


@dataclass(frozen=True)
class LaneChangeCommand:
    cav: str
    direction: int  # +1 toward higher lane index, -1 toward lower
    time: float = 0.0


class PlatoonCoordinator:
    """Tracks FSM state, signals and headway schedules for one platoon.

    With cooperative=False the platoon machinery (split/join, headway
    scheduling, platoon leader bindings) is disabled and each CAV behaves as
    an isolated vehicle; only the commanded CAV still runs the lane-change
    states.
    """

    def __init__(
        self,
        platoon: list[str],
        command: Optional[LaneChangeCommand],
        lanes: LaneGeometry,
        geom: VehicleGeometry,
        clf_params: ClfParams,
        cbf_params: CbfParams,
        cooperative: bool = True,
        use_barrier_gate: bool = True,
        initial_lane: int = 0,
    ):
        self.platoon = list(platoon)
        self.command = command
        self.lanes = lanes
        self.geom = geom
        self.clf = clf_params
        self.cbf = cbf_params
        self.cooperative = cooperative
        self.use_barrier_gate = use_barrier_gate
        self.events: list[FsmEvent] = []
        self._rt = {cav: _CavRuntime(origin_lane=initial_lane) for cav in platoon}
        if command is not None:
            target = initial_lane + command.direction
            if not 0 <= target < lanes.n_lanes:
                raise ValueError("lane-change command leaves the road")
            self._rt[command.cav].target_lane = target

    # -- queries -----------------------------------------------------------

    def state_of(self, cav: str) -> FsmState:
        return self._rt[cav].fsm

    def signals_of(self, cav: str) -> SignalSet:
        return replace(self._rt[cav].signals)

    def perceive_target_lane(self, cav: str, state: VehicleState) -> int:
        rt = self._rt[cav]
        if rt.target_lane is not None and rt.fsm in (
            FsmState.LANE_CHANGE,
            FsmState.BACK_TO_INITIAL_LANE,
            FsmState.CAR_FOLLOWING,
        ):
            return rt.target_lane
        return self.lanes.lane_of(state.y)

    def predecessor(self, cav: str) -> Optional[str]:
        if cav not in self.platoon:
            return None
        idx = self.platoon.index(cav)
        return self.platoon[idx - 1] if idx > 0 else None

    # -- per-tick update ----------------------------------------------------

    def _progress(self, rt: _CavRuntime, state: VehicleState) -> float:
        if rt.target_lane is None:
            return 0.0
        origin_c = self.lanes.lane_center(rt.origin_lane)
        target_c = self.lanes.lane_center(rt.target_lane)
        band = 0.25 * self.lanes.lane_width
        if abs(state.y - target_c) < band and abs(state.psi) < P_COMPLETE_PSI:
            raw = 1.0
        elif abs(state.y - origin_c) < band:
            raw = 0.0
        else:
            raw = 0.5
        prev = rt.signals.p
        if rt.fsm is FsmState.LANE_CHANGE:
            return max(prev, raw)
        if rt.fsm is FsmState.BACK_TO_INITIAL_LANE:
            return min(prev, raw)
        return raw

    def _join_settled(self, cav: str, rt: _CavRuntime, states: dict[str, VehicleState], t: float) -> bool:
        if headway(rt.profile, t) > rt.profile.tau_min:
            return False
        pred = self.predecessor(cav)
        if pred is None:
            return True
        ego, lead = states[cav], states[pred]
        s = lead.x - ego.x - self.geom.length
        s_d = self.clf.s_0 + ego.v * rt.profile.tau_min
        return abs(s - s_d) <= JOIN_SETTLE_FRACTION * s_d

    def _init_profiles(self, t: float, states: dict[str, VehicleState]) -> None:
        """Start car-following schedules at each CAV's realized headway.

        Car following contracts the headway toward the compact 0.6 s value,
        so the platoon closes up from whatever spacing it was spawned with
        instead of jumping its spacing target discontinuously.
        """
        for cav, rt in self._rt.items():
            pred = self.predecessor(cav)
            if pred is None:
                rt.profile = HeadwayProfile(t0=t, mode="hold")
            else:
                ego, lead = states[cav], states[pred]
                gap = lead.x - ego.x - self.geom.length
                tau0 = (gap - self.clf.s_0) / max(ego.v, 1e-6)
                rt.profile = HeadwayProfile(t0=t, mode="join", start_tau=tau0)
            rt.profile_ready = True

    def update(
        self,
        t: float,
        states: dict[str, VehicleState],
        neighborhoods: dict[str, Neighborhood],
        raw_neighborhoods: Optional[dict[str, Neighborhood]] = None,
    ) -> dict[str, ControlTargets]:
        """Advance every CAV one tick from a consistent snapshot.

        neighborhoods carry the disturbance view (platoon members filtered in
        cooperative mode); raw_neighborhoods keep every sensed vehicle and
        resolve the spacing target of a CAV that is between lanes.
        """
        cavs = list(self._rt)
        raw_nb = raw_neighborhoods if raw_neighborhoods is not None else neighborhoods
        if self.cooperative and not all(self._rt[c].profile_ready for c in cavs):
            self._init_profiles(t, states)

        # 1) refresh signals from the snapshot
        for cav in cavs:
            rt = self._rt[cav]
            sig = rt.signals
            commanded = (
                self.command is not None
                and self.command.cav == cav
                and t >= self.command.time
                and rt.target_lane is not None
            )
            sig.c = self.command.direction if commanded else 0
            sig.p = self._progress(rt, states[cav])
            if commanded and self.use_barrier_gate:
                raw = lane_change_safe(states[cav], neighborhoods[cav], self.cbf)
                rt.safe_streak = rt.safe_streak + 1 if raw else 0
                if rt.fsm is FsmState.BACK_TO_INITIAL_LANE:
                    sig.e = 1 if rt.safe_streak >= RETRY_DEBOUNCE_TICKS else 0
                else:
                    sig.e = raw
            else:
                sig.e = 1
            if rt.fsm is FsmState.JOIN and self._join_settled(cav, rt, states, t):
                sig.pj = 0

        # 2) atomic transitions from the signal snapshot
        old_signals = {cav: replace(self._rt[cav].signals) for cav in cavs}
        moves: dict[str, FsmState] = {}
        for cav in cavs:
            rt = self._rt[cav]
            pred = self.predecessor(cav)
            peers = [old_signals[pred]] if pred is not None and pred in old_signals else []
            nxt = transition(rt.fsm, old_signals[cav], peers)
            if nxt is not rt.fsm:
                moves[cav] = nxt

        completed: Optional[str] = None
        for cav, nxt in moves.items():
            rt = self._rt[cav]
            self.events.append(FsmEvent(t, cav, rt.fsm, nxt))
            prev = rt.fsm
            rt.fsm = nxt
            if nxt is FsmState.LANE_CHANGE and prev is FsmState.CAR_FOLLOWING:
                if self.cooperative:
                    # the changer widens its own headway while maneuvering
                    rt.profile = HeadwayProfile(t0=t, mode="split", start_tau=headway(rt.profile, t))
                    follower = self._follower(cav)
                    if follower is not None:
                        self._rt[follower].signals.ps = 1
            elif nxt is FsmState.SPLIT:
                rt.profile = HeadwayProfile(t0=t, mode="split", start_tau=headway(rt.profile, t))
                rt.signals.ps = 0
            elif nxt is FsmState.JOIN:
                rt.profile = HeadwayProfile(t0=t, mode="join", start_tau=headway(rt.profile, t))
                rt.signals.pj = 1
            elif nxt is FsmState.BACK_TO_INITIAL_LANE:
                # back to plain following: contract toward the compact headway
                # (the next attempt will widen it again)
                rt.profile = HeadwayProfile(t0=t, mode="join", start_tau=headway(rt.profile, t))
            elif nxt is FsmState.CAR_FOLLOWING and prev is FsmState.LANE_CHANGE:
                completed = cav
            elif nxt is FsmState.CAR_FOLLOWING and prev is FsmState.JOIN:
                rt.profile = HeadwayProfile(t0=t, mode="hold")

        # 3) lane-change completion: re-home the changer and shrink the platoon
        if completed is not None:
            rt = self._rt[completed]
            rt.origin_lane = rt.target_lane
            rt.target_lane = None
            rt.signals.p = 0.0
            rt.signals.c = 0
            if self.cooperative:
                self.platoon = renumber(self.platoon, completed)
                rt.departed = True
            self.command = None

        # 4) emit controller bindings
        out: dict[str, ControlTargets] = {}
        for cav in cavs:
            rt = self._rt[cav]
            if rt.fsm is FsmState.LANE_CHANGE and rt.target_lane is not None:
                y_d = self.lanes.lane_center(rt.target_lane)
            else:
                y_d = self.lanes.lane_center(rt.origin_lane)
            maneuvering = rt.fsm in (FsmState.LANE_CHANGE, FsmState.BACK_TO_INITIAL_LANE)
            slot = True
            if self.cooperative:
                tau = headway(rt.profile, t)
                if maneuvering or rt.departed:
                    # between lanes (or solo) the spacing target is whatever
                    # the sensors see ahead, not the platoon slot
                    fc = raw_nb[cav].fc
                    leader = fc.vehicle_id if fc is not None and fc.present else None
                    slot = False
                else:
                    leader = self.predecessor(cav)
                peer = self.predecessor(cav) if rt.fsm in (FsmState.SPLIT, FsmState.JOIN) else None
            else:
                tau = HeadwayProfile().tau_min
                fc = raw_nb[cav].fc
                leader = fc.vehicle_id if fc is not None and fc.present else None
                peer = None
                slot = False
            out[cav] = ControlTargets(
                fsm=rt.fsm, tau=tau, y_d=y_d, leader_id=leader, peer_id=peer, platoon_slot=slot
            )
        return out

    def _follower(self, cav: str) -> Optional[str]:
        if cav not in self.platoon:
            return None
        idx = self.platoon.index(cav)
        return self.platoon[idx + 1] if idx + 1 < len(self.platoon) else None
