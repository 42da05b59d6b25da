"""Deterministic tick loop over one scenario.

Per tick: snapshot the world, perceive per CAV, advance the coordination FSM,
solve each CAV's control QP, evaluate the HDV scripts, log, then step every
vehicle with forward Euler.  Collisions and QP infeasibility are recorded as
results, never raised.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Optional

from .certificates import Neighborhood, NeighborObservation, PlatoonPeers
from .controller import ControlDecision, Variant, decide
from .fsm import FsmEvent, PlatoonCoordinator
from .fsm_states import FsmState
from .scenarios import ScenarioConfig
from .vehicle import ControlInput, VehicleState, step
from .world import (
    WorldVehicle,
    detect_collisions,
    hdv_speed,
    hdv_state,
    min_pairwise_ttc,
    perceive,
)


@dataclass
class LogRow:
    t: float
    id: str
    x: float
    y: float
    psi: float
    v: float
    a: float
    beta: Optional[float]
    fsm_state: Optional[str]
    h_fc: Optional[float]
    h_ft: Optional[float]
    h_bt: Optional[float]
    delta_l: Optional[float]
    delta_y: Optional[float]
    delta_psi: Optional[float]
    feasible: Optional[bool]
    collision: bool


@dataclass
class TrajectoryLog:
    dt: float
    rows: list[LogRow] = field(default_factory=list)

    def vehicle_rows(self, vid: str) -> list[LogRow]:
        return [r for r in self.rows if r.id == vid]


@dataclass
class CollisionReport:
    occurred: bool
    first_time: Optional[float]
    pair: Optional[tuple[str, str]]
    min_ttc: float


@dataclass
class RunResult:
    log: TrajectoryLog
    report: CollisionReport
    fsm_events: list[FsmEvent]
    infeasible_events: list[tuple[float, str]]
    lane_change_completed: bool
    final_states: dict[str, VehicleState]
    config: ScenarioConfig
    variant: Variant


def _disturbances(raw: Neighborhood, platoon: set[str], cooperative: bool) -> Neighborhood:
    """Platoon members are cooperators, not disturbances, in cooperative mode."""
    if not cooperative:
        return raw

    def strip(obs: Optional[NeighborObservation]) -> Optional[NeighborObservation]:
        if obs is not None and obs.vehicle_id in platoon:
            return None
        return obs

    return Neighborhood(fc=strip(raw.fc), ft=strip(raw.ft), bt=strip(raw.bt))


def _peer_obs(vehicles: dict[str, WorldVehicle], vid: Optional[str], ego_index: int, slot: str):
    if vid is None or vid not in vehicles:
        return None
    s = vehicles[vid].state
    return NeighborObservation(
        x=s.x, y=s.y, psi=s.psi, v=s.v,
        index_pair=(ego_index, slot), vehicle_id=vid, is_cav=vehicles[vid].is_cav,
    )


def run(config: ScenarioConfig, variant: Variant = Variant.CLF_CBF_QP) -> RunResult:
    lanes, geom = config.lanes, config.geom
    cooperative = variant is not Variant.SINGLE_VEHICLE_CBF
    ctrl = dataclasses.replace(config.ctrl)
    ctrl.variant = variant

    vehicles: dict[str, WorldVehicle] = {}
    platoon_ids = []
    for vid, state in config.cavs:
        vehicles[vid] = WorldVehicle(id=vid, kind="cav", state=state, geom=geom)
        platoon_ids.append(vid)
    for spec in config.hdvs:
        state0 = hdv_state(spec.script, 0.0, spec.x0, lanes)
        vehicles[spec.id] = WorldVehicle(
            id=spec.id, kind="hdv", state=state0, geom=geom, script=spec.script
        )

    coordinator = PlatoonCoordinator(
        platoon=platoon_ids,
        command=config.command,
        lanes=lanes,
        geom=geom,
        clf_params=config.clf,
        cbf_params=config.cbf,
        cooperative=cooperative,
        use_barrier_gate=variant is not Variant.CLF_QP,
        initial_lane=config.initial_lane,
    )

    log = TrajectoryLog(dt=config.dt)
    infeasible_events: list[tuple[float, str]] = []
    first_collision: Optional[tuple[float, tuple[str, str]]] = None
    min_ttc = float("inf")
    n_ticks = int(round(config.duration / config.dt))
    cav_index = {vid: i + 1 for i, vid in enumerate(platoon_ids)}

    for k in range(n_ticks):
        t = k * config.dt
        states = {vid: v.state for vid, v in vehicles.items()}

        percepts = {
            vid: perceive(
                vid, vehicles,
                coordinator.perceive_target_lane(vid, states[vid]),
                lanes, ego_index=cav_index[vid],
            )
            for vid in platoon_ids
        }
        members = set(coordinator.platoon)
        nbhds = {
            vid: _disturbances(percepts[vid], members - {vid}, cooperative)
            for vid in platoon_ids
        }

        targets = coordinator.update(t, states, nbhds, raw_neighborhoods=percepts)

        decisions: dict[str, ControlDecision] = {}
        for vid in platoon_ids:
            tg = targets[vid]
            idx = cav_index[vid]
            leader = _peer_obs(vehicles, tg.leader_id, idx, "fc")
            peers = PlatoonPeers(front=_peer_obs(vehicles, tg.peer_id, idx, "fc"))
            clf_i = dataclasses.replace(
                config.clf,
                y_d=tg.y_d,
                s_0=config.clf.s_0 if tg.platoon_slot else config.clf.s_0_follow,
            )
            decision = decide(
                states[vid], nbhds[vid], tg.fsm, tg.tau, clf_i, config.cbf, ctrl,
                geom, leader=leader, platoon_peers=peers,
            )
            decisions[vid] = decision
            if not decision.feasible:
                infeasible_events.append((t, vid))

        colliding = detect_collisions(vehicles)
        in_collision = {vid for pair in colliding for vid in pair}
        if colliding and first_collision is None:
            first_collision = (t, colliding[0])
        min_ttc = min(min_ttc, min_pairwise_ttc(vehicles))

        for vid, veh in sorted(vehicles.items()):
            st = veh.state
            if veh.is_cav:
                d = decisions[vid]
                log.rows.append(LogRow(
                    t=t, id=vid, x=st.x, y=st.y, psi=st.psi, v=st.v,
                    a=d.input.a, beta=d.input.beta,
                    fsm_state=str(targets[vid].fsm),
                    h_fc=d.barrier_values.get("fc"),
                    h_ft=d.barrier_values.get("ft"),
                    h_bt=d.barrier_values.get("bt"),
                    delta_l=d.slacks[0], delta_y=d.slacks[1], delta_psi=d.slacks[2],
                    feasible=d.feasible, collision=vid in in_collision,
                ))
            else:
                v_next, _ = hdv_speed(veh.script, t + config.dt, lanes)
                log.rows.append(LogRow(
                    t=t, id=vid, x=st.x, y=st.y, psi=st.psi, v=st.v,
                    a=(v_next - st.v) / config.dt, beta=None,
                    fsm_state=None, h_fc=None, h_ft=None, h_bt=None,
                    delta_l=None, delta_y=None, delta_psi=None,
                    feasible=None, collision=vid in in_collision,
                ))

        # advance the world
        for vid, veh in vehicles.items():
            if veh.is_cav:
                veh.state = step(veh.state, decisions[vid].input, config.dt, geom)
            else:
                x_next = veh.state.x + veh.state.v * config.dt
                veh.state = hdv_state(veh.script, t + config.dt, x_next, lanes)

    completed = (
        config.command is not None
        and any(
            e.cav == config.command.cav
            and e.source is FsmState.LANE_CHANGE
            and e.target is FsmState.CAR_FOLLOWING
            for e in coordinator.events
        )
    )
    report = CollisionReport(
        occurred=first_collision is not None,
        first_time=first_collision[0] if first_collision else None,
        pair=first_collision[1] if first_collision else None,
        min_ttc=min_ttc,
    )
    return RunResult(
        log=log,
        report=report,
        fsm_events=list(coordinator.events),
        infeasible_events=infeasible_events,
        lane_change_completed=completed,
        final_states={vid: v.state for vid, v in vehicles.items()},
        config=config,
        variant=variant,
    )
