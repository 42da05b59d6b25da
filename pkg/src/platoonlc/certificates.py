"""Lyapunov and barrier certificates for the per-vehicle safety QP.

Each certificate evaluates a scalar (V for tracking objectives, h for safety
envelopes) together with one linear constraint row in the input u = [a, beta]:

    CLF rows:  LfV + LgV @ u <= -decay * V + delta      (slack-relaxed)
    CBF rows:  dh/dt + Lfh + Lgh @ u >= -gamma * h      (hard)

Neighbors are modeled as constant-velocity between controller ticks; their
advance enters as the explicit dh/dt term.  All longitudinal gaps are
center-of-gravity to center-of-gravity unless stated otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .fsm_states import FsmState
from .vehicle import VehicleGeometry, VehicleState


class MissingNeighbor(Exception):
    """Raised when a certificate requires a neighbor that is absent."""


@dataclass(frozen=True)
class ClfParams:
    alpha1: float = 0.05    # weight on speed error
    alpha2: float = 0.02    # weight on spacing error
    v_d: float = 27.5       # desired speed [m/s]
    y_d: float = 1.8        # desired lateral position [m]
    s_0: float = 16.0       # standstill gap of the platoon formation slot [m]
    s_0_follow: float = 2.0  # standstill gap behind a non-platoon vehicle [m]
    es_cap: float = 20.0    # spacing-error saturation [m]; keeps far-off
                            # leaders from producing unbounded decay demands


@dataclass(frozen=True)
class CbfParams:
    eps_x: float = 0.2    # longitudinal safety factor in [0, 1]
    eps_y: float = 0.5    # lateral safety margin [m]
    a_max: float = 9.0    # braking/acceleration magnitude for the stopping term [m/s^2]
    gamma_fc: float = 1.0  # class-K gain, front current lane [1/s]
    gamma_ft: float = 1.0  # class-K gain, front target lane [1/s]
    gamma_bt: float = 1.0  # class-K gain, back target lane [1/s]

    def gamma(self, slot: str) -> float:
        return {"fc": self.gamma_fc, "ft": self.gamma_ft, "bt": self.gamma_bt}[slot]


@dataclass(frozen=True)
class NeighborObservation:
    x: float
    y: float
    psi: float
    v: float
    index_pair: tuple = (0, "fc")  # (observing CAV index, relative slot)
    vehicle_id: str = ""
    is_cav: bool = False
    present: bool = True


@dataclass(frozen=True)
class ConstraintRow:
    """coeff_a * a + coeff_beta * beta  (sense)  rhs + coeff_slack * delta."""

    coeff_a: float
    coeff_beta: float
    coeff_slack: float  # 1.0 on CLF rows, 0.0 on CBF rows
    rhs: float
    sense: str          # "le" or "ge"
    label: str

    def residual(self, a: float, beta: float, delta: float = 0.0) -> float:
        """Slack of the row at an input; nonnegative means satisfied."""
        lhs = self.coeff_a * a + self.coeff_beta * beta
        bound = self.rhs + self.coeff_slack * delta
        return bound - lhs if self.sense == "le" else lhs - bound


# ---------------------------------------------------------------------------
# CLFs
# ---------------------------------------------------------------------------

def clf_longitudinal(
    ego: VehicleState,
    leader: Optional[NeighborObservation],
    tau: float,
    params: ClfParams,
    geom: VehicleGeometry,
    decay: float,
) -> tuple[float, ConstraintRow]:
    """Combined speed/spacing Lyapunov candidate.

    V = alpha1 (v - v_d)^2 + alpha2 (s - s_d)^2 with s the bumper spacing
    to the leader and s_d = s_0 + v * tau.  The leader's advance at its
    observed speed enters the drift side of the row.
    """
    if leader is None or not leader.present:
        raise MissingNeighbor("longitudinal CLF requires a leader")
    if tau <= 0:
        raise ValueError("tau must be positive")

    ev = ego.v - params.v_d
    s = leader.x - ego.x - geom.length
    s_d = params.s_0 + ego.v * tau
    es = float(np.clip(s - s_d, -params.es_cap, params.es_cap))
    saturated = abs(s - s_d) >= params.es_cap
    value = params.alpha1 * ev**2 + params.alpha2 * es**2

    # dV/dv picks up the headway term through s_d; dV/dx_ego = -2 alpha2 es.
    # Inside the saturation band the clamped error is constant, so the
    # spacing gradient vanishes there.
    dv = 2.0 * params.alpha1 * ev - (0.0 if saturated else 2.0 * params.alpha2 * es * tau)
    dx = 0.0 if saturated else -2.0 * params.alpha2 * es
    c, sn = np.cos(ego.psi), np.sin(ego.psi)
    leader_adv = 0.0 if saturated else 2.0 * params.alpha2 * es * leader.v
    lf = dx * ego.v * c + leader_adv
    coeff_a = dv
    coeff_beta = dx * (-ego.v * sn)
    row = ConstraintRow(
        coeff_a=coeff_a,
        coeff_beta=coeff_beta,
        coeff_slack=1.0,
        rhs=-decay * value - lf,
        sense="le",
        label="clf_long",
    )
    return value, row


def clf_speed(ego: VehicleState, params: ClfParams, decay: float) -> tuple[float, ConstraintRow]:
    """Pure speed-tracking fallback when no leader exists: V = alpha1 (v - v_d)^2."""
    ev = ego.v - params.v_d
    value = params.alpha1 * ev**2
    row = ConstraintRow(
        coeff_a=2.0 * params.alpha1 * ev,
        coeff_beta=0.0,
        coeff_slack=1.0,
        rhs=-decay * value,
        sense="le",
        label="clf_long",
    )
    return value, row


def clf_lateral(ego: VehicleState, params: ClfParams, decay: float) -> tuple[float, ConstraintRow]:
    """Lateral tracking candidate V = (y - y_d)^2."""
    ey = ego.y - params.y_d
    value = ey**2
    lf = 2.0 * ey * ego.v * np.sin(ego.psi)
    row = ConstraintRow(
        coeff_a=0.0,
        coeff_beta=2.0 * ey * ego.v * np.cos(ego.psi),
        coeff_slack=1.0,
        rhs=-decay * value - lf,
        sense="le",
        label="clf_lat",
    )
    return value, row


def clf_heading(
    ego: VehicleState, geom: VehicleGeometry, decay: float
) -> tuple[float, ConstraintRow]:
    """Heading candidate V = psi^2; only beta acts on it (psidot = v beta / l_r)."""
    value = ego.psi**2
    row = ConstraintRow(
        coeff_a=0.0,
        coeff_beta=2.0 * ego.psi * ego.v / geom.l_r,
        coeff_slack=1.0,
        rhs=-decay * value,
        sense="le",
        label="clf_head",
    )
    return value, row


# ---------------------------------------------------------------------------
# CBFs
# ---------------------------------------------------------------------------

def _front_h(ego: VehicleState, front: NeighborObservation, p: CbfParams) -> tuple[float, float]:
    """Front-vehicle barrier value and dh/dv_ego.

    h = (x_f - x_e) - (1 + eps_x) v_e - [v_e >= v_f] (v_f - v_e)^2 / (2 a_max)
    """
    gap = front.x - ego.x
    h = gap - (1.0 + p.eps_x) * ego.v
    dh_dv = -(1.0 + p.eps_x)
    if ego.v >= front.v:
        h -= (front.v - ego.v) ** 2 / (2.0 * p.a_max)
        dh_dv += (front.v - ego.v) / p.a_max
    return h, dh_dv


def _rear_h(ego: VehicleState, rear: NeighborObservation, p: CbfParams) -> tuple[float, float]:
    """Rear-vehicle barrier value and dh/dv_ego.

    h = (x_e - x_r) - (1 + eps_x) v_r - [v_r >= v_e] (v_r - v_e)^2 / (2 a_max)
    """
    gap = ego.x - rear.x
    h = gap - (1.0 + p.eps_x) * rear.v
    dh_dv = 0.0
    if rear.v >= ego.v:
        h -= (rear.v - ego.v) ** 2 / (2.0 * p.a_max)
        dh_dv += (rear.v - ego.v) / p.a_max
    return h, dh_dv


def _front_row(
    ego: VehicleState,
    front: NeighborObservation,
    p: CbfParams,
    gamma: float,
    label: str,
) -> tuple[float, ConstraintRow]:
    h, dh_dv = _front_h(ego, front, p)
    c, sn = np.cos(ego.psi), np.sin(ego.psi)
    # dh/dx_e = -1; the front vehicle advances at its observed speed.
    dh_dt = front.v
    lf = -ego.v * c
    coeff_a = dh_dv
    coeff_beta = ego.v * sn
    row = ConstraintRow(
        coeff_a=coeff_a,
        coeff_beta=coeff_beta,
        coeff_slack=0.0,
        rhs=-gamma * h - dh_dt - lf,
        sense="ge",
        label=label,
    )
    return h, row


def _rear_row(
    ego: VehicleState,
    rear: NeighborObservation,
    p: CbfParams,
    gamma: float,
    label: str,
) -> tuple[float, ConstraintRow]:
    h, dh_dv = _rear_h(ego, rear, p)
    c, sn = np.cos(ego.psi), np.sin(ego.psi)
    # dh/dx_e = +1; the rear vehicle advances at its observed speed.
    dh_dt = -rear.v
    lf = ego.v * c
    coeff_a = dh_dv
    coeff_beta = -ego.v * sn
    row = ConstraintRow(
        coeff_a=coeff_a,
        coeff_beta=coeff_beta,
        coeff_slack=0.0,
        rhs=-gamma * h - dh_dt - lf,
        sense="ge",
        label=label,
    )
    return h, row


def _lateral_row(
    ego: VehicleState,
    neighbor: NeighborObservation,
    p: CbfParams,
    gamma: float,
    label: str,
) -> tuple[float, ConstraintRow]:
    """Lateral separation barrier h = (y_n - y_e) - eps_y.

    Used by the overlap barriers when the neighbor is longitudinally behind
    (front slot) or ahead (rear slot) of the ego.  Lane-keeping neighbors have
    no observed lateral speed, so dh/dt = 0.
    """
    h = (neighbor.y - ego.y) - p.eps_y
    c, sn = np.cos(ego.psi), np.sin(ego.psi)
    lf = -ego.v * sn
    row = ConstraintRow(
        coeff_a=0.0,
        coeff_beta=-ego.v * c,
        coeff_slack=0.0,
        rhs=-gamma * h - lf,
        sense="ge",
        label=label,
    )
    return h, row


def barrier_front(
    ego: VehicleState, front: Optional[NeighborObservation], params: CbfParams,
    slot: str = "fc",
) -> tuple[float, ConstraintRow]:
    """Longitudinal barrier against a front vehicle (current or target lane)."""
    if front is None or not front.present:
        raise MissingNeighbor("front barrier requires a neighbor")
    return _front_row(ego, front, params, params.gamma(slot), f"cbf_{slot}")


def barrier_rear(
    ego: VehicleState, rear: Optional[NeighborObservation], params: CbfParams,
    slot: str = "bt",
) -> tuple[float, ConstraintRow]:
    """Longitudinal barrier against a rear vehicle in the target lane."""
    if rear is None or not rear.present:
        raise MissingNeighbor("rear barrier requires a neighbor")
    return _rear_row(ego, rear, params, params.gamma(slot), f"cbf_{slot}")


def barrier_overlap_front(
    ego: VehicleState, front_target: Optional[NeighborObservation], params: CbfParams,
    slot: str = "ft",
) -> tuple[float, ConstraintRow]:
    """Front target-lane barrier that tolerates longitudinal overlap.

    While the neighbor is ahead this is the plain front barrier; once the ego
    has passed it, only lateral separation is enforced.
    """
    if front_target is None or not front_target.present:
        raise MissingNeighbor("overlap front barrier requires a neighbor")
    gamma = params.gamma(slot)
    if front_target.x - ego.x >= 0.0:
        return _front_row(ego, front_target, params, gamma, f"cbf_{slot}")
    return _lateral_row(ego, front_target, params, gamma, f"cbf_{slot}")


def barrier_overlap_rear(
    ego: VehicleState, rear_target: Optional[NeighborObservation], params: CbfParams,
    slot: str = "bt",
) -> tuple[float, ConstraintRow]:
    """Rear target-lane barrier that tolerates longitudinal overlap."""
    if rear_target is None or not rear_target.present:
        raise MissingNeighbor("overlap rear barrier requires a neighbor")
    gamma = params.gamma(slot)
    if ego.x - rear_target.x >= 0.0:
        return _rear_row(ego, rear_target, params, gamma, f"cbf_{slot}")
    return _lateral_row(ego, rear_target, params, gamma, f"cbf_{slot}")


# ---------------------------------------------------------------------------
# State-dependent bundle selection
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Neighborhood:
    """Disturbance vehicles around one CAV: nearest front in the current lane,
    nearest front/back in the target lane.  Absent neighbors are None."""

    fc: Optional[NeighborObservation] = None
    ft: Optional[NeighborObservation] = None
    bt: Optional[NeighborObservation] = None


@dataclass(frozen=True)
class PlatoonPeers:
    """Cooperating platoon vehicle bound by the Split/Join barriers: the CAV
    directly ahead in the platoon order (the lane changer during Split, the
    new predecessor during Join)."""

    front: Optional[NeighborObservation] = None


def barrier_bundle(
    fsm_state: FsmState,
    ego: VehicleState,
    neighborhood: Neighborhood,
    platoon_peers: Optional[PlatoonPeers],
    params: CbfParams,
) -> list[tuple[float, ConstraintRow]]:
    """Barrier rows active in a given FSM state; absent neighbors yield no row.

    CarFollowing guards the front gap only; LaneChange adds the target-lane
    pair; BackToInitialLane swaps the target-lane barriers for the
    overlap-tolerant forms; Split/Join constrain the gap to the platoon peer.
    """
    out: list[tuple[float, ConstraintRow]] = []

    def add(builder, neighbor, slot):
        if neighbor is not None and neighbor.present:
            out.append(builder(ego, neighbor, params, slot=slot))

    if fsm_state is FsmState.CAR_FOLLOWING:
        add(barrier_front, neighborhood.fc, "fc")
    elif fsm_state is FsmState.LANE_CHANGE:
        add(barrier_front, neighborhood.fc, "fc")
        add(barrier_front, neighborhood.ft, "ft")
        add(barrier_rear, neighborhood.bt, "bt")
    elif fsm_state is FsmState.BACK_TO_INITIAL_LANE:
        add(barrier_front, neighborhood.fc, "fc")
        add(barrier_overlap_front, neighborhood.ft, "ft")
        add(barrier_overlap_rear, neighborhood.bt, "bt")
    elif fsm_state in (FsmState.SPLIT, FsmState.JOIN):
        peer = platoon_peers.front if platoon_peers is not None else None
        add(barrier_front, peer, "fc")
    return out
