"""Per-vehicle control law: assemble the certificate rows into a QP and solve.

The decision vector is z = [a, beta, delta_l, delta_y, delta_psi]: the two
inputs plus one slack per Lyapunov row.  Barrier rows are hard; input box
bounds keep the problem bounded.  Infeasibility is reported as data (the
simulation keeps running on a braking fallback), because the single-vehicle
comparison hinges on detecting exactly that event.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from . import certificates as cert
from .certificates import (
    CbfParams,
    ClfParams,
    ConstraintRow,
    MissingNeighbor,
    Neighborhood,
    NeighborObservation,
    PlatoonPeers,
)
from .fsm_states import FsmState
from .qp import LinearConstraint, QpProblem, QpStatus, solve
from .vehicle import ControlInput, VehicleGeometry, VehicleState

N_VARS = 5
SLACK_INDEX = {"clf_long": 2, "clf_lat": 3, "clf_head": 4}


class Variant(Enum):
    CLF_CBF_QP = "clf-cbf-qp"
    CLF_QP = "clf-qp"
    SINGLE_VEHICLE_CBF = "single-cbf"


def _default_h() -> np.ndarray:
    # slip angle penalized much harder than acceleration
    return np.diag([1.0, 100.0])


@dataclass(eq=False)
class ControllerParams:
    H: np.ndarray = field(default_factory=_default_h)
    p_l: float = 15.0
    p_y: float = 0.05
    p_psi: float = 400.0
    alpha_l: float = 1.7
    alpha_y: float = 0.6
    alpha_psi: float = 18.0
    variant: Variant = Variant.CLF_CBF_QP
    a_max: float = 9.0
    beta_max: float = 0.3

    def __post_init__(self):
        self.H = np.asarray(self.H, dtype=float)
        if self.H.shape != (2, 2):
            raise ValueError("H must be 2x2")
        np.linalg.cholesky(self.H)
        if min(self.p_l, self.p_y, self.p_psi) <= 0:
            raise ValueError("slack penalties must be positive")
        if min(self.alpha_l, self.alpha_y, self.alpha_psi) <= 0:
            raise ValueError("decay rates must be positive")


@dataclass
class ControlDecision:
    input: ControlInput
    slacks: tuple[float, float, float]
    feasible: bool
    active_barriers: tuple[str, ...]
    barrier_values: dict[str, float] = field(default_factory=dict)


def _clf_rows(
    ego: VehicleState,
    leader: Optional[NeighborObservation],
    tau: float,
    clf: ClfParams,
    ctrl: ControllerParams,
    geom: VehicleGeometry,
) -> list[ConstraintRow]:
    try:
        _, long_row = cert.clf_longitudinal(ego, leader, tau, clf, geom, ctrl.alpha_l)
    except MissingNeighbor:
        _, long_row = cert.clf_speed(ego, clf, ctrl.alpha_l)
    _, lat_row = cert.clf_lateral(ego, clf, ctrl.alpha_y)
    _, head_row = cert.clf_heading(ego, geom, ctrl.alpha_psi)
    return [long_row, lat_row, head_row]


def _cbf_rows(
    ego: VehicleState,
    neighborhood: Neighborhood,
    fsm_state: FsmState,
    peers: Optional[PlatoonPeers],
    cbf: CbfParams,
    ctrl: ControllerParams,
) -> list[tuple[float, ConstraintRow]]:
    if ctrl.variant is Variant.CLF_QP:
        return []
    state = fsm_state
    if ctrl.variant is Variant.SINGLE_VEHICLE_CBF and state in (FsmState.SPLIT, FsmState.JOIN):
        # no platoon cooperation: fall back to plain car following
        state = FsmState.CAR_FOLLOWING
    return cert.barrier_bundle(state, ego, neighborhood, peers, cbf)


def _to_constraint(row: ConstraintRow) -> LinearConstraint:
    coeffs = np.zeros(N_VARS)
    coeffs[0] = row.coeff_a
    coeffs[1] = row.coeff_beta
    if row.coeff_slack:
        # move the slack to the left-hand side of "lhs <= rhs + delta"
        coeffs[SLACK_INDEX[row.label]] = -row.coeff_slack
    return LinearConstraint(coeffs=coeffs, rhs=row.rhs, sense=row.sense, label=row.label)


def _box_rows(ctrl: ControllerParams) -> list[LinearConstraint]:
    rows = []
    for idx, bound, name in ((0, ctrl.a_max, "a"), (1, ctrl.beta_max, "beta")):
        hi = np.zeros(N_VARS)
        hi[idx] = 1.0
        rows.append(LinearConstraint(hi, bound, "le", f"box_{name}_hi"))
        lo = np.zeros(N_VARS)
        lo[idx] = -1.0
        rows.append(LinearConstraint(lo, bound, "le", f"box_{name}_lo"))
    return rows


def assemble(
    ego: VehicleState,
    neighborhood: Neighborhood,
    fsm_state: FsmState,
    tau: float,
    clf_params: ClfParams,
    cbf_params: CbfParams,
    ctrl_params: ControllerParams,
    geom: VehicleGeometry,
    leader: Optional[NeighborObservation] = None,
    platoon_peers: Optional[PlatoonPeers] = None,
) -> QpProblem:
    """Build the per-tick QP: cost 0.5 u'Hu + slack penalties, three relaxed
    CLF rows, state-selected hard CBF rows, and the input box."""
    P = np.zeros((N_VARS, N_VARS))
    P[:2, :2] = ctrl_params.H
    P[2, 2] = 2.0 * ctrl_params.p_l
    P[3, 3] = 2.0 * ctrl_params.p_y
    P[4, 4] = 2.0 * ctrl_params.p_psi
    q = np.zeros(N_VARS)

    rows = [_to_constraint(r) for r in _clf_rows(ego, leader, tau, clf_params, ctrl_params, geom)]
    rows += [
        _to_constraint(row)
        for _, row in _cbf_rows(ego, neighborhood, fsm_state, platoon_peers, cbf_params, ctrl_params)
    ]
    rows += _box_rows(ctrl_params)
    return QpProblem(dim=N_VARS, P=P, q=q, rows=rows)


def decide(
    ego: VehicleState,
    neighborhood: Neighborhood,
    fsm_state: FsmState,
    tau: float,
    clf_params: ClfParams,
    cbf_params: CbfParams,
    ctrl_params: ControllerParams,
    geom: VehicleGeometry,
    leader: Optional[NeighborObservation] = None,
    platoon_peers: Optional[PlatoonPeers] = None,
) -> ControlDecision:
    """Solve the assembled QP; on infeasibility return a braking fallback."""
    problem = assemble(
        ego, neighborhood, fsm_state, tau, clf_params, cbf_params, ctrl_params,
        geom, leader, platoon_peers,
    )
    barrier_values = {
        row.label.removeprefix("cbf_"): h
        for h, row in _cbf_rows(ego, neighborhood, fsm_state, platoon_peers, cbf_params, ctrl_params)
    }
    sol = solve(problem)
    if sol.status is QpStatus.OPTIMAL:
        a, beta, d_l, d_y, d_psi = sol.x
        active = tuple(
            problem.rows[i].label for i in sol.active_set
            if problem.rows[i].label.startswith("cbf_")
        )
        return ControlDecision(
            input=ControlInput(a=float(a), beta=float(beta)),
            slacks=(float(d_l), float(d_y), float(d_psi)),
            feasible=True,
            active_barriers=active,
            barrier_values=barrier_values,
        )

    # max braking, steering from the heading row alone
    if abs(ego.psi) > 0.0 and ego.v > 1e-9:
        beta = -ctrl_params.alpha_psi * ego.psi * geom.l_r / (2.0 * ego.v)
    else:
        beta = 0.0
    beta = float(np.clip(beta, -ctrl_params.beta_max, ctrl_params.beta_max))
    return ControlDecision(
        input=ControlInput(a=-ctrl_params.a_max, beta=beta),
        slacks=(0.0, 0.0, 0.0),
        feasible=False,
        active_barriers=(),
        barrier_values=barrier_values,
    )
