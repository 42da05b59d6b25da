"""Kinematic single-track vehicle model.

State is (x, y, psi, v); inputs are acceleration a and slip angle beta.
The model is control-affine: xdot = F(state) + G(state) @ [a, beta].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class VehicleState:
    x: float    # longitudinal position of c.g. [m]
    y: float    # lateral position of c.g. [m]
    psi: float  # heading angle [rad]
    v: float    # speed [m/s], never negative

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.psi, self.v], dtype=float)

    @staticmethod
    def from_array(arr) -> "VehicleState":
        x, y, psi, v = (float(c) for c in arr)
        return VehicleState(x=x, y=y, psi=psi, v=v)


@dataclass
class ControlInput:
    a: float     # acceleration [m/s^2]
    beta: float  # slip angle [rad]


@dataclass(frozen=True)
class VehicleGeometry:
    l_r: float = 1.74   # c.g. to rear axle [m]
    l_f: float = 1.11   # c.g. to front axle [m]; tabulated, unused by the kinematics
    l_fc: float = 2.15  # c.g. to front bumper [m]
    l_rc: float = 2.77  # c.g. to rear bumper [m]
    w: float = 1.86     # width [m]

    @property
    def length(self) -> float:
        """Total vehicle length, front bumper to rear bumper."""
        return self.l_fc + self.l_rc


@dataclass(frozen=True)
class LaneGeometry:
    lane_width: float = 3.6
    n_lanes: int = 3

    def lane_center(self, k: int) -> float:
        if not 0 <= k < self.n_lanes:
            raise ValueError(f"lane index {k} out of range [0, {self.n_lanes})")
        return self.lane_width / 2.0 + k * self.lane_width

    def lane_of(self, y: float) -> int:
        """Lane whose center is nearest to y; ties go to the lower index."""
        best, best_d = 0, abs(y - self.lane_center(0))
        for k in range(1, self.n_lanes):
            d = abs(y - self.lane_center(k))
            if d < best_d:
                best, best_d = k, d
        return best


def drift(state: VehicleState) -> np.ndarray:
    """Uncontrolled state derivative F = [v cos(psi), v sin(psi), 0, 0]."""
    return np.array(
        [state.v * np.cos(state.psi), state.v * np.sin(state.psi), 0.0, 0.0]
    )


def drift_jacobian(state: VehicleState) -> np.ndarray:
    """d(drift)/d(x, y, psi, v), 4x4."""
    c, s = np.cos(state.psi), np.sin(state.psi)
    jac = np.zeros((4, 4))
    jac[0, 2] = -state.v * s
    jac[0, 3] = c
    jac[1, 2] = state.v * c
    jac[1, 3] = s
    return jac


def control_matrix(state: VehicleState, geom: VehicleGeometry) -> np.ndarray:
    """Input matrix G, 4x2 with columns (a, beta).

    Acceleration drives v; the slip angle moves the lateral channels:
    xdot gets -v sin(psi) beta, ydot gets v cos(psi) beta, psidot gets (v/l_r) beta.
    """
    c, s = np.cos(state.psi), np.sin(state.psi)
    return np.array(
        [
            [0.0, -state.v * s],
            [0.0, state.v * c],
            [0.0, state.v / geom.l_r],
            [1.0, 0.0],
        ]
    )


def control_matrix_jacobian(state: VehicleState, geom: VehicleGeometry) -> np.ndarray:
    """d(control_matrix)/d(x, y, psi, v), shape (4, 2, 4)."""
    c, s = np.cos(state.psi), np.sin(state.psi)
    jac = np.zeros((4, 2, 4))
    jac[0, 1, 2] = -state.v * c
    jac[0, 1, 3] = -s
    jac[1, 1, 2] = -state.v * s
    jac[1, 1, 3] = c
    jac[2, 1, 3] = 1.0 / geom.l_r
    return jac


def dynamics(state: VehicleState, inp: ControlInput, geom: VehicleGeometry) -> np.ndarray:
    """Full state derivative F + G @ [a, beta]."""
    u = np.array([inp.a, inp.beta])
    return drift(state) + control_matrix(state, geom) @ u


def step(state: VehicleState, inp: ControlInput, dt: float, geom: VehicleGeometry) -> VehicleState:
    """Forward-Euler step; speed is clamped at zero (no reverse driving)."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    nxt = state.as_array() + dt * dynamics(state, inp, geom)
    nxt[3] = max(nxt[3], 0.0)
    return VehicleState.from_array(nxt)
