"""Independent numerical oracles shared between unit and acceptance tests.

These deliberately avoid the code paths they check: gradients come from
central finite differences, QP optima from a projected-gradient dual ascent,
and feasibility decisions from exhaustive vertex enumeration.
"""

from __future__ import annotations

from itertools import combinations

import numpy as np

from platoonlc.vehicle import VehicleGeometry, VehicleState, control_matrix, drift

FD_STEP = 1e-5


def fd_gradient(fn, vec: np.ndarray, step: float = FD_STEP) -> np.ndarray:
    """Central finite differences of a scalar function of a vector."""
    vec = np.asarray(vec, dtype=float)
    grad = np.zeros_like(vec)
    for i in range(vec.size):
        hi, lo = vec.copy(), vec.copy()
        hi[i] += step
        lo[i] -= step
        grad[i] = (fn(hi) - fn(lo)) / (2.0 * step)
    return grad


def row_coeffs_from_value_fn(value_fn, ego: VehicleState, geom: VehicleGeometry):
    """Finite-difference input coefficients of a certificate row.

    value_fn maps the 4-vector ego state to the certificate scalar.  The
    returned pair is (d/da, d/dbeta) of the certificate's time derivative,
    built by chaining the numeric state gradient with the analytic input
    matrix columns.
    """
    grad = fd_gradient(lambda s: value_fn(VehicleState.from_array(s)), ego.as_array())
    g = control_matrix(ego, geom)
    return float(grad @ g[:, 0]), float(grad @ g[:, 1])


def row_drift_from_value_fn(value_fn, ego: VehicleState, neighbor_fn=None):
    """Finite-difference drift-side terms of a certificate row.

    Returns grad(value) . F(ego) plus the neighbor-advance term
    d(value)/d(x_neighbor) * v_neighbor when neighbor_fn is given as a pair
    (value_of_neighbor_x, v_neighbor).
    """
    grad = fd_gradient(lambda s: value_fn(VehicleState.from_array(s)), ego.as_array())
    total = float(grad @ drift(ego))
    if neighbor_fn is not None:
        value_of_xn, v_n = neighbor_fn
        d_xn = (value_of_xn(FD_STEP) - value_of_xn(-FD_STEP)) / (2.0 * FD_STEP)
        total += d_xn * v_n
    return total


def rel_err(a: float, b: float) -> float:
    return abs(a - b) / max(1.0, abs(a), abs(b))


def projected_gradient_qp(P, q, A, b, max_iter=200_000):
    """Accelerated projected gradient on the dual of min 0.5x'Px+q'x, Ax<=b.

    Returns (x, objective) once the original problem's KKT conditions hold to
    tight tolerance; raises if it fails to converge (callers only use it on
    feasible, well-conditioned instances).
    """
    P = np.asarray(P, float)
    q = np.asarray(q, float)
    A = np.asarray(A, float)
    b = np.asarray(b, float)
    if A.size == 0:
        x = np.linalg.solve(P, -q)
        return x, float(0.5 * x @ P @ x + q @ x)
    Pinv = np.linalg.inv(P)
    M = A @ Pinv @ A.T
    lip = float(np.max(np.linalg.eigvalsh(M))) + 1e-12
    lam = np.zeros(len(b))
    momentum = lam.copy()
    t_acc = 1.0
    for _ in range(max_iter):
        x = -Pinv @ (q + A.T @ momentum)
        grad = A @ x - b
        lam_new = np.maximum(0.0, momentum + grad / lip)
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t_acc**2))
        momentum = lam_new + ((t_acc - 1.0) / t_new) * (lam_new - lam)
        lam, t_acc = lam_new, t_new
        x_now = -Pinv @ (q + A.T @ lam)
        resid = A @ x_now - b
        if np.max(resid, initial=0.0) <= 1e-9 and abs(lam @ resid) <= 1e-9:
            return x_now, float(0.5 * x_now @ P @ x_now + q @ x_now)
    raise RuntimeError("projected-gradient oracle did not converge")


def feasible_by_vertex_enumeration(A, b, box=1e6, tol=1e-7) -> bool:
    """Exact feasibility of {x : Ax <= b} for tiny dimensions.

    A large bounding box is added so the region, if nonempty, is a polytope
    and therefore has a vertex on some d linearly independent tight rows.
    """
    A = np.asarray(A, float)
    b = np.asarray(b, float)
    dim = A.shape[1]
    rows = [(A[i], b[i]) for i in range(len(b))]
    for i in range(dim):
        e = np.zeros(dim)
        e[i] = 1.0
        rows.append((e.copy(), box))
        rows.append((-e, box))
    full_a = np.array([r[0] for r in rows])
    full_b = np.array([r[1] for r in rows])
    for subset in combinations(range(len(rows)), dim):
        sub_a = full_a[list(subset)]
        sub_b = full_b[list(subset)]
        if abs(np.linalg.det(sub_a)) < 1e-12:
            continue
        vertex = np.linalg.solve(sub_a, sub_b)
        if np.max(full_a @ vertex - full_b) <= tol * max(1.0, float(np.max(np.abs(full_b)))):
            return True
    return False
