import numpy as np
import pytest

from platoonlc.qp import (
    KktReport,
    LinearConstraint,
    QpProblem,
    QpSolution,
    QpStatus,
    kkt_check,
    solve,
)

from oracles import feasible_by_vertex_enumeration, projected_gradient_qp


def le(coeffs, rhs):
    return LinearConstraint(np.asarray(coeffs, float), rhs, "le")


def ge(coeffs, rhs):
    return LinearConstraint(np.asarray(coeffs, float), rhs, "ge")


def test_unconstrained_minimizer():
    p = QpProblem(dim=1, P=np.array([[1.0]]), q=np.array([0.0]), rows=[])
    s = solve(p)
    assert s.status is QpStatus.OPTIMAL
    assert s.x[0] == pytest.approx(0.0)
    assert s.active_set == ()


def test_clamped_minimizer():
    # min 0.5 (u - 1)^2 subject to u <= 0
    p = QpProblem(dim=1, P=np.array([[1.0]]), q=np.array([-1.0]), rows=[le([1.0], 0.0)])
    s = solve(p)
    assert s.status is QpStatus.OPTIMAL
    assert s.x[0] == pytest.approx(0.0, abs=1e-12)
    assert s.active_set == (0,)


def test_two_bound_minimizer():
    p = QpProblem(
        dim=2,
        P=np.eye(2),
        q=np.zeros(2),
        rows=[ge([1.0, 0.0], 1.0), ge([0.0, 1.0], 2.0)],
    )
    s = solve(p)
    assert s.status is QpStatus.OPTIMAL
    np.testing.assert_allclose(s.x, [1.0, 2.0], atol=1e-10)
    assert s.objective == pytest.approx(2.5)


def test_infeasible_pair():
    p = QpProblem(
        dim=1,
        P=np.array([[1.0]]),
        q=np.zeros(1),
        rows=[ge([1.0], 1.0), le([1.0], 0.0)],
    )
    s = solve(p)
    assert s.status is QpStatus.INFEASIBLE
    assert s.x is None


def test_problem_validation():
    with pytest.raises(ValueError):
        QpProblem(dim=2, P=np.array([[1.0, 0.5], [0.0, 1.0]]), q=np.zeros(2))
    with pytest.raises(ValueError):
        QpProblem(dim=2, P=np.diag([1.0, -1.0]), q=np.zeros(2))
    with pytest.raises(ValueError):
        QpProblem(dim=1, P=np.eye(1), q=np.zeros(1), rows=[LinearConstraint(np.ones(1), 0.0, "eq")])


def _random_feasible_problem(rng):
    dim = rng.randint(1, 7)
    m = rng.randint(0, 9)
    mat = rng.uniform(-5, 5, size=(dim, dim))
    P = mat.T @ mat + np.eye(dim)
    q = rng.uniform(-5, 5, size=dim)
    anchor = rng.uniform(-2, 2, size=dim)
    rows = []
    for _ in range(m):
        coeffs = rng.uniform(-5, 5, size=dim)
        slack = rng.uniform(0.0, 5.0)
        if rng.rand() < 0.5:
            rows.append(le(coeffs, float(coeffs @ anchor + slack)))
        else:
            rows.append(ge(-coeffs, float(-(coeffs @ anchor + slack))))
    return QpProblem(dim=dim, P=P, q=q, rows=rows)


def test_random_problems_match_projected_gradient_oracle():
    rng = np.random.RandomState(2024)
    for _ in range(1000):
        p = _random_feasible_problem(rng)
        s = solve(p)
        assert s.status is QpStatus.OPTIMAL
        report = kkt_check(p, s)
        assert report.ok, report.failures
        A, b = p.normalized()
        _, obj = projected_gradient_qp(p.P, p.q, A, b)
        assert abs(s.objective - obj) <= 1e-6 * max(1.0, abs(obj))


def test_feasibility_agrees_with_vertex_enumeration():
    rng = np.random.RandomState(77)
    n_infeasible = 0
    for _ in range(200):
        dim = rng.randint(1, 4)
        m = rng.randint(1, 9)
        mat = rng.uniform(-5, 5, size=(dim, dim))
        P = mat.T @ mat + np.eye(dim)
        q = rng.uniform(-5, 5, size=dim)
        rows = [le(rng.uniform(-5, 5, size=dim), rng.uniform(-5, 5)) for _ in range(m)]
        p = QpProblem(dim=dim, P=P, q=q, rows=rows)
        s = solve(p)
        A, b = p.normalized()
        oracle_feasible = feasible_by_vertex_enumeration(A, b)
        assert (s.status is QpStatus.OPTIMAL) == oracle_feasible
        if not oracle_feasible:
            n_infeasible += 1
    assert n_infeasible > 10  # the sample actually exercises both outcomes


def test_determinism():
    rng = np.random.RandomState(5)
    for _ in range(50):
        p = _random_feasible_problem(rng)
        s1 = solve(p)
        s2 = solve(p)
        assert s1.x.tobytes() == s2.x.tobytes()
        assert s1.active_set == s2.active_set


def test_kkt_check_unconstrained_zero_residuals():
    p = QpProblem(dim=2, P=np.eye(2), q=np.array([1.0, -2.0]), rows=[])
    s = solve(p)
    report = kkt_check(p, s)
    assert report.ok
    assert report.primal_violation == 0.0
    assert report.stationarity == pytest.approx(0.0, abs=1e-14)


def test_kkt_check_hand_built_pair():
    # min 0.5 x'x - [1, 1] x  s.t. x0 <= 0 -> x = (0, 1), lambda = 1
    p = QpProblem(dim=2, P=np.eye(2), q=np.array([-1.0, -1.0]), rows=[le([1.0, 0.0], 0.0)])
    s = QpSolution(
        status=QpStatus.OPTIMAL,
        x=np.array([0.0, 1.0]),
        active_set=(0,),
        multipliers=np.array([1.0]),
        objective=-0.5,
    )
    assert kkt_check(p, s).ok


def test_kkt_check_flags_perturbed_point():
    p = QpProblem(dim=1, P=np.eye(1), q=np.array([-1.0]), rows=[le([1.0], 0.0)])
    s = solve(p)
    bad = QpSolution(
        status=QpStatus.OPTIMAL,
        x=s.x + 1e-3,  # steps across the constraint
        active_set=s.active_set,
        multipliers=s.multipliers,
        objective=None,
    )
    report = kkt_check(p, bad)
    assert not report.ok
    assert any("primal" in f for f in report.failures)


def test_kkt_check_requires_optimal():
    p = QpProblem(dim=1, P=np.eye(1), q=np.zeros(1), rows=[])
    with pytest.raises(ValueError):
        kkt_check(p, QpSolution(QpStatus.INFEASIBLE, None, (), None, None))
