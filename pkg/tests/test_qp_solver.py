"""Dense QP solver vs. a brute-force active-set enumeration oracle."""

import itertools
import time

import numpy as np
import pytest

from motm.qp import QPProblem, QPSolution, kkt_residuals, solve
from motm.qp import _stack_inequalities


def brute_force(p):
    """Enumerate working sets; return the optimal x (unique for PD Q)."""
    Q = np.asarray(p.Q, float)
    c = np.asarray(p.c, float)
    n, me, _ = p.dims()
    Aeq = np.asarray(p.A_eq, float).reshape(me, n) if me else np.zeros((0, n))
    beq = np.asarray(p.b_eq, float) if me else np.zeros(0)
    G, h = _stack_inequalities(p)
    best = None
    for k in range(0, n - me + 1):
        for S in itertools.combinations(range(len(h)), k):
            N = np.vstack([Aeq, G[list(S)]])
            b = np.concatenate([beq, h[list(S)]])
            K = np.block([[Q, N.T], [N, np.zeros((len(b), len(b)))]])
            try:
                sol = np.linalg.solve(K, np.concatenate([-c, b]))
            except np.linalg.LinAlgError:
                continue
            x, lam = sol[:n], sol[n + me:]
            if len(h) and (G @ x - h).max() > 1e-8:
                continue
            if len(S) and lam.min() < -1e-8:
                continue
            obj = 0.5 * x @ Q @ x + c @ x
            if best is None or obj < best[1] - 1e-12:
                best = (x, obj)
    return best


def random_problem(rng):
    n = int(rng.integers(2, 6))
    A = rng.normal(size=(n, n))
    Q = A @ A.T + (0.1 + rng.uniform()) * np.eye(n)
    c = rng.normal(scale=2.0, size=n)
    x0 = rng.normal(size=n)
    me = int(rng.integers(0, min(3, n)))
    A_eq = rng.normal(size=(me, n)) if me else None
    b_eq = A_eq @ x0 if me else None
    mi = int(rng.integers(0, 6))
    A_in = rng.normal(size=(mi, n)) if mi else None
    b_in = A_in @ x0 + np.abs(rng.normal(size=mi)) if mi else None
    lb = ub = None
    if rng.uniform() < 0.4:
        ub = np.full(n, np.inf)
        j = int(rng.integers(0, n))
        ub[j] = x0[j] + abs(rng.normal())
    if rng.uniform() < 0.4:
        lb = np.full(n, -np.inf)
        j = int(rng.integers(0, n))
        lb[j] = x0[j] - abs(rng.normal())
    return QPProblem(Q=Q, c=c, A_eq=A_eq, b_eq=b_eq, A_in=A_in, b_in=b_in,
                     lb=lb, ub=ub)


def test_unconstrained():
    p = QPProblem(Q=np.eye(2), c=np.array([-1.0, -2.0]))
    s = solve(p)
    assert s.ok
    assert np.allclose(s.x, [1.0, 2.0], atol=1e-9)


def test_single_inequality_active():
    # min 0.5|x|^2 - [1,1].x  s.t. x0 + x1 <= 1  ->  x = (0.5, 0.5)
    p = QPProblem(Q=np.eye(2), c=np.array([-1.0, -1.0]),
                  A_in=np.array([[1.0, 1.0]]), b_in=np.array([1.0]))
    s = solve(p)
    assert s.ok
    assert np.allclose(s.x, [0.5, 0.5], atol=1e-9)
    assert s.active_set == (0,)


def test_equality_and_bounds():
    # min 0.5 x'Qx + c'x s.t. x0 + x1 = 1, x <= (0.3, inf)
    p = QPProblem(Q=np.diag([1.0, 2.0]), c=np.array([0.0, 0.0]),
                  A_eq=np.array([[1.0, 1.0]]), b_eq=np.array([1.0]),
                  ub=np.array([0.3, np.inf]), lb=np.array([-np.inf, -np.inf]))
    s = solve(p)
    assert s.ok
    # equality optimum would be x = (2/3, 1/3); the bound forces x0 = 0.3
    assert np.allclose(s.x, [0.3, 0.7], atol=1e-9)


def test_inactive_warm_start_hint_is_harmless():
    p = QPProblem(Q=np.eye(3), c=np.array([-1.0, 0.0, 1.0]))
    s = solve(p, warm_start=())
    assert s.ok and np.allclose(s.x, [1.0, 0.0, -1.0])


def test_random_problems_match_enumeration_oracle():
    rng = np.random.default_rng(7)
    t0 = time.time()
    checked = 0
    for _ in range(500):
        p = random_problem(rng)
        s = solve(p)
        assert s.ok, f"solver status {s.status}"
        stat, primal, dual, comp = kkt_residuals(p, s)
        scale = 1.0 + np.abs(p.c).max()
        assert stat <= 1e-6 * scale
        assert primal <= 1e-6
        assert dual <= 1e-6
        assert comp <= 1e-6 * scale
        oracle = brute_force(p)
        assert oracle is not None
        x_o, obj_o = oracle
        assert abs(s.objective - obj_o) <= 1e-6 * (1.0 + abs(obj_o))
        assert np.linalg.norm(s.x - x_o) <= 1e-5 * (1.0 + np.linalg.norm(x_o))
        checked += 1
    elapsed = time.time() - t0
    assert checked == 500
    assert elapsed < 30.0, f"500-problem sweep took {elapsed:.1f}s"


def test_warm_start_returns_same_answer_in_zero_iterations():
    rng = np.random.default_rng(3)
    for _ in range(50):
        p = random_problem(rng)
        s1 = solve(p)
        s2 = solve(p, warm_start=s1.active_set)
        assert s2.ok
        assert s2.iterations == 0
        assert np.allclose(s1.x, s2.x, atol=1e-7)


def test_deterministic():
    rng = np.random.default_rng(11)
    p = random_problem(rng)
    xa = solve(p).x.tobytes()
    xb = solve(p).x.tobytes()
    assert xa == xb


def test_iteration_cap_flags():
    # a normal problem but with an absurdly low cap still returns something
    p = QPProblem(Q=np.eye(3), c=np.array([-1.0, -1.0, -1.0]),
                  A_in=-np.eye(3), b_in=np.full(3, -2.0))  # x >= 2
    s = solve(p, max_iterations=1)
    assert s.status in ("iterations", "optimal")
    full = solve(p)
    assert full.ok
    assert np.allclose(full.x, [2.0, 2.0, 2.0], atol=1e-8)


def test_infeasible_reported():
    # x <= 0 and x >= 1 cannot hold
    p = QPProblem(Q=np.eye(1), c=np.zeros(1),
                  A_in=np.array([[1.0], [-1.0]]), b_in=np.array([0.0, -1.0]))
    s = solve(p)
    assert s.status == "infeasible"
