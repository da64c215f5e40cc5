"""Dense convex QP solver (dual active-set, sized for small problems).

Solves
    min 0.5 x^T Q x + c^T x
    s.t. A_eq x = b_eq,  A_in x <= b_in,  lb <= x <= ub

with strictly convex Q. The method starts from the unconstrained optimum,
adds the equalities, then repeatedly drives the most violated inequality to
its boundary, taking dual-blocking partial steps that drop constraints whose
multipliers would go negative. Problems in this package have at most ~20
variables, so every step refactorizes instead of doing rank-1 updates.

A warm-start hint (the previous tick's active set) short-circuits to a single
KKT solve when the active set is unchanged.
"""

from dataclasses import dataclass, field

import numpy as np

_TOL = 1e-9


@dataclass
class QPProblem:
    Q: np.ndarray
    c: np.ndarray
    A_eq: np.ndarray = None
    b_eq: np.ndarray = None
    A_in: np.ndarray = None
    b_in: np.ndarray = None
    lb: np.ndarray = None
    ub: np.ndarray = None

    def dims(self):
        n = len(self.c)
        me = 0 if self.A_eq is None else len(self.b_eq)
        mi = 0 if self.A_in is None else len(self.b_in)
        return n, me, mi


@dataclass
class QPSolution:
    x: np.ndarray
    status: str                      # "optimal" | "iterations" | "infeasible"
    iterations: int
    active_set: tuple = ()           # indices into the stacked inequality rows
    lam_eq: np.ndarray = None
    lam_in: np.ndarray = None        # stacked: A_in rows then ub rows then lb rows
    objective: float = 0.0

    @property
    def ok(self):
        return self.status == "optimal"


def _stack_inequalities(p):
    """General rows + finite bounds as G x <= h."""
    n, me, mi = p.dims()
    rows = []
    rhs = []
    if mi:
        rows.append(np.asarray(p.A_in, dtype=float))
        rhs.append(np.asarray(p.b_in, dtype=float))
    if p.ub is not None:
        idx = np.where(np.isfinite(p.ub))[0]
        if len(idx):
            E = np.zeros((len(idx), n))
            E[np.arange(len(idx)), idx] = 1.0
            rows.append(E)
            rhs.append(np.asarray(p.ub, dtype=float)[idx])
    if p.lb is not None:
        idx = np.where(np.isfinite(p.lb))[0]
        if len(idx):
            E = np.zeros((len(idx), n))
            E[np.arange(len(idx)), idx] = -1.0
            rows.append(E)
            rhs.append(-np.asarray(p.lb, dtype=float)[idx])
    if rows:
        return np.vstack(rows), np.concatenate(rhs)
    return np.zeros((0, n)), np.zeros(0)


def _kkt_solve(Q, c, N, b):
    """Equality-constrained QP: min 0.5 x'Qx + c'x s.t. N x = b."""
    n = Q.shape[0]
    k = N.shape[0]
    if k == 0:
        return np.linalg.solve(Q, -c), np.zeros(0)
    K = np.zeros((n + k, n + k))
    K[:n, :n] = Q
    K[:n, n:] = N.T
    K[n:, :n] = N
    rhs = np.concatenate([-c, b])
    try:
        sol = np.linalg.solve(K, rhs)
    except np.linalg.LinAlgError:
        sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
    return sol[:n], sol[n:]


def solve(p, warm_start=None, max_iterations=200):
    """Solve a QPProblem; warm_start is an active-set tuple from a prior call."""
    Q = np.asarray(p.Q, dtype=float)
    c = np.asarray(p.c, dtype=float)
    n, me, _ = p.dims()
    Aeq = (np.asarray(p.A_eq, dtype=float).reshape(me, n) if me
           else np.zeros((0, n)))
    beq = np.asarray(p.b_eq, dtype=float) if me else np.zeros(0)
    G, h = _stack_inequalities(p)
    mg = len(h)

    def finish(x, status, iters, W_in, lam_in_vals, lam_eq_vals):
        lam_in = np.zeros(mg)
        for j, lv in zip(W_in, lam_in_vals):
            lam_in[j] = lv
        obj = 0.5 * x @ Q @ x + c @ x
        return QPSolution(x=x, status=status, iterations=iters,
                          active_set=tuple(sorted(W_in)),
                          lam_eq=lam_eq_vals, lam_in=lam_in, objective=obj)

    def try_working_set(idx):
        """One KKT solve with equalities + the given inequality rows active."""
        N = np.vstack([Aeq, G[list(idx)]]) if len(idx) else Aeq
        b = np.concatenate([beq, h[list(idx)]]) if len(idx) else beq
        x, lam = _kkt_solve(Q, c, N, b)
        return x, lam[:me], lam[me:]

    if warm_start is not None:
        idx = [j for j in warm_start if 0 <= j < mg]
        try:
            x, lam_eq, lam_in = try_working_set(idx)
            feas_eq = (not me) or np.max(np.abs(Aeq @ x - beq)) <= 1e-7
            feas_in = (not mg) or np.max(G @ x - h) <= 1e-7
            dual_ok = (not len(idx)) or lam_in.min() >= -1e-9
            if feas_eq and feas_in and dual_ok:
                return finish(x, "optimal", 0, idx, lam_in, lam_eq)
        except np.linalg.LinAlgError:
            pass

    # ---- cold start: dual active set ----
    try:
        Qinv = np.linalg.inv(Q)
    except np.linalg.LinAlgError:
        Qinv = np.linalg.pinv(Q)
    x = -Qinv @ c

    W_rows = []        # constraint normals currently active
    W_kind = []        # "eq" or "in"
    W_idx = []         # row index within its family
    lam = []           # multipliers, aligned with W_rows
    iters = 0

    def directions(a):
        """Primal/dual step directions for activating normal a."""
        if not W_rows:
            return Qinv @ a, np.zeros(0)
        N = np.array(W_rows)
        QiN = Qinv @ N.T
        B = N @ QiN
        rhs = N @ (Qinv @ a)
        try:
            r = np.linalg.solve(B, rhs)
        except np.linalg.LinAlgError:
            r = np.linalg.lstsq(B, rhs, rcond=None)[0]
        z = Qinv @ a - QiN @ r
        return z, r

    def activate(a, b_val, kind, index):
        """Drive constraint a.x <= / == b_val into the working set."""
        nonlocal x, iters
        s = float(a @ x - b_val)
        while True:
            iters += 1
            if iters > max_iterations:
                return "iterations"
            z, r = directions(a)
            adotz = float(a @ z)
            # dual blocking step among inequality members
            t1 = np.inf
            k_block = -1
            for i, (knd, li, ri) in enumerate(zip(W_kind, lam, r)):
                if knd == "in" and ri > _TOL and li / ri < t1:
                    t1 = li / ri
                    k_block = i
            t2 = s / adotz if adotz > _TOL else np.inf
            t = min(t1, t2)
            if not np.isfinite(t):
                return "infeasible"
            x = x - t * z
            for i in range(len(lam)):
                lam[i] -= t * r[i]
            s -= t * adotz
            if t == t2 and t2 <= t1:
                W_rows.append(a)
                W_kind.append(kind)
                W_idx.append(index)
                lam.append(t)
                return "ok"
            # partial step: drop the blocking member, keep pushing
            W_rows.pop(k_block)
            W_kind.pop(k_block)
            W_idx.pop(k_block)
            lam.pop(k_block)

    # equalities first; flip sign so the "violation" is positive
    for k in range(me):
        a = Aeq[k]
        b_val = beq[k]
        s = float(a @ x - b_val)
        if abs(s) <= 1e-10:
            # already satisfied; still add to the working set if independent
            z, r = directions(a)
            if float(a @ z) > _TOL:
                W_rows.append(a.copy())
                W_kind.append("eq")
                W_idx.append(k)
                lam.append(0.0)
            continue
        if s < 0.0:
            a = -a
            b_val = -b_val
        st = activate(a, b_val, "eq", k)
        if st != "ok":
            lam_eq = np.zeros(me)
            return finish(x, st, iters, [], [], lam_eq)

    def bail(status):
        lam_eq = np.zeros(me)
        for knd, i, lv in zip(W_kind, W_idx, lam):
            if knd == "eq":
                lam_eq[i] = lv
        in_rows = [i for knd, i in zip(W_kind, W_idx) if knd == "in"]
        in_lams = [lv for knd, lv in zip(W_kind, lam) if knd == "in"]
        return finish(x, status, iters, in_rows, in_lams, lam_eq)

    # drive to primal feasibility with dual steps
    while True:
        viol = G @ x - h if mg else np.zeros(0)
        if not mg or viol.max() <= 1e-9:
            break
        if iters > max_iterations // 2:
            # Bland-style pick breaks selection cycles on degenerate sets
            pj = int(np.flatnonzero(viol > 1e-9)[0])
        else:
            pj = int(np.argmax(viol))
        st = activate(G[pj], h[pj], "in", pj)
        if st != "ok":
            return bail(st)

    # primal refinement: from a feasible point, step toward the working-set
    # optimum only as far as feasibility allows; a blocking constraint joins
    # the set, a negative multiplier leaves it
    while True:
        in_rows = [i for knd, i in zip(W_kind, W_idx) if knd == "in"]
        try:
            x_ws, lam_eq, lam_in = try_working_set(in_rows)
        except np.linalg.LinAlgError:
            return bail("optimal")
        d = x_ws - x
        j_block = -1
        if mg:
            members = set(in_rows)
            Gd = G @ d
            slack = h - G @ x
            t_max = 1.0
            for j in range(mg):
                if j in members or Gd[j] <= _TOL:
                    continue
                tj = slack[j] / Gd[j]
                if tj < t_max - 1e-12:
                    t_max = tj
                    j_block = j
        if j_block >= 0:
            iters += 1
            if iters > max_iterations:
                return bail("iterations")
            x = x + max(t_max, 0.0) * d
            W_rows.append(G[j_block].copy())
            W_kind.append("in")
            W_idx.append(j_block)
            lam.append(0.0)
            continue
        x = x_ws
        if len(in_rows) and lam_in.min() < -1e-8:
            iters += 1
            if iters > max_iterations:
                return bail("iterations")
            worst = int(np.argmin(lam_in))
            gone = in_rows[worst]
            k = next(i for i, (knd, gi) in enumerate(zip(W_kind, W_idx))
                     if knd == "in" and gi == gone)
            W_rows.pop(k)
            W_kind.pop(k)
            W_idx.pop(k)
            lam.pop(k)
            continue
        return finish(x_ws, "optimal", iters, in_rows, lam_in, lam_eq)


def kkt_residuals(p, sol):
    """(stationarity, primal, dual, complementarity) residual magnitudes."""
    Q = np.asarray(p.Q, dtype=float)
    c = np.asarray(p.c, dtype=float)
    n, me, _ = p.dims()
    G, h = _stack_inequalities(p)
    x = sol.x
    g = Q @ x + c
    if me:
        g = g + np.asarray(p.A_eq, dtype=float).T @ sol.lam_eq
    if len(h):
        g = g + G.T @ sol.lam_in
    stat = float(np.max(np.abs(g))) if n else 0.0
    primal = 0.0
    if me:
        primal = max(primal, float(np.max(np.abs(p.A_eq @ x - p.b_eq))))
    if len(h):
        primal = max(primal, float(max(0.0, (G @ x - h).max())))
    dual = float(max(0.0, -(sol.lam_in.min() if len(h) else 0.0)))
    comp = float(np.max(np.abs(sol.lam_in * (G @ x - h)))) if len(h) else 0.0
    return stat, primal, dual, comp
