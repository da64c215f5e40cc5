"""Whole-body redundancy resolution.

Maps a desired end-effector spatial velocity plus a desired base twist into
joint velocities and an actual base twist, trading the two off through slack
variables.  The arm's spare degrees of freedom are spent on raising
manipulability and keeping the shoulder pointed at the end effector.
"""

from dataclasses import dataclass

import numpy as np

from .kinematics import (
    fk_frames,
    manipulability_gradient,
    pan_joint_index,
    whole_body_jacobian,
)
from .qp import QPProblem, solve


@dataclass
class ResolutionWeights:
    w_qdot: float = 0.01
    w_base: float = 1e-6
    w_slack_ee: float = 1e4
    w_slack_base: float = 1e3
    w_manip: float = 1.0
    w_face: float = 0.5
    eta: float = 1.0
    rho_i: float = 0.9
    rho_s: float = 0.05


@dataclass
class ResolveResult:
    qd: np.ndarray
    v: float
    omega: float
    slack_ee: np.ndarray
    slack_base: np.ndarray
    status: str
    iterations: int
    manip_degraded: bool

    @property
    def ok(self):
        return self.status in ("optimal", "iterations")


def facing_penalty(model, base_pose, q):
    """Bearing of the end effector in the pan joint's rotated frame.

    Zero when the shoulder points straight at the end effector.  Returns
    (phi, gradient over arm joints).  Only the pan joint moves the frame
    relative to a task-pinned end effector, so the gradient is a single
    +/-1 entry.
    """
    n = model.n
    grad = np.zeros(n)
    j = pan_joint_index(model)
    if j is None:
        return 0.0, grad
    frames = fk_frames(model, base_pose, q)
    T_pan = frames["joint1_origin"]
    p = T_pan.inverse() @ frames["end_effector"].t
    if p[0] ** 2 + p[1] ** 2 < 1e-4:  # within 1 cm overhead: bearing ill-defined
        return 0.0, grad
    phi = float(np.arctan2(p[1], p[0]))
    a = model.mount.R @ model.joints[j].axis
    grad[j] = -float(np.sign(a[2]))
    return phi, grad


def velocity_dampers(model, q, weights):
    """Joint-limit avoidance rows (A, b) acting on the qdot block only."""
    rows = []
    rhs = []
    lo, hi = model.joint_limits
    eta = weights.eta
    rho_i = weights.rho_i
    rho_s = weights.rho_s
    for j in range(model.n):
        if np.isfinite(hi[j]):
            rho = hi[j] - q[j]
            if rho < rho_i:
                row = np.zeros(model.n)
                row[j] = 1.0
                rows.append(row)
                rhs.append(eta * (rho - rho_s) / (rho_i - rho_s))
        if np.isfinite(lo[j]):
            rho = q[j] - lo[j]
            if rho < rho_i:
                row = np.zeros(model.n)
                row[j] = -1.0
                rows.append(row)
                rhs.append(eta * (rho - rho_s) / (rho_i - rho_s))
    if not rows:
        return None, None
    return np.array(rows), np.array(rhs)


def damper_bounds(model, q, weights):
    """Velocity bounds with the dampers folded in.

    A damper row shares its normal with the joint's velocity bound, which
    makes the QP working set degenerate; expressing the damper as the
    tighter of the two bounds is the identical constraint set without the
    parallel rows.
    """
    lo, hi = model.joint_limits
    eta = weights.eta
    rho_i = weights.rho_i
    rho_s = weights.rho_s
    vel = model.velocity_limits
    ub = vel.astype(float).copy()
    lb = -vel.astype(float)
    for j in range(model.n):
        if np.isfinite(hi[j]):
            rho = hi[j] - q[j]
            if rho < rho_i:
                ub[j] = min(ub[j], eta * (rho - rho_s) / (rho_i - rho_s))
        if np.isfinite(lo[j]):
            rho = q[j] - lo[j]
            if rho < rho_i:
                lb[j] = max(lb[j], -eta * (rho - rho_s) / (rho_i - rho_s))
        if lb[j] > ub[j]:
            mid = 0.5 * (lb[j] + ub[j])
            lb[j] = ub[j] = mid
    return lb, ub


def assemble(model, base_pose, q, nu_des, base_des, weights=None,
             pin_base=False):
    """Build the whole-body QP.

    Decision vector: [qdot (n), v, omega, slack_ee (6), slack_base (2)].
    With pin_base the base twist is constrained to base_des exactly instead
    of being traded off through its slack. Returns (problem, manip_degraded).
    """
    if weights is None:
        weights = ResolutionWeights()
    n = model.n
    dim = n + 2 + 6 + 2
    nu_des = np.asarray(nu_des, dtype=float).reshape(6)
    base_des = np.asarray(base_des, dtype=float).reshape(2)

    Q = np.zeros((dim, dim))
    Q[:n, :n] = weights.w_qdot * np.eye(n)
    Q[n, n] = weights.w_base
    Q[n + 1, n + 1] = weights.w_base
    Q[n + 2:n + 8, n + 2:n + 8] = weights.w_slack_ee * np.eye(6)
    Q[n + 8:, n + 8:] = weights.w_slack_base * np.eye(2)

    grad_m, degraded = manipulability_gradient(model, base_pose, q)
    phi, grad_phi = facing_penalty(model, base_pose, q)
    c = np.zeros(dim)
    if not degraded:
        c[:n] -= weights.w_manip * grad_m
    c[:n] += weights.w_face * np.sign(phi) * grad_phi

    J = whole_body_jacobian(model, base_pose, q)
    me = 10 if pin_base else 8
    A_eq = np.zeros((me, dim))
    b_eq = np.zeros(me)
    A_eq[:6, :n + 2] = J
    A_eq[:6, n + 2:n + 8] = np.eye(6)
    b_eq[:6] = nu_des
    A_eq[6, n] = 1.0
    A_eq[7, n + 1] = 1.0
    A_eq[6:8, n + 8:] = np.eye(2)
    b_eq[6:8] = base_des
    if pin_base:
        A_eq[8, n] = 1.0
        A_eq[9, n + 1] = 1.0
        b_eq[8:] = base_des

    lb = np.full(dim, -np.inf)
    ub = np.full(dim, np.inf)
    lb[:n], ub[:n] = damper_bounds(model, q, weights)
    lb[n] = -model.base_vel_limit
    ub[n] = model.base_vel_limit
    lb[n + 1] = -model.base_omega_limit
    ub[n + 1] = model.base_omega_limit

    problem = QPProblem(Q=Q, c=c, A_eq=A_eq, b_eq=b_eq, A_in=None, b_in=None,
                        lb=lb, ub=ub)
    return problem, degraded


class WholeBodyResolver:
    """Stateful wrapper: warm-starts each tick from the previous active set."""

    def __init__(self, model, weights=None):
        self.model = model
        self.weights = weights if weights is not None else ResolutionWeights()
        self._warm = None

    def reset(self):
        self._warm = None

    def resolve(self, base_pose, q, nu_des, base_des, pin_base=False):
        n = self.model.n
        problem, degraded = assemble(self.model, base_pose, q, nu_des,
                                     base_des, self.weights,
                                     pin_base=pin_base)
        sol = solve(problem, warm_start=self._warm)
        if not sol.ok:
            self._warm = None
            return ResolveResult(qd=np.zeros(n), v=0.0, omega=0.0,
                                 slack_ee=np.zeros(6),
                                 slack_base=np.zeros(2),
                                 status=sol.status,
                                 iterations=sol.iterations,
                                 manip_degraded=degraded)
        self._warm = sol.active_set
        x = sol.x
        return ResolveResult(qd=x[:n].copy(), v=float(x[n]),
                             omega=float(x[n + 1]),
                             slack_ee=x[n + 2:n + 8].copy(),
                             slack_base=x[n + 8:].copy(),
                             status=sol.status,
                             iterations=sol.iterations,
                             manip_degraded=degraded)
