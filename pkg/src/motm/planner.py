"""Offline trajectory-optimization baseline.

The plan is a discrete-time optimization over the base path (xy) and the
end-effector path (xyz) that minimizes integrated squared EE acceleration
subject to boundary conditions, predetermined grasp/drop times, a base
speed cap, the base-gripper reach band, and a keep-out ring around the
grasp target.  The two ring-shaped constraints are nonconvex, so the
solve runs a short sequential-convexification loop: linearize both around
the previous iterate, solve the convex QP (cvxopt, sparse), repeat until
the step is tiny.  Tracking is pure feedforward-plus-proportional against
the planned knots; the plan is never recomputed mid-trial.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np
from cvxopt import matrix, solvers, spmatrix

from .arm_control import ReachConfig, orientation_rate, orientation_schedule
from .base_control import ApproachGeometry, BaseGains, closest_approach
from .errors import PlanningFailure
from .redundancy import ResolutionWeights, WholeBodyResolver
from .spatial import Pose2, top_down_rotation, wrap_angle
from .world import ControlCommand

DT_PLAN = 0.1
SC_MAX_ITERS = 10
SC_STEP_TOL = 1e-4
VIOLATION_LIMIT = 0.01       # metres; anything above fails the plan
K_TRACK = 2.0
N_GON = 16                   # polygon faces approximating the speed/band balls
BASE_REG = 1e-3              # relative weight of the base-smoothness term

solvers.options["show_progress"] = False


@dataclass
class PlanTimes:
    t_grasp: float
    t_drop: float
    t_finish: float

    def validate(self):
        if not (0.0 < self.t_grasp < self.t_drop < self.t_finish):
            raise PlanningFailure(
                f"plan times must be ordered: {self.t_grasp}, "
                f"{self.t_drop}, {self.t_finish}")


@dataclass
class PlanLimits:
    v_max: float = 0.3
    d_min: float = 0.3
    d_max: float = 0.9
    r_c: float = 0.6


@dataclass
class PlanKnot:
    base: Pose2
    v: float
    omega: float
    ee: np.ndarray
    ee_vel: np.ndarray


@dataclass
class PlannedTrajectory:
    dt_plan: float
    knots: list
    t_grasp: float
    t_drop: float
    t_finish: float
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        want = int(round(self.t_finish / self.dt_plan)) + 1
        if len(self.knots) != want:
            raise PlanningFailure(
                f"knot count {len(self.knots)} != t_finish/dt_plan+1 "
                f"= {want}")
        for label, t in (("grasp", self.t_grasp), ("drop", self.t_drop)):
            k = int(round(t / self.dt_plan))
            if not 0 <= k < len(self.knots):
                raise PlanningFailure(f"{label} index out of range")

    def index(self, t):
        return min(max(int(round(t / self.dt_plan)), 0), len(self.knots) - 1)

    def sample(self, t):
        """Linear interpolation between knots; clamps outside the horizon."""
        if t <= 0.0:
            return self.knots[0]
        if t >= self.t_finish:
            return self.knots[-1]
        x = t / self.dt_plan
        k = min(int(x), len(self.knots) - 2)
        a = x - k
        k0, k1 = self.knots[k], self.knots[k + 1]
        th = k0.base.theta + a * wrap_angle(k1.base.theta - k0.base.theta)
        return PlanKnot(
            base=Pose2((1 - a) * k0.base.x + a * k1.base.x,
                       (1 - a) * k0.base.y + a * k1.base.y, th),
            v=(1 - a) * k0.v + a * k1.v,
            omega=(1 - a) * k0.omega + a * k1.omega,
            ee=(1 - a) * k0.ee + a * k1.ee,
            ee_vel=(1 - a) * k0.ee_vel + a * k1.ee_vel)

    def to_dict(self):
        return {
            "dt_plan": self.dt_plan,
            "t_grasp": self.t_grasp,
            "t_drop": self.t_drop,
            "t_finish": self.t_finish,
            "knots": [
                {
                    "base": [k.base.x, k.base.y, k.base.theta],
                    "v": k.v,
                    "omega": k.omega,
                    "ee": [float(c) for c in k.ee],
                    "ee_vel": [float(c) for c in k.ee_vel],
                }
                for k in self.knots
            ],
            "diagnostics": self.diagnostics,
        }

    @classmethod
    def from_dict(cls, d):
        knots = [
            PlanKnot(base=Pose2(*k["base"]), v=k["v"], omega=k["omega"],
                     ee=np.array(k["ee"]), ee_vel=np.array(k["ee_vel"]))
            for k in d["knots"]
        ]
        return cls(dt_plan=d["dt_plan"], knots=knots, t_grasp=d["t_grasp"],
                   t_drop=d["t_drop"], t_finish=d["t_finish"],
                   diagnostics=d.get("diagnostics", {}))

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=1, sort_keys=True)

    @classmethod
    def load(cls, path):
        with open(path) as f:
            return cls.from_dict(json.load(f))


def min_acceleration_profile(distance, T, dt):
    """Discrete 1-axis rest-to-rest minimum-acceleration profile.

    Minimizes sum of squared second differences with both endpoints at
    rest; returns the knot positions.  As dt -> 0 this converges to the
    cubic d*(3 tau^2 - 2 tau^3).
    """
    n = int(round(T / dt))
    if n < 3:
        raise PlanningFailure("profile too short for the discretization")
    # unknown interior knots x_1..x_{n-1}; x_0 = 0, x_n = distance,
    # and the rest boundary enters through x_1 = x_0, x_{n-1} = x_n
    D = np.zeros((n - 1, n + 1))
    for i in range(1, n):
        D[i - 1, i - 1:i + 2] = (1.0, -2.0, 1.0)
    A = np.zeros((4, n + 1))
    b = np.zeros(4)
    A[0, 0] = 1.0
    A[1, n] = 1.0
    b[1] = distance
    A[2, 0], A[2, 1] = -1.0, 1.0
    A[3, n - 1], A[3, n] = -1.0, 1.0
    H = D.T @ D
    kkt = np.block([[H, A.T], [A, np.zeros((4, 4))]])
    rhs = np.concatenate([np.zeros(n + 1), b])
    sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
    return sol[:n + 1]


def derive_plan_times(start_xy, grasp_xy, place_xy, v_f,
                      cruise_factor=0.9, grasp_margin=2.0,
                      drop_margin=1.0, tail=1.5, dt=DT_PLAN):
    """Predetermined times from leg lengths at a derated cruise speed."""
    L1 = math.hypot(grasp_xy[0] - start_xy[0], grasp_xy[1] - start_xy[1])
    L2 = math.hypot(place_xy[0] - grasp_xy[0], place_xy[1] - grasp_xy[1])
    cruise = cruise_factor * v_f
    t_g = L1 / cruise + grasp_margin
    t_d = t_g + L2 / cruise + drop_margin
    t_f = t_d + tail
    g = max(2, int(round(t_g / dt)))
    d = max(g + 2, int(round(t_d / dt)))
    n = max(d + 2, int(round(t_f / dt)))
    return PlanTimes(g * dt, d * dt, n * dt)


def _polygon_dirs(n=N_GON):
    ang = 2.0 * math.pi * np.arange(n) / n
    return np.stack([np.cos(ang), np.sin(ang)], axis=1)


class _QPBuilder:
    """Sparse triplet accumulator for the cvxopt matrices."""

    def __init__(self, nvar):
        self.nvar = nvar
        self.rows_G, self.cols_G, self.vals_G, self.h = [], [], [], []
        self.rows_A, self.cols_A, self.vals_A, self.b = [], [], [], []

    def ineq(self, cols, vals, rhs):
        r = len(self.h)
        for c, v in zip(cols, vals):
            self.rows_G.append(r)
            self.cols_G.append(c)
            self.vals_G.append(v)
        self.h.append(rhs)

    def eq(self, cols, vals, rhs):
        r = len(self.b)
        for c, v in zip(cols, vals):
            self.rows_A.append(r)
            self.cols_A.append(c)
            self.vals_A.append(v)
        self.b.append(rhs)

    def matrices(self):
        G = spmatrix(self.vals_G, self.rows_G, self.cols_G,
                     (len(self.h), self.nvar))
        A = spmatrix(self.vals_A, self.rows_A, self.cols_A,
                     (len(self.b), self.nvar))
        return G, matrix(self.h), A, matrix(self.b)


def plan_otm_trajectory(scene, times, limits, *, start_base, start_ee,
                        grasp_xy=None, dt_plan=DT_PLAN):
    """Plan base + EE paths for one pick-and-place pass.

    `times` fixes the grasp/drop/finish instants; the grasp pose is frozen
    at whatever `grasp_xy` says when the plan is built.  Raises
    PlanningFailure if the convexified problem cannot be driven below a
    1 cm constraint violation.
    """
    times.validate()
    gx = (np.asarray(grasp_xy, dtype=float) if grasp_xy is not None
          else np.asarray(scene.platform_center, dtype=float))
    p_grasp = np.array([gx[0], gx[1], scene.object_center_z])
    cx, cy = scene.container_center
    p_drop = np.array([cx, cy, scene.container_top + 0.03])

    N = int(round(times.t_finish / dt_plan))
    g = int(round(times.t_grasp / dt_plan))
    d = int(round(times.t_drop / dt_plan))
    nb = 2 * (N + 1)
    nv = nb + 3 * (N + 1)

    def bidx(i):
        return 2 * i

    def eidx(i):
        return nb + 3 * i

    b0 = np.array([start_base.x, start_base.y])
    e0 = np.asarray(start_ee, dtype=float)

    # seed path through the approach poses of the two objectives
    chi_g, _ = closest_approach(
        start_base, Pose2(gx[0], gx[1], 0.0),
        Pose2(cx, cy, 0.0), ApproachGeometry(r_p=limits.r_c - 0.25))
    ex, ey = scene.exit_point
    chi_d, _ = closest_approach(
        Pose2(chi_g.x, chi_g.y, chi_g.theta), Pose2(cx, cy, 0.0),
        Pose2(ex, ey, 0.0), ApproachGeometry(r_p=limits.r_c - 0.25))
    t_knots = np.arange(N + 1) * dt_plan
    wp_t = [0.0, times.t_grasp, times.t_drop, times.t_finish]
    wp_b = np.array([b0, [chi_g.x, chi_g.y], [chi_d.x, chi_d.y],
                     [chi_d.x + 0.3, chi_d.y]])
    wp_e = np.array([e0, p_grasp, p_drop, p_drop + [0.3, 0.0, 0.1]])
    b_prev = np.stack([np.interp(t_knots, wp_t, wp_b[:, k])
                       for k in range(2)], axis=1)
    e_prev = np.stack([np.interp(t_knots, wp_t, wp_e[:, k])
                       for k in range(3)], axis=1)

    # quadratic cost: sum ||second difference||^2 on the EE knots, plus a
    # small identical term on the base knots so its path is well defined
    rP, cP, vP = [], [], []

    def add_second_diff(idx_fn, dims, weight):
        # (x_{i+1} - 2 x_i + x_{i-1}) pattern, one block per interior knot
        coef = [1.0, -2.0, 1.0]
        for i in range(1, N):
            for a in range(dims):
                cols = [idx_fn(i - 1) + a, idx_fn(i) + a, idx_fn(i + 1) + a]
                for p in range(3):
                    for q in range(3):
                        rP.append(cols[p])
                        cP.append(cols[q])
                        vP.append(weight * coef[p] * coef[q])

    w_ee = 2.0 / dt_plan ** 3          # = 2 * dt / dt^4
    add_second_diff(eidx, 3, w_ee)
    add_second_diff(bidx, 2, BASE_REG * w_ee)
    P = spmatrix(vP, rP, cP, (nv, nv))
    qlin = matrix(np.zeros(nv))

    dirs = _polygon_dirs()
    cos_half = math.cos(math.pi / N_GON)
    objective_hist = []
    step = float("inf")
    iters = 0

    for it in range(SC_MAX_ITERS):
        iters = it + 1
        B = _QPBuilder(nv)

        # boundary conditions
        for a in range(2):
            B.eq([bidx(0) + a], [1.0], b0[a])
            B.eq([bidx(0) + a, bidx(1) + a], [-1.0, 1.0], 0.0)
            B.eq([bidx(N - 1) + a, bidx(N) + a], [-1.0, 1.0], 0.0)
        for a in range(3):
            B.eq([eidx(0) + a], [1.0], e0[a])
            B.eq([eidx(0) + a, eidx(1) + a], [-1.0, 1.0], 0.0)
            B.eq([eidx(N - 1) + a, eidx(N) + a], [-1.0, 1.0], 0.0)
            B.eq([eidx(g) + a], [1.0], p_grasp[a])
            B.eq([eidx(g - 1) + a, eidx(g + 1) + a], [-1.0, 1.0], 0.0)
            B.eq([eidx(d) + a], [1.0], p_drop[a])

        # base speed polygon per step
        vcap = limits.v_max * dt_plan * cos_half
        for i in range(N):
            for u in dirs:
                B.ineq([bidx(i), bidx(i) + 1, bidx(i + 1), bidx(i + 1) + 1],
                       [-u[0], -u[1], u[0], u[1]], vcap)

        # reach band upper bound (convex polygon)
        dmax = limits.d_max * cos_half
        for i in range(N + 1):
            for u in dirs:
                B.ineq([eidx(i), eidx(i) + 1, bidx(i), bidx(i) + 1],
                       [u[0], u[1], -u[0], -u[1]], dmax)

        # reach band lower bound, linearized about the previous iterate
        for i in range(N + 1):
            r = e_prev[i, :2] - b_prev[i]
            nr = np.linalg.norm(r)
            n_hat = r / nr if nr > 1e-9 else np.array([1.0, 0.0])
            B.ineq([eidx(i), eidx(i) + 1, bidx(i), bidx(i) + 1],
                   [-n_hat[0], -n_hat[1], n_hat[0], n_hat[1]],
                   -limits.d_min)

        # keep-out ring around the grasp target while it is still there
        for i in range(g + 1):
            r = b_prev[i] - gx
            nr = np.linalg.norm(r)
            m_hat = r / nr if nr > 1e-9 else np.array([-1.0, 0.0])
            B.ineq([bidx(i), bidx(i) + 1], [-m_hat[0], -m_hat[1]],
                   -limits.r_c - float(m_hat @ gx))

        G, h, A, b = B.matrices()
        try:
            sol = solvers.qp(P, qlin, G, h, A, b)
        except (ValueError, ArithmeticError) as exc:
            raise PlanningFailure(f"QP solve failed: {exc}") from exc
        if sol["status"] != "optimal":
            raise PlanningFailure(f"QP status {sol['status']}")
        z = np.array(sol["x"]).ravel()
        b_new = z[:nb].reshape(N + 1, 2)
        e_new = z[nb:].reshape(N + 1, 3)

        acc = (e_new[2:] - 2.0 * e_new[1:-1] + e_new[:-2]) / dt_plan ** 2
        objective_hist.append(float(np.sum(acc ** 2) * dt_plan))
        step = max(float(np.abs(b_new - b_prev).max()),
                   float(np.abs(e_new - e_prev).max()))
        b_prev, e_prev = b_new, e_new
        if step <= SC_STEP_TOL:
            break

    # true-constraint residuals on the converged iterate
    sep = np.linalg.norm(e_prev[:, :2] - b_prev, axis=1)
    speed = np.linalg.norm(np.diff(b_prev, axis=0), axis=1) / dt_plan
    ring = np.linalg.norm(b_prev[:g + 1] - gx, axis=1)
    residuals = {
        "speed": float(max(0.0, speed.max() - limits.v_max)),
        "band_low": float(max(0.0, (limits.d_min - sep).max())),
        "band_high": float(max(0.0, (sep - limits.d_max).max())),
        "ring": float(max(0.0, (limits.r_c - ring).max())),
        "grasp": float(np.linalg.norm(e_prev[g] - p_grasp)),
        "drop": float(np.linalg.norm(e_prev[d] - p_drop)),
    }
    worst = max(residuals.values())
    if worst > VIOLATION_LIMIT:
        raise PlanningFailure(
            f"constraint violation {worst:.4f} m after {iters} iterations: "
            f"{residuals}")

    knots = _assemble_knots(b_prev, e_prev, start_base.theta, dt_plan)
    return PlannedTrajectory(
        dt_plan=dt_plan, knots=knots, t_grasp=times.t_grasp,
        t_drop=times.t_drop, t_finish=times.t_finish,
        diagnostics={
            "sc_iterations": iters,
            "objective": objective_hist,
            "final_step": step,
            "residuals": residuals,
        })


def _assemble_knots(b, e, theta0, dt):
    """Attach headings, speeds and EE velocities to the raw knot arrays."""
    n = len(b)
    knots = []
    theta_prev = theta0
    for i in range(n):
        if i < n - 1:
            db = b[i + 1] - b[i]
            v = float(np.linalg.norm(db) / dt)
            theta = math.atan2(db[1], db[0]) if v > 1e-6 else theta_prev
        else:
            v = 0.0
            theta = theta_prev
        if i < n - 1:
            ee_vel = (e[i + 1] - e[i]) / dt if i == 0 else \
                (e[i + 1] - e[i - 1]) / (2.0 * dt)
        else:
            ee_vel = np.zeros(3)
        knots.append(PlanKnot(base=Pose2(b[i][0], b[i][1], theta), v=v,
                              omega=0.0, ee=e[i].copy(),
                              ee_vel=np.asarray(ee_vel)))
        theta_prev = theta
    for i in range(n - 1):
        knots[i].omega = wrap_angle(
            knots[i + 1].base.theta - knots[i].base.theta) / dt
    return knots


def track_trajectory(traj, t, base_pose, ee_pos, k_track=K_TRACK):
    """Feedforward plus proportional correction against the planned knot.

    Returns (v, omega, nu_linear) where nu_linear is the desired world
    EE velocity; beyond t_finish everything is zero (hold).
    """
    if t > traj.t_finish:
        return 0.0, 0.0, np.zeros(3)
    k = traj.sample(t)
    e_b = np.array([k.base.x - base_pose.x, k.base.y - base_pose.y])
    hx, hy = math.cos(base_pose.theta), math.sin(base_pose.theta)
    v = k.v + k_track * (e_b[0] * hx + e_b[1] * hy)
    omega = k.omega + k_track * wrap_angle(k.base.theta - base_pose.theta)
    nu = k.ee_vel + k_track * (k.ee - np.asarray(ee_pos))
    return v, omega, nu


class PlanningBaselinePolicy:
    """Open-loop plan tracking with a timed gripper schedule.

    The trajectory is computed once, on the first tick, from the target
    prior available at that moment; perception is never consulted again
    (the contrast case to the reactive methods).  The gripper closes
    blind so that contact lands on the predetermined grasp time, and
    opens just before the predetermined drop time.
    """

    CLOSE_LEAD = 1.0      # full-open to contact at 0.05 m/s
    OPEN_LEAD = 0.08

    def __init__(self, model, scene, rng=None, gains=None, reach=None,
                 weights=None, geom=None, d_range=0.75, prior_xy=None,
                 shuttle=False):
        self.model = model
        self.scene = scene
        self.rng = rng
        self.gains = gains if gains is not None else BaseGains()
        self.reach = reach if reach is not None else ReachConfig()
        self.geom = geom if geom is not None else ApproachGeometry()
        self.d_range = float(d_range)
        self.resolver = WholeBodyResolver(
            model, weights if weights is not None else ResolutionWeights())
        prior = prior_xy if prior_xy is not None else scene.platform_center
        self.prior_xy = np.asarray(prior, dtype=float)
        self.traj = None
        self.plan_error = None
        self.done = False
        self._grasp_yaw = None

    def notify_delivered(self):
        pass  # open-loop: one object per plan

    def tick(self, obs):
        t = obs.t
        if self.traj is None and self.plan_error is None:
            self._build_plan(obs)
        if self.plan_error is not None:
            return ControlCommand(label="plan:failed")
        traj = self.traj
        if t > traj.t_finish + 0.5:
            self.done = True
            return ControlCommand(label="plan:done")

        v, omega, nu_lin = track_trajectory(traj, t, obs.base, obs.ee.t)
        nu = np.zeros(6)
        nu[:3] = nu_lin

        p_grasp = np.array([self.prior_xy[0], self.prior_xy[1],
                            self.scene.object_center_z])
        dist = float(np.linalg.norm(p_grasp - obs.ee.t))
        if t <= traj.t_grasp + 2.0 * self.reach.d_t:
            R_des = orientation_schedule(obs.ee.t, p_grasp, dist,
                                         self._grasp_yaw, self.reach)
        else:
            yaw = math.atan2(obs.ee.R[1, 0], obs.ee.R[0, 0])
            R_des = top_down_rotation(yaw)
        nu[3:] = orientation_rate(R_des, obs.ee.R, self.reach)

        gripper = "hold"
        if t >= traj.t_drop - self.OPEN_LEAD:
            gripper = "open"
        elif t >= traj.t_grasp - self.CLOSE_LEAD:
            gripper = "close"

        out = self.resolver.resolve(obs.base, obs.q, nu,
                                    np.array([v, omega]))
        return ControlCommand(v=out.v, omega=out.omega, qd=out.qd,
                              gripper=gripper, label="plan:tracking")

    def _build_plan(self, obs):
        times = derive_plan_times(
            (obs.base.x, obs.base.y), self.prior_xy,
            self.scene.container_center, self.gains.v_f)
        limits = PlanLimits(v_max=self.gains.v_f, r_c=self.geom.r_c)
        try:
            self.traj = plan_otm_trajectory(
                self.scene, times, limits, start_base=obs.base,
                start_ee=obs.ee.t, grasp_xy=self.prior_xy)
        except PlanningFailure as exc:
            self.plan_error = str(exc)
            return
        k = self.traj.index(self.traj.t_grasp)
        self._grasp_yaw = self.traj.knots[k].base.theta + 0.5 * math.pi
