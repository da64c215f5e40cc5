"""Base motion: drive-through approach poses and a constant-speed steering law.

Rather than stopping at a task, the base drives through a "closest approach"
pose on a standoff circle of radius r_C around the target, entering tangent
to the circle and oriented toward the next objective. The speed command is a
constant forward speed v_F; only the yaw rate steers:

    v* = v_F
    w* = (k_alpha * alpha + k_beta * beta) * v_F / rho

alpha is the bearing error to the approach pose, beta shapes the arrival
heading; the law is stable for k_alpha > 1, k_beta < 0.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DegenerateMissionError, ModelError
from .kinematics import arm_jacobian, dls_ik, forward_kinematics, manipulability
from .spatial import Pose2, Transform3, top_down_rotation, wrap_angle

_EPS = 1e-9


@dataclass
class ApproachGeometry:
    """Standoff radii: r_r (robot) + r_p (platform) = closest-approach radius r_C."""

    r_r: float = 0.25
    r_p: float = 0.35

    @property
    def r_c(self):
        return self.r_r + self.r_p


@dataclass
class BaseGains:
    k_alpha: float = 4.0
    k_beta: float = -1.5
    v_f: float = 0.3
    rho_min: float = 0.05
    omega_max: float = 2.0

    def __post_init__(self):
        if not (self.k_alpha > 1.0 and self.k_beta < 0.0):
            raise ConfigError(
                "steering law unstable: need k_alpha > 1 and k_beta < 0, "
                f"got k_alpha={self.k_alpha}, k_beta={self.k_beta}")
        if self.v_f <= 0.0:
            raise ConfigError(f"forward speed must be positive, got {self.v_f}")


@dataclass
class RangeEstimate:
    t_range: float
    d_range: float
    in_range: bool


def closest_approach(xi_b, xi_t, xi_n, geom):
    """Drive-through pose on the standoff circle around target xi_t.

    The position lies along the bisector of the unit vectors from the target
    toward the base and toward the next objective xi_n; the heading is the
    circle tangent oriented toward xi_n. Collinear pass-through geometry
    falls back to the perpendicular-left tangent point. Returns
    (Pose2, inside) where inside flags a base already within the circle.
    """
    pb = np.array([xi_b.x, xi_b.y])
    pt = np.array([xi_t.x, xi_t.y])
    pn = np.array([xi_n.x, xi_n.y])
    r_c = geom.r_c

    d_tn = np.linalg.norm(pn - pt)
    if d_tn < _EPS:
        raise DegenerateMissionError("target and next objective coincide")

    v_b = pb - pt
    d_b = np.linalg.norm(v_b)
    u_n = (pn - pt) / d_tn

    inside = d_b <= r_c
    if d_b < _EPS:
        # base exactly on the target: bearing undefined, exit perpendicular-left
        radial = np.array([-u_n[1], u_n[0]])
    elif inside:
        # tangent-exit at the current bearing
        radial = v_b / d_b
    else:
        u_b = v_b / d_b
        s = u_b + u_n
        ns = np.linalg.norm(s)
        if ns < 1e-9:
            # pass-through: tie-break to the left of the direction of travel
            travel = (pn - pb)
            nt = np.linalg.norm(travel)
            travel = u_n if nt < _EPS else travel / nt
            radial = np.array([-travel[1], travel[0]])
        else:
            radial = s / ns

    pos = pt + r_c * radial
    tangent = np.array([-radial[1], radial[0]])
    if float(np.dot(tangent, pn - pos)) < 0.0:
        tangent = -tangent
    heading = math.atan2(tangent[1], tangent[0])
    return Pose2(pos[0], pos[1], heading), inside


def base_velocity(xi_b, xi_c, gains):
    """Constant-forward-speed steering command toward the approach pose.

    Returns (v, omega, at_goal). v is always gains.v_f; omega is clamped to
    +-omega_max. Within rho_min of the pose the command is straight-ahead
    and at_goal is set (handoff point for mission logic).
    """
    dx = xi_c.x - xi_b.x
    dy = xi_c.y - xi_b.y
    rho = math.hypot(dx, dy)
    if rho <= gains.rho_min:
        return gains.v_f, 0.0, True
    bearing = math.atan2(dy, dx)
    alpha = wrap_angle(bearing - xi_b.theta)
    beta = wrap_angle(xi_c.theta - bearing)
    omega = (gains.k_alpha * alpha + gains.k_beta * beta) * gains.v_f / rho
    omega = max(-gains.omega_max, min(gains.omega_max, omega))
    return gains.v_f, omega, False


def time_to_range(xi_b, xi_c, geom, d_range, v_f):
    """Time until the target enters manipulation range at constant v_F.

    Path length is estimated as the straight-line distance to the approach
    pose; the target sits r_C beyond it, so range entry leads the pose by
    d_range - r_C along the path.
    """
    rho = math.hypot(xi_c.x - xi_b.x, xi_c.y - xi_b.y)
    d_excess = max(0.0, d_range - geom.r_c)
    t = max(0.0, (rho - d_excess) / v_f)
    return RangeEstimate(t_range=t, d_range=d_range, in_range=(t <= 0.0))


def compute_manipulation_range(model, target_height, m_threshold,
                               bounds=(0.2, 1.5), restarts=64, seed=0,
                               bearing=math.pi / 2, tol=5e-3):
    """Largest horizontal distance at which a top-down grasp clears m_threshold.

    Bisects distance d in `bounds`; each probe runs damped-least-squares
    reaches from `restarts` seeded start configurations to a top-down grasp
    at the target height and keeps the best manipulability among converged
    solutions. With m_threshold = 0 this returns the kinematic reach.
    """
    rng = np.random.default_rng(seed)
    base = Pose2(0.0, 0.0, 0.0)
    lo_q, hi_q = model.joint_limits
    starts = [model.q_stow.copy()]
    for _ in range(restarts - 1):
        jitter = model.q_stow + rng.normal(0.0, 0.4, model.n)
        starts.append(np.clip(jitter, lo_q, hi_q))

    yaws = rng.uniform(-math.pi, math.pi, len(starts))
    yaws[0] = 0.0

    def probe(d):
        tgt_pos = np.array([d * math.cos(bearing), d * math.sin(bearing),
                            target_height])
        best = -1.0
        for q0, yaw in zip(starts, yaws):
            target = Transform3(top_down_rotation(yaw), tgt_pos)
            q, ok = dls_ik(model, base, q0, target, pos_tol=tol)
            if ok:
                best = max(best, manipulability(arm_jacobian(model, q)))
        return best

    # the qualifying set need not reach down to the lower bound (close-in
    # postures are cramped), so scan downward for its outer edge first
    lo, hi = bounds
    if probe(hi) >= m_threshold:
        return hi
    step = 0.1
    d_seed = None
    d = hi - step
    while d >= lo - 1e-9:
        if probe(d) >= m_threshold:
            d_seed = d
            break
        d -= step
    if d_seed is None:
        raise ModelError(
            f"no distance in {bounds} reaches manipulability {m_threshold}")
    lo, hi = d_seed, min(d_seed + step, bounds[1])
    for _ in range(20):
        if hi - lo < 5e-3:
            break
        mid = 0.5 * (lo + hi)
        if probe(mid) >= m_threshold:
            lo = mid
        else:
            hi = mid
    return lo
