"""Arm phase logic and reach primitives.

The arm moves through a small set of phases while the base never stops:
stowed driving, a quintic reach timed to finish as the target comes into
range, a short position-servo final phase, then grasp / retract / place.
"""

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import ConfigError
from .quintic import T_MIN, plan_quintic
from .spatial import look_at_rotation, rotation_error, slerp_R, top_down_rotation


class ArmPhase(Enum):
    STOWED = "stowed"
    REACHING = "reaching"
    FINAL = "final"
    GRASPING = "grasping"
    RETRACTING = "retracting"
    PLACING = "placing"


# forward cycle only, plus the final-phase hysteresis retreat
_LEGAL = {
    ArmPhase.STOWED: {ArmPhase.REACHING},
    ArmPhase.REACHING: {ArmPhase.FINAL},
    ArmPhase.FINAL: {ArmPhase.GRASPING, ArmPhase.REACHING},
    ArmPhase.GRASPING: {ArmPhase.RETRACTING},
    ArmPhase.RETRACTING: {ArmPhase.PLACING},
    ArmPhase.PLACING: {ArmPhase.STOWED},
}


class PhaseMachine:
    """Tracks the arm phase and rejects transitions that skip steps."""

    def __init__(self):
        self.phase = ArmPhase.STOWED
        self.entered_at = 0.0

    def to(self, new_phase, t=0.0):
        if new_phase is self.phase:
            return
        if new_phase not in _LEGAL[self.phase]:
            raise ValueError(
                f"illegal phase transition {self.phase.value} -> "
                f"{new_phase.value}")
        self.phase = new_phase
        self.entered_at = t

    def reset(self, t=0.0):
        """Mission-level re-arm (e.g. after a failed grasp): back to stowed."""
        self.phase = ArmPhase.STOWED
        self.entered_at = t


def _zero3():
    return np.zeros(3)


@dataclass
class ReachConfig:
    d_t: float = 0.1            # switch to the final-phase servo inside this
    k_p: float = 5.0            # final-phase position gain
    k_a: float = 0.5            # arm speed budget as a fraction of base speed
    k_rot: float = 4.0          # orientation servo gain
    omega_cap: float = 3.0      # angular rate cap, rad/s
    arrival_velocity: np.ndarray = field(default_factory=_zero3)

    def __post_init__(self):
        if not 0.25 <= self.k_a <= 1.0:
            raise ConfigError(f"k_a must lie in [0.25, 1.0], got {self.k_a}")
        self.arrival_velocity = np.asarray(self.arrival_velocity,
                                           dtype=float).reshape(3)


def should_start_reach(ee_dist, t_range, v_base, k_a, already=False):
    """Begin reaching once the arm needs at least the remaining drive time.

    ee_dist is the end-effector-to-grasp distance in the base frame; the
    arm's travel budget is ee_dist / (v_base * k_a).  When the time until
    the target enters range drops to that budget, waiting any longer would
    force an over-fast reach.  `already` latches the decision.
    """
    if already:
        return True
    if t_range <= 0.0:
        return True
    speed = max(v_base * k_a, 1e-6)
    return ee_dist / speed >= t_range


def reacher_command(p_ee, v_ee, p_target, v_target, t_arrive, dt, cfg):
    """One control tick of the on-the-move reacher.

    Replans a quintic from the current EE state to the grasp point (led by
    the target's velocity over the remaining window) and samples its
    velocity one tick in.  Returns (twist6, urgent); the angular part is
    left zero for the caller's orientation servo, and urgent flags a
    window clamped up to the minimum segment time.
    """
    p_ee = np.asarray(p_ee, dtype=float)
    v_ee = np.asarray(v_ee, dtype=float)
    p_target = np.asarray(p_target, dtype=float)
    v_target = np.asarray(v_target, dtype=float)
    urgent = t_arrive < T_MIN
    horizon = max(float(t_arrive), T_MIN)
    goal = p_target + v_target * horizon
    v_end = v_target + cfg.arrival_velocity
    seg = plan_quintic(p_ee, v_ee, goal, v_end, horizon)
    twist = np.zeros(6)
    twist[:3] = seg.velocity(dt)
    return twist, urgent


def orientation_schedule(p_ee, p_object, dist, grasp_yaw, cfg):
    """Desired EE orientation along the reach.

    Far out the tool looks at the object (camera acquisition); inside
    2*d_t it blends to the top-down grasp frame, fully top-down by d_t.
    """
    R_grasp = top_down_rotation(grasp_yaw)
    s = (2.0 * cfg.d_t - dist) / cfg.d_t
    s = min(max(s, 0.0), 1.0)
    if s >= 1.0:
        return R_grasp
    R_look = look_at_rotation(p_ee, p_object)
    if s <= 0.0:
        return R_look
    return slerp_R(R_look, R_grasp, s)


def orientation_rate(R_des, R_cur, cfg):
    """Capped proportional angular velocity toward a desired orientation."""
    w = cfg.k_rot * rotation_error(R_des, R_cur)
    nrm = float(np.linalg.norm(w))
    if nrm > cfg.omega_cap:
        w = w * (cfg.omega_cap / nrm)
    return w


def final_phase_velocity(p_ee, p_target, v_target, v_cap, cfg):
    """Position servo toward the (moving) grasp point.

    The correction term is capped at v_cap (the caller derives it from the
    commanded base speed as v_b * k_a); the target's own velocity is fed
    forward on top so a moving object can be matched without eating the
    correction budget.
    """
    e = np.asarray(p_target, dtype=float) - np.asarray(p_ee, dtype=float)
    v = cfg.k_p * e
    cap = max(float(v_cap), 1e-6)
    nv = float(np.linalg.norm(v))
    if nv > cap:
        v = v * (cap / nv)
    return v + np.asarray(v_target, dtype=float)
