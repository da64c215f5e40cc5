"""Closed-loop pick-and-place policies.

Two reactive controllers sharing the same whole-body QP resolver and target
estimator: the on-the-move policy grasps while the base drives through the
task at constant speed, and the stop-and-grasp baseline brings the base to
rest at a standoff pose before reaching.
"""

import math

import numpy as np

from .arm_control import (
    ArmPhase,
    PhaseMachine,
    ReachConfig,
    final_phase_velocity,
    orientation_rate,
    orientation_schedule,
    reacher_command,
    should_start_reach,
)
from .base_control import (
    ApproachGeometry,
    BaseGains,
    base_velocity,
    closest_approach,
)
from .quintic import plan_quintic
from .spatial import Pose2, rotation_error, top_down_rotation, wrap_angle
from .world import CONTROL_DT, GRIPPER_MAX, ControlCommand
from .redundancy import ResolutionWeights, WholeBodyResolver

RELEASE_CLEARANCE = 0.03     # EE height above the container plane at release
PRE_NARROW_APERTURE = 0.055  # finger pre-shape before the final phase
TRIGGER_POS_TOL = 0.005
TRIGGER_SPEED_TOL = 0.020
TRIGGER_TICKS = 3
RETRACT_TIME = 2.0
EXIT_TOL = 0.15


class TargetEstimator:
    """Alpha-beta tracker over palm-camera detections on a known plane.

    Starts from a prior (e.g. the platform centre), snaps to the first
    detection, then filters position and horizontal velocity.  predict()
    extrapolates past the newest capture time, which also cancels the
    camera latency for moving targets.
    """

    def __init__(self, prior_xy, plane_z, alpha=0.35, beta=0.04,
                 v_max=0.1):
        self.plane_z = float(plane_z)
        self.alpha = alpha
        self.beta = beta
        self.v_max = v_max
        self.p = np.array([prior_xy[0], prior_xy[1], self.plane_z])
        self.v = np.zeros(3)
        self.t_last = None
        self.n_updates = 0

    @property
    def acquired(self):
        return self.n_updates > 0

    def reset(self, prior_xy):
        self.p = np.array([prior_xy[0], prior_xy[1], self.plane_z])
        self.v = np.zeros(3)
        self.t_last = None
        self.n_updates = 0

    def update(self, detections):
        for det in sorted(detections, key=lambda d: d.t_capture):
            z = det.point[:2]
            if self.t_last is None:
                self.p[:2] = z
            else:
                dt = det.t_capture - self.t_last
                if dt <= 1e-9:
                    continue
                pred = self.p[:2] + self.v[:2] * dt
                r = z - pred
                self.p[:2] = pred + self.alpha * r
                self.v[:2] += (self.beta / dt) * r
                s = float(np.linalg.norm(self.v[:2]))
                if s > self.v_max:
                    self.v[:2] *= self.v_max / s
            self.t_last = det.t_capture
            self.n_updates += 1

    def predict(self, t):
        if self.t_last is None:
            return self.p.copy()
        lead = max(0.0, t - self.t_last)
        return self.p + self.v * lead


def _stow_servo(model, q, gain=3.0):
    """Joint-space proportional pull toward the stow posture."""
    qd = gain * (model.q_stow - q)
    cap = 0.6 * model.velocity_limits
    return np.clip(qd, -cap, cap)


REACH_SPEED_CAP = 1.0  # m/s, sanity clamp on commanded hand speed
PASS_RADIUS = 0.15     # m, approach pose counts as reached within this


def _cap_linear(twist, cap=REACH_SPEED_CAP):
    """Scale the translational part of a twist down to a sane speed."""
    out = np.array(twist, dtype=float)
    n = float(np.linalg.norm(out[:3]))
    if n > cap:
        out[:3] *= cap / n
    return out


class _GraspTrigger:
    """Sustained-condition counter for commanding the close."""

    def __init__(self, ticks=TRIGGER_TICKS):
        self.need = ticks
        self.count = 0

    def reset(self):
        self.count = 0

    def step(self, pos_err, rel_speed):
        if pos_err <= TRIGGER_POS_TOL and rel_speed <= TRIGGER_SPEED_TOL:
            self.count += 1
        else:
            self.count = 0
        return self.count >= self.need


class OtmPickPlacePolicy:
    """Manipulation-on-the-move: constant-speed base, timed quintic reach.

    The base drives through closest-approach poses and never slows for the
    grasp; the arm starts reaching when its travel budget matches the time
    until the target enters manipulation range, finishes with a short
    position servo, and the same machinery places into the container on
    the way to the exit.
    """

    DRIVE_THROUGH = True  # keep rolling toward the next objective once passed

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
        self.d_range_place = self.d_range
        self.shuttle = shuttle
        self.resolver = WholeBodyResolver(
            model, weights if weights is not None else ResolutionWeights())
        prior = prior_xy if prior_xy is not None else scene.platform_center
        self._prior = tuple(prior)
        self.estimator = TargetEstimator(self._prior, scene.object_center_z)
        self.machine = PhaseMachine()
        self.trigger = _GraspTrigger()
        self.leg = "pick"
        self.done = False
        self.reach_latched = False
        self.place_latched = False
        self._retract_seg = None
        self._was_attached = False
        self._closing = False
        self._last_qd = np.zeros(model.n)
        self._grasp_yaw = None
        self._place_yaw = None
        self._place_final = False
        self._passed_pick = False
        self._passed_place = False

    # -- mission plumbing -------------------------------------------------

    def notify_delivered(self):
        """Re-arm for the next object (multi-object shuttle missions)."""
        self.estimator.reset(self._prior)
        self.leg = "pick"
        self.reach_latched = False
        self.place_latched = False
        self.trigger.reset()
        self._closing = False
        self._was_attached = False
        self._grasp_yaw = None
        self._place_yaw = None
        self._place_final = False
        self._passed_pick = False
        self._passed_place = False

    def _release_point(self):
        cx, cy = self.scene.container_center
        return np.array([cx, cy,
                         self.scene.container_top + RELEASE_CLEARANCE])

    def _grasp_point(self, t):
        p = self.estimator.predict(t)
        return np.array([p[0], p[1], self.scene.object_center_z])

    # -- per-tick ---------------------------------------------------------

    def tick(self, obs):
        t = obs.t
        if not obs.attached:
            self.estimator.update(obs.detections)

        if self.leg == "pick":
            cmd = self._tick_pick(obs)
        elif self.leg == "place":
            cmd = self._tick_place(obs)
        else:
            cmd = self._tick_exit(obs)
        self._was_attached = obs.attached
        self._last_qd = (np.zeros(self.model.n) if cmd.qd is None
                         else np.asarray(cmd.qd, dtype=float))
        return cmd

    def _base_toward(self, obs, target_xy, next_xy):
        chi, inside = closest_approach(
            obs.base, Pose2(target_xy[0], target_xy[1], 0.0),
            Pose2(next_xy[0], next_xy[1], 0.0), self.geom)
        v, omega, at_goal = base_velocity(obs.base, chi, self.gains)
        return chi, v, omega, at_goal

    def _passed_objective(self, obs, chi, target_xy, already):
        """Drive-through latch: an objective counts as passed once the base
        reaches its approach pose or crosses onto the standoff circle."""
        if already:
            return True
        rho = math.hypot(chi.x - obs.base.x, chi.y - obs.base.y)
        d = math.hypot(target_xy[0] - obs.base.x, target_xy[1] - obs.base.y)
        return rho < PASS_RADIUS or d < self.geom.r_c - 1e-6

    def _time_to_entry(self, base, chi, d_range):
        """Seconds until the target crosses into manipulation range.

        The base passes the target on the standoff circle, so range entry
        happens a chord ahead of the approach pose, not radially; a small
        margin keeps the first reach target away from the very edge of
        the workspace.
        """
        rho = math.hypot(chi.x - base.x, chi.y - base.y)
        d_eff = max(d_range - 0.02, self.geom.r_c + 1e-3)
        chord = math.sqrt(max(d_eff ** 2 - self.geom.r_c ** 2, 0.0))
        return max(0.0, (rho - chord) / self.gains.v_f)

    def _resolve(self, obs, nu_des, v, omega, label):
        out = self.resolver.resolve(obs.base, obs.q, nu_des,
                                    np.array([v, omega]))
        return ControlCommand(v=out.v, omega=out.omega, qd=out.qd,
                              gripper="hold", label=label)

    def _tick_pick(self, obs):
        t = obs.t
        scene = self.scene
        p_grasp = self._grasp_point(t)
        v_obj = self.estimator.v.copy()
        chi, v, omega, _ = self._base_toward(
            obs, p_grasp[:2], scene.container_center)
        if self.DRIVE_THROUGH:
            self._passed_pick = self._passed_objective(
                obs, chi, p_grasp[:2], self._passed_pick)
            if self._passed_pick:
                _, v, omega, _ = self._base_toward(
                    obs, scene.container_center, scene.exit_point)
        t_entry = self._time_to_entry(obs.base, chi, self.d_range)
        phase = self.machine.phase
        # track the approach heading while reaching; freeze it for the grasp
        # so the wrist stops chasing the recomputed pose near the target
        if phase in (ArmPhase.STOWED, ArmPhase.REACHING) or \
                self._grasp_yaw is None:
            self._grasp_yaw = chi.theta + 0.5 * math.pi
        grasp_yaw = self._grasp_yaw

        if obs.attached and not self._was_attached:
            # grasp adjudicated: carry it out of the workspace
            self.machine.to(ArmPhase.RETRACTING, t)
            self._retract_seg = plan_quintic(
                obs.q, self._last_qd, self.model.q_stow,
                np.zeros(self.model.n), RETRACT_TIME, t0=t)
            self.leg = "place"
            self._closing = False
            return self._tick_place(obs)

        if self._closing and not obs.attached and \
                obs.gripper_aperture < scene.object_size - 1e-6:
            # fingers met with nothing inside: re-arm and try again
            self.machine.reset(t)
            self._closing = False
            self.trigger.reset()
            self.reach_latched = True
            return ControlCommand(v=v, omega=omega,
                                  qd=_stow_servo(self.model, obs.q),
                                  gripper="open", label="pick:reopen")

        if phase is ArmPhase.STOWED:
            d_gate = self._gate_distance(obs, chi, p_grasp)
            self.reach_latched = should_start_reach(
                d_gate, t_entry, self.gains.v_f, self.reach.k_a,
                self.reach_latched)
            if self.reach_latched and self.estimator.acquired:
                self.machine.to(ArmPhase.REACHING, t)
                phase = ArmPhase.REACHING
            else:
                return ControlCommand(v=v, omega=omega,
                                      qd=_stow_servo(self.model, obs.q),
                                      gripper="hold", label="pick:stowed")

        dist = float(np.linalg.norm(p_grasp - obs.ee.t))

        if phase is ArmPhase.REACHING:
            if dist <= self.reach.d_t:
                self.machine.to(ArmPhase.FINAL, t)
                phase = ArmPhase.FINAL
        elif phase is ArmPhase.FINAL and dist > 2.0 * self.reach.d_t \
                and not self._closing:
            self.machine.to(ArmPhase.REACHING, t)
            self.trigger.reset()
            phase = ArmPhase.REACHING

        gripper = "hold"
        if phase is ArmPhase.REACHING:
            twist, _ = reacher_command(obs.ee.t, obs.ee_velocity, p_grasp,
                                       v_obj, t_entry, CONTROL_DT,
                                       self.reach)
            nu = _cap_linear(twist)
            if dist < 0.45 and obs.gripper_aperture > PRE_NARROW_APERTURE:
                gripper = "close"
            elif obs.gripper_aperture <= PRE_NARROW_APERTURE and \
                    not self._closing:
                gripper = "stop"
            label = "pick:reaching"
        else:  # FINAL or GRASPING
            v_cap = max(abs(v) * self.reach.k_a, 0.05)
            nu = np.zeros(6)
            nu[:3] = final_phase_velocity(obs.ee.t, p_grasp, v_obj, v_cap,
                                          self.reach)
            label = "pick:final"
            if phase is ArmPhase.FINAL:
                # keep narrowing toward the pre-shape, otherwise hold still
                gripper = ("close" if obs.gripper_aperture >
                           PRE_NARROW_APERTURE else "stop")
                rel = float(np.linalg.norm(
                    obs.ee_velocity[:2] - v_obj[:2]))
                if self.trigger.step(dist, rel):
                    self.machine.to(ArmPhase.GRASPING, t)
                    phase = ArmPhase.GRASPING
            if phase is ArmPhase.GRASPING:
                gripper = "close"
                self._closing = True
                label = "pick:grasping"

        R_des = orientation_schedule(obs.ee.t, p_grasp, dist, grasp_yaw,
                                     self.reach)
        nu[3:] = orientation_rate(R_des, obs.ee.R, self.reach)
        cmd = self._resolve(obs, nu, v, omega, label)
        cmd.gripper = gripper
        return cmd

    def _gate_distance(self, obs, chi, p_grasp):
        """EE-to-grasp distance in the base frame, target taken at the
        approach pose (how far the arm itself must travel)."""
        c, s = math.cos(chi.theta), math.sin(chi.theta)
        dx, dy = p_grasp[0] - chi.x, p_grasp[1] - chi.y
        obj_b = np.array([c * dx + s * dy, -s * dx + c * dy, p_grasp[2]])
        cb, sb = math.cos(obs.base.theta), math.sin(obs.base.theta)
        ex, ey = obs.ee.t[0] - obs.base.x, obs.ee.t[1] - obs.base.y
        ee_b = np.array([cb * ex + sb * ey, -sb * ex + cb * ey, obs.ee.t[2]])
        return float(np.linalg.norm(obj_b - ee_b))

    def _tick_place(self, obs):
        t = obs.t
        p_rel = self._release_point()
        chi, v, omega, _ = self._base_toward(
            obs, self.scene.container_center, self.scene.exit_point)
        if self.DRIVE_THROUGH:
            self._passed_place = self._passed_objective(
                obs, chi, self.scene.container_center, self._passed_place)
            if self._passed_place:
                if self.shuttle:
                    _, v, omega, _ = self._base_toward(
                        obs, self.scene.platform_center,
                        self.scene.container_center)
                else:
                    ex, ey = self.scene.exit_point
                    aim = Pose2(ex, ey, math.atan2(ey - obs.base.y,
                                                   ex - obs.base.x))
                    v, omega, _ = base_velocity(obs.base, aim, self.gains)
        phase = self.machine.phase

        if not obs.attached and self._was_attached:
            # release adjudicated (either way): stow and head out
            self.machine.to(ArmPhase.STOWED, t)
            self._place_final = False
            if self.shuttle:
                pass  # bench re-arms via notify_delivered()
            else:
                self.leg = "exit"
            return ControlCommand(v=v, omega=omega,
                                  qd=_stow_servo(self.model, obs.q),
                                  gripper="hold", label="place:released")

        if phase is ArmPhase.RETRACTING:
            seg = self._retract_seg
            qd = seg.velocity(t)
            if t >= seg.t0 + seg.T:
                self.machine.to(ArmPhase.PLACING, t)
            return ControlCommand(v=v, omega=omega, qd=qd, gripper="hold",
                                  label="place:retracting")

        # PLACING: wait in carry posture until the place reach should start
        t_entry = self._time_to_entry(obs.base, chi, self.d_range_place)
        dist = float(np.linalg.norm(p_rel - obs.ee.t))

        d_gate = self._gate_distance(obs, chi, p_rel)
        self.place_latched = should_start_reach(
            d_gate, t_entry, self.gains.v_f, self.reach.k_a,
            self.place_latched)
        if not self.place_latched:
            return ControlCommand(v=v, omega=omega,
                                  qd=_stow_servo(self.model, obs.q, 1.5),
                                  gripper="hold", label="place:carry")

        # the container is round, so any top-down yaw drops in; the hand's
        # own yaw at reach start is kept for the rest of the place so the
        # wrist neither chases the base heading nor creeps with its own
        # drift (re-anchoring every tick ratchets into the joint limits)
        if self._place_yaw is None:
            self._place_yaw = math.atan2(obs.ee.R[1, 0], obs.ee.R[0, 0])
        place_yaw = self._place_yaw

        gripper = "hold"
        if dist <= self.reach.d_t:
            self._place_final = True
        elif dist > 2.0 * self.reach.d_t:
            self._place_final = False
        if self._place_final:
            v_cap = max(abs(v) * self.reach.k_a, 0.05)
            nu = np.zeros(6)
            nu[:3] = final_phase_velocity(obs.ee.t, p_rel, np.zeros(3),
                                          v_cap, self.reach)
            if dist <= 0.008:
                gripper = "open"
            label = "place:final"
        else:
            twist, _ = reacher_command(obs.ee.t, obs.ee_velocity, p_rel,
                                       np.zeros(3), t_entry,
                                       CONTROL_DT, self.reach)
            nu = _cap_linear(twist)
            label = "place:reaching"
        R_des = orientation_schedule(obs.ee.t, p_rel, dist, place_yaw,
                                     self.reach)
        nu[3:] = orientation_rate(R_des, obs.ee.R, self.reach)
        cmd = self._resolve(obs, nu, v, omega, label)
        cmd.gripper = gripper
        return cmd

    def _tick_exit(self, obs):
        ex, ey = self.scene.exit_point
        rho = math.hypot(ex - obs.base.x, ey - obs.base.y)
        if rho <= EXIT_TOL:
            self.done = True
            return ControlCommand(label="exit:done")
        chi = Pose2(ex, ey, math.atan2(ey - obs.base.y, ex - obs.base.x))
        v, omega, _ = base_velocity(obs.base, chi, self.gains)
        return ControlCommand(v=v, omega=omega,
                              qd=_stow_servo(self.model, obs.q),
                              gripper="hold", label="exit:driving")


class ReactiveBaselinePolicy(OtmPickPlacePolicy):
    """Stop-and-grasp baseline: same estimator, resolver and gripper logic,
    but the base decelerates to rest at the standoff pose before the arm
    reaches, and the post-grasp path lifts over the platform edge.

    The base speed command is a proportional law on the distance to the
    approach pose, saturated at the transport speed; it decays naturally
    to (near) zero rather than holding v_F through the grasp.
    """

    DRIVE_THROUGH = False  # this baseline stops at each approach pose

    K_BASE = 1.2          # P gain on distance to the approach pose
    K_HEAD = 2.5          # heading servo gain
    LIFT = 0.15           # lift height above the platform top
    HOVER = 0.22          # pre-grasp height above the object
    DWELL = 1.5           # settle time at the park before reaching

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self._lift_target = None
        self._reach_T = None
        self._park = None        # latched base pose for the grasp
        self._park_chi = None    # approach pose captured on arrival
        self._place_park = None  # latched base pose for the place
        self._place_chi = None
        self._dwell_until = None

    def notify_delivered(self):
        super().notify_delivered()
        self._park = None
        self._park_chi = None
        self._place_park = None
        self._place_chi = None
        self._lift_target = None
        self._reach_T = None
        self._dwell_until = None

    def _settle(self, obs, chi, v, omega, at_goal, parked, anchor):
        """Drive, then rotate in place to the approach heading, then freeze.

        Returns (v, omega, parked, anchor); `parked` flips to the base pose
        once position and heading have both converged, and stays latched.
        """
        if parked is not None:
            return 0.0, 0.0, parked, anchor
        if anchor is None:
            if not at_goal:
                return v, omega, None, None
            anchor = chi
        herr = wrap_angle(anchor.theta - obs.base.theta)
        if abs(herr) > 0.08:
            omega = max(-self.gains.omega_max,
                        min(self.gains.omega_max, self.K_HEAD * herr))
            return 0.0, omega, None, anchor
        return 0.0, 0.0, obs.base.copy(), anchor

    def _resolve(self, obs, nu_des, v, omega, label):
        # a parked base is the point of this baseline: the solver must not
        # trade base motion against arm reach
        out = self.resolver.resolve(obs.base, obs.q, nu_des,
                                    np.array([v, omega]), pin_base=True)
        return ControlCommand(v=out.v, omega=out.omega, qd=out.qd,
                              gripper="hold", label=label)

    def _base_toward(self, obs, target_xy, next_xy):
        chi, inside = closest_approach(
            obs.base, Pose2(target_xy[0], target_xy[1], 0.0),
            Pose2(next_xy[0], next_xy[1], 0.0), self.geom)
        dx, dy = chi.x - obs.base.x, chi.y - obs.base.y
        rho = math.hypot(dx, dy)
        bearing = math.atan2(dy, dx)
        alpha = wrap_angle(bearing - obs.base.theta)
        if rho < 0.25:
            # final creep: close out position without spinning in place
            v = self.K_BASE * rho
            omega = self.K_HEAD * alpha * min(1.0, rho / 0.1)
        else:
            v = min(self.gains.v_f, self.K_BASE * rho)
            if abs(alpha) > 1.0:
                v = 0.05
            omega = self.K_HEAD * alpha
        omega = max(-self.gains.omega_max, min(self.gains.omega_max, omega))
        at_goal = rho < 0.05
        return chi, v, omega, at_goal

    def _tick_pick(self, obs):
        t = obs.t
        scene = self.scene
        p_grasp = self._grasp_point(t)
        v_obj = self.estimator.v.copy()
        chi, v, omega, at_goal = self._base_toward(
            obs, p_grasp[:2], scene.container_center)
        v, omega, self._park, self._park_chi = self._settle(
            obs, chi, v, omega, at_goal, self._park, self._park_chi)
        phase = self.machine.phase
        # the anchored heading keeps the grasp yaw stable even if the
        # recomputed approach pose wanders after the base stops
        ref = self._park_chi if self._park_chi is not None else chi
        grasp_yaw = ref.theta + 0.5 * math.pi

        if obs.attached and not self._was_attached:
            self.machine.to(ArmPhase.RETRACTING, t)
            # straight up from the grasp: always reachable from the park
            self._lift_target = np.array(
                [obs.ee.t[0], obs.ee.t[1], scene.platform_top + self.LIFT])
            self._retract_seg = None
            self._reach_T = None
            self.leg = "place"
            self._closing = False
            return self._tick_place(obs)

        if self._closing and not obs.attached and \
                obs.gripper_aperture < scene.object_size - 1e-6:
            self.machine.reset(t)
            self._closing = False
            self.trigger.reset()
            self._dwell_until = None  # re-settle on the kicked object
            return ControlCommand(v=v, omega=omega,
                                  qd=_stow_servo(self.model, obs.q),
                                  gripper="open", label="pick:reopen")

        if phase is ArmPhase.STOWED:
            ready = self._park is not None and self.estimator.acquired
            if ready and self._dwell_until is None:
                # let the estimate re-converge now that the camera is still
                self._dwell_until = t + self.DWELL
            if ready and t >= self._dwell_until:
                self.machine.to(ArmPhase.REACHING, t)
                self._reach_T = None
                phase = ArmPhase.REACHING
            else:
                return ControlCommand(v=v, omega=omega,
                                      qd=_stow_servo(self.model, obs.q),
                                      gripper="hold", label="pick:stowed")

        # approach from straight above: a level, sideways-looking palm
        # camera back-projects the object plane at grazing incidence and
        # the position estimate falls apart, so hover first, then descend
        dist = float(np.linalg.norm(p_grasp - obs.ee.t))
        p_hov = p_grasp + np.array([0.0, 0.0, self.HOVER])
        d_hov = float(np.linalg.norm(p_hov - obs.ee.t))
        if phase is ArmPhase.REACHING:
            if self._reach_T is None:
                self._reach_T = min(max(0.7, d_hov / 0.8), 1.5)
                self._reach_end = t + self._reach_T
            if d_hov <= self.reach.d_t or t >= self._reach_end:
                # over the target, or out of reach budget: descend
                self.machine.to(ArmPhase.FINAL, t)
                phase = ArmPhase.FINAL

        gripper = "hold"
        if phase is ArmPhase.REACHING:
            twist, _ = reacher_command(obs.ee.t, obs.ee_velocity, p_hov,
                                       v_obj, self._reach_end - t,
                                       CONTROL_DT, self.reach)
            nu = _cap_linear(twist)
            if dist < 0.45 and obs.gripper_aperture > PRE_NARROW_APERTURE:
                gripper = "close"
            elif obs.gripper_aperture <= PRE_NARROW_APERTURE and \
                    not self._closing:
                gripper = "stop"
            label = "pick:reaching"
        else:
            nu = np.zeros(6)
            nu[:3] = final_phase_velocity(obs.ee.t, p_grasp, v_obj, 0.25,
                                          self.reach)
            label = "pick:final"
            if phase is ArmPhase.FINAL:
                gripper = ("close" if obs.gripper_aperture >
                           PRE_NARROW_APERTURE else "stop")
                rel = float(np.linalg.norm(
                    obs.ee_velocity[:2] - v_obj[:2]))
                if self.trigger.step(dist, rel):
                    self.machine.to(ArmPhase.GRASPING, t)
                    phase = ArmPhase.GRASPING
            if phase is ArmPhase.GRASPING:
                gripper = "close"
                self._closing = True
                label = "pick:grasping"

        R_des = top_down_rotation(grasp_yaw)
        nu[3:] = orientation_rate(R_des, obs.ee.R, self.reach)
        cmd = self._resolve(obs, nu, v, omega, label)
        cmd.gripper = gripper
        return cmd

    def _tick_place(self, obs):
        t = obs.t
        scene = self.scene
        chi, v, omega, at_goal = self._base_toward(
            obs, scene.container_center, scene.exit_point)

        if not obs.attached and self._was_attached:
            # release adjudicated (either way): stow and move on
            self.machine.to(ArmPhase.STOWED, t)
            self._park = None
            self._park_chi = None
            self._place_park = None
            self._place_chi = None
            self._lift_target = None
            self._reach_T = None
            if not self.shuttle:
                self.leg = "exit"
            return ControlCommand(v=v, omega=omega,
                                  qd=_stow_servo(self.model, obs.q),
                                  gripper="hold", label="place:released")

        phase = self.machine.phase
        if phase is ArmPhase.RETRACTING:
            # lift clear of the platform while the base stays parked
            if self._lift_target is None:
                self._lift_target = np.array(
                    [obs.ee.t[0], obs.ee.t[1],
                     scene.platform_top + self.LIFT])
            d = float(np.linalg.norm(self._lift_target - obs.ee.t))
            if d <= 0.08:
                self._lift_target = None
                self._park = None  # lift done, the base may drive again
                self._park_chi = None
                self.machine.to(ArmPhase.PLACING, t)
                phase = ArmPhase.PLACING
            else:
                nu = np.zeros(6)
                e = self._lift_target - obs.ee.t
                vv = 2.0 * e
                nn = float(np.linalg.norm(vv))
                if nn > 0.5:
                    vv *= 0.5 / nn
                nu[:3] = vv
                yaw = math.atan2(obs.ee.R[1, 0], obs.ee.R[0, 0])
                nu[3:] = orientation_rate(top_down_rotation(yaw),
                                          obs.ee.R, self.reach)
                return self._resolve(obs, nu, 0.0, 0.0, "place:lifting")

        # transport: drive to the container approach pose, then park again
        was_parked = self._place_park is not None
        v, omega, self._place_park, self._place_chi = self._settle(
            obs, chi, v, omega, at_goal, self._place_park, self._place_chi)
        if self._place_park is None:
            return ControlCommand(v=v, omega=omega,
                                  qd=_stow_servo(self.model, obs.q, 1.5),
                                  gripper="hold", label="place:carry")
        if not was_parked:
            self._reach_T = None

        # parked at the container: hover over the release point, then
        # descend straight down (same pattern as the pick reach; the
        # anchored yaw keeps the wrist from ratcheting into its limits)
        p_rel = self._release_point()
        dist = float(np.linalg.norm(p_rel - obs.ee.t))
        p_hov = p_rel + np.array([0.0, 0.0, self.HOVER])
        d_hov = float(np.linalg.norm(p_hov - obs.ee.t))
        place_yaw = self._place_chi.theta + 0.5 * math.pi
        gripper = "hold"
        if self._reach_T is None:
            self._reach_T = min(max(0.7, d_hov / 0.8), 1.5)
            self._reach_end = t + self._reach_T
            self._place_final = False
        if not self._place_final and \
                (d_hov <= self.reach.d_t or t >= self._reach_end):
            self._place_final = True
        if self._place_final:
            nu = np.zeros(6)
            nu[:3] = final_phase_velocity(obs.ee.t, p_rel, np.zeros(3),
                                          0.25, self.reach)
            if dist <= 0.008:
                gripper = "open"
            label = "place:final"
        else:
            twist, _ = reacher_command(obs.ee.t, obs.ee_velocity, p_hov,
                                       np.zeros(3), self._reach_end - t,
                                       CONTROL_DT, self.reach)
            nu = _cap_linear(twist)
            label = "place:reaching"
        nu[3:] = orientation_rate(top_down_rotation(place_yaw), obs.ee.R,
                                  self.reach)
        cmd = self._resolve(obs, nu, 0.0, 0.0, label)
        cmd.gripper = gripper
        return cmd
