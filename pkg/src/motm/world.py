"""Deterministic kinematic world for pick-and-place trials.

One robot, one active object, a platform, a drop container and an exit
waypoint.  The control loop runs at 50 Hz; the base follows exact unicycle
arcs (closed form, so the 20 ms tick loses nothing), the object advances in
1 ms substeps so its wandering heading program and edge bounces are resolved
finely, and the palm camera samples on a 33 ms grid with a delivery latency.

Everything random flows through one numpy Generator handed in by the caller,
so a trial is reproducible bit-for-bit from its seed.
"""

import math
from dataclasses import dataclass, field

import numpy as np
import yaml

from .errors import ConfigError
from .kinematics import fk_frames, whole_body_jacobian
from .spatial import Pose2, Transform3

PHYSICS_DT = 0.001
CONTROL_DT = 0.02


@dataclass
class SceneConfig:
    robot_start: tuple = (0.0, 0.0, 0.0)
    platform_center: tuple = (1.9, 0.6)
    platform_top: float = 0.78
    platform_half_extents: tuple = (0.3, 0.3)
    container_center: tuple = (4.0, 0.6)
    container_radius: float = 0.12
    container_top: float = 0.25
    exit_point: tuple = (5.6, 0.25)
    object_size: float = 0.03
    object_speed: float = 0.0
    object_margin: float = 0.08       # keep-out strip inside the platform edge
    placement_radius: float = 0.15    # random object start within this disc

    @property
    def object_center_z(self):
        return self.platform_top + 0.5 * self.object_size

    def validate(self):
        if self.object_size <= 0.0:
            raise ConfigError("object_size must be positive")
        if self.container_radius <= 0.0:
            raise ConfigError("container_radius must be positive")
        hx, hy = self.platform_half_extents
        if min(hx, hy) <= self.object_margin:
            raise ConfigError("platform smaller than its object margin")
        if self.placement_radius > min(hx, hy) - self.object_margin:
            raise ConfigError("placement_radius exceeds usable platform area")
        if self.object_speed < 0.0:
            raise ConfigError("object_speed must be >= 0")
        return self


def scene_from_dict(d):
    """Build a SceneConfig from the nested mapping used in config files."""
    try:
        plat = d["platform"]
        cont = d["container"]
        obj = d["object"]
        scene = SceneConfig(
            robot_start=tuple(float(v) for v in d["robot_start"]),
            platform_center=tuple(float(v) for v in plat["center"]),
            platform_top=float(plat["top"]),
            platform_half_extents=tuple(float(v) for v in plat["half_extents"]),
            container_center=tuple(float(v) for v in cont["center"]),
            container_radius=float(cont["radius"]),
            container_top=float(cont["top"]),
            exit_point=tuple(float(v) for v in d["exit"]),
            object_size=float(obj["size"]),
            object_speed=float(obj.get("speed", 0.0)),
            object_margin=float(obj.get("margin", 0.08)),
            placement_radius=float(obj.get("placement_radius", 0.15)),
        )
    except KeyError as e:
        raise ConfigError(f"scene config missing key: {e}") from e
    except (TypeError, ValueError) as e:
        raise ConfigError(f"malformed scene config: {e}") from e
    return scene.validate()


def load_scene(path):
    with open(path) as f:
        d = yaml.safe_load(f)
    if "scene" not in d:
        raise ConfigError(f"{path} has no 'scene' section")
    return scene_from_dict(d["scene"])


MOTION_KINDS = ("line", "arc", "sinusoid")


class ObjectMotion:
    """Constant-speed motion on the platform top with edge bounces.

    Three motion programs: a straight line, a constant-rate arc, and a
    sinusoidal weave around a base direction.  All keep |velocity| equal to
    the configured speed exactly; hitting the margin rectangle mirrors the
    base direction like a billiard.  Speed zero degenerates to a static
    object regardless of kind.
    """

    def __init__(self, scene, rng, kind="random"):
        self.scene = scene
        hx, hy = scene.platform_half_extents
        self.cx, self.cy = scene.platform_center
        self.bx = hx - scene.object_margin
        self.by = hy - scene.object_margin
        r = scene.placement_radius
        # uniform over the placement disc
        ang = rng.uniform(0.0, 2.0 * math.pi)
        rad = r * math.sqrt(rng.uniform())
        self.x = self.cx + rad * math.cos(ang)
        self.y = self.cy + rad * math.sin(ang)
        self.speed = scene.object_speed
        if kind == "random":
            kind = MOTION_KINDS[rng.integers(len(MOTION_KINDS))]
        if kind not in MOTION_KINDS:
            raise ConfigError(f"unknown object motion kind {kind!r}")
        self.kind = kind
        self.heading = rng.uniform(0.0, 2.0 * math.pi)
        self.phase = rng.uniform(0.0, 2.0 * math.pi)
        self.turn_rate = float(rng.choice([-1.0, 1.0])) * \
            self.speed / rng.uniform(0.10, 0.25)
        self.amp = 0.9
        self.period = 6.0
        self.t = 0.0

    def _theta(self):
        if self.kind == "line":
            return self.heading
        if self.kind == "arc":
            return self.heading + self.turn_rate * self.t
        return self.heading + self.amp * math.sin(
            2.0 * math.pi * self.t / self.period + self.phase)

    def position(self):
        return np.array([self.x, self.y, self.scene.object_center_z])

    def velocity(self):
        if self.speed == 0.0:
            return np.zeros(3)
        th = self._theta()
        return np.array([self.speed * math.cos(th),
                         self.speed * math.sin(th), 0.0])

    def step(self, dt):
        if self.speed == 0.0:
            self.t += dt
            return
        th = self._theta()
        nx = self.x + self.speed * math.cos(th) * dt
        ny = self.y + self.speed * math.sin(th) * dt
        bounced_x = nx > self.cx + self.bx or nx < self.cx - self.bx
        bounced_y = ny > self.cy + self.by or ny < self.cy - self.by
        if bounced_x:
            self.heading = math.pi - self.heading
            nx = self.x
        if bounced_y:
            self.heading = -self.heading
            ny = self.y
        if (bounced_x or bounced_y) and self.kind == "arc":
            # fold the accumulated turn into the base heading so the mirror
            # applies to the instantaneous direction, then restart the arc
            self.heading = self._wrap_reflect(th, bounced_x, bounced_y)
            self.t = -dt
        self.x, self.y = nx, ny
        self.t += dt

    @staticmethod
    def _wrap_reflect(theta, mirror_x, mirror_y):
        if mirror_x:
            theta = math.pi - theta
        if mirror_y:
            theta = -theta
        return theta


@dataclass
class PerceptionParams:
    rate_hz: float = 30.0
    latency: float = 0.05
    sigma_px: float = 3.0
    focal_px: float = 600.0
    half_fov: float = 1.31        # rad, off the optical axis
    max_range: float = 4.0


@dataclass
class Detection:
    t_capture: float
    point: np.ndarray             # world frame, on the known object plane


class PalmCamera:
    """Pinhole camera on the palm; pixel noise, known-plane backprojection."""

    def __init__(self, params, plane_z, rng):
        self.p = params
        self.plane_z = plane_z
        self.rng = rng
        self.period = 1.0 / params.rate_hz
        self.next_capture = 0.0
        self.pending = []          # (t_available, Detection)

    def maybe_capture(self, t, T_cam, p_obj):
        if t + 1e-12 < self.next_capture:
            return
        while self.next_capture <= t + 1e-12:
            self.next_capture += self.period
        pc = T_cam.inverse() @ p_obj
        z = pc[2]
        if z < 0.05 or z > self.p.max_range:
            return
        if math.atan2(math.hypot(pc[0], pc[1]), z) > self.p.half_fov:
            return
        f = self.p.focal_px
        u = f * pc[0] / z + self.rng.normal(0.0, self.p.sigma_px)
        v = f * pc[1] / z + self.rng.normal(0.0, self.p.sigma_px)
        d_cam = np.array([u / f, v / f, 1.0])
        d_world = T_cam.R @ d_cam
        if abs(d_world[2]) < 1e-9:
            return
        s = (self.plane_z - T_cam.t[2]) / d_world[2]
        if s <= 0.0:
            return
        point = T_cam.t + s * d_world
        det = Detection(t_capture=t, point=point)
        self.pending.append((t + self.p.latency, det))

    def deliver(self, t):
        out = [d for ta, d in self.pending if ta <= t + 1e-12]
        self.pending = [(ta, d) for ta, d in self.pending if ta > t + 1e-12]
        return out


@dataclass
class ControlCommand:
    v: float = 0.0
    omega: float = 0.0
    qd: np.ndarray = None
    gripper: str = "hold"         # hold | open | close
    label: str = ""               # free-form phase tag for the logs


@dataclass
class Observation:
    t: float
    base: Pose2
    q: np.ndarray
    ee: Transform3
    ee_velocity: np.ndarray       # linear, from the last applied command
    gripper_aperture: float
    attached: bool
    detections: list


GRIPPER_MAX = 0.08
GRIPPER_SPEED = 0.05

# grasp window, resolved along the gripper's own axes
TOL_CLOSE_AXIS = 0.012
TOL_TRANSVERSE = 0.025
TOL_VERTICAL = 0.025
TOL_REL_SPEED = 0.05
KICK_DISTANCE = 0.02

DROP_MIN_CLEAR = 0.02
DROP_MAX_CLEAR = 0.10


def integrate_unicycle(pose, v, omega, dt):
    """Exact arc integration of the unicycle over dt."""
    th = pose.theta
    if abs(omega) < 1e-9:
        return Pose2(pose.x + v * dt * math.cos(th),
                     pose.y + v * dt * math.sin(th), th)
    r = v / omega
    th2 = th + omega * dt
    return Pose2(pose.x + r * (math.sin(th2) - math.sin(th)),
                 pose.y - r * (math.cos(th2) - math.cos(th)), th2)


class World:
    def __init__(self, model, scene, rng, perception=None):
        self.model = model
        self.scene = scene
        self.rng = rng
        self.perception = perception if perception is not None else PerceptionParams()
        self.reset()

    def reset(self):
        scene = self.scene
        self.tick = 0
        self.base = Pose2(*scene.robot_start)
        self.q = np.array(self.model.q_stow, dtype=float)
        self.object = ObjectMotion(scene, self.rng)
        self.camera = PalmCamera(self.perception, scene.object_center_z,
                                 self.rng)
        self.aperture = GRIPPER_MAX
        self.gripper_cmd = "hold"
        self.attached = False
        self.grasp_offset = None
        self.object_delivered = False
        self.object_lost = False
        self.faulted = False
        self.events = []
        self.log = []
        self._pending_detections = []
        self._ee_vel = np.zeros(3)
        self._last_base_cmd = (0.0, 0.0)
        self._frames = fk_frames(self.model, self.base, self.q)

    # -- queries ---------------------------------------------------------

    @property
    def t(self):
        return self.tick * CONTROL_DT

    def observe(self):
        dets = self._pending_detections
        self._pending_detections = []
        return Observation(
            t=self.t,
            base=self.base.copy(),
            q=self.q.copy(),
            ee=self._frames["end_effector"].copy(),
            ee_velocity=self._ee_vel.copy(),
            gripper_aperture=self.aperture,
            attached=self.attached,
            detections=dets,
        )

    def object_position(self):
        """Ground truth; for adjudication and metrics, not for policies."""
        if self.attached:
            return self._frames["end_effector"] @ self.grasp_offset
        return self.object.position()

    def object_velocity(self):
        if self.attached:
            return self._ee_vel.copy()
        return self.object.velocity()

    def spawn_next_object(self):
        """Place a fresh object on the platform (multi-object missions)."""
        self.object = ObjectMotion(self.scene, self.rng)
        self.attached = False
        self.grasp_offset = None
        self.object_delivered = False
        self.object_lost = False

    def push_event(self, name, **data):
        self.events.append({"t": round(self.t, 6), "event": name, **data})

    # -- stepping --------------------------------------------------------

    def step(self, cmd):
        model = self.model
        qd_raw = np.zeros(model.n) if cmd.qd is None else np.asarray(cmd.qd,
                                                                     float)
        if not (math.isfinite(cmd.v) and math.isfinite(cmd.omega)
                and np.all(np.isfinite(qd_raw))):
            # never integrate a non-finite command: freeze and flag the trial
            if not self.faulted:
                self.faulted = True
                self.push_event("integrator_fault")
            cmd = ControlCommand(label=cmd.label)
            qd_raw = np.zeros(model.n)
        v = float(np.clip(cmd.v, -model.base_vel_limit, model.base_vel_limit))
        omega = float(np.clip(cmd.omega, -model.base_omega_limit,
                              model.base_omega_limit))
        qd = np.clip(qd_raw, -model.velocity_limits, model.velocity_limits)

        J = whole_body_jacobian(model, self.base, self.q)
        u = np.concatenate([qd, [v, omega]])
        ee_vel = J[:3] @ u

        t0 = self.t
        substeps = int(round(CONTROL_DT / PHYSICS_DT))
        for k in range(substeps):
            ts = t0 + k * PHYSICS_DT
            if not self.attached:
                self.camera.maybe_capture(
                    ts, self._camera_pose(ts - t0, v, omega, qd),
                    self.object.position())
            self.object.step(PHYSICS_DT)

        self.base = integrate_unicycle(self.base, v, omega, CONTROL_DT)
        lo, hi = model.joint_limits
        self.q = np.clip(self.q + qd * CONTROL_DT, lo, hi)
        self.tick += 1
        self._frames = fk_frames(model, self.base, self.q)
        self._ee_vel = ee_vel
        self._last_base_cmd = (v, omega)

        self._step_gripper(cmd.gripper, ee_vel, v)
        if not self.attached and not self.object_delivered:
            self._check_object_on_platform()
        self._pending_detections.extend(self.camera.deliver(self.t))
        self._log_row(cmd.label, v, omega, ee_vel)

    def _camera_pose(self, tau, v, omega, qd):
        base_tau = integrate_unicycle(self.base, v, omega, tau)
        q_tau = self.q + qd * tau
        return fk_frames(self.model, base_tau, q_tau)["camera"]

    def _step_gripper(self, command, ee_vel, base_speed):
        # "hold" continues whatever the fingers were doing; "stop" freezes them
        if command in ("open", "close"):
            self.gripper_cmd = command
        elif command == "stop":
            self.gripper_cmd = "hold"
        size = self.scene.object_size
        a = self.aperture
        if self.gripper_cmd == "close":
            a_new = max(0.0, a - GRIPPER_SPEED * CONTROL_DT)
            if (not self.attached and not self.object_delivered
                    and not self.object_lost
                    and a > size >= a_new):
                self._adjudicate_grasp(ee_vel, base_speed)
            if self.attached:
                a_new = max(a_new, size)
            self.aperture = a_new
        elif self.gripper_cmd == "open":
            a_new = min(GRIPPER_MAX, a + GRIPPER_SPEED * CONTROL_DT)
            if self.attached and a_new > size + 0.004:
                self._adjudicate_drop()
            self.aperture = a_new

    def _adjudicate_grasp(self, ee_vel, base_speed):
        ee = self._frames["end_effector"]
        p_obj = self.object.position()
        v_obj = self.object.velocity()
        d = p_obj - ee.t
        x_axis = ee.R[:, 0]
        y_axis = ee.R[:, 1]
        e_close = float(d @ x_axis)
        e_trans = float(d @ y_axis)
        e_vert = float(d[2])
        e_speed = float((ee_vel - v_obj) @ x_axis)
        ok = (abs(e_close) <= TOL_CLOSE_AXIS
              and abs(e_trans) <= TOL_TRANSVERSE
              and abs(e_vert) <= TOL_VERTICAL
              and abs(e_speed) <= TOL_REL_SPEED)
        detail = {
            "e_close": round(e_close, 6), "e_trans": round(e_trans, 6),
            "e_vert": round(e_vert, 6), "e_speed": round(e_speed, 6),
            "base_speed": round(abs(base_speed), 6),
        }
        if ok:
            self.attached = True
            self.grasp_offset = ee.inverse() @ p_obj
            self.push_event("grasp_success", **detail)
        else:
            horiz = np.array([d[0], d[1]])
            nrm = np.linalg.norm(horiz)
            if nrm < 1e-9:
                horiz = np.array([x_axis[0], x_axis[1]])
                nrm = max(np.linalg.norm(horiz), 1e-9)
            self.object.x += KICK_DISTANCE * horiz[0] / nrm
            self.object.y += KICK_DISTANCE * horiz[1] / nrm
            self.push_event("grasp_fail", **detail)

    def _adjudicate_drop(self):
        # judged on the gripper pose at release, not the object
        p_ee = self._frames["end_effector"].t
        self.attached = False
        self.grasp_offset = None
        cx, cy = self.scene.container_center
        horiz = math.hypot(p_ee[0] - cx, p_ee[1] - cy)
        clear = p_ee[2] - self.scene.container_top
        detail = {"horiz": round(horiz, 6), "clear": round(clear, 6)}
        if horiz <= self.scene.container_radius and \
                DROP_MIN_CLEAR <= clear <= DROP_MAX_CLEAR:
            self.object_delivered = True
            self.push_event("drop_success", **detail)
        else:
            self.object_lost = True
            self.push_event("drop_miss", **detail)

    def _check_object_on_platform(self):
        if self.object_lost:
            return
        hx, hy = self.scene.platform_half_extents
        cx, cy = self.scene.platform_center
        if (abs(self.object.x - cx) > hx + 1e-9
                or abs(self.object.y - cy) > hy + 1e-9):
            self.object_lost = True
            self.push_event("object_fell")

    def _log_row(self, label, v, omega, ee_vel):
        ee = self._frames["end_effector"]
        self.log.append({
            "t": self.t,
            "base_x": self.base.x, "base_y": self.base.y,
            "base_theta": self.base.theta,
            "v": v, "omega": omega,
            "ee_x": ee.t[0], "ee_y": ee.t[1], "ee_z": ee.t[2],
            "ee_vx": ee_vel[0], "ee_vy": ee_vel[1], "ee_vz": ee_vel[2],
            "aperture": self.aperture,
            "attached": int(self.attached),
            "label": label,
        })
