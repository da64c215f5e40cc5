"""Robot model description and YAML loading.

A model file is a YAML document with a `schema` version field, a serial arm
chain (revolute/prismatic joints with parent offsets, position limits and a
velocity limit), a planar base kind, and named frames for the end effector
and palm camera. Three models ship with the package: a Franka-style arm on a
differential-drive base (`frankie`), a torso-lift 7-DOF arm on a round base
(`fetch`), and a 6-DOF arm on a skid-steer base (`husky-ur5`).
"""

import importlib.resources
import pathlib

import numpy as np
import yaml

from .errors import ModelError
from .spatial import Transform3

SCHEMA_VERSION = 1

BASE_KINDS = ("differential-drive", "holonomic-planar")
JOINT_KINDS = ("revolute", "prismatic")


class Joint:
    """One joint of the serial chain."""

    def __init__(self, name, kind, axis, xyz, rpy, limits, vel_limit):
        self.name = name
        self.kind = kind
        axis = np.asarray(axis, dtype=float)
        n = np.linalg.norm(axis)
        if n < 1e-9:
            raise ModelError(f"joint {name}: zero axis")
        self.axis = axis / n
        self.offset = Transform3.from_rpy_xyz(rpy, xyz)
        self.limits = (float(limits[0]), float(limits[1]))
        if not self.limits[0] < self.limits[1]:
            raise ModelError(f"joint {name}: empty position-limit interval")
        self.vel_limit = float(vel_limit)
        if self.vel_limit <= 0.0:
            raise ModelError(f"joint {name}: non-positive velocity limit")


class KinematicModel:
    """Mobile manipulator: planar base + serial arm + named frames."""

    def __init__(self, name, base_kind, robot_radius, mount, joints,
                 ee_offset, camera_offset, q_stow, base_vel_limit=1.0,
                 base_omega_limit=2.0):
        if base_kind not in BASE_KINDS:
            raise ModelError(f"unknown base kind {base_kind!r}")
        self.name = name
        self.base_kind = base_kind
        self.robot_radius = float(robot_radius)
        self.mount = mount
        self.joints = list(joints)
        self.ee_offset = ee_offset
        self.camera_offset = camera_offset
        self.q_stow = np.asarray(q_stow, dtype=float)
        self.base_vel_limit = float(base_vel_limit)
        self.base_omega_limit = float(base_omega_limit)
        if len(self.q_stow) != self.n:
            raise ModelError(
                f"model {name}: stow configuration has {len(self.q_stow)} "
                f"entries for {self.n} joints")
        lo, hi = self.joint_limits
        if np.any(self.q_stow < lo) or np.any(self.q_stow > hi):
            raise ModelError(f"model {name}: stow configuration violates limits")
        # flat arrays used by the kinematics fast paths
        self._axes = np.array([j.axis for j in self.joints])
        self._kinds = np.array([j.kind == "prismatic" for j in self.joints])

    @property
    def n(self):
        return len(self.joints)

    @property
    def joint_limits(self):
        lo = np.array([j.limits[0] for j in self.joints])
        hi = np.array([j.limits[1] for j in self.joints])
        return lo, hi

    @property
    def velocity_limits(self):
        return np.array([j.vel_limit for j in self.joints])


class JointState:
    """Joint positions and velocities with limit handling."""

    def __init__(self, model, q=None, qd=None):
        self.model = model
        self.q = np.array(q if q is not None else model.q_stow, dtype=float)
        self.qd = np.array(qd if qd is not None else np.zeros(model.n), dtype=float)
        if self.q.shape != (model.n,) or self.qd.shape != (model.n,):
            raise ModelError("joint state dimension mismatch")

    def integrate(self, qd_cmd, dt):
        """Advance positions one step; velocities and positions are clamped."""
        qd = np.clip(qd_cmd, -self.model.velocity_limits, self.model.velocity_limits)
        lo, hi = self.model.joint_limits
        self.q = np.clip(self.q + qd * dt, lo, hi)
        self.qd = qd

    def copy(self):
        return JointState(self.model, self.q.copy(), self.qd.copy())


def _require(d, key, ctx):
    if key not in d:
        raise ModelError(f"{ctx}: missing key {key!r}")
    return d[key]


def model_from_dict(doc, name="<dict>"):
    if not isinstance(doc, dict):
        raise ModelError(f"{name}: model document must be a mapping")
    schema = _require(doc, "schema", name)
    if schema != SCHEMA_VERSION:
        raise ModelError(f"{name}: unsupported schema version {schema!r}")
    jdocs = _require(doc, "joints", name)
    if not jdocs:
        raise ModelError(f"{name}: empty joint list")
    joints = []
    for i, jd in enumerate(jdocs):
        ctx = f"{name}:joint[{i}]"
        kind = _require(jd, "kind", ctx)
        if kind not in JOINT_KINDS:
            raise ModelError(f"{ctx}: unknown joint kind {kind!r}")
        joints.append(Joint(
            name=jd.get("name", f"joint{i + 1}"),
            kind=kind,
            axis=_require(jd, "axis", ctx),
            xyz=jd.get("xyz", (0.0, 0.0, 0.0)),
            rpy=jd.get("rpy", (0.0, 0.0, 0.0)),
            limits=_require(jd, "limits", ctx),
            vel_limit=_require(jd, "vel_limit", ctx),
        ))
    frames = _require(doc, "frames", name)
    ee = _require(frames, "end_effector", name)
    cam = frames.get("camera", {"xyz": (0.0, 0.0, -0.08), "rpy": (0.0, 0.0, 0.0)})
    mount = doc.get("mount", {})
    return KinematicModel(
        name=doc.get("name", name),
        base_kind=_require(doc, "base_kind", name),
        robot_radius=_require(doc, "robot_radius", name),
        mount=Transform3.from_rpy_xyz(mount.get("rpy", (0, 0, 0)),
                                      mount.get("xyz", (0, 0, 0))),
        joints=joints,
        ee_offset=Transform3.from_rpy_xyz(ee.get("rpy", (0, 0, 0)),
                                          ee.get("xyz", (0, 0, 0))),
        camera_offset=Transform3.from_rpy_xyz(cam.get("rpy", (0, 0, 0)),
                                              cam.get("xyz", (0, 0, 0))),
        q_stow=_require(doc, "q_stow", name),
        base_vel_limit=doc.get("base_vel_limit", 1.0),
        base_omega_limit=doc.get("base_omega_limit", 2.0),
    )


def packaged_model_names():
    root = importlib.resources.files("motm") / "models"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def load_robot_model(spec):
    """Load a robot model by packaged name (e.g. "frankie") or file path."""
    path = pathlib.Path(str(spec))
    if path.suffix in (".yaml", ".yml") and path.exists():
        text = path.read_text()
        name = path.stem
    else:
        key = str(spec).replace("_", "-")
        res = importlib.resources.files("motm") / "models" / f"{key}.yaml"
        if not res.is_file():
            raise ModelError(
                f"unknown robot model {spec!r}; packaged models: "
                f"{', '.join(packaged_model_names())}")
        text = res.read_text()
        name = key
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ModelError(f"{name}: YAML parse error: {e}") from e
    return model_from_dict(doc, name=name)
