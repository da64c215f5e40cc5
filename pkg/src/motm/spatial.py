"""Planar poses, 3-D transforms and rotation helpers.

Conventions used throughout the package:

* world frame: x/y ground plane, z up
* base frame: x forward, y left, z up
* angles wrapped to the half-open interval (-pi, pi]
"""

import math
from dataclasses import dataclass, field

import numpy as np

_EPS = 1e-12


def wrap_angle(a):
    """Wrap an angle (radians) to (-pi, pi]."""
    r = math.remainder(a, 2.0 * math.pi)
    if r <= -math.pi:
        r += 2.0 * math.pi
    return r


@dataclass
class Pose2:
    """Planar pose (x, y, theta); theta is normalized on construction."""

    x: float = 0.0
    y: float = 0.0
    theta: float = 0.0

    def __post_init__(self):
        self.theta = wrap_angle(self.theta)

    @property
    def xy(self):
        return np.array([self.x, self.y])

    def heading_vec(self):
        return np.array([math.cos(self.theta), math.sin(self.theta)])

    def copy(self):
        return Pose2(self.x, self.y, self.theta)


def rotx(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def roty(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rotz(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rpy_to_R(roll, pitch, yaw):
    """ZYX convention: R = Rz(yaw) @ Ry(pitch) @ Rx(roll)."""
    return rotz(yaw) @ roty(pitch) @ rotx(roll)


def hat(v):
    return np.array(
        [[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]]
    )


def so3_exp(w):
    """Rotation matrix from a rotation vector (Rodrigues)."""
    th = np.linalg.norm(w)
    if th < 1e-10:
        W = hat(w)
        return np.eye(3) + W + 0.5 * (W @ W)
    a = w / th
    W = hat(a)
    return np.eye(3) + math.sin(th) * W + (1.0 - math.cos(th)) * (W @ W)

def so3_log(R):
    """Rotation vector of R. Inverse of so3_exp on the principal branch."""
    tr = np.trace(R)
    c = max(-1.0, min(1.0, 0.5 * (tr - 1.0)))
    th = math.acos(c)
    if th < 1e-10:
        return 0.5 * np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if th > math.pi - 1e-6:
        # near pi the skew part vanishes; recover the axis from R + I
        d = np.diag(R)
        k = int(np.argmax(d))
        ax = np.array([R[0, k], R[1, k], R[2, k]]) + np.eye(3)[:, k]
        n = np.linalg.norm(ax)
        if n < _EPS:
            ax = np.eye(3)[:, k]
            n = 1.0
        ax = ax / n
        # pin the sign with the skew part when it is not exactly zero
        skew = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
        if np.dot(skew, ax) < 0.0:
            ax = -ax
        return th * ax
    s = 0.5 / math.sin(th)
    return th * s * np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])


def slerp_R(Ra, Rb, s):
    """Geodesic interpolation between two rotations, s in [0, 1]."""
    return Ra @ so3_exp(s * so3_log(Ra.T @ Rb))


def rotation_error(R_des, R_cur):
    """Rotation vector taking R_cur onto R_des, expressed in the world frame."""
    return so3_log(R_des @ R_cur.T)


@dataclass
class Transform3:
    """Rigid transform: rotation matrix R and translation t."""

    R: np.ndarray = field(default_factory=lambda: np.eye(3))
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __matmul__(self, other):
        if isinstance(other, Transform3):
            return Transform3(self.R @ other.R, self.R @ other.t + self.t)
        other = np.asarray(other, dtype=float)
        return self.R @ other + self.t

    def inverse(self):
        Rt = self.R.T
        return Transform3(Rt, -Rt @ self.t)

    def validate(self, tol=1e-9):
        """Raise ValueError unless R is orthonormal with det +1 (within tol)."""
        if self.R.shape != (3, 3) or self.t.shape != (3,):
            raise ValueError("Transform3 has wrong shapes")
        err = np.abs(self.R.T @ self.R - np.eye(3)).max()
        if err > tol:
            raise ValueError(f"rotation not orthonormal (|R^T R - I| = {err:.3e})")
        if abs(np.linalg.det(self.R) - 1.0) > 1e-6:
            raise ValueError("rotation has det != +1")
        return self

    @staticmethod
    def from_pose2(pose, z=0.0):
        return Transform3(rotz(pose.theta), np.array([pose.x, pose.y, z]))

    @staticmethod
    def from_rpy_xyz(rpy, xyz):
        return Transform3(rpy_to_R(*rpy), np.asarray(xyz, dtype=float))

    def copy(self):
        return Transform3(self.R.copy(), self.t.copy())


def look_at_rotation(eye, target, up=(0.0, 0.0, 1.0)):
    """Rotation whose z-axis points from eye toward target.

    The x-axis is chosen perpendicular to z and as close as possible to the
    projection of `up` x z, which keeps the frame deterministic for the
    camera/approach axis uses in this package.
    """
    z = np.asarray(target, dtype=float) - np.asarray(eye, dtype=float)
    n = np.linalg.norm(z)
    if n < _EPS:
        return np.eye(3)
    z = z / n
    up = np.asarray(up, dtype=float)
    x = np.cross(up, z)
    nx = np.linalg.norm(x)
    if nx < 1e-9:
        # boresight parallel to up: fall back to world x
        x = np.cross(np.array([1.0, 0.0, 0.0]), z)
        nx = np.linalg.norm(x)
        if nx < _EPS:
            x = np.array([0.0, 1.0, 0.0])
            nx = 1.0
    x = x / nx
    y = np.cross(z, x)
    return np.column_stack([x, y, z])


def top_down_rotation(yaw=0.0):
    """Grasp orientation with the approach (z) axis pointing straight down."""
    # z down, x rotated by yaw about the world z axis
    c, s = math.cos(yaw), math.sin(yaw)
    x = np.array([c, s, 0.0])
    z = np.array([0.0, 0.0, -1.0])
    y = np.cross(z, x)
    return np.column_stack([x, y, z])
