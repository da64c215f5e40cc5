"""Forward kinematics, Jacobians and manipulability.

The arm chain is evaluated in the base frame; the planar base pose lifts
results into the world frame. The whole-body Jacobian appends two columns for
the base twist (forward speed v, yaw rate omega), so end-effector velocity is

    nu = J_wb @ [qd_arm; v; omega]        (6-vector, world frame)

Manipulability is the Yoshikawa volume of the translational block of the
arm-only Jacobian: base columns are excluded so the measure reflects arm
posture, not the trivially unbounded base motion.
"""

import math

import numpy as np

from .spatial import Pose2, Transform3, hat, so3_exp

_FD_STEP = 1e-6


def pan_joint_index(model):
    """First revolute joint whose axis is vertical in the mount frame."""
    for i, joint in enumerate(model.joints):
        if joint.kind != "revolute":
            continue
        if abs((model.mount.R @ joint.axis)[2]) > 0.99:
            return i
    return None


def _apply_chain(model, q, capture=()):
    """Joint origins/axes and the EE transform, all in the base frame.

    `capture` lists joint indices whose post-rotation frames are also wanted;
    they come back as a dict index -> Transform3.
    """
    n = model.n
    R = model.mount.R.copy()
    p = model.mount.t.copy()
    origins = np.empty((n, 3))
    axes = np.empty((n, 3))
    captured = {}
    for i, joint in enumerate(model.joints):
        off = joint.offset
        p = R @ off.t + p
        R = R @ off.R
        origins[i] = p
        axes[i] = R @ joint.axis
        if joint.kind == "prismatic":
            p = p + axes[i] * q[i]
        else:
            R = R @ so3_exp(joint.axis * q[i])
        if i in capture:
            captured[i] = Transform3(R.copy(), p.copy())
    ee = Transform3(R @ model.ee_offset.R, R @ model.ee_offset.t + p)
    return origins, axes, ee, captured


def _base_transform(base):
    return Transform3.from_pose2(base)


def fk_frames(model, base, q):
    """Named frames in the world frame: end_effector, camera, joint1_origin."""
    q = np.asarray(q, dtype=float)
    if q.shape != (model.n,):
        raise ValueError(f"expected {model.n} joint values, got {q.shape}")
    pan = pan_joint_index(model)
    capture = (pan,) if pan is not None else ()
    origins, axes, ee_b, captured = _apply_chain(model, q, capture)
    Tb = _base_transform(base)
    ee = Tb @ ee_b
    frames = {
        "end_effector": ee,
        "camera": ee @ model.camera_offset,
    }
    if pan is not None:
        frames["joint1_origin"] = Tb @ captured[pan]
    return frames


def forward_kinematics(model, base, q):
    """End-effector transform in the world frame."""
    return fk_frames(model, base, q)["end_effector"]


def whole_body_jacobian(model, base, q):
    """6 x (n+2) world-frame Jacobian: arm columns then base (v, omega)."""
    q = np.asarray(q, dtype=float)
    origins, axes, ee_b, _ = _apply_chain(model, q)
    Tb = _base_transform(base)
    Rb = Tb.R
    p_ee = Tb @ ee_b.t
    n = model.n
    J = np.zeros((6, n + 2))
    for i in range(n):
        a = Rb @ axes[i]
        if model.joints[i].kind == "prismatic":
            J[:3, i] = a
        else:
            o = Tb @ origins[i]
            J[:3, i] = np.cross(a, p_ee - o)
            J[3:, i] = a
    # base forward speed: translate along the heading
    h = np.array([math.cos(base.theta), math.sin(base.theta), 0.0])
    J[:3, n] = h
    # base yaw rate: rotation about the base origin's vertical axis
    zhat = np.array([0.0, 0.0, 1.0])
    r = p_ee - np.array([base.x, base.y, 0.0])
    J[:3, n + 1] = np.cross(zhat, r)
    J[3:, n + 1] = zhat
    return J


def arm_jacobian(model, q):
    """6 x n arm Jacobian in the base frame (base columns excluded)."""
    q = np.asarray(q, dtype=float)
    origins, axes, ee_b, _ = _apply_chain(model, q)
    n = model.n
    J = np.zeros((6, n))
    for i in range(n):
        if model.joints[i].kind == "prismatic":
            J[:3, i] = axes[i]
        else:
            J[:3, i] = np.cross(axes[i], ee_b.t - origins[i])
            J[3:, i] = axes[i]
    return J


def manipulability(J):
    """Yoshikawa measure sqrt(det(Jt Jt^T)) of the translational block.

    J may have 6 rows (translational block = top 3), 3 rows, or fewer for
    planar mechanisms (the whole matrix is used). Returns 0.0 for
    rank-deficient blocks; invariant to left-multiplication by a rotation.
    """
    J = np.asarray(J, dtype=float)
    Jt = J[:3] if J.shape[0] > 3 else J
    g = Jt @ Jt.T
    d = np.linalg.det(g)
    if d <= 0.0:
        return 0.0
    return math.sqrt(d)


def _batch_translational_jacobians(model, Q, rows):
    """Translational arm Jacobians for a batch of configurations.

    Q is (B, n); returns (B, r, n) with r = len(rows). Evaluated in the base
    frame (manipulability is rotation invariant, so the base pose is
    irrelevant here).
    """
    Q = np.asarray(Q, dtype=float)
    B, n = Q.shape
    R = np.broadcast_to(model.mount.R, (B, 3, 3)).copy()
    p = np.broadcast_to(model.mount.t, (B, 3)).copy()
    origins = np.empty((B, n, 3))
    axes = np.empty((B, n, 3))
    for i, joint in enumerate(model.joints):
        off = joint.offset
        p = p + np.einsum("bij,j->bi", R, off.t)
        R = R @ off.R
        origins[:, i] = p
        axes[:, i] = np.einsum("bij,j->bi", R, joint.axis)
        if joint.kind == "prismatic":
            p = p + axes[:, i] * Q[:, i, None]
        else:
            K = hat(joint.axis)
            KK = K @ K
            s = np.sin(Q[:, i])[:, None, None]
            c = (1.0 - np.cos(Q[:, i]))[:, None, None]
            R = R @ (np.eye(3) + s * K + c * KK)
    p_ee = p + np.einsum("bij,j->bi", R, model.ee_offset.t)
    J = np.empty((B, 3, n))
    for i, joint in enumerate(model.joints):
        if joint.kind == "prismatic":
            J[:, :, i] = axes[:, i]
        else:
            J[:, :, i] = np.cross(axes[:, i], p_ee - origins[:, i])
    return J[:, rows, :]


def manipulability_gradient(model, base, q, rows=None, delta=_FD_STEP):
    """Gradient of manipulability w.r.t. arm joint positions.

    Uses dm/dq_i = m * tr((Jt Jt^T)^-1 dJt/dq_i Jt^T) with the Jacobian
    derivative taken by central finite differences. `rows` selects axes of
    the translational block (default all three; planar test rigs can mask
    the out-of-plane row). Returns (grad, degraded): near a singularity
    (m <= 1e-9) the gradient is zeroed and degraded is True.
    """
    q = np.asarray(q, dtype=float)
    n = model.n
    rows = list(range(3)) if rows is None else list(rows)
    Jt = _batch_translational_jacobians(model, q[None, :], rows)[0]
    g = Jt @ Jt.T
    d = np.linalg.det(g)
    m = math.sqrt(d) if d > 0.0 else 0.0
    if m <= 1e-9:
        return np.zeros(n), True
    Qp = np.repeat(q[None, :], n, axis=0) + np.eye(n) * delta
    Qm = np.repeat(q[None, :], n, axis=0) - np.eye(n) * delta
    Jp = _batch_translational_jacobians(model, Qp, rows)
    Jm = _batch_translational_jacobians(model, Qm, rows)
    dJ = (Jp - Jm) / (2.0 * delta)          # (n, r, narm)
    ginv = np.linalg.inv(g)
    # tr(ginv @ dJ_i @ Jt^T) for each i
    grad = m * np.einsum("ab,ibc,ac->i", ginv, dJ, Jt)
    return grad, False


def dls_ik(model, base, q0, target, pos_tol=5e-3, axis_tol=0.035,
           max_iters=60, damping=0.05, step_scale=0.6):
    """Damped-least-squares reach to a position + approach-axis target.

    The task is 6-dimensional: position error plus the axis-alignment error
    cross(z_ee, z_des), which leaves the tool yaw free. Joint limits are
    enforced by clipping. Returns (q, converged).
    """
    q = np.asarray(q0, dtype=float).copy()
    lo, hi = model.joint_limits
    z_des = target.R[:, 2]
    lam2 = damping * damping
    for _ in range(max_iters):
        origins, axes, ee_b, _ = _apply_chain(model, q)
        Tb = _base_transform(base)
        p_ee = Tb @ ee_b.t
        z_ee = Tb.R @ ee_b.R[:, 2]
        e_pos = target.t - p_ee
        e_rot = np.cross(z_ee, z_des)
        if np.linalg.norm(e_pos) <= pos_tol and np.linalg.norm(e_rot) <= axis_tol:
            return q, True
        J = np.zeros((6, model.n))
        for i in range(model.n):
            a = Tb.R @ axes[i]
            if model.joints[i].kind == "prismatic":
                J[:3, i] = a
            else:
                o = Tb @ origins[i]
                J[:3, i] = np.cross(a, p_ee - o)
                J[3:, i] = a
        e = np.concatenate([e_pos, e_rot])
        JJt = J @ J.T + lam2 * np.eye(6)
        dq = J.T @ np.linalg.solve(JJt, e)
        q = np.clip(q + step_scale * dq, lo, hi)
    origins, axes, ee_b, _ = _apply_chain(model, q)
    Tb = _base_transform(base)
    p_ee = Tb @ ee_b.t
    z_ee = Tb.R @ ee_b.R[:, 2]
    ok = (np.linalg.norm(target.t - p_ee) <= pos_tol
          and np.linalg.norm(np.cross(z_ee, z_des)) <= axis_tol)
    return q, ok
