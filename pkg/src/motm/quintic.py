"""Quintic reach segments.

A segment is a per-axis fifth-order polynomial with prescribed boundary
positions and velocities and zero boundary accelerations. For rest-to-rest
motion the normalized profile is the classic smoothstep

    s(tau) = 10 tau^3 - 15 tau^4 + 6 tau^5

whose peak velocity is 15/8 * d/T and peak acceleration 10/sqrt(3) * d/T^2.
"""

import math

import numpy as np

T_MIN = 0.05


class QuinticSegment:
    """Vector-valued quintic on [t0, t0 + T]; coefficients per axis, low order first.

    Evaluation takes absolute time when t0 is set; the default t0 = 0
    keeps segment-local time working as before.
    """

    def __init__(self, coeffs, T, urgent=False, t0=0.0):
        self.coeffs = np.asarray(coeffs, dtype=float)   # (dims, 6)
        self.T = float(T)
        self.urgent = bool(urgent)
        self.t0 = float(t0)

    def _tau(self, t):
        return min(max(t - self.t0, 0.0), self.T)

    def position(self, t):
        t = self._tau(t)
        powers = np.array([1.0, t, t**2, t**3, t**4, t**5])
        return self.coeffs @ powers

    def velocity(self, t):
        t = self._tau(t)
        powers = np.array([0.0, 1.0, 2 * t, 3 * t**2, 4 * t**3, 5 * t**4])
        return self.coeffs @ powers

    def acceleration(self, t):
        t = self._tau(t)
        powers = np.array([0.0, 0.0, 2.0, 6 * t, 12 * t**2, 20 * t**3])
        return self.coeffs @ powers

    def peak_acceleration(self):
        """Analytic max of |acceleration| over the segment (all axes)."""
        best = 0.0
        for c in self.coeffs:
            # acceleration is cubic: a(t) = 2c2 + 6c3 t + 12c4 t^2 + 20c5 t^3
            candidates = [0.0, self.T]
            # stationary points: 6c3 + 24c4 t + 60c5 t^2 = 0
            a2, a1, a0 = 60.0 * c[5], 24.0 * c[4], 6.0 * c[3]
            if abs(a2) > 1e-14:
                disc = a1 * a1 - 4.0 * a2 * a0
                if disc >= 0.0:
                    r = math.sqrt(disc)
                    candidates += [(-a1 + r) / (2 * a2), (-a1 - r) / (2 * a2)]
            elif abs(a1) > 1e-14:
                candidates.append(-a0 / a1)
            for t in candidates:
                if 0.0 <= t <= self.T:
                    a = 2 * c[2] + 6 * c[3] * t + 12 * c[4] * t**2 + 20 * c[5] * t**3
                    best = max(best, abs(a))
        return best


def plan_quintic(p0, v0, p_target, v_target, t_arrive, t0=0.0):
    """Quintic connecting (p0, v0) to (p_target, v_target) in t_arrive seconds.

    Boundary accelerations are zero. A horizon below T_MIN is clamped to
    T_MIN and the segment is flagged urgent.
    """
    p0 = np.atleast_1d(np.asarray(p0, dtype=float))
    v0 = np.atleast_1d(np.asarray(v0, dtype=float))
    pT = np.atleast_1d(np.asarray(p_target, dtype=float))
    vT = np.atleast_1d(np.asarray(v_target, dtype=float))
    if not (p0.shape == v0.shape == pT.shape == vT.shape):
        raise ValueError("quintic boundary shapes disagree")
    if not np.isfinite(t_arrive):
        raise ValueError("t_arrive must be finite")
    urgent = t_arrive < T_MIN
    T = max(t_arrive, T_MIN)
    d = pT - p0
    T2, T3, T4, T5 = T * T, T**3, T**4, T**5
    c = np.zeros((len(p0), 6))
    c[:, 0] = p0
    c[:, 1] = v0
    c[:, 2] = 0.0
    c[:, 3] = (20.0 * d - (8.0 * vT + 12.0 * v0) * T) / (2.0 * T3)
    c[:, 4] = (-30.0 * d + (14.0 * vT + 16.0 * v0) * T) / (2.0 * T4)
    c[:, 5] = (12.0 * d - 6.0 * (vT + v0) * T) / (2.0 * T5)
    return QuinticSegment(c, T, urgent=urgent, t0=t0)
