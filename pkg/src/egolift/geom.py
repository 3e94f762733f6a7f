"""SE(3) pose algebra and gravity alignment.

Rotations are stored as 3x3 matrices so the gravity-alignment construction
stays literal. All types are immutable value types; operations are pure
functions and thread-safe.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateGravityAlignment, NearPiRotation

# Below this angle the exp/log maps switch to their Taylor expansions.
SMALL_ANGLE = 1e-8
# log is rejected within this distance of the pi branch cut.
PI_MARGIN = 1e-6


def _as_unit(v, name: str) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64).reshape(3)
    n = np.linalg.norm(v)
    if abs(n - 1.0) > 1e-9:
        raise ValueError(f"{name} must be unit length, got norm {n!r}")
    return v


@dataclass(frozen=True)
class Rotation:
    """A proper rotation, stored as an orthonormal 3x3 matrix with det +1."""

    m: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.m, dtype=np.float64).reshape(3, 3).copy()
        m.flags.writeable = False
        object.__setattr__(self, "m", m)
        err = np.abs(m.T @ m - np.eye(3)).max()
        if err > 1e-7:
            raise ValueError(f"matrix is not orthonormal (max error {err:g})")
        if abs(np.linalg.det(m) - 1.0) > 1e-7:
            raise ValueError("matrix determinant is not +1")

    @staticmethod
    def identity() -> "Rotation":
        return Rotation(np.eye(3))

    @staticmethod
    def about_z(angle: float) -> "Rotation":
        c, s = np.cos(angle), np.sin(angle)
        return Rotation(np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]))

    def inverse(self) -> "Rotation":
        return Rotation(self.m.T)

    def compose(self, other: "Rotation") -> "Rotation":
        return Rotation(_renormalize(self.m @ other.m))

    def apply(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64)
        return pts @ self.m.T


@dataclass(frozen=True)
class Pose:
    """Rigid transform: x_out = rotation @ x + translation."""

    rotation: Rotation
    translation: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.translation, dtype=np.float64).reshape(3).copy()
        t.flags.writeable = False
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "Pose":
        return Pose(Rotation.identity(), np.zeros(3))

    @staticmethod
    def from_rt(r: np.ndarray, t) -> "Pose":
        return Pose(Rotation(r), t)

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation.m
        m[:3, 3] = self.translation
        return m

    def inverse(self) -> "Pose":
        rinv = self.rotation.m.T
        return Pose(Rotation(rinv), -(rinv @ self.translation))

    def compose(self, other: "Pose") -> "Pose":
        return Pose(
            self.rotation.compose(other.rotation),
            self.rotation.m @ other.translation + self.translation,
        )

    def apply(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64)
        return pts @ self.rotation.m.T + self.translation


@dataclass(frozen=True)
class Tangent:
    """se(3) element: axis-angle rotation part plus translation part."""

    rot_part: np.ndarray
    trans_part: np.ndarray

    def __post_init__(self):
        for name in ("rot_part", "trans_part"):
            v = np.asarray(getattr(self, name), dtype=np.float64).reshape(3).copy()
            v.flags.writeable = False
            object.__setattr__(self, name, v)

    @staticmethod
    def zero() -> "Tangent":
        return Tangent(np.zeros(3), np.zeros(3))

    def scaled(self, a: float) -> "Tangent":
        return Tangent(self.rot_part * a, self.trans_part * a)


@dataclass(frozen=True)
class GravityDir:
    """Unit-length gravity direction in the world frame."""

    g_w: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, -1.0]))

    def __post_init__(self):
        g = _as_unit(self.g_w, "gravity").copy()
        g.flags.writeable = False
        object.__setattr__(self, "g_w", g)


def _skew(w: np.ndarray) -> np.ndarray:
    return np.array(
        [
            [0.0, -w[2], w[1]],
            [w[2], 0.0, -w[0]],
            [-w[1], w[0], 0.0],
        ]
    )


def _renormalize(m: np.ndarray) -> np.ndarray:
    """Gram-Schmidt the columns; keeps long compose chains orthonormal."""
    c0 = m[:, 0] / np.linalg.norm(m[:, 0])
    c1 = m[:, 1] - c0 * (c0 @ m[:, 1])
    c1 /= np.linalg.norm(c1)
    c2 = np.cross(c0, c1)
    return np.column_stack([c0, c1, c2])


def so3_exp(w) -> np.ndarray:
    """Rodrigues formula; Taylor branch below SMALL_ANGLE."""
    w = np.asarray(w, dtype=np.float64).reshape(3)
    theta = np.linalg.norm(w)
    k = _skew(w)
    if theta < SMALL_ANGLE:
        a = 1.0 - theta**2 / 6.0
        b = 0.5 - theta**2 / 24.0
    else:
        a = np.sin(theta) / theta
        b = (1.0 - np.cos(theta)) / theta**2
    return np.eye(3) + a * k + b * (k @ k)


def so3_log(r: np.ndarray) -> np.ndarray:
    """Axis-angle of a rotation matrix; raises NearPiRotation at the branch cut."""
    trace = np.clip((np.trace(r) - 1.0) / 2.0, -1.0, 1.0)
    theta = np.arccos(trace)
    if theta > np.pi - PI_MARGIN:
        raise NearPiRotation(f"rotation angle {theta!r} within {PI_MARGIN} of pi")
    if theta < SMALL_ANGLE:
        scale = 0.5 + theta**2 / 12.0
    else:
        scale = theta / (2.0 * np.sin(theta))
    return scale * np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])


def _left_jacobian(w: np.ndarray) -> np.ndarray:
    theta = np.linalg.norm(w)
    k = _skew(w)
    if theta < SMALL_ANGLE:
        a = 0.5 - theta**2 / 24.0
        b = 1.0 / 6.0 - theta**2 / 120.0
    else:
        a = (1.0 - np.cos(theta)) / theta**2
        b = (theta - np.sin(theta)) / theta**3
    return np.eye(3) + a * k + b * (k @ k)


def _left_jacobian_inv(w: np.ndarray) -> np.ndarray:
    theta = np.linalg.norm(w)
    k = _skew(w)
    if theta < SMALL_ANGLE:
        c = 1.0 / 12.0 + theta**2 / 720.0
    else:
        c = (1.0 - 0.5 * theta * np.sin(theta) / (1.0 - np.cos(theta))) / theta**2
    return np.eye(3) - 0.5 * k + c * (k @ k)


def se3_exp(xi: Tangent) -> Pose:
    """Exponential map of se(3): Rodrigues rotation, left-Jacobian translation."""
    r = so3_exp(xi.rot_part)
    t = _left_jacobian(xi.rot_part) @ xi.trans_part
    return Pose(Rotation(r), t)


def se3_log(pose: Pose) -> Tangent:
    """Inverse of se3_exp. Raises NearPiRotation near the pi branch cut."""
    w = so3_log(pose.rotation.m)
    v = _left_jacobian_inv(w) @ pose.translation
    return Tangent(w, v)


def pose_boxminus(ta: Pose, tb: Pose) -> Tangent:
    """Manifold difference log(ta^-1 . tb)."""
    return se3_log(ta.inverse().compose(tb))


def gravity_align(r_wc: Rotation, g: GravityDir) -> Rotation:
    """Rotation whose columns are [g, n(d x g), n(d)], d = camera z-axis
    with its gravity component removed.

    Raises DegenerateGravityAlignment when the camera looks straight along
    gravity (||d|| below tolerance); callers fall back to the most recent
    non-degenerate frame.
    """
    g_w = g.g_w
    r_z = r_wc.m[:, 2]
    d_z = r_z - g_w * (g_w @ r_z)
    n = np.linalg.norm(d_z)
    if n <= 1e-6:
        raise DegenerateGravityAlignment(
            "camera z-axis is parallel to gravity; no horizontal direction"
        )
    d_hat = d_z / n
    c1 = np.cross(d_hat, g_w)
    c1 /= np.linalg.norm(c1)
    return Rotation(np.column_stack([g_w, c1, d_hat]))


def mat_to_quat(r: np.ndarray) -> np.ndarray:
    """Unit quaternion (w, x, y, z) with w >= 0, from a rotation matrix."""
    m = np.asarray(r, dtype=np.float64)
    t = np.trace(m)
    if t > 0:
        s = np.sqrt(t + 1.0) * 2.0
        q = np.array(
            [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
        )
    else:
        i = int(np.argmax([m[0, 0], m[1, 1], m[2, 2]]))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = np.sqrt(m[i, i] - m[j, j] - m[k, k] + 1.0) * 2.0
        q = np.empty(4)
        q[0] = (m[k, j] - m[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (m[j, i] + m[i, j]) / s
        q[1 + k] = (m[k, i] + m[i, k]) / s
    q /= np.linalg.norm(q)
    if q[0] < 0:
        q = -q
    return q


def quat_to_mat(q) -> np.ndarray:
    """Rotation matrix from a unit quaternion (w, x, y, z)."""
    w, x, y, z = np.asarray(q, dtype=np.float64).reshape(4) / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def wrap_angle(a):
    """Wrap to [-pi, pi)."""
    return np.mod(np.asarray(a) + np.pi, 2.0 * np.pi) - np.pi
