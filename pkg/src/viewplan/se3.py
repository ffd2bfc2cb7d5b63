"""Camera pose representation, Euler conversion, grid snapping, and view-distance metrics.

Conventions used throughout the package:
  - Poses are camera-to-world: ``position`` is the camera center in world
    coordinates (meters), ``rotation`` columns are the camera axes expressed
    in the world frame.
  - Camera frame follows OpenCV: +X screen-right, +Y screen-down, +Z forward.
    The world frame is Z-up.
  - Euler angles [rx, ry, rz] are degrees in (-180, 180] and compose as
    R = Rz(rz) @ Ry(ry) @ Rx(rx), i.e. x-rotation innermost. For an upright
    indoor camera this puts pitch-from-zenith in rx (horizontal view at
    rx = -90), roll in ry, and the compass heading in rz, matching the
    6-DoF vectors exchanged on the wire.
  - A pose built from Euler angles remembers its generating triple, so
    angle-space state survives matrix round trips inside the process. This
    is what keeps rotation-action sequences exactly invertible even when the
    triple sits outside the canonical decomposition range (|ry| > 90).
  - Angles stay in degrees everywhere; radians appear only inside trig calls.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

ROT_TOL = 1e-9
GIMBAL_LOCK_MARGIN_DEG = 1e-4


def normalize_angle(deg: float) -> float:
    """Wrap an angle in degrees to (-180, 180]."""
    return deg - 360.0 * math.ceil((deg - 180.0) / 360.0)


def rot_x(deg: float) -> np.ndarray:
    a = math.radians(deg)
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(deg: float) -> np.ndarray:
    a = math.radians(deg)
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(deg: float) -> np.ndarray:
    a = math.radians(deg)
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _check_rotation(r: np.ndarray) -> None:
    if r.shape != (3, 3):
        raise ValueError(f"rotation must be 3x3, got {r.shape}")
    if not np.all(np.isfinite(r)):
        raise ValueError("rotation has non-finite entries")
    err = np.abs(r @ r.T - np.eye(3)).max()
    if err > ROT_TOL:
        raise ValueError(f"rotation not orthonormal (|R R^T - I| = {err:.3g})")
    det = float(np.linalg.det(r))
    if abs(det - 1.0) > ROT_TOL:
        raise ValueError(f"rotation determinant {det} != +1")


@dataclass(frozen=True, eq=False)
class Pose:
    """A 6-DoF camera-to-world pose: world position (m) and rotation matrix.

    ``euler_hint`` is the Euler triple the rotation was composed from, when
    known; it is carried along by operations that do not change orientation
    and consulted by euler_decompose before falling back to the canonical
    matrix decomposition.
    """

    position: np.ndarray
    rotation: np.ndarray
    euler_hint: tuple | None = field(default=None, repr=False)

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=float).reshape(3)
        rot = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        if not np.all(np.isfinite(pos)):
            raise ValueError("position has non-finite components")
        _check_rotation(rot)
        pos.setflags(write=False)
        rot.setflags(write=False)
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "rotation", rot)

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.zeros(3), np.eye(3), euler_hint=(0.0, 0.0, 0.0))

    def forward(self) -> np.ndarray:
        """Camera viewing direction (+Z column) in world coordinates."""
        return self.rotation[:, 2].copy()


@dataclass(frozen=True)
class EulerAngles:
    """Euler angles [rx, ry, rz] in degrees, each wrapped to (-180, 180].

    ``gimbal_lock`` marks canonical decompositions taken at |ry| ~ 90 deg,
    where only a combination of rx and rz is determined; rz is set to 0 and
    the combined angle folded into rx (see euler_decompose).
    """

    rx: float
    ry: float
    rz: float
    gimbal_lock: bool = field(default=False, compare=False)

    def __post_init__(self):
        for name in ("rx", "ry", "rz"):
            v = float(getattr(self, name))
            if not math.isfinite(v):
                raise ValueError(f"{name} is not finite")
            object.__setattr__(self, name, normalize_angle(v))

    def as_tuple(self) -> tuple:
        return (self.rx, self.ry, self.rz)


@dataclass(frozen=True)
class StepSizes:
    """Per-action step sizes: translation in meters, rotation in degrees."""

    s_t: float = 0.5
    s_r: float = 30.0

    def __post_init__(self):
        if not (self.s_t > 0 and self.s_r > 0):
            raise ValueError("step sizes must be strictly positive")


@dataclass(frozen=True)
class ViewDistance:
    """Translation (m), geodesic rotation (deg), and step-normalized distance."""

    d_pos: float
    d_rot: float
    d_unified: float


@dataclass(frozen=True)
class SuccessThresholds:
    """Dimensionless multipliers applied to the step sizes in the success test."""

    beta_t: float = 1.0
    beta_r: float = 1.0

    def __post_init__(self):
        if not (self.beta_t > 0 and self.beta_r > 0):
            raise ValueError("threshold multipliers must be > 0")


def rotation_angle_deg(r1: np.ndarray, r2: np.ndarray) -> float:
    """Geodesic angle between two rotation matrices, in degrees.

    Bit-equal matrices short-circuit to 0: the arccos-of-trace form has a
    ~1e-6 deg resolution floor (trace of R^T R rounds just below 3), which
    would otherwise violate d(R, R) = 0.
    """
    if r1 is r2 or np.array_equal(r1, r2):
        return 0.0
    tr = float(np.trace(r1.T @ r2))
    c = min(1.0, max(-1.0, (tr - 1.0) / 2.0))
    return math.degrees(math.acos(c))


def view_distance(a: Pose, b: Pose, steps: StepSizes = StepSizes()) -> ViewDistance:
    """Distance between two poses: Euclidean position gap, geodesic rotation gap,
    and their step-normalized Euclidean combination."""
    d_pos = float(np.linalg.norm(a.position - b.position))
    d_rot = rotation_angle_deg(a.rotation, b.rotation)
    d_unified = math.hypot(d_pos / steps.s_t, d_rot / steps.s_r)
    return ViewDistance(d_pos, d_rot, d_unified)


def is_success(
    est: Pose,
    target: Pose,
    steps: StepSizes = StepSizes(),
    thr: SuccessThresholds = SuccessThresholds(),
) -> bool:
    """True iff both distance components are inside (inclusive) their thresholds."""
    d = view_distance(est, target, steps)
    return d.d_pos <= thr.beta_t * steps.s_t and d.d_rot <= thr.beta_r * steps.s_r


def euler_compose(e: EulerAngles, position=None) -> Pose:
    """Build a pose from Euler angles (R = Rz @ Ry @ Rx) and an optional position."""
    if position is None:
        position = np.zeros(3)
    r = rot_z(e.rz) @ rot_y(e.ry) @ rot_x(e.rx)
    return Pose(position, r, euler_hint=e.as_tuple())


def euler_decompose(p: Pose) -> EulerAngles:
    """Return the pose's Euler angles.

    Poses created from angles report their generating triple. Foreign
    rotation matrices are decomposed canonically: for R = Rz @ Ry @ Rx,
        R[2,0] = -sin(ry)
        R[2,1] = cos(ry) sin(rx),  R[2,2] = cos(ry) cos(rx)
        R[1,0] = sin(rz) cos(ry),  R[0,0] = cos(rz) cos(ry)
    so ry lands in [-90, 90]. At |ry| ~ 90 only rx -+ rz is determined; rz is
    set to 0, the combined angle folds into rx, and gimbal_lock is flagged.
    """
    if p.euler_hint is not None:
        return EulerAngles(*p.euler_hint)
    r = p.rotation
    sy = min(1.0, max(-1.0, -float(r[2, 0])))
    ry = math.degrees(math.asin(sy))
    if abs(ry) >= 90.0 - GIMBAL_LOCK_MARGIN_DEG:
        if sy > 0:  # R[0,1] = sin(rx - rz), R[0,2] = cos(rx - rz)
            rx = math.degrees(math.atan2(float(r[0, 1]), float(r[0, 2])))
        else:  # R[0,1] = -sin(rx + rz), R[0,2] = -cos(rx + rz)
            rx = math.degrees(math.atan2(-float(r[0, 1]), -float(r[0, 2])))
        return EulerAngles(rx, ry, 0.0, gimbal_lock=True)
    rx = math.degrees(math.atan2(float(r[2, 1]), float(r[2, 2])))
    rz = math.degrees(math.atan2(float(r[1, 0]), float(r[0, 0])))
    return EulerAngles(rx, ry, rz)


def snap_angle(deg: float, step: float) -> float:
    """Round to the nearest multiple of ``step``; exact halves round toward +inf."""
    k = math.floor(deg / step + 0.5)
    return normalize_angle(k * step)


def snap_orientation(p: Pose, steps: StepSizes = StepSizes()) -> Pose:
    """Snap each Euler angle to the nearest multiple of s_r.

    Position is untouched. Idempotent: a snapped pose re-snaps to itself
    bit-exactly because angles are recomposed from integer multiples.
    """
    e = euler_decompose(p)
    snapped = EulerAngles(
        snap_angle(e.rx, steps.s_r),
        snap_angle(e.ry, steps.s_r),
        snap_angle(e.rz, steps.s_r),
    )
    return euler_compose(snapped, p.position)


def pose_to_vec6(p: Pose) -> list:
    """Serialize to [tx, ty, tz, rx, ry, rz] (meters, degrees)."""
    e = euler_decompose(p)
    t = p.position
    return [float(t[0]), float(t[1]), float(t[2]), e.rx, e.ry, e.rz]


def pose_from_vec6(v) -> Pose:
    if len(v) != 6:
        raise ValueError(f"pose vector must have 6 entries, got {len(v)}")
    vals = [float(x) for x in v]
    if not all(math.isfinite(x) for x in vals):
        raise ValueError("pose vector has non-finite entries")
    return euler_compose(EulerAngles(vals[3], vals[4], vals[5]), np.array(vals[:3]))


def pose_to_matrix(p: Pose) -> list:
    """Serialize to a 4x4 row-major camera-to-world matrix (nested lists)."""
    m = np.eye(4)
    m[:3, :3] = p.rotation
    m[:3, 3] = p.position
    return [[float(x) for x in row] for row in m]


def pose_from_matrix(m) -> Pose:
    arr = np.asarray(m, dtype=float)
    if arr.shape != (4, 4):
        raise ValueError(f"expected 4x4 matrix, got {arr.shape}")
    if np.abs(arr[3] - np.array([0.0, 0.0, 0.0, 1.0])).max() > 1e-9:
        raise ValueError("last row must be [0, 0, 0, 1]")
    return Pose(arr[:3, 3], arr[:3, :3])


def poses_equal(a: Pose, b: Pose, tol: float = 1e-12) -> bool:
    return (
        float(np.abs(a.position - b.position).max()) <= tol
        and float(np.abs(a.rotation - b.rotation).max()) <= tol
    )
