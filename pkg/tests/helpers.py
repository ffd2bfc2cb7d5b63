"""Shared oracle utilities for the test suite."""

import math
import random

import numpy as np

from viewplan.se3 import EulerAngles, Pose, euler_compose


def stable_rotation_gap_deg(r1: np.ndarray, r2: np.ndarray) -> float:
    """Geodesic angle between rotations via the Frobenius norm.

    ||R1 - R2||_F = 2*sqrt(2)*|sin(theta/2)|, which is well conditioned near
    zero, unlike the arccos-of-trace form whose resolution floor is ~1e-6 deg.
    """
    fro = float(np.linalg.norm(r1 - r2))
    s = min(1.0, fro / (2.0 * math.sqrt(2.0)))
    return math.degrees(2.0 * math.asin(s))


def pose_gap(a: Pose, b: Pose) -> tuple[float, float]:
    """(position gap in meters, rotation gap in degrees), both stable near 0."""
    return (
        float(np.linalg.norm(a.position - b.position)),
        stable_rotation_gap_deg(a.rotation, b.rotation),
    )


def random_rotation(rng: random.Random) -> np.ndarray:
    """Uniform-ish SO(3) sample via QR of a Gaussian matrix."""
    m = np.array([[rng.gauss(0, 1) for _ in range(3)] for _ in range(3)])
    q, r = np.linalg.qr(m)
    q = q @ np.diag(np.sign(np.diag(r)))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def random_pose(rng: random.Random, span: float = 5.0) -> Pose:
    return Pose(
        np.array([rng.uniform(-span, span) for _ in range(3)]), random_rotation(rng)
    )


def random_grid_pose(rng: random.Random, step_m: float = 0.5, step_deg: float = 30.0) -> Pose:
    """A pose on the discrete grid: step_m positions, step_deg Euler angles."""
    pos = np.array([rng.randrange(-8, 9) * step_m for _ in range(3)])
    angles = EulerAngles(*(rng.randrange(-5, 7) * step_deg for _ in range(3)))
    return euler_compose(angles, pos)


def oracle_render(scene, pose, intrinsics, splat_radius=2.0, near=1e-6):
    """Brute-force O(pixels x points) reference rasterizer.

    Gather formulation: every pixel scans every vertex for covering splats and
    takes the nearest depth (ties to the lowest vertex index), independent of
    the production scatter/sort implementation.
    """
    import math as _math

    w, h = intrinsics.width, intrinsics.height
    rel = scene.positions - pose.position[None, :]
    cam = rel @ pose.rotation
    z = cam[:, 2]
    f = intrinsics.focal_px
    with np.errstate(divide="ignore", invalid="ignore"):
        u = f * cam[:, 0] / z + w / 2.0
        v = f * cam[:, 1] / z + h / 2.0
    ui = np.floor(u + 0.5)
    vi = np.floor(v + 0.5)
    ok = (z > near) & (ui >= 0) & (ui < w) & (vi >= 0) & (vi < h)

    cols = np.arange(w, dtype=float)
    rows = np.arange(h, dtype=float)
    du = cols[None, :, None] - u[None, None, :]  # (1, W, N)
    dv = rows[:, None, None] - v[None, None, :]  # (H, 1, N)
    cover = (du * du + dv * dv <= splat_radius * splat_radius) & ok[None, None, :]
    depth_all = np.where(cover, z[None, None, :], np.inf)
    winner = depth_all.argmin(axis=2)
    depth = depth_all.min(axis=2)
    void = ~cover.any(axis=2)

    pixels = scene.colors[winner].copy()
    pixels[void] = 0
    depth = np.where(void, np.inf, depth)
    return pixels, depth, void


def oracle_visible(scene, pose, intrinsics, depth_buffer, rel_tol=0.01, near=1e-6):
    """Reference visibility: vertex depth within rel_tol of the buffer value."""
    w, h = intrinsics.width, intrinsics.height
    rel = scene.positions - pose.position[None, :]
    cam = rel @ pose.rotation
    z = cam[:, 2]
    f = intrinsics.focal_px
    with np.errstate(divide="ignore", invalid="ignore"):
        u = f * cam[:, 0] / z + w / 2.0
        v = f * cam[:, 1] / z + h / 2.0
    out = []
    for i in range(len(scene)):
        if not z[i] > near:
            continue
        c = _math_floor_half(u[i])
        r = _math_floor_half(v[i])
        if not (0 <= c < w and 0 <= r < h):
            continue
        buf = depth_buffer[r, c]
        if abs(z[i] - buf) <= rel_tol * buf:
            out.append(i)
    return np.array(sorted(out), dtype=np.int64)


def _math_floor_half(x):
    import math as _math

    return int(_math.floor(x + 0.5))
