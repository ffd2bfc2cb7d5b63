"""Deterministic software point-splat rasterizer with depth buffer.

Pinhole projection in the OpenCV camera frame: a world point X maps to
camera coordinates x = R^T (X - t), projects to pixel
(u, v) = (fx * x/z + cx, fy * y/z + cy) with fx = fy derived from the
vertical field of view and cx = W/2, cy = H/2. A vertex survives iff its
depth exceeds the near plane and its center pixel lies inside the image;
surviving vertices splat a disk of ``splat_radius`` pixels around the
continuous projection, nearest depth winning per pixel (ties break toward
the lower vertex index). Untouched pixels are void: black, infinite depth.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .se3 import Pose
from .scene import Scene

DEFAULT_SPLAT_RADIUS = 2.0
DEFAULT_NEAR = 1e-6
VOID_FRACTION_LIMIT = 0.7
UNIFORM_STD_LIMIT = 10.0
VISIBILITY_REL_TOL = 0.01
TOPDOWN_MARGIN = 1.05


@dataclass(frozen=True)
class CameraIntrinsics:
    """Image size in pixels and vertical field of view in degrees."""

    width: int = 512
    height: int = 512
    v_fov_deg: float = 60.0

    def __post_init__(self):
        if self.width < 16 or self.height < 16:
            raise ValueError("image must be at least 16x16")
        if not (10.0 <= self.v_fov_deg <= 170.0):
            raise ValueError("vertical fov must be within [10, 170] degrees")

    @property
    def focal_px(self) -> float:
        return (self.height / 2.0) / math.tan(math.radians(self.v_fov_deg) / 2.0)


@dataclass(frozen=True, eq=False)
class RenderedView:
    """RGB pixels (H, W, 3) uint8, per-pixel depth in meters (inf where void),
    and a boolean void mask."""

    pixels: np.ndarray
    depth: np.ndarray
    void_mask: np.ndarray

    @property
    def void_fraction(self) -> float:
        return float(self.void_mask.mean())


def project_points(scene: Scene, pose: Pose, intrinsics: CameraIntrinsics, near: float = DEFAULT_NEAR):
    """Project all scene vertices; returns (u, v, z, in_frustum mask).

    in_frustum means depth > near and the nearest pixel to (u, v) is inside
    the image, i.e. the vertex itself would be drawn.
    """
    rel = scene.positions - pose.position[None, :]
    cam = rel @ pose.rotation  # row-wise R^T (X - t)
    z = cam[:, 2]
    f = intrinsics.focal_px
    with np.errstate(divide="ignore", invalid="ignore"):
        u = f * cam[:, 0] / z + intrinsics.width / 2.0
        v = f * cam[:, 1] / z + intrinsics.height / 2.0
    ui = np.floor(u + 0.5)
    vi = np.floor(v + 0.5)
    ok = (
        (z > near)
        & (ui >= 0)
        & (ui < intrinsics.width)
        & (vi >= 0)
        & (vi < intrinsics.height)
    )
    return u, v, z, ok


def render_view(
    scene: Scene,
    pose: Pose,
    intrinsics: CameraIntrinsics = CameraIntrinsics(),
    splat_radius: float = DEFAULT_SPLAT_RADIUS,
    near: float = DEFAULT_NEAR,
) -> RenderedView:
    w, h = intrinsics.width, intrinsics.height
    u, v, z, ok = project_points(scene, pose, intrinsics, near)
    idx = np.nonzero(ok)[0]

    pixels = np.zeros((h, w, 3), dtype=np.uint8)
    depth = np.full((h, w), np.inf)
    void = np.ones((h, w), dtype=bool)
    if idx.size == 0:
        return RenderedView(pixels, depth, void)

    u, v, z = u[idx], v[idx], z[idx]
    r = int(math.ceil(splat_radius))
    r2 = splat_radius * splat_radius
    ui = np.floor(u + 0.5).astype(np.int64)
    vi = np.floor(v + 0.5).astype(np.int64)

    pix_acc, z_acc, pt_acc = [], [], []
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            col = ui + dx
            row = vi + dy
            cover = (
                (col >= 0)
                & (col < w)
                & (row >= 0)
                & (row < h)
                & ((col - u) ** 2 + (row - v) ** 2 <= r2)
            )
            if not cover.any():
                continue
            pix_acc.append(row[cover] * w + col[cover])
            z_acc.append(z[cover])
            pt_acc.append(idx[cover])
    if not pix_acc:
        return RenderedView(pixels, depth, void)

    pix = np.concatenate(pix_acc)
    zs = np.concatenate(z_acc)
    pts = np.concatenate(pt_acc)
    # winner per pixel: smallest depth, ties to the smallest vertex index
    order = np.lexsort((pts, zs, pix))
    pix, zs, pts = pix[order], zs[order], pts[order]
    first = np.ones(len(pix), dtype=bool)
    first[1:] = pix[1:] != pix[:-1]
    pix, zs, pts = pix[first], zs[first], pts[first]

    rows, cols = pix // w, pix % w
    pixels[rows, cols] = scene.colors[pts]
    depth[rows, cols] = zs
    void[rows, cols] = False
    return RenderedView(pixels, depth, void)


def visible_vertices(
    scene: Scene,
    pose: Pose,
    intrinsics: CameraIntrinsics = CameraIntrinsics(),
    splat_radius: float = DEFAULT_SPLAT_RADIUS,
    near: float = DEFAULT_NEAR,
    rel_tol: float = VISIBILITY_REL_TOL,
    view: RenderedView | None = None,
) -> np.ndarray:
    """Indices of vertices whose depth matches the depth buffer at their pixel
    within a relative tolerance; sorted, unique."""
    if view is None:
        view = render_view(scene, pose, intrinsics, splat_radius, near)
    u, v, z, ok = project_points(scene, pose, intrinsics, near)
    idx = np.nonzero(ok)[0]
    if idx.size == 0:
        return np.empty(0, dtype=np.int64)
    cols = np.floor(u[idx] + 0.5).astype(np.int64)
    rows = np.floor(v[idx] + 0.5).astype(np.int64)
    buf = view.depth[rows, cols]
    keep = np.abs(z[idx] - buf) <= rel_tol * buf
    return np.sort(idx[keep])


def topdown_pose(scene: Scene, intrinsics: CameraIntrinsics = CameraIntrinsics(),
                 margin: float = TOPDOWN_MARGIN) -> Pose:
    """Camera over the bounding-box centroid looking straight down (heading 0),
    high enough that the full horizontal half-diagonal fits the vertical fov."""
    lo, hi = scene.bounds
    center = (lo + hi) / 2.0
    half_diag = math.hypot((hi[0] - lo[0]) / 2.0, (hi[1] - lo[1]) / 2.0)
    height = half_diag / math.tan(math.radians(intrinsics.v_fov_deg) / 2.0) * margin
    if height <= 0:
        height = 1.0
    position = np.array([center[0], center[1], hi[2] + height])
    # straight down, world +Y up the screen: columns X=(1,0,0), Y=(0,-1,0), Z=(0,0,-1)
    rotation = np.array([[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]])
    return Pose(position, rotation, euler_hint=(180.0, 0.0, 0.0))


def quality_check(view: RenderedView) -> tuple[bool, str | None]:
    """(passed, reason); rejects mostly-void frames first, then near-uniform ones."""
    if view.void_fraction > VOID_FRACTION_LIMIT:
        return False, "void"
    gray = view.pixels.astype(np.float64).mean(axis=2)
    if float(gray.std()) < UNIFORM_STD_LIMIT:
        return False, "uniform"
    return True, None


def pixel_diff(a: RenderedView, b: RenderedView) -> float:
    """Mean absolute RGB difference, normalized to [0, 1]."""
    if a.pixels.shape != b.pixels.shape:
        raise ValueError(f"dimension mismatch: {a.pixels.shape} vs {b.pixels.shape}")
    return float(
        np.abs(a.pixels.astype(np.float64) - b.pixels.astype(np.float64)).mean() / 255.0
    )


def view_to_png(view: RenderedView) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(view.pixels, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def png_to_pixels(data: bytes) -> np.ndarray:
    with Image.open(io.BytesIO(data)) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def save_png(view: RenderedView, path) -> None:
    Image.fromarray(view.pixels, mode="RGB").save(str(path), format="PNG")
