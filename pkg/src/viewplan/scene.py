"""Colored point-cloud scenes: PLY ingestion/writing and procedural room generation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PLY_TYPE_MAP = {
    "float": "<f4",
    "float32": "<f4",
    "double": "<f8",
    "float64": "<f8",
    "uchar": "u1",
    "uint8": "u1",
    "char": "i1",
    "int8": "i1",
    "short": "<i2",
    "int16": "<i2",
    "ushort": "<u2",
    "uint16": "<u2",
    "int": "<i4",
    "int32": "<i4",
    "uint": "<u4",
    "uint32": "<u4",
}


class PlyError(ValueError):
    """PLY parsing failure; ``reason`` is one of the documented categories."""

    def __init__(self, reason: str, detail: str = ""):
        self.reason = reason
        super().__init__(f"{reason}: {detail}" if detail else reason)


@dataclass(frozen=True, eq=False)
class Scene:
    """A colored point cloud with an identifier.

    positions: (N, 3) float64 meters; colors: (N, 3) uint8.
    """

    scene_id: str
    positions: np.ndarray
    colors: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        col = np.asarray(self.colors, dtype=np.uint8).reshape(-1, 3)
        if pos.shape[0] < 1:
            raise ValueError("scene needs at least one vertex")
        if col.shape[0] != pos.shape[0]:
            raise ValueError("positions and colors must have the same length")
        if not np.all(np.isfinite(pos)):
            raise ValueError("vertex coordinates must be finite")
        pos.setflags(write=False)
        col.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "colors", col)

    def __len__(self):
        return self.positions.shape[0]

    @property
    def bounds(self) -> tuple:
        """Axis-aligned bounding box: (min xyz, max xyz)."""
        return self.positions.min(axis=0), self.positions.max(axis=0)


def _parse_header(fh):
    magic = fh.readline().strip()
    if magic != b"ply":
        raise PlyError("malformed header", "missing 'ply' magic")
    fmt = None
    elements = []  # [(name, count, [(prop_name, prop_type), ...])]
    while True:
        raw = fh.readline()
        if not raw:
            raise PlyError("malformed header", "no end_header")
        line = raw.decode("latin-1").strip()
        if not line or line.startswith("comment") or line.startswith("obj_info"):
            continue
        parts = line.split()
        if parts[0] == "format":
            if len(parts) < 2 or parts[1] not in ("ascii", "binary_little_endian"):
                raise PlyError("malformed header", f"unsupported format {line!r}")
            fmt = parts[1]
        elif parts[0] == "element":
            if len(parts) != 3:
                raise PlyError("malformed header", line)
            try:
                elements.append((parts[1], int(parts[2]), []))
            except ValueError:
                raise PlyError("malformed header", f"bad element count in {line!r}")
        elif parts[0] == "property":
            if not elements:
                raise PlyError("malformed header", "property before element")
            if parts[1] == "list":
                elements[-1][2].append((parts[-1], ("list", parts[2], parts[3])))
            else:
                if len(parts) != 3:
                    raise PlyError("malformed header", line)
                elements[-1][2].append((parts[2], parts[1]))
        elif parts[0] == "end_header":
            break
        else:
            raise PlyError("malformed header", f"unexpected line {line!r}")
    if fmt is None:
        raise PlyError("malformed header", "no format line")
    if not elements or elements[0][0] != "vertex":
        raise PlyError("malformed header", "first element must be vertex")
    return fmt, elements


def load_scene(path, scene_id: str | None = None) -> Scene:
    """Load a Scene from an ASCII or binary-little-endian PLY file.

    Requires x, y, z and red, green, blue vertex properties; vertex order is
    preserved. Raises PlyError with reason 'malformed header',
    'missing color properties', or 'truncated payload'.
    """
    path = str(path)
    with open(path, "rb") as fh:
        fmt, elements = _parse_header(fh)
        name, count, props = elements[0]
        prop_names = [p[0] for p in props]
        for needed in ("x", "y", "z"):
            if needed not in prop_names:
                raise PlyError("malformed header", f"vertex missing property {needed!r}")
        for needed in ("red", "green", "blue"):
            if needed not in prop_names:
                raise PlyError("missing color properties", f"no {needed!r} property")
        if any(isinstance(t, tuple) for _, t in props):
            raise PlyError("malformed header", "list property on vertex element")

        if fmt == "binary_little_endian":
            dtype = np.dtype([(n, PLY_TYPE_MAP.get(t, "")) for n, t in props])
            if any(PLY_TYPE_MAP.get(t) is None for _, t in props):
                raise PlyError("malformed header", "unknown property type")
            payload = fh.read(count * dtype.itemsize)
            if len(payload) < count * dtype.itemsize:
                raise PlyError(
                    "truncated payload",
                    f"expected {count * dtype.itemsize} bytes, got {len(payload)}",
                )
            rec = np.frombuffer(payload, dtype=dtype, count=count)
        else:
            rows = []
            for i in range(count):
                line = fh.readline()
                if not line:
                    raise PlyError("truncated payload", f"vertex {i} of {count} missing")
                fields = line.split()
                if len(fields) < len(props):
                    raise PlyError("truncated payload", f"vertex {i} has too few columns")
                rows.append(fields)
            rec = {n: np.array([float(r[j]) for r in rows]) for j, (n, _) in enumerate(props)}

        positions = np.stack(
            [np.asarray(rec["x"], float), np.asarray(rec["y"], float), np.asarray(rec["z"], float)],
            axis=1,
        )
        colors = np.stack(
            [
                np.clip(np.asarray(rec["red"], float), 0, 255).astype(np.uint8),
                np.clip(np.asarray(rec["green"], float), 0, 255).astype(np.uint8),
                np.clip(np.asarray(rec["blue"], float), 0, 255).astype(np.uint8),
            ],
            axis=1,
        )
    if scene_id is None:
        import os

        scene_id = os.path.splitext(os.path.basename(path))[0]
    return Scene(scene_id, positions, colors)


def save_scene(scene: Scene, path, binary: bool = True) -> None:
    """Write a Scene as PLY (float32 positions, uchar colors)."""
    header = [
        "ply",
        "format binary_little_endian 1.0" if binary else "format ascii 1.0",
        f"element vertex {len(scene)}",
        "property float x",
        "property float y",
        "property float z",
        "property uchar red",
        "property uchar green",
        "property uchar blue",
        "end_header",
    ]
    with open(str(path), "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            rec = np.empty(
                len(scene),
                dtype=[(n, "<f4") for n in "xyz"] + [(n, "u1") for n in ("red", "green", "blue")],
            )
            pos32 = scene.positions.astype("<f4")
            for j, n in enumerate("xyz"):
                rec[n] = pos32[:, j]
            for j, n in enumerate(("red", "green", "blue")):
                rec[n] = scene.colors[:, j]
            fh.write(rec.tobytes())
        else:
            pos32 = scene.positions.astype(np.float32)
            for p, c in zip(pos32, scene.colors):
                fh.write(f"{p[0]:.6f} {p[1]:.6f} {p[2]:.6f} {c[0]} {c[1]} {c[2]}\n".encode("ascii"))


@dataclass(frozen=True)
class SceneSpec:
    """Procedural room description: extents in meters, box furniture, exact point count."""

    room_size: tuple = (6.0, 5.0, 3.0)
    n_boxes: int = 4
    n_points: int = 8000
    wall_fraction: float = 0.6  # share of points on floor+walls when boxes exist

    def __post_init__(self):
        if any(s <= 0 for s in self.room_size):
            raise ValueError("room extents must be positive")
        if self.n_boxes < 0 or self.n_points < 1:
            raise ValueError("n_boxes >= 0 and n_points >= 1 required")


_WALL_COLORS = np.array(
    [
        [188, 178, 164],  # floor
        [206, 199, 186],  # wall -y
        [196, 204, 196],  # wall +y
        [210, 196, 180],  # wall -x
        [186, 196, 206],  # wall +x
    ]
)

_BOX_COLORS = np.array(
    [
        [196, 84, 62],
        [84, 148, 196],
        [108, 176, 92],
        [208, 166, 70],
        [150, 100, 180],
        [70, 180, 170],
        [200, 120, 150],
        [120, 120, 200],
    ]
)


def _sample_rect(rng, count, origin, u_vec, v_vec):
    """Uniform samples on a rectangle origin + s*u_vec + t*v_vec, s,t in [0,1]."""
    s = rng.random(count)
    t = rng.random(count)
    return origin[None, :] + s[:, None] * u_vec[None, :] + t[:, None] * v_vec[None, :]


def _allocate(total, weights):
    """Deterministic largest-remainder allocation of ``total`` into parts."""
    weights = np.asarray(weights, dtype=float)
    weights = weights / weights.sum()
    raw = weights * total
    counts = np.floor(raw).astype(int)
    rem = total - counts.sum()
    order = np.argsort(-(raw - counts), kind="stable")
    for i in range(rem):
        counts[order[i]] += 1
    return counts


def procedural_scene(seed: int, spec: SceneSpec = SceneSpec()) -> Scene:
    """Deterministically generate a room shell with colored box furniture.

    The room spans [-sx/2, sx/2] x [-sy/2, sy/2] x [0, sz] with a floor and
    four walls (no ceiling, so top-down views see the interior). Boxes sit on
    the floor, fully inside the room. Total vertex count equals spec.n_points.
    """
    rng = np.random.default_rng(seed)
    sx, sy, sz = spec.room_size
    hx, hy = sx / 2.0, sy / 2.0

    # wall/floor rectangles: (origin, u, v)
    shell = [
        (np.array([-hx, -hy, 0.0]), np.array([sx, 0, 0]), np.array([0, sy, 0])),  # floor
        (np.array([-hx, -hy, 0.0]), np.array([sx, 0, 0]), np.array([0, 0, sz])),  # -y wall
        (np.array([-hx, hy, 0.0]), np.array([sx, 0, 0]), np.array([0, 0, sz])),  # +y wall
        (np.array([-hx, -hy, 0.0]), np.array([0, sy, 0]), np.array([0, 0, sz])),  # -x wall
        (np.array([hx, -hy, 0.0]), np.array([0, sy, 0]), np.array([0, 0, sz])),  # +x wall
    ]

    boxes = []
    for _ in range(spec.n_boxes):
        w = rng.uniform(0.4, 1.2)
        d = rng.uniform(0.4, 1.2)
        h = rng.uniform(0.4, min(1.6, sz - 0.2))
        cx = rng.uniform(-hx + w / 2 + 0.2, hx - w / 2 - 0.2)
        cy = rng.uniform(-hy + d / 2 + 0.2, hy - d / 2 - 0.2)
        boxes.append((cx, cy, w, d, h))

    if spec.n_boxes > 0:
        n_shell = max(1, int(round(spec.n_points * spec.wall_fraction)))
        n_box_total = spec.n_points - n_shell
    else:
        n_shell, n_box_total = spec.n_points, 0

    shell_areas = [float(np.linalg.norm(np.cross(u, v))) for _, u, v in shell]
    shell_counts = _allocate(n_shell, shell_areas)
    parts_pos, parts_col = [], []
    for (origin, u, v), count, base in zip(shell, shell_counts, _WALL_COLORS):
        if count == 0:
            continue
        pts = _sample_rect(rng, count, origin, u.astype(float), v.astype(float))
        noise = rng.integers(-12, 13, size=(count, 3))
        parts_pos.append(pts)
        parts_col.append(np.clip(base[None, :] + noise, 0, 255).astype(np.uint8))

    if n_box_total > 0 and boxes:
        box_counts = _allocate(n_box_total, [w * d + 2 * (w + d) * h for (_, _, w, d, h) in boxes])
        for (cx, cy, w, d, h), count, base in zip(
            boxes, box_counts, _BOX_COLORS[np.arange(len(boxes)) % len(_BOX_COLORS)]
        ):
            if count == 0:
                continue
            x0, y0 = cx - w / 2, cy - d / 2
            faces = [
                (np.array([x0, y0, h]), np.array([w, 0, 0]), np.array([0, d, 0])),  # top
                (np.array([x0, y0, 0.0]), np.array([w, 0, 0]), np.array([0, 0, h])),  # -y
                (np.array([x0, y0 + d, 0.0]), np.array([w, 0, 0]), np.array([0, 0, h])),  # +y
                (np.array([x0, y0, 0.0]), np.array([0, d, 0]), np.array([0, 0, h])),  # -x
                (np.array([x0 + w, y0, 0.0]), np.array([0, d, 0]), np.array([0, 0, h])),  # +x
            ]
            areas = [float(np.linalg.norm(np.cross(u, v))) for _, u, v in faces]
            for (origin, u, v), fc in zip(faces, _allocate(count, areas)):
                if fc == 0:
                    continue
                pts = _sample_rect(rng, fc, origin, u.astype(float), v.astype(float))
                noise = rng.integers(-10, 11, size=(fc, 3))
                parts_pos.append(pts)
                parts_col.append(np.clip(base[None, :] + noise, 0, 255).astype(np.uint8))

    positions = np.concatenate(parts_pos, axis=0)
    colors = np.concatenate(parts_col, axis=0)
    assert positions.shape[0] == spec.n_points
    return Scene(f"proc-{seed}", positions, colors)
