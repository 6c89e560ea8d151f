"""Pinhole cameras, ray embeddings, view warping, and conditioning-signal assembly.

Conventions (shared by every module and every test oracle):
  * camera frame: x right, y down, z forward; depth is the camera-frame z;
  * pixel (i, j) covers the continuous square [i, i+1) x [j, j+1), so its
    center sits at (i + 0.5, j + 0.5);
  * a pose stores the world-from-camera rotation and the camera center, i.e.
    ``x_world = R @ x_cam + t``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

__all__ = [
    "Intrinsics",
    "Pose",
    "Camera",
    "GeoGrid",
    "scale_intrinsics",
    "plucker_rays",
    "unproject",
    "project",
    "pixel_center_grid",
    "warp_view",
    "warp_merge",
    "central_region",
    "area_resample",
    "augment_condition",
    "ccm_from_points",
    "ccm_grid",
    "look_at_pose",
    "load_cameras",
    "save_cameras",
]

_ORTHO_TOL = 1e-9


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole intrinsics in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError(f"focal lengths must be positive, got ({self.fx}, {self.fy})")
        if self.width < 1 or self.height < 1:
            raise ValueError(f"image size must be >= 1, got {self.width}x{self.height}")

    @property
    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )


@dataclass(frozen=True)
class Pose:
    """Rigid world-from-camera transform: rotation (3x3) and camera center (3,)."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=np.float64)
        tr = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if rot.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {rot.shape}")
        if not np.allclose(rot.T @ rot, np.eye(3), atol=1e-8):
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(rot) - 1.0) > 1e-8:
            raise ValueError("rotation determinant is not +1")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", tr)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))


@dataclass(frozen=True)
class Camera:
    intrinsics: Intrinsics
    pose: Pose

    @property
    def center(self) -> np.ndarray:
        return self.pose.translation


@dataclass
class GeoGrid:
    """Per-pixel 3-vector payload (RGB or normalized world coordinates) with validity.

    Invalid pixels carry a zero payload.
    """

    payload: np.ndarray  # (H, W, 3)
    valid: np.ndarray  # (H, W) bool

    def __post_init__(self):
        self.payload = np.asarray(self.payload, dtype=np.float64)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.payload.ndim != 3 or self.payload.shape[2] != 3:
            raise ValueError(f"payload must be (H, W, 3), got {self.payload.shape}")
        if self.valid.shape != self.payload.shape[:2]:
            raise ValueError("validity mask does not match payload")
        self.payload = np.where(self.valid[..., None], self.payload, 0.0)

    @property
    def shape(self) -> tuple[int, int]:
        return self.payload.shape[:2]

    @classmethod
    def full(cls, payload: np.ndarray) -> "GeoGrid":
        payload = np.asarray(payload, dtype=np.float64)
        return cls(payload, np.ones(payload.shape[:2], dtype=bool))


def scale_intrinsics(k: Intrinsics, ratio: float) -> Intrinsics:
    """Widen the field of view by scaling focal lengths; resolution is unchanged."""
    if not 0.0 < ratio <= 1.0:
        raise ValueError(f"focal scaling ratio must be in (0, 1], got {ratio}")
    return replace(k, fx=k.fx * ratio, fy=k.fy * ratio)


def pixel_center_grid(width: int, height: int) -> np.ndarray:
    """Continuous coordinates of all pixel centers, shape (H, W, 2) as (u, v)."""
    u = np.arange(width, dtype=np.float64) + 0.5
    v = np.arange(height, dtype=np.float64) + 0.5
    uu, vv = np.meshgrid(u, v)
    return np.stack([uu, vv], axis=-1)


def plucker_rays(cam: Camera) -> np.ndarray:
    """Per-pixel 6D ray embedding (unit direction, moment), shape (H, W, 6).

    Direction d = normalize(R @ K^-1 @ [u+0.5, v+0.5, 1]); moment m = o x d with
    o the camera center, so that d.m == 0 and |d| == 1 per pixel.
    """
    k = cam.intrinsics
    uv = pixel_center_grid(k.width, k.height)
    dirs_cam = np.empty((k.height, k.width, 3))
    dirs_cam[..., 0] = (uv[..., 0] - k.cx) / k.fx
    dirs_cam[..., 1] = (uv[..., 1] - k.cy) / k.fy
    dirs_cam[..., 2] = 1.0
    dirs = dirs_cam @ cam.pose.rotation.T
    dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
    moments = np.cross(np.broadcast_to(cam.center, dirs.shape), dirs)
    return np.concatenate([dirs, moments], axis=-1)


def unproject(cam: Camera, pixels: np.ndarray, depth: np.ndarray) -> np.ndarray:
    """Lift continuous pixel coordinates at camera-frame depth to world points.

    ``pixels`` is (..., 2) as (u, v); ``depth`` broadcasts against the leading
    shape and must be strictly positive.
    """
    pixels = np.asarray(pixels, dtype=np.float64)
    depth = np.asarray(depth, dtype=np.float64)
    if np.any(depth <= 0):
        raise ValueError("unproject requires depth > 0")
    k = cam.intrinsics
    x = (pixels[..., 0] - k.cx) / k.fx * depth
    y = (pixels[..., 1] - k.cy) / k.fy * depth
    pts_cam = np.stack([x, y, depth * np.ones_like(x)], axis=-1)
    return pts_cam @ cam.pose.rotation.T + cam.center


def project(cam: Camera, points: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Project world points; returns (uv (..., 2), depth (...,), in_front (...,)).

    Points at or behind the camera plane are flagged, not raised; their uv is
    left at 0 and must not be consumed.
    """
    points = np.asarray(points, dtype=np.float64)
    k = cam.intrinsics
    pts_cam = (points - cam.center) @ cam.pose.rotation
    z = pts_cam[..., 2]
    in_front = z > 0
    safe_z = np.where(in_front, z, 1.0)
    u = k.fx * pts_cam[..., 0] / safe_z + k.cx
    v = k.fy * pts_cam[..., 1] / safe_z + k.cy
    uv = np.stack([np.where(in_front, u, 0.0), np.where(in_front, v, 0.0)], axis=-1)
    return uv, z, in_front


def _splat_scatter(
    values: np.ndarray,
    uv: np.ndarray,
    z: np.ndarray,
    width: int,
    height: int,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Forward-splat point samples into a grid, nearest depth winning per pixel."""
    ix = np.floor(uv[:, 0]).astype(np.int64)
    iy = np.floor(uv[:, 1]).astype(np.int64)
    keep = (ix >= 0) & (ix < width) & (iy >= 0) & (iy < height)
    ix, iy, z, values = ix[keep], iy[keep], z[keep], values[keep]
    out = np.zeros((height, width, values.shape[-1]))
    out_valid = np.zeros((height, width), dtype=bool)
    out_depth = np.zeros((height, width))
    if ix.size == 0:
        return out, out_valid, out_depth
    lin = iy * width + ix
    # Stable lexsort: pixel index major, depth minor, so the nearest sample per
    # pixel comes first and ties resolve by source order deterministically.
    order = np.lexsort((z, lin))
    lin_s = lin[order]
    first = np.ones(lin_s.size, dtype=bool)
    first[1:] = lin_s[1:] != lin_s[:-1]
    sel = order[first]
    out[iy[sel], ix[sel]] = values[sel]
    out_depth[iy[sel], ix[sel]] = z[sel]
    out_valid[iy[sel], ix[sel]] = True
    return out, out_valid, out_depth


def warp_view(
    payload: GeoGrid, src: Camera, src_depth: np.ndarray, tgt: Camera
) -> GeoGrid:
    """Forward-warp a per-pixel payload from ``src`` into ``tgt``.

    Every valid source pixel with positive depth is unprojected and splatted
    onto the target grid; a z-buffer keeps the nearest sample per target pixel
    and unhit target pixels come back invalid. Payload values are moved, never
    rescaled.
    """
    k = src.intrinsics
    src_depth = np.asarray(src_depth, dtype=np.float64)
    if payload.shape != (k.height, k.width) or src_depth.shape != (k.height, k.width):
        raise ValueError(
            f"payload/depth shape {payload.shape}/{src_depth.shape} does not match "
            f"source camera {k.height}x{k.width}"
        )
    mask = payload.valid & (src_depth > 0)
    uv = pixel_center_grid(k.width, k.height)[mask]
    pts = unproject(src, uv, src_depth[mask])
    tuv, tz, front = project(tgt, pts)
    vals = payload.payload[mask][front]
    out, out_valid, _ = _splat_scatter(
        vals, tuv[front], tz[front], tgt.intrinsics.width, tgt.intrinsics.height
    )
    return GeoGrid(out, out_valid)


def warp_merge(
    payloads: list[GeoGrid],
    srcs: list[Camera],
    src_depths: list[np.ndarray],
    tgt: Camera,
) -> GeoGrid:
    """Warp several source views into ``tgt`` with one shared z-buffer."""
    all_vals, all_uv, all_z = [], [], []
    for payload, src, depth in zip(payloads, srcs, src_depths):
        k = src.intrinsics
        depth = np.asarray(depth, dtype=np.float64)
        mask = payload.valid & (depth > 0)
        uv = pixel_center_grid(k.width, k.height)[mask]
        if uv.size == 0:
            continue
        pts = unproject(src, uv, depth[mask])
        tuv, tz, front = project(tgt, pts)
        all_vals.append(payload.payload[mask][front])
        all_uv.append(tuv[front])
        all_z.append(tz[front])
    if not all_vals:
        h, w = tgt.intrinsics.height, tgt.intrinsics.width
        return GeoGrid(np.zeros((h, w, 3)), np.zeros((h, w), dtype=bool))
    out, out_valid, _ = _splat_scatter(
        np.concatenate(all_vals),
        np.concatenate(all_uv),
        np.concatenate(all_z),
        tgt.intrinsics.width,
        tgt.intrinsics.height,
    )
    return GeoGrid(out, out_valid)


def central_region(width: int, height: int, ratio: float) -> tuple[int, int, int, int]:
    """Centered region holding a ``ratio``-downscaled image: (x0, y0, w, h).

    Sizes are round(ratio * dim) rounded down to the nearest even integer so
    the region centers without half-pixel offsets on even-sized frames.
    """
    rw = int(round(ratio * width))
    rh = int(round(ratio * height))
    rw -= rw % 2
    rh -= rh % 2
    if rw < 2 or rh < 2 or rw > width or rh > height:
        raise ValueError(f"central region {rw}x{rh} out of bounds for {width}x{height}")
    return (width - rw) // 2, (height - rh) // 2, rw, rh


def _overlap_matrix(n_out: int, n_in: int) -> np.ndarray:
    """Exact area-average resampling weights from ``n_in`` to ``n_out`` cells."""
    if n_out == n_in:
        return np.eye(n_in)
    scale = n_in / n_out
    m = np.zeros((n_out, n_in))
    for i in range(n_out):
        lo, hi = i * scale, (i + 1) * scale
        j0, j1 = int(np.floor(lo)), int(np.ceil(hi))
        for j in range(j0, min(j1, n_in)):
            m[i, j] = min(hi, j + 1) - max(lo, j)
    return m / scale


def area_resample(img: np.ndarray, out_hw: tuple[int, int]) -> np.ndarray:
    """Area-averaging resample of an (H, W[, C]) image to ``out_hw``."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[:2]
    oh, ow = out_hw
    if (oh, ow) == (h, w):
        return img.copy()
    my = _overlap_matrix(oh, h)
    mx = _overlap_matrix(ow, w)
    return np.einsum("ij,jk...,lk->il...", my, img, mx)


def _resample_geogrid(grid: GeoGrid, out_hw: tuple[int, int]) -> GeoGrid:
    """Validity-weighted area resample; cells with < 50% valid input turn invalid."""
    wsum = area_resample(grid.valid.astype(np.float64), out_hw)
    psum = area_resample(grid.payload, out_hw)
    valid = wsum >= 0.5
    payload = np.where(valid[..., None], psum / np.maximum(wsum, 1e-12)[..., None], 0.0)
    return GeoGrid(payload, valid)


def augment_condition(warped: GeoGrid, original: GeoGrid, ratio: float) -> GeoGrid:
    """Overwrite the center of a warped wide-FOV grid with the downscaled original.

    The original is area-averaged down by ``ratio`` and pasted bit-exactly over
    the central region (see :func:`central_region`); the periphery keeps the
    warped payload untouched.
    """
    if warped.shape != original.shape:
        raise ValueError(f"warped {warped.shape} and original {original.shape} differ")
    h, w = warped.shape
    x0, y0, rw, rh = central_region(w, h, ratio)
    small = _resample_geogrid(original, (rh, rw))
    out = GeoGrid(warped.payload.copy(), warped.valid.copy())
    out.payload[y0 : y0 + rh, x0 : x0 + rw] = small.payload
    out.valid[y0 : y0 + rh, x0 : x0 + rw] = small.valid
    return out


def ccm_from_points(points: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Normalize world points into the unit cube given a scene bounding box."""
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    return np.clip((points - lo) / np.maximum(hi - lo, 1e-12), 0.0, 1.0)


def ccm_grid(
    cam: Camera,
    depth: np.ndarray,
    valid: np.ndarray,
    lo: np.ndarray,
    hi: np.ndarray,
) -> GeoGrid:
    """Canonical coordinate map of a view from its per-pixel depth."""
    k = cam.intrinsics
    depth = np.asarray(depth, dtype=np.float64)
    valid = np.asarray(valid, dtype=bool) & (depth > 0)
    payload = np.zeros((k.height, k.width, 3))
    if valid.any():
        uv = pixel_center_grid(k.width, k.height)[valid]
        pts = unproject(cam, uv, depth[valid])
        payload[valid] = ccm_from_points(pts, lo, hi)
    return GeoGrid(payload, valid)


def look_at_pose(eye: np.ndarray, target: np.ndarray) -> Pose:
    """World-from-camera pose with z toward ``target`` and y as world-down."""
    eye = np.asarray(eye, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - eye
    n = np.linalg.norm(fwd)
    if n < 1e-12:
        raise ValueError("look-at target coincides with the eye position")
    fwd = fwd / n
    down = np.array([0.0, 1.0, 0.0])
    if abs(fwd @ down) > 1.0 - 1e-9:  # looking straight up/down
        down = np.array([0.0, 0.0, 1.0])
    right = np.cross(down, fwd)
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    return Pose(np.stack([right, down, fwd], axis=1), eye)


def _strip_comments(path: Path) -> list[list[str]]:
    rows = []
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            rows.append(line.split())
    return rows


def load_cameras(path: Path | str) -> list[Camera]:
    """Read cameras from a plain-text file.

    One camera per block: a ``fx fy cx cy width height`` line followed by three
    rows of the 3x4 [R|t] world-from-camera matrix. '#' starts a comment.
    """
    rows = _strip_comments(Path(path))
    if len(rows) % 4 != 0:
        raise ValueError(f"camera file {path}: expected blocks of 4 lines, got {len(rows)}")
    cams = []
    for b in range(0, len(rows), 4):
        fx, fy, cx, cy, w, h = (float(v) for v in rows[b])
        rt = np.array([[float(v) for v in rows[b + 1 + r]] for r in range(3)])
        if rt.shape != (3, 4):
            raise ValueError(f"camera file {path}: [R|t] rows must have 4 entries")
        cams.append(
            Camera(
                Intrinsics(fx, fy, cx, cy, int(w), int(h)),
                Pose(rt[:, :3], rt[:, 3]),
            )
        )
    return cams


def save_cameras(path: Path | str, cams: list[Camera]) -> None:
    lines = ["# fx fy cx cy width height / 3 rows of [R|t] (world-from-camera)"]
    for cam in cams:
        k = cam.intrinsics
        lines.append(f"{k.fx!r} {k.fy!r} {k.cx!r} {k.cy!r} {k.width} {k.height}")
        rt = np.hstack([cam.pose.rotation, cam.pose.translation[:, None]])
        for r in range(3):
            lines.append(" ".join(repr(v) for v in rt[r]))
    Path(path).write_text("\n".join(lines) + "\n")
