"""Procedural ground-truth worlds: scenes, an exact ray-cast reference renderer,
deterministic view sampling, and a noisy surface-point initializer.

Scenes are desk-style arrangements of axis-aligned textured boxes resting on a
floor patch in front of a back wall, all flat-shaded (texture lookup only, no
lighting) so a constant-color splat model can in principle fit them exactly.
World axes follow the camera convention: +y is down, so the floor sits at
positive y and cameras hover at negative y looking at the scene center.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .camera import Camera, Intrinsics, ccm_from_points, look_at_pose, pixel_center_grid, unproject
from .splat import GaussianCloud

__all__ = [
    "TEXTURES",
    "texture_color",
    "Box",
    "Rect",
    "Scene",
    "ViewSpec",
    "COMPLEXITY_COUNTS",
    "generate_scene",
    "gt_render",
    "sample_views",
    "init_points",
    "load_scene",
    "save_scene",
]

_EPS = 1e-9

# Texture palette, referenced by id in scene files (see README):
#   0..5   solid colors
#   6..11  3-D checker of two colors, cell edge in scene units
#   12..17 axis-aligned gradient between two colors across the scene box
_SOLIDS = [
    (0.85, 0.3, 0.25),
    (0.25, 0.55, 0.85),
    (0.35, 0.75, 0.35),
    (0.9, 0.75, 0.3),
    (0.6, 0.4, 0.75),
    (0.8, 0.8, 0.78),
]
_PAIRS = [
    ((0.9, 0.9, 0.85), (0.2, 0.2, 0.25)),
    ((0.8, 0.35, 0.3), (0.95, 0.85, 0.75)),
    ((0.25, 0.45, 0.7), (0.85, 0.9, 0.95)),
    ((0.3, 0.6, 0.4), (0.9, 0.9, 0.6)),
    ((0.55, 0.35, 0.25), (0.9, 0.8, 0.65)),
    ((0.4, 0.4, 0.45), (0.75, 0.75, 0.8)),
]


@dataclass(frozen=True)
class _Texture:
    kind: str  # solid | checker | gradient
    color_a: tuple[float, float, float]
    color_b: tuple[float, float, float]
    param: float  # checker cell size, or gradient axis index


TEXTURES: tuple[_Texture, ...] = tuple(
    [_Texture("solid", c, c, 0.0) for c in _SOLIDS]
    + [_Texture("checker", a, b, 0.22 if i % 2 == 0 else 0.35) for i, (a, b) in enumerate(_PAIRS)]
    + [_Texture("gradient", a, b, float(i % 3)) for i, (a, b) in enumerate(_PAIRS)]
)


def texture_color(
    points: np.ndarray, texture_id: int, lo: np.ndarray, hi: np.ndarray
) -> np.ndarray:
    """Flat-shaded texture lookup at world points, shape (..., 3)."""
    tex = TEXTURES[texture_id]
    points = np.asarray(points, dtype=np.float64)
    ca = np.array(tex.color_a)
    cb = np.array(tex.color_b)
    if tex.kind == "solid":
        return np.broadcast_to(ca, points.shape).copy()
    if tex.kind == "checker":
        cells = np.floor(points / tex.param).sum(axis=-1).astype(np.int64)
        par = (cells % 2 == 0)[..., None]
        return np.where(par, ca, cb)
    axis = int(tex.param)
    t = np.clip(
        (points[..., axis] - lo[axis]) / max(hi[axis] - lo[axis], 1e-12), 0.0, 1.0
    )[..., None]
    return (1.0 - t) * ca + t * cb


@dataclass(frozen=True)
class Box:
    """Axis-aligned box: center, full edge lengths, texture id."""

    center: tuple[float, float, float]
    size: tuple[float, float, float]
    texture: int

    @property
    def lo(self) -> np.ndarray:
        return np.array(self.center) - 0.5 * np.array(self.size)

    @property
    def hi(self) -> np.ndarray:
        return np.array(self.center) + 0.5 * np.array(self.size)


@dataclass(frozen=True)
class Rect:
    """Axis-aligned rectangle: normal axis, plane offset, in-plane center/size."""

    axis: int  # 0, 1, or 2 (the constant coordinate)
    offset: float
    center: tuple[float, float]  # centers along the two remaining axes, ascending
    size: tuple[float, float]
    texture: int

    @property
    def lo(self) -> np.ndarray:
        a1, a2 = [a for a in range(3) if a != self.axis]
        out = np.empty(3)
        out[self.axis] = self.offset
        out[a1] = self.center[0] - 0.5 * self.size[0]
        out[a2] = self.center[1] - 0.5 * self.size[1]
        return out

    @property
    def hi(self) -> np.ndarray:
        a1, a2 = [a for a in range(3) if a != self.axis]
        out = np.empty(3)
        out[self.axis] = self.offset
        out[a1] = self.center[0] + 0.5 * self.size[0]
        out[a2] = self.center[1] + 0.5 * self.size[1]
        return out


@dataclass
class Scene:
    primitives: list
    background: np.ndarray
    lo: np.ndarray = field(init=False)
    hi: np.ndarray = field(init=False)

    def __post_init__(self):
        if not self.primitives:
            raise ValueError("a scene needs at least one primitive")
        self.background = np.asarray(self.background, dtype=np.float64).reshape(3)
        los = np.stack([p.lo for p in self.primitives])
        his = np.stack([p.hi for p in self.primitives])
        self.lo = los.min(axis=0)
        self.hi = his.max(axis=0)

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    @property
    def extent(self) -> float:
        return float(np.linalg.norm(self.hi - self.lo))


@dataclass(frozen=True)
class ViewSpec:
    """Camera layout request: mode, count, shared intrinsics, look-at target."""

    mode: str  # arc | ring | grid
    count: int
    intrinsics: Intrinsics
    look_at: tuple[float, float, float] | None = None  # None = scene center
    radius: float | None = None  # None = derived from scene extent
    span_deg: float = 90.0

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("view count must be >= 1")
        if self.mode not in ("arc", "ring", "grid"):
            raise ValueError(f"unknown layout mode {self.mode!r}")


COMPLEXITY_COUNTS = {"low": 3, "medium": 8, "high": 20}


def generate_scene(seed: int, complexity: str = "medium") -> Scene:
    """Deterministic desk scene: floor, back wall, and seeded boxes on the floor."""
    if complexity not in COMPLEXITY_COUNTS:
        raise ValueError(f"complexity must be one of {sorted(COMPLEXITY_COUNTS)}")
    count = COMPLEXITY_COUNTS[complexity]
    rng = np.random.default_rng(seed)
    background = rng.uniform(0.25, 0.75, 3)
    floor_y, wall_z = 0.8, 1.2
    prims: list = [
        Rect(1, floor_y, (0.0, -0.3), (5.0, 5.4), int(rng.integers(6, 12))),
        Rect(2, wall_z, (0.0, -0.6), (5.0, 2.8), int(rng.integers(0, 18))),
    ]
    for _ in range(count - 2):
        size = rng.uniform(0.15, 0.5, 3)
        cx = rng.uniform(-0.7, 0.7)
        cz = rng.uniform(-0.4, 0.9)
        cy = floor_y - 0.5 * size[1]
        prims.append(Box((cx, cy, cz), tuple(size), int(rng.integers(0, 18))))
    return Scene(prims, background)


def _intersect(prim, origin: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    """Smallest positive hit parameter per ray (inf where missed)."""
    with np.errstate(divide="ignore", invalid="ignore"):
        if isinstance(prim, Box):
            t1 = (prim.lo - origin) / dirs
            t2 = (prim.hi - origin) / dirs
            tn = np.nanmax(np.minimum(t1, t2), axis=-1)
            tf = np.nanmin(np.maximum(t1, t2), axis=-1)
            hit = (tf >= tn) & (tf > _EPS)
            t = np.where(tn > _EPS, tn, tf)
            return np.where(hit, t, np.inf)
        t = (prim.offset - origin[prim.axis]) / dirs[:, prim.axis]
        p = origin + t[:, None] * dirs
        a1, a2 = [a for a in range(3) if a != prim.axis]
        hit = (
            (t > _EPS)
            & (np.abs(p[:, a1] - prim.center[0]) <= 0.5 * prim.size[0] + _EPS)
            & (np.abs(p[:, a2] - prim.center[1]) <= 0.5 * prim.size[1] + _EPS)
        )
        return np.where(hit, t, np.inf)


def gt_render(scene: Scene, cam: Camera) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Exact reference render: (color, depth, ccm) with one primary ray per pixel.

    Background pixels carry the scene background color, zero depth, and an
    all-zero (invalid) coordinate entry. Depth is camera-frame z, so
    unprojecting a hit pixel at its depth reproduces the hit point.
    """
    k = cam.intrinsics
    uv = pixel_center_grid(k.width, k.height).reshape(-1, 2)
    d_cam = np.stack(
        [(uv[:, 0] - k.cx) / k.fx, (uv[:, 1] - k.cy) / k.fy, np.ones(len(uv))], axis=-1
    )
    dirs = d_cam @ cam.pose.rotation.T
    origin = cam.center

    best_t = np.full(len(uv), np.inf)
    best_i = np.full(len(uv), -1, dtype=np.int64)
    for i, prim in enumerate(scene.primitives):
        t = _intersect(prim, origin, dirs)
        closer = t < best_t
        best_t[closer] = t[closer]
        best_i[closer] = i

    hit = best_i >= 0
    color = np.tile(scene.background, (len(uv), 1))
    depth = np.zeros(len(uv))
    ccm = np.zeros((len(uv), 3))
    if hit.any():
        pts = origin + best_t[hit, None] * dirs[hit]
        depth[hit] = (pts - origin) @ cam.pose.rotation[:, 2]
        ccm[hit] = ccm_from_points(pts, scene.lo, scene.hi)
        for i, prim in enumerate(scene.primitives):
            sel = hit & (best_i == i)
            if sel.any():
                p = origin + best_t[sel, None] * dirs[sel]
                color[sel] = texture_color(p, prim.texture, scene.lo, scene.hi)
    shape = (k.height, k.width)
    return color.reshape(*shape, 3), depth.reshape(shape), ccm.reshape(*shape, 3)


def sample_views(scene: Scene, spec: ViewSpec, seed: int = 0) -> list[Camera]:
    """Deterministic look-at cameras; arc mode spaces them on a circular arc.

    The seed jitters arc/ring angles slightly (a few percent of the spacing) so
    distinct seeds give distinct but comparable view sets.
    """
    rng = np.random.default_rng(seed)
    target = (
        np.array(spec.look_at)
        if spec.look_at is not None
        else np.array([0.0, 0.35, 0.6])  # on the desk surface, near the wall
    )
    radius = spec.radius if spec.radius is not None else 2.4
    height = 0.45 * radius  # hover above the scene (negative y is up)
    cams = []
    if spec.mode in ("arc", "ring"):
        span = np.deg2rad(spec.span_deg if spec.mode == "arc" else 360.0)
        if spec.count == 1:
            angles = np.array([0.0])
        elif spec.mode == "ring":
            angles = np.linspace(0.0, span, spec.count, endpoint=False)
        else:
            angles = np.linspace(-span / 2.0, span / 2.0, spec.count)
        if spec.count > 1:  # a lone camera sits exactly at the arc midpoint
            spacing = span / spec.count
            angles = angles + rng.uniform(-0.04, 0.04, spec.count) * spacing
        for th in angles:
            eye = target + np.array(
                [radius * np.sin(th), -height, -radius * np.cos(th)]
            )
            cams.append(Camera(spec.intrinsics, look_at_pose(eye, target)))
        return cams
    # grid: positions on a fronto-parallel lattice at the arc's standoff distance
    side = int(np.ceil(np.sqrt(spec.count)))
    offs = np.linspace(-0.4 * radius, 0.4 * radius, side) if side > 1 else np.array([0.0])
    for gy in range(side):
        for gx in range(side):
            eye = target + np.array([offs[gx], -height + 0.3 * offs[gy], -radius])
            cams.append(Camera(spec.intrinsics, look_at_pose(eye, target)))
    return cams[: spec.count]


def init_points(
    scene: Scene, cams: list[Camera], noise_std: float, seed: int = 0, stride: int = 4
) -> GaussianCloud:
    """Noisy surface-point cloud: subsampled unprojections of reference depth.

    Every ``stride``-th pixel with a surface hit contributes one Gaussian at
    the (noise-perturbed) hit point with the reference color, opacity 0.5, and
    isotropic scale twice the sample spacing at that depth.
    """
    if noise_std < 0:
        raise ValueError("noise_std must be >= 0")
    rng = np.random.default_rng(seed)
    mus, scales, rgbs = [], [], []
    for cam in cams:
        color, depth, _ = gt_render(scene, cam)
        k = cam.intrinsics
        ys = np.arange(0, k.height, stride)
        xs = np.arange(0, k.width, stride)
        gy, gx = np.meshgrid(ys, xs, indexing="ij")
        gy, gx = gy.ravel(), gx.ravel()
        sel = depth[gy, gx] > 0
        gy, gx = gy[sel], gx[sel]
        z = depth[gy, gx]
        uv = np.stack([gx + 0.5, gy + 0.5], axis=-1)
        pts = unproject(cam, uv, z)
        if noise_std > 0:
            pts = pts + rng.normal(0.0, noise_std, pts.shape)
        spacing = stride * z * 2.0 / (k.fx + k.fy)
        mus.append(pts)
        scales.append(np.repeat(2.0 * spacing[:, None], 3, axis=1))
        rgbs.append(color[gy, gx])
    mu = np.concatenate(mus)
    n = len(mu)
    rot = np.tile(np.array([1.0, 0.0, 0.0, 0.0]), (n, 1))
    return GaussianCloud(mu, np.concatenate(scales), rot, np.full(n, 0.5), np.concatenate(rgbs))


def save_scene(path: Path | str, scene: Scene) -> None:
    """Plain-text scene file; see README for the texture id table."""
    lines = [
        "# box cx cy cz sx sy sz texture-id",
        "# plane axis offset c1 c2 s1 s2 texture-id",
        "background " + " ".join(repr(float(v)) for v in scene.background),
    ]
    for p in scene.primitives:
        if isinstance(p, Box):
            vals = [*p.center, *p.size]
            lines.append("box " + " ".join(repr(float(v)) for v in vals) + f" {p.texture}")
        else:
            vals = [p.offset, *p.center, *p.size]
            lines.append(
                f"plane {p.axis} " + " ".join(repr(float(v)) for v in vals) + f" {p.texture}"
            )
    Path(path).write_text("\n".join(lines) + "\n")


def load_scene(path: Path | str) -> Scene:
    background = np.array([0.5, 0.5, 0.5])
    prims: list = []
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        if tok[0] == "background":
            background = np.array([float(v) for v in tok[1:4]])
        elif tok[0] == "box":
            v = [float(x) for x in tok[1:7]]
            prims.append(Box(tuple(v[:3]), tuple(v[3:6]), int(tok[7])))
        elif tok[0] == "plane":
            axis = int(tok[1])
            v = [float(x) for x in tok[2:7]]
            prims.append(Rect(axis, v[0], (v[1], v[2]), (v[3], v[4]), int(tok[7])))
        else:
            raise ValueError(f"scene file {path}: unknown record {tok[0]!r}")
    return Scene(prims, background)
