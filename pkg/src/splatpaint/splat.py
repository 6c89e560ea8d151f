"""3D Gaussian scene representation and a CPU rasterizer with analytic gradients.

Rendering composites globally depth-sorted Gaussians front to back: each
primitive projects to a 2D Gaussian through the local affine (EWA) Jacobian of
the pinhole projection, and per pixel the color, accumulated opacity, and
opacity-weighted expected depth are blended. Colors are one RGB triple per
Gaussian (no view dependence); rotations are represented but carry no gradient.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _raster
from .camera import Camera

__all__ = [
    "Gaussian",
    "GaussianCloud",
    "RenderOutput",
    "CloudGrad",
    "quat_to_rotation",
    "build_covariance",
    "render",
    "render_backward",
    "load_cloud",
    "save_cloud",
]


@dataclass
class Gaussian:
    """A single anisotropic Gaussian primitive.

    ``mu`` is the world-space center, ``scale`` the per-axis standard
    deviations (> 0), ``rot`` a unit quaternion (w, x, y, z), ``alpha`` the
    opacity in [0, 1] and ``rgb`` the constant color in [0, 1]^3.
    """

    mu: np.ndarray
    scale: np.ndarray
    rot: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    alpha: float = 1.0
    rgb: np.ndarray = field(default_factory=lambda: np.ones(3))

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64).reshape(3)
        self.scale = np.asarray(self.scale, dtype=np.float64).reshape(3)
        self.rot = np.asarray(self.rot, dtype=np.float64).reshape(4)
        self.rgb = np.asarray(self.rgb, dtype=np.float64).reshape(3)
        if np.any(self.scale <= 0):
            raise ValueError(f"scale must be positive, got {self.scale}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        if np.any(self.rgb < 0) or np.any(self.rgb > 1):
            raise ValueError(f"rgb must be in [0, 1], got {self.rgb}")


class GaussianCloud:
    """A set of Gaussians stored as stacked arrays for vectorized access."""

    def __init__(self, mu, scale, rot, alpha, rgb):
        self.mu = np.atleast_2d(np.asarray(mu, dtype=np.float64))
        self.scale = np.atleast_2d(np.asarray(scale, dtype=np.float64))
        self.rot = np.atleast_2d(np.asarray(rot, dtype=np.float64))
        self.alpha = np.atleast_1d(np.asarray(alpha, dtype=np.float64))
        self.rgb = np.atleast_2d(np.asarray(rgb, dtype=np.float64))
        n = len(self.alpha)
        if not (
            self.mu.shape == (n, 3)
            and self.scale.shape == (n, 3)
            and self.rot.shape == (n, 4)
            and self.rgb.shape == (n, 3)
        ):
            raise ValueError("inconsistent cloud array shapes")

    @classmethod
    def empty(cls) -> "GaussianCloud":
        return cls(
            np.zeros((0, 3)), np.zeros((0, 3)), np.zeros((0, 4)), np.zeros(0), np.zeros((0, 3))
        )

    @classmethod
    def from_gaussians(cls, gaussians: list[Gaussian]) -> "GaussianCloud":
        if not gaussians:
            return cls.empty()
        return cls(
            np.stack([g.mu for g in gaussians]),
            np.stack([g.scale for g in gaussians]),
            np.stack([g.rot for g in gaussians]),
            np.array([g.alpha for g in gaussians]),
            np.stack([g.rgb for g in gaussians]),
        )

    def __len__(self) -> int:
        return len(self.alpha)

    def __getitem__(self, i: int) -> Gaussian:
        return Gaussian(self.mu[i], self.scale[i], self.rot[i], float(self.alpha[i]), self.rgb[i])

    def copy(self) -> "GaussianCloud":
        return GaussianCloud(
            self.mu.copy(), self.scale.copy(), self.rot.copy(), self.alpha.copy(), self.rgb.copy()
        )

    def permuted(self, perm: np.ndarray) -> "GaussianCloud":
        return GaussianCloud(
            self.mu[perm], self.scale[perm], self.rot[perm], self.alpha[perm], self.rgb[perm]
        )

    @classmethod
    def concatenate(cls, clouds: list["GaussianCloud"]) -> "GaussianCloud":
        return cls(
            np.concatenate([c.mu for c in clouds]),
            np.concatenate([c.scale for c in clouds]),
            np.concatenate([c.rot for c in clouds]),
            np.concatenate([c.alpha for c in clouds]),
            np.concatenate([c.rgb for c in clouds]),
        )


@dataclass
class RenderOutput:
    """Rendered maps: color (H, W, 3), opacity (H, W), expected depth (H, W).

    Color is premultiplied compositing against black, so each channel is
    bounded by the opacity. Depth is opacity-weighted expected depth and zero
    where nothing was hit.
    """

    color: np.ndarray
    opacity: np.ndarray
    depth: np.ndarray


@dataclass
class CloudGrad:
    """Per-Gaussian partials of a scalar image loss (no rotation gradients)."""

    d_mu: np.ndarray
    d_scale: np.ndarray
    d_alpha: np.ndarray
    d_rgb: np.ndarray


def quat_to_rotation(q: np.ndarray) -> np.ndarray:
    """Unit quaternion(s) (w, x, y, z) to rotation matrices; shape (..., 3, 3)."""
    q = np.asarray(q, dtype=np.float64)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    rot = np.empty(q.shape[:-1] + (3, 3))
    rot[..., 0, 0] = 1 - 2 * (y * y + z * z)
    rot[..., 0, 1] = 2 * (x * y - w * z)
    rot[..., 0, 2] = 2 * (x * z + w * y)
    rot[..., 1, 0] = 2 * (x * y + w * z)
    rot[..., 1, 1] = 1 - 2 * (x * x + z * z)
    rot[..., 1, 2] = 2 * (y * z - w * x)
    rot[..., 2, 0] = 2 * (x * z - w * y)
    rot[..., 2, 1] = 2 * (y * z + w * x)
    rot[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return rot


def build_covariance(scale: np.ndarray, rot: np.ndarray) -> np.ndarray:
    """World-space covariance R diag(s)^2 R^T of one Gaussian.

    A non-unit quaternion is normalized with a warning rather than rejected.
    """
    scale = np.asarray(scale, dtype=np.float64).reshape(3)
    rot = np.asarray(rot, dtype=np.float64).reshape(4)
    if np.any(scale <= 0):
        raise ValueError(f"scale must be positive, got {scale}")
    norm = np.linalg.norm(rot)
    if abs(norm - 1.0) > 1e-9:
        warnings.warn(f"quaternion norm {norm:.6g} != 1; normalizing", stacklevel=2)
    r = quat_to_rotation(rot)
    return r @ np.diag(scale**2) @ r.T


def _world_covariances(cloud: GaussianCloud) -> np.ndarray:
    r = quat_to_rotation(cloud.rot)
    s2 = cloud.scale**2
    return np.einsum("nij,nj,nkj->nik", r, s2, r)


def _prepare(cloud: GaussianCloud, cam: Camera):
    """Project every Gaussian: 2D means, inverse 2D covariances, bboxes, depths.

    Returns the quantities the compositing kernels consume plus the
    intermediates the backward chain needs.
    """
    k = cam.intrinsics
    rot = cam.pose.rotation
    n = len(cloud)
    mu_c = (cloud.mu - cam.center) @ rot  # camera-frame centers
    z = mu_c[:, 2]
    in_front = z > 1e-9
    zs = np.where(in_front, z, 1.0)

    cov_w = _world_covariances(cloud)
    cov_c = np.einsum("ji,njk,kl->nil", rot, cov_w, rot)  # R^T cov R

    x, y = mu_c[:, 0], mu_c[:, 1]
    jac = np.zeros((n, 2, 3))
    jac[:, 0, 0] = k.fx / zs
    jac[:, 0, 2] = -k.fx * x / zs**2
    jac[:, 1, 1] = k.fy / zs
    jac[:, 1, 2] = -k.fy * y / zs**2

    cov2 = np.einsum("nij,njk,nlk->nil", jac, cov_c, jac)
    cov2[:, 0, 0] += _raster.COV_DILATION
    cov2[:, 1, 1] += _raster.COV_DILATION

    det = cov2[:, 0, 0] * cov2[:, 1, 1] - cov2[:, 0, 1] ** 2
    det = np.maximum(det, 1e-300)
    ainv = np.stack(
        [cov2[:, 1, 1] / det, -cov2[:, 0, 1] / det, cov2[:, 0, 0] / det], axis=1
    )

    mean2d = np.stack([k.fx * x / zs + k.cx, k.fy * y / zs + k.cy], axis=1)

    half_tr = 0.5 * (cov2[:, 0, 0] + cov2[:, 1, 1])
    lam_max = half_tr + np.sqrt(
        np.maximum((0.5 * (cov2[:, 0, 0] - cov2[:, 1, 1])) ** 2 + cov2[:, 0, 1] ** 2, 0.0)
    )
    radius = np.sqrt(_raster.QF_MAX * lam_max) + 1e-9

    # pixels whose centers can carry weight >= 1/255
    x0 = np.maximum(np.ceil(mean2d[:, 0] - radius - 0.5), 0).astype(np.int64)
    x1 = np.minimum(np.floor(mean2d[:, 0] + radius - 0.5), k.width - 1).astype(np.int64)
    y0 = np.maximum(np.ceil(mean2d[:, 1] - radius - 0.5), 0).astype(np.int64)
    y1 = np.minimum(np.floor(mean2d[:, 1] + radius - 0.5), k.height - 1).astype(np.int64)
    bbox = np.stack([x0, x1, y0, y1], axis=1)
    bbox[~in_front] = np.array([0, -1, 0, -1])  # empty; behind-camera Gaussians skipped

    order = np.argsort(z, kind="stable").astype(np.int64)
    return mu_c, in_front, cov_c, jac, cov2, ainv, mean2d, bbox, order


def _tape_offsets(bbox: np.ndarray) -> tuple[np.ndarray, int]:
    w = np.maximum(bbox[:, 1] - bbox[:, 0] + 1, 0)
    h = np.maximum(bbox[:, 3] - bbox[:, 2] + 1, 0)
    sizes = (w * h).astype(np.int64)
    off = np.zeros(len(sizes), dtype=np.int64)
    off[1:] = np.cumsum(sizes[:-1])
    return off, int(sizes.sum())


def render(cloud: GaussianCloud, cam: Camera) -> RenderOutput:
    """Alpha-composite the cloud into color, opacity, and expected-depth maps."""
    k = cam.intrinsics
    if len(cloud) == 0:
        shape = (k.height, k.width)
        return RenderOutput(np.zeros(shape + (3,)), np.zeros(shape), np.zeros(shape))
    mu_c, _, _, _, _, ainv, mean2d, bbox, order = _prepare(cloud, cam)
    dummy = np.zeros(0)
    color, opac, dsum, _ = _raster.composite_forward(
        order,
        mean2d,
        ainv,
        bbox,
        cloud.alpha,
        cloud.rgb,
        mu_c[:, 2],
        k.height,
        k.width,
        dummy,
        dummy,
        np.zeros(len(cloud), dtype=np.int64),
        False,
    )
    depth = np.where(opac > 0, dsum / np.maximum(opac, 1e-300), 0.0)
    return RenderOutput(color, opac, depth)


def render_backward(
    cloud: GaussianCloud,
    cam: Camera,
    d_color: np.ndarray,
    d_opacity: np.ndarray,
) -> CloudGrad:
    """Analytic adjoint of :func:`render` for the given upstream gradients.

    Chains through compositing, the 2D Gaussian, its inverse covariance, the
    EWA Jacobian (including its dependence on the camera-frame center), and the
    rigid transform. Depth-sort order is treated as locally constant.
    """
    k = cam.intrinsics
    d_color = np.asarray(d_color, dtype=np.float64)
    d_opacity = np.asarray(d_opacity, dtype=np.float64)
    if d_color.shape != (k.height, k.width, 3) or d_opacity.shape != (k.height, k.width):
        raise ValueError(
            f"upstream gradient shapes {d_color.shape}/{d_opacity.shape} do not match "
            f"render size {k.height}x{k.width}"
        )
    n = len(cloud)
    if n == 0:
        return CloudGrad(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0), np.zeros((0, 3)))

    mu_c, in_front, cov_c, jac, _, ainv, mean2d, bbox, order = _prepare(cloud, cam)
    off, total = _tape_offsets(bbox)
    tape_g = np.zeros(total)
    tape_t = np.zeros(total)
    _raster.composite_forward(
        order,
        mean2d,
        ainv,
        bbox,
        cloud.alpha,
        cloud.rgb,
        mu_c[:, 2],
        k.height,
        k.width,
        tape_g,
        tape_t,
        off,
        True,
    )

    g_mean2d = np.zeros((n, 2))
    g_ainv = np.zeros((n, 3))
    g_alpha = np.zeros(n)
    g_rgb = np.zeros((n, 3))
    _raster.composite_backward(
        order,
        mean2d,
        ainv,
        bbox,
        cloud.alpha,
        cloud.rgb,
        tape_g,
        tape_t,
        off,
        d_color,
        d_opacity,
        g_mean2d,
        g_ainv,
        g_alpha,
        g_rgb,
    )

    # inverse-covariance components back to the 2D covariance: dS2 = -A dA A
    amat = np.zeros((n, 2, 2))
    amat[:, 0, 0], amat[:, 0, 1], amat[:, 1, 0], amat[:, 1, 1] = (
        ainv[:, 0],
        ainv[:, 1],
        ainv[:, 1],
        ainv[:, 2],
    )
    d_amat = np.zeros((n, 2, 2))
    d_amat[:, 0, 0] = g_ainv[:, 0]
    d_amat[:, 0, 1] = d_amat[:, 1, 0] = 0.5 * g_ainv[:, 1]
    d_amat[:, 1, 1] = g_ainv[:, 2]
    d_cov2 = -np.einsum("nij,njk,nkl->nil", amat, d_amat, amat)

    d_cov_c = np.einsum("nji,njk,nkl->nil", jac, d_cov2, jac)
    d_jac = 2.0 * np.einsum("nij,njk,nkl->nil", d_cov2, jac, cov_c)

    d_mu_c = np.einsum("nij,ni->nj", jac, g_mean2d)
    x, y = mu_c[:, 0], mu_c[:, 1]
    z = np.where(in_front, mu_c[:, 2], 1.0)
    d_mu_c[:, 0] += d_jac[:, 0, 2] * (-k.fx / z**2)
    d_mu_c[:, 1] += d_jac[:, 1, 2] * (-k.fy / z**2)
    d_mu_c[:, 2] += (
        d_jac[:, 0, 0] * (-k.fx / z**2)
        + d_jac[:, 1, 1] * (-k.fy / z**2)
        + d_jac[:, 0, 2] * (2.0 * k.fx * x / z**3)
        + d_jac[:, 1, 2] * (2.0 * k.fy * y / z**3)
    )

    rot = cam.pose.rotation
    d_mu = d_mu_c @ rot.T
    d_cov_w = np.einsum("ij,njk,lk->nil", rot, d_cov_c, rot)
    rq = quat_to_rotation(cloud.rot)
    d_diag = np.einsum("nji,njk,nki->ni", rq, d_cov_w, rq)
    d_scale = 2.0 * cloud.scale * d_diag

    behind = ~in_front
    d_mu[behind] = 0.0
    d_scale[behind] = 0.0
    g_alpha[behind] = 0.0
    g_rgb[behind] = 0.0
    return CloudGrad(d_mu, d_scale, g_alpha, g_rgb)


def load_cloud(path: Path | str) -> GaussianCloud:
    """Read a cloud file: one Gaussian per line, ``mu(3) scale(3) quat(4) alpha rgb(3)``."""
    rows = []
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        vals = [float(v) for v in line.split()]
        if len(vals) != 14:
            raise ValueError(f"cloud file {path}: expected 14 values per line, got {len(vals)}")
        rows.append(vals)
    if not rows:
        return GaussianCloud.empty()
    arr = np.array(rows)
    return GaussianCloud(arr[:, 0:3], arr[:, 3:6], arr[:, 6:10], arr[:, 10], arr[:, 11:14])


def save_cloud(path: Path | str, cloud: GaussianCloud) -> None:
    lines = ["# mu(3) scale(3) quat(4, wxyz) alpha rgb(3)"]
    for i in range(len(cloud)):
        vals = np.concatenate(
            [cloud.mu[i], cloud.scale[i], cloud.rot[i], [cloud.alpha[i]], cloud.rgb[i]]
        )
        lines.append(" ".join(repr(float(v)) for v in vals))
    Path(path).write_text("\n".join(lines) + "\n")
