"""Losses and gradient-descent fitting for coarse and refinement stages.

Two supervision losses are used, selected by view kind:

  * input views: ``(1 - w_s) * L1 + w_s * (1 - SSIM)``;
  * generated (outpainted) views: the same reconstruction term plus a
    perceptual surrogate, ``w_perc`` times the mean L1 distance between
    3-level Sobel gradient-magnitude pyramids.

Both losses come with analytic pixel-space gradients so the splat rasterizer's
adjoint can drive an Adam update per parameter group.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import correlate

from .camera import Camera, pixel_center_grid, unproject
from .errors import DegenerateInitError, StageError
from .metrics import psnr, ssim_parts, window_filter
from .splat import CloudGrad, GaussianCloud, RenderOutput, render, render_backward

__all__ = [
    "LossWeights",
    "FitConfig",
    "View",
    "SupervisionSet",
    "d_ssim",
    "d_ssim_with_grad",
    "perceptual_surrogate",
    "perceptual_surrogate_with_grad",
    "loss_input",
    "loss_outpainted",
    "Adam",
    "optimize",
    "reinit_points",
]

ALPHA_MIN, ALPHA_MAX = 1e-4, 1.0 - 1e-4
SCALE_MIN = 1e-4

_SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
_SOBEL_Y = _SOBEL_X.T
_MAG_EPS = 1e-12


@dataclass(frozen=True)
class LossWeights:
    """Weights of the structural and perceptual terms, both in [0, 1]."""

    lambda_ssim: float = 0.2
    lambda_perc: float = 0.1

    def __post_init__(self):
        if not (0.0 <= self.lambda_ssim <= 1.0 and 0.0 <= self.lambda_perc <= 1.0):
            raise ValueError(f"loss weights must lie in [0, 1]: {self}")


@dataclass(frozen=True)
class FitConfig:
    iterations: int = 2000
    lr_mu: float = 2e-3
    lr_scale: float = 5e-3
    lr_alpha: float = 5e-2
    lr_rgb: float = 2.5e-2
    seed: int = 0
    alternate_supervision: bool = False

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if min(self.lr_mu, self.lr_scale, self.lr_alpha, self.lr_rgb) <= 0:
            raise ValueError("learning rates must be positive")


@dataclass
class View:
    """A supervision view: image in [0, 1], its camera, and its kind tag."""

    image: np.ndarray
    camera: Camera
    kind: str = "input"

    def __post_init__(self):
        self.image = np.asarray(self.image, dtype=np.float64)
        if self.kind not in ("input", "outpainted"):
            raise ValueError(f"unknown view kind {self.kind!r}")
        if self.image.min() < -1e-9 or self.image.max() > 1 + 1e-9:
            raise ValueError("view images must lie in [0, 1]")


@dataclass
class SupervisionSet:
    views: list[View]

    def __post_init__(self):
        if not any(v.kind == "input" for v in self.views):
            raise ValueError("supervision set needs at least one input view")

    @property
    def inputs(self) -> list[View]:
        return [v for v in self.views if v.kind == "input"]

    @property
    def outpainted(self) -> list[View]:
        return [v for v in self.views if v.kind == "outpainted"]


# ---------------------------------------------------------------------------
# losses


def d_ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Structural dissimilarity 1 - SSIM(a, b)."""
    return 1.0 - float(ssim_parts(a, b)[0].mean())


def d_ssim_with_grad(a: np.ndarray, b: np.ndarray) -> tuple[float, np.ndarray]:
    """1 - SSIM and its gradient with respect to ``a``.

    The SSIM map depends on ``a`` through the windowed moments mean(a),
    mean(a^2) and mean(ab); the chain rule routes each partial back through the
    (self-adjoint) window filter.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    squeeze = a.ndim == 2
    s, mu_a, mu_b, _, _, _, a1, a2, b1, b2 = ssim_parts(a, b)
    a3 = a[..., None] if squeeze else a
    b3 = b[..., None] if squeeze else b

    n = s.size
    ds = -1.0 / n  # gradient of (1 - mean s) w.r.t. each s entry
    denom = b1 * b2
    ds_dmu = 2.0 * mu_b * a2 / denom - 2.0 * mu_a * a1 * a2 / (b1 * denom)
    ds_dvar = -a1 * a2 / (denom * b2)
    ds_dcov = 2.0 * a1 / denom
    # var_a = E[a^2] - mu_a^2 and cov = E[ab] - mu_a mu_b also depend on mu_a
    g_mu = ds * (ds_dmu - 2.0 * mu_a * ds_dvar - mu_b * ds_dcov)
    g_eaa = ds * ds_dvar
    g_eab = ds * ds_dcov
    grad = window_filter(g_mu) + 2.0 * a3 * window_filter(g_eaa) + b3 * window_filter(g_eab)
    value = 1.0 - float(s.mean())
    return value, grad[..., 0] if squeeze else grad


def _corr2(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Per-channel 2-D correlation with zero padding (same size)."""
    k = kernel[:, :, None] if img.ndim == 3 else kernel
    return correlate(img, k, mode="constant", cval=0.0)


def _half(img: np.ndarray) -> np.ndarray:
    """2x2 block-mean downsample; a trailing odd row/column is dropped."""
    h, w = img.shape[0] // 2 * 2, img.shape[1] // 2 * 2
    img = img[:h, :w]
    if img.ndim == 3:
        return img.reshape(h // 2, 2, w // 2, 2, -1).mean(axis=(1, 3))
    return img.reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3))


def _half_adjoint(grad: np.ndarray, in_shape: tuple[int, ...]) -> np.ndarray:
    out = np.zeros(in_shape)
    up = np.repeat(np.repeat(grad, 2, axis=0), 2, axis=1) / 4.0
    out[: up.shape[0], : up.shape[1]] = up
    return out


def _grad_magnitude(img: np.ndarray):
    gx = _corr2(img, _SOBEL_X)
    gy = _corr2(img, _SOBEL_Y)
    mag = np.sqrt(gx * gx + gy * gy + _MAG_EPS)
    return mag, gx, gy


def _pyramid(img: np.ndarray) -> list[np.ndarray]:
    levels = [img]
    for _ in range(2):
        levels.append(_half(levels[-1]))
    return levels


def perceptual_surrogate(a: np.ndarray, b: np.ndarray) -> float:
    """Mean L1 distance between Sobel gradient-magnitude pyramids (3 levels)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    if a.shape[0] < 8 or a.shape[1] < 8:
        raise ValueError(f"images must be at least 8x8, got {a.shape}")
    total = 0.0
    for la, lb in zip(_pyramid(a), _pyramid(b)):
        total += float(np.abs(_grad_magnitude(la)[0] - _grad_magnitude(lb)[0]).mean())
    return total / 3.0


def perceptual_surrogate_with_grad(a: np.ndarray, b: np.ndarray) -> tuple[float, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    if a.shape[0] < 8 or a.shape[1] < 8:
        raise ValueError(f"images must be at least 8x8, got {a.shape}")
    pyr_a, pyr_b = _pyramid(a), _pyramid(b)
    value = 0.0
    grad = np.zeros_like(a)
    for lvl in range(3):
        mag_a, gx, gy = _grad_magnitude(pyr_a[lvl])
        mag_b = _grad_magnitude(pyr_b[lvl])[0]
        diff = mag_a - mag_b
        value += float(np.abs(diff).mean())
        d_mag = np.sign(diff) / (diff.size * 3.0)
        d_gx = d_mag * gx / mag_a
        d_gy = d_mag * gy / mag_a
        # adjoint of zero-padded correlation is correlation with the flipped kernel
        g = _corr2(d_gx, _SOBEL_X[::-1, ::-1]) + _corr2(d_gy, _SOBEL_Y[::-1, ::-1])
        for up in range(lvl - 1, -1, -1):
            g = _half_adjoint(g, pyr_a[up].shape)
        grad += g
    return value / 3.0, grad


def loss_input(
    rendered: np.ndarray, gt: np.ndarray, w: LossWeights
) -> tuple[float, np.ndarray]:
    """Reconstruction loss for input views with its pixel gradient."""
    rendered = np.asarray(rendered, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if rendered.shape != gt.shape:
        raise ValueError(f"image shapes differ: {rendered.shape} vs {gt.shape}")
    diff = rendered - gt
    l1 = float(np.abs(diff).mean())
    g_l1 = np.sign(diff) / diff.size
    value = (1.0 - w.lambda_ssim) * l1
    grad = (1.0 - w.lambda_ssim) * g_l1
    if w.lambda_ssim > 0.0:
        dval, dgrad = d_ssim_with_grad(rendered, gt)
        value += w.lambda_ssim * dval
        grad = grad + w.lambda_ssim * dgrad
    return value, grad


def loss_outpainted(
    rendered: np.ndarray, outpainted: np.ndarray, w: LossWeights
) -> tuple[float, np.ndarray]:
    """Reconstruction plus perceptual-surrogate loss for generated views."""
    value, grad = loss_input(rendered, outpainted, w)
    if w.lambda_perc > 0.0:
        pval, pgrad = perceptual_surrogate_with_grad(rendered, outpainted)
        value += w.lambda_perc * pval
        grad = grad + w.lambda_perc * pgrad
    return value, grad


# ---------------------------------------------------------------------------
# optimization


class Adam:
    """Standard Adam for one parameter array."""

    def __init__(self, shape, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.t = 0

    def step(self, param: np.ndarray, grad: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad**2
        mh = self.m / (1 - self.beta1**self.t)
        vh = self.v / (1 - self.beta2**self.t)
        return param - self.lr * mh / (np.sqrt(vh) + self.eps)


def _pick_view(views: SupervisionSet, it: int, alternate: bool) -> View:
    inputs = views.inputs
    outpainted = views.outpainted
    if alternate and outpainted:
        if it % 2 == 0:
            return inputs[(it // 2) % len(inputs)]
        return outpainted[(it // 2) % len(outpainted)]
    return inputs[it % len(inputs)]


def optimize(
    cloud: GaussianCloud,
    views: SupervisionSet,
    weights: LossWeights,
    cfg: FitConfig,
    log_path: Path | str | None = None,
) -> GaussianCloud:
    """Fit the cloud to the supervision set with round-robin view selection.

    With ``alternate_supervision`` enabled and generated views present the
    realized sequence alternates kinds exactly (input, outpainted, ...); the
    loss is chosen by view kind. Entirely deterministic for a fixed config.
    """
    if len(cloud) == 0:
        raise ValueError("cannot optimize an empty cloud")
    cloud = cloud.copy()
    opts = {
        "mu": Adam(cloud.mu.shape, cfg.lr_mu),
        "scale": Adam(cloud.scale.shape, cfg.lr_scale),
        "alpha": Adam(cloud.alpha.shape, cfg.lr_alpha),
        "rgb": Adam(cloud.rgb.shape, cfg.lr_rgb),
    }
    log_lines: list[str] = []
    for it in range(cfg.iterations):
        view = _pick_view(views, it, cfg.alternate_supervision)
        out = render(cloud, view.camera)
        if view.kind == "input":
            value, pix_grad = loss_input(out.color, view.image, weights)
        else:
            value, pix_grad = loss_outpainted(out.color, view.image, weights)
        if not np.isfinite(value):
            raise StageError(
                "optimize",
                f"non-finite loss {value} at iteration {it} on a {view.kind} view "
                f"(cloud size {len(cloud)})",
            )
        grads = render_backward(cloud, view.camera, pix_grad, np.zeros_like(out.opacity))
        cloud.mu = opts["mu"].step(cloud.mu, grads.d_mu)
        cloud.scale = np.maximum(opts["scale"].step(cloud.scale, grads.d_scale), SCALE_MIN)
        cloud.alpha = np.clip(opts["alpha"].step(cloud.alpha, grads.d_alpha), ALPHA_MIN, ALPHA_MAX)
        cloud.rgb = np.clip(opts["rgb"].step(cloud.rgb, grads.d_rgb), 0.0, 1.0)
        if log_path is not None:
            log_lines.append(f"{it} {view.kind} {value:.8f} {psnr(out.color, view.image):.4f}")
    if log_path is not None:
        Path(log_path).write_text("\n".join(log_lines) + ("\n" if log_lines else ""))
    return cloud


def reinit_points(
    outpainted: list[tuple[np.ndarray, Camera]],
    coarse_renders: list[RenderOutput],
    stride: int,
    opacity_threshold: float = 0.6,
    scene_center: np.ndarray | None = None,
) -> GaussianCloud:
    """Re-seed a cloud from generated views and the coarse model's depth.

    Every ``stride``-th pixel becomes a Gaussian: confident pixels (coarse
    opacity >= threshold) unproject at the coarse expected depth, the rest at
    the median depth of that view's confident pixels (or the depth of
    ``scene_center`` if a view has none). Points take the generated view's
    color, opacity 0.5, and an isotropic scale of one stride footprint.
    """
    if len(outpainted) != len(coarse_renders):
        raise ValueError("outpainted views and coarse renders must align")
    if not outpainted:
        raise ValueError("need at least one generated view")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    mus, scales, rgbs = [], [], []
    any_confident = False
    for (image, cam), ro in zip(outpainted, coarse_renders):
        k = cam.intrinsics
        conf = ro.opacity >= opacity_threshold
        any_confident |= bool(conf.any())
        if conf.any():
            fallback = float(np.median(ro.depth[conf]))
        elif scene_center is not None:
            z = float(((np.asarray(scene_center) - cam.center) @ cam.pose.rotation)[2])
            fallback = max(z, 1e-3)
        else:
            continue
        ys = np.arange(0, k.height, stride)
        xs = np.arange(0, k.width, stride)
        gy, gx = np.meshgrid(ys, xs, indexing="ij")
        gy, gx = gy.ravel(), gx.ravel()
        depth = np.where(conf[gy, gx], ro.depth[gy, gx], fallback)
        uv = np.stack([gx + 0.5, gy + 0.5], axis=-1)
        mus.append(unproject(cam, uv, depth))
        footprint = depth * stride * 2.0 / (k.fx + k.fy)
        scales.append(np.repeat(footprint[:, None], 3, axis=1))
        rgbs.append(np.clip(np.asarray(image, dtype=np.float64)[gy, gx], 0.0, 1.0))
    if not any_confident:
        raise DegenerateInitError("no confident coarse pixels in any view")
    mu = np.concatenate(mus)
    n = len(mu)
    rot = np.tile(np.array([1.0, 0.0, 0.0, 0.0]), (n, 1))
    return GaussianCloud(mu, np.concatenate(scales), rot, np.full(n, 0.5), np.concatenate(rgbs))
