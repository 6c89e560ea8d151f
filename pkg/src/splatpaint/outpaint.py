"""Geometry-guided multi-view outpainting via masked, scheduled, resampled DDIM.

Per input view the pipeline widens the field of view by scaling focal lengths,
renders the coarse splat model for an appearance prior and an opacity-derived
confidence mask, and runs a DDIM loop whose latent is blended against the
noised coarse prior at a few scheduled timesteps. The blend mask starts widely
dilated and shrinks as denoising proceeds (generation is free early, geometry
pins late), and each blend is followed by a few noise-resampling rounds that
re-noise the predicted clean latent and denoise it again to erase blend seams.

All stochastic draws (initial latent, per-blend coarse noise, resampling noise)
consume one seeded generator in loop order; a fixed seed plus a deterministic
denoiser makes the whole run bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import maximum_filter

from .camera import (
    Camera,
    GeoGrid,
    augment_condition,
    ccm_grid,
    plucker_rays,
    scale_intrinsics,
    warp_merge,
)
from .diffusion import (
    Denoiser,
    DenoiserContext,
    NoiseSchedule,
    add_noise,
    ddim_step,
    latent_decode,
    latent_encode,
    make_schedule,
)
from .errors import StageError
from .splat import GaussianCloud, RenderOutput, render

__all__ = [
    "opacity_mask",
    "latent_mask",
    "soft_latent_weights",
    "MaskSchedule",
    "default_blend_steps",
    "default_mask_schedule",
    "mask_latent_blend",
    "noise_resample",
    "OutpaintConfig",
    "OutpaintResult",
    "build_context",
    "outpaint_views",
]

DILATION_KERNEL = 5


def opacity_mask(opacity: np.ndarray, eta: float) -> np.ndarray:
    """Boolean outpainting mask: True where accumulated opacity < ``eta``."""
    return np.asarray(opacity, dtype=np.float64) < eta


def _maxpool(grid: np.ndarray, factor: int, pad_value) -> np.ndarray:
    if factor == 1:
        return grid.copy()
    h, w = grid.shape
    ph, pw = -(-h // factor) * factor, -(-w // factor) * factor
    if (ph, pw) != (h, w):
        grid = np.pad(grid, ((0, ph - h), (0, pw - w)), constant_values=pad_value)
    return grid.reshape(ph // factor, factor, pw // factor, factor).max(axis=(1, 3))


def _dilate(grid: np.ndarray, iterations: int) -> np.ndarray:
    for _ in range(iterations):
        grid = maximum_filter(grid, size=DILATION_KERNEL, mode="constant", cval=0)
    return grid


def latent_mask(mask: np.ndarray, factor: int, dilation_iters: int) -> np.ndarray:
    """Max-pool a pixel mask to latent resolution, then dilate the masked region.

    Dimensions that the factor does not divide are padded with True (needs
    outpainting); dilation applies a 5x5 max filter ``dilation_iters`` times.
    """
    if dilation_iters < 0:
        raise ValueError("dilation iterations must be >= 0")
    m = _maxpool(np.asarray(mask, dtype=bool), factor, pad_value=True)
    return _dilate(m, dilation_iters).astype(bool)


def soft_latent_weights(opacity: np.ndarray, factor: int, dilation_iters: int) -> np.ndarray:
    """Continuous blend weights: max-pooled clamp(1 - opacity), grey-dilated."""
    w = np.clip(1.0 - np.asarray(opacity, dtype=np.float64), 0.0, 1.0)
    w = _maxpool(w, factor, pad_value=1.0)
    return _dilate(w, max(dilation_iters, 0))


@dataclass(frozen=True)
class MaskSchedule:
    """Blend timesteps with per-step dilation counts and the blend mode."""

    timesteps: tuple[int, ...]
    dilation_iters: tuple[int, ...]
    kernel_size: int = DILATION_KERNEL
    mode: str = "hard"

    def __post_init__(self):
        if len(self.timesteps) != len(self.dilation_iters):
            raise ValueError("one dilation count per blend timestep")
        if any(t2 >= t1 for t1, t2 in zip(self.timesteps, self.timesteps[1:])):
            raise ValueError(f"blend timesteps must decrease strictly: {self.timesteps}")
        if any(d2 > d1 for d1, d2 in zip(self.dilation_iters, self.dilation_iters[1:])):
            raise ValueError(f"dilation counts must be non-increasing: {self.dilation_iters}")
        if self.mode not in ("hard", "soft"):
            raise ValueError(f"unknown mask mode {self.mode!r}")


def default_blend_steps(steps: int) -> tuple[int, ...]:
    """Blend at 0.7T, 0.5T, 0.3T rounded to integer steps (35/25/15 at T=50)."""
    ts = tuple(int(round(f * steps)) for f in (0.7, 0.5, 0.3))
    if len(set(ts)) != 3 or ts[-1] < 1 or ts[0] >= steps:
        raise ValueError(f"step count {steps} too small for a 3-stage blend schedule")
    return ts


def default_mask_schedule(steps: int, mode: str = "hard") -> MaskSchedule:
    """Dilation shrinks linearly over the blend stages: N-1, ..., 1, 0 iterations."""
    ts = default_blend_steps(steps)
    return MaskSchedule(ts, tuple(range(len(ts) - 1, -1, -1)), mode=mode)


def mask_latent_blend(
    mask: np.ndarray, z_coarse_t: np.ndarray, z_t: np.ndarray
) -> np.ndarray:
    """Composite: keep ``z_t`` where the mask is on, the coarse latent elsewhere.

    The mask may be boolean (hard mode) or continuous weights in [0, 1] (soft
    mode); it broadcasts over channels.
    """
    z_coarse_t = np.asarray(z_coarse_t, dtype=np.float64)
    z_t = np.asarray(z_t, dtype=np.float64)
    if z_coarse_t.shape != z_t.shape:
        raise ValueError(f"latent shapes differ: {z_coarse_t.shape} vs {z_t.shape}")
    m = np.asarray(mask, dtype=np.float64)
    if m.shape != z_t.shape[:2]:
        raise ValueError(f"mask shape {m.shape} does not match latent {z_t.shape}")
    if m.min() < 0.0 or m.max() > 1.0:
        raise ValueError("soft blend weights must lie in [0, 1]")
    m = m[..., None]
    return (1.0 - m) * z_coarse_t + m * z_t


def noise_resample(
    schedule: NoiseSchedule,
    z_blend: np.ndarray,
    t: int,
    denoiser: Denoiser,
    ctx: DenoiserContext,
    count: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Erase blend seams: predict clean, re-noise to level ``t``, denoise back.

    ``z_blend`` sits at level t-1 (the post-step latent the blend produced).
    Each round predicts the clean latent there, adds fresh noise back up to
    level t, and takes one DDIM step down again. ``count`` = 0 returns the
    input unchanged.
    """
    z = np.asarray(z_blend, dtype=np.float64).copy()
    for _ in range(count):
        eps_pred = denoiser(z, t - 1, ctx)
        z0_hat = (
            z if t - 1 == 0 else
            (z - np.sqrt(1.0 - schedule.alpha_bar[t - 1]) * eps_pred)
            / np.sqrt(schedule.alpha_bar[t - 1])
        )
        z_up = add_noise(schedule, z0_hat, t, rng.standard_normal(z.shape))
        z = ddim_step(schedule, z_up, denoiser(z_up, t, ctx), t, t - 1)
    return z


@dataclass(frozen=True)
class OutpaintConfig:
    """Knobs of the outpainting loop; defaults follow the reference settings."""

    fov_scale: float = 0.6
    opacity_threshold: float = 0.6
    steps: int = 50
    blend_steps: tuple[int, ...] | None = None  # None = 0.7T/0.5T/0.3T
    resample_count: int = 3
    latent_factor: int = 1
    mask_mode: str = "hard"
    reuse_blend_noise: bool = False
    denoiser: str = "smooth_prior"
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.fov_scale < 1.0:
            raise ValueError(f"fov scale must be in (0, 1), got {self.fov_scale}")
        if not 0.0 < self.opacity_threshold < 1.0:
            raise ValueError(f"opacity threshold must be in (0, 1), got {self.opacity_threshold}")
        if self.resample_count < 0:
            raise ValueError("resample count must be >= 0")
        if self.latent_factor < 1:
            raise ValueError("latent factor must be >= 1")

    def mask_schedule(self) -> MaskSchedule:
        if self.blend_steps is None:
            return default_mask_schedule(self.steps, self.mask_mode)
        ts = tuple(self.blend_steps)
        return MaskSchedule(ts, tuple(range(len(ts) - 1, -1, -1)), mode=self.mask_mode)


@dataclass
class OutpaintResult:
    """One outpainted view plus the intermediates later stages consume."""

    image: np.ndarray  # (H, W, 3) in [0, 1]
    camera: Camera  # wide-FOV camera
    coarse: RenderOutput  # coarse model rendered at the wide camera
    mask: np.ndarray  # pixel-space outpainting mask
    context: DenoiserContext


def build_context(
    view_index: int,
    inputs: list[tuple[np.ndarray, Camera]],
    src_renders: list[RenderOutput],
    wide_cam: Camera,
    cfg: OutpaintConfig,
    ccm_bounds: tuple[np.ndarray, np.ndarray],
) -> DenoiserContext:
    """Assemble the conditioning for one target view.

    All input views are forward-warped into the wide target frame through the
    coarse model's depth (shared z-buffer), and the target's own input is
    pasted, downscaled, over the center of both the color and the coordinate
    grid. Ray embeddings cover every reference view and the wide target.
    """
    lo, hi = ccm_bounds
    payload_rgb, payload_ccm, cams, depths = [], [], [], []
    for (img, cam), ro in zip(inputs, src_renders):
        conf = ro.opacity >= cfg.opacity_threshold
        payload_rgb.append(GeoGrid(np.asarray(img, dtype=np.float64), conf.copy()))
        payload_ccm.append(ccm_grid(cam, ro.depth, conf, lo, hi))
        cams.append(cam)
        depths.append(ro.depth)
    rgb_warp = warp_merge(payload_rgb, cams, depths, wide_cam)
    ccm_warp = warp_merge(payload_ccm, cams, depths, wide_cam)
    own_img, own_cam = inputs[view_index]
    own_render = src_renders[view_index]
    own_conf = own_render.opacity >= cfg.opacity_threshold
    rgb_aug = augment_condition(rgb_warp, GeoGrid.full(own_img), cfg.fov_scale)
    ccm_aug = augment_condition(
        ccm_warp, ccm_grid(own_cam, own_render.depth, own_conf, lo, hi), cfg.fov_scale
    )
    return DenoiserContext(
        view_index=view_index,
        ref_latents=[latent_encode(img, cfg.latent_factor) for img, _ in inputs],
        ref_rays=[plucker_rays(cam) for _, cam in inputs],
        target_rays=plucker_rays(wide_cam),
        rgb_aug=rgb_aug,
        ccm_aug=ccm_aug,
    )


def _save_debug(debug_dir: Path, name: str, img: np.ndarray) -> None:
    from .image_io import write_ppm

    debug_dir.mkdir(parents=True, exist_ok=True)
    write_ppm(debug_dir / name, np.clip(img, 0.0, 1.0))


def outpaint_views(
    inputs: list[tuple[np.ndarray, Camera]],
    coarse: GaussianCloud,
    cfg: OutpaintConfig,
    denoiser_factory,
    ccm_bounds: tuple[np.ndarray, np.ndarray],
    debug_dir: Path | str | None = None,
) -> list[OutpaintResult]:
    """Outpaint every input view to the widened field of view.

    ``denoiser_factory`` receives the noise schedule and the list of contexts
    (one per view, shared conditioning) and returns the denoiser to use; this
    keeps the loop implementation-blind. Views are processed sequentially with
    one seeded generator; see the module docstring for the draw order.
    """
    if not inputs:
        raise ValueError("need at least one input view")
    if len(coarse) == 0:
        raise ValueError("coarse cloud is empty")
    schedule = make_schedule(cfg.steps)
    mask_sched = cfg.mask_schedule()
    rng = np.random.default_rng(cfg.seed)
    debug = Path(debug_dir) if debug_dir is not None else None

    src_renders = [render(coarse, cam) for _, cam in inputs]
    wide_cams = [
        Camera(scale_intrinsics(cam.intrinsics, cfg.fov_scale), cam.pose)
        for _, cam in inputs
    ]
    contexts = [
        build_context(i, inputs, src_renders, wide_cams[i], cfg, ccm_bounds)
        for i in range(len(inputs))
    ]
    denoiser = denoiser_factory(schedule, contexts)

    results = []
    blend_order = {t: k for k, t in enumerate(mask_sched.timesteps)}
    for vi, (img, cam) in enumerate(inputs):
        wide = wide_cams[vi]
        coarse_out = render(coarse, wide)
        mask = opacity_mask(coarse_out.opacity, cfg.opacity_threshold)
        z_coarse = latent_encode(coarse_out.color, cfg.latent_factor)
        ctx = contexts[vi]
        if debug is not None:
            _save_debug(debug, f"view{vi:02d}_coarse.ppm", coarse_out.color)
            _save_debug(debug, f"view{vi:02d}_opacity.ppm", coarse_out.opacity)

        z = rng.standard_normal(z_coarse.shape)
        blend_eps: np.ndarray | None = None
        for s in range(cfg.steps, 0, -1):
            z = ddim_step(schedule, z, denoiser(z, s, ctx), s, s - 1)
            if not np.all(np.isfinite(z)):
                raise StageError("outpaint", f"non-finite latent at view {vi}, step {s}")
            if s in blend_order:
                k = blend_order[s]
                iters = mask_sched.dilation_iters[k]
                if mask_sched.mode == "hard":
                    m = latent_mask(mask, cfg.latent_factor, iters)
                else:
                    m = soft_latent_weights(coarse_out.opacity, cfg.latent_factor, iters)
                if cfg.reuse_blend_noise:
                    if blend_eps is None:
                        blend_eps = rng.standard_normal(z.shape)
                    eps_c = blend_eps
                else:
                    eps_c = rng.standard_normal(z.shape)
                zc = add_noise(schedule, z_coarse, s - 1, eps_c)
                z = mask_latent_blend(m, zc, z)
                z = noise_resample(schedule, z, s, denoiser, ctx, cfg.resample_count, rng)
                if debug is not None:
                    _save_debug(debug, f"view{vi:02d}_mask_t{s}.ppm", m.astype(np.float64))
                    z0_dbg = latent_decode(
                        (z - np.sqrt(1 - schedule.alpha_bar[s - 1]) * denoiser(z, s - 1, ctx))
                        / np.sqrt(schedule.alpha_bar[s - 1])
                        if s - 1 > 0
                        else z,
                        cfg.latent_factor,
                        mask.shape,
                    )
                    _save_debug(debug, f"view{vi:02d}_zhat_t{s}.ppm", z0_dbg)
        image = np.clip(
            latent_decode(z, cfg.latent_factor, (wide.intrinsics.height, wide.intrinsics.width)),
            0.0,
            1.0,
        )
        results.append(OutpaintResult(image, wide, coarse_out, mask, ctx))
    return results
