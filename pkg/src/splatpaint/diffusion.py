"""Noise schedule, DDIM stepping, and pluggable denoisers.

The "latent" space is pixel space (C = 3) with an optional integer downsample
factor; factor 1 is the identity and keeps every algebraic test exact, while
factor 8 on a 512x384 frame reproduces a 64x48 latent geometry. Three denoiser
implementations share one interface so the outpainting loop is
implementation-blind:

  * :class:`OracleDenoiser` returns the exact noise implied by a known target,
    making the sampling loop algebraically verifiable;
  * :class:`NoisyOracleDenoiser` perturbs the oracle with seeded Gaussian noise
    of a chosen strength (the imperfect-generator stand-in);
  * :class:`SmoothPriorDenoiser` predicts the clean latent from its
    conditioning alone: nearest-valid fill of the augmented RGB grid followed
    by two 5x5 box blurs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np
from scipy.ndimage import distance_transform_edt, uniform_filter

from .camera import GeoGrid

__all__ = [
    "NoiseSchedule",
    "make_schedule",
    "add_noise",
    "predict_x0",
    "ddim_step",
    "oracle_denoise",
    "latent_shape",
    "latent_encode",
    "latent_decode",
    "DenoiserContext",
    "Denoiser",
    "OracleDenoiser",
    "NoisyOracleDenoiser",
    "SmoothPriorDenoiser",
]

_COSINE_OFFSET = 0.008
_MIN_STEP_RATIO = 1e-3  # keeps the final table entry positive and well-conditioned


@dataclass(frozen=True)
class NoiseSchedule:
    """Cumulative signal table: ``alpha_bar[t]`` for t = 0..T, alpha_bar[0] = 1."""

    alpha_bar: np.ndarray

    def __post_init__(self):
        ab = np.asarray(self.alpha_bar, dtype=np.float64)
        assert ab.ndim == 1 and len(ab) >= 2, "schedule table needs T >= 1"
        assert abs(ab[0] - 1.0) < 1e-12, "alpha_bar[0] must be 1"
        assert np.all(np.diff(ab) < 0), "alpha_bar must decrease strictly"
        assert ab[-1] > 0.0, "alpha_bar must stay positive"
        object.__setattr__(self, "alpha_bar", ab)

    @property
    def steps(self) -> int:
        return len(self.alpha_bar) - 1


def make_schedule(steps: int) -> NoiseSchedule:
    """Cosine signal schedule with the terminal step ratio floored.

    The raw cosine form hits zero at t = T; flooring the final per-step ratio
    keeps the table strictly inside (0, 1] so clean-latent prediction stays
    numerically sane at the noisiest step.
    """
    if steps < 1:
        raise ValueError(f"step count must be >= 1, got {steps}")
    t = np.arange(steps + 1, dtype=np.float64)
    f = np.cos((t / steps + _COSINE_OFFSET) / (1.0 + _COSINE_OFFSET) * math.pi / 2.0) ** 2
    ratios = np.clip(f[1:] / f[:-1], _MIN_STEP_RATIO, 1.0 - 1e-9)
    return NoiseSchedule(np.concatenate([[1.0], np.cumprod(ratios)]))


def _check_step(schedule: NoiseSchedule, t: int) -> None:
    if not 0 <= t <= schedule.steps:
        raise ValueError(f"timestep {t} outside schedule range [0, {schedule.steps}]")


def add_noise(schedule: NoiseSchedule, z0: np.ndarray, t: int, eps: np.ndarray) -> np.ndarray:
    """Forward noising: sqrt(ab_t) z0 + sqrt(1 - ab_t) eps."""
    _check_step(schedule, t)
    z0 = np.asarray(z0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if z0.shape != eps.shape:
        raise ValueError(f"latent/noise shapes differ: {z0.shape} vs {eps.shape}")
    ab = schedule.alpha_bar[t]
    return math.sqrt(ab) * z0 + math.sqrt(1.0 - ab) * eps


def predict_x0(schedule: NoiseSchedule, z_t: np.ndarray, eps_hat: np.ndarray, t: int) -> np.ndarray:
    """Clean-latent estimate (z_t - sqrt(1 - ab_t) eps_hat) / sqrt(ab_t)."""
    _check_step(schedule, t)
    if t == 0:
        return np.asarray(z_t, dtype=np.float64).copy()
    ab = schedule.alpha_bar[t]
    return (np.asarray(z_t) - math.sqrt(1.0 - ab) * np.asarray(eps_hat)) / math.sqrt(ab)


def ddim_step(
    schedule: NoiseSchedule, z_t: np.ndarray, eps_hat: np.ndarray, t: int, t_prev: int
) -> np.ndarray:
    """Deterministic sampler update from level t to t_prev < t."""
    _check_step(schedule, t)
    if not 0 <= t_prev < t:
        raise ValueError(f"invalid step order: t_prev={t_prev} must be < t={t}")
    z0_hat = predict_x0(schedule, z_t, eps_hat, t)
    ab_prev = schedule.alpha_bar[t_prev]
    return math.sqrt(ab_prev) * z0_hat + math.sqrt(1.0 - ab_prev) * np.asarray(eps_hat)


def oracle_denoise(
    schedule: NoiseSchedule, target_z0: np.ndarray, z_t: np.ndarray, t: int
) -> np.ndarray:
    """The exact noise that maps ``target_z0`` to ``z_t`` at level t (t >= 1)."""
    _check_step(schedule, t)
    if t == 0:
        raise ValueError("noise is undefined at t = 0 (latent already clean)")
    target_z0 = np.asarray(target_z0, dtype=np.float64)
    z_t = np.asarray(z_t, dtype=np.float64)
    if target_z0.shape != z_t.shape:
        raise ValueError(f"latent shapes differ: {target_z0.shape} vs {z_t.shape}")
    ab = schedule.alpha_bar[t]
    return (z_t - math.sqrt(ab) * target_z0) / math.sqrt(1.0 - ab)


# ---------------------------------------------------------------------------
# pixel-latent codec


def latent_shape(height: int, width: int, factor: int) -> tuple[int, int, int]:
    return (-(-height // factor), -(-width // factor), 3)


def latent_encode(img: np.ndarray, factor: int = 1) -> np.ndarray:
    """Image to latent: block-mean downsample by ``factor`` (identity at 1)."""
    img = np.asarray(img, dtype=np.float64)
    if factor == 1:
        return img.copy()
    h, w = img.shape[:2]
    ph, pw = -(-h // factor) * factor, -(-w // factor) * factor
    if (ph, pw) != (h, w):  # edge-replicate to a multiple of the factor
        img = np.pad(img, ((0, ph - h), (0, pw - w), (0, 0)), mode="edge")
    return img.reshape(ph // factor, factor, pw // factor, factor, -1).mean(axis=(1, 3))


def latent_decode(z: np.ndarray, factor: int, out_hw: tuple[int, int]) -> np.ndarray:
    """Latent to image: nearest-neighbor upsample and crop to ``out_hw``."""
    z = np.asarray(z, dtype=np.float64)
    if factor == 1:
        return z.copy()
    up = np.repeat(np.repeat(z, factor, axis=0), factor, axis=1)
    return up[: out_hw[0], : out_hw[1]]


# ---------------------------------------------------------------------------
# denoisers


@dataclass
class DenoiserContext:
    """Static per-target-view conditioning shared by every denoiser call.

    Carries the clean reference latents of all input views, their ray
    embeddings, the wide-FOV target's ray embedding, and the warped+augmented
    color and coordinate grids. ``view_index`` identifies the target view so
    per-view denoisers (oracles) can select their state.
    """

    view_index: int
    ref_latents: list[np.ndarray] = field(default_factory=list)
    ref_rays: list[np.ndarray] = field(default_factory=list)
    target_rays: np.ndarray | None = None
    rgb_aug: GeoGrid | None = None
    ccm_aug: GeoGrid | None = None


class Denoiser(Protocol):
    """Noise predictor: (z_t, t, ctx) -> eps_hat of z_t's shape."""

    def __call__(self, z_t: np.ndarray, t: int, ctx: DenoiserContext) -> np.ndarray: ...


class OracleDenoiser:
    """Returns the exact noise implied by a per-view target latent."""

    def __init__(self, schedule: NoiseSchedule, targets: list[np.ndarray]):
        self.schedule = schedule
        self.targets = [np.asarray(t, dtype=np.float64) for t in targets]

    def __call__(self, z_t: np.ndarray, t: int, ctx: DenoiserContext) -> np.ndarray:
        return oracle_denoise(self.schedule, self.targets[ctx.view_index], z_t, t)


class NoisyOracleDenoiser:
    """Oracle plus seeded Gaussian perturbation of standard deviation ``rho``.

    Draws come from the denoiser's own generator, so a run is reproducible
    given the construction seed and the call order.
    """

    def __init__(
        self, schedule: NoiseSchedule, targets: list[np.ndarray], rho: float, seed: int = 0
    ):
        if rho < 0:
            raise ValueError("perturbation strength must be >= 0")
        self.schedule = schedule
        self.targets = [np.asarray(t, dtype=np.float64) for t in targets]
        self.rho = rho
        self.rng = np.random.default_rng(seed)

    def __call__(self, z_t: np.ndarray, t: int, ctx: DenoiserContext) -> np.ndarray:
        eps = oracle_denoise(self.schedule, self.targets[ctx.view_index], z_t, t)
        if self.rho > 0:
            eps = eps + self.rho * self.rng.standard_normal(eps.shape)
        return eps


def fill_invalid(grid: GeoGrid) -> np.ndarray:
    """Replace invalid pixels with the nearest valid pixel's payload."""
    if not grid.valid.any():
        return np.full_like(grid.payload, 0.5)
    if grid.valid.all():
        return grid.payload.copy()
    _, idx = distance_transform_edt(~grid.valid, return_indices=True)
    return grid.payload[idx[0], idx[1]]


class SmoothPriorDenoiser:
    """Predicts the clean latent from the augmented conditioning alone.

    The prediction is the nearest-valid fill of the augmented RGB grid smoothed
    with two 5x5 box blurs (replicated borders), encoded at the latent factor;
    it always stays inside the conditioning payload's convex hull. The implied
    noise follows from the oracle formula, so the prediction never reacts to
    the running latent.
    """

    def __init__(self, schedule: NoiseSchedule, factor: int = 1):
        self.schedule = schedule
        self.factor = factor
        self._priors: dict[int, np.ndarray] = {}

    def prior(self, ctx: DenoiserContext) -> np.ndarray:
        if ctx.view_index not in self._priors:
            if ctx.rgb_aug is None:
                raise ValueError("smooth-prior denoiser needs the augmented RGB grid")
            img = fill_invalid(ctx.rgb_aug)
            for _ in range(2):
                img = uniform_filter(img, size=(5, 5, 1), mode="nearest")
            self._priors[ctx.view_index] = latent_encode(img, self.factor)
        return self._priors[ctx.view_index]

    def __call__(self, z_t: np.ndarray, t: int, ctx: DenoiserContext) -> np.ndarray:
        return oracle_denoise(self.schedule, self.prior(ctx), z_t, t)
