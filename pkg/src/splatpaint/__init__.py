"""splatpaint: sparse-view reconstruction via Gaussian-splat fitting,
diffusion-based multi-view outpainting, and refinement.

The package is organized around the pipeline stages:

  camera     pinhole model, ray embeddings, warping, conditioning assembly
  splat      Gaussian scene representation and differentiable CPU rasterizer
  fit        losses and Adam-based fitting (coarse and refinement)
  diffusion  noise schedule, DDIM stepping, pluggable denoisers
  outpaint   masked / scheduled / resampled denoising loop
  scenegen   procedural ground-truth scenes, reference renderer, view sampling
  metrics    PSNR and SSIM
  pipeline   orchestration, reports, strategy comparison
  cli        command-line entry points
"""

from .camera import Camera, Intrinsics, Pose
from .config import RunConfig
from .splat import Gaussian, GaussianCloud, RenderOutput, render, render_backward

__version__ = "0.1.0"

__all__ = [
    "Camera",
    "Intrinsics",
    "Pose",
    "RunConfig",
    "Gaussian",
    "GaussianCloud",
    "RenderOutput",
    "render",
    "render_backward",
    "__version__",
]
