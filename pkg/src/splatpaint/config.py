"""Run configuration: defaults, plain-text config files, and flag overrides.

A config file holds ``key = value`` lines ('#' comments allowed) whose keys
match :class:`RunConfig` field names; command-line flags override file values.
Desk-scale defaults keep runs fast; ``paper_mode`` switches to the reference
geometry (512x384, latent factor 8, full iteration counts) and then requires
resolutions that are multiples of 64.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError

__all__ = ["RunConfig", "load_config_file", "parse_value", "config_from_sources"]

STRATEGIES = ("coarse-only", "outpaint", "novel-view-augment")
DENOISERS = ("oracle", "noisy_oracle", "smooth_prior")


@dataclass
class RunConfig:
    # scene
    scene_seed: int = 0
    complexity: str = "medium"
    # cameras / views
    input_views: int = 6
    heldout_views: int = 4
    width: int = 128
    height: int = 96
    focal: float = 120.0
    # master seed for everything except the scene itself
    seed: int = 0
    # outpainting
    fov_scale: float = 0.6
    opacity_threshold: float = 0.6
    steps: int = 50
    blend_steps: tuple[int, ...] | None = None
    resample_count: int = 3
    latent_factor: int = 1
    mask_mode: str = "hard"
    reuse_blend_noise: bool = False
    denoiser: str = "smooth_prior"
    noisy_rho: float = 0.1
    # fitting
    coarse_iters: int = 2000
    refine_iters: int = 1500
    lambda_ssim: float = 0.2
    lambda_perc: float = 0.1
    lr_mu_factor: float = 2e-3  # multiplied by the scene extent
    lr_scale: float = 5e-3
    lr_alpha: float = 5e-2
    lr_rgb: float = 2.5e-2
    init_noise: float = 0.01  # fraction of scene extent
    init_stride: int = 4
    reinit_stride: int = 4
    # strategy / experiment
    strategy: str = "outpaint"
    novel_views: int = 0  # 0 = one between each pair of inputs
    paper_mode: bool = False
    output_dir: str = "runs/out"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if self.denoiser not in DENOISERS:
            raise ConfigError(f"denoiser must be one of {DENOISERS}, got {self.denoiser!r}")
        if self.paper_mode:
            if self.width % 64 or self.height % 64:
                raise ConfigError(
                    f"paper mode needs dimensions that are multiples of 64, got "
                    f"{self.width}x{self.height}"
                )
        elif self.width % 2 or self.height % 2:
            raise ConfigError(f"dimensions must be even, got {self.width}x{self.height}")
        if self.input_views < 1 or self.heldout_views < 0:
            raise ConfigError("need >= 1 input views and >= 0 held-out views")
        if self.coarse_iters < 0 or self.refine_iters < 0:
            raise ConfigError("iteration counts must be >= 0")
        if not 0.0 < self.fov_scale < 1.0:
            raise ConfigError(f"fov_scale must be in (0, 1), got {self.fov_scale}")

    @classmethod
    def paper_defaults(cls) -> "RunConfig":
        """Reference-geometry defaults (every hyperparameter at its stated value)."""
        return cls(
            width=512,
            height=384,
            focal=480.0,
            latent_factor=8,
            coarse_iters=10_000,
            refine_iters=7_000,
            paper_mode=True,
        )

    def echo(self) -> dict:
        d = dataclasses.asdict(self)
        d["blend_steps"] = list(self.blend_steps) if self.blend_steps is not None else None
        return d


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(RunConfig)}


def parse_value(key: str, raw: str):
    """Parse a config-file value string into the field's type."""
    if key not in _FIELD_TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    raw = raw.strip()
    ftype = _FIELD_TYPES[key]
    if key == "blend_steps":
        if raw.lower() in ("none", ""):
            return None
        return tuple(int(v) for v in raw.replace(",", " ").split())
    if ftype == "int":
        return int(raw)
    if ftype == "float":
        return float(raw)
    if ftype == "bool":
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"cannot parse boolean {key} = {raw!r}")
    return raw


def load_config_file(path: Path | str) -> dict:
    """Read ``key = value`` pairs from a config file."""
    values: dict = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        values[key] = parse_value(key, raw)
    return values


def config_from_sources(
    file: Path | str | None = None,
    overrides: dict | None = None,
    paper_mode: bool = False,
) -> RunConfig:
    """Build a config from defaults, an optional file, and explicit overrides."""
    base = RunConfig.paper_defaults() if paper_mode else RunConfig()
    values = dataclasses.asdict(base)
    values["blend_steps"] = base.blend_steps
    if file is not None:
        values.update(load_config_file(file))
    if overrides:
        for key, val in overrides.items():
            if key not in _FIELD_TYPES:
                raise ConfigError(f"unknown config key {key!r}")
            if val is not None:
                values[key] = val
    try:
        return RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
