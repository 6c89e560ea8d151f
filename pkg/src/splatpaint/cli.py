"""Command-line interface.

Subcommands cover the standalone stages (scene, render, coarse, outpaint,
refine, eval) and the orchestrated experiments (run, compare). Exit codes:
0 success, 2 configuration error, 3 stage failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .config import DENOISERS, STRATEGIES, RunConfig, config_from_sources
from .errors import ConfigError, StageError

EXIT_OK, EXIT_CONFIG, EXIT_STAGE = 0, 2, 3


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="key = value config file")
    p.add_argument("--paper-mode", action="store_true", help="reference-geometry defaults")
    p.add_argument("-o", "--output-dir", dest="output_dir")
    # every pipeline hyperparameter is a flag; file values override defaults,
    # flags override the file
    p.add_argument("--scene-seed", type=int, dest="scene_seed")
    p.add_argument("--complexity", choices=("low", "medium", "high"))
    p.add_argument("--input-views", type=int, dest="input_views")
    p.add_argument("--heldout-views", type=int, dest="heldout_views")
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--focal", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--fov-scale", type=float, dest="fov_scale")
    p.add_argument("--opacity-threshold", type=float, dest="opacity_threshold")
    p.add_argument("--steps", type=int)
    p.add_argument("--blend-steps", dest="blend_steps", help="comma list, e.g. 35,25,15")
    p.add_argument("--resample-count", type=int, dest="resample_count")
    p.add_argument("--latent-factor", type=int, dest="latent_factor")
    p.add_argument("--mask-mode", choices=("hard", "soft"), dest="mask_mode")
    p.add_argument("--reuse-blend-noise", action="store_const", const=True, dest="reuse_blend_noise")
    p.add_argument("--denoiser", choices=DENOISERS)
    p.add_argument("--noisy-rho", type=float, dest="noisy_rho")
    p.add_argument("--coarse-iters", type=int, dest="coarse_iters")
    p.add_argument("--refine-iters", type=int, dest="refine_iters")
    p.add_argument("--lambda-ssim", type=float, dest="lambda_ssim")
    p.add_argument("--lambda-perc", type=float, dest="lambda_perc")
    p.add_argument("--strategy", choices=STRATEGIES)
    p.add_argument("--novel-views", type=int, dest="novel_views")


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    overrides = {
        k: v
        for k, v in vars(args).items()
        if k not in ("command", "config", "paper_mode", "func", "rhos", "cloud",
                     "scene", "cameras", "out", "depth", "images")
        and v is not None
    }
    if "blend_steps" in overrides and isinstance(overrides["blend_steps"], str):
        overrides["blend_steps"] = tuple(
            int(v) for v in overrides["blend_steps"].replace(",", " ").split()
        )
    if getattr(args, "paper_mode", False):
        overrides["paper_mode"] = True
    return config_from_sources(args.config, overrides, paper_mode=getattr(args, "paper_mode", False))


def _cmd_scene(args) -> int:
    from .scenegen import generate_scene, save_scene

    scene = generate_scene(args.scene_seed or 0, args.complexity or "medium")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_scene(out, scene)
    print(f"wrote {out} ({len(scene.primitives)} primitives)")
    return EXIT_OK


def _cmd_render(args) -> int:
    from .camera import load_cameras, scale_intrinsics, Camera
    from .image_io import write_ppm
    from .scenegen import gt_render, load_scene

    scene = load_scene(args.scene)
    cams = load_cameras(args.cameras)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, cam in enumerate(cams):
        if args.fov_scale is not None:
            cam = Camera(scale_intrinsics(cam.intrinsics, args.fov_scale), cam.pose)
        color, depth, _ = gt_render(scene, cam)
        write_ppm(out / f"gt_{i:02d}.ppm", color)
        if args.depth:
            dmax = depth.max() if depth.max() > 0 else 1.0
            write_ppm(out / f"depth_{i:02d}.ppm", depth / dmax)
    print(f"rendered {len(cams)} views to {out}")
    return EXIT_OK


def _cmd_coarse(args) -> int:
    from .camera import load_cameras
    from .fit import LossWeights, SupervisionSet, View, optimize
    from .image_io import read_ppm
    from .pipeline import _fit_config
    from .scenegen import init_points, load_scene
    from .splat import save_cloud

    cfg = _config_from_args(args)
    scene = load_scene(args.scene)
    cams = load_cameras(args.cameras)
    images = [read_ppm(p) for p in sorted(Path(args.images).glob("*.ppm"))]
    if len(images) != len(cams):
        raise ConfigError(f"{len(images)} images vs {len(cams)} cameras")
    cloud0 = init_points(scene, cams, cfg.init_noise * scene.extent, seed=cfg.seed + 1,
                         stride=cfg.init_stride)
    views = SupervisionSet([View(im, cam, "input") for im, cam in zip(images, cams)])
    cloud = optimize(
        cloud0, views, LossWeights(cfg.lambda_ssim, cfg.lambda_perc),
        _fit_config(cfg, scene, cfg.coarse_iters, alternate=False),
        log_path=Path(args.out).with_suffix(".log"),
    )
    save_cloud(args.out, cloud)
    print(f"wrote {args.out} ({len(cloud)} Gaussians)")
    return EXIT_OK


def _cmd_outpaint(args) -> int:
    from .camera import load_cameras
    from .image_io import read_ppm, write_ppm
    from .outpaint import outpaint_views
    from .pipeline import _make_denoiser_factory, _outpaint_config, prepare
    from .scenegen import load_scene
    from .splat import load_cloud

    cfg = _config_from_args(args)
    scene = load_scene(args.scene)
    cams = load_cameras(args.cameras)
    images = [read_ppm(p) for p in sorted(Path(args.images).glob("*.ppm"))]
    coarse = load_cloud(args.cloud)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    # minimal state so the denoiser factory can find oracle targets if asked
    from .pipeline import PipelineState

    state = PipelineState(cfg, scene, cams, images, [], [], coarse, [], {})
    results = outpaint_views(
        list(zip(images, cams)),
        coarse,
        _outpaint_config(cfg),
        _make_denoiser_factory(cfg, state),
        (scene.lo, scene.hi),
        debug_dir=out / "debug" if args.debug else None,
    )
    for i, res in enumerate(results):
        write_ppm(out / f"outpainted_{i:02d}.ppm", res.image)
    print(f"wrote {len(results)} outpainted views to {out}")
    return EXIT_OK


def _cmd_refine(args) -> int:
    from .camera import load_cameras
    from .fit import LossWeights, SupervisionSet, View, optimize, reinit_points
    from .image_io import read_ppm
    from .pipeline import _fit_config
    from .scenegen import load_scene
    from .splat import load_cloud, render, save_cloud

    cfg = _config_from_args(args)
    scene = load_scene(args.scene)
    cams = load_cameras(args.cameras)
    images = [read_ppm(p) for p in sorted(Path(args.images).glob("*.ppm"))]
    out_cams = load_cameras(args.outpainted_cameras)
    out_images = [read_ppm(p) for p in sorted(Path(args.outpainted).glob("*.ppm"))]
    coarse = load_cloud(args.cloud)
    gen_views = list(zip(out_images, out_cams))
    cloud = reinit_points(
        gen_views,
        [render(coarse, cam) for cam in out_cams],
        stride=cfg.reinit_stride,
        opacity_threshold=cfg.opacity_threshold,
        scene_center=scene.center,
    )
    views = SupervisionSet(
        [View(im, cam, "input") for im, cam in zip(images, cams)]
        + [View(im, cam, "outpainted") for im, cam in gen_views]
    )
    refined = optimize(
        cloud, views, LossWeights(cfg.lambda_ssim, cfg.lambda_perc),
        _fit_config(cfg, scene, cfg.refine_iters, alternate=True),
        log_path=Path(args.out).with_suffix(".log"),
    )
    save_cloud(args.out, refined)
    print(f"wrote {args.out} ({len(refined)} Gaussians)")
    return EXIT_OK


def _cmd_eval(args) -> int:
    import json

    from .camera import load_cameras, scale_intrinsics, Camera
    from .pipeline import evaluate_views, _mean
    from .scenegen import gt_render, load_scene
    from .splat import load_cloud

    scene = load_scene(args.scene)
    cams = load_cameras(args.cameras)
    if args.fov_scale is not None:
        cams = [Camera(scale_intrinsics(c.intrinsics, args.fov_scale), c.pose) for c in cams]
    cloud = load_cloud(args.cloud)
    gts = [gt_render(scene, cam)[0] for cam in cams]
    rows = evaluate_views(cloud, gts, cams)
    report = {
        "views": rows,
        "mean_psnr": _mean(rows, "psnr"),
        "mean_ssim": _mean(rows, "ssim"),
    }
    text = json.dumps(report, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return EXIT_OK


def _cmd_run(args) -> int:
    from .pipeline import run_pipeline

    cfg = _config_from_args(args)
    report = run_pipeline(cfg)
    print(
        f"{cfg.strategy}: coarse {report['metrics']['coarse']['mean_psnr']:.2f} dB -> "
        f"final {report['metrics']['final']['mean_psnr']:.2f} dB "
        f"(report in {cfg.output_dir})"
    )
    return EXIT_OK


def _cmd_compare(args) -> int:
    from .pipeline import compare_strategies

    cfg = _config_from_args(args)
    rhos = None
    if args.rhos:
        rhos = [float(v) for v in args.rhos.replace(",", " ").split()]
    report = compare_strategies(cfg, rhos=rhos)
    for row in report["sweep"]:
        parts = ", ".join(
            f"{name} {entry['mean_ssim']:.4f}" for name, entry in row["strategies"].items()
        )
        print(f"rho={row['rho']}: SSIM {parts}")
    print(f"crossover rho: {report['crossover_rho']} (report in {cfg.output_dir})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="splatpaint",
        description="sparse-view reconstruction via splat fitting and multi-view outpainting",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("scene", help="generate a procedural scene file")
    p.add_argument("--scene-seed", type=int, default=0)
    p.add_argument("--complexity", choices=("low", "medium", "high"), default="medium")
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(func=_cmd_scene)

    p = sub.add_parser("render", help="reference-render views of a scene")
    p.add_argument("--scene", required=True)
    p.add_argument("--cameras", required=True)
    p.add_argument("--fov-scale", type=float, dest="fov_scale")
    p.add_argument("--depth", action="store_true")
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(func=_cmd_render)

    p = sub.add_parser("coarse", help="fit a coarse splat model to input views")
    _add_config_flags(p)
    p.add_argument("--scene", required=True)
    p.add_argument("--cameras", required=True)
    p.add_argument("--images", required=True, help="directory of input PPMs")
    p.add_argument("--out", required=True, help="output cloud file")
    p.set_defaults(func=_cmd_coarse)

    p = sub.add_parser("outpaint", help="outpaint input views to a wider FOV")
    _add_config_flags(p)
    p.add_argument("--scene", required=True)
    p.add_argument("--cameras", required=True)
    p.add_argument("--images", required=True)
    p.add_argument("--cloud", required=True, help="coarse cloud file")
    p.add_argument("--debug", action="store_true", help="emit per-step artifacts")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_outpaint)

    p = sub.add_parser("refine", help="re-init points and refine with generated views")
    _add_config_flags(p)
    p.add_argument("--scene", required=True)
    p.add_argument("--cameras", required=True)
    p.add_argument("--images", required=True)
    p.add_argument("--outpainted", required=True, help="directory of generated PPMs")
    p.add_argument("--outpainted-cameras", required=True, dest="outpainted_cameras")
    p.add_argument("--cloud", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_refine)

    p = sub.add_parser("eval", help="evaluate a cloud against reference renders")
    p.add_argument("--scene", required=True)
    p.add_argument("--cameras", required=True)
    p.add_argument("--cloud", required=True)
    p.add_argument("--fov-scale", type=float, dest="fov_scale")
    p.add_argument("-o", "--out")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("run", help="full pipeline (scene to report)")
    _add_config_flags(p)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("compare", help="coarse-only vs outpaint vs novel-view strategies")
    _add_config_flags(p)
    p.add_argument("--rhos", help="comma list of perturbation strengths to sweep")
    p.set_defaults(func=_cmd_compare)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (StageError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
