"""Matplotlib figures rendered next to each report."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

__all__ = ["report_figures", "compare_figures"]

_META = {"Software": "splatpaint"}  # fixed metadata keeps PNG bytes reproducible


def _save(fig, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=110, metadata=_META)
    plt.close(fig)


def report_figures(report: dict, out_dir: Path | str) -> None:
    """Per-view metric bars (coarse vs final) and iteration-loss curves."""
    out = Path(out_dir)
    coarse = report["metrics"]["coarse"]["views"]
    final = report["metrics"]["final"]["views"]
    idx = np.arange(len(final))
    for key, fname in (("psnr", "metrics_psnr.png"), ("ssim", "metrics_ssim.png")):
        fig, ax = plt.subplots(figsize=(6, 3.2))
        ax.bar(idx - 0.2, [r[key] for r in coarse], width=0.4, label="coarse")
        ax.bar(idx + 0.2, [r[key] for r in final], width=0.4, label="refined")
        ax.set_xlabel("held-out view")
        ax.set_ylabel(key.upper())
        ax.set_xticks(idx)
        ax.legend(frameon=False)
        fig.tight_layout()
        _save(fig, out / "figures" / fname)

    logs = sorted(out.glob("log_*.txt"))
    if logs:
        fig, ax = plt.subplots(figsize=(6, 3.2))
        for log in logs:
            rows = [line.split() for line in log.read_text().splitlines() if line.strip()]
            if not rows:
                continue
            ax.plot(
                [int(r[0]) for r in rows],
                [float(r[2]) for r in rows],
                label=log.stem.removeprefix("log_"),
                linewidth=0.8,
            )
        ax.set_xlabel("iteration")
        ax.set_ylabel("loss")
        ax.set_yscale("log")
        ax.legend(frameon=False)
        fig.tight_layout()
        _save(fig, out / "figures" / "loss_curves.png")


def compare_figures(report: dict, out_dir: Path | str) -> None:
    """Mean metric vs perturbation strength for each strategy."""
    out = Path(out_dir)
    rhos = [row["rho"] for row in report["sweep"]]
    names = list(report["sweep"][0]["strategies"].keys())
    for key, fname in (("mean_ssim", "compare_ssim.png"), ("mean_psnr", "compare_psnr.png")):
        fig, ax = plt.subplots(figsize=(6, 3.2))
        for name in names:
            ax.plot(
                rhos,
                [row["strategies"][name][key] for row in report["sweep"]],
                marker="o",
                label=name,
            )
        ax.set_xlabel("generator perturbation strength")
        ax.set_ylabel(key.replace("mean_", "").upper())
        ax.legend(frameon=False)
        fig.tight_layout()
        _save(fig, out / "figures" / fname)
