"""Matplotlib report figures rendered to files alongside CSV exports."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .spectrum import APSD, detect_impulses, rapsd_anisotropy


def apsd_figure(apsd: APSD, path, title: str | None = None,
                threshold_factor: float = 20.0) -> None:
    """Three-panel spectrum report: log-power heatmap (DC centered),
    radially averaged power, and per-ring anisotropy with flagged
    impulse bins marked."""
    stats = rapsd_anisotropy(apsd)
    impulses = detect_impulses(apsd, threshold_factor)
    fig, axes = plt.subplots(1, 3, figsize=(13, 4))

    centered = np.fft.fftshift(apsd.bins)
    im = axes[0].imshow(np.log1p(centered), cmap="gray", origin="lower")
    axes[0].set_title(f"{apsd.estimator} APSD (K={apsd.segments_k})")
    axes[0].set_xlabel("frequency bin")
    axes[0].set_ylabel("frequency bin")
    fig.colorbar(im, ax=axes[0], fraction=0.046, label="log(1 + power)")
    if impulses:
        rows = [fr % apsd.window_rows for fr, _, _ in impulses]
        cols = [fc % apsd.window_cols for _, fc, _ in impulses]
        axes[0].scatter(
            [(c + apsd.window_cols // 2) % apsd.window_cols for c in cols],
            [(r + apsd.window_rows // 2) % apsd.window_rows for r in rows],
            s=12, facecolors="none", edgecolors="red", linewidths=0.7,
            label=f"{len(impulses)} impulse bins",
        )
        axes[0].legend(loc="upper right", fontsize=8)

    axes[1].semilogy(stats.frequency, np.maximum(stats.power, 1e-300))
    axes[1].set_xlabel("radial frequency (cycles/pixel)")
    axes[1].set_ylabel("mean power")
    axes[1].set_title("radial profile")
    axes[1].grid(True, alpha=0.3)

    axes[2].plot(stats.frequency, stats.anisotropy)
    axes[2].set_xlabel("radial frequency (cycles/pixel)")
    axes[2].set_ylabel("variance / mean$^2$")
    axes[2].set_title("anisotropy")
    axes[2].grid(True, alpha=0.3)

    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def ct_report_figure(report, path, title: str | None = None) -> None:
    """Order-population bar chart with impulse-flagged orders highlighted."""
    fig, ax = plt.subplots(figsize=(9, 4))
    orders = np.arange(report.counts.size)
    flagged = set(report.flagged_orders)
    colors = ["crimson" if k in flagged else "steelblue" for k in orders]
    ax.bar(orders, report.counts, color=colors, width=0.9)
    ax.axhline(report.counts.mean(), color="black", lw=0.8, ls="--",
               label=f"mean {report.counts.mean():.0f}")
    ax.set_xlabel("processing order")
    ax.set_ylabel("pixel count")
    flag_note = f"{len(flagged)} orders with spectral impulses" if flagged else "no spectral impulses"
    ax.set_title(title or f"class tiling balance ({flag_note})")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
