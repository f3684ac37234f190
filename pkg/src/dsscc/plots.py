"""Matplotlib figure rendering for the report paths (saved to files
alongside the delimited outputs; the CSVs remain the primary data)."""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def save_loss_curves(rows, path):
    """Training-log rows -> rate/distortion/total curves per epoch."""
    step1 = [r for r in rows if r["step"] in (0, 1)]
    xs = range(len(step1))
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.2))
    axes[0].plot(xs, [r["rate_y_bits"] for r in step1], label="feature bits")
    axes[0].plot(xs, [r["rate_z_bits"] for r in step1], label="side-info bits")
    axes[0].set_title("rate per image (bits)")
    axes[0].legend()
    axes[1].plot(xs, [r["mse"] for r in step1], color="tab:red")
    axes[1].set_title("mse ([0,1] pixels)")
    axes[2].plot(xs, [r["total"] for r in step1], color="tab:green")
    axes[2].set_title("total loss (nats)")
    for ax in axes:
        ax.set_xlabel("codec epoch")
        ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_ber_curve(rows, path):
    fig, ax = plt.subplots(figsize=(5, 3.5))
    snrs = [r["snr_db"] for r in rows]
    bers = [max(r["ber"], 1e-8) for r in rows]
    ax.semilogy(snrs, bers, "o-")
    ax.set_xlabel("SNR (dB)")
    ax.set_ylabel("post-decoding BER")
    ax.grid(alpha=0.3, which="both")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_experiment_figure(rows, path, title=""):
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
    rates = [r["rate_bits"] for r in rows]
    psnrs = [r["psnr_db"] for r in rows]
    ok = [r["frame_status"] == "ok" for r in rows]
    colors = ["tab:blue" if o else "tab:red" for o in ok]
    axes[0].scatter(rates, psnrs, s=12, c=colors)
    axes[0].set_xlabel("payload bits")
    axes[0].set_ylabel("PSNR (dB)")
    axes[1].hist([r["ms_ssim"] for r in rows], bins=20, color="tab:purple")
    axes[1].set_xlabel("MS-SSIM")
    axes[1].set_ylabel("images")
    for ax in axes:
        ax.grid(alpha=0.3)
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_bit_alloc_figure(grid, path):
    fig, ax = plt.subplots(figsize=(4, 3.5))
    im = ax.imshow(np.asarray(grid), cmap="viridis")
    fig.colorbar(im, ax=ax, label="bits per pixel site")
    ax.set_xticks([])
    ax.set_yticks([])
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_theory_gaps(gaps, path):
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.hist(np.asarray(gaps), bins=40, color="tab:cyan")
    ax.set_xlabel("bound slack (nats)")
    ax.set_ylabel("models")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
