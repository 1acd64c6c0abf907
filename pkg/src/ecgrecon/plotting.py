"""Truth-vs-reconstruction overlay figures."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from ecgrecon.dataio import TARGET_RATE_HZ  # noqa: E402

TRUTH_COLOR = "black"
RECON_COLOR = "tab:red"


def plot_samples(duration_s: float, fs: int = TARGET_RATE_HZ) -> int:
    n = duration_s * fs
    if abs(n - round(n)) > 1e-6:
        raise ValueError(f"{duration_s} s is not a whole number of samples at {fs} Hz")
    return int(round(n))


def plot_overlay(
    truth: np.ndarray,
    recon: np.ndarray,
    leads: Sequence,
    pccs: Sequence[float | None],
    duration_s: float = 4.0,
    fs: int = TARGET_RATE_HZ,
    title: str | None = None,
):
    """One subplot per lead, single column: truth solid black, reconstruction
    dashed red, their difference filled in light red, PCC in each title."""
    n = plot_samples(duration_s, fs)
    if n > truth.shape[-1]:
        raise ValueError(f"{duration_s} s exceeds the {truth.shape[-1] / fs:.3f} s window")
    t = np.arange(n) / fs
    fig, axes = plt.subplots(len(leads), 1, figsize=(10, 1.7 * len(leads)), sharex=True,
                             squeeze=False)
    for ax, lead, y, yhat, r in zip(axes[:, 0], leads, truth, recon, pccs):
        ax.plot(t, y[:n], color=TRUTH_COLOR, lw=1.0, ls="-")
        ax.plot(t, yhat[:n], color=RECON_COLOR, lw=1.0, ls="--")
        ax.fill_between(t, y[:n], yhat[:n], color=RECON_COLOR, alpha=0.2, lw=0)
        label = "undefined" if r is None else f"{r:.3f}"
        ax.set_title(f"{getattr(lead, 'value', lead)}  PCC = {label}", fontsize=9)
        ax.set_ylabel("mV")
    axes[-1, 0].set_xlabel("time [s]")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    return fig


def save_figure(fig, out_path, raster: bool = False) -> Path:
    out_path = Path(out_path)
    if not out_path.suffix:
        out_path = out_path.with_suffix(".png" if raster else ".svg")
    out_path.parent.mkdir(parents=True, exist_ok=True)
    # fixed metadata and id salt keep vector output byte-stable across runs
    meta = {"Date": None} if out_path.suffix in (".svg", ".pdf") else {}
    with matplotlib.rc_context({"svg.hashsalt": "ecgrecon"}):
        fig.savefig(out_path, dpi=150, metadata=meta)
    plt.close(fig)
    return out_path
