"""Report figures, rendered headless to PNG files."""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .metrics import TABLE_COLUMNS, log_power_spectrogram  # noqa: E402

# PNG metadata without a software version keeps re-runs byte-identical across upgrades
_META = {"Software": None}


def _save(fig, path):
    fig.savefig(path, dpi=110, metadata=_META)
    plt.close(fig)
    return path


def plot_metric_bars(reports, path):
    keys = [(k, a) for k, a in TABLE_COLUMNS if any(r.aggregate[k] is not None for r in reports)]
    fig, axes = plt.subplots(1, len(keys), figsize=(2.4 * len(keys), 2.8), squeeze=False)
    for ax, (key, abbr) in zip(axes[0], keys):
        vals = [r.aggregate[key] if r.aggregate[key] is not None else np.nan for r in reports]
        ax.bar(range(len(reports)), vals, color=["C%d" % i for i in range(len(reports))])
        ax.set_xticks(range(len(reports)))
        ax.set_xticklabels([r.label for r in reports], rotation=30, ha="right", fontsize=8)
        ax.set_title(f"{abbr} ({key})", fontsize=9)
    fig.tight_layout()
    return _save(fig, path)


def plot_spectrograms(signals, path, rate=8000):
    """One log-power panel per (title, waveform) pair."""
    fig, axes = plt.subplots(len(signals), 1, figsize=(7, 1.9 * len(signals)), sharex=True, squeeze=False)
    for ax, (title, x) in zip(axes[:, 0], signals):
        s = log_power_spectrogram(np.asarray(x, dtype=np.float64))
        ax.imshow(10 * s, origin="lower", aspect="auto", cmap="magma", vmin=-100, vmax=0,
                  extent=(0, len(x) / rate, 0, rate / 2))
        ax.set_ylabel("Hz")
        ax.set_title(title, fontsize=9)
    axes[-1, 0].set_xlabel("s")
    fig.tight_layout()
    return _save(fig, path)


def plot_loss_curve(history, path):
    steps, losses = zip(*history)
    fig, ax = plt.subplots(figsize=(5, 3))
    ax.plot(steps, losses, lw=1)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    fig.tight_layout()
    return _save(fig, path)
