"""Static SVG figures: nMSE vs training ratio, singular spectra, convergence curves."""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

# fixed salt and no date metadata keep the SVG bytes reproducible
matplotlib.rcParams["svg.hashsalt"] = "kmsv-mtl"


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def plot_nmse_vs_ratio(path, series):
    """``series`` maps method -> list of (train_fraction, mean nMSE)."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for method, pts in sorted(series.items()):
        pts = sorted(pts)
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=method)
    ax.set_xlabel("training ratio")
    ax.set_ylabel("mean nMSE")
    ax.set_yscale("log")
    ax.legend()
    _save(fig, path)


def plot_spectrum(path, spectra):
    """``spectra`` maps label -> descending singular values."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for label, values in sorted(spectra.items()):
        ax.plot(range(1, len(values) + 1), values, marker=".", label=label)
    ax.set_xlabel("index")
    ax.set_ylabel("singular value")
    ax.set_yscale("symlog", linthresh=1e-6)
    ax.legend()
    _save(fig, path)


def plot_convergence(path, curves):
    """``curves`` maps label -> objective values per iteration."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for label, values in sorted(curves.items()):
        ax.plot(range(1, len(values) + 1), values, label=label)
    ax.set_xlabel("iteration")
    ax.set_ylabel("objective")
    ax.set_yscale("log")
    ax.legend()
    _save(fig, path)
