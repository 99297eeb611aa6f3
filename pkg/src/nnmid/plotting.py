"""SVG figures. Every figure has a CSV export of the same data elsewhere;
plots only render it."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# Fixed salt and no date make the SVG output reproducible.
matplotlib.rcParams["svg.hashsalt"] = "nnmid"


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def plot_stabilization(diagram, path):
    fig, ax = plt.subplots(figsize=(7, 4.5))
    groups = {
        "new": ([], [], dict(marker=".", color="0.6", ls="")),
        "frequency": ([], [], dict(marker="x", color="tab:orange", ls="")),
        "damping": ([], [], dict(marker="+", color="tab:blue", ls="")),
        "stable": ([], [], dict(marker="o", mfc="none", color="tab:green", ls="")),
    }
    for e in diagram.entries:
        key = ("stable" if e.fully_stable else "damping" if e.stable_damp
               else "frequency" if e.stable_freq else "new")
        groups[key][0].append(e.frequency)
        groups[key][1].append(e.order)
    for name, (f, n, style) in groups.items():
        ax.plot(f, n, label=name, **style)
    ax.set_xlabel("Frequency (Hz)")
    ax.set_ylabel("Model order")
    ax.set_xlim(*diagram.band)
    ax.legend(loc="upper right", fontsize=8)
    return _save(fig, path)


def plot_coefficients(estimate, labels, path):
    n = estimate.values.shape[1]
    fig, axes = plt.subplots(n, 2, figsize=(8, 2.2 * n), squeeze=False, sharex=True)
    for a in range(n):
        axes[a, 0].plot(estimate.frequencies, estimate.values[:, a].real)
        axes[a, 1].plot(estimate.frequencies, estimate.values[:, a].imag)
        axes[a, 0].set_ylabel(labels[a] if a < len(labels) else f"c{a + 1}")
    axes[0, 0].set_title("Real part")
    axes[0, 1].set_title("Imaginary part")
    axes[-1, 0].set_xlabel("Frequency (Hz)")
    axes[-1, 1].set_xlabel("Frequency (Hz)")
    fig.tight_layout()
    return _save(fig, path)


def plot_backbones(branches, path, labels=None, metric="amplitude"):
    """Log-amplitude versus frequency for one or more branches."""
    fig, ax = plt.subplots(figsize=(6, 4.5))
    for i, br in enumerate(branches):
        amps = br.amplitudes if metric == "amplitude" else br.fundamental_amplitudes
        label = labels[i] if labels else f"mode {br.mode + 1}"
        ax.semilogy(br.frequencies, amps, label=label)
    ax.set_xlabel("Frequency (Hz)")
    ax.set_ylabel("Amplitude (m)")
    ax.legend(fontsize=8)
    return _save(fig, path)


def plot_fep(branches, path, labels=None):
    fig, ax = plt.subplots(figsize=(6, 4.5))
    for i, br in enumerate(branches):
        label = labels[i] if labels else f"mode {br.mode + 1}"
        ax.semilogx(br.energies, br.frequencies, label=label)
    ax.set_xlabel("Energy (J)")
    ax.set_ylabel("Frequency (Hz)")
    ax.legend(fontsize=8)
    return _save(fig, path)


def plot_orbits(orbits, path, axis_labels=("q1", "q2")):
    """Configuration-space orbits, one curve per ``(amplitude, (n, 2) array)``."""
    fig, ax = plt.subplots(figsize=(5, 5))
    for amp, xy in orbits:
        xy = np.asarray(xy)
        ax.plot(np.append(xy[:, 0], xy[0, 0]), np.append(xy[:, 1], xy[0, 1]),
                label=f"{amp:.2e}")
    ax.set_xlabel(axis_labels[0])
    ax.set_ylabel(axis_labels[1])
    ax.legend(title="amplitude", fontsize=8)
    return _save(fig, path)


def plot_appropriation(result, path):
    fig, (a1, a2) = plt.subplots(2, 1, figsize=(6, 6), sharex=True)
    a1.plot(result.frequencies, result.indicator, "o-", ms=3)
    a1.set_ylabel("Indicator")
    a1.set_ylim(0, 1.05)
    a2.plot(result.frequencies, result.amplitude, "o-", ms=3)
    a2.set_ylabel("Amplitude (m)")
    a2.set_xlabel("Frequency (Hz)")
    if result.index >= 0:
        for ax in (a1, a2):
            ax.axvline(result.frequency, color="0.5", ls="--")
    return _save(fig, path)


def plot_comparison(branch_amp, branch_freq, ridge_amp, ridge_freq, path):
    fig, ax = plt.subplots(figsize=(6, 4.5))
    ax.semilogy(ridge_freq, ridge_amp, color="k", label="wavelet ridge")
    ax.semilogy(branch_freq, branch_amp, color="tab:orange", label="backbone")
    ax.set_xlabel("Frequency (Hz)")
    ax.set_ylabel("Amplitude (m)")
    ax.legend(fontsize=8)
    return _save(fig, path)
