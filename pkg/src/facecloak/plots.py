"""Matplotlib figures for analysis outputs (Agg backend, file output only)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def plot_band_profiles(profiles, path, ylabel="band energy", log_y=True):
    """Overlay SpectrumProfile curves; ``profiles`` is {label: profile}."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, prof in profiles.items():
        bands = np.arange(1, prof.num_bands + 1)
        ax.plot(bands, prof.band_energy, label=label)
    if log_y:
        ax.set_yscale("log")
    ax.set_xlabel("frequency band (shell-max)")
    ax.set_ylabel(ylabel)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_accuracy_drop(rows, path):
    """Masked-accuracy sweep: rows of (band, accuracy drop)."""
    bands = [r[0] for r in rows]
    drops = [r[1] for r in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(bands, drops, width=1.0)
    ax.set_xlabel("removed band")
    ax.set_ylabel("verification accuracy drop")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_lambda_curve(curve, path, baseline=None):
    """Ensemble-weight ablation: curve of (lambda, asr)."""
    lams = [c[0] for c in curve]
    asrs = [c[1] for c in curve]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(lams, asrs, marker="o")
    if baseline is not None:
        ax.axhline(baseline, linestyle="--", color="gray", label="baseline")
        ax.legend()
    ax.set_xlabel("ensemble weight")
    ax.set_ylabel("attack success rate")
    ax.set_ylim(0.0, 1.0)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_asr_bars(report, path):
    """Grouped ASR bars per (attack, quality) from an EvalReport."""
    rows = report.sorted_rows()
    keys = sorted({(r.attack_id, r.target_id) for r in rows})
    qualities = sorted(
        {r.jpeg_quality for r in rows}, key=lambda q: -1 if q is None else q, reverse=True
    )
    width = 0.8 / max(len(qualities), 1)
    fig, ax = plt.subplots(figsize=(max(6, 1.2 * len(keys)), 4))
    xs = np.arange(len(keys))
    for qi, q in enumerate(qualities):
        vals = []
        for key in keys:
            match = [
                r.asr
                for r in rows
                if (r.attack_id, r.target_id) == key and r.jpeg_quality == q
            ]
            vals.append(float(np.mean(match)) if match else 0.0)
        label = "no jpeg" if q is None else f"q={q}"
        ax.bar(xs + qi * width, vals, width=width, label=label)
    ax.set_xticks(xs + 0.4 - width / 2)
    ax.set_xticklabels([f"{a}\n->{t}" for a, t in keys], fontsize=7)
    ax.set_ylabel("attack success rate")
    ax.set_ylim(0.0, 1.0)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
