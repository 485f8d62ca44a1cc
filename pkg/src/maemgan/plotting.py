"""SVG figures for a finished run directory."""
from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import yaml  # noqa: E402

from .config import parse_config  # noqa: E402

CURVES = ("mode_coverage", "high_quality_ratio", "i_variance", "embedding_entropy_nats")


def read_metrics(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def read_samples(path) -> np.ndarray:
    rows = [list(map(float, line.split(","))) for line in Path(path).read_text().splitlines() if line]
    return np.asarray(rows, dtype=np.float64).reshape(len(rows), -1)


def plot_samples(samples: np.ndarray, means: np.ndarray | None, path, title: str = "") -> Path:
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.scatter(samples[:, 0], samples[:, 1], s=2, alpha=0.3, color="tab:blue", label="generated")
    if means is not None:
        ax.scatter(means[:, 0], means[:, 1], s=60, marker="x", color="tab:red", label="modes")
    ax.set_aspect("equal", adjustable="datalim")
    ax.legend(loc="upper right", fontsize=8)
    ax.set_title(title or f"{len(samples)} generated samples")
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
    return Path(path)


def plot_metrics(records: list[dict], path) -> Path:
    fig, axes = plt.subplots(len(CURVES), 1, figsize=(6, 2.2 * len(CURVES)), sharex=True)
    steps = [r["step"] for r in records]
    for ax, key in zip(axes, CURVES):
        if records:
            ax.plot(steps, [r[key] for r in records], marker=".", color="tab:green")
        else:
            ax.text(0.5, 0.5, "no evaluations", ha="center", va="center", transform=ax.transAxes)
        ax.set_ylabel(key.replace("_", " "), fontsize=8)
    axes[-1].set_xlabel("generator step")
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
    return Path(path)


def plot_run(run_dir) -> tuple[Path, Path]:
    """Write ``samples.svg`` and ``metrics.svg`` into ``run_dir``."""
    run_dir = Path(run_dir)
    needed = [run_dir / "samples_final.csv", run_dir / "metrics.jsonl"]
    missing = [str(p) for p in needed if not p.exists()]
    if missing:
        raise FileNotFoundError(f"run directory is missing: {', '.join(missing)}")
    means = None
    snapshot = run_dir / "config.snapshot"
    if snapshot.exists():
        means = parse_config(yaml.safe_load(snapshot.read_text())).dataset.build().means
    samples = read_samples(needed[0])
    records = read_metrics(needed[1])
    title = f"step {records[-1]['step']}" if records else "initial generator"
    return (plot_samples(samples, means, run_dir / "samples.svg", title),
            plot_metrics(records, run_dir / "metrics.svg"))
