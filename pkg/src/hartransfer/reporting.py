"""Result aggregation: metrics reports, comparison tables and plots."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError


@dataclass
class RunRecord:
    seed: int
    fold: int
    n_per_class: int
    f1: float


@dataclass
class MetricsReport:
    """Few-shot results for one (method, target) pair.

    The headline numbers are the mean and std across seeds of the
    fold-averaged macro F1, one pair per n.
    """

    method: str
    target: str
    n_values: list[int]
    seeds: list[int]
    records: list[RunRecord]
    config_hash: str = ""
    metadata: dict = field(default_factory=dict)

    def _per_seed_means(self, n: int) -> np.ndarray:
        means = []
        for seed in self.seeds:
            scores = [r.f1 for r in self.records if r.seed == seed and r.n_per_class == n]
            if scores:
                means.append(np.mean(scores))
        return np.array(means)

    def mean_f1(self, n: int) -> float:
        return float(self._per_seed_means(n).mean())

    def std_f1(self, n: int) -> float:
        return float(self._per_seed_means(n).std())

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "target": self.target,
            "n_values": self.n_values,
            "seeds": self.seeds,
            "config_hash": self.config_hash,
            "metadata": self.metadata,
            "records": [r.__dict__ for r in self.records],
            "summary": {
                str(n): {"mean_f1": self.mean_f1(n), "std_f1": self.std_f1(n)}
                for n in self.n_values
            },
        }

    @classmethod
    def from_dict(cls, blob: dict) -> "MetricsReport":
        return cls(
            method=blob["method"],
            target=blob["target"],
            n_values=list(blob["n_values"]),
            seeds=list(blob["seeds"]),
            records=[RunRecord(**r) for r in blob["records"]],
            config_hash=blob.get("config_hash", ""),
            metadata=dict(blob.get("metadata", {})),
        )

    def save(self, out_dir: Path) -> None:
        """Write report.csv (per-run rows) and summary.json under out_dir."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "report.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["seed", "fold", "n_per_class", "f1"])
            for r in self.records:
                writer.writerow([r.seed, r.fold, r.n_per_class, f"{r.f1:.6f}"])
        (out_dir / "summary.json").write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, out_dir: Path) -> "MetricsReport":
        return cls.from_dict(json.loads((Path(out_dir) / "summary.json").read_text()))


def compare_methods(reports: list[MetricsReport], out_dir: Path) -> tuple[Path, Path]:
    """Emit a mean-F1-vs-n plot with std bands (one series per method) and a
    delimited comparison table; returns (plot_path, table_path)."""
    if not reports:
        raise ConfigurationError("no reports to compare")
    n_grid = reports[0].n_values
    for report in reports[1:]:
        if report.n_values != n_grid:
            raise ConfigurationError(
                f"n grids differ: {report.method} has {report.n_values}, expected {n_grid}"
            )
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    target = reports[0].target

    table_path = out_dir / f"{target}_comparison.csv"
    with open(table_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "target", "n_per_class", "mean_f1", "std_f1"])
        for report in reports:
            for n in n_grid:
                writer.writerow(
                    [report.method, report.target, n,
                     f"{report.mean_f1(n):.6f}", f"{report.std_f1(n):.6f}"]
                )

    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    for report in reports:
        means = np.array([report.mean_f1(n) for n in n_grid])
        stds = np.array([report.std_f1(n) for n in n_grid])
        ax.plot(n_grid, means, marker="o", label=report.method)
        ax.fill_between(n_grid, means - stds, means + stds, alpha=0.2)
    ax.set_xscale("log")
    ax.set_xticks(n_grid)
    ax.set_xticklabels([str(n) for n in n_grid])
    ax.set_xlabel("labeled windows per class")
    ax.set_ylabel("macro F1")
    ax.set_title(target)
    ax.legend()
    fig.tight_layout()
    plot_path = out_dir / f"{target}_fewshot.png"
    fig.savefig(plot_path, dpi=120)
    plt.close(fig)
    return plot_path, table_path
