"""Standalone SVG line charts from schema-v1 CSV logs."""
from __future__ import annotations

from pathlib import Path

from .diagnostics import SchemaError, read_csv

CHARTS = {
    "loss": (("upper_loss",), "upper-level validation loss"),
    "accuracy": (("test_accuracy",), "test accuracy"),
    "consensus": (("consensus_x", "consensus_y", "consensus_z"), "consensus error"),
    "gradient_error": (("grad_err_f1", "grad_err_f2", "grad_err_g2y", "grad_err_g2z"), "gradient error"),
}


def plot_runs(csv_paths: list[Path], out_dir: Path, labels: list[str] | None = None) -> list[Path]:
    """One SVG per chart in :data:`CHARTS`, one curve (per column) per input CSV.

    All inputs are read and checked before anything is written.
    """
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    if labels is not None and len(labels) != len(csv_paths):
        raise ValueError(f"got {len(labels)} labels for {len(csv_paths)} CSV files")
    runs = []
    for p in csv_paths:
        recs = read_csv(p)
        if not recs:
            raise SchemaError(f"{p}: no records")
        runs.append(recs)
    labels = labels or [p.parent.name + "/" + p.stem if p.parent.name else p.stem for p in csv_paths]

    matplotlib.rcParams["svg.hashsalt"] = "dnsvrgda"
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for chart, (cols, ylabel) in CHARTS.items():
        fig, ax = plt.subplots(figsize=(6, 4))
        drawn = 0
        for label, recs in zip(labels, runs):
            it = [r.iteration for r in recs]
            for col in cols:
                ys = [getattr(r, col) for r in recs]
                if all(v is None for v in ys):
                    continue
                name = label if len(cols) == 1 else f"{label} {col}"
                ax.plot(it, [float("nan") if v is None else v for v in ys], label=name)
                drawn += 1
        if not drawn:
            plt.close(fig)
            continue
        if len(cols) > 1:
            ax.set_yscale("log")
        ax.set_xlabel("iteration")
        ax.set_ylabel(ylabel)
        ax.legend(fontsize="small")
        fig.tight_layout()
        path = out_dir / f"{chart}.svg"
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
        written.append(path)
    return written
