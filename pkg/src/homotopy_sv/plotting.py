"""Figures rendered from a results directory.

matplotlib is an optional dependency and is imported on first use.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path


def _pyplot():
    try:
        import matplotlib
    except ImportError as exc:  # pragma: no cover - depends on the install
        raise RuntimeError("plotting needs matplotlib; install the 'plot' extra") from exc
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def _read_csv(path: Path):
    with path.open(newline="") as fh:
        return list(csv.DictReader(fh))


def render_report_figures(out_dir) -> list[Path]:
    """Write PNGs into ``out_dir/plots`` and return their paths.

    One figure per volatility trace file plus a box plot of the replicated
    estimates against the reference price.
    """
    out_dir = Path(out_dir)
    if not out_dir.is_dir():
        raise OSError(f"no results directory at {out_dir}")
    plt = _pyplot()
    plot_dir = out_dir / "plots"
    plot_dir.mkdir(exist_ok=True)
    written = []

    for trace in sorted(out_dir.glob("trace_*.csv")):
        rows = _read_csv(trace)
        t = [int(r["t"]) for r in rows]
        fig, ax = plt.subplots(figsize=(7, 3.5))
        ax.plot(t, [float(r["true_vol"]) for r in rows], label="true volatility", color="k")
        ax.plot(t, [float(r["filtered_vol_mean"]) for r in rows], label="filtered mean", ls="--")
        ax.set_xlabel("time step")
        ax.set_ylabel("volatility")
        ax.set_title(trace.stem.removeprefix("trace_"))
        ax.legend()
        fig.tight_layout()
        path = plot_dir / f"{trace.stem}.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)

    est_path = out_dir / "estimates.csv"
    if est_path.exists():
        groups: dict[str, list[float]] = {}
        for r in _read_csv(est_path):
            v = float(r["estimate"])
            if v == v:
                groups.setdefault(r["method"], []).append(v)
        ref = None
        cfg = out_dir / "config.json"
        if cfg.exists():
            ref = json.loads(cfg.read_text()).get("reference_price")
        if groups:
            fig, ax = plt.subplots(figsize=(6, 4))
            ax.boxplot(list(groups.values()), tick_labels=list(groups))
            if ref is not None:
                ax.axhline(ref, color="r", lw=1, label=f"reference {ref:g}")
                ax.legend()
            ax.set_ylabel("price estimate")
            fig.tight_layout()
            path = plot_dir / "estimates.png"
            fig.savefig(path, dpi=120)
            plt.close(fig)
            written.append(path)
    return written
