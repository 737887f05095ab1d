"""Report figures rendered to PNG files.

Uses the Agg backend so rendering works headless. PNG metadata is
pinned so the same inputs produce the same bytes run to run.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

_SAVE_KW = {"dpi": 120, "metadata": {"Software": "edgedenoise"}}


def _deployment_figure(comparison, path: Path) -> None:
    fig, (ax_lat, ax_mem) = plt.subplots(1, 2, figsize=(8, 3.2))
    labels = ["fp32", "int8"]
    lat = [
        comparison.fp32_latency.mean_ms_per_clip,
        comparison.int8_latency.mean_ms_per_clip,
    ]
    ax_lat.bar(labels, lat, color=["#4878d0", "#ee854a"])
    ax_lat.set_ylabel("mean ms per clip")
    ax_lat.set_title(f"latency (speedup {comparison.speedup:.2f}x)")
    mem = [comparison.fp32_bytes / 1e6, comparison.int8_bytes / 1e6]
    ax_mem.bar(labels, mem, color=["#4878d0", "#ee854a"])
    ax_mem.set_ylabel("parameter footprint (MB)")
    ax_mem.set_title(f"memory (-{comparison.reduction_percent:.1f}%)")
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def _stoi_figure(eval_reports, path: Path) -> None:
    conditions: list[float] = []
    for rep in eval_reports:
        for cond in rep.by_condition:
            if cond not in conditions:
                conditions.append(cond)
    conditions.sort(reverse=True)
    slots = ["overall"] + [f"{c:g} dB" for c in conditions]
    fig, ax = plt.subplots(figsize=(1.2 + 1.4 * len(slots), 3.4))
    width = 0.8 / max(1, len(eval_reports))
    for i, rep in enumerate(eval_reports):
        vals = [rep.overall.get("stoi", 0.0)]
        vals += [rep.by_condition.get(c, {}).get("stoi", 0.0) for c in conditions]
        xs = [j + i * width for j in range(len(slots))]
        ax.bar(xs, vals, width=width, label=rep.label or f"set {i}")
    ax.set_xticks([j + 0.4 - width / 2 for j in range(len(slots))])
    ax.set_xticklabels(slots)
    ax.set_ylabel("median STOI")
    ax.set_ylim(0.0, 1.05)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def render_report_figures(comparison, eval_reports, out_dir: str | Path) -> list[Path]:
    """Render the deployment panel and, when eval data exists, the
    per-condition intelligibility bars. Returns the written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    dep = out_dir / "deployment.png"
    _deployment_figure(comparison, dep)
    paths.append(dep)
    if eval_reports:
        st = out_dir / "stoi_medians.png"
        _stoi_figure(eval_reports, st)
        paths.append(st)
    return paths
