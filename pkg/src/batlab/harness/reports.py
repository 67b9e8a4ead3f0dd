"""CSV and dependency-free SVG emission for run artifacts.

Charts are plain polylines/bars with min/max axis labels; they are build
artifacts for inspection, not an interactive UI.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path


def write_csv(path, header: list, rows: list) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _svg_frame(width, height, title):
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2}" y="16" text-anchor="middle" font-size="13" '
        f'font-family="sans-serif">{title}</text>',
    ]


_PALETTE = ("#1f6fb2", "#d1495b", "#3a7d44", "#8a5fbf", "#c98a1b", "#4a4a4a")


def svg_line_chart(path, series: dict, title: str, width: int = 640, height: int = 360,
                   x_label: str = "", y_label: str = "") -> None:
    """series: name -> (xs, ys)."""
    margin = 48
    xs_all = [x for xs, _ in series.values() for x in xs]
    ys_all = [y for _, ys in series.values() for y in ys]
    if not xs_all:
        xs_all, ys_all = [0.0], [0.0]
    x_lo, x_hi = min(xs_all), max(xs_all)
    y_lo, y_hi = min(ys_all), max(ys_all)
    if x_hi == x_lo:
        x_hi = x_lo + 1
    if y_hi == y_lo:
        y_hi = y_lo + 1

    def px(x):
        return margin + (x - x_lo) / (x_hi - x_lo) * (width - 2 * margin)

    def py(y):
        return height - margin - (y - y_lo) / (y_hi - y_lo) * (height - 2 * margin)

    parts = _svg_frame(width, height, title)
    parts.append(f'<line x1="{margin}" y1="{height - margin}" x2="{width - margin}" '
                 f'y2="{height - margin}" stroke="black"/>')
    parts.append(f'<line x1="{margin}" y1="{margin}" x2="{margin}" '
                 f'y2="{height - margin}" stroke="black"/>')
    for i, (name, (xs, ys)) in enumerate(series.items()):
        color = _PALETTE[i % len(_PALETTE)]
        pts = " ".join(f"{px(x):.1f},{py(y):.1f}" for x, y in zip(xs, ys))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        parts.append(f'<text x="{width - margin + 4}" y="{margin + 14 * i}" font-size="11" '
                     f'fill="{color}" font-family="sans-serif">{name}</text>')
    for val, anchor, x, y in (
        (x_lo, "start", margin, height - margin + 14),
        (x_hi, "end", width - margin, height - margin + 14),
        (y_lo, "end", margin - 4, height - margin),
        (y_hi, "end", margin - 4, margin + 4),
    ):
        parts.append(f'<text x="{x}" y="{y}" text-anchor="{anchor}" font-size="10" '
                     f'font-family="sans-serif">{val:.4g}</text>')
    if x_label:
        parts.append(f'<text x="{width / 2}" y="{height - 8}" text-anchor="middle" '
                     f'font-size="11" font-family="sans-serif">{x_label}</text>')
    if y_label:
        parts.append(f'<text x="14" y="{height / 2}" text-anchor="middle" font-size="11" '
                     f'font-family="sans-serif" transform="rotate(-90 14 {height / 2})">{y_label}</text>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")


def svg_bar_chart(path, labels: list, values: list, title: str,
                  width: int = 640, height: int = 360) -> None:
    margin = 48
    v_hi = max(max(values), 1e-12)
    parts = _svg_frame(width, height, title)
    span = width - 2 * margin
    bar_w = span / max(len(values), 1) * 0.7
    gap = span / max(len(values), 1)
    for i, (label, val) in enumerate(zip(labels, values)):
        h = (height - 2 * margin) * val / v_hi
        x = margin + i * gap + (gap - bar_w) / 2
        y = height - margin - h
        parts.append(f'<rect x="{x:.1f}" y="{y:.1f}" width="{bar_w:.1f}" height="{h:.1f}" '
                     f'fill="{_PALETTE[0]}"/>')
        parts.append(f'<text x="{x + bar_w / 2:.1f}" y="{height - margin + 14}" '
                     f'text-anchor="middle" font-size="10" font-family="sans-serif">{label}</text>')
        parts.append(f'<text x="{x + bar_w / 2:.1f}" y="{y - 4:.1f}" text-anchor="middle" '
                     f'font-size="9" font-family="sans-serif">{val:.3f}</text>')
    parts.append(f'<line x1="{margin}" y1="{height - margin}" x2="{width - margin}" '
                 f'y2="{height - margin}" stroke="black"/>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")


def emit_training_report(run_dir, out_dir) -> list:
    """Loss curves from a pretrain run's train_log.jsonl."""
    run_dir, out_dir = Path(run_dir), Path(out_dir)
    log = run_dir / "train_log.jsonl"
    written = []
    if not log.exists():
        return written
    steps, total, glob, loc = [], [], [], []
    with open(log) as fh:
        for line in fh:
            rec = json.loads(line)
            steps.append(rec["step"])
            total.append(rec["loss"])
            glob.append(rec["loss_global"])
            loc.append(rec["loss_local"])
    write_csv(out_dir / "loss_curves.csv", ["step", "loss", "loss_global", "loss_local"],
              list(zip(steps, total, glob, loc)))
    svg_line_chart(out_dir / "loss_curves.svg",
                   {"total": (steps, total), "global": (steps, glob), "local": (steps, loc)},
                   "training loss", x_label="step", y_label="loss")
    written += ["loss_curves.csv", "loss_curves.svg"]
    return written


def emit_probe_report(run_dir, out_dir) -> list:
    """Gate weights and layer-curve artifacts from a probe run's summary."""
    run_dir, out_dir = Path(run_dir), Path(out_dir)
    summary_path = run_dir / "probe_summary.json"
    written = []
    if not summary_path.exists():
        return written
    with open(summary_path) as fh:
        summary = json.load(fh)
    alpha = summary.get("gate_alpha")
    if alpha:
        rows = [(i, a) for i, a in enumerate(alpha)]
        write_csv(out_dir / "gate_weights.csv", ["layer", "alpha"], rows)
        svg_bar_chart(out_dir / "gate_weights.svg", [str(i) for i, _ in rows],
                      [a for _, a in rows], "learned gate weights per layer")
        written += ["gate_weights.csv", "gate_weights.svg"]
    curve = summary.get("layer_curve")
    if curve:
        rows = [(i, v) for i, v in enumerate(curve)]
        write_csv(out_dir / "layer_curve.csv", ["layer", "metric"], rows)
        svg_line_chart(out_dir / "layer_curve.svg",
                       {"linear probe": (list(range(len(curve))), curve)},
                       "per-block linear probing", x_label="layer", y_label="metric")
        written += ["layer_curve.csv", "layer_curve.svg"]
    return written


def emit_prototype_sweep(run_dirs, out_dir) -> list:
    """K-sweep chart across probe runs that share everything but K."""
    out_dir = Path(out_dir)
    points = []
    for run_dir in run_dirs:
        summary_path = Path(run_dir) / "probe_summary.json"
        if not summary_path.exists():
            continue
        with open(summary_path) as fh:
            summary = json.load(fh)
        if "n_prototypes" in summary and "val_metric" in summary:
            points.append((summary["n_prototypes"], summary["val_metric"]))
    if len(points) < 2:
        return []
    points.sort()
    write_csv(out_dir / "prototype_sweep.csv", ["n_prototypes", "metric"], points)
    svg_line_chart(out_dir / "prototype_sweep.svg",
                   {"metric": ([p[0] for p in points], [p[1] for p in points])},
                   "prototype-count sweep", x_label="prototypes", y_label="metric")
    return ["prototype_sweep.csv", "prototype_sweep.svg"]
