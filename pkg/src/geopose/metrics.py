"""ADD / ADD-S pose-error metrics, threshold accuracy, AUC, report files."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

AUC_MAX_THRESHOLD_M = 0.1
DIAMETER_FRACTION = 0.1


def add(pred, gt, model):
    """Mean matched-vertex distance between predicted- and gt-transformed models."""
    p = pred.R @ model.vertices.T + pred.t[:, None]
    g = gt.R @ model.vertices.T + gt.t[:, None]
    return float(np.linalg.norm(p - g, axis=0).mean())


def adds(pred, gt, model, block=256):
    """Mean closest-point distance: for each predicted-transformed vertex, the
    distance to the nearest gt-transformed vertex, averaged."""
    p = model.vertices @ pred.R.T + pred.t
    g = model.vertices @ gt.R.T + gt.t
    mins = np.empty(len(p))
    for i in range(0, len(p), block):
        chunk = p[i:i + block]
        d2 = ((chunk[:, None, :] - g[None, :, :]) ** 2).sum(axis=2)
        mins[i:i + block] = d2.min(axis=1)
    return float(np.sqrt(mins).mean())


def add_01d(distances, diameter, fraction=DIAMETER_FRACTION):
    """Fraction of samples with distance strictly below fraction*diameter."""
    if diameter <= 0:
        raise ValueError("diameter must be positive")
    d = np.asarray(distances, dtype=np.float64)
    if d.size == 0:
        return 0.0
    return float((d < fraction * diameter).mean())


def adds_auc(distances, max_threshold_m=AUC_MAX_THRESHOLD_M):
    """Normalized area under the accuracy-vs-threshold step curve on
    [0, max]; closed form: mean of clamp(1 - d/max, 0, 1)."""
    if max_threshold_m <= 0:
        raise ValueError("max_threshold_m must be positive")
    d = np.asarray(distances, dtype=np.float64)
    if d.size == 0:
        return 0.0
    return float(np.clip(1.0 - d / max_threshold_m, 0.0, 1.0).mean())


@dataclass
class MetricReport:
    sample_ids: list
    add_m: list
    adds_m: list
    diameter_m: float
    symmetric: bool
    add_01d_accuracy: float = field(init=False)
    adds_01d_accuracy: float = field(init=False)
    primary_01d_accuracy: float = field(init=False)
    adds_auc: float = field(init=False)

    def __post_init__(self):
        self.add_01d_accuracy = add_01d(self.add_m, self.diameter_m)
        self.adds_01d_accuracy = add_01d(self.adds_m, self.diameter_m)
        # the ADD(-S) convention: symmetric objects score on ADD-S
        primary = self.adds_m if self.symmetric else self.add_m
        self.primary_01d_accuracy = add_01d(primary, self.diameter_m)
        self.adds_auc = adds_auc(self.adds_m)

    @property
    def count(self):
        return len(self.sample_ids)

    def to_dict(self):
        return {
            "count": self.count,
            "diameter_m": self.diameter_m,
            "symmetric": self.symmetric,
            "add_01d_accuracy": self.add_01d_accuracy,
            "adds_01d_accuracy": self.adds_01d_accuracy,
            "primary_01d_accuracy": self.primary_01d_accuracy,
            "adds_auc": self.adds_auc,
            "add_m": [float(v) for v in self.add_m],
            "adds_m": [float(v) for v in self.adds_m],
            "sample_ids": list(self.sample_ids),
        }


def write_report(report, out_dir):
    """metrics.json + metrics.csv + accuracy-threshold curve as SVG."""
    os.makedirs(out_dir, exist_ok=True)
    _atomic_write(os.path.join(out_dir, "metrics.json"),
                  json.dumps(report.to_dict(), indent=1) + "\n")
    thr = DIAMETER_FRACTION * report.diameter_m
    lines = ["sample_id,add_m,adds_m,pass_01d"]
    for sid, a, s in zip(report.sample_ids, report.add_m, report.adds_m):
        primary = s if report.symmetric else a
        lines.append(f"{sid},{a!r},{s!r},{int(primary < thr)}")
    _atomic_write(os.path.join(out_dir, "metrics.csv"), "\n".join(lines) + "\n")
    _atomic_write(os.path.join(out_dir, "curve.svg"), _curve_svg(report))


def _curve_svg(report, width=400, height=300, margin=40):
    """Accuracy vs ADD-S threshold polyline over [0, AUC cap]."""
    d = np.asarray(report.adds_m, dtype=np.float64)
    xs = np.linspace(0.0, AUC_MAX_THRESHOLD_M, 101)
    ys = [(d < x).mean() if d.size else 0.0 for x in xs]
    pts = " ".join(
        f"{margin + x / AUC_MAX_THRESHOLD_M * (width - 2 * margin):.1f},"
        f"{height - margin - y * (height - 2 * margin):.1f}"
        for x, y in zip(xs, ys))
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">\n'
        f'<rect width="{width}" height="{height}" fill="white"/>\n'
        f'<polyline points="{pts}" fill="none" stroke="steelblue" stroke-width="2"/>\n'
        f'<text x="{width // 2}" y="{height - 8}" text-anchor="middle" font-size="12">'
        f'threshold (m), AUC={report.adds_auc:.4f}</text>\n</svg>\n')


def _atomic_write(path, text):
    tmp = path + ".tmp"
    with open(tmp, "w") as f:
        f.write(text)
    os.replace(tmp, path)
