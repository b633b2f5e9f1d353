"""Evaluation: confusion metrics at fixed and optimized thresholds,
rank-based AUC, bootstrap confidence intervals, ROC data, and report
emission (JSON/CSV plus static plots).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from .errors import DataError


@dataclass
class ThresholdMetrics:
    f1: float
    acc: float
    prec: float
    rec: float
    npv: float


@dataclass
class MetricReport:
    split: str
    n: int
    auc: float
    auc_ci: tuple[float, float]
    theta_star: float
    fixed: ThresholdMetrics
    optimized: ThresholdMetrics

    def to_json(self) -> dict:
        payload = asdict(self)
        payload["auc_ci"] = list(self.auc_ci)
        return payload


def _validate(y, p):
    y = np.asarray(y, dtype=float)
    p = np.asarray(p, dtype=float)
    if y.size == 0 or y.shape != p.shape:
        raise DataError("labels and probabilities must be non-empty and aligned")
    if p.min() < 0 or p.max() > 1:
        raise DataError("probabilities must lie in [0, 1]")
    return y, p


def confusion_metrics(y, p, theta: float) -> ThresholdMetrics:
    """Metrics at threshold theta; prediction rule is p >= theta.

    Undefined ratios (no positive or no negative predictions) are
    reported as 0.
    """
    y, p = _validate(y, p)
    pred = (p >= theta).astype(float)
    tp = float(((pred == 1) & (y == 1)).sum())
    fp = float(((pred == 1) & (y == 0)).sum())
    tn = float(((pred == 0) & (y == 0)).sum())
    fn = float(((pred == 0) & (y == 1)).sum())
    prec = tp / (tp + fp) if tp + fp > 0 else 0.0
    rec = tp / (tp + fn) if tp + fn > 0 else 0.0
    npv = tn / (tn + fn) if tn + fn > 0 else 0.0
    f1 = 2 * prec * rec / (prec + rec) if prec + rec > 0 else 0.0
    acc = (tp + tn) / len(y)
    return ThresholdMetrics(f1, acc, prec, rec, npv)


def roc_auc(y, p) -> float:
    """Mann-Whitney AUC: fraction of (neg, pos) pairs ranked correctly,
    ties counted 0.5."""
    y, p = _validate(y, p)
    pos = p[y == 1]
    neg = p[y == 0]
    if len(pos) == 0 or len(neg) == 0:
        raise DataError("AUC needs both classes present")
    order = np.argsort(p, kind="mergesort")
    ranks = np.empty(len(p))
    sorted_p = p[order]
    # Average ranks over ties.
    i = 0
    while i < len(p):
        j = i
        while j + 1 < len(p) and sorted_p[j + 1] == sorted_p[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    rank_sum = ranks[y == 1].sum()
    n_pos, n_neg = len(pos), len(neg)
    return float((rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def optimize_threshold(y_val, p_val) -> float:
    """Return the F1-maximizing threshold over midpoints of consecutive
    unique scores plus 0.5; ties go to the smallest threshold."""
    y, p = _validate(y_val, p_val)
    uniq = np.unique(p)
    candidates = {0.5}
    candidates.update(((uniq[:-1] + uniq[1:]) / 2.0).tolist())
    best_theta, best_f1 = None, -1.0
    for theta in sorted(candidates):
        f1 = confusion_metrics(y, p, theta).f1
        if f1 > best_f1:
            best_theta, best_f1 = theta, f1
    return float(best_theta)


def bootstrap_ci(y, p, metric_fn, n_boot: int = 1000, seed: int = 0,
                 levels: tuple[float, float] = (2.5, 97.5)) -> tuple[float, float]:
    """Percentile bootstrap over (y, p) pairs; single-class resamples are
    redrawn."""
    y, p = _validate(y, p)
    rng = np.random.default_rng(seed)
    n = len(y)
    values = []
    while len(values) < n_boot:
        idx = rng.integers(0, n, n)
        if y[idx].min() == y[idx].max():
            continue
        values.append(metric_fn(y[idx], p[idx]))
    lo, hi = np.percentile(values, levels)
    return float(lo), float(hi)


def roc_points(y, p) -> list[tuple[float, float, float]]:
    """(fpr, tpr, threshold) triples over all score thresholds."""
    y, p = _validate(y, p)
    thresholds = np.concatenate(([np.inf], np.unique(p)[::-1]))
    n_pos = (y == 1).sum()
    n_neg = (y == 0).sum()
    points = []
    for t in thresholds:
        pred = p >= t
        tpr = float((pred & (y == 1)).sum() / n_pos) if n_pos else 0.0
        fpr = float((pred & (y == 0)).sum() / n_neg) if n_neg else 0.0
        points.append((fpr, tpr, float(t)))
    return points


def build_report(split: str, y, p, y_val=None, p_val=None,
                 n_boot: int = 1000, seed: int = 0) -> MetricReport:
    """Full metric set; theta* is optimized on (y_val, p_val) when given,
    else on (y, p)."""
    y, p = _validate(y, p)
    theta = optimize_threshold(y_val if y_val is not None else y,
                               p_val if p_val is not None else p)
    return MetricReport(
        split=split,
        n=len(y),
        auc=roc_auc(y, p),
        auc_ci=bootstrap_ci(y, p, roc_auc, n_boot=n_boot, seed=seed),
        theta_star=theta,
        fixed=confusion_metrics(y, p, 0.5),
        optimized=confusion_metrics(y, p, theta),
    )


def emit_report(reports: list[MetricReport], scores: dict[str, tuple[np.ndarray, np.ndarray]],
                out_dir: str | Path) -> list[Path]:
    """Write metrics JSON/CSV, per-split ROC CSVs, and an ROC plot.

    ``scores`` maps split tag -> (y, p) used to render ROC points.
    Returns the list of files written.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    metrics_json = out_dir / "metrics.json"
    with open(metrics_json, "w") as f:
        json.dump({r.split: r.to_json() for r in reports}, f, indent=2, sort_keys=True)
    written.append(metrics_json)

    metrics_csv = out_dir / "metrics.csv"
    with open(metrics_csv, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["split", "n", "auc", "auc_ci_lo", "auc_ci_hi", "theta_star",
                         "f1_fixed", "acc_fixed", "prec_fixed", "rec_fixed", "npv_fixed",
                         "f1_opt", "acc_opt", "prec_opt", "rec_opt", "npv_opt"])
        for r in reports:
            writer.writerow([r.split, r.n, repr(r.auc), repr(r.auc_ci[0]), repr(r.auc_ci[1]),
                             repr(r.theta_star),
                             repr(r.fixed.f1), repr(r.fixed.acc), repr(r.fixed.prec),
                             repr(r.fixed.rec), repr(r.fixed.npv),
                             repr(r.optimized.f1), repr(r.optimized.acc), repr(r.optimized.prec),
                             repr(r.optimized.rec), repr(r.optimized.npv)])
    written.append(metrics_csv)

    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 5))
    for tag, (y, p) in sorted(scores.items()):
        pts = roc_points(y, p)
        roc_csv = out_dir / (f"roc_{tag}.csv" if len(scores) > 1 else "roc.csv")
        with open(roc_csv, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["fpr", "tpr", "threshold"])
            for fpr, tpr, t in pts:
                writer.writerow([repr(fpr), repr(tpr), repr(t)])
        written.append(roc_csv)
        ax.plot([q[0] for q in pts], [q[1] for q in pts], marker=".", label=tag)
    ax.plot([0, 1], [0, 1], "k--", linewidth=0.8)
    ax.set_xlabel("FPR")
    ax.set_ylabel("TPR")
    ax.legend()
    roc_png = out_dir / "roc.png"
    fig.savefig(roc_png, dpi=100)
    plt.close(fig)
    written.append(roc_png)
    return written
