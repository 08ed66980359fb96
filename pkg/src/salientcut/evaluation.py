"""Confusion-matrix scores, temporal stability, and the strategy harness."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from enum import Enum

import numpy as np

from .imageio import LabelField
from .pipeline import run_strategy


class Strategy(str, Enum):
    MANUAL = "manual"
    NON_UPDATE = "non_update"
    UPDATE = "update"


@dataclass
class Counts:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    def rates(self) -> dict:
        """error, recall, precision, f_value with the degenerate conventions."""
        tp, fp, fn = self.tp, self.fp, self.fn
        error = (fp + fn) / self.total if self.total else 0.0
        recall = tp / (tp + fn) if tp + fn else 1.0
        precision = tp / (tp + fp) if tp + fp else 1.0
        # 2rp/(r+p) reduced to one integer division, so it is correctly rounded;
        # no positives anywhere gives r = p = 1 and hence F = 1
        denom = 2 * tp + fp + fn
        f = 2 * tp / denom if denom else 1.0
        return {"error": error, "recall": recall, "precision": precision, "f_value": f}


@dataclass
class MetricsReport:
    tp: int
    tn: int
    fp: int
    fn: int
    error: float
    recall: float
    precision: float
    f_value: float
    per_frame: list[dict] = field(default_factory=list)

    @classmethod
    def from_counts(cls, c: Counts, per_frame=None) -> "MetricsReport":
        return cls(c.tp, c.tn, c.fp, c.fn, **c.rates(), per_frame=per_frame or [])

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        cols = ["frame", "tp", "tn", "fp", "fn", "error", "recall", "precision", "f_value"]
        w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for row in self.per_frame:
            w.writerow({k: row[k] for k in cols})
        return buf.getvalue()


def _as_bool(m) -> np.ndarray:
    return m.mask if isinstance(m, LabelField) else np.asarray(m, bool)


def confusion(pred, truth) -> Counts:
    p, t = _as_bool(pred), _as_bool(truth)
    if p.shape != t.shape:
        raise ValueError(f"mask sizes differ: {p.shape} vs {t.shape}")
    tp = int(np.count_nonzero(p & t))
    fp = int(np.count_nonzero(p & ~t))
    fn = int(np.count_nonzero(~p & t))
    return Counts(tp, p.size - tp - fp - fn, fp, fn)


def score(predicted, truth) -> MetricsReport:
    """Pooled metrics over all frames plus a per-frame breakdown."""
    predicted, truth = list(predicted), list(truth)
    if len(predicted) != len(truth):
        raise ValueError(f"{len(predicted)} predicted frames vs {len(truth)} truth frames")
    total = Counts(0, 0, 0, 0)
    per_frame = []
    for i, (p, t) in enumerate(zip(predicted, truth)):
        c = confusion(p, t)
        total = Counts(total.tp + c.tp, total.tn + c.tn, total.fp + c.fp, total.fn + c.fn)
        per_frame.append({"frame": i, **asdict(c), **c.rates()})
    return MetricsReport.from_counts(total, per_frame)


def stability(masks) -> float:
    """Mean fraction of pixels that change label between consecutive frames."""
    masks = [_as_bool(m) for m in masks]
    if len(masks) < 2:
        raise ValueError("stability needs at least 2 frames")
    return float(np.mean([np.mean(a != b) for a, b in zip(masks, masks[1:])]))


def iou(pred, truth) -> float:
    p, t = _as_bool(pred), _as_bool(truth)
    union = np.count_nonzero(p | t)
    return float(np.count_nonzero(p & t) / union) if union else 1.0


def evaluate_strategy(frames, truth, strategy, cfg=None, seeds=None):
    """Run one strategy and score it; returns (masks, report, stability)."""
    s = Strategy(str(getattr(strategy, "value", strategy)).replace("-", "_"))
    masks = run_strategy(frames, s.value, cfg, seeds)
    return masks, score(masks, truth), stability(masks) if len(masks) > 1 else 0.0
