"""Frame-wise and segmental metrics for action segmentation.

All scores are percentages. Segments are half-open ``[start, end)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Hashable, NamedTuple, Sequence

import numpy as np

F1_THRESHOLDS = (10, 25, 50)


class Segment(NamedTuple):
    label: Hashable
    start: int
    end: int


def frames_to_segments(labels: Sequence) -> list[Segment]:
    """Run-length encode a frame-wise label sequence."""
    labels = list(labels)
    if not labels:
        raise ValueError("cannot segment an empty label sequence")
    segs = []
    start = 0
    for t in range(1, len(labels) + 1):
        if t == len(labels) or labels[t] != labels[start]:
            segs.append(Segment(labels[start], start, t))
            start = t
    return segs


def segments_to_frames(segments: Sequence[Segment]) -> list:
    validate_segments(segments)
    out = []
    for seg in segments:
        out.extend([seg.label] * (seg.end - seg.start))
    return out


def validate_segments(segments: Sequence[Segment]) -> None:
    """Raise ValueError unless segments are non-empty, contiguous from 0, and ordered."""
    expected = 0
    for seg in segments:
        if seg.start >= seg.end:
            raise ValueError(f"empty or reversed segment {tuple(seg)}")
        if seg.start < expected:
            raise ValueError(f"segment {tuple(seg)} overlaps the previous one")
        if seg.start > expected:
            raise ValueError(f"gap between frame {expected} and segment {tuple(seg)}")
        expected = seg.end


def _pair(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction has {pred.shape} frames, ground truth {gt.shape}")
    return pred, gt


def accuracy(pred, gt) -> float:
    pred, gt = _pair(pred, gt)
    if pred.size == 0:
        raise ValueError("empty sequences")
    return 100.0 * float(np.mean(pred == gt))


def f1_macro(pred, gt, n_classes: int) -> float:
    """Mean per-class frame F1 over ``range(n_classes)``.

    A class absent from both sequences scores 0.
    """
    pred, gt = _pair(pred, gt)
    scores = []
    for c in range(n_classes):
        tp = np.sum((pred == c) & (gt == c))
        fp = np.sum((pred == c) & (gt != c))
        fn = np.sum((pred != c) & (gt == c))
        denom = 2 * tp + fp + fn
        scores.append(2 * tp / denom if denom else 0.0)
    return 100.0 * float(np.mean(scores))


def levenshtein(a: Sequence, b: Sequence) -> int:
    prev = list(range(len(b) + 1))
    for i in range(1, len(a) + 1):
        cur = [i] + [0] * len(b)
        for j in range(1, len(b) + 1):
            cost = 0 if a[i - 1] == b[j - 1] else 1
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + cost)
        prev = cur
    return prev[-1]


def edit_score(pred_segs: Sequence[Segment], gt_segs: Sequence[Segment]) -> float:
    p = [s.label for s in pred_segs]
    g = [s.label for s in gt_segs]
    n = max(len(p), len(g))
    if n == 0:
        return 100.0
    return 100.0 * (1.0 - levenshtein(p, g) / n)


def segment_iou(a: Segment, b: Segment) -> float:
    inter = min(a.end, b.end) - max(a.start, b.start)
    if inter <= 0:
        return 0.0
    union = max(a.end, b.end) - min(a.start, b.start)
    return inter / union


def match_segments(pred_segs: Sequence[Segment], gt_segs: Sequence[Segment], k: float):
    """Greedy IoU matching in temporal order of predictions. Returns (tp, fp, fn)."""
    used = [False] * len(gt_segs)
    tp = fp = 0
    for p in sorted(pred_segs, key=lambda s: s.start):
        best, best_iou = -1, 0.0
        for j, g in enumerate(gt_segs):
            if used[j] or g.label != p.label:
                continue
            iou = segment_iou(p, g)
            if iou > best_iou:
                best, best_iou = j, iou
        if best >= 0 and best_iou > k / 100.0:
            used[best] = True
            tp += 1
        else:
            fp += 1
    return tp, fp, len(gt_segs) - tp


def f1_at_k(pred_segs: Sequence[Segment], gt_segs: Sequence[Segment], k: float) -> float:
    """Segmental F1 at IoU threshold ``k`` percent (strictly greater than)."""
    for segs in (pred_segs, gt_segs):
        for s in segs:
            if s.start >= s.end:
                raise ValueError(f"malformed segment {tuple(s)}")
    tp, fp, fn = match_segments(pred_segs, gt_segs, k)
    denom = 2 * tp + fp + fn
    if denom == 0:
        return 100.0
    return 100.0 * 2 * tp / denom


def competitive_ratio(perf_delayed: float, perf_best_offline: float) -> float:
    if perf_best_offline == 0:
        raise ZeroDivisionError("best offline performance is zero")
    return perf_delayed / perf_best_offline


def local_competitive_ratio(best_bf: float, best_rr: float) -> float:
    """Best BF over best RR in one delay interval; above 1 means BF wins."""
    if best_rr == 0:
        raise ZeroDivisionError("best RR performance is zero")
    return best_bf / best_rr


@dataclass
class MetricsReport:
    accuracy: float
    f1_macro: float
    edit_score: float
    f1_at: dict[int, float] = field(default_factory=dict)
    fw_frames: int | None = None
    fw_seconds: float | None = None

    def to_dict(self) -> dict:
        d = {"accuracy": self.accuracy, "f1_macro": self.f1_macro, "edit": self.edit_score}
        for k in sorted(self.f1_at):
            d[f"f1@{k}"] = self.f1_at[k]
        if self.fw_frames is not None:
            d["fw_frames"] = self.fw_frames
            d["fw_seconds"] = self.fw_seconds
        return d


METRIC_KEYS = ("accuracy", "f1_macro", "edit") + tuple(f"f1@{k}" for k in F1_THRESHOLDS)


def evaluate(pred, gt, n_classes: int, fw_frames: int | None = None,
             fw_seconds: float | None = None) -> MetricsReport:
    pred_segs = frames_to_segments(list(np.asarray(pred)))
    gt_segs = frames_to_segments(list(np.asarray(gt)))
    return MetricsReport(
        accuracy=accuracy(pred, gt),
        f1_macro=f1_macro(pred, gt, n_classes),
        edit_score=edit_score(pred_segs, gt_segs),
        f1_at={k: f1_at_k(pred_segs, gt_segs, k) for k in F1_THRESHOLDS},
        fw_frames=fw_frames,
        fw_seconds=fw_seconds,
    )


def summarize(reports: Sequence[MetricsReport]) -> dict:
    """Uniform mean and population std of every metric across videos."""
    if not reports:
        raise ValueError("no reports to summarize")
    rows = [r.to_dict() for r in reports]
    out = {"n_videos": len(rows), "mean": {}, "std": {}}
    for key in METRIC_KEYS:
        vals = np.array([row[key] for row in rows], dtype=float)
        out["mean"][key] = float(vals.mean())
        out["std"][key] = float(vals.std())
    return out
