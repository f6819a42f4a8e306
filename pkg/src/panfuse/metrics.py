"""Evaluation metrics: semantic mIoU and panoptic PQ/SQ/RQ.

Segments are matched greedily at IoU > 0.5, which is provably unique;
ground-truth ignore regions are excluded from IoU denominators, and
unmatched predictions mostly covered by ignore are not penalized.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import INSTANCE_BASE, DenseMap, LabelSpec, PanopticMap, ValidationError


@dataclass
class ClassStats:
    iou_sum: float = 0.0
    tp: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def denominator(self) -> float:
        return self.tp + 0.5 * self.fp + 0.5 * self.fn

    @property
    def pq(self) -> float:
        d = self.denominator
        return self.iou_sum / d if d > 0 else 0.0

    @property
    def sq(self) -> float:
        return self.iou_sum / self.tp if self.tp > 0 else 0.0

    @property
    def rq(self) -> float:
        d = self.denominator
        return self.tp / d if d > 0 else 0.0


@dataclass
class EvalReport:
    """Per-class and aggregate metrics; combinable across images by summing
    the underlying counts before the final division."""

    iou: dict[int, float] = field(default_factory=dict)
    confusion: np.ndarray | None = None
    stats: dict[int, ClassStats] = field(default_factory=dict)
    matched_ious: list[tuple[int, int, int, float]] = field(default_factory=list)

    @property
    def miou(self) -> float:
        if not self.iou:
            return float("nan")
        return float(np.mean(list(self.iou.values())))

    def _mean(self, attr: str) -> float:
        vals = [getattr(s, attr) for s in self.stats.values() if s.denominator > 0]
        return float(np.mean(vals)) if vals else float("nan")

    @property
    def pq(self) -> float:
        return self._mean("pq")

    @property
    def sq(self) -> float:
        return self._mean("sq")

    @property
    def rq(self) -> float:
        return self._mean("rq")

    def to_dict(self, labels: LabelSpec | None = None) -> dict:
        def name(c):
            return labels.name_of(c) if labels is not None else str(c)

        per_class = {}
        for c in sorted(set(self.iou) | set(self.stats)):
            entry: dict = {}
            if c in self.iou:
                entry["IoU"] = self.iou[c]
            if c in self.stats:
                s = self.stats[c]
                entry.update(PQ=s.pq, SQ=s.sq, RQ=s.rq)
            per_class[name(c)] = entry
        counts = {
            name(c): {"TP": s.tp, "FP": s.fp, "FN": s.fn}
            for c, s in sorted(self.stats.items())
        }
        return {
            "mIoU": self.miou,
            "PQ": self.pq,
            "SQ": self.sq,
            "RQ": self.rq,
            "per_class": per_class,
            "counts": counts,
        }


def merge_reports(a: EvalReport, b: EvalReport) -> EvalReport:
    """Streaming aggregation: sum confusion matrices and PQ count statistics."""
    out = EvalReport()
    if a.confusion is not None or b.confusion is not None:
        if a.confusion is None:
            out.confusion = b.confusion.copy()
        elif b.confusion is None:
            out.confusion = a.confusion.copy()
        else:
            out.confusion = a.confusion + b.confusion
        out.iou = _iou_from_confusion(out.confusion)
    for src in (a, b):
        for c, s in src.stats.items():
            dst = out.stats.setdefault(c, ClassStats())
            dst.iou_sum += s.iou_sum
            dst.tp += s.tp
            dst.fp += s.fp
            dst.fn += s.fn
        out.matched_ious.extend(src.matched_ious)
    return out


def _iou_from_confusion(conf: np.ndarray) -> dict[int, float]:
    n = conf.shape[0] - 1  # last column collects invalid predictions
    tp = np.diag(conf)[:n]
    fp = conf.sum(axis=0)[:n] - tp
    fn = conf[:n].sum(axis=1) - tp
    union = tp + fp + fn
    return {int(c): float(tp[c] / union[c]) for c in range(n) if union[c] > 0}


def miou(pred: DenseMap, gt: DenseMap, labels: LabelSpec) -> EvalReport:
    """Semantic IoU per class and its mean over classes with non-empty union.

    GT ignore pixels are excluded entirely; predicted ids outside the catalog
    count against the ground-truth class only.
    """
    p = pred.plane().astype(np.int64)
    g = gt.plane().astype(np.int64)
    if p.shape != g.shape:
        raise ValidationError(f"shape mismatch: pred {p.shape} vs gt {g.shape}")
    n = labels.n_classes
    valid = g != labels.ignore_id
    g = g[valid]
    p = p[valid]
    if (g >= n).any() or (g < 0).any():
        raise ValidationError("ground-truth class id outside the label spec")
    p = np.where((p >= 0) & (p < n), p, n)  # invalid/ignore predictions -> spill column
    conf = np.bincount(g * (n + 1) + p, minlength=n * (n + 1)).reshape(n, n + 1)
    report = EvalReport(confusion=conf)
    report.iou = _iou_from_confusion(conf)
    return report


def panoptic_quality(pred: PanopticMap, gt: PanopticMap, labels: LabelSpec) -> EvalReport:
    """PQ/SQ/RQ with the standard matching and void protocol.

    Segments of equal class match when IoU > 0.5; unmatched predictions whose
    area lies more than half inside GT ignore regions are discarded rather
    than counted as false positives.
    """
    if pred.pan.shape != gt.pan.shape:
        raise ValidationError("panoptic map shapes differ")
    for pm in (pred, gt):
        cls = pm.pan // INSTANCE_BASE
        bad = (cls != labels.ignore_id) & (cls >= labels.n_classes)
        if bad.any():
            raise ValidationError(f"pan id {int(pm.pan[bad][0])} encodes an unknown class")

    void_gt = labels.ignore_id * INSTANCE_BASE
    void_pred = labels.ignore_id * INSTANCE_BASE

    gt_flat = gt.pan.astype(np.int64).ravel()
    pred_flat = pred.pan.astype(np.int64).ravel()

    keys, counts = np.unique(gt_flat << 32 | pred_flat, return_counts=True)
    pair_gt = keys >> 32
    pair_pred = keys & 0xFFFFFFFF

    gt_ids, gt_counts = np.unique(gt_flat, return_counts=True)
    pred_ids, pred_counts = np.unique(pred_flat, return_counts=True)
    gt_area = dict(zip(gt_ids.tolist(), gt_counts.tolist()))
    pred_area = dict(zip(pred_ids.tolist(), pred_counts.tolist()))

    pred_void_overlap: dict[int, int] = {}
    for gp, pp, cnt in zip(pair_gt.tolist(), pair_pred.tolist(), counts.tolist()):
        if gp == void_gt:
            pred_void_overlap[pp] = pred_void_overlap.get(pp, 0) + cnt

    stats: dict[int, ClassStats] = {}
    matched_gt: set[int] = set()
    matched_pred: set[int] = set()
    matched_ious: list[tuple[int, int, int, float]] = []

    order = np.argsort(keys)  # deterministic iteration
    for idx in order:
        gp = int(pair_gt[idx])
        pp = int(pair_pred[idx])
        cnt = int(counts[idx])
        if gp == void_gt or pp == void_pred:
            continue
        g_cls, p_cls = gp // INSTANCE_BASE, pp // INSTANCE_BASE
        if g_cls != p_cls:
            continue
        union = gt_area[gp] + pred_area[pp] - cnt - pred_void_overlap.get(pp, 0)
        iou = cnt / union
        if iou > 0.5:
            s = stats.setdefault(g_cls, ClassStats())
            s.tp += 1
            s.iou_sum += iou
            matched_gt.add(gp)
            matched_pred.add(pp)
            matched_ious.append(
                (g_cls, gp % INSTANCE_BASE, pp % INSTANCE_BASE, float(iou))
            )

    for gp in gt_ids.tolist():
        if gp == void_gt or gp in matched_gt:
            continue
        stats.setdefault(gp // INSTANCE_BASE, ClassStats()).fn += 1

    for pp in pred_ids.tolist():
        if pp == void_pred or pp in matched_pred:
            continue
        if pred_void_overlap.get(pp, 0) > 0.5 * pred_area[pp]:
            continue
        stats.setdefault(pp // INSTANCE_BASE, ClassStats()).fp += 1

    return EvalReport(stats=stats, matched_ious=matched_ious)
