"""Segmentation metrics: pixel confusion counts, overlap scores, matching
of unlabeled predicted regions to ground-truth classes, and dataset-level
reports.

All scores are percentages. Zero-denominator conventions: a metric whose
own denominator is 0 (e.g. both masks empty for DSC/IoU) scores 100.0.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .mask import BinaryMask, LabelMask, select_region


@dataclass
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int = 0


@dataclass
class ClassMetrics:
    class_id: int
    dsc: float
    iou: float
    precision: float
    recall: float

    @classmethod
    def from_counts(cls, class_id: int, c: ConfusionCounts) -> "ClassMetrics":
        return cls(class_id, dsc(c), iou(c), precision(c), recall(c))

    def as_dict(self) -> dict:
        return {
            "class_id": self.class_id,
            "dsc": self.dsc,
            "iou": self.iou,
            "precision": self.precision,
            "recall": self.recall,
        }


@dataclass
class SampleMetrics:
    name: str
    classes: list[ClassMetrics]


@dataclass
class MetricsReport:
    per_class: list[ClassMetrics]  # metric means over the samples of each class
    aggregate: dict  # unweighted mean of each metric over classes
    sample_count: int
    samples: list[SampleMetrics] = field(default_factory=list)
    mode: str = "matched"

    def to_json(self) -> str:
        doc = {
            "mode": self.mode,
            "samples": [
                {"name": s.name, "classes": [c.as_dict() for c in s.classes]}
                for s in self.samples
            ],
            "aggregate": {
                "per_class": [c.as_dict() for c in self.per_class],
                "mean": self.aggregate,
                "sample_count": self.sample_count,
            },
        }
        return json.dumps(doc, indent=2)

    def to_text(self) -> str:
        header = ("class", "DSC (%)", "IoU (%)", "precision (%)", "recall (%)")
        rows = [header]
        for c in self.per_class:
            rows.append(
                (
                    str(c.class_id),
                    f"{c.dsc:.1f}",
                    f"{c.iou:.1f}",
                    f"{c.precision:.1f}",
                    f"{c.recall:.1f}",
                )
            )
        rows.append(
            (
                "mean",
                f"{self.aggregate['dsc']:.1f}",
                f"{self.aggregate['iou']:.1f}",
                f"{self.aggregate['precision']:.1f}",
                f"{self.aggregate['recall']:.1f}",
            )
        )
        widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
        lines = [
            "  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip()
            for row in rows
        ]
        lines.insert(1, "  ".join("-" * w for w in widths))
        lines.append(f"samples: {self.sample_count}  mode: {self.mode}")
        return "\n".join(lines) + "\n"


def confusion(pred: BinaryMask, truth: BinaryMask) -> ConfusionCounts:
    if pred.membership.shape != truth.membership.shape:
        raise ValueError(
            f"dimension mismatch: {pred.membership.shape} vs "
            f"{truth.membership.shape}"
        )
    p = pred.membership
    t = truth.membership
    tp = int(np.count_nonzero(p & t))
    fp = int(np.count_nonzero(p & ~t))
    fn = int(np.count_nonzero(~p & t))
    tn = p.size - tp - fp - fn
    return ConfusionCounts(tp=tp, fp=fp, fn=fn, tn=tn)


def dsc(c: ConfusionCounts) -> float:
    denom = 2 * c.tp + c.fp + c.fn
    return 100.0 if denom == 0 else 100.0 * 2 * c.tp / denom


def iou(c: ConfusionCounts) -> float:
    denom = c.tp + c.fp + c.fn
    return 100.0 if denom == 0 else 100.0 * c.tp / denom


def precision(c: ConfusionCounts) -> float:
    denom = c.tp + c.fp
    return 100.0 if denom == 0 else 100.0 * c.tp / denom


def recall(c: ConfusionCounts) -> float:
    denom = c.tp + c.fn
    return 100.0 if denom == 0 else 100.0 * c.tp / denom


@dataclass
class MatchResult:
    assignments: dict[int, int | None]  # class id -> predicted label (or none)
    counts: dict[int, ConfusionCounts]

    def class_metrics(self) -> list[ClassMetrics]:
        return [
            ClassMetrics.from_counts(cid, self.counts[cid])
            for cid in sorted(self.counts)
        ]


def match_regions(mask: LabelMask, truth: np.ndarray) -> MatchResult:
    """Greedily pair ground-truth classes with predicted labels by IoU.

    The highest-IoU (class, label) pair is fixed first, both are removed,
    and the process repeats; ties prefer the smaller class id, then the
    smaller label. Classes left without a label score against an empty
    prediction. Class 0 is background and never matched.
    """
    truth = np.asarray(truth)
    if truth.shape != mask.labels.shape:
        raise ValueError(
            f"dimension mismatch: truth {truth.shape} vs mask {mask.labels.shape}"
        )
    if truth.min() < 0:
        raise ValueError("truth raster must hold nonnegative class ids")
    classes = sorted(int(c) for c in np.unique(truth) if c != 0)
    if not classes:
        raise ValueError("truth raster has no non-background class")
    labels = list(range(mask.num_labels))

    n_labels = mask.num_labels
    t_flat = truth.ravel().astype(np.int64)
    l_flat = mask.labels.ravel().astype(np.int64)
    compact = np.full(int(t_flat.max()) + 1, -1, dtype=np.int64)
    compact[classes] = np.arange(len(classes))
    ci = compact[t_flat]
    valid = ci >= 0
    table = np.bincount(
        ci[valid] * n_labels + l_flat[valid], minlength=len(classes) * n_labels
    ).reshape(len(classes), n_labels)
    label_area_vec = np.bincount(l_flat, minlength=n_labels)

    class_areas = {c: int(table[k].sum()) for k, c in enumerate(classes)}
    label_areas = {l: int(label_area_vec[l]) for l in labels}
    inter = {
        (c, l): int(table[k, l]) for k, c in enumerate(classes) for l in labels
    }

    def pair_iou(c, l):
        union = class_areas[c] + label_areas[l] - inter[(c, l)]
        return inter[(c, l)] / union if union > 0 else 0.0

    remaining_classes = list(classes)
    remaining_labels = list(labels)
    assignments: dict[int, int | None] = {c: None for c in classes}
    while remaining_classes and remaining_labels:
        best = max(
            ((pair_iou(c, l), -c, -l, c, l)
             for c in remaining_classes for l in remaining_labels),
        )
        score, _, _, c, l = best
        assignments[c] = l
        remaining_classes.remove(c)
        remaining_labels.remove(l)

    counts = {}
    total = truth.size
    for c in classes:
        l = assignments[c]
        if l is None:
            tp, fp = 0, 0
            fn = class_areas[c]
        else:
            tp = inter[(c, l)]
            fp = label_areas[l] - tp
            fn = class_areas[c] - tp
        counts[c] = ConfusionCounts(tp=tp, fp=fp, fn=fn, tn=total - tp - fp - fn)
    return MatchResult(assignments=assignments, counts=counts)


def interior_point(member: np.ndarray) -> tuple[int, int]:
    """The member pixel closest to the region's centroid, as (x, y);
    ties resolve to the smallest (y, x)."""
    ys, xs = np.nonzero(member)
    if ys.size == 0:
        raise ValueError("empty region has no interior point")
    cy = ys.mean()
    cx = xs.mean()
    d2 = (ys - cy) ** 2 + (xs - cx) ** 2
    pick = np.lexsort((xs, ys, d2))[0]
    return int(xs[pick]), int(ys[pick])


def evaluate_sample(
    mask: LabelMask, truth: np.ndarray, mode: str
) -> list[ClassMetrics]:
    truth = np.asarray(truth)
    if mode == "matched":
        return match_regions(mask, truth).class_metrics()
    if mode == "point":
        classes = sorted(int(c) for c in np.unique(truth) if c != 0)
        if not classes:
            raise ValueError("truth raster has no non-background class")
        out = []
        for c in classes:
            member = truth == c
            point = interior_point(member)
            sel = select_region(mask, point)
            cnt = confusion(sel, BinaryMask(mask.width, mask.height, member))
            out.append(ClassMetrics.from_counts(c, cnt))
        return out
    raise ValueError(f"unknown mode {mode!r}")


def evaluate_dataset(
    pairs: list[tuple[LabelMask, np.ndarray]],
    mode: str = "matched",
    names: list[str] | None = None,
    workers: int = 1,
) -> MetricsReport:
    """Score every (prediction, truth) pair and average per class over the
    samples containing that class, then over classes.

    Samples may be scored on ``workers`` threads; aggregation always runs
    in ascending sample order, so the report does not depend on workers.
    """
    if not pairs:
        raise ValueError("no samples to evaluate")
    if names is None:
        names = [f"sample_{i:04d}" for i in range(len(pairs))]

    def score(item):
        name, (mask, truth) = item
        try:
            return SampleMetrics(name, evaluate_sample(mask, truth, mode))
        except ValueError as exc:
            raise ValueError(f"{name}: {exc}") from None

    items = list(zip(names, pairs))
    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            samples = list(pool.map(score, items))
    else:
        samples = [score(item) for item in items]

    by_class: dict[int, list[ClassMetrics]] = {}
    for s in samples:
        for cm in s.classes:
            by_class.setdefault(cm.class_id, []).append(cm)
    per_class = [
        ClassMetrics(
            class_id=cid,
            dsc=float(np.mean([m.dsc for m in ms])),
            iou=float(np.mean([m.iou for m in ms])),
            precision=float(np.mean([m.precision for m in ms])),
            recall=float(np.mean([m.recall for m in ms])),
        )
        for cid, ms in sorted(by_class.items())
    ]
    aggregate = {
        metric: float(np.mean([getattr(c, metric) for c in per_class]))
        for metric in ("dsc", "iou", "precision", "recall")
    }
    return MetricsReport(
        per_class=per_class,
        aggregate=aggregate,
        sample_count=len(pairs),
        samples=samples,
        mode=mode,
    )
