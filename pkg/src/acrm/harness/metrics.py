"""Temporal IoU, R@n at IoU thresholds, and mean IoU."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


def iou(a: tuple[float, float], b: tuple[float, float], inclusive: bool = True) -> float:
    """Temporal IoU of two intervals.

    With ``inclusive`` (the default) the ends are frame indices and each
    interval covers [s, e + 1), so a single frame has length 1. Otherwise
    they are continuous spans.
    """
    pad = 1 if inclusive else 0
    s1, e1 = a[0], a[1] + pad
    s2, e2 = b[0], b[1] + pad
    inter = max(0.0, min(e1, e2) - max(s1, s2))
    union = (e1 - s1) + (e2 - s2) - inter
    return float(inter / union) if union > 0 else 0.0


def recall_key(n: int, m: float) -> str:
    return f"R@{n},IoU={m:g}"


@dataclass
class EvalReport:
    recall: dict[tuple[int, float], float]
    miou: float
    records: list[dict] = field(default_factory=list)

    def to_dict(self, with_records: bool = True) -> dict:
        out = {
            "recall": {recall_key(n, m): v for (n, m), v in sorted(self.recall.items())},
            "mIoU": self.miou,
        }
        if with_records:
            out["records"] = self.records
        return out

    def table(self) -> str:
        lines = [f"{recall_key(n, m):<16} {v:7.2f}" for (n, m), v in sorted(self.recall.items())]
        lines.append(f"{'mIoU':<16} {self.miou:7.4f}")
        return "\n".join(lines)


def evaluate(
    predictions: Sequence[Sequence[tuple[int, int]]],
    ground_truths: Sequence[tuple[int, int]],
    n_list: Sequence[int] = (1,),
    m_list: Sequence[float] = (0.3, 0.5, 0.7),
) -> EvalReport:
    """``predictions[i]`` is the ranked candidate list for instance i.

    An instance counts toward R@n,IoU=m when one of its first n candidates
    has IoU strictly greater than m.
    """
    if len(predictions) == 0:
        raise ValueError("cannot evaluate an empty prediction set")
    if len(predictions) != len(ground_truths):
        raise ValueError(f"{len(predictions)} predictions vs {len(ground_truths)} ground truths")
    ious = [[iou(p, gt) for p in cands] for cands, gt in zip(predictions, ground_truths)]
    N = len(ious)
    recall = {}
    for n in n_list:
        best = np.array([max(row[:n]) for row in ious])
        for m in m_list:
            recall[(int(n), float(m))] = 100.0 * float(np.sum(best > m)) / N
    top1 = [row[0] for row in ious]
    records = [
        {"pred": list(map(int, cands[0])), "gt": list(map(int, gt)), "iou": v}
        for cands, gt, v in zip(predictions, ground_truths, top1)
    ]
    return EvalReport(recall, float(np.mean(top1)), records)
