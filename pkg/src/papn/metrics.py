"""Route-comparison metrics (LSD, HR@k, KRC, ED) and their aggregate report."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import _kernels


class UndefinedMetricError(ValueError):
    pass


def _ranks(seq: Sequence[int]) -> dict[int, int]:
    return {int(node): pos for pos, node in enumerate(seq)}


def _same_set(pred, label) -> None:
    if len(pred) != len(label) or set(map(int, pred)) != set(map(int, label)):
        raise ValueError(f"predicted {list(pred)} and label {list(label)} cover different nodes")
    if len(set(map(int, label))) != len(label):
        raise ValueError("sequences must not repeat nodes")


def lsd(pred: Sequence[int], label: Sequence[int]) -> float:
    """Mean squared difference of each node's 0-based position."""
    _same_set(pred, label)
    if len(label) == 0:
        raise ValueError("LSD needs at least one node")
    rp = _ranks(pred)
    diffs = [(rp[int(node)] - pos) ** 2 for pos, node in enumerate(label)]
    return float(sum(diffs)) / len(label)


def hr_at_k(pred: Sequence[int], label: Sequence[int], k: int = 3) -> float:
    """Overlap of the first ``k`` stops, divided by ``min(k, len(label))``."""
    if k < 1:
        raise ValueError("k must be >= 1")
    denom = min(k, len(label))
    if denom == 0:
        raise ValueError("HR@k needs a non-empty label")
    hits = set(map(int, pred[:k])) & set(map(int, label[:k]))
    return len(hits) / denom


def krc(pred: Sequence[int], label: Sequence[int]) -> float:
    """Kendall rank correlation between predicted and actual visit order."""
    _same_set(pred, label)
    if len(label) < 2:
        raise UndefinedMetricError("KRC needs at least two nodes")
    rp = _ranks(pred)
    pred_rank = np.array([rp[int(node)] for node in label], dtype=np.int64)
    nc, nd = _kernels.kendall_counts(pred_rank, np.arange(len(label), dtype=np.int64))
    return (nc - nd) / (nc + nd)


def ed(pred: Sequence[int], label: Sequence[int]) -> float:
    """Levenshtein distance with unit insert, delete and substitute costs."""
    return float(_kernels.levenshtein(np.asarray(pred, dtype=np.int64),
                                      np.asarray(label, dtype=np.int64)))


@dataclass
class MetricReport:
    hr: dict[int, tuple[float, float]]
    krc: tuple[float, float]
    lsd: tuple[float, float]
    ed: tuple[float, float]
    count: int
    krc_skipped: int = 0
    name: str = ""

    def to_dict(self) -> dict:
        d = {"name": self.name, "count": self.count, "krc_skipped": self.krc_skipped}
        for k, (m, s) in sorted(self.hr.items()):
            d[f"hr@{k}"] = {"mean": m, "std": s}
        for key in ("krc", "lsd", "ed"):
            m, s = getattr(self, key)
            d[key] = {"mean": m, "std": s}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @property
    def hr3(self) -> float:
        return self.hr[3][0]


def _mean_std(values: list[float]) -> tuple[float, float]:
    if not values:
        return float("nan"), float("nan")
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std())


def evaluate_routes(preds: Iterable[Sequence[int]], labels: Iterable[Sequence[int]],
                    ks: Sequence[int] = (3,), name: str = "") -> MetricReport:
    """Per-instance metrics aggregated to mean and population standard deviation."""
    hr = {k: [] for k in ks}
    krcs, lsds, eds = [], [], []
    skipped = 0
    count = 0
    for pred, label in zip(preds, labels):
        pred = [int(v) for v in pred]
        label = [int(v) for v in label]
        count += 1
        for k in ks:
            hr[k].append(hr_at_k(pred, label, k))
        lsds.append(lsd(pred, label))
        eds.append(ed(pred, label))
        try:
            krcs.append(krc(pred, label))
        except UndefinedMetricError:
            skipped += 1
    if count == 0:
        raise ValueError("no instances to evaluate")
    return MetricReport({k: _mean_std(v) for k, v in hr.items()}, _mean_std(krcs),
                        _mean_std(lsds), _mean_std(eds), count, skipped, name)


def format_table(reports: Sequence[MetricReport], scale: float = 1.0) -> str:
    """Aligned plain-text table, one row per report."""
    ks = sorted({k for r in reports for k in r.hr})
    head = ["method"] + [f"HR@{k}" for k in ks] + ["KRC", "LSD", "ED", "N"]
    rows = []
    for r in reports:
        cells = [r.name or "-"]
        for k in ks:
            m, s = r.hr.get(k, (float("nan"), float("nan")))
            cells.append(f"{m * scale:.4f} ±{s * scale:.4f}")
        for m, s in (r.krc, r.lsd, r.ed):
            cells.append(f"{m:.4f} ±{s:.4f}")
        cells.append(str(r.count))
        rows.append(cells)
    widths = [max(len(row[i]) for row in [head] + rows) for i in range(len(head))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(head, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(c.ljust(w) for c, w in zip(row, widths)) for row in rows]
    return "\n".join(lines)
