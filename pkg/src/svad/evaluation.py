"""Frame-level confusion counts and MR / FAR / HTER, pooled per SNR level."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError

LEVELS = {
    "low": (15.0, 10.0),
    "medium": (5.0, 0.0),
    "high": (-5.0, -10.0),
}
LEVEL_ORDER = ("low", "medium", "high", "unassigned", "overall")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fn: int = 0
    fp: int = 0
    tn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fn, self.fp, self.tn) < 0:
            raise ValueError("confusion counts must be non-negative")

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fn + other.fn,
                               self.fp + other.fp, self.tn + other.tn)

    @property
    def total(self) -> int:
        return self.tp + self.fn + self.fp + self.tn


@dataclass(frozen=True)
class MetricsReport:
    """Rates as fractions; ``None`` where the class needed for a rate is absent."""

    mr: float | None
    far: float | None
    hter: float | None
    n_frames: int

    def pct(self, name: str) -> str:
        value = getattr(self, name)
        return "n/a" if value is None else f"{display_pct(value):.1f}"


def display_pct(rate: float) -> float:
    """Percentage rounded to one decimal, ties to even on the stored binary value."""
    return round(rate * 100.0, 1)


def _labels(decisions):
    if len(decisions) and hasattr(decisions[0], "label"):
        return np.array([d.label for d in decisions], dtype=np.int64)
    return np.asarray(decisions, dtype=np.int64)


def accumulate(decisions, labels, pad_mask=None) -> ConfusionCounts:
    """Count frames; ``decisions`` may be FrameDecision objects or 0/1 labels."""
    pred = _labels(decisions)
    truth = np.asarray(labels, dtype=np.int64)
    if pred.shape != truth.shape:
        raise ShapeError(f"{pred.shape[0] if pred.ndim else 0} decisions vs {truth.shape} labels")
    keep = np.ones(truth.shape, dtype=bool) if pad_mask is None else np.asarray(pad_mask, dtype=bool)
    if keep.shape != truth.shape:
        raise ShapeError("pad mask shape does not match labels")
    p, y = pred[keep] == 1, truth[keep] == 1
    return ConfusionCounts(int(np.sum(p & y)), int(np.sum(~p & y)),
                           int(np.sum(p & ~y)), int(np.sum(~p & ~y)))


def hter(counts: ConfusionCounts) -> MetricsReport:
    pos = counts.tp + counts.fn
    neg = counts.fp + counts.tn
    if pos == 0 and neg == 0:
        raise ValueError("no frames of either class to evaluate")
    mr = counts.fn / pos if pos else None
    far = counts.fp / neg if neg else None
    h = (mr + far) / 2 if mr is not None and far is not None else None
    return MetricsReport(mr, far, h, counts.total)


def level_of(snr_db: float) -> str:
    for name, values in LEVELS.items():
        if any(abs(snr_db - v) < 1e-9 for v in values):
            return name
    return "unassigned"


def pool_by_level(counts, snr_db) -> dict[str, ConfusionCounts]:
    """Sum per-utterance counts within each SNR level, plus an ``overall`` bucket."""
    if len(counts) != len(snr_db):
        raise ShapeError("one SNR value is needed per utterance")
    pooled: dict[str, ConfusionCounts] = {}
    for c, s in zip(counts, snr_db):
        lvl = level_of(float(s))
        pooled[lvl] = pooled.get(lvl, ConfusionCounts()) + c
        pooled["overall"] = pooled.get("overall", ConfusionCounts()) + c
    return {k: pooled[k] for k in LEVEL_ORDER if k in pooled}


def group_by_level(counts, snr_db) -> dict[str, MetricsReport]:
    return {lvl: hter(c) for lvl, c in pool_by_level(counts, snr_db).items()}


def format_report(report: dict[str, MetricsReport]) -> str:
    lines = [f"{'level':<12}{'MR%':>8}{'FAR%':>8}{'HTER%':>8}{'frames':>10}"]
    for lvl, r in report.items():
        lines.append(f"{lvl:<12}{r.pct('mr'):>8}{r.pct('far'):>8}{r.pct('hter'):>8}{r.n_frames:>10}")
    return "\n".join(lines)


def format_delimited(report: dict[str, MetricsReport], sep: str = ",") -> str:
    rows = [sep.join(("level", "MR", "FAR", "HTER", "n_frames"))]
    for lvl, r in report.items():
        rows.append(sep.join((lvl, r.pct("mr"), r.pct("far"), r.pct("hter"), str(r.n_frames))))
    return "\n".join(rows) + "\n"


def evaluate_model(model, utterances, batch_size: int = 32) -> list[ConfusionCounts]:
    """Per-utterance confusion counts of ``model`` on labelled utterances."""
    from .classifier import labels_from_potentials

    out = []
    for start in range(0, len(utterances), batch_size):
        chunk = utterances[start:start + batch_size]
        feats, lengths, _ = model.features([u.noisy.samples for u in chunk])
        v = model.forward(feats, lengths).v
        pred = labels_from_potentials(v)
        for i, u in enumerate(chunk):
            out.append(accumulate(pred[i, :lengths[i]], u.labels))
    return out
