"""Segmentation evaluation: confusion counting and derived scores.

Counts accumulate across tiles first; ratios are derived once from the
accumulated counts. Any 0/0 ratio is defined as 1 (an empty reference matched
by an empty prediction is a perfect outcome).
"""

import io
from dataclasses import dataclass

import numpy as np

DEFAULT_BINARIZE = 0.5
DEFAULT_CLIP = 0.65

METRIC_FIELDS = ("sp", "pc", "rc", "dc", "js")
CSV_HEADER = "unit,tp,fp,tn,fn,sp,pc,rc,dc,js,clipped_js"


@dataclass
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __add__(self, other):
        return ConfusionCounts(
            self.tp + other.tp, self.fp + other.fp, self.tn + other.tn, self.fn + other.fn
        )

    @property
    def total(self):
        return self.tp + self.fp + self.tn + self.fn


def binarize(prob_map, threshold=DEFAULT_BINARIZE):
    """Probability map to {0,1} mask; the threshold itself maps to 1."""
    arr = np.asarray(prob_map)
    if arr.min() < 0 or arr.max() > 1:
        raise ValueError("probability map has values outside [0, 1]")
    return (arr >= threshold).astype(np.uint8)


def confusion(pred_mask, ref_mask):
    """Pixel tallies of a predicted binary mask against a reference."""
    p = np.asarray(pred_mask)
    g = np.asarray(ref_mask)
    if p.shape != g.shape:
        raise ValueError(f"mask shapes differ: {p.shape} vs {g.shape}")
    for name, m in (("prediction", p), ("reference", g)):
        if not np.isin(m, (0, 1)).all():
            raise ValueError(f"{name} mask is not binary")
    p = p.astype(bool)
    g = g.astype(bool)
    return ConfusionCounts(
        tp=int(np.count_nonzero(p & g)),
        fp=int(np.count_nonzero(p & ~g)),
        tn=int(np.count_nonzero(~p & ~g)),
        fn=int(np.count_nonzero(~p & g)),
    )


def accumulate(parts):
    total = ConfusionCounts()
    for c in parts:
        total = total + c
    return total


def _ratio(num, den):
    if den == 0:
        return 1.0
    return num / den


def derive_metrics(c):
    """Specificity, precision, recall, Dice, and Jaccard from counts."""
    return {
        "sp": _ratio(c.tn, c.tn + c.fp),
        "pc": _ratio(c.tp, c.tp + c.fp),
        "rc": _ratio(c.tp, c.tp + c.fn),
        "dc": _ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn),
        "js": _ratio(c.tp, c.tp + c.fp + c.fn),
    }


def clipped_js(js, threshold=DEFAULT_CLIP):
    """Jaccard zeroed below the threshold; the threshold itself survives."""
    return js if js >= threshold else 0.0


def s_wsi(per_wsi_js, threshold=DEFAULT_CLIP):
    """Mean clipped Jaccard across slides."""
    values = list(per_wsi_js)
    if not values:
        raise ValueError("need at least one slide score")
    return sum(clipped_js(v, threshold) for v in values) / len(values)


def report_rows(unit_counts, clip_threshold=DEFAULT_CLIP, aggregate_counts=None):
    """Render per-unit metric rows plus the accumulated AGGREGATE row.

    ``unit_counts`` is an ordered list of (unit_name, ConfusionCounts).
    ``aggregate_counts`` selects what the AGGREGATE row sums over (defaults
    to every listed unit; mixed tile+slide reports pass the tile subset so
    pixels are not double counted).
    """
    out = io.StringIO()
    out.write(CSV_HEADER + "\n")

    def write_row(name, c):
        m = derive_metrics(c)
        cj = clipped_js(m["js"], clip_threshold)
        out.write(
            f"{name},{c.tp},{c.fp},{c.tn},{c.fn},"
            f"{m['sp']:.6f},{m['pc']:.6f},{m['rc']:.6f},{m['dc']:.6f},{m['js']:.6f},{cj:.6f}\n"
        )

    for name, c in unit_counts:
        write_row(name, c)
    if aggregate_counts is None:
        aggregate_counts = [c for _, c in unit_counts]
    write_row("AGGREGATE", accumulate(aggregate_counts))
    return out.getvalue()
