"""Exact top-K retrieval and the evaluation suite.

Retrieval ranks references by cosine similarity (a dot product, since
descriptors are unit vectors). The metrics cover Recall@K, a threshold-swept
precision-recall curve over top-1 matches, its average precision, and the
L2-distance separation between true and false matches.

PR protocol: each query contributes its single best match; a threshold t
accepts it when similarity >= t. Accepted-and-correct counts as TP,
accepted-and-incorrect as FP, rejected queries that do have ground truth as
FN. Precision is reported as 1 when nothing is accepted, so curves start at
the top-left.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .dataio import DescriptorSet, GroundTruth
from .errors import DataError, ShapeError

__all__ = [
    "MatchResult",
    "PrPoint",
    "Histogram",
    "EvalReport",
    "topk",
    "recall_at_k",
    "default_thresholds",
    "pr_curve",
    "average_precision",
    "l2_distributions",
    "evaluate",
]

DEFAULT_KS = (1, 5, 10)
DEFAULT_THRESHOLD_COUNT = 256
DEFAULT_HISTOGRAM_BINS = 50


@dataclass
class MatchResult:
    """Ranked references for one query: (reference_id, cosine similarity),
    similarities non-increasing, ties broken by reference insertion order."""

    query_id: str
    matches: list[tuple[str, float]]

    @property
    def top1(self) -> tuple[str, float]:
        return self.matches[0]


@dataclass
class PrPoint:
    threshold: float
    precision: float
    recall: float
    tp: int
    fp: int
    fn: int


@dataclass
class Histogram:
    bin_edges: np.ndarray
    counts: np.ndarray
    mean: float


@dataclass
class EvalReport:
    recall_at: dict[int, float]
    ap: float
    pr_curve: list[PrPoint]
    l2_true: Optional[Histogram] = None
    l2_false: Optional[Histogram] = None
    mean_gap: Optional[float] = None

    def to_json(self) -> str:
        doc = {
            "recall_at": {str(k): v for k, v in sorted(self.recall_at.items())},
            "average_precision": self.ap,
            "pr_points": len(self.pr_curve),
            "conventions": {
                "pr": "top-1 per query; threshold on cosine similarity; "
                "precision reported as 1 when nothing is accepted",
                "l2": "true = nearest ground-truth reference, "
                "false = nearest non-ground-truth reference",
            },
        }
        if self.mean_gap is not None:
            doc["l2"] = {
                "true_mean": self.l2_true.mean,
                "false_mean": self.l2_false.mean,
                "mean_gap": self.mean_gap,
            }
        return json.dumps(doc, indent=2)

    def write_csvs(self, out_dir) -> list[Path]:
        """Emit pr_curve.csv and (when present) l2_hist.csv for plotting."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        written = []
        pr_path = out_dir / "pr_curve.csv"
        with open(pr_path, "w") as fh:
            fh.write("threshold,precision,recall,tp,fp,fn\n")
            for p in self.pr_curve:
                fh.write(
                    f"{p.threshold!r},{p.precision!r},{p.recall!r},"
                    f"{p.tp},{p.fp},{p.fn}\n"
                )
        written.append(pr_path)
        if self.l2_true is not None and self.l2_false is not None:
            l2_path = out_dir / "l2_hist.csv"
            edges = self.l2_true.bin_edges
            with open(l2_path, "w") as fh:
                fh.write("bin_lo,bin_hi,true_count,false_count\n")
                for i in range(len(self.l2_true.counts)):
                    fh.write(
                        f"{edges[i]!r},{edges[i + 1]!r},"
                        f"{int(self.l2_true.counts[i])},{int(self.l2_false.counts[i])}\n"
                    )
            written.append(l2_path)
        return written


# ---------------------------------------------------------------------------
# Retrieval
# ---------------------------------------------------------------------------


def _similarity_matrix(queries: DescriptorSet, references: DescriptorSet) -> np.ndarray:
    if queries.dim != references.dim:
        raise ShapeError(
            f"query dim {queries.dim} != reference dim {references.dim}"
        )
    q = queries.vectors.astype(np.float64)
    r = references.vectors.astype(np.float64)
    return np.clip(q @ r.T, -1.0, 1.0)


def topk(queries: DescriptorSet, references: DescriptorSet, k: int) -> list[MatchResult]:
    """Exact top-K by cosine similarity, ties broken by reference order."""
    if len(references.ids) == 0:
        raise DataError("empty reference set")
    if k < 1:
        raise DataError(f"k must be >= 1, got {k}")
    if k > len(references.ids):
        raise DataError(
            f"k={k} exceeds the reference count {len(references.ids)}"
        )
    sims = _similarity_matrix(queries, references)
    # Stable sort of the negated similarities keeps insertion order on ties.
    order = np.argsort(-sims, axis=1, kind="stable")[:, :k]
    results = []
    for qi, qid in enumerate(queries.ids):
        ranked = [
            (references.ids[int(j)], float(sims[qi, int(j)])) for j in order[qi]
        ]
        results.append(MatchResult(qid, ranked))
    return results


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


def _check_known(matches: Sequence[MatchResult], gt: GroundTruth):
    unknown = [m.query_id for m in matches if m.query_id not in gt.mapping]
    if unknown:
        raise DataError(f"queries missing from ground truth: {unknown}")


def recall_at_k(
    matches: Sequence[MatchResult], gt: GroundTruth, ks: Sequence[int] = DEFAULT_KS
) -> dict[int, float]:
    """Fraction of queries whose top K contains a valid reference.

    Queries with empty ground-truth sets are excluded from the denominator.
    """
    _check_known(matches, gt)
    scored = [m for m in matches if gt.mapping[m.query_id]]
    if not scored:
        raise DataError("no query has a nonempty ground-truth set")
    max_k = max(ks)
    short = [m.query_id for m in scored if len(m.matches) < max_k]
    if short:
        raise DataError(
            f"K={max_k} requested but matches hold fewer ranks for: {short[:5]}"
        )
    out = {}
    for k in ks:
        hits = sum(
            1
            for m in scored
            if any(ref in gt.mapping[m.query_id] for ref, _ in m.matches[:k])
        )
        out[int(k)] = hits / len(scored)
    return out


def default_thresholds(
    matches: Sequence[MatchResult], count: int = DEFAULT_THRESHOLD_COUNT
) -> np.ndarray:
    """Evenly spaced thresholds over the observed top-1 similarity range,
    with -inf/+inf endpoints."""
    sims = [m.top1[1] for m in matches]
    lo, hi = min(sims), max(sims)
    grid = np.linspace(lo, hi, count) if hi > lo else np.array([lo])
    return np.concatenate([[-np.inf], grid, [np.inf]])


def pr_curve(
    matches: Sequence[MatchResult],
    gt: GroundTruth,
    thresholds: Optional[Sequence[float]] = None,
) -> list[PrPoint]:
    """Sweep an acceptance threshold over top-1 cosine similarities."""
    if not matches:
        raise DataError("empty match list")
    _check_known(matches, gt)
    if thresholds is None:
        thresholds = default_thresholds(matches)
    thresholds = sorted(float(t) for t in thresholds)

    top1 = [(m.top1[1], m.top1[0] in gt.mapping[m.query_id], bool(gt.mapping[m.query_id]))
            for m in matches]
    points = []
    for t in thresholds:
        tp = fp = fn = 0
        for sim, correct, has_gt in top1:
            if sim >= t:
                if correct:
                    tp += 1
                else:
                    fp += 1
            elif has_gt:
                fn += 1
        precision = tp / (tp + fp) if tp + fp else 1.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        points.append(PrPoint(t, precision, recall, tp, fp, fn))
    return points


def average_precision(pr: Sequence[PrPoint]) -> float:
    """Recall-increment-weighted sum of precisions over the sorted curve."""
    if not pr:
        raise DataError("empty PR curve")
    pts = sorted(pr, key=lambda p: p.recall)
    if any(math.isnan(p.recall) or math.isnan(p.precision) for p in pts):
        raise DataError("PR curve contains NaN values")
    prev_recall = 0.0
    ap = 0.0
    for p in pts:
        if p.recall < prev_recall:
            raise DataError("recall is not non-decreasing after sorting")
        ap += (p.recall - prev_recall) * p.precision
        prev_recall = p.recall
    return ap


def l2_distributions(
    queries: DescriptorSet,
    references: DescriptorSet,
    gt: GroundTruth,
    bins: int = DEFAULT_HISTOGRAM_BINS,
):
    """Histograms of per-query nearest true-match and false-match L2 distances.

    True distance: nearest ground-truth reference. False distance: nearest
    non-ground-truth reference. Unit vectors bound distances by 2, so bins
    span [0, 2]. Returns (true_hist, false_hist, mean_gap).
    """
    if bins < 1:
        raise DataError(f"bins must be >= 1, got {bins}")
    unknown = [q for q in queries.ids if q not in gt.mapping]
    if unknown:
        raise DataError(f"queries missing from ground truth: {unknown}")
    if not any(gt.mapping[q] for q in queries.ids):
        raise DataError("no query has a nonempty ground-truth set")

    sims = _similarity_matrix(queries, references)
    qf = queries.vectors.astype(np.float64)
    rf = references.vectors.astype(np.float64)
    qq = (qf * qf).sum(axis=1)
    rr = (rf * rf).sum(axis=1)
    d2 = np.maximum(qq[:, None] + rr[None, :] - 2.0 * (qf @ rf.T), 0.0)
    dists = np.sqrt(d2)

    ref_index = references.index_of()
    true_d, false_d = [], []
    for qi, qid in enumerate(queries.ids):
        valid = [ref_index[r] for r in gt.mapping[qid] if r in ref_index]
        valid_mask = np.zeros(len(references.ids), dtype=bool)
        valid_mask[valid] = True
        if valid:
            true_d.append(float(dists[qi, valid_mask].min()))
        if not valid_mask.all():
            false_d.append(float(dists[qi, ~valid_mask].min()))
    if not true_d:
        raise DataError("ground-truth references never appear in the reference set")
    if not false_d:
        raise DataError("every reference is a true match; no false distribution")

    edges = np.linspace(0.0, 2.0, bins + 1)
    true_counts, _ = np.histogram(np.clip(true_d, 0.0, 2.0), bins=edges)
    false_counts, _ = np.histogram(np.clip(false_d, 0.0, 2.0), bins=edges)
    true_hist = Histogram(edges, true_counts, float(np.mean(true_d)))
    false_hist = Histogram(edges, false_counts, float(np.mean(false_d)))
    return true_hist, false_hist, false_hist.mean - true_hist.mean


def evaluate(
    queries: DescriptorSet,
    references: DescriptorSet,
    gt: GroundTruth,
    ks: Sequence[int] = DEFAULT_KS,
    threshold_count: int = DEFAULT_THRESHOLD_COUNT,
    bins: int = DEFAULT_HISTOGRAM_BINS,
) -> EvalReport:
    """Full report: Recall@K, PR curve, AP and L2 separation."""
    matches = topk(queries, references, max(ks))
    recall = recall_at_k(matches, gt, ks)
    curve = pr_curve(matches, gt, default_thresholds(matches, threshold_count))
    ap = average_precision(curve)
    l2_true, l2_false, gap = l2_distributions(queries, references, gt, bins)
    return EvalReport(recall, ap, curve, l2_true, l2_false, gap)
