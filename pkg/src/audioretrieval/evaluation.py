"""Retrieval scoring: ranked top-10 lists, mAP@10, R@k, jackknife 95% CIs.

Queries are caption embeddings, the corpus is a fixed set of clip embeddings,
and relevance is the dot product. Ground truth is binary with exactly one
relevant clip per caption, so AP@10 reduces to 1/rank (0 beyond rank 10) and
R@k to top-k membership. Ties are broken by ascending clip_id, which makes
every ranking, and hence every metric, bit-reproducible.
"""

import csv
import json
from dataclasses import dataclass

import numpy as np
from scipy.stats import t as student_t

from .errors import (
    DimMismatch,
    MalformedCsv,
    MissingGroundTruth,
    NoRelevant,
    TooFewQueries,
    UnknownClip,
)

TOP_K = 10
METRIC_KEYS = ("map10", "r1", "r5", "r10")


@dataclass(frozen=True)
class ScoreMatrix:
    queries: tuple[str, ...]
    clips: tuple[str, ...]
    scores: np.ndarray

    def __post_init__(self):
        q, m = len(self.queries), len(self.clips)
        if self.scores.shape != (q, m):
            raise DimMismatch(f"score matrix {self.scores.shape} does not match {q} x {m}")
        if np.isnan(self.scores).any():
            raise ValueError("score matrix contains NaN")
        if len(set(self.queries)) != q or len(set(self.clips)) != m:
            raise ValueError("query/clip ids must be unique")


@dataclass(frozen=True)
class RankedList:
    caption_id: str
    top: tuple[str, ...]


@dataclass(frozen=True)
class MetricReport:
    map10: float
    r1: float
    r5: float
    r10: float
    ci95: dict[str, tuple[float, float]]
    per_query_ap: np.ndarray
    n_queries: int


def score_all(query_ids, query_vectors, clip_ids, clip_vectors) -> ScoreMatrix:
    """Dot-product scores for every (caption query, clip) combination."""
    q = np.asarray(query_vectors, dtype=np.float64)
    a = np.asarray(clip_vectors, dtype=np.float64)
    if q.ndim != 2 or a.ndim != 2 or q.shape[1] != a.shape[1]:
        raise DimMismatch(f"embedding dims differ: {q.shape} vs {a.shape}")
    return ScoreMatrix(queries=tuple(query_ids), clips=tuple(clip_ids), scores=q @ a.T)


def rank_top10(matrix: ScoreMatrix, k: int = TOP_K) -> list[RankedList]:
    """Per query: clips by descending score, ties by ascending clip_id, top k."""
    clip_ids = np.array(matrix.clips)
    id_rank = np.argsort(np.argsort(clip_ids))
    out = []
    for qi, caption_id in enumerate(matrix.queries):
        order = np.lexsort((id_rank, -matrix.scores[qi]))[:k]
        out.append(RankedList(caption_id=caption_id, top=tuple(clip_ids[order])))
    return out


def ap_at_10(ranked: RankedList, relevant: set[str], k: int = TOP_K) -> float:
    """AP over the top-k list: mean of precisions at relevant positions,
    normalized by min(|relevant|, k)."""
    if not relevant:
        raise NoRelevant(f"query {ranked.caption_id}: empty relevant set")
    hits = 0
    total = 0.0
    for pos, clip_id in enumerate(ranked.top[:k], start=1):
        if clip_id in relevant:
            hits += 1
            total += hits / pos
    return total / min(len(relevant), k)


def recall_at_k(ranked_lists, ground_truth, k) -> float:
    """Mean over queries of |relevant in top-k| / |relevant|."""
    values = [_recall_values(r, ground_truth, k) for r in ranked_lists]
    return float(np.mean(values))


def _as_relevant_set(ground_truth, caption_id):
    try:
        rel = ground_truth[caption_id]
    except KeyError:
        raise MissingGroundTruth(f"no ground truth for query {caption_id!r}") from None
    return {rel} if isinstance(rel, str) else set(rel)


def _recall_values(ranked: RankedList, ground_truth, k) -> float:
    relevant = _as_relevant_set(ground_truth, ranked.caption_id)
    return len(relevant.intersection(ranked.top[:k])) / len(relevant)


def jackknife_ci(per_query_values, level: float = 0.95) -> tuple[float, float]:
    """Leave-one-out CI for the mean of per-query values.

    SE = sqrt(((Q-1)/Q) * sum_i (theta_(i) - mean theta_(.))^2) with theta_(i)
    the mean excluding query i; the interval is point +/- t(1-(1-level)/2, Q-1) * SE.
    """
    values = np.asarray(per_query_values, dtype=np.float64)
    q = values.size
    if q < 2:
        raise TooFewQueries(f"jackknife needs at least 2 queries, got {q}")
    total = values.sum()
    point = total / q
    loo = (total - values) / (q - 1)
    se = np.sqrt((q - 1) / q * np.sum((loo - loo.mean()) ** 2))
    t_quantile = float(student_t.ppf(1.0 - (1.0 - level) / 2.0, q - 1))
    return point - t_quantile * se, point + t_quantile * se


def evaluate_ranked(ranked_lists, ground_truth) -> MetricReport:
    """Metrics from top-10 lists alone (the submission-CSV path)."""
    if not ranked_lists:
        raise TooFewQueries("no queries to evaluate")
    ap = np.array([
        ap_at_10(r, _as_relevant_set(ground_truth, r.caption_id)) for r in ranked_lists
    ])
    recalls = {
        k: np.array([_recall_values(r, ground_truth, k) for r in ranked_lists])
        for k in (1, 5, 10)
    }
    ci95 = {
        "map10": jackknife_ci(ap),
        "r1": jackknife_ci(recalls[1]),
        "r5": jackknife_ci(recalls[5]),
        "r10": jackknife_ci(recalls[10]),
    }
    return MetricReport(
        map10=float(np.mean(ap)),
        r1=float(np.mean(recalls[1])),
        r5=float(np.mean(recalls[5])),
        r10=float(np.mean(recalls[10])),
        ci95=ci95,
        per_query_ap=ap,
        n_queries=len(ranked_lists),
    )


def evaluate(matrix: ScoreMatrix, ground_truth) -> MetricReport:
    """Full evaluation of a score matrix against single-relevant ground truth."""
    clip_set = set(matrix.clips)
    for caption_id in matrix.queries:
        for clip_id in _as_relevant_set(ground_truth, caption_id):
            if clip_id not in clip_set:
                raise UnknownClip(
                    f"ground-truth clip {clip_id!r} for query {caption_id!r} is not in the clip set"
                )
    return evaluate_ranked(rank_top10(matrix), ground_truth)


# ---------------------------------------------------------------------------
# Report rendering and submission files
# ---------------------------------------------------------------------------

_METRIC_LABELS = {"map10": "mAP@10", "r1": "R@1", "r5": "R@5", "r10": "R@10"}


def render_report(report: MetricReport) -> str:
    """Human-readable table: point value plus "[lo, hi]" 95% CI per metric."""
    return render_report_values(report_to_dict(report))


def render_report_values(payload: dict) -> str:
    """Render from the JSON-report shape {metric: {value, lo, hi}, ...}."""
    lines = [f"{'Metric':<8}{'Value':>7}  95% CI"]
    for key in METRIC_KEYS:
        entry = payload[key]
        lines.append(
            f"{_METRIC_LABELS[key]:<8}{entry['value']:>7.3f}  [{entry['lo']:.3f}, {entry['hi']:.3f}]"
        )
    return "\n".join(lines) + "\n"


def report_to_dict(report: MetricReport) -> dict:
    out = {}
    for key in METRIC_KEYS:
        lo, hi = report.ci95[key]
        out[key] = {"value": getattr(report, key), "lo": float(lo), "hi": float(hi)}
    out["n_queries"] = report.n_queries
    return out


def write_report_json(path, report: MetricReport, extra=None) -> None:
    payload = report_to_dict(report)
    payload.update(extra or {})
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_submission(path, ranked_lists, k: int = TOP_K) -> None:
    """Challenge-style CSV: header caption,fname_1,...,fname_10, one row per query."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["caption"] + [f"fname_{i}" for i in range(1, k + 1)])
        for ranked in ranked_lists:
            row = list(ranked.top[:k]) + [""] * (k - len(ranked.top[:k]))
            writer.writerow([ranked.caption_id] + row)


def read_submission(path, k: int = TOP_K) -> list[RankedList]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    expected = ["caption"] + [f"fname_{i}" for i in range(1, k + 1)]
    if not rows or rows[0] != expected:
        raise MalformedCsv(f"{path}: bad submission header")
    out = []
    for row in rows[1:]:
        if not row:
            continue
        top = tuple(v for v in row[1 : k + 1] if v)
        out.append(RankedList(caption_id=row[0], top=top))
    return out
