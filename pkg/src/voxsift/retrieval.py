"""Ranking and the NN / FT / ST / DCG / precision-recall retrieval statistics.

Definitions follow the Princeton Shape Benchmark conventions: the query is
removed from its own ranked list, tiers have size |C|-1 and 2(|C|-1), and
DCG is normalized by the DCG of an ideal list.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .codebook import BowHistogram, histogram_distance

log = logging.getLogger(__name__)

RECALL_LEVELS = tuple(round(0.05 * i, 2) for i in range(1, 21))

# published McGill articulated-benchmark figures for the full method, used
# only as a side-by-side reference when a McGill manifest is evaluated
REFERENCE_ROWS = {
    "reference-A (feature 256, codebook 3000)": {"NN": 0.972, "FT": 0.658, "ST": 0.784, "DCG": 0.921},
    "reference-B (feature 1024, codebook 3000)": {"NN": 0.952, "FT": 0.624, "ST": 0.748, "DCG": 0.876},
}
MCGILL_MODELS = 258
MCGILL_CLASSES = 10


@dataclass(frozen=True)
class RankedList:
    query_id: str
    entries: tuple[tuple[str, float], ...]

    @property
    def ids(self) -> list[str]:
        return [m for m, _ in self.entries]


@dataclass(frozen=True)
class QueryStats:
    nn: float
    ft: float
    st: float
    dcg: float


@dataclass
class EvalReport:
    per_query: dict[str, QueryStats]
    pr_per_query: dict[str, list[tuple[float, float]]]
    class_sizes: dict[str, int]
    skipped: list[str] = field(default_factory=list)
    degenerate: bool = False
    params: dict = field(default_factory=dict)

    @property
    def mean(self) -> dict[str, float]:
        if not self.per_query:
            return {"NN": 0.0, "FT": 0.0, "ST": 0.0, "DCG": 0.0}
        stats = [self.per_query[q] for q in sorted(self.per_query)]
        return {
            "NN": float(np.mean([s.nn for s in stats])),
            "FT": float(np.mean([s.ft for s in stats])),
            "ST": float(np.mean([s.st for s in stats])),
            "DCG": float(np.mean([s.dcg for s in stats])),
        }

    @property
    def mean_pr(self) -> list[tuple[float, float]]:
        if not self.pr_per_query:
            return []
        curves = np.array([[p for _, p in self.pr_per_query[q]] for q in sorted(self.pr_per_query)])
        return list(zip(RECALL_LEVELS, (float(v) for v in curves.mean(axis=0))))

    def to_dict(self) -> dict:
        return {
            "mean": self.mean,
            "per_query": {q: {"NN": s.nn, "FT": s.ft, "ST": s.st, "DCG": s.dcg} for q, s in sorted(self.per_query.items())},
            "precision_recall": [{"recall": r, "precision": p} for r, p in self.mean_pr],
            "class_sizes": dict(sorted(self.class_sizes.items())),
            "n_queries": len(self.per_query),
            "skipped_queries": sorted(self.skipped),
            "degenerate_corpus": self.degenerate,
            "params": self.params,
        }


def rank(query: BowHistogram, corpus: list[BowHistogram]) -> RankedList:
    """Corpus sorted by histogram distance; the query's own id is excluded, ties by id."""
    scored = []
    for h in corpus:
        if h.model_id == query.model_id:
            continue
        scored.append((h.model_id, histogram_distance(query, h)))
    scored.sort(key=lambda e: (e[1], e[0]))
    return RankedList(query.model_id, tuple(scored))


def _relevance(ranked: RankedList, labels: dict[str, str]) -> tuple[np.ndarray, int]:
    label = labels[ranked.query_id]
    rel = np.array([labels[m] == label for m in ranked.ids], dtype=float)
    n_relevant = sum(1 for m, c in labels.items() if c == label and m != ranked.query_id)
    return rel, n_relevant


def dcg_score(relevance, n_relevant: int) -> float:
    """Normalized DCG with DCG_1 = G_1 and DCG_i = DCG_{i-1} + G_i / log2(i)."""
    rel = np.asarray(relevance, dtype=float)
    if n_relevant < 1:
        raise ValueError("DCG needs at least one relevant item")
    discounts = np.ones(len(rel))
    if len(rel) > 1:
        discounts[1:] = 1.0 / np.log2(np.arange(2, len(rel) + 1))
    ideal = 1.0 + sum(1.0 / math.log2(i) for i in range(2, n_relevant + 1))
    return float(np.dot(rel, discounts) / ideal)


def compute_metrics(ranked: RankedList, labels: dict[str, str]) -> QueryStats:
    rel, n_rel = _relevance(ranked, labels)
    if n_rel < 1:
        raise ValueError(f"query {ranked.query_id} has no other member of its class")
    nn = float(rel[0]) if len(rel) else 0.0
    ft = float(rel[:n_rel].sum()) / n_rel
    st = float(rel[: 2 * n_rel].sum()) / n_rel
    return QueryStats(nn=nn, ft=ft, st=st, dcg=dcg_score(rel, n_rel))


def precision_recall(ranked: RankedList, labels: dict[str, str]) -> list[tuple[float, float]]:
    """Interpolated precision at recall 0.05, 0.10, ..., 1.00."""
    rel, n_rel = _relevance(ranked, labels)
    if n_rel < 1:
        raise ValueError(f"query {ranked.query_id} has no relevant items")
    hits = np.cumsum(rel)
    precision = hits / np.arange(1, len(rel) + 1)
    recall = hits / n_rel
    out = []
    for r in RECALL_LEVELS:
        ok = recall >= r - 1e-12
        out.append((r, float(precision[ok].max()) if ok.any() else 0.0))
    return out


def evaluate_corpus(histograms: list[BowHistogram], labels: dict[str, str], params: dict | None = None) -> EvalReport:
    """Every model queries the rest of the corpus; statistics are averaged over queries."""
    missing = [h.model_id for h in histograms if h.model_id not in labels]
    if missing:
        raise ValueError(f"no label for models: {', '.join(sorted(missing))}")
    modes = {h.normalization for h in histograms}
    if len(modes) > 1:
        raise ValueError("histograms use mixed normalization")
    corpus_labels = {h.model_id: labels[h.model_id] for h in histograms}
    sizes = Counter(corpus_labels.values())
    if len(sizes) < 2:
        raise ValueError("evaluation needs at least two classes")

    per_query, pr, skipped = {}, {}, []
    for h in histograms:
        if sizes[corpus_labels[h.model_id]] < 2:
            log.warning("query %s is the only member of its class; skipped", h.model_id)
            skipped.append(h.model_id)
            continue
        ranked = rank(h, histograms)
        per_query[h.model_id] = compute_metrics(ranked, corpus_labels)
        pr[h.model_id] = precision_recall(ranked, corpus_labels)

    first = histograms[0].counts
    degenerate = all(np.array_equal(h.counts, first) for h in histograms)
    if degenerate:
        log.warning("all histograms are identical; rankings are decided by id order only")
    params = dict(params or {})
    params.setdefault("normalization", modes.pop() if modes else None)
    return EvalReport(per_query, pr, dict(sizes), skipped, degenerate, params)


def is_mcgill_like(labels: dict[str, str]) -> bool:
    return len(labels) == MCGILL_MODELS and len(set(labels.values())) == MCGILL_CLASSES


def write_report_json(path, report: EvalReport, extra: dict | None = None) -> None:
    doc = report.to_dict()
    if extra:
        doc.update(extra)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def write_summary_csv(path, rows: dict[str, dict[str, float]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "NN", "FT", "ST", "DCG"])
        for name, stats in rows.items():
            w.writerow([name] + [f"{stats[c]:.3f}" for c in ("NN", "FT", "ST", "DCG")])


def write_pr_csv(path, curve: list[tuple[float, float]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["recall", "precision"])
        for r, p in curve:
            w.writerow([f"{r:.2f}", f"{p:.6f}"])
