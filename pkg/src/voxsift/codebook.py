"""K-means visual-word codebook, bag-of-words histograms and ratio-test matching."""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

DEFAULT_K = 3000
DEFAULT_ITERATIONS = 20
DEFAULT_RATIO = 0.8
_CHUNK = 1024


@dataclass(frozen=True)
class Codebook:
    centroids: np.ndarray
    seed: int
    iterations_run: int
    sse_history: tuple[float, ...] = field(default=(), compare=False)

    @property
    def k(self) -> int:
        return len(self.centroids)

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]


@dataclass(frozen=True)
class BowHistogram:
    model_id: str
    counts: np.ndarray
    normalization: str = "L1"
    n_descriptors: int = 0
    empty: bool = False

    def __len__(self) -> int:
        return len(self.counts)


def _as_matrix(features) -> np.ndarray:
    if isinstance(features, np.ndarray):
        x = np.asarray(features, dtype=float)
        if x.ndim != 2:
            raise ValueError("features must be a 2D array")
        return x
    rows = [np.asarray(f, dtype=float).ravel() for f in features]
    if not rows:
        return np.zeros((0, 0))
    dims = {len(r) for r in rows}
    if len(dims) != 1:
        raise ValueError(f"descriptor dimension mismatch: {sorted(dims)}")
    return np.stack(rows)


def _sq_dist(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    d = x - c
    return np.einsum("...j,...j->...", d, d)


def nearest_centroids(x: np.ndarray, centroids: np.ndarray, c_sq: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Index of and squared distance to the nearest centroid, ties to the lowest index.

    Candidates come from the fast ||x||^2 - 2x.c + ||c||^2 expansion and are
    re-ranked with exact differences, so the result matches a direct scan.
    """
    if c_sq is None:
        c_sq = np.einsum("ij,ij->i", centroids, centroids)
    x_sq = np.einsum("ij,ij->i", x, x)
    approx = x_sq[:, None] - 2.0 * (x @ centroids.T) + c_sq[None, :]
    best = approx.min(axis=1)
    tol = 1e-9 * (x_sq + c_sq.max()) + 1e-12
    cand = approx <= (best + tol)[:, None]
    labels = np.argmax(cand, axis=1)
    dist = _sq_dist(x, centroids[labels])
    multi = np.flatnonzero(cand.sum(axis=1) > 1)
    for i in multi:
        idx = np.flatnonzero(cand[i])
        d = _sq_dist(x[i], centroids[idx])
        j = int(np.argmin(d))
        labels[i] = idx[j]
        dist[i] = d[j]
    return labels, dist


def _assign(x: np.ndarray, centroids: np.ndarray, threads: int) -> tuple[np.ndarray, np.ndarray]:
    c_sq = np.einsum("ij,ij->i", centroids, centroids)
    starts = range(0, len(x), _CHUNK)
    work = lambda s: nearest_centroids(x[s : s + _CHUNK], centroids, c_sq)  # noqa: E731
    if threads > 1 and len(x) > _CHUNK:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(work, starts))
    else:
        parts = [work(s) for s in starts]
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def _kmeans_pp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(x)
    chosen = [int(rng.integers(n))]
    closest = _sq_dist(x, x[chosen[0]])
    for _ in range(1, k):
        total = closest.sum()
        if total > 0:
            idx = int(rng.choice(n, p=closest / total))
        else:
            log.warning("fewer distinct descriptors than codebook size; centroids will repeat")
            idx = int(rng.integers(n))
        chosen.append(idx)
        closest = np.minimum(closest, _sq_dist(x, x[idx]))
    return x[chosen].copy()


def _cluster_sums(x: np.ndarray, labels: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-cluster sums accumulated in ascending point order."""
    order = np.argsort(labels, kind="stable")
    counts = np.bincount(labels, minlength=k)
    sums = np.zeros((k, x.shape[1]))
    present = np.flatnonzero(counts)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])[present]
    sums[present] = np.add.reduceat(x[order], starts, axis=0)
    return sums, counts


def kmeans(
    features,
    k: int,
    iterations: int = DEFAULT_ITERATIONS,
    seed: int = 0,
    threads: int = 1,
) -> Codebook:
    """Lloyd's algorithm from a seeded k-means++ start.

    Runs ``iterations`` rounds or stops once assignments no longer change.
    Empty clusters are re-seeded at the points farthest from their centroids.
    The within-cluster sum of squares is recorded after every round and is
    checked to be nonincreasing.
    """
    x = _as_matrix(features)
    n = len(x)
    if n == 0:
        raise ValueError("no features to cluster")
    if not 1 <= k <= n:
        raise ValueError(f"codebook size {k} must be in [1, {n}]")
    if iterations < 1:
        raise ValueError("iterations must be positive")

    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp(x, k, rng)
    labels = None
    history: list[float] = []
    run = 0
    for _ in range(iterations):
        new_labels, dist = _assign(x, centroids, threads)
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        run += 1
        sums, counts = _cluster_sums(x, labels, k)
        filled = counts > 0
        updated = centroids.copy()
        updated[filled] = sums[filled] / counts[filled, None]
        empty = np.flatnonzero(~filled)
        if len(empty):
            # farthest points first, ties to the lowest index
            far = np.lexsort((np.arange(n), -dist))[: len(empty)]
            updated[empty] = x[far]
            log.debug("re-seeded %d empty clusters", len(empty))
        centroids = updated
        sse = float(np.sum(_sq_dist(x, centroids[labels])))
        if history and sse > history[-1] * (1 + 1e-12) + 1e-12:
            raise AssertionError(f"k-means SSE increased: {history[-1]!r} -> {sse!r}")
        history.append(sse)
    return Codebook(centroids=centroids, seed=seed, iterations_run=run, sse_history=tuple(history))


def quantize(descriptors, codebook: Codebook, model_id: str = "", normalization: str = "L1") -> BowHistogram:
    """Visual-word histogram of one model's descriptors (raw counts or L1-normalized)."""
    if normalization not in ("L1", "raw"):
        raise ValueError("normalization must be 'L1' or 'raw'")
    x = _as_matrix(descriptors)
    counts = np.zeros(codebook.k)
    if len(x) == 0:
        log.warning("model %s has no descriptors; histogram is all zero", model_id)
        return BowHistogram(model_id, counts, normalization, 0, empty=True)
    if x.shape[1] != codebook.dim:
        raise ValueError(f"descriptor dimension {x.shape[1]} does not match codebook dimension {codebook.dim}")
    labels, _ = nearest_centroids(x, codebook.centroids)
    counts = np.bincount(labels, minlength=codebook.k).astype(float)
    if normalization == "L1":
        counts = counts / counts.sum()
    return BowHistogram(model_id, counts, normalization, len(x))


def histogram_distance(a: BowHistogram, b: BowHistogram) -> float:
    if len(a.counts) != len(b.counts):
        raise ValueError("histogram length mismatch")
    if a.normalization != b.normalization:
        raise ValueError("histogram normalization mismatch")
    d = a.counts - b.counts
    return float(np.sqrt(np.dot(d, d)))


@dataclass(frozen=True)
class Match:
    a: int
    b: int
    d1: float
    d2: float


def match_keypoints(desc_a, desc_b, ratio: float = DEFAULT_RATIO) -> list[Match]:
    """Nearest-neighbor ratio test from A into B (many A may share one B)."""
    a = _as_matrix(desc_a)
    b = _as_matrix(desc_b)
    if len(a) == 0:
        raise ValueError("first descriptor set is empty")
    if len(b) < 2:
        raise ValueError("ratio test needs at least two descriptors in the second set")
    if a.shape[1] != b.shape[1]:
        raise ValueError("descriptor dimension mismatch")
    if not 0 < ratio <= 1:
        raise ValueError("ratio must be in (0, 1]")
    out = []
    for i, row in enumerate(a):
        d = np.sqrt(_sq_dist(row, b))
        order = np.argsort(d, kind="stable")
        j, j2 = int(order[0]), int(order[1])
        d1, d2 = float(d[j]), float(d[j2])
        if d2 > 0 and d1 / d2 < ratio:
            out.append(Match(i, j, d1, d2))
    return out


def write_codebook_csv(path, codebook: Codebook) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "D", "seed", "iterations"])
        w.writerow([codebook.k, codebook.dim, codebook.seed, codebook.iterations_run])
        for c in codebook.centroids:
            w.writerow([repr(float(v)) for v in c])


def read_codebook_csv(path) -> Codebook:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["k", "D", "seed", "iterations"]:
            raise ValueError(f"{path}: not a codebook file")
        k, dim, seed, iterations = (int(v) for v in next(reader))
        rows = [[float(v) for v in row] for row in reader]
    c = np.array(rows, dtype=float)
    if c.shape != (k, dim):
        raise ValueError(f"{path}: expected {k}x{dim} centroids, found {c.shape}")
    return Codebook(c, seed, iterations)


def write_index_json(path, histograms: list[BowHistogram], labels: dict[str, str], meta: dict | None = None) -> None:
    """Histogram index: model_id -> {label, counts, normalization}, plus a ``_meta`` block."""
    doc = {
        h.model_id: {
            "label": labels.get(h.model_id, ""),
            "counts": [float(v) for v in h.counts],
            "normalization": h.normalization,
        }
        for h in histograms
    }
    if meta is not None:
        doc["_meta"] = meta
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")


def read_index_json(path) -> tuple[list[BowHistogram], dict[str, str]]:
    with open(path) as fh:
        doc = json.load(fh)
    hists, labels = [], {}
    for model_id in sorted(k for k in doc if not k.startswith("_")):
        entry = doc[model_id]
        counts = np.asarray(entry["counts"], dtype=float)
        hists.append(BowHistogram(model_id, counts, entry["normalization"], empty=not counts.any()))
        labels[model_id] = entry["label"]
    return hists, labels
