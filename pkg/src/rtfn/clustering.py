"""K-means over encoder features, and the evaluation metrics."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from rtfn import kernels
from rtfn.tensor import DimensionError, make_rng, spawn


@dataclass
class ClusterAssignment:
    labels: np.ndarray
    centroids: np.ndarray
    inertia: float
    history: list = field(default_factory=list)  # inertia after each Lloyd iteration of the kept restart


def _plus_plus(points, k, rng):
    s = points.shape[0]
    centroids = np.empty((k, points.shape[1]))
    centroids[0] = points[rng.integers(s)]
    d2 = ((points - centroids[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = rng.integers(s)
        else:
            idx = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
            idx = min(idx, s - 1)
        centroids[j] = points[idx]
        d2 = np.minimum(d2, ((points - centroids[j]) ** 2).sum(axis=1))
    return centroids


def _repair_empty(points, labels, dist, centroids, k):
    """Give every empty cluster the point currently farthest from its centroid."""
    for j in range(k):
        if not np.any(labels == j):
            counts = np.bincount(labels, minlength=k)
            movable = counts[labels] > 1
            cand = np.where(movable, dist, -1.0)
            i = int(np.argmax(cand))
            labels[i] = j
            dist[i] = 0.0
            centroids[j] = points[i]
    return labels


def _lloyd(points, k, rng, max_iter, tol):
    centroids = _plus_plus(points, k, rng)
    history = []
    labels = None
    for _ in range(max_iter):
        labels, dist = kernels.assign_nearest(points, centroids)
        labels = _repair_empty(points, labels.astype(np.int64), dist, centroids, k)
        new = np.stack([points[labels == j].mean(axis=0) for j in range(k)])
        history.append(float(((points - new[labels]) ** 2).sum()))
        shift = float(np.sqrt(((new - centroids) ** 2).sum(axis=1)).max())
        centroids = new
        if shift < tol:
            break
    labels, dist = kernels.assign_nearest(points, centroids)
    labels = _repair_empty(points, labels.astype(np.int64), dist, centroids, k)
    inertia = float(((points - centroids[labels]) ** 2).sum())
    return ClusterAssignment(labels, centroids, inertia, history)


def kmeans(points, k: int, rng=None, max_iter: int = 300, tol: float = 1e-6, restarts: int = 10) -> ClusterAssignment:
    """Lloyd's algorithm from k-means++ seeds; the restart with the lowest inertia wins (earliest on ties)."""
    points = np.ascontiguousarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise DimensionError(f"kmeans expects [s, d] points, got {points.shape}")
    s = points.shape[0]
    if k < 1 or s < k:
        raise ValueError(f"kmeans needs s >= k >= 1, got s={s}, k={k}")
    rng = make_rng(0) if rng is None else rng
    best = None
    for r in spawn(rng, restarts):
        res = _lloyd(points, k, r, max_iter, tol)
        if best is None or res.inertia < best.inertia:
            best = res
    return best


def _check_pair(truth, pred, min_len):
    truth = np.asarray(truth)
    pred = np.asarray(pred)
    if truth.shape != pred.shape or truth.ndim != 1:
        raise DimensionError(f"label arrays differ in shape: {truth.shape} vs {pred.shape}")
    if truth.size < min_len:
        raise ValueError(f"need at least {min_len} labels, got {truth.size}")
    return truth, pred


def _codes(a):
    return np.unique(a, return_inverse=True)[1].astype(np.int64)


def rand_index(truth, pred) -> float:
    """Fraction of pairs on which the two labelings agree (same group in both, or apart in both)."""
    truth, pred = _check_pair(truth, pred, 2)
    s = truth.size
    both, neither = kernels.pair_agreement(_codes(truth), _codes(pred))
    return (both + neither) / (s * (s - 1) / 2)


def top1_accuracy(truth, pred) -> float:
    truth, pred = _check_pair(truth, pred, 1)
    return float(np.mean(truth == pred))


@dataclass
class LeaderBoard:
    algorithms: list
    win: np.ndarray
    tie: np.ndarray
    lose: np.ndarray
    total: np.ndarray
    avg_rank: np.ndarray

    @property
    def best(self):
        return self.win + self.tie

    def rows(self):
        for i, a in enumerate(self.algorithms):
            yield a, int(self.win[i]), int(self.tie[i]), int(self.lose[i]), int(self.best[i]), int(self.total[i]), float(self.avg_rank[i])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["algorithm", "win", "tie", "lose", "best", "total", "avg_rank"])
        for a, *rest in self.rows():
            w.writerow([a, *rest[:-1], f"{rest[-1]:.6g}"])
        return buf.getvalue()

    def to_table(self) -> str:
        head = ["algorithm", "win", "tie", "lose", "best", "total", "avg_rank"]
        body = [[a, *map(str, rest[:-1]), f"{rest[-1]:.4f}"] for a, *rest in self.rows()]
        widths = [max(len(r[i]) for r in [head] + body) for i in range(len(head))]
        fmt = lambda r: "  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths)))
        return "\n".join([fmt(head), "  ".join("-" * w for w in widths)] + [fmt(r) for r in body])


def leaderboard(results, algorithms=None, accuracy_gap: bool = False) -> LeaderBoard:
    """Tally wins, ties and losses per dataset column of an algorithms x datasets accuracy matrix.

    NaN entries mark missing results and are skipped. ``avg_rank`` is the
    mean ordinal rank (1 = best, tied entries share the smallest rank of
    their block); with ``accuracy_gap=True`` it is instead the mean shortfall
    from the best accuracy on each dataset.
    """
    r = np.asarray(results, dtype=np.float64)
    if r.ndim != 2 or r.size == 0:
        raise ValueError("leaderboard needs a non-empty algorithms x datasets matrix")
    n_alg, n_ds = r.shape
    algorithms = list(algorithms) if algorithms is not None else [f"alg{i}" for i in range(n_alg)]
    if len(algorithms) != n_alg:
        raise ValueError("one name per algorithm row required")
    win, tie, lose, total = (np.zeros(n_alg, dtype=np.int64) for _ in range(4))
    rank_sum = np.zeros(n_alg)
    for d in range(n_ds):
        col = r[:, d]
        present = ~np.isnan(col)
        if not present.any():
            continue
        vals = col[present]
        top = vals.max()
        n_top = int(np.sum(vals == top))
        for i in np.flatnonzero(present):
            total[i] += 1
            if col[i] == top:
                if n_top == 1:
                    win[i] += 1
                else:
                    tie[i] += 1
            else:
                lose[i] += 1
            if accuracy_gap:
                rank_sum[i] += top - col[i]
            else:
                rank_sum[i] += 1 + np.sum(vals > col[i])
    avg = np.divide(rank_sum, total, out=np.full(n_alg, np.nan), where=total > 0)
    return LeaderBoard(algorithms, win, tie, lose, total, avg)
