"""Within-class and between-class k-nearest-neighbour graphs."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .spine import FeatureVector, pairwise_distances


@dataclass(frozen=True, eq=False)
class SimilarityGraphs:
    w_within: np.ndarray
    w_between: np.ndarray
    k: int
    labels: tuple

    @property
    def n(self) -> int:
        return self.w_within.shape[0]

    def signed(self, omega_w: float = 1.0, omega_b: float = 1.0) -> np.ndarray:
        return omega_w * self.w_within - omega_b * self.w_between

    def permuted(self, perm: Sequence[int]) -> "SimilarityGraphs":
        p = np.asarray(perm)
        return SimilarityGraphs(
            self.w_within[np.ix_(p, p)], self.w_between[np.ix_(p, p)], self.k, tuple(self.labels[i] for i in p)
        )


@dataclass(frozen=True, eq=False)
class GraphLaplacian:
    degree: np.ndarray
    laplacian: np.ndarray


def knn_indices(dist_row: np.ndarray, candidates: np.ndarray, k: int) -> np.ndarray:
    """The k candidates nearest by distance, ties going to the lower index."""
    candidates = np.sort(candidates)
    order = np.argsort(dist_row[candidates], kind="stable")
    return candidates[order[:k]]


def build_graphs_from_distances(dist: np.ndarray, labels: Sequence[str], k: int) -> SimilarityGraphs:
    labels = tuple(labels)
    n = len(labels)
    lab = np.asarray(labels)
    if not set(labels) <= {"P", "NP"}:
        raise ValueError("graph labels must be 'P' or 'NP'")
    for cls in ("P", "NP"):
        count = int((lab == cls).sum())
        if count < k + 1:
            raise ValueError(f"class {cls} has {count} samples; at least k+1 = {k + 1} are required")
    ww = np.zeros((n, n))
    wb = np.zeros((n, n))
    idx = np.arange(n)
    for i in range(n):
        same = idx[(lab == lab[i]) & (idx != i)]
        other = idx[lab != lab[i]]
        ww[i, knn_indices(dist[i], same, k)] = 1.0
        wb[i, knn_indices(dist[i], other, k)] = 1.0
    ww = np.maximum(ww, ww.T)
    wb = np.maximum(wb, wb.T)
    return SimilarityGraphs(ww, wb, k, labels)


def build_graphs(features: Sequence[FeatureVector], k: int) -> SimilarityGraphs:
    if len({f.mode for f in features}) != 1:
        raise ValueError("all features must share one mode")
    y = np.stack([f.values for f in features])
    dist = pairwise_distances(y, y, features[0].mode)
    return build_graphs_from_distances(dist, [f.label for f in features], k)


def laplacian(w: np.ndarray) -> GraphLaplacian:
    """L = D - W with D(i,i) the off-diagonal row sum of W."""
    w = np.asarray(w, dtype=float)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise ValueError("adjacency must be square")
    if not np.array_equal(w, w.T):
        raise ValueError("adjacency must be symmetric")
    off = w - np.diag(np.diag(w))
    deg = np.diag(off.sum(axis=1))
    return GraphLaplacian(deg, deg - off)
