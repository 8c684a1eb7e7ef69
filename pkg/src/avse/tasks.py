"""Downstream tasks over sentence embeddings.

Everything here is exact: search and paraphrase mining return the same pairs
a brute-force scan would, chunking only bounds memory, and clustering is
plain Lloyd iteration with a seeded k-means++ start.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError
from sklearn.utils.validation import check_array


def _as_matrix(x, name: str = "X") -> np.ndarray:
    m = np.asarray(x, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] == 0 or m.shape[1] == 0:
        raise ValueError(f"{name} must be a non-empty 2-D array, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} contains non-finite values")
    return m


def _normalize_rows(m: np.ndarray, name: str = "X") -> np.ndarray:
    norms = np.sqrt((m * m).sum(axis=1))
    if np.any(norms == 0.0):
        bad = int(np.argmax(norms == 0.0))
        raise ValueError(f"{name} row {bad} is a zero vector")
    return m / norms[:, None]


def cosine(u, v) -> float:
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    if u.shape != v.shape:
        raise ValueError(f"shape mismatch {u.shape} vs {v.shape}")
    nu = float(np.sqrt(u @ u))
    nv = float(np.sqrt(v @ v))
    if nu == 0.0 or nv == 0.0:
        raise ValueError("cosine of a zero vector is undefined")
    return float(np.clip((u @ v) / (nu * nv), -1.0, 1.0))


def semantic_search(query, corpus, top_k: int = 10) -> list[tuple[int, float]]:
    """Indices and cosine scores of the top_k corpus rows for one query,
    ordered by descending score with index as the tie-break."""
    if top_k < 1:
        raise ValueError("top_k must be positive")
    c = _as_matrix(corpus, "corpus")
    q = np.asarray(query, dtype=np.float64).ravel()
    if q.shape[0] != c.shape[1]:
        raise ValueError(f"query dim {q.shape[0]} != corpus dim {c.shape[1]}")
    nq = float(np.sqrt(q @ q))
    if nq == 0.0:
        raise ValueError("query is a zero vector")
    scores = np.clip((_normalize_rows(c, "corpus") @ (q / nq)), -1.0, 1.0)
    order = np.lexsort((np.arange(len(scores)), -scores))
    return [(int(i), float(scores[i])) for i in order[: min(top_k, len(scores))]]


def paraphrase_mine(embeddings, top_k_per_query: int = 100, max_pairs: int = 500000,
                    query_chunk_size: int = 5000, corpus_chunk_size: int = 100000):
    """Highest-cosine sentence pairs (i, j, score), i < j, best first.

    Each row is treated as a query against the whole collection in chunks;
    per query only the top_k_per_query neighbours survive, which is also what
    an unchunked scan keeps, so chunk sizes never change the result. Pairs are
    deduplicated and sorted by (-score, i, j), then cut to max_pairs.
    """
    if top_k_per_query < 1 or max_pairs < 1:
        raise ValueError("top_k_per_query and max_pairs must be positive")
    if query_chunk_size < 1 or corpus_chunk_size < 1:
        raise ValueError("chunk sizes must be positive")
    m = _normalize_rows(_as_matrix(embeddings, "embeddings"), "embeddings")
    n = m.shape[0]
    pairs: dict[tuple[int, int], float] = {}
    for q0 in range(0, n, query_chunk_size):
        q1 = min(q0 + query_chunk_size, n)
        # per query in this chunk: (score, j) candidates across all corpus chunks
        best: list[list[tuple[float, int]]] = [[] for _ in range(q1 - q0)]
        for c0 in range(0, n, corpus_chunk_size):
            c1 = min(c0 + corpus_chunk_size, n)
            block = np.clip(m[q0:q1] @ m[c0:c1].T, -1.0, 1.0)
            for qi in range(q1 - q0):
                row = block[qi]
                cand = best[qi]
                for cj in range(c1 - c0):
                    j = c0 + cj
                    if j == q0 + qi:
                        continue
                    cand.append((float(row[cj]), j))
                # keep the exact top_k by (-score, index); prune to bound memory
                cand.sort(key=lambda t: (-t[0], t[1]))
                del cand[top_k_per_query:]
        for qi in range(q1 - q0):
            i = q0 + qi
            for score, j in best[qi]:
                key = (i, j) if i < j else (j, i)
                prev = pairs.get(key)
                if prev is None or score > prev:
                    pairs[key] = score
    ranked = sorted(pairs.items(), key=lambda kv: (-kv[1], kv[0][0], kv[0][1]))
    return [(i, j, s) for (i, j), s in ranked[:max_pairs]]


@dataclass
class ClusterAssignment:
    labels: np.ndarray
    centers: np.ndarray
    inertia: float
    history: list[float] = field(default_factory=list)


def _kmeans_pp_init(m: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = m.shape[0]
    centers = np.empty((k, m.shape[1]))
    centers[0] = m[int(rng.integers(n))]
    for c in range(1, k):
        d2 = np.min(((m[:, None, :] - centers[None, :c, :]) ** 2).sum(axis=2), axis=1)
        total = float(d2.sum())
        if total == 0.0:
            centers[c] = m[int(rng.integers(n))]
        else:
            centers[c] = m[int(rng.choice(n, p=d2 / total))]
    return centers


def kmeans_cluster(embeddings, k: int = 11, seed: int = 0, max_iters: int = 100) -> ClusterAssignment:
    """Lloyd's algorithm on L2-normalized rows with k-means++ seeding.

    Ties in assignment go to the lowest center index; an empty cluster keeps
    its previous center. The recorded objective never increases.
    """
    m = _normalize_rows(_as_matrix(embeddings, "embeddings"), "embeddings")
    n = m.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    if max_iters < 1:
        raise ValueError("max_iters must be positive")
    rng = np.random.default_rng(seed)
    centers = _kmeans_pp_init(m, k, rng)
    labels = None
    history: list[float] = []
    for _ in range(max_iters):
        d2 = ((m[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_labels = np.argmin(d2, axis=1)
        history.append(float(d2[np.arange(n), new_labels].sum()))
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for c in range(k):
            members = m[labels == c]
            if len(members) > 0:
                centers[c] = members.mean(axis=0)
    d2 = ((m[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    inertia = float(d2[np.arange(n), labels].sum())
    return ClusterAssignment(labels=labels.copy(), centers=centers, inertia=inertia,
                             history=history)


def _projection_basis(m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if m.shape[0] < 2:
        raise ValueError("need at least two rows to project")
    mean = m.mean(axis=0)
    centered = m - mean
    if not np.any(centered):
        raise ValueError("all rows are identical; nothing to project")
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    comps = vt[:2].copy()
    if comps.shape[0] < 2:
        comps = np.vstack([comps, np.zeros_like(comps[0])])
    # fix SVD sign ambiguity: largest-magnitude entry of each component > 0
    for c in range(2):
        lead = int(np.argmax(np.abs(comps[c])))
        if comps[c, lead] < 0:
            comps[c] = -comps[c]
    return mean, comps


def project_2d(embeddings) -> np.ndarray:
    """Mean-centered SVD projection onto the top two components, with a
    deterministic sign convention."""
    m = _as_matrix(embeddings, "embeddings")
    mean, comps = _projection_basis(m)
    return (m - mean) @ comps.T


def dedup_counts(sentences) -> list[tuple[str, int]]:
    """Unique sentences in first-occurrence order with their multiplicities."""
    seen: dict[str, int] = {}
    order: list[str] = []
    for s in sentences:
        if s in seen:
            seen[s] += 1
        else:
            seen[s] = 1
            order.append(s)
    return [(s, seen[s]) for s in order]


class CosineKMeans(BaseEstimator):
    """Estimator face of kmeans_cluster; predict() assigns to fitted centers."""

    def __init__(self, k: int = 11, seed: int = 0, max_iters: int = 100):
        self.k = k
        self.seed = seed
        self.max_iters = max_iters

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        result = kmeans_cluster(X, self.k, seed=self.seed, max_iters=self.max_iters)
        self.labels_ = result.labels
        self.cluster_centers_ = result.centers
        self.inertia_ = result.inertia
        self.history_ = result.history
        return self

    def predict(self, X) -> np.ndarray:
        if not hasattr(self, "cluster_centers_"):
            raise NotFittedError("CosineKMeans is not fitted")
        m = _normalize_rows(check_array(X, dtype=np.float64))
        d2 = ((m[:, None, :] - self.cluster_centers_[None, :, :]) ** 2).sum(axis=2)
        return np.argmin(d2, axis=1)

    def fit_predict(self, X, y=None) -> np.ndarray:
        return self.fit(X).labels_


class PlanarProjection(BaseEstimator, TransformerMixin):
    """Fit the 2-D projection on one matrix, then map any matrix into it."""

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        self.mean_, self.components_ = _projection_basis(X)
        return self

    def transform(self, X) -> np.ndarray:
        if not hasattr(self, "components_"):
            raise NotFittedError("PlanarProjection is not fitted")
        X = check_array(X, dtype=np.float64)
        return (X - self.mean_) @ self.components_.T
