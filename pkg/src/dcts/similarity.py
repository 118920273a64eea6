"""Cosine similarity, random-hyperplane LSH, and clicker-derived ad contexts."""

from __future__ import annotations

from collections import defaultdict
from typing import Hashable, Mapping, Sequence

import numpy as np

from . import _kernels
from .core import as_context

MAX_BITS = 64


def cosine(x, y) -> float:
    """Cosine of the angle between ``x`` and ``y``; 0 if either norm is 0."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {y.shape}")
    nx = np.linalg.norm(x)
    ny = np.linalg.norm(y)
    if nx == 0.0 or ny == 0.0:
        return 0.0
    # normalise before the dot product so that the result is symmetric
    # bit-for-bit and bounded by 1 up to rounding
    val = float(np.dot(x / nx, y / ny))
    return min(1.0, max(-1.0, val))


def clamped_similarity(x, y) -> float:
    """``max(0, cosine(x, y))``: negative similarity transfers nothing."""
    return max(0.0, cosine(x, y))


def _unit_rows(matrix: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    out = np.zeros_like(matrix)
    np.divide(matrix, norms, out=out, where=norms > 0)
    return out


def pairwise_clamped(a: np.ndarray, b: np.ndarray | None = None) -> np.ndarray:
    """Clamped cosine similarity between all rows of ``a`` and ``b``."""
    ua = _unit_rows(np.asarray(a, dtype=np.float64))
    ub = ua if b is None else _unit_rows(np.asarray(b, dtype=np.float64))
    return np.clip(ua @ ub.T, 0.0, 1.0)


def _stack(items: Mapping[Hashable, Sequence[float]]):
    ids = list(items)
    if not ids:
        return ids, None
    vecs = [as_context(items[i]) for i in ids]
    dim = vecs[0].shape[0]
    for i, v in zip(ids, vecs):
        if v.shape[0] != dim:
            raise ValueError(f"item {i!r} has dim {v.shape[0]}, expected {dim}")
    return ids, np.vstack(vecs)


class ExactIndex:
    """Brute-force neighbour index over clamped cosine similarity.

    Exposes the same query interface as :class:`LshIndex`; used for small
    populations (ads, test oracles) where a full scan is cheap.
    """

    def __init__(self, items: Mapping[Hashable, Sequence[float]], dim: int | None = None):
        self.ids, matrix = _stack(items)
        if matrix is None:
            matrix = np.zeros((0, dim or 0))
        self.vectors = matrix
        self.dim = matrix.shape[1]
        self._unit = _unit_rows(matrix)
        self._pos = {i: p for p, i in enumerate(self.ids)}

    def __len__(self):
        return len(self.ids)

    def __contains__(self, item_id):
        return item_id in self._pos

    def vector(self, item_id) -> np.ndarray:
        return self.vectors[self._pos[item_id]]

    def _scores(self, x: np.ndarray, rows: np.ndarray) -> np.ndarray:
        nx = np.linalg.norm(x)
        if nx == 0.0 or rows.size == 0:
            return np.zeros(rows.shape[0])
        return np.clip(self._unit[rows] @ (x / nx), 0.0, 1.0)

    def _rank(self, x, rows, k, exclude):
        if exclude is not None and exclude in self._pos:
            rows = rows[rows != self._pos[exclude]]
        scores = self._scores(x, rows)
        # stable sort on -score keeps insertion order among equal scores
        order = np.argsort(-scores, kind="stable")[:k]
        return [(self.ids[rows[o]], float(scores[o])) for o in order]

    def query(self, x, k: int, exclude=None) -> list[tuple[Hashable, float]]:
        """Top-``k`` items by clamped cosine, best first."""
        if k < 1:
            raise ValueError("k must be >= 1")
        x = as_context(x, self.dim)
        return self._rank(x, np.arange(len(self.ids)), k, exclude)

    def neighbors_of(self, item_id, k: int) -> list[tuple[Hashable, float]]:
        return self.query(self.vector(item_id), k, exclude=item_id)


class LshIndex(ExactIndex):
    """Random-hyperplane LSH over cosine similarity.

    Each of ``num_tables`` tables hashes a vector to ``num_bits`` sign bits,
    one per random hyperplane, packed into an integer bucket key.

    A query collects every item sharing the query's bucket in any table and
    adds the ``candidate_budget`` items with the smallest total Hamming
    distance between signatures (summed over tables). Candidates are then
    re-ranked by exact clamped cosine. With ``candidate_budget=0`` only
    bucket collisions are considered. When ``k`` covers the whole index the
    scan is exhaustive, so no neighbour is lost to hashing.
    """

    def __init__(self, items, num_bits: int = 16, num_tables: int = 8, seed: int = 0,
                 candidate_budget: int | None = None, dim: int | None = None):
        if not 1 <= num_bits <= MAX_BITS:
            raise ValueError(f"num_bits must be in [1, {MAX_BITS}]")
        if num_tables < 1:
            raise ValueError("num_tables must be >= 1")
        super().__init__(items, dim=dim)
        self.num_bits = num_bits
        self.num_tables = num_tables
        self.seed = seed
        self.candidate_budget = candidate_budget
        rng = np.random.default_rng(seed)
        planes = rng.standard_normal((num_tables, num_bits, self.dim))
        norms = np.linalg.norm(planes, axis=2, keepdims=True)
        self.hyperplanes = np.ascontiguousarray(planes / np.where(norms > 0, norms, 1.0))
        self.codes = _kernels.signatures(self.hyperplanes, np.ascontiguousarray(self.vectors))
        self.buckets: list[dict[int, list]] = []
        for t in range(num_tables):
            table = defaultdict(list)
            for pos, code in enumerate(self.codes[:, t].tolist()):
                table[code].append(self.ids[pos])
            self.buckets.append(dict(table))

    def signature(self, x) -> np.ndarray:
        x = as_context(x, self.dim)
        return _kernels.signatures(self.hyperplanes, x[np.newaxis, :])[0]

    def _budget(self, k: int) -> int:
        if self.candidate_budget is not None:
            return self.candidate_budget
        return max(20 * k, 64)

    def candidates(self, x, k: int) -> np.ndarray:
        """Row numbers of candidate items for a query vector."""
        sig = self.signature(x)
        rows = set()
        for t, code in enumerate(sig.tolist()):
            for item_id in self.buckets[t].get(code, ()):
                rows.add(self._pos[item_id])
        budget = min(self._budget(k), len(self.ids))
        if budget > 0:
            dist = _kernels.hamming(self.codes, np.ascontiguousarray(sig))
            nearest = np.argsort(dist, kind="stable")[:budget]
            rows.update(nearest.tolist())
        return np.array(sorted(rows), dtype=np.int64)

    def query(self, x, k: int, exclude=None) -> list[tuple[Hashable, float]]:
        if k < 1:
            raise ValueError("k must be >= 1")
        x = as_context(x, self.dim)
        n_other = len(self.ids) - (1 if exclude in self._pos else 0)
        if k >= n_other:
            rows = np.arange(len(self.ids))
        else:
            rows = self.candidates(x, k)
        return self._rank(x, rows, k, exclude)


def build_lsh_index(items: Mapping[Hashable, Sequence[float]], num_bits: int = 16,
                    num_tables: int = 8, seed: int = 0,
                    candidate_budget: int | None = None) -> LshIndex:
    return LshIndex(items, num_bits=num_bits, num_tables=num_tables, seed=seed,
                    candidate_budget=candidate_budget)


def build_index(items, method: str = "auto", exact_below: int = 2000, **lsh_kwargs):
    """Exact index for small populations, LSH otherwise (``method="auto"``)."""
    if method == "exact" or (method == "auto" and len(items) < exact_below):
        return ExactIndex(items)
    if method in ("lsh", "auto"):
        return LshIndex(items, **lsh_kwargs)
    raise ValueError(f"unknown index method {method!r}")


def query_neighbors(index: ExactIndex, x, k: int, exclude=None):
    """Top-``k`` neighbours of ``x`` as ``(id, similarity)``, best first."""
    return index.query(x, k, exclude=exclude)


def ad_context_from_clicks(clicker_contexts: Sequence[Sequence[float]],
                           dim: int | None = None) -> np.ndarray:
    """Per-dimension median of the clickers' contexts.

    An even number of clickers yields the midpoint of the two central values.
    With no clickers the zero vector of length ``dim`` is returned.
    """
    if len(clicker_contexts) == 0:
        if dim is None:
            raise ValueError("dim is required when there are no clickers")
        return np.zeros(dim)
    mat = np.vstack([as_context(c) for c in clicker_contexts])
    if dim is not None and mat.shape[1] != dim:
        raise ValueError(f"clicker contexts have dim {mat.shape[1]}, expected {dim}")
    return np.median(mat, axis=0)
