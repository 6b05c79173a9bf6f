"""Geometric kernels: farthest point sampling, k nearest neighbors,
inverse-distance feature interpolation and point set fusion.

Point clouds are plain (n, 3) float arrays. The index-producing kernels are
pure numpy; only the feature interpolation builds a differentiable graph,
and its gradients flow through the interpolated features alone, never
through the coordinates (the weights are constants of the geometry).
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ContractError, NumericsError

#: Distance floor used by the inverse-distance weights so a query sitting
#: exactly on a seed gets a finite, dominating weight.
DISTANCE_FLOOR = 1e-8


def as_cloud(points, name="cloud"):
    """Validate and return points as an (n, 3) float array."""
    pts = np.asarray(points)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ContractError(f"{name} must have shape (n, 3), got {pts.shape}")
    if pts.shape[0] < 1:
        raise ContractError(f"{name} must contain at least one point")
    if not np.isfinite(pts).all():
        raise NumericsError(f"{name} contains non-finite coordinates")
    return pts


@dataclass
class NeighborIndex:
    """Per-query neighbor table: indices into a reference cloud plus the
    matching Euclidean distances, each row sorted by increasing distance."""

    indices: np.ndarray  # (n, k) int
    distances: np.ndarray  # (n, k) float, nondecreasing along axis 1


class GeometryFreeze:
    """Record/replay of the discrete geometric decisions in a computation.

    Index selections (nearest neighbors, farthest point sampling) and the
    interpolation weights derived from neighbor distances are constants of
    the geometry: the backward pass deliberately does not differentiate
    through them. A freezer records them on its first pass and replays them
    on later passes, so finite differences probe exactly the function the
    adjoints differentiate. Call ``begin_pass`` before each evaluation and
    run the evaluation inside ``freeze_geometry``.
    """

    def __init__(self):
        self.tape = []
        self._pos = 0
        self._recording = True

    def begin_pass(self):
        if self.tape:
            self._recording = False
        self._pos = 0

    def take(self, compute):
        if self._recording:
            value = compute()
            self.tape.append(value)
            return value
        if self._pos >= len(self.tape):
            raise ContractError("geometry replay ran past the recorded tape")
        value = self.tape[self._pos]
        self._pos += 1
        return value


_FREEZE = None


@contextmanager
def freeze_geometry(freezer):
    """Route geometric decisions through ``freezer`` within the block."""
    global _FREEZE
    if _FREEZE is not None:
        raise ContractError("geometry freezers do not nest")
    _FREEZE = freezer
    try:
        yield freezer
    finally:
        _FREEZE = None


def canonical_start_index(points):
    """Index of the lexicographically smallest point (x, then y, then z).

    Gives farthest point sampling a start that does not depend on the
    storage order of the cloud, which keeps the whole model equivariant
    under input permutations.
    """
    pts = as_cloud(points)
    return int(np.lexsort((pts[:, 2], pts[:, 1], pts[:, 0]))[0])


def farthest_point_sample(points, k, start=0):
    """Greedy max-min subset selection.

    Returns ``k`` distinct indices; the first is ``start`` and each next one
    maximizes the minimum distance to everything selected so far, breaking
    ties by lowest index.
    """
    pts = as_cloud(points)
    n = pts.shape[0]
    if not 1 <= k <= n:
        raise ContractError(f"farthest_point_sample: k={k} outside [1, {n}]")
    if not 0 <= start < n:
        raise ContractError(f"farthest_point_sample: start={start} out of range")
    if _FREEZE is not None:
        return _FREEZE.take(lambda: _fps_compute(pts, k, start))
    return _fps_compute(pts, k, start)


def _fps_compute(pts, k, start):
    chosen = np.empty(k, dtype=np.int64)
    chosen[0] = start
    diff = pts - pts[start]
    min_d2 = np.einsum("ij,ij->i", diff, diff)
    min_d2[start] = -np.inf
    for i in range(1, k):
        nxt = int(np.argmax(min_d2))  # argmax takes the first max: lowest index
        chosen[i] = nxt
        diff = pts - pts[nxt]
        d2 = np.einsum("ij,ij->i", diff, diff)
        np.minimum(min_d2, d2, out=min_d2)
        min_d2[nxt] = -np.inf
    return chosen


def knn(queries, reference, k):
    """Exact k nearest neighbors by squared Euclidean distance.

    Ties are broken by lowest reference index; a reference point identical
    to the query is eligible. Distances are computed per pair from the raw
    coordinate differences (chunked over queries to bound memory), so the
    result does not depend on any factored distance expansion.
    """
    q = as_cloud(queries, "queries")
    r = as_cloud(reference, "reference")
    if k > r.shape[0]:
        raise ContractError(f"knn: k={k} exceeds reference size {r.shape[0]}")
    if k < 1:
        raise ContractError("knn: k must be >= 1")
    if _FREEZE is not None:
        return _FREEZE.take(lambda: _knn_compute(q, r, k))
    return _knn_compute(q, r, k)


def _knn_compute(q, r, k):
    n = q.shape[0]
    m = r.shape[0]
    indices = np.empty((n, k), dtype=np.int64)
    distances = np.empty((n, k), dtype=q.dtype)
    chunk = max(1, int(2_000_000 // max(m, 1)))
    for lo in range(0, n, chunk):
        hi = min(n, lo + chunk)
        diff = q[lo:hi, None, :] - r[None, :, :]
        d2 = np.einsum("ijk,ijk->ij", diff, diff)
        order = _smallest_k(d2, k)
        indices[lo:hi] = order
        distances[lo:hi] = np.sqrt(np.take_along_axis(d2, order, axis=1))
    return NeighborIndex(indices=indices, distances=distances)


def _smallest_k(d2, k):
    """Per-row indices of the k smallest values, ordered by (value, index).

    Selection goes through argpartition for speed, then repairs the
    partition boundary so exact distance ties resolve to the lowest index,
    matching a stable full sort.
    """
    rows, m = d2.shape
    if k == 1:
        return d2.argmin(axis=1)[:, None]  # argmin takes the first minimum
    if k >= m:
        return np.argsort(d2, axis=1, kind="stable")
    part = np.argpartition(d2, k - 1, axis=1)[:, :k]
    vstar = np.take_along_axis(d2, part, axis=1).max(axis=1, keepdims=True)
    below = d2 < vstar
    quota = k - below.sum(axis=1, keepdims=True)
    at_boundary = d2 == vstar
    fill = at_boundary & (np.cumsum(at_boundary, axis=1) <= quota)
    winners = np.nonzero(below | fill)[1].reshape(rows, k)  # index-ascending
    by_value = np.argsort(
        np.take_along_axis(d2, winners, axis=1), axis=1, kind="stable"
    )
    return np.take_along_axis(winners, by_value, axis=1)


def interpolate_seed_features(queries, seeds, k=3):
    """Inverse-distance weighted average of the k nearest seed features.

    For query ``p_i`` with neighbor seeds ``j``, the output row is
    ``sum_j w_ij f_j / sum_j w_ij`` with ``w_ij = 1 / max(d_ij, 1e-8)``.
    Differentiable with respect to the seed features; the weights are
    treated as constants of the geometry.

    Args:
        queries: (m, 3) array of query coordinates.
        seeds: a SeedSet (coords + features).
        k: neighborhood size over the seeds.

    Returns:
        Tensor of shape (m, seed_channels).
    """
    q = as_cloud(queries, "queries")
    coords = seeds.coords.data if isinstance(seeds.coords, ad.Tensor) else seeds.coords
    features = seeds.features
    n_seeds = coords.shape[0]
    if n_seeds < 1:
        raise ContractError("interpolate_seed_features: empty seed set")
    if k > n_seeds:
        raise ContractError(f"interpolate_seed_features: k={k} exceeds {n_seeds} seeds")
    nbr = knn(q, coords, k)
    w = 1.0 / np.maximum(nbr.distances, DISTANCE_FLOOR)
    w = w / w.sum(axis=1, keepdims=True)
    m = q.shape[0]
    channels = features.shape[1]
    gathered = ad.gather_rows(features, nbr.indices.reshape(-1))
    weights = ad.constant(
        np.repeat(w.reshape(-1, 1), channels, axis=1), like=features
    )
    weighted = ad.mul(gathered, weights)
    return ad.reduce_sum(ad.reshape(weighted, (m, k, channels)), axis=1)


def fuse_and_resample(seeds, partial, n0, return_indices=False):
    """Concatenate two clouds and farthest-point-sample ``n0`` points.

    Sampling starts at index 0 of the concatenation (the first point of
    ``seeds``). This builds the coarse cloud that the refinement stages
    consume.
    """
    s = as_cloud(seeds, "seeds")
    p = as_cloud(partial, "partial")
    merged = np.concatenate([s, p], axis=0)
    if n0 > merged.shape[0]:
        raise ContractError(
            f"fuse_and_resample: n0={n0} exceeds {merged.shape[0]} fused points"
        )
    idx = farthest_point_sample(merged, n0, start=0)
    if return_indices:
        return merged[idx], idx
    return merged[idx]
