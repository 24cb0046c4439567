"""Item-based k-nearest-neighbour recommender with plain cosine similarity."""
from __future__ import annotations

from collections import OrderedDict

import numpy as np
import scipy.sparse as sp

from ..dataio import TrainingView
from .state import TrainState

_NEIGHBOR_CACHE: "OrderedDict[str, tuple]" = OrderedDict()
_CACHE_SIZE = 4


def _matrix_key(x: sp.csr_matrix) -> str:
    import hashlib

    h = hashlib.sha256()
    h.update(np.asarray(x.shape, dtype="<i8").tobytes())
    h.update(np.ascontiguousarray(x.indptr, dtype="<i8").tobytes())
    h.update(np.ascontiguousarray(x.indices, dtype="<i8").tobytes())
    return h.hexdigest()


def cosine_similarity(x: sp.csr_matrix) -> sp.csr_matrix:
    """Item-item cosine over binary columns; 0 where either column is empty."""
    x = (x > 0).astype(np.float64).tocsc()
    norms = np.sqrt(np.asarray(x.sum(axis=0)).ravel())
    co = (x.T @ x).tocsr()
    co.sort_indices()
    rows = np.repeat(np.arange(co.shape[0]), np.diff(co.indptr))
    denom = norms[rows] * norms[co.indices]
    sim = co.copy()
    sim.data = co.data / denom
    return sim


def _sorted_neighbors(x: sp.csr_matrix):
    """Per item, all other items with non-zero similarity, best first.

    Ties keep the smaller item index first. The result is independent of
    ``maxk`` so it is cached per training matrix and sliced per trial.
    """
    key = _matrix_key(x)
    hit = _NEIGHBOR_CACHE.get(key)
    if hit is not None:
        _NEIGHBOR_CACHE.move_to_end(key)
        return hit
    sim = cosine_similarity(x)
    n = sim.shape[0]
    rows = np.repeat(np.arange(n), np.diff(sim.indptr))
    keep = (rows != sim.indices) & (sim.data > 0)
    rows, cols, vals = rows[keep], sim.indices[keep], sim.data[keep]
    order = np.lexsort((cols, -vals, rows))
    rows, cols, vals = rows[order], cols[order], vals[order]
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=n), out=indptr[1:])
    hit = (indptr, cols.astype(np.int64), vals)
    _NEIGHBOR_CACHE[key] = hit
    if len(_NEIGHBOR_CACHE) > _CACHE_SIZE:
        _NEIGHBOR_CACHE.popitem(last=False)
    return hit


def fit_itemknn(view: TrainingView, config: dict, seed: int = 0) -> TrainState:
    maxk = int(config["maxk"])
    x = view.train
    indptr, cols, vals = _sorted_neighbors(x)
    counts = np.minimum(np.diff(indptr), maxk)
    starts = indptr[:-1]
    take = np.concatenate([np.arange(s, s + c) for s, c in zip(starts, counts)]) if counts.sum() else np.empty(0, dtype=np.int64)
    new_indptr = np.zeros_like(indptr)
    np.cumsum(counts, out=new_indptr[1:])
    params = {
        "knn_indptr": new_indptr,
        "knn_indices": cols[take],
        "knn_data": vals[take],
        "x_indptr": x.indptr.astype(np.int64),
        "x_indices": x.indices.astype(np.int64),
        "shape": np.asarray(x.shape, dtype=np.int64),
    }
    return TrainState("itemknn", dict(config), seed, 0, params)


def _neighbor_matrix(state: TrainState) -> sp.csr_matrix:
    p = state.params
    n_items = int(p["shape"][1])
    return sp.csr_matrix((p["knn_data"], p["knn_indices"], p["knn_indptr"]), shape=(n_items, n_items))


def score_itemknn(state: TrainState, user: int, items: np.ndarray) -> np.ndarray:
    """Sum of similarities between each item and its retained neighbours the user holds."""
    p = state.params
    n_items = int(p["shape"][1])
    w = state.cache.get("w")
    if w is None:
        w = state.cache["w"] = _neighbor_matrix(state)
    held = np.zeros(n_items)
    held[p["x_indices"][p["x_indptr"][user]:p["x_indptr"][user + 1]]] = 1.0
    return np.asarray(w[items] @ held).ravel()
