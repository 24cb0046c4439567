"""PureSVD: truncated SVD of the binary interaction matrix."""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from ..dataio import TrainingView
from .state import TrainState

OVERSAMPLING = 10
POWER_ITERATIONS = 4


def randomized_svd(a, rank: int, rng: np.random.Generator,
                   oversampling: int = OVERSAMPLING, n_iter: int = POWER_ITERATIONS):
    """Rank-``rank`` SVD via seeded randomized subspace iteration.

    Each power step re-orthonormalizes with QR, so small singular values are
    not swamped by rounding.
    """
    m, n = a.shape
    rank = min(rank, m, n)
    width = min(rank + oversampling, m, n)
    omega = rng.standard_normal((n, width))
    q, _ = np.linalg.qr(a @ omega)
    for _ in range(n_iter):
        z, _ = np.linalg.qr(a.T @ q)
        q, _ = np.linalg.qr(a @ z)
    b = np.asarray((a.T @ q).T)
    ub, s, vt = np.linalg.svd(b, full_matrices=False)
    u = q @ ub[:, :rank]
    return u, s[:rank], vt[:rank]


def fit_puresvd(view: TrainingView, config: dict, seed: int = 0) -> TrainState:
    x = sp.csr_matrix(view.train, dtype=np.float64)
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0,)))
    u, s, vt = randomized_svd(x, int(config["factors"]), rng)
    params = {
        "user_factors": u * s,
        "item_factors": np.ascontiguousarray(vt.T),
        "singular_values": s,
    }
    return TrainState("puresvd", dict(config), seed, 0, params)


def score_puresvd(state: TrainState, user: int, items: np.ndarray) -> np.ndarray:
    p = state.params
    return p["item_factors"][items] @ p["user_factors"][user]
