"""Recommenders behind one resumable ``train`` / ``score`` contract."""
from __future__ import annotations

import numpy as np

from ..dataio import TrainingView
from ..errors import InvalidUser, UnknownModel
from . import bpr, knn, neumf, svd
from .state import TrainState, checkpoint_key

__all__ = [
    "TrainState",
    "checkpoint_key",
    "init_state",
    "train",
    "score",
    "rank_topn",
    "BUDGET_INSENSITIVE",
    "MODELS",
]

MODELS = ("itemknn", "puresvd", "bprmf", "fm", "neumf")
BUDGET_INSENSITIVE = frozenset({"itemknn", "puresvd"})

_INIT = {"bprmf": bpr.init_bprmf, "fm": bpr.init_fm, "neumf": neumf.init_neumf}
_EPOCHS = {"bprmf": bpr.train_bprmf_epochs, "fm": bpr.train_fm_epochs,
           "neumf": neumf.train_neumf_epochs}
_FIT = {"itemknn": knn.fit_itemknn, "puresvd": svd.fit_puresvd}
_SCORE = {"itemknn": knn.score_itemknn, "puresvd": svd.score_puresvd,
          "bprmf": bpr.score_bprmf, "fm": bpr.score_fm, "neumf": neumf.score_neumf}


def _check_model(model: str) -> None:
    if model not in MODELS:
        raise UnknownModel(f"unknown model {model!r}; expected one of {MODELS}")


def init_state(model: str, config: dict, n_users: int, n_items: int, seed: int) -> TrainState:
    """Untrained state; closed-form models get an empty placeholder fitted on first ``train``."""
    _check_model(model)
    if model in _INIT:
        return _INIT[model](config, n_users, n_items, seed)
    return TrainState(model, dict(config), seed, 0, {})


def train(state: TrainState, view: TrainingView, to_epoch: int) -> TrainState:
    """Advance ``state`` to ``to_epoch`` epochs (in place) and return it.

    ItemKNN and PureSVD ignore the budget: they are fitted once and then only
    their epoch counter moves.
    """
    _check_model(state.model)
    if to_epoch < state.epochs_done:
        raise ValueError(f"cannot train backwards: {state.epochs_done} -> {to_epoch}")
    if state.model in _FIT:
        if not state.params:
            fitted = _FIT[state.model](view, state.config, state.seed)
            state.params = fitted.params
            state.cache.clear()
        state.epochs_done = to_epoch
        return state
    return _EPOCHS[state.model](state, view, to_epoch)


def score(state: TrainState, user: int, items) -> np.ndarray:
    items = np.asarray(items, dtype=np.int64)
    n_users = _n_users(state)
    if not 0 <= user < n_users:
        raise InvalidUser(f"user index {user} outside [0, {n_users})")
    return np.asarray(_SCORE[state.model](state, user, items), dtype=np.float64)


def _n_users(state: TrainState) -> int:
    p = state.params
    if state.model == "itemknn":
        return int(p["shape"][0])
    if state.model == "neumf":
        return p["user_gmf"].shape[0]
    return p["user_factors"].shape[0]


def rank_topn(state: TrainState, user: int, candidates, n: int) -> np.ndarray:
    """Top ``n`` candidates by descending score; ties go to the smaller item index."""
    candidates = np.asarray(candidates, dtype=np.int64)
    if candidates.size == 0:
        raise ValueError("empty candidate list")
    if n < 1:
        raise ValueError("n must be >= 1")
    return top_by_score(candidates, score(state, user, candidates), n)


def top_by_score(candidates: np.ndarray, scores: np.ndarray, n: int) -> np.ndarray:
    order = np.lexsort((candidates, -scores))
    return candidates[order[:n]]
