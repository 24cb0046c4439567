"""Pairwise (BPR) matrix factorization and identity-feature factorization machine.

Both models are trained by per-triple SGD on
``-ln sigmoid(score(u, i) - score(u, j)) + reg_2 * ||touched params||^2``.
With only one-hot user and item features the FM score is
``w0 + w_u + w_i + <v_u, v_i>``; ``w0`` and ``w_u`` cancel in the pairwise
difference, so only item biases and the factors are ever updated.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

from ..dataio import TrainingView, sample_train_triples
from ..errors import DivergedTraining
from .state import TrainState

INIT_STD = 0.01


def init_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0,)))


def epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    """Independent stream per epoch index, so resuming never shifts the draws."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1, epoch)))


@njit(cache=True)
def _softplus(x):
    if x > 0:
        return x + math.log1p(math.exp(-x))
    return math.log1p(math.exp(x))


@njit(cache=True)
def _sigmoid(x):
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


@njit(cache=True)
def bprmf_sgd(P, Q, users, pos, neg, lr, reg):
    """One pass of SGD over the given triples; returns the mean triple loss."""
    k = P.shape[1]
    total = 0.0
    for t in range(users.shape[0]):
        u = users[t]
        i = pos[t]
        j = neg[t]
        x = 0.0
        norm = 0.0
        for f in range(k):
            x += P[u, f] * (Q[i, f] - Q[j, f])
            norm += P[u, f] * P[u, f] + Q[i, f] * Q[i, f] + Q[j, f] * Q[j, f]
        total += _softplus(-x) + reg * norm
        g = _sigmoid(-x)  # -dloss/dx
        for f in range(k):
            pu = P[u, f]
            qi = Q[i, f]
            qj = Q[j, f]
            P[u, f] = pu - lr * (-g * (qi - qj) + 2.0 * reg * pu)
            Q[i, f] = qi - lr * (-g * pu + 2.0 * reg * qi)
            Q[j, f] = qj - lr * (g * pu + 2.0 * reg * qj)
    if users.shape[0] == 0:
        return 0.0
    return total / users.shape[0]


@njit(cache=True)
def fm_sgd(w, Vu, Vi, users, pos, neg, lr, reg):
    k = Vu.shape[1]
    total = 0.0
    for t in range(users.shape[0]):
        u = users[t]
        i = pos[t]
        j = neg[t]
        x = w[i] - w[j]
        norm = w[i] * w[i] + w[j] * w[j]
        for f in range(k):
            x += Vu[u, f] * (Vi[i, f] - Vi[j, f])
            norm += Vu[u, f] * Vu[u, f] + Vi[i, f] * Vi[i, f] + Vi[j, f] * Vi[j, f]
        total += _softplus(-x) + reg * norm
        g = _sigmoid(-x)
        wi = w[i]
        wj = w[j]
        w[i] = wi - lr * (-g + 2.0 * reg * wi)
        w[j] = wj - lr * (g + 2.0 * reg * wj)
        for f in range(k):
            vu = Vu[u, f]
            vi = Vi[i, f]
            vj = Vi[j, f]
            Vu[u, f] = vu - lr * (-g * (vi - vj) + 2.0 * reg * vu)
            Vi[i, f] = vi - lr * (-g * vu + 2.0 * reg * vi)
            Vi[j, f] = vj - lr * (g * vu + 2.0 * reg * vj)
    if users.shape[0] == 0:
        return 0.0
    return total / users.shape[0]


def init_bprmf(config: dict, n_users: int, n_items: int, seed: int) -> TrainState:
    k = int(config["factors"])
    rng = init_rng(seed)
    params = {
        "user_factors": rng.normal(0.0, INIT_STD, (n_users, k)),
        "item_factors": rng.normal(0.0, INIT_STD, (n_items, k)),
    }
    return TrainState("bprmf", dict(config), seed, 0, params)


def init_fm(config: dict, n_users: int, n_items: int, seed: int) -> TrainState:
    k = int(config["factors"])
    rng = init_rng(seed)
    params = {
        "w0": np.zeros(1),
        "user_bias": np.zeros(n_users),
        "item_bias": np.zeros(n_items),
        "user_factors": rng.normal(0.0, INIT_STD, (n_users, k)),
        "item_factors": rng.normal(0.0, INIT_STD, (n_items, k)),
    }
    return TrainState("fm", dict(config), seed, 0, params)


def _epoch_triples(view: TrainingView, num_ng: int, seed: int, epoch: int):
    rng = epoch_rng(seed, epoch)
    users, pos, neg = sample_train_triples(view, num_ng, rng)
    order = rng.permutation(users.shape[0])
    return users[order], pos[order], neg[order]


def _check_finite(state: TrainState, epoch: int) -> None:
    for arr in state.params.values():
        if not np.all(np.isfinite(arr)):
            raise DivergedTraining(epoch)


def train_bprmf_epochs(state: TrainState, view: TrainingView, to_epoch: int,
                       num_ng: int | None = None) -> TrainState:
    cfg = state.config
    num_ng = int(cfg["num_ng"] if num_ng is None else num_ng)
    lr, reg = float(cfg["lr"]), float(cfg["reg_2"])
    P, Q = state.params["user_factors"], state.params["item_factors"]
    for epoch in range(state.epochs_done, to_epoch):
        users, pos, neg = _epoch_triples(view, num_ng, state.seed, epoch)
        loss = bprmf_sgd(P, Q, users, pos, neg, lr, reg)
        state.epochs_done = epoch + 1
        _check_finite(state, epoch + 1)
        state.losses.append(float(loss))
    return state


def train_fm_epochs(state: TrainState, view: TrainingView, to_epoch: int,
                    num_ng: int | None = None) -> TrainState:
    cfg = state.config
    num_ng = int(cfg["num_ng"] if num_ng is None else num_ng)
    lr, reg = float(cfg["lr"]), float(cfg["reg_2"])
    p = state.params
    for epoch in range(state.epochs_done, to_epoch):
        users, pos, neg = _epoch_triples(view, num_ng, state.seed, epoch)
        loss = fm_sgd(p["item_bias"], p["user_factors"], p["item_factors"], users, pos, neg, lr, reg)
        state.epochs_done = epoch + 1
        _check_finite(state, epoch + 1)
        state.losses.append(float(loss))
    return state


def score_bprmf(state: TrainState, user: int, items: np.ndarray) -> np.ndarray:
    p = state.params
    return p["item_factors"][items] @ p["user_factors"][user]


def score_fm(state: TrainState, user: int, items: np.ndarray) -> np.ndarray:
    p = state.params
    return (p["w0"][0] + p["user_bias"][user] + p["item_bias"][items]
            + p["item_factors"][items] @ p["user_factors"][user])
