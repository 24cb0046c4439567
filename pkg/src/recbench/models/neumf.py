"""NeuMF (GMF + MLP towers) trained with a mini-batch BPR loss.

Forward graph per (user, item):

    gmf  = Pg[u] * Qg[i]
    a0   = [Pm[u], Qm[i]]                      width 2k
    a_l  = dropout(relu(a_{l-1} W_l + b_l))    widths halve: k, k/2, ... (min 1)
    s    = [gmf, a_L] . h

Gradients are accumulated by hand in reverse through this fixed graph.
"""
from __future__ import annotations

import numpy as np

from ..dataio import TrainingView
from .bpr import _check_finite, _epoch_triples, init_rng
from .state import TrainState

INIT_STD = 0.01


def tower_widths(factors: int, num_layers: int) -> list[int]:
    """Output width of each MLP layer, halving from ``2 * factors``."""
    widths = []
    width = 2 * factors
    for _ in range(num_layers):
        width = max(1, width // 2)
        widths.append(width)
    return widths


def init_neumf(config: dict, n_users: int, n_items: int, seed: int) -> TrainState:
    k = int(config["factors"])
    rng = init_rng(seed)
    params = {
        "user_gmf": rng.normal(0.0, INIT_STD, (n_users, k)),
        "item_gmf": rng.normal(0.0, INIT_STD, (n_items, k)),
        "user_mlp": rng.normal(0.0, INIT_STD, (n_users, k)),
        "item_mlp": rng.normal(0.0, INIT_STD, (n_items, k)),
    }
    fan_in = 2 * k
    for layer, width in enumerate(tower_widths(k, int(config["num_layers"]))):
        limit = np.sqrt(6.0 / (fan_in + width))
        params[f"W{layer}"] = rng.uniform(-limit, limit, (fan_in, width))
        params[f"b{layer}"] = np.zeros(width)
        fan_in = width
    limit = np.sqrt(6.0 / (k + fan_in + 1))
    params["h"] = rng.uniform(-limit, limit, k + fan_in)
    return TrainState("neumf", dict(config), seed, 0, params)


def _n_layers(params: dict) -> int:
    return sum(1 for name in params if name.startswith("W"))


def forward(params: dict, users: np.ndarray, items: np.ndarray, dropout: float = 0.0,
            rng: np.random.Generator | None = None):
    """Scores for aligned ``users``/``items``; returns ``(scores, tape)``.

    Dropout is applied only when ``rng`` is given (training mode).
    """
    pu_g, qi_g = params["user_gmf"][users], params["item_gmf"][items]
    gmf = pu_g * qi_g
    a = np.concatenate([params["user_mlp"][users], params["item_mlp"][items]], axis=1)
    acts, pre, masks = [a], [], []
    for layer in range(_n_layers(params)):
        z = a @ params[f"W{layer}"] + params[f"b{layer}"]
        a = np.maximum(z, 0.0)
        mask = None
        if rng is not None and dropout > 0.0:
            keep = 1.0 - dropout
            if keep <= 0.0:
                mask = np.zeros_like(a)
            else:
                mask = (rng.random(a.shape) < keep) / keep
            a = a * mask
        pre.append(z)
        masks.append(mask)
        acts.append(a)
    feat = np.concatenate([gmf, a], axis=1)
    scores = feat @ params["h"]
    tape = {"pu_g": pu_g, "qi_g": qi_g, "acts": acts, "pre": pre, "masks": masks, "feat": feat}
    return scores, tape


def backward(params: dict, tape: dict, dscores: np.ndarray) -> dict:
    """Reverse pass. Embedding gradients are returned per row (aligned with the batch)."""
    k = params["user_gmf"].shape[1]
    grads = {"h": tape["feat"].T @ dscores}
    dfeat = dscores[:, None] * params["h"][None, :]
    dgmf, da = dfeat[:, :k], dfeat[:, k:]
    grads["user_gmf"] = dgmf * tape["qi_g"]
    grads["item_gmf"] = dgmf * tape["pu_g"]
    for layer in reversed(range(_n_layers(params))):
        mask = tape["masks"][layer]
        if mask is not None:
            da = da * mask
        dz = da * (tape["pre"][layer] > 0.0)
        grads[f"W{layer}"] = tape["acts"][layer].T @ dz
        grads[f"b{layer}"] = dz.sum(axis=0)
        da = dz @ params[f"W{layer}"].T
    grads["user_mlp"] = da[:, :k]
    grads["item_mlp"] = da[:, k:]
    return grads


_EMBEDDINGS = ("user_gmf", "item_gmf", "user_mlp", "item_mlp")


def batch_loss_and_grads(params: dict, users, pos, neg, reg: float, dropout: float = 0.0,
                         rng: np.random.Generator | None = None):
    """Summed BPR loss of a batch of triples plus L2 on the embeddings it touches.

    Returns ``(loss, dense_grads, sparse_grads)``; ``sparse_grads`` maps each
    embedding table to ``(row_indices, row_gradients)`` with repeated rows.
    """
    b = users.shape[0]
    u2 = np.concatenate([users, users])
    i2 = np.concatenate([pos, neg])
    scores, tape = forward(params, u2, i2, dropout, rng)
    diff = scores[:b] - scores[b:]
    softplus = np.logaddexp(0.0, -diff)
    sig = 1.0 / (1.0 + np.exp(np.clip(diff, -700, 700)))  # sigmoid(-diff)
    dscores = np.concatenate([-sig, sig])
    g = backward(params, tape, dscores)

    norm = 0.0
    sparse = {}
    for name in _EMBEDDINGS:
        table = params[name]
        idx = u2 if name.startswith("user") else i2
        row_grad = g.pop(name)
        # each triple regularizes its user once and both items once
        reg_idx = users if name.startswith("user") else i2
        rows = table[reg_idx]
        norm += float((rows * rows).sum())
        sparse[name] = (np.concatenate([idx, reg_idx]),
                        np.concatenate([row_grad, 2.0 * reg * rows]))
    loss = float(softplus.sum()) + reg * norm
    return loss, g, sparse


def densify(params: dict, dense: dict, sparse: dict) -> dict:
    out = {name: arr.copy() for name, arr in dense.items()}
    for name, (idx, rows) in sparse.items():
        full = np.zeros_like(params[name])
        np.add.at(full, idx, rows)
        out[name] = full
    return out


def sgd_step(params: dict, dense: dict, sparse: dict, lr: float) -> None:
    for name, grad in dense.items():
        params[name] -= lr * grad
    for name, (idx, rows) in sparse.items():
        np.add.at(params[name], idx, -lr * rows)


def train_neumf_epochs(state: TrainState, view: TrainingView, to_epoch: int,
                       num_ng: int | None = None) -> TrainState:
    cfg = state.config
    num_ng = int(cfg["num_ng"] if num_ng is None else num_ng)
    lr, reg = float(cfg["lr"]), float(cfg["reg_2"])
    dropout = float(cfg["dropout"])
    batch = int(cfg["batch_size"])
    params = state.params
    for epoch in range(state.epochs_done, to_epoch):
        users, pos, neg = _epoch_triples(view, num_ng, state.seed, epoch)
        # separate stream for dropout masks so the sampled triples match other models
        drop_rng = np.random.default_rng(np.random.SeedSequence(state.seed, spawn_key=(2, epoch)))
        total = 0.0
        for start in range(0, users.shape[0], batch):
            sl = slice(start, start + batch)
            loss, dense, sparse = batch_loss_and_grads(params, users[sl], pos[sl], neg[sl],
                                                       reg, dropout, drop_rng)
            sgd_step(params, dense, sparse, lr)
            total += loss
        state.epochs_done = epoch + 1
        _check_finite(state, epoch + 1)
        state.losses.append(total / max(users.shape[0], 1))
    return state


def score_neumf(state: TrainState, user: int, items: np.ndarray) -> np.ndarray:
    items = np.asarray(items, dtype=np.int64)
    users = np.full(items.shape[0], user, dtype=np.int64)
    scores, _ = forward(state.params, users, items)
    return scores
