"""Tree-structured Parzen estimator."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri

from ..searchspace import CATEGORICAL, SearchSpace, decode_unit, encode_unit
from .base import Optimizer, Trial

GAMMA = 0.25
N_CANDIDATES = 24
N_STARTUP = 5
MIN_BANDWIDTH = 0.02


def split_good_bad(trials: list[Trial], gamma: float = GAMMA) -> tuple[list[Trial], list[Trial]]:
    """Best ``max(1, ceil(gamma * n))`` trials (ties by trial id) versus the rest."""
    ranked = sorted(trials, key=lambda t: (t.objective, t.trial_id))
    n_good = max(1, math.ceil(gamma * len(ranked)))
    return ranked[:n_good], ranked[n_good:]


def scott_bandwidth(points: np.ndarray) -> float:
    n = points.shape[0]
    sigma = float(np.std(points, ddof=1)) if n > 1 else 0.0
    return max(sigma * n ** (-1.0 / 5.0), MIN_BANDWIDTH)


class ParzenEstimator:
    """Per-dimension Parzen densities over unit-encoded observations.

    Numeric dimensions use an equal-weight mixture of Gaussians truncated to
    [0, 1]; categorical dimensions use add-one smoothed frequencies.
    """

    def __init__(self, space: SearchSpace, configs: list[dict]):
        self.space = space
        self.points = (np.array([encode_unit(space, c) for c in configs])
                       if configs else np.empty((0, len(space))))
        self.dims = []
        for d, p in enumerate(space.params):
            col = self.points[:, d]
            if p.kind == CATEGORICAL:
                k = len(p.choices)
                idx = np.rint(col * (k - 1)).astype(int) if k > 1 else np.zeros(len(col), dtype=int)
                counts = np.bincount(idx, minlength=k)
                self.dims.append(("cat", (counts + 1.0) / (len(col) + k)))
            else:
                bw = scott_bandwidth(col) if len(col) else 1.0
                lo_mass = ndtr((0.0 - col) / bw)
                hi_mass = ndtr((1.0 - col) / bw)
                self.dims.append(("num", (col, bw, hi_mass - lo_mass)))

    def categorical_probs(self, dim: int) -> np.ndarray:
        kind, probs = self.dims[dim]
        assert kind == "cat"
        return probs

    def logpdf(self, u: np.ndarray) -> float:
        total = 0.0
        for d, (kind, data) in enumerate(self.dims):
            x = u[d]
            if kind == "cat":
                k = len(data)
                total += math.log(data[int(round(x * (k - 1))) if k > 1 else 0])
            else:
                mus, bw, mass = data
                if len(mus) == 0:
                    continue  # uniform prior on [0, 1]
                dens = np.exp(-0.5 * ((x - mus) / bw) ** 2) / (bw * math.sqrt(2 * math.pi) * mass)
                total += math.log(max(float(dens.mean()), 1e-300))
        return total

    def sample(self, rng: np.random.Generator) -> dict:
        u = np.empty(len(self.dims))
        for d, (kind, data) in enumerate(self.dims):
            if kind == "cat":
                k = len(data)
                c = rng.choice(k, p=data)
                u[d] = c / (k - 1) if k > 1 else 0.0
            else:
                mus, bw, _ = data
                if len(mus) == 0:
                    u[d] = rng.random()
                    continue
                mu = mus[rng.integers(len(mus))]
                a, b = ndtr(-mu / bw), ndtr((1.0 - mu) / bw)
                q = a + rng.random() * (b - a)
                u[d] = min(max(mu + bw * float(ndtri(min(max(q, 1e-300), 1 - 1e-16))), 0.0), 1.0)
        return decode_unit(self.space, u)


def tpe_propose(space: SearchSpace, trials: list[Trial], rng: np.random.Generator,
                gamma: float = GAMMA, n_candidates: int = N_CANDIDATES) -> dict:
    """Draw candidates from the good-set density and keep the best l/g ratio."""
    good, bad = split_good_bad(trials, gamma)
    l = ParzenEstimator(space, [t.config for t in good])
    g = ParzenEstimator(space, [t.config for t in bad])
    best, best_score = None, -math.inf
    for _ in range(n_candidates):
        cand = l.sample(rng)
        u = encode_unit(space, cand)
        s = l.logpdf(u) - g.logpdf(u)
        if s > best_score:
            best, best_score = cand, s
    return best


@dataclass
class TPE(Optimizer):
    algorithm = "tpe"
    gamma: float = GAMMA
    n_candidates: int = N_CANDIDATES
    n_startup: int = N_STARTUP

    def suggest(self) -> tuple[dict, int]:
        data = self.model_data()
        self.n_suggested += 1
        if len(data) < self.n_startup:
            return self._random(), self.b_max
        return tpe_propose(self.space, data, self.rng, self.gamma, self.n_candidates), self.b_max
