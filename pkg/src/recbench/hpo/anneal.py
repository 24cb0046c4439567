"""Simulated annealing over the unit-encoded space."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..searchspace import CATEGORICAL, decode_unit, encode_unit
from .base import COMPLETED, FAILED, Optimizer, Trial

INIT_STEP = 0.2
STEP_DECAY = 0.95
TEMP_DECAY = 0.9
RESAMPLE_PROB = 0.2
WARMUP = 5


def acceptance_probability(delta: float, temperature: float) -> float:
    """Metropolis rule for minimization: improvements always pass."""
    if delta <= 0.0:
        return 1.0
    if temperature <= 0.0:
        return 0.0
    return math.exp(-delta / temperature)


@dataclass
class Anneal(Optimizer):
    algorithm = "anneal"

    def __post_init__(self):
        super().__post_init__()
        self.center: dict | None = None
        self.center_objective: float | None = None
        self.t0: float | None = None
        self._first_objectives: list[float] = []

    def step_size(self, k: int | None = None) -> float:
        k = self.n_suggested if k is None else k
        return INIT_STEP * STEP_DECAY ** k

    def temperature(self, k: int | None = None) -> float:
        k = self.n_suggested if k is None else k
        t0 = 1.0 if self.t0 is None else self.t0
        return t0 * TEMP_DECAY ** k

    def suggest(self) -> tuple[dict, int]:
        if self.center is None:
            config = self._random()
        else:
            config = self._perturb(self.center, self.step_size())
        self.n_suggested += 1
        return config, self.b_max

    def _perturb(self, center: dict, sigma: float) -> dict:
        u = encode_unit(self.space, center)
        out = u.copy()
        for d, p in enumerate(self.space.params):
            if p.kind == CATEGORICAL:
                if self.rng.random() < RESAMPLE_PROB:
                    out[d] = self.rng.integers(len(p.choices)) / max(len(p.choices) - 1, 1)
            else:
                out[d] = min(max(u[d] + self.rng.normal(0.0, sigma), 0.0), 1.0)
        return decode_unit(self.space, out)

    def _on_observe(self, trial: Trial) -> None:
        if trial.status not in (COMPLETED, FAILED):
            return
        if len(self._first_objectives) < WARMUP:
            self._first_objectives.append(trial.objective)
            if len(self._first_objectives) == WARMUP:
                self.t0 = float(np.std(self._first_objectives, ddof=1))
        draw = self.rng.random()
        if self.center is None:
            self.center, self.center_objective = dict(trial.config), trial.objective
            return
        delta = trial.objective - self.center_objective
        if draw < acceptance_probability(delta, self.temperature()):
            self.center, self.center_objective = dict(trial.config), trial.objective
