"""Trial records and the suggest/observe optimizer contract."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import DuplicateTrial
from ..searchspace import SearchSpace, sample_uniform

COMPLETED = "completed"
PRUNED = "pruned"
FAILED = "failed"
STATUSES = (COMPLETED, PRUNED, FAILED)


@dataclass
class Trial:
    trial_id: int
    config: dict
    budget_epochs: int
    objective: float
    wall_seconds: float = 0.0
    status: str = COMPLETED

    def __post_init__(self):
        if self.status not in STATUSES:
            raise ValueError(f"unknown trial status {self.status!r}")
        if not 0.0 <= self.objective <= 1.0:
            raise ValueError(f"objective {self.objective} outside [0, 1]")

    def to_json(self) -> dict:
        return asdict(self)


@dataclass
class Optimizer:
    """Sequential model-based optimizer base class.

    Subclasses implement :meth:`suggest`; :meth:`observe` maintains the
    append-only history and the incumbent (best completed trial, strict
    improvement only). ``trials`` bounds the number of suggestions for
    optimizers without a fidelity schedule.
    """

    space: SearchSpace
    seed: int = 0
    trials: int = 20
    b_min: int = 5
    b_max: int = 30
    history: list = field(default_factory=list, init=False)
    incumbent: Trial | None = field(default=None, init=False)

    algorithm = "base"

    def __post_init__(self):
        self.rng = np.random.default_rng(self.seed)
        self._ids: set[int] = set()
        self.n_suggested = 0

    def suggest(self) -> tuple[dict, int]:
        raise NotImplementedError

    def observe(self, trial: Trial) -> None:
        if trial.trial_id in self._ids:
            raise DuplicateTrial(f"trial {trial.trial_id} already observed")
        self._ids.add(trial.trial_id)
        self.history.append(trial)
        if trial.status == COMPLETED and (self.incumbent is None
                                          or trial.objective < self.incumbent.objective):
            self.incumbent = trial
        self._on_observe(trial)

    def _on_observe(self, trial: Trial) -> None:
        pass

    def done(self) -> bool:
        return self.n_suggested >= self.trials and self._pending() == 0

    def _pending(self) -> int:
        return self.n_suggested - len(self.history)

    def model_data(self, budget: int | None = None) -> list[Trial]:
        """Observations made at ``budget`` (default: full budget).

        Failed trials stay in, carrying the worst objective.
        """
        budget = self.b_max if budget is None else budget
        return [t for t in self.history if t.budget_epochs == budget]

    def _random(self) -> dict:
        return sample_uniform(self.space, self.rng)


class RandomSearch(Optimizer):
    algorithm = "random"

    def suggest(self) -> tuple[dict, int]:
        self.n_suggested += 1
        return self._random(), self.b_max
