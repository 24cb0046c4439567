"""Hyperparameter optimizers behind one suggest/observe interface."""
from __future__ import annotations

from ..errors import ConfigError
from ..searchspace import SearchSpace
from .anneal import Anneal
from .base import COMPLETED, FAILED, PRUNED, Optimizer, RandomSearch, Trial
from .gp import GPBO
from .hyperband import BOHB, Bracket, Hyperband, Rung, hyperband_schedule, schedule_epochs
from .smac import SMAC
from .tpe import TPE

ALGORITHMS = {
    "random": RandomSearch,
    "anneal": Anneal,
    "tpe": TPE,
    "smac": SMAC,
    "gpbo": GPBO,
    "hyperband": Hyperband,
    "bohb": BOHB,
}
FIDELITY_ALGORITHMS = frozenset({"hyperband", "bohb"})

__all__ = [
    "ALGORITHMS", "FIDELITY_ALGORITHMS", "make_optimizer", "Optimizer", "Trial",
    "COMPLETED", "PRUNED", "FAILED", "RandomSearch", "Anneal", "TPE", "SMAC", "GPBO",
    "Hyperband", "BOHB", "Bracket", "Rung", "hyperband_schedule", "schedule_epochs",
]


def make_optimizer(algorithm: str, space: SearchSpace, seed: int, trials: int = 20,
                   b_min: int = 5, b_max: int = 30, eta: int = 3, **extra) -> Optimizer:
    try:
        cls = ALGORITHMS[algorithm]
    except KeyError:
        raise ConfigError(f"unknown optimizer {algorithm!r}; expected one of {sorted(ALGORITHMS)}") from None
    kwargs = dict(space=space, seed=seed, trials=trials, b_min=b_min, b_max=b_max, **extra)
    if algorithm in FIDELITY_ALGORITHMS:
        kwargs["eta"] = eta
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad settings for {algorithm}: {exc}") from None
