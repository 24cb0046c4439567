"""Hyperband brackets and BOHB (Hyperband with a TPE proposal model)."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

from ..errors import InvalidSchedule
from .base import Optimizer, Trial
from .tpe import GAMMA, N_CANDIDATES, tpe_propose

RANDOM_FRACTION = 1.0 / 3.0


@dataclass(frozen=True)
class Rung:
    n_configs: int
    budget: int


@dataclass(frozen=True)
class Bracket:
    s: int
    rungs: tuple[Rung, ...]

    def epochs(self, resume: bool = True) -> int:
        """Training epochs the bracket consumes.

        With ``resume`` a promoted configuration continues from its previous
        rung, so it is charged only the budget difference.
        """
        total, prev = 0, 0
        for rung in self.rungs:
            total += rung.n_configs * (rung.budget - (prev if resume else 0))
            prev = rung.budget
        return total


def _floor_log(x: float, base: int) -> int:
    s = int(math.floor(math.log(x) / math.log(base)))
    # guard against log rounding at exact powers
    while base ** (s + 1) <= x:
        s += 1
    while s > 0 and base ** s > x:
        s -= 1
    return s


def hyperband_schedule(b_min: int = 5, b_max: int = 30, eta: int = 3) -> list[Bracket]:
    """Successive-halving brackets from most to least aggressive."""
    if eta < 2 or b_min < 1 or b_min > b_max or int(b_min) != b_min or int(b_max) != b_max:
        raise InvalidSchedule(f"invalid schedule b_min={b_min}, b_max={b_max}, eta={eta}")
    s_max = _floor_log(b_max / b_min, eta)
    brackets = []
    for s in range(s_max, -1, -1):
        n = math.ceil((s_max + 1) / (s + 1) * eta ** s)
        budget = int(b_max) // eta ** s
        rungs = []
        while n >= 1:
            rungs.append(Rung(n, min(budget, b_max)))
            if budget >= b_max:
                break
            n //= eta
            budget *= eta
        brackets.append(Bracket(s, tuple(rungs)))
    return brackets


def schedule_epochs(brackets: list[Bracket], resume: bool = True) -> int:
    return sum(b.epochs(resume) for b in brackets)


@dataclass
class _RungState:
    rung: int
    queue: list  # configs awaiting suggestion (promotions); None entries mean "draw new"
    results: list = field(default_factory=list)  # (objective, trial_id, config)
    issued: int = 0


@dataclass
class Hyperband(Optimizer):
    """Hyperband over epoch budgets.

    Full schedules are repeated until at least ``trials * b_max`` epochs are
    consumed, which gives the same training budget as ``trials`` full-budget
    trials of a non-fidelity optimizer.
    """

    algorithm = "hyperband"
    eta: int = 3

    def __post_init__(self):
        super().__post_init__()
        self.schedule = hyperband_schedule(self.b_min, self.b_max, self.eta)
        self.epochs_per_schedule = schedule_epochs(self.schedule)
        self.target_epochs = self.trials * self.b_max
        self.schedules_done = 0
        self.bracket_pos = 0  # index into schedule of the active bracket
        self._active: _RungState | None = None
        self.current_bracket: int | None = None
        self.current_rung: int | None = None

    # schedule bookkeeping ---------------------------------------------------
    @property
    def epochs_consumed(self) -> int:
        done = self.schedules_done * self.epochs_per_schedule
        return done + sum(b.epochs() for b in self.schedule[:self.bracket_pos])

    def done(self) -> bool:
        at_boundary = self._active is None and self.bracket_pos == 0
        return at_boundary and self.schedules_done > 0 and self.epochs_consumed >= self.target_epochs

    def _bracket(self) -> Bracket:
        return self.schedule[self.bracket_pos]

    def _start_rung(self, rung: int, queue: list) -> None:
        self._active = _RungState(rung, queue)

    def suggest(self) -> tuple[dict, int]:
        if self._active is None:
            self._start_rung(0, [None] * self._bracket().rungs[0].n_configs)
        st = self._active
        if st.issued >= len(st.queue):
            raise RuntimeError("rung fully issued; observe pending trials before suggesting")
        bracket = self._bracket()
        config = st.queue[st.issued]
        if config is None:
            config = self.propose()
        st.queue[st.issued] = config
        st.issued += 1
        self.n_suggested += 1
        self.current_bracket = bracket.s
        self.current_rung = st.rung
        return dict(config), bracket.rungs[st.rung].budget

    def propose(self) -> dict:
        return self._random()

    def _on_observe(self, trial: Trial) -> None:
        st = self._active
        if st is None:
            return
        st.results.append((trial.objective, trial.trial_id, dict(trial.config)))
        bracket = self._bracket()
        rung = bracket.rungs[st.rung]
        if len(st.results) < rung.n_configs:
            return
        if st.rung + 1 < len(bracket.rungs):
            keep = bracket.rungs[st.rung + 1].n_configs
            ranked = sorted(st.results, key=lambda r: (r[0], r[1]))
            promoted = [cfg for _, _, cfg in ranked[:keep]]
            self._start_rung(st.rung + 1, promoted)
            return
        self._active = None
        self.bracket_pos += 1
        if self.bracket_pos == len(self.schedule):
            self.bracket_pos = 0
            self.schedules_done += 1


@dataclass
class BOHB(Hyperband):
    """Hyperband whose fresh configurations come from TPE at the richest budget level."""

    algorithm = "bohb"
    random_fraction: float = RANDOM_FRACTION
    gamma: float = GAMMA
    n_candidates: int = N_CANDIDATES

    def __post_init__(self):
        super().__post_init__()
        self.last_draw: str | None = None

    def model_budget(self) -> int | None:
        """Largest budget with at least ``d + 2`` observations, if any."""
        need = len(self.space) + 2
        counts: dict[int, int] = {}
        for t in self.history:
            counts[t.budget_epochs] = counts.get(t.budget_epochs, 0) + 1
        ok = [b for b, c in counts.items() if c >= need]
        return max(ok) if ok else None

    def propose(self) -> dict:
        # the coin is always tossed so the random stream does not depend on history size
        coin = self.rng.random()
        budget = self.model_budget()
        if budget is None or coin < self.random_fraction:
            self.last_draw = "random"
            return self._random()
        self.last_draw = "model"
        return tpe_propose(self.space, self.model_data(budget), self.rng,
                           self.gamma, self.n_candidates)
