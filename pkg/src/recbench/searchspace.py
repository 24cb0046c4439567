"""Typed hyperparameter search spaces.

A :class:`SearchSpace` is an ordered tuple of :class:`ParamSpec`. Configs are
plain ``dict`` objects mapping parameter names to values; they are treated as
read-only once produced. Surrogate-based optimizers work in the unit
hypercube through :func:`encode_unit` / :func:`decode_unit`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .errors import InvalidConfig, InvalidSpace, InvalidVector, UnknownModel

INT = "int"
FLOAT = "float"
CATEGORICAL = "categorical"

# Float values are kept at 12 significant digits so that decode(encode(c)) == c
# holds exactly and logs stay readable.
_FLOAT_DIGITS = 12


def _quantize(x: float) -> float:
    return float(f"{x:.{_FLOAT_DIGITS}g}")


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class ParamSpec:
    name: str
    kind: str
    lo: float | int | None = None
    hi: float | int | None = None
    scale: str = "linear"
    choices: tuple = ()

    def __post_init__(self):
        if not self.name or not isinstance(self.name, str):
            raise InvalidSpace("parameter name must be a non-empty string")
        if self.kind in (INT, FLOAT):
            if self.lo is None or self.hi is None:
                raise InvalidSpace(f"{self.name}: range kinds need lo and hi")
            if not self.lo < self.hi:
                raise InvalidSpace(f"{self.name}: need lo < hi, got [{self.lo}, {self.hi}]")
            if self.kind == INT and (int(self.lo) != self.lo or int(self.hi) != self.hi):
                raise InvalidSpace(f"{self.name}: int bounds must be integral")
            if self.scale not in ("linear", "log"):
                raise InvalidSpace(f"{self.name}: unknown scale {self.scale!r}")
            if self.scale == "log" and self.lo <= 0:
                raise InvalidSpace(f"{self.name}: log scale needs lo > 0")
            if self.kind == INT and self.scale == "log":
                raise InvalidSpace(f"{self.name}: log scale is only supported for floats")
        elif self.kind == CATEGORICAL:
            choices = tuple(self.choices)
            if not choices:
                raise InvalidSpace(f"{self.name}: categorical needs at least one choice")
            if len(set(choices)) != len(choices):
                raise InvalidSpace(f"{self.name}: duplicate categorical choices")
            object.__setattr__(self, "choices", choices)
        else:
            raise InvalidSpace(f"{self.name}: unknown kind {self.kind!r}")

    # constructors -----------------------------------------------------------
    @classmethod
    def int_range(cls, name: str, lo: int, hi: int) -> "ParamSpec":
        return cls(name, INT, int(lo), int(hi))

    @classmethod
    def float_range(cls, name: str, lo: float, hi: float, scale: str = "linear") -> "ParamSpec":
        return cls(name, FLOAT, float(lo), float(hi), scale)

    @classmethod
    def categorical(cls, name: str, choices: Iterable) -> "ParamSpec":
        return cls(name, CATEGORICAL, choices=tuple(choices))

    # per-dimension operations ----------------------------------------------
    def contains(self, value: Any) -> bool:
        if self.kind == CATEGORICAL:
            return value in self.choices
        if isinstance(value, bool) or not isinstance(value, (int, float, np.integer, np.floating)):
            return False
        if self.kind == INT and int(value) != value:
            return False
        return self.lo <= value <= self.hi

    def sample(self, rng: np.random.Generator):
        if self.kind == INT:
            return int(rng.integers(self.lo, self.hi + 1))
        if self.kind == CATEGORICAL:
            return self.choices[int(rng.integers(len(self.choices)))]
        if self.scale == "log":
            x = 10.0 ** rng.uniform(math.log10(self.lo), math.log10(self.hi))
        else:
            x = rng.uniform(self.lo, self.hi)
        return min(max(_quantize(x), self.lo), self.hi)

    def to_unit(self, value) -> float:
        if self.kind == CATEGORICAL:
            k = len(self.choices)
            return 0.0 if k == 1 else self.choices.index(value) / (k - 1)
        if self.scale == "log":
            lo, hi = math.log10(self.lo), math.log10(self.hi)
            return (math.log10(value) - lo) / (hi - lo)
        return (value - self.lo) / (self.hi - self.lo)

    def from_unit(self, u: float):
        u = min(max(float(u), 0.0), 1.0)
        if self.kind == CATEGORICAL:
            return self.choices[_round_half_up(u * (len(self.choices) - 1))]
        if self.kind == INT:
            return int(self.lo) + _round_half_up(u * (self.hi - self.lo))
        if self.scale == "log":
            lo, hi = math.log10(self.lo), math.log10(self.hi)
            x = 10.0 ** (lo + u * (hi - lo))
        else:
            x = self.lo + u * (self.hi - self.lo)
        return min(max(_quantize(x), self.lo), self.hi)

    @property
    def n_choices(self) -> int:
        return len(self.choices) if self.kind == CATEGORICAL else 0

    # JSON -------------------------------------------------------------------
    def to_json(self) -> dict:
        out: dict[str, Any] = {"name": self.name, "kind": self.kind}
        if self.kind == CATEGORICAL:
            out["choices"] = list(self.choices)
        else:
            out.update(lo=self.lo, hi=self.hi, scale=self.scale)
        return out

    @classmethod
    def from_json(cls, obj: Mapping) -> "ParamSpec":
        try:
            kind = obj["kind"]
            name = obj["name"]
        except (KeyError, TypeError) as exc:
            raise InvalidSpace(f"parameter spec needs 'name' and 'kind': {obj!r}") from exc
        if kind == CATEGORICAL:
            return cls.categorical(name, obj.get("choices", ()))
        if kind == INT:
            return cls.int_range(name, obj.get("lo"), obj.get("hi"))
        if kind == FLOAT:
            return cls.float_range(name, obj.get("lo"), obj.get("hi"), obj.get("scale", "linear"))
        raise InvalidSpace(f"{name}: unknown kind {kind!r}")


@dataclass(frozen=True)
class SearchSpace:
    params: tuple[ParamSpec, ...]
    _index: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        params = tuple(self.params)
        names = [p.name for p in params]
        if len(set(names)) != len(names):
            raise InvalidSpace(f"duplicate parameter names in {names}")
        if not params:
            raise InvalidSpace("a search space needs at least one parameter")
        object.__setattr__(self, "params", params)
        object.__setattr__(self, "_index", {n: i for i, n in enumerate(names)})

    def __len__(self) -> int:
        return len(self.params)

    def __iter__(self):
        return iter(self.params)

    def __getitem__(self, name: str) -> ParamSpec:
        return self.params[self._index[name]]

    @property
    def names(self) -> list[str]:
        return [p.name for p in self.params]

    def validate(self, config: Mapping) -> None:
        """Raise :class:`InvalidConfig` unless ``config`` belongs to this space."""
        if set(config) != set(self._index):
            raise InvalidConfig(f"config keys {sorted(config)} do not match space {sorted(self._index)}")
        for p in self.params:
            if not p.contains(config[p.name]):
                raise InvalidConfig(f"{p.name}={config[p.name]!r} outside its range")

    def is_valid(self, config: Mapping) -> bool:
        try:
            self.validate(config)
        except InvalidConfig:
            return False
        return True

    def to_json(self) -> list[dict]:
        return [p.to_json() for p in self.params]

    @classmethod
    def from_json(cls, objs: Sequence[Mapping]) -> "SearchSpace":
        if not isinstance(objs, (list, tuple)):
            raise InvalidSpace("a search space is a JSON list of parameter objects")
        return cls(tuple(ParamSpec.from_json(o) for o in objs))


def sample_uniform(space: SearchSpace, rng: np.random.Generator) -> dict:
    """Draw every dimension independently and uniformly (log-uniform on log scales)."""
    return {p.name: p.sample(rng) for p in space.params}


def encode_unit(space: SearchSpace, config: Mapping) -> np.ndarray:
    space.validate(config)
    return np.array([p.to_unit(config[p.name]) for p in space.params], dtype=float)


def decode_unit(space: SearchSpace, u) -> dict:
    u = np.asarray(u, dtype=float).ravel()
    if u.shape[0] != len(space):
        raise InvalidVector(f"expected {len(space)} coordinates, got {u.shape[0]}")
    return {p.name: p.from_unit(x) for p, x in zip(space.params, u)}


_LR = ParamSpec.float_range("lr", 1e-4, 1e-2, "log")
_REG = ParamSpec.float_range("reg_2", 1e-4, 1e-2, "log")
_NUM_NG = ParamSpec.int_range("num_ng", 1, 10)
_FACTORS = ParamSpec.int_range("factors", 1, 100)

_DEFAULT_SPACES = {
    "itemknn": (ParamSpec.int_range("maxk", 1, 100),),
    "puresvd": (_FACTORS,),
    "bprmf": (_NUM_NG, _FACTORS, _LR, _REG),
    "fm": (_NUM_NG, _FACTORS, _LR, _REG),
    "neumf": (
        _NUM_NG,
        _FACTORS,
        ParamSpec.int_range("num_layers", 1, 3),
        ParamSpec.float_range("dropout", 0.0, 1.0),
        _LR,
        _REG,
        ParamSpec.categorical("batch_size", (64, 128, 256, 512)),
    ),
}

MODEL_NAMES = tuple(_DEFAULT_SPACES)


def default_space(model_name: str) -> SearchSpace:
    try:
        return SearchSpace(_DEFAULT_SPACES[model_name])
    except KeyError:
        raise UnknownModel(f"unknown model {model_name!r}; expected one of {MODEL_NAMES}") from None
