"""Bundled sample data."""
from __future__ import annotations

from importlib import resources
from pathlib import Path

import numpy as np

SYNTHETIC = "synthetic50.tsv"


def bundled_path(name: str = SYNTHETIC) -> Path:
    return Path(str(resources.files(__package__).joinpath(name)))


def make_synthetic(n_users: int = 50, n_items: int = 120, per_user: int = 20,
                   n_groups: int = 5, seed: int = 7) -> list[tuple[str, str, int, int]]:
    """Clustered implicit interactions: each user mostly picks from one item group.

    Rows are ``(user, item, rating, timestamp)`` with ratings in 1..5.
    """
    rng = np.random.default_rng(seed)
    group_of_item = np.arange(n_items) % n_groups
    popularity = rng.pareto(1.5, n_items) + 1.0
    rows = []
    ts = 1_000_000
    for u in range(n_users):
        g = u % n_groups
        in_group = np.flatnonzero(group_of_item == g)
        n_in = int(round(per_user * 0.8))
        w = popularity[in_group] / popularity[in_group].sum()
        items = list(rng.choice(in_group, size=min(n_in, in_group.size), replace=False, p=w))
        rest = np.setdiff1d(np.arange(n_items), items)
        w = popularity[rest] / popularity[rest].sum()
        items += list(rng.choice(rest, size=per_user - len(items), replace=False, p=w))
        for i in items:
            ts += int(rng.integers(1, 500))
            rows.append((f"u{u}", f"i{i}", int(rng.integers(1, 6)), ts))
    order = rng.permutation(len(rows))
    return [rows[k] for k in order]


def write_synthetic(path, **kwargs) -> Path:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for u, i, r, t in make_synthetic(**kwargs):
            fh.write(f"{u}\t{i}\t{r}\t{t}\n")
    return path


def synthetic_dataset(**kwargs):
    """``make_synthetic`` rows indexed as a ``Dataset``."""
    from ..dataio import Interaction, build_dataset
    return build_dataset([Interaction(u, i, float(r), t) for u, i, r, t in make_synthetic(**kwargs)])
