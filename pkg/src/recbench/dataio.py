"""Interaction ingestion, global split-by-ratio and negative sampling."""
from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import EmptyDataset, InvalidSpec, IoError, MissingRating, ParseError

log = logging.getLogger(__name__)

FORMATS = ("generic-tsv", "ml1m")
MAX_NEG_RETRIES = 100


@dataclass(frozen=True)
class Interaction:
    user: str
    item: str
    rating: float | None = None
    timestamp: int = 0


def _parse_fields(fields: list[str], lineno: int) -> Interaction:
    if len(fields) < 2 or not fields[0] or not fields[1]:
        raise ParseError(f"expected at least user and item, got {fields!r}", lineno)
    rating = None
    ts = 0
    try:
        if len(fields) > 2 and fields[2] != "":
            rating = float(fields[2])
        if len(fields) > 3 and fields[3] != "":
            ts = int(float(fields[3]))
    except ValueError as exc:
        raise ParseError(str(exc), lineno) from None
    return Interaction(fields[0], fields[1], rating, ts)


def load_interactions(path, format: str = "generic-tsv") -> list[Interaction]:
    """Read interaction rows in file order.

    ``generic-tsv`` rows are ``user<TAB>item[<TAB>rating[<TAB>timestamp]]``; a
    non-numeric first row is treated as a header (the LastFM ``user_artists.dat``
    file ships with one). ``ml1m`` rows are ``user::item::rating::timestamp``.
    """
    if format not in FORMATS:
        raise ParseError(f"unknown format {format!r}", 0)
    path = Path(path)
    if not path.is_file():
        raise IoError(f"no such file: {path}")
    sep = "\t" if format == "generic-tsv" else "::"
    rows: list[Interaction] = []
    with path.open(encoding="utf-8", errors="replace") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            fields = [f.strip() for f in line.split(sep)]
            try:
                rows.append(_parse_fields(fields, lineno))
            except ParseError:
                if lineno == 1 and format == "generic-tsv":
                    continue
                raise
    log.info("loaded %d interactions from %s", len(rows), path)
    return rows


def binarize(interactions: Iterable[Interaction], threshold: float = 4.0,
             mode: str = "implicit") -> list[Interaction]:
    """Keep positives only: explicit mode retains ``rating > threshold``."""
    if mode == "implicit":
        return list(interactions)
    if mode != "explicit":
        raise InvalidSpec(f"unknown binarize mode {mode!r}")
    out = []
    for row in interactions:
        if row.rating is None:
            raise MissingRating(f"explicit mode needs ratings ({row.user}, {row.item})")
        if row.rating > threshold:
            out.append(row)
    return out


@dataclass(frozen=True, eq=False)
class Dataset:
    """Indexed positive interactions, kept in input order.

    ``users``/``items``/``timestamps`` are aligned arrays with one entry per
    retained (deduplicated) interaction. Indices follow first appearance.
    """

    user_ids: tuple[str, ...]
    item_ids: tuple[str, ...]
    users: np.ndarray
    items: np.ndarray
    timestamps: np.ndarray

    @property
    def n_users(self) -> int:
        return len(self.user_ids)

    @property
    def n_items(self) -> int:
        return len(self.item_ids)

    @property
    def n_interactions(self) -> int:
        return len(self.users)

    @property
    def user_index(self) -> dict[str, int]:
        return {u: i for i, u in enumerate(self.user_ids)}

    @property
    def item_index(self) -> dict[str, int]:
        return {u: i for i, u in enumerate(self.item_ids)}

    def matrix(self, rows: np.ndarray | None = None) -> sp.csr_matrix:
        """Binary user x item CSR matrix over all (or the selected) interactions."""
        u = self.users if rows is None else self.users[rows]
        i = self.items if rows is None else self.items[rows]
        m = sp.csr_matrix((np.ones(len(u)), (u, i)), shape=(self.n_users, self.n_items))
        m.sum_duplicates()
        m.sort_indices()
        return m

    def stats(self) -> dict:
        counts = np.bincount(self.users, minlength=self.n_users)
        n = self.n_interactions
        return {
            "users": self.n_users,
            "items": self.n_items,
            "interactions": n,
            "sparsity": n / (self.n_users * self.n_items) if n else 0.0,
            "users_with_1": int((counts == 1).sum()),
        }

    @property
    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for arr in (self.users, self.items, self.timestamps):
            h.update(np.ascontiguousarray(arr, dtype="<i8").tobytes())
        h.update("\x00".join(self.user_ids).encode())
        h.update("\x01".join(self.item_ids).encode())
        return h.hexdigest()[:16]

    def to_tsv(self, path, rows: np.ndarray | None = None) -> None:
        rows = np.arange(self.n_interactions) if rows is None else rows
        with Path(path).open("w", encoding="utf-8") as fh:
            for r in rows:
                fh.write(f"{self.user_ids[self.users[r]]}\t{self.item_ids[self.items[r]]}\t1\t{self.timestamps[r]}\n")


def build_dataset(interactions: Sequence[Interaction]) -> Dataset:
    if not interactions:
        raise EmptyDataset("no interactions to index")
    user_index: dict[str, int] = {}
    item_index: dict[str, int] = {}
    seen: set[tuple[int, int]] = set()
    users, items, stamps = [], [], []
    for row in interactions:
        u = user_index.setdefault(row.user, len(user_index))
        i = item_index.setdefault(row.item, len(item_index))
        if (u, i) in seen:
            continue
        seen.add((u, i))
        users.append(u)
        items.append(i)
        stamps.append(row.timestamp)
    return Dataset(
        user_ids=tuple(user_index),
        item_ids=tuple(item_index),
        users=np.asarray(users, dtype=np.int64),
        items=np.asarray(items, dtype=np.int64),
        timestamps=np.asarray(stamps, dtype=np.int64),
    )


@dataclass(frozen=True)
class SplitSpec:
    method: str = "random"
    test_ratio: float = 0.2
    valid_ratio: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.method not in ("random", "temporal"):
            raise InvalidSpec(f"unknown split method {self.method!r}")
        for name in ("test_ratio", "valid_ratio"):
            r = getattr(self, name)
            if not 0.0 < r < 1.0:
                raise InvalidSpec(f"{name} must lie in (0, 1), got {r}")
        if self.test_ratio + self.valid_ratio >= 1.0:
            raise InvalidSpec("test_ratio + valid_ratio must be < 1")

    def to_json(self) -> dict:
        return {"method": self.method, "test_ratio": self.test_ratio,
                "valid_ratio": self.valid_ratio, "seed": self.seed}


class TrainingView(NamedTuple):
    """What a model sees while training.

    ``train`` holds the positives to fit; ``known`` is every positive the
    sampler must never draw as a negative (train plus validation).
    """

    n_users: int
    n_items: int
    train: sp.csr_matrix
    known: sp.csr_matrix


@dataclass(frozen=True, eq=False)
class SplitDataset:
    dataset: Dataset
    spec: SplitSpec
    train: np.ndarray  # row indices into dataset arrays
    valid: np.ndarray
    test: np.ndarray

    @property
    def n_users(self) -> int:
        return self.dataset.n_users

    @property
    def n_items(self) -> int:
        return self.dataset.n_items

    def matrix(self, part: str) -> sp.csr_matrix:
        rows = {"train": self.train, "valid": self.valid, "test": self.test,
                "train+valid": np.concatenate([self.train, self.valid])}[part]
        return self.dataset.matrix(rows)

    def training_view(self, final: bool = False) -> TrainingView:
        """Tuning view (fit on train) or final view (fit on train plus validation)."""
        known = self.matrix("train+valid")
        train = known if final else self.matrix("train")
        return TrainingView(self.n_users, self.n_items, train, known)

    def counts(self) -> dict:
        return {"train": len(self.train), "valid": len(self.valid), "test": len(self.test)}

    def manifest(self) -> dict:
        return {"dataset": self.dataset.fingerprint, "counts": self.counts(),
                "seed": self.spec.seed, "method": self.spec.method,
                "ratios": {"test": self.spec.test_ratio, "valid": self.spec.valid_ratio}}

    def save(self, out_dir) -> None:
        """Write the split manifest plus one TSV per partition."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "split.json").write_text(json.dumps(self.manifest(), indent=2, sort_keys=True) + "\n")
        for part in ("train", "valid", "test"):
            self.dataset.to_tsv(out / f"{part}.tsv", getattr(self, part))


def split_global(dataset: Dataset, spec: SplitSpec) -> SplitDataset:
    """Global split-by-ratio with a nested validation slice.

    The test set takes ``ceil(test_ratio * n)`` records; validation then takes
    ``ceil(valid_ratio * rest)`` of the remaining records.
    """
    n = dataset.n_interactions
    if n == 0:
        raise EmptyDataset("cannot split an empty dataset")
    n_test = math.ceil(spec.test_ratio * n)
    n_rest = n - n_test
    n_valid = math.ceil(spec.valid_ratio * n_rest)
    if spec.method == "random":
        rng = np.random.default_rng(spec.seed)
        order = rng.permutation(n)
    else:
        order = np.argsort(dataset.timestamps, kind="stable")
    rest, test = order[:n_rest], order[n_rest:]
    # random: rest is a permutation, so its tail is a random slice;
    # temporal: rest is time-ordered, so its tail is the most recent slice
    train, valid = rest[: n_rest - n_valid], rest[n_rest - n_valid:]
    return SplitDataset(dataset, spec, np.sort(train), np.sort(valid), np.sort(test))


def _row_sets(matrix: sp.csr_matrix) -> np.ndarray:
    """Sorted flat keys ``user * n_items + item`` for fast membership tests."""
    coo = matrix.tocoo()
    keys = coo.row.astype(np.int64) * matrix.shape[1] + coo.col.astype(np.int64)
    keys.sort()
    return keys


def _is_member(sorted_keys: np.ndarray, keys: np.ndarray) -> np.ndarray:
    if sorted_keys.size == 0:
        return np.zeros(keys.shape, dtype=bool)
    pos = np.searchsorted(sorted_keys, keys)
    pos = np.minimum(pos, sorted_keys.size - 1)
    return sorted_keys[pos] == keys


def sample_train_triples(view: TrainingView, num_ng: int, rng: np.random.Generator
                         ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Uniform negative sampling, ``num_ng`` negatives per training positive.

    Returns aligned ``(users, pos_items, neg_items)`` arrays in CSR order
    (positive-major, negatives consecutive). Users holding every item cannot
    be sampled and are dropped with a warning.
    """
    if not 1 <= num_ng:
        raise InvalidSpec(f"num_ng must be >= 1, got {num_ng}")
    train = view.train
    n_items = view.n_items
    users = np.repeat(np.arange(view.n_users, dtype=np.int64), np.diff(train.indptr))
    pos = train.indices.astype(np.int64)
    known_per_user = np.diff(view.known.indptr)
    saturated = known_per_user[users] >= n_items
    if saturated.any():
        log.warning("skipping %d users that interacted with every item",
                    len(np.unique(users[saturated])))
        users, pos = users[~saturated], pos[~saturated]
    users = np.repeat(users, num_ng)
    pos = np.repeat(pos, num_ng)
    keys = _row_sets(view.known)
    neg = rng.integers(0, n_items, size=users.shape[0])
    bad = _is_member(keys, users * n_items + neg)
    retries = 0
    while bad.any():
        idx = np.flatnonzero(bad)
        if retries >= MAX_NEG_RETRIES:
            # cap reached: fall back to an explicit draw from the complement
            for k in idx:
                row = view.known.indices[view.known.indptr[users[k]]:view.known.indptr[users[k] + 1]]
                free = np.setdiff1d(np.arange(n_items), row, assume_unique=True)
                neg[k] = free[rng.integers(len(free))]
            break
        neg[idx] = rng.integers(0, n_items, size=idx.size)
        bad[idx] = _is_member(keys, users[idx] * n_items + neg[idx])
        retries += 1
    return users, pos, neg


def build_eval_candidates(split: SplitDataset, pool_size: int = 1000,
                          rng: np.random.Generator | None = None,
                          target: str = "test") -> dict[int, np.ndarray]:
    """Per-user candidate lists: the user's target items plus uniform negatives.

    ``target="test"`` excludes the user's train and validation positives from
    the negative pool. ``target="valid"`` builds the tuning-time lists and
    excludes only train positives plus the validation items themselves; test
    items are invisible at tuning time.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    if target == "test":
        targets = split.matrix("test")
        excluded = split.matrix("train+valid")
    elif target == "valid":
        targets = split.matrix("valid")
        excluded = split.matrix("train")
    else:
        raise InvalidSpec(f"unknown candidate target {target!r}")
    n_items = split.n_items
    out: dict[int, np.ndarray] = {}
    for u in range(split.n_users):
        t = targets.indices[targets.indptr[u]:targets.indptr[u + 1]]
        if t.size == 0:
            continue
        ex = excluded.indices[excluded.indptr[u]:excluded.indptr[u + 1]]
        blocked = np.zeros(n_items, dtype=bool)
        blocked[ex] = True
        blocked[t] = True
        n_free = n_items - int(blocked.sum())
        need = max(pool_size - t.size, 0)
        if need >= n_free:
            negs = np.flatnonzero(~blocked)
        else:
            negs = _sample_without_replacement(blocked, need, rng)
        out[u] = np.sort(np.concatenate([t, negs]).astype(np.int64))
    return out


def _sample_without_replacement(blocked: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = blocked.size
    if k * 4 < n:
        # rejection sampling is much cheaper than materializing the complement
        chosen = np.empty(0, dtype=np.int64)
        taken = blocked.copy()
        while chosen.size < k:
            draw = rng.integers(0, n, size=2 * (k - chosen.size))
            draw = draw[~taken[draw]]
            _, first = np.unique(draw, return_index=True)
            draw = draw[np.sort(first)][: k - chosen.size]
            taken[draw] = True
            chosen = np.concatenate([chosen, draw])
        return chosen
    free = np.flatnonzero(~blocked)
    return rng.choice(free, size=k, replace=False)


def load_dataset(path, format: str = "generic-tsv", mode: str = "implicit",
                 threshold: float = 4.0) -> Dataset:
    return build_dataset(binarize(load_interactions(path, format), threshold, mode))
