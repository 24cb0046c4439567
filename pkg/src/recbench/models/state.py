"""Resumable model state and its on-disk checkpoint format.

A checkpoint is ``MAGIC | u32 header length | JSON header | raw arrays``.
Arrays are little-endian and their dtype/shape/offset live in the header.
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import CorruptCheckpoint

MAGIC = b"RBCKPT"
FORMAT_VERSION = 1


@dataclass
class TrainState:
    model: str
    config: dict
    seed: int
    epochs_done: int = 0
    params: dict[str, np.ndarray] = field(default_factory=dict)
    losses: list[float] = field(default_factory=list)
    # derived, never serialized (e.g. assembled sparse matrices)
    cache: dict = field(default_factory=dict, repr=False, compare=False)

    def copy(self) -> "TrainState":
        return TrainState(self.model, dict(self.config), self.seed, self.epochs_done,
                          {k: v.copy() for k, v in self.params.items()}, list(self.losses))


def checkpoint_key(model: str, dataset_id: str, config: dict, seed: int) -> str:
    blob = json.dumps({"model": model, "dataset": dataset_id, "config": config, "seed": seed},
                      sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:24]


def dumps(state: TrainState) -> bytes:
    arrays = []
    meta = []
    offset = 0
    for name in sorted(state.params):
        arr = np.asarray(state.params[name])
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        raw = np.ascontiguousarray(le).tobytes()
        meta.append({"name": name, "dtype": le.dtype.str, "shape": list(arr.shape),
                     "offset": offset, "nbytes": len(raw)})
        arrays.append(raw)
        offset += len(raw)
    header = {
        "version": FORMAT_VERSION,
        "model": state.model,
        "config": state.config,
        "epochs_done": state.epochs_done,
        "seed": state.seed,
        "losses": state.losses,
        "arrays": meta,
    }
    hbytes = json.dumps(header, sort_keys=True).encode()
    return MAGIC + struct.pack("<I", len(hbytes)) + hbytes + b"".join(arrays)


def loads(blob: bytes) -> TrainState:
    if not blob.startswith(MAGIC) or len(blob) < len(MAGIC) + 4:
        raise CorruptCheckpoint("bad magic")
    (hlen,) = struct.unpack_from("<I", blob, len(MAGIC))
    start = len(MAGIC) + 4
    try:
        header = json.loads(blob[start:start + hlen])
    except ValueError as exc:
        raise CorruptCheckpoint(f"unreadable header: {exc}") from None
    if header.get("version") != FORMAT_VERSION:
        raise CorruptCheckpoint(f"unsupported checkpoint version {header.get('version')}")
    body = memoryview(blob)[start + hlen:]
    params = {}
    for m in header["arrays"]:
        end = m["offset"] + m["nbytes"]
        if end > len(body):
            raise CorruptCheckpoint(f"truncated array {m['name']}")
        arr = np.frombuffer(body[m["offset"]:end], dtype=np.dtype(m["dtype"]))
        params[m["name"]] = arr.reshape(m["shape"]).astype(arr.dtype.newbyteorder("="))
    return TrainState(header["model"], header["config"], header["seed"],
                      header["epochs_done"], params, list(header.get("losses", [])))


def save(state: TrainState, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(dumps(state))
    tmp.replace(path)


def load(path) -> TrainState:
    return loads(Path(path).read_bytes())
