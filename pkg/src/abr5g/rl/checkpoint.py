"""Versioned binary checkpoint files.

Layout: 8-byte magic, little-endian uint64 header length, a UTF-8 JSON
header (sorted keys, no timestamps), then raw little-endian array payloads
in the order the header lists them. Identical checkpoints produce identical
bytes.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"ABR5GCK1"


@dataclass(frozen=True)
class Checkpoint:
    epoch: int
    params: np.ndarray | None
    validation_qoe: float
    rng_state: dict
    meta: dict
    optimizer: dict | None = None

    def network(self):
        from .network import PolicyNetwork

        if self.params is None:
            raise ValueError(f"checkpoint for epoch {self.epoch} was stored without parameters")
        arch = self.meta["arch"]
        net = PolicyNetwork(arch["n_actions"], arch["n_filters"], arch["kernel"], arch["history"],
                            dtype=np.dtype(self.meta.get("dtype", "float64")), init_scale=0.0)
        net.load_flat(self.params)
        return net


def _arrays(ck: Checkpoint):
    out = []
    if ck.params is not None:
        out.append(("params", ck.params))
    if ck.optimizer:
        for part in ("actor", "critic"):
            out.append((f"{part}.m", ck.optimizer[part]["m"]))
            out.append((f"{part}.v", ck.optimizer[part]["v"]))
    return out


def dumps(ck: Checkpoint) -> bytes:
    arrays = _arrays(ck)
    header = {
        "version": 1,
        "epoch": int(ck.epoch),
        "validation_qoe": float(ck.validation_qoe),
        "rng_state": ck.rng_state,
        "meta": ck.meta,
        "optimizer_steps": {p: int(ck.optimizer[p]["t"]) for p in ("actor", "critic")} if ck.optimizer else None,
        "arrays": [{"name": n, "dtype": np.dtype(a.dtype).newbyteorder("<").str, "shape": list(a.shape)}
                   for n, a in arrays],
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = b"".join(np.ascontiguousarray(a, dtype=np.dtype(a.dtype).newbyteorder("<")).tobytes() for _, a in arrays)
    return MAGIC + struct.pack("<Q", len(head)) + head + body


def loads(data: bytes) -> Checkpoint:
    if data[:8] != MAGIC:
        raise ValueError("not an abr5g checkpoint")
    (n,) = struct.unpack("<Q", data[8:16])
    header = json.loads(data[16:16 + n].decode("utf-8"))
    if header.get("version") != 1:
        raise ValueError(f"unsupported checkpoint version {header.get('version')}")
    pos = 16 + n
    arrays = {}
    for spec in header["arrays"]:
        dt = np.dtype(spec["dtype"])
        count = int(np.prod(spec["shape"])) if spec["shape"] else 1
        arrays[spec["name"]] = np.frombuffer(data, dt, count, pos).reshape(spec["shape"]).copy()
        pos += count * dt.itemsize
    optimizer = None
    if header.get("optimizer_steps"):
        optimizer = {p: {"m": arrays[f"{p}.m"], "v": arrays[f"{p}.v"], "t": header["optimizer_steps"][p]}
                     for p in ("actor", "critic")}
    return Checkpoint(header["epoch"], arrays.get("params"), header["validation_qoe"], header["rng_state"],
                      header["meta"], optimizer)


def read_header(path) -> Checkpoint:
    """Load only the header: epoch, score and metadata, without arrays."""
    with open(path, "rb") as f:
        if f.read(8) != MAGIC:
            raise ValueError(f"{path}: not an abr5g checkpoint")
        (n,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(n).decode("utf-8"))
    return Checkpoint(header["epoch"], None, header["validation_qoe"], header["rng_state"], header["meta"])


def save_checkpoint(path, ck: Checkpoint) -> None:
    with open(path, "wb") as f:
        f.write(dumps(ck))


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as f:
        return loads(f.read())
