"""Self-describing checkpoint archive.

Layout: an 8-byte magic, a little-endian uint64 header length, a JSON
header (format version, kind, config snapshot, array directory, metadata),
then the raw array bytes. Writing is fully deterministic and loading
round-trips every array bit-exactly.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from rgbx.errors import CheckpointError

MAGIC = b"RGBXCKP1"
FORMAT_VERSION = 1


class Checkpoint:
    def __init__(self, kind: str, config: dict, arrays: dict[str, np.ndarray],
                 meta: dict | None = None):
        self.kind = kind
        self.config = config
        self.arrays = arrays
        self.meta = meta or {}


def save_checkpoint(path, kind: str, config: dict, arrays: dict[str, np.ndarray],
                    meta: dict | None = None) -> None:
    directory = []
    offset = 0
    blobs = []
    for name in sorted(arrays):
        arr = np.asarray(arrays[name])
        blob = arr.tobytes()  # C-order bytes regardless of memory layout
        directory.append(
            {
                "name": name,
                "dtype": arr.dtype.str,
                "shape": list(arr.shape),
                "offset": offset,
                "nbytes": len(blob),
            }
        )
        blobs.append(blob)
        offset += len(blob)
    header = json.dumps(
        {
            "format_version": FORMAT_VERSION,
            "kind": kind,
            "config": config,
            "arrays": directory,
            "meta": meta or {},
        },
        sort_keys=True,
    ).encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for blob in blobs:
            f.write(blob)


def load_checkpoint(path, expect_kind: str | None = None) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint {path} does not exist")
    raw = path.read_bytes()
    if len(raw) < len(MAGIC) + 8 or raw[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint archive (bad magic)")
    (hlen,) = struct.unpack("<Q", raw[len(MAGIC) : len(MAGIC) + 8])
    start = len(MAGIC) + 8
    try:
        header = json.loads(raw[start : start + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header: {exc}") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: format version {header.get('format_version')} "
            f"!= supported {FORMAT_VERSION}"
        )
    if expect_kind is not None and header.get("kind") != expect_kind:
        raise CheckpointError(
            f"{path}: checkpoint kind {header.get('kind')!r}, expected {expect_kind!r}"
        )
    body = raw[start + hlen :]
    arrays = {}
    for entry in header["arrays"]:
        blob = body[entry["offset"] : entry["offset"] + entry["nbytes"]]
        if len(blob) != entry["nbytes"]:
            raise CheckpointError(f"{path}: truncated array {entry['name']!r}")
        arrays[entry["name"]] = np.frombuffer(blob, dtype=np.dtype(entry["dtype"])).reshape(
            entry["shape"]
        ).copy()
    return Checkpoint(
        kind=header["kind"], config=header["config"], arrays=arrays, meta=header["meta"]
    )


def check_geometry(config: dict, expected: dict, path="checkpoint") -> None:
    """Raise a typed error when saved geometry disagrees with the run config."""
    for key, want in expected.items():
        got = config.get(key)
        got_t = tuple(got) if isinstance(got, list) else got
        want_t = tuple(want) if isinstance(want, list) else want
        if got_t != want_t:
            raise CheckpointError(
                f"{path}: geometry mismatch on {key!r}: checkpoint has {got!r}, "
                f"run config wants {want!r}"
            )
