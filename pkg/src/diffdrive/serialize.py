"""Versioned binary container for parameter checkpoints.

Layout: 8-byte magic, little-endian uint32 header length, compact JSON
header listing array names and shapes in order, then the arrays as raw
little-endian float64. Writing the same arrays twice yields identical
bytes, which the reproducibility checks rely on.
"""

from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"DDRV0001"


def save_arrays(path, kind: str, items) -> None:
    """items: ordered list of (name, float array)."""
    header = {
        "kind": kind,
        "arrays": [{"name": n, "shape": list(np.asarray(a).shape)}
                   for n, a in items],
    }
    hb = json.dumps(header, sort_keys=True,
                    separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(hb)))
        fh.write(hb)
        for _, a in items:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_arrays(path, kind: str) -> dict:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != MAGIC:
        raise ValueError("%s: bad checkpoint magic" % path)
    if len(data) < 12:
        raise ValueError("%s: checkpoint truncated" % path)
    (hlen,) = struct.unpack_from("<I", data, 8)
    if 12 + hlen > len(data):
        raise ValueError("%s: checkpoint truncated" % path)
    try:
        header = json.loads(data[12:12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ValueError("%s: unreadable checkpoint header: %s"
                         % (path, exc)) from exc
    if header.get("kind") != kind:
        raise ValueError("%s: checkpoint kind %r, expected %r"
                         % (path, header.get("kind"), kind))
    out = {}
    ofs = 12 + hlen
    for spec in header["arrays"]:
        shape = tuple(int(s) for s in spec["shape"])
        need = int(np.prod(shape, dtype=np.int64)) * 8
        if ofs + need > len(data):
            raise ValueError("%s: checkpoint truncated" % path)
        out[spec["name"]] = np.frombuffer(
            data, dtype="<f8", count=need // 8, offset=ofs
        ).reshape(shape).copy()
        ofs += need
    if ofs != len(data):
        raise ValueError("%s: %d trailing bytes" % (path, len(data) - ofs))
    return out
