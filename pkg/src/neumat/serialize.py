"""Flat parameter blobs: magic tag, layer-width descriptor, float64 payload.

Layout (little-endian)::

    b"NMW1" | uint32 n_widths | uint32 widths[n_widths] | float64 payload[...]
"""
import json
import os

import numpy as np

MAGIC = b"NMW1"


class BlobFormatError(ValueError):
    pass


def write_params(path, widths, payload):
    payload = np.ascontiguousarray(payload, dtype="<f8").ravel()
    widths = np.asarray(widths, dtype="<u4")
    with open(os.fspath(path), "wb") as fh:
        fh.write(MAGIC)
        fh.write(np.asarray([widths.size], dtype="<u4").tobytes())
        fh.write(widths.tobytes())
        fh.write(payload.tobytes())


def read_params(path):
    """Return ``(widths, payload)`` from a blob written by :func:`write_params`."""
    with open(os.fspath(path), "rb") as fh:
        data = fh.read()
    if data[:4] != MAGIC:
        raise BlobFormatError(f"{path}: bad magic {data[:4]!r}")
    if len(data) < 8:
        raise BlobFormatError(f"{path}: truncated header")
    n = int(np.frombuffer(data, "<u4", count=1, offset=4)[0])
    off = 8 + 4 * n
    if len(data) < off or (len(data) - off) % 8:
        raise BlobFormatError(f"{path}: truncated payload")
    widths = tuple(int(w) for w in np.frombuffer(data, "<u4", count=n, offset=8))
    payload = np.frombuffer(data, "<f8", offset=off).astype(np.float64)
    return widths, payload


def write_sidecar(path, meta):
    with open(os.fspath(path) + ".json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_sidecar(path):
    with open(os.fspath(path) + ".json") as fh:
        return json.load(fh)
