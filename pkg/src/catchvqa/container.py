"""Binary tensor container shared by backbone, classifier and adapter checkpoints.

Layout::

    b"CATCHVQA"          8-byte magic
    uint32 LE            format version
    uint64 LE            header length in bytes
    header               UTF-8 JSON: {"meta", "tensors": [{name, shape, offset, nbytes}], "checksum"}
    data                 concatenated little-endian float64 payloads

``checksum`` is SHA-256 over the canonical header (without the checksum key)
followed by the data section, so any flipped byte is detected.
"""

from __future__ import annotations

import hashlib
import json
import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np

from catchvqa.errors import FormatError

MAGIC = b"CATCHVQA"
VERSION = 1


def _canonical(header):
    return json.dumps(header, sort_keys=True, separators=(",", ":")).encode()


def _digest(header, data):
    h = hashlib.sha256()
    h.update(_canonical(header))
    h.update(data)
    return h.hexdigest()


def write_container(path, tensors, meta=None):
    """Write an ordered ``name -> array`` mapping plus a JSON-able ``meta`` dict."""
    path = Path(path)
    entries = []
    chunks = []
    offset = 0
    for name, arr in tensors.items():
        raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        entries.append({"name": name, "shape": list(np.shape(arr)), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    data = b"".join(chunks)
    header = {"meta": meta or {}, "tensors": entries}
    header["checksum"] = _digest(header, data)
    blob = _canonical(header)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(blob)))
        fh.write(blob)
        fh.write(data)
    return header["checksum"]


def read_header(path):
    header, _ = _read(path, verify=True)
    return header


def read_container(path):
    """Return ``(OrderedDict name -> array, meta, checksum)``; raises FormatError on corruption."""
    header, data = _read(path, verify=True)
    tensors = OrderedDict()
    for e in header["tensors"]:
        raw = data[e["offset"] : e["offset"] + e["nbytes"]]
        arr = np.frombuffer(raw, dtype="<f8").astype(np.float64)
        tensors[e["name"]] = arr.reshape(e["shape"])
    return tensors, header["meta"], header["checksum"]


def _read(path, verify):
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc
    if len(blob) < 20 or blob[:8] != MAGIC:
        raise FormatError(f"{path}: not a container file (bad magic)")
    version, hlen = struct.unpack("<IQ", blob[8:20])
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    try:
        header = json.loads(blob[20 : 20 + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: corrupt header: {exc}") from exc
    data = blob[20 + hlen :]
    stored = header.pop("checksum", None)
    if verify and stored != _digest(header, data):
        raise FormatError(f"{path}: checksum mismatch")
    expected = sum(e["nbytes"] for e in header.get("tensors", []))
    if expected != len(data):
        raise FormatError(f"{path}: truncated data ({len(data)} of {expected} bytes)")
    header["checksum"] = stored
    return header, data
