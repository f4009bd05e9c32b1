"""Versioned binary checkpoint container.

Layout: magic, version, JSON header (section metadata plus array names
and shapes), little-endian float32 payload, CRC32 checksum of the
payload. Several sections (network parameters, anchors, support bank,
kernel model) share one container, each under its own tag.
"""

from __future__ import annotations

import json
import zlib

import numpy as np

MAGIC = b"PCQCKPT\x00"
VERSION = 1


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(path, sections: dict) -> None:
    """sections: tag -> {"meta": json-serializable, "arrays": {name: ndarray}}."""
    header = {"version": VERSION, "sections": {}}
    chunks = []
    for tag, sec in sections.items():
        arrays = sec.get("arrays", {})
        entry = {"meta": sec.get("meta", {}), "arrays": []}
        for name, a in arrays.items():
            a32 = np.ascontiguousarray(a, dtype="<f4")
            entry["arrays"].append([name, list(a32.shape)])
            chunks.append(a32.tobytes())
        header["sections"][tag] = entry
    payload = b"".join(chunks)
    hdr = json.dumps(header).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(VERSION.to_bytes(4, "little"))
        f.write(len(hdr).to_bytes(4, "little"))
        f.write(hdr)
        f.write(payload)
        f.write(zlib.crc32(payload).to_bytes(4, "little"))


def load_checkpoint(path) -> dict:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:len(MAGIC)] != MAGIC:
        raise CheckpointError("bad magic bytes: not a checkpoint file")
    off = len(MAGIC)
    version = int.from_bytes(blob[off:off + 4], "little")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    off += 4
    hdr_len = int.from_bytes(blob[off:off + 4], "little")
    off += 4
    try:
        header = json.loads(blob[off:off + hdr_len].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"corrupt header: {e}") from e
    off += hdr_len
    payload = blob[off:-4]
    stored_crc = int.from_bytes(blob[-4:], "little")
    if zlib.crc32(payload) != stored_crc:
        raise CheckpointError("payload checksum mismatch")
    sections = {}
    pos = 0
    for tag, entry in header["sections"].items():
        arrays = {}
        for name, shape in entry["arrays"]:
            n = int(np.prod(shape)) if shape else 1
            nbytes = 4 * n
            if pos + nbytes > len(payload):
                raise CheckpointError(f"truncated payload at array {name!r}")
            arrays[name] = np.frombuffer(
                payload[pos:pos + nbytes], dtype="<f4").astype(
                np.float64).reshape(shape)
            pos += nbytes
        sections[tag] = {"meta": entry["meta"], "arrays": arrays}
    if pos != len(payload):
        raise CheckpointError("payload size does not match header")
    return sections


def store_section(store) -> dict:
    """Checkpoint section for a ParamStore (parameters + Adam state)."""
    return {"meta": {"step": store.step, "seed": store.seed},
            "arrays": store.state_arrays()}


def load_store_section(store, sec: dict) -> None:
    store.load_state_arrays(sec["arrays"], step=int(sec["meta"]["step"]))
    store.seed = int(sec["meta"].get("seed", 0))
