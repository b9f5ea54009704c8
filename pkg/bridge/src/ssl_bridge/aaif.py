"""Standalone AAIF writer/reader implementing the consumer's byte layout.

Layout (little-endian): magic "AAIF" | version u32 | dim u32 |
frame_count u32 | frame_rate f32 | name_length u16 | name UTF-8 |
payload of frame-major float32. Kept dependency-free so the bridge can be
installed without the training toolkit; conformance against the toolkit's
own reader is covered by tests.
"""

import struct
from pathlib import Path

import numpy as np

MAGIC = b"AAIF"
VERSION = 1
_HEADER = struct.Struct("<4sIIIfH")


def write_aaif(path, frames: np.ndarray, rate: float, name: str) -> None:
    frames = np.ascontiguousarray(frames, dtype="<f4")
    if frames.ndim != 2:
        raise ValueError(f"frames must be 2-D, got shape {frames.shape}")
    encoded = name.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, frames.shape[1], frames.shape[0],
                              float(rate), len(encoded)))
        fh.write(encoded)
        fh.write(frames.tobytes())


def read_header(path):
    """Header fields plus payload byte accounting, for verification."""
    blob = Path(path).read_bytes()
    info = {"magic_ok": len(blob) >= 4 and blob[:4] == MAGIC,
            "version_ok": False, "dim": None, "frame_count": None,
            "rate": None, "name": None, "payload_ok": False}
    if not info["magic_ok"] or len(blob) < _HEADER.size:
        return info
    _, version, dim, frame_count, rate, name_len = _HEADER.unpack_from(blob)
    info["version_ok"] = version == VERSION
    info["dim"] = dim
    info["frame_count"] = frame_count
    info["rate"] = rate
    name_end = _HEADER.size + name_len
    expected = name_end + 4 * dim * frame_count
    info["payload_ok"] = len(blob) == expected
    if len(blob) >= name_end:
        info["name"] = blob[_HEADER.size:name_end].decode("utf-8", "replace")
    return info
