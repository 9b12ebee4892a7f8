"""Tag stream files.

CSV
    Header ``channel,tag_ps`` then one row per tag. Several channels may
    share a file.
Binary
    A sequence of records, each ``b"TPT1"``, ``u32`` channel, ``u64`` count
    and ``count`` ``u64`` tags, all little-endian.

Tag origins are diagnostic only and are not written.
"""

from __future__ import annotations

import csv
import io
import os
import struct
from pathlib import Path

import numpy as np

from .montecarlo import TagStream

__all__ = ["write_tags_csv", "read_tags_csv", "write_tags_binary", "encode_tags_binary", "read_tags_binary", "read_tags", "atomic_write"]

MAGIC = b"TPT1"
_HEADER = struct.Struct("<4sIQ")


def atomic_write(path, data: bytes | str) -> None:
    """Write through a temporary sibling file and rename it into place."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    mode = "wb" if isinstance(data, bytes) else "w"
    with open(tmp, mode, **({} if mode == "wb" else {"newline": "", "encoding": "utf-8"})) as fh:
        fh.write(data)
    os.replace(tmp, path)


def write_tags_csv(path, streams) -> None:
    buf = io.StringIO()
    buf.write("channel,tag_ps\n")
    for s in streams:
        ch = str(int(s.channel_id))
        buf.writelines(f"{ch},{t}\n" for t in s.tags.tolist())
    atomic_write(path, buf.getvalue())


def read_tags_csv(path) -> dict[int, TagStream]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["channel", "tag_ps"]:
            raise ValueError(f"{path}: expected header 'channel,tag_ps', got {header}")
        rows: dict[int, list[int]] = {}
        for lineno, row in enumerate(reader, start=2):
            try:
                ch, tag = int(row[0]), int(row[1])
            except (ValueError, IndexError) as exc:
                raise ValueError(f"{path}:{lineno}: malformed row {row}") from exc
            rows.setdefault(ch, []).append(tag)
    return {ch: TagStream(ch, np.array(tags, dtype=np.uint64)) for ch, tags in rows.items()}


def encode_tags_binary(streams) -> bytes:
    parts = []
    for s in streams:
        parts.append(_HEADER.pack(MAGIC, int(s.channel_id), len(s)))
        parts.append(s.tags.astype("<u8", copy=False).tobytes())
    return b"".join(parts)


def write_tags_binary(path, streams) -> None:
    atomic_write(path, encode_tags_binary(streams))


def read_tags_binary(path) -> dict[int, TagStream]:
    data = Path(path).read_bytes()
    out: dict[int, TagStream] = {}
    pos = 0
    while pos < len(data):
        if len(data) - pos < _HEADER.size:
            raise ValueError(f"{path}: truncated record header at byte {pos}")
        magic, ch, count = _HEADER.unpack_from(data, pos)
        if magic != MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r} at byte {pos}")
        pos += _HEADER.size
        end = pos + 8 * count
        if end > len(data):
            raise ValueError(f"{path}: record for channel {ch} is truncated")
        out[ch] = TagStream(ch, np.frombuffer(data[pos:end], dtype="<u8").astype(np.uint64))
        pos = end
    return out


def read_tags(path) -> dict[int, TagStream]:
    """Read either format, deciding by the leading magic bytes."""
    with open(path, "rb") as fh:
        head = fh.read(4)
    return read_tags_binary(path) if head == MAGIC else read_tags_csv(path)
