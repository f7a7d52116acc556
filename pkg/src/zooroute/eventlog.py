"""Append-only event log with per-record framing and CRC.

Each record is a JSON payload framed as::

    4 bytes big-endian payload length | 4 bytes big-endian CRC32(payload) | payload

Readers stop at the first truncated or corrupt record, so a crash mid-append
loses at most the partial tail. Logs are split into numbered segments that
roll over at a size threshold.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

_HEADER = struct.Struct(">II")
_MAX_RECORD_BYTES = 16 * 1024 * 1024

SEGMENT_PREFIX = "events-"
SEGMENT_SUFFIX = ".log"


def _segment_path(directory: Path, number: int) -> Path:
    return directory / f"{SEGMENT_PREFIX}{number:06d}{SEGMENT_SUFFIX}"


def _segment_files(directory: Path) -> list[Path]:
    return sorted(directory.glob(f"{SEGMENT_PREFIX}*{SEGMENT_SUFFIX}"))


def scan_segment(path: Path) -> tuple[list[dict], int]:
    """Read records from one segment.

    Returns the decoded records and the byte offset of the last complete,
    checksum-valid record; everything past that offset is a damaged tail.
    """
    records: list[dict] = []
    valid = 0
    data = path.read_bytes()
    offset = 0
    while offset + _HEADER.size <= len(data):
        length, crc = _HEADER.unpack_from(data, offset)
        if length > _MAX_RECORD_BYTES:
            break
        start = offset + _HEADER.size
        end = start + length
        if end > len(data):
            break
        payload = data[start:end]
        if zlib.crc32(payload) != crc:
            break
        try:
            records.append(json.loads(payload.decode("utf-8")))
        except (UnicodeDecodeError, json.JSONDecodeError):
            break
        offset = end
        valid = offset
    return records, valid


def read_events(directory: str | Path) -> list[dict]:
    """All intact records across segments, in append order."""
    directory = Path(directory)
    events: list[dict] = []
    for segment in _segment_files(directory):
        records, valid = scan_segment(segment)
        events.extend(records)
        if valid < segment.stat().st_size:
            break  # damaged tail: ignore later segments too
    return events


class EventLog:
    """Writer end of the log. Opening repairs any damaged tail in place."""

    def __init__(
        self,
        directory: str | Path,
        *,
        segment_max_bytes: int = 64 * 1024 * 1024,
        fsync: bool = False,
    ):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.segment_max_bytes = segment_max_bytes
        self.fsync = fsync

        segments = _segment_files(self.directory)
        if segments:
            tail = segments[-1]
            _, valid = scan_segment(tail)
            if valid < tail.stat().st_size:
                with open(tail, "r+b") as fh:
                    fh.truncate(valid)
            self._segment_number = int(tail.stem[len(SEGMENT_PREFIX) :])
        else:
            self._segment_number = 1
        self._fh = open(_segment_path(self.directory, self._segment_number), "ab")

    def append(self, record: dict) -> None:
        payload = json.dumps(record, sort_keys=True).encode("utf-8")
        frame = _HEADER.pack(len(payload), zlib.crc32(payload)) + payload
        if self._fh.tell() + len(frame) > self.segment_max_bytes and self._fh.tell() > 0:
            self._roll()
        self._fh.write(frame)
        self._fh.flush()
        if self.fsync:
            import os

            os.fsync(self._fh.fileno())

    def _roll(self) -> None:
        self._fh.close()
        self._segment_number += 1
        self._fh = open(_segment_path(self.directory, self._segment_number), "ab")

    def close(self) -> None:
        if not self._fh.closed:
            self._fh.close()

    def __enter__(self) -> "EventLog":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
