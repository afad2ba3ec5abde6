"""Append-only JSONL event log.

One line per event, serialized with sorted keys and no whitespace so a
rerun with the same seed produces a byte-identical file.  Three event
types exist: "tournament" (one per slot per iteration), "hedge" (the
allocation snapshot after each iteration's update), and "stopping"
(the per-iteration budget decision).
"""

from __future__ import annotations

import json
import threading
from pathlib import Path


def encode_event(event: dict) -> bytes:
    return (json.dumps(event, sort_keys=True, separators=(",", ":")) + "\n").encode("utf-8")


class EventLog:
    """Single-writer append log over one JSONL file."""

    def __init__(self, path: Path):
        self.path = Path(path)
        self._lock = threading.Lock()

    def append(self, event: dict) -> None:
        data = encode_event(event)
        with self._lock:
            with open(self.path, "ab") as fh:
                fh.write(data)
                fh.flush()

    def size(self) -> int:
        with self._lock:
            return self.path.stat().st_size if self.path.exists() else 0

    def truncate_to(self, offset: int) -> None:
        """Drop any events written after the given byte offset.

        Used on resume: events past the last checkpoint belong to an
        iteration that will be replayed.
        """
        with self._lock:
            if not self.path.exists():
                if offset:
                    raise FileNotFoundError(f"event log missing, cannot keep {offset} bytes")
                return
            size = self.path.stat().st_size
            if size < offset:
                raise ValueError(f"event log shorter ({size}) than checkpoint offset ({offset})")
            if size > offset:
                with open(self.path, "r+b") as fh:
                    fh.truncate(offset)


def read_events(path: Path) -> tuple[list[dict], int]:
    """Parse a JSONL event file.

    Returns (events, skipped) where skipped counts malformed lines;
    bad lines are diagnostics, not fatal.
    """
    events: list[dict] = []
    skipped = 0
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError:
                skipped += 1
                continue
            if isinstance(row, dict) and "type" in row:
                events.append(row)
            else:
                skipped += 1
    return events, skipped
