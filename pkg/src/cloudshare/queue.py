"""Priority queue of pending requests backed by an append-only journal.

Iteration order is priority descending, insertion sequence ascending within
ties, so equal-priority requests stay FIFO.  Every mutation is journaled and
flushed before the call returns; replaying the journal rebuilds the live
queue exactly, and a torn final line (a crash mid-write) is discarded on
recovery.

Journal format, one record per line, fields comma-separated in this exact
order (empty when not applicable to the op):

    op,request_id,priority,seq,checksum

* ``op``        -- ``ins`` (insert), ``rem`` (remove), ``pri`` (reprioritize)
* ``priority``  -- set for ins/pri
* ``seq``       -- set for ins
* ``checksum``  -- crc32 of ``op,request_id,priority,seq`` as 8 hex digits

A ``None`` journal path runs the queue in volatile (memory-only) mode; large
simulation scenarios use that to opt out of journal I/O.
"""

from __future__ import annotations

import bisect
import os
import zlib
from dataclasses import dataclass
from pathlib import Path

from .core import Request, RequestState, SchedulerError


class JournalError(SchedulerError):
    """The journal contains a corrupt non-trailing record."""


@dataclass(slots=True)
class QueueEntry:
    request_id: str
    priority: int
    seq: int
    retries: int = 0


def _format_record(op: str, request_id: str, priority, seq) -> str:
    body = f"{op},{request_id},{'' if priority is None else priority},{'' if seq is None else seq}"
    return f"{body},{zlib.crc32(body.encode()) & 0xFFFFFFFF:08x}\n"


def _parse_record(line: str):
    """Return (op, request_id, priority, seq) or None if the line is damaged."""
    line = line.rstrip("\n")
    parts = line.split(",")
    if len(parts) != 5:
        return None
    op, request_id, pri_s, seq_s, crc_s = parts
    body = f"{op},{request_id},{pri_s},{seq_s}"
    try:
        if int(crc_s, 16) != zlib.crc32(body.encode()) & 0xFFFFFFFF:
            return None
    except ValueError:
        return None
    try:
        if op == "ins":
            return op, request_id, int(pri_s), int(seq_s)
        if op == "rem":
            return op, request_id, None, None
        if op == "pri":
            return op, request_id, int(pri_s), None
    except ValueError:
        return None
    return None


class PersistentQueue:
    def __init__(
        self,
        journal_path: str | Path | None = None,
        compaction_ratio: int = 10,
        compaction_floor: int = 64,
    ) -> None:
        self.journal_path = Path(journal_path) if journal_path else None
        self.compaction_ratio = compaction_ratio
        self.compaction_floor = compaction_floor
        self._entries: dict[str, QueueEntry] = {}
        self._order: list[tuple[int, int, str]] = []  # (-priority, seq, id), kept sorted
        self._next_seq = 0
        self._record_count = 0
        self._fh = None
        if self.journal_path is not None:
            self.journal_path.parent.mkdir(parents=True, exist_ok=True)
            # a fresh queue owns the file; stale content from an older run
            # must not leak into recovery (use recover() to continue one)
            self._fh = open(self.journal_path, "w", encoding="utf-8")

    # -- journal plumbing ---------------------------------------------------

    def _append(self, op: str, request_id: str, priority=None, seq=None, flush: bool = True) -> None:
        if self._fh is None:
            return
        self._fh.write(_format_record(op, request_id, priority, seq))
        if flush:
            self._fh.flush()
            os.fsync(self._fh.fileno())
        self._record_count += 1

    def _maybe_compact(self) -> None:
        if self._fh is None:
            return
        threshold = max(self.compaction_floor, self.compaction_ratio * len(self._entries))
        if self._record_count <= threshold:
            return
        self.compact()

    def compact(self) -> None:
        """Rewrite the journal as an insert-only snapshot of the live queue."""
        if self._fh is None:
            return
        self._fh.close()
        tmp = self.journal_path.with_suffix(self.journal_path.suffix + ".tmp")
        with open(tmp, "w", encoding="utf-8") as out:
            for neg_pri, seq, rid in self._order:
                out.write(_format_record("ins", rid, -neg_pri, seq))
            out.flush()
            os.fsync(out.fileno())
        os.replace(tmp, self.journal_path)
        self._record_count = len(self._order)
        self._fh = open(self.journal_path, "a", encoding="utf-8")

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    # -- queue operations ---------------------------------------------------

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, request_id: str) -> bool:
        return request_id in self._entries

    def get(self, request_id: str) -> QueueEntry | None:
        return self._entries.get(request_id)

    def enqueue(self, request: Request, priority: int) -> QueueEntry:
        if request.state is not RequestState.SCHEDULING:
            raise ValueError(f"request {request.id!r} is not in scheduling state")
        if request.id in self._entries:
            raise ValueError(f"request {request.id!r} is already queued")
        if "," in request.id or "\n" in request.id:
            raise ValueError(f"request id {request.id!r} not journal-safe")
        seq = self._next_seq
        self._next_seq += 1
        self._append("ins", request.id, priority, seq)
        entry = QueueEntry(request.id, priority, seq, request.retries)
        self._entries[request.id] = entry
        bisect.insort(self._order, (-priority, seq, request.id))
        self._maybe_compact()
        return entry

    def remove(self, request_id: str) -> QueueEntry:
        try:
            entry = self._entries.pop(request_id)
        except KeyError:
            raise KeyError(f"request {request_id!r} is not queued") from None
        self._append("rem", request_id)
        self._discard_order_key((-entry.priority, entry.seq, request_id))
        self._maybe_compact()
        return entry

    def _discard_order_key(self, key: tuple[int, int, str]) -> None:
        i = bisect.bisect_left(self._order, key)
        del self._order[i]

    def reprioritize(self, request_id: str, priority: int) -> None:
        entry = self._entries.get(request_id)
        if entry is None:
            raise KeyError(f"request {request_id!r} is not queued")
        self._append("pri", request_id, priority)
        if priority != entry.priority:
            self._discard_order_key((-entry.priority, entry.seq, request_id))
            bisect.insort(self._order, (-priority, entry.seq, request_id))
            entry.priority = priority
        self._maybe_compact()

    def reprioritize_bulk(self, updates: list[tuple[str, int]]) -> None:
        """Apply many priority updates with one journal flush and one re-sort."""
        if not updates:
            return
        entries = self._entries
        journal = self._fh is not None
        for request_id, priority in updates:
            entry = entries.get(request_id)
            if entry is None:
                raise KeyError(f"request {request_id!r} is not queued")
            if journal:
                self._append("pri", request_id, priority, flush=False)
            entry.priority = priority
        if journal:
            self._fh.flush()
            os.fsync(self._fh.fileno())
        self._order = sorted((-e.priority, e.seq, rid) for rid, e in entries.items())
        self._maybe_compact()

    def ordered_snapshot(self) -> list[QueueEntry]:
        """Entries sorted by (priority desc, seq asc); the queue is unmodified."""
        entries = self._entries
        return [entries[rid] for _, _, rid in self._order]

    def iter_order(self) -> list[tuple[int, int, str]]:
        """Cheap copy of the (neg-priority, seq, request-id) order for sweeps."""
        return list(self._order)

    # -- recovery -----------------------------------------------------------

    @classmethod
    def recover(
        cls,
        journal_path: str | Path,
        compaction_ratio: int = 10,
        compaction_floor: int = 64,
    ) -> "PersistentQueue":
        """Rebuild a queue from its journal and reattach for further appends.

        A damaged final record is treated as a torn write and truncated away;
        damage anywhere earlier is a hard error.
        """
        journal_path = Path(journal_path)
        with open(journal_path, "r", encoding="utf-8") as fh:
            raw = fh.read()
        lines = raw.splitlines(keepends=True)
        parsed = []
        truncate_at = None
        offset = 0
        for i, line in enumerate(lines):
            record = _parse_record(line)
            if record is None or not line.endswith("\n"):
                if i == len(lines) - 1:
                    truncate_at = offset
                    break
                raise JournalError(f"{journal_path}: corrupt record at line {i + 1}")
            parsed.append(record)
            offset += len(line)

        if truncate_at is not None:
            with open(journal_path, "r+", encoding="utf-8") as fh:
                fh.truncate(truncate_at)

        queue = cls.__new__(cls)
        queue.journal_path = journal_path
        queue.compaction_ratio = compaction_ratio
        queue.compaction_floor = compaction_floor
        queue._entries = {}
        queue._order = []
        queue._next_seq = 0
        queue._record_count = 0
        queue._fh = None
        for i, (op, request_id, priority, seq) in enumerate(parsed):
            try:
                if op == "ins":
                    if request_id in queue._entries:
                        raise JournalError(f"duplicate insert of {request_id!r}")
                    queue._entries[request_id] = QueueEntry(request_id, priority, seq)
                    queue._next_seq = max(queue._next_seq, seq + 1)
                elif op == "rem":
                    del queue._entries[request_id]
                elif op == "pri":
                    queue._entries[request_id].priority = priority
            except KeyError:
                raise JournalError(
                    f"{journal_path}: record {i + 1} references unknown request {request_id!r}"
                ) from None
        queue._order = sorted((-e.priority, e.seq, rid) for rid, e in queue._entries.items())
        queue._record_count = len(parsed)
        queue._fh = open(journal_path, "a", encoding="utf-8")
        return queue
