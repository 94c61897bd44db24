"""Durable store-and-forward outbox: append-only log, batching, backoff.

Log format: length-prefixed records, [u32 len][payload][u32 crc32], where the
payload starts with a one-byte record kind. An entry's life is a chain of
records: an enqueue record carrying the wire-form event, then attempt/ack/
poison markers referencing its entry id. Recovery replays the chain; corrupt
records are skipped and counted, a truncated tail stops the replay.
"""

from __future__ import annotations

import os
import struct
import zlib
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .events import TelemetryEvent, decode_event, encode_event

_ENQ, _ATTEMPT, _ACK, _POISON = 1, 2, 3, 4

DEFAULT_BATCH_SIZE = 25
COMPACT_ACKED_FRACTION = 0.5


class TransportError(Exception):
    """The batch may or may not have reached the server; retry later."""


class BatchRejectedError(Exception):
    """The server refused the whole batch; retrying cannot succeed."""


@dataclass(frozen=True, slots=True)
class IngestResult:
    """Per-event outcome of a delivered batch, keyed by event_id string."""

    accepted: frozenset[str]
    duplicates: frozenset[str]
    rejected: dict[str, str]


class EntryState(Enum):
    PENDING = "pending"
    INFLIGHT = "inflight"
    ACKED = "acked"
    POISONED = "poisoned"


@dataclass(slots=True)
class OutboxEntry:
    entry_id: int
    event: TelemetryEvent
    attempts: int = 0
    next_attempt_ms: int = 0
    state: EntryState = EntryState.PENDING


@dataclass(frozen=True, slots=True)
class RetryPolicy:
    base_delay_ms: int = 500
    multiplier: float = 2.0
    max_delay_ms: int = 8000
    jitter: float = 0.0

    def __post_init__(self):
        if self.base_delay_ms <= 0:
            raise ValueError(f"base_delay_ms must be > 0, got {self.base_delay_ms}")
        if self.multiplier < 1.0:
            raise ValueError(f"multiplier must be >= 1, got {self.multiplier}")
        if self.max_delay_ms < self.base_delay_ms:
            raise ValueError("max_delay_ms must be >= base_delay_ms")
        if not 0.0 <= self.jitter <= 1.0:
            raise ValueError(f"jitter must be in [0, 1], got {self.jitter}")

    def backoff_ms(self, attempts: int, rng: np.random.Generator | None = None) -> int:
        """Delay before retry number `attempts`; capped, jittered downward."""
        if attempts < 1:
            raise ValueError("attempts must be >= 1")
        raw = min(float(self.max_delay_ms),
                  self.base_delay_ms * self.multiplier ** (attempts - 1))
        if self.jitter > 0.0 and rng is not None:
            raw *= 1.0 - self.jitter * float(rng.random())
        return int(raw)


@dataclass(slots=True)
class DeliveryReport:
    acked: list[str] = field(default_factory=list)
    duplicates: list[str] = field(default_factory=list)
    rejected: list[tuple[str, str]] = field(default_factory=list)
    transport_failures: int = 0
    batches_sent: int = 0


class Outbox:
    """Single-writer durable FIFO of telemetry events awaiting delivery."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.entries: dict[int, OutboxEntry] = {}
        self.order: list[int] = []
        self.corrupt_records = 0
        self._next_id = 1
        self._acked_ids: set[int] = set()
        self._enq_records = 0
        self._mark_records = 0
        self._truncate_at: int | None = None
        if self.path.exists():
            self._replay()
            if self._truncate_at is not None:
                # drop the partial tail so post-recovery appends stay reachable
                with open(self.path, "r+b") as fh:
                    fh.truncate(self._truncate_at)
        self._fh = open(self.path, "ab")

    # -- log plumbing ------------------------------------------------------

    def _replay(self) -> None:
        data = self.path.read_bytes()
        pos = 0
        while pos < len(data):
            if pos + 4 > len(data):
                self.corrupt_records += 1  # truncated length prefix
                self._truncate_at = pos
                break
            (length,) = struct.unpack_from("<I", data, pos)
            if pos + 4 + length + 4 > len(data):
                self.corrupt_records += 1  # truncated record body
                self._truncate_at = pos
                break
            payload = data[pos + 4:pos + 4 + length]
            (crc,) = struct.unpack_from("<I", data, pos + 4 + length)
            pos += 4 + length + 4
            if zlib.crc32(payload) != crc or not payload:
                self.corrupt_records += 1
                continue
            self._apply(payload)

    def _apply(self, payload: bytes) -> None:
        kind = payload[0]
        body = payload[1:]
        if kind == _ENQ:
            (entry_id,) = struct.unpack_from("<Q", body)
            try:
                event = decode_event(body[8:])
            except ValueError:
                self.corrupt_records += 1
                return
            self.entries[entry_id] = OutboxEntry(entry_id, event)
            self.order.append(entry_id)
            self._next_id = max(self._next_id, entry_id + 1)
            self._enq_records += 1
        elif kind == _ATTEMPT:
            entry_id, attempts, next_ms = struct.unpack_from("<QIq", body)
            entry = self.entries.get(entry_id)
            if entry is not None and entry.state is EntryState.PENDING:
                entry.attempts = max(entry.attempts, attempts)
                entry.next_attempt_ms = next_ms
            self._mark_records += 1
        elif kind == _ACK:
            (entry_id,) = struct.unpack_from("<Q", body)
            entry = self.entries.get(entry_id)
            if entry is not None:
                entry.state = EntryState.ACKED
                self._acked_ids.add(entry_id)
            self._mark_records += 1
        elif kind == _POISON:
            (entry_id,) = struct.unpack_from("<Q", body)
            entry = self.entries.get(entry_id)
            if entry is not None:
                entry.state = EntryState.POISONED
            self._mark_records += 1
        else:
            self.corrupt_records += 1

    def _append(self, payload: bytes) -> None:
        record = struct.pack("<I", len(payload)) + payload + \
            struct.pack("<I", zlib.crc32(payload))
        self._fh.write(record)
        self._fh.flush()

    # -- operations --------------------------------------------------------

    def enqueue(self, event: TelemetryEvent) -> int:
        entry_id = self._next_id
        self._next_id += 1
        payload = bytes([_ENQ]) + struct.pack("<Q", entry_id) + \
            encode_event(event).encode()
        self._append(payload)
        self.entries[entry_id] = OutboxEntry(entry_id, event)
        self.order.append(entry_id)
        self._enq_records += 1
        return entry_id

    def _mark_attempt(self, entry: OutboxEntry, next_ms: int) -> None:
        entry.attempts += 1
        entry.next_attempt_ms = next_ms
        entry.state = EntryState.PENDING
        self._append(bytes([_ATTEMPT]) +
                     struct.pack("<QIq", entry.entry_id, entry.attempts, next_ms))
        self._mark_records += 1

    def _mark_acked(self, entry: OutboxEntry) -> None:
        entry.state = EntryState.ACKED
        self._acked_ids.add(entry.entry_id)
        self._append(bytes([_ACK]) + struct.pack("<Q", entry.entry_id))
        self._mark_records += 1

    def _mark_poisoned(self, entry: OutboxEntry) -> None:
        entry.state = EntryState.POISONED
        self._append(bytes([_POISON]) + struct.pack("<Q", entry.entry_id))
        self._mark_records += 1

    def pending(self) -> list[OutboxEntry]:
        return [self.entries[i] for i in self.order
                if self.entries[i].state is EntryState.PENDING]

    def poisoned(self) -> list[OutboxEntry]:
        return [self.entries[i] for i in self.order
                if self.entries[i].state is EntryState.POISONED]

    def acked_count(self) -> int:
        return len(self._acked_ids)

    def close(self) -> None:
        self._fh.close()

    def compact(self) -> None:
        """Drop acked entries from the log; pending and poisoned survive."""
        tmp = self.path.with_suffix(self.path.suffix + ".tmp")
        survivors = [self.entries[i] for i in self.order
                     if self.entries[i].state is not EntryState.ACKED]
        with open(tmp, "wb") as fh:
            for entry in survivors:
                payload = bytes([_ENQ]) + struct.pack("<Q", entry.entry_id) + \
                    encode_event(entry.event).encode()
                fh.write(struct.pack("<I", len(payload)) + payload +
                         struct.pack("<I", zlib.crc32(payload)))
                marks = []
                if entry.attempts > 0:
                    marks.append(bytes([_ATTEMPT]) + struct.pack(
                        "<QIq", entry.entry_id, entry.attempts, entry.next_attempt_ms))
                if entry.state is EntryState.POISONED:
                    marks.append(bytes([_POISON]) + struct.pack("<Q", entry.entry_id))
                for payload in marks:
                    fh.write(struct.pack("<I", len(payload)) + payload +
                             struct.pack("<I", zlib.crc32(payload)))
        self._fh.close()
        os.replace(tmp, self.path)
        self.entries = {e.entry_id: e for e in survivors}
        self.order = [e.entry_id for e in survivors]
        self._acked_ids = set()
        self._enq_records = len(survivors)
        self._mark_records = sum(
            (1 if e.attempts > 0 else 0) +
            (1 if e.state is EntryState.POISONED else 0) for e in survivors)
        self._fh = open(self.path, "ab")

    def maybe_compact(self) -> bool:
        if self._enq_records > 0 and \
                len(self._acked_ids) / self._enq_records > COMPACT_ACKED_FRACTION:
            self.compact()
            return True
        return False


def recover(path: str | Path) -> Outbox:
    """Reopen an outbox; non-acked entries come back pending (at-least-once)."""
    return Outbox(path)


def flush(outbox: Outbox, sender, policy: RetryPolicy, batch_size: int,
          now_ms: int, rng: np.random.Generator | None = None) -> DeliveryReport:
    """Send every due pending entry in FIFO batches of <= batch_size.

    Transport failures reschedule the batch with capped exponential backoff;
    a server-side whole-batch rejection poisons it; per-event rejections
    poison just those entries. Acked entries are never retransmitted.
    """
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    report = DeliveryReport()
    due = [e for e in outbox.pending() if e.next_attempt_ms <= now_ms]
    i = 0
    while i < len(due):
        # one batch per trip so each maps to a single ingestion request
        trip_id = due[i].event.trip_id
        batch: list[OutboxEntry] = []
        while i < len(due) and len(batch) < batch_size and \
                due[i].event.trip_id == trip_id:
            batch.append(due[i])
            i += 1
        for entry in batch:
            entry.state = EntryState.INFLIGHT
        report.batches_sent += 1
        try:
            result = sender.send(trip_id, [entry.event for entry in batch])
        except TransportError:
            report.transport_failures += 1
            for entry in batch:
                outbox._mark_attempt(
                    entry, now_ms + policy.backoff_ms(entry.attempts + 1, rng))
            continue
        except BatchRejectedError as exc:
            for entry in batch:
                outbox._mark_poisoned(entry)
                report.rejected.append((str(entry.event.event_id), str(exc)))
            continue
        for entry in batch:
            key = str(entry.event.event_id)
            if key in result.rejected:
                outbox._mark_poisoned(entry)
                report.rejected.append((key, result.rejected[key]))
            else:
                if key in result.duplicates:
                    report.duplicates.append(key)
                else:
                    report.acked.append(key)
                outbox._mark_acked(entry)
    outbox.maybe_compact()
    return report


def drain(outbox: Outbox, sender, policy: RetryPolicy, batch_size: int,
          clock, rng: np.random.Generator | None = None,
          max_rounds: int = 10000) -> DeliveryReport:
    """Flush until nothing is pending, advancing the clock through backoff."""
    total = DeliveryReport()
    for _ in range(max_rounds):
        pending = outbox.pending()
        if not pending:
            return total
        report = flush(outbox, sender, policy, batch_size, clock.now_ms, rng)
        for name in ("acked", "duplicates", "rejected"):
            getattr(total, name).extend(getattr(report, name))
        total.transport_failures += report.transport_failures
        total.batches_sent += report.batches_sent
        pending = outbox.pending()
        if pending:
            next_due = min(e.next_attempt_ms for e in pending)
            clock.advance(max(1, next_due - clock.now_ms))
    raise TransportError(f"outbox not drained after {max_rounds} rounds")
