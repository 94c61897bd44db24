"""Deterministic lossy-link simulator between an outbox and an endpoint."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .events import TelemetryEvent
from .outbox import IngestResult, TransportError


class LinkError(TransportError):
    """The simulated link dropped the exchange."""


@dataclass(frozen=True, slots=True)
class LinkConfig:
    """loss_probability applies independently to the request and the ack
    direction, so a delivered batch can still look lost to the sender and
    provoke a retransmission; outages are [start, end) in simulated seconds."""

    loss_probability: float = 0.0
    outages_s: tuple[tuple[float, float], ...] = ()
    latency_ms: int = 20
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.loss_probability <= 1.0:
            raise ValueError(f"loss_probability must be in [0, 1], "
                             f"got {self.loss_probability}")
        if self.latency_ms < 0:
            raise ValueError(f"latency_ms must be >= 0, got {self.latency_ms}")
        last_end = None
        for start, end in self.outages_s:
            if not start < end:
                raise ValueError(f"outage [{start}, {end}) is empty")
            if last_end is not None and start < last_end:
                raise ValueError("outage windows must be ordered and disjoint")
            last_end = end


@dataclass(slots=True)
class SimClock:
    """Simulated wall clock in milliseconds."""

    now_ms: int = 0

    def advance(self, ms: int) -> None:
        if ms < 0:
            raise ValueError("clock cannot run backwards")
        self.now_ms += ms

    @property
    def now_s(self) -> float:
        return self.now_ms / 1000.0


class SimulatedLink:
    """Wraps an ingestion endpoint with loss, outages, and latency.

    The endpoint is called only when the request direction survives; an ack
    lost on the way back leaves the server's state changed while the sender
    sees a failure, which is exactly the duplicate-generating case
    server-side dedup must absorb.
    """

    def __init__(self, config: LinkConfig, endpoint, clock: SimClock):
        self.config = config
        self.endpoint = endpoint
        self.clock = clock
        self._rng = np.random.default_rng(config.seed)
        self.requests_lost = 0
        self.acks_lost = 0

    def _in_outage(self) -> bool:
        now_s = self.clock.now_s
        return any(start <= now_s < end for start, end in self.config.outages_s)

    def send(self, trip_id: str, events: list[TelemetryEvent]) -> IngestResult:
        if self._in_outage():
            raise LinkError("link outage")
        if self._rng.random() < self.config.loss_probability:
            self.requests_lost += 1
            raise LinkError("request lost")
        self.clock.advance(self.config.latency_ms)
        result = self.endpoint.ingest(trip_id, events)
        self.clock.advance(self.config.latency_ms)
        if self._rng.random() < self.config.loss_probability:
            self.acks_lost += 1
            raise LinkError("ack lost")
        return result
