"""Fleet orchestration: simulated drivers generate trips into durable
outboxes and forward them over a lossy link to the ingestion service,
using the same HTTP API a real device would.

Agents share one simulated clock. Each 15-second window is generated for
every driver, the clock advances to that trip time, and every outbox gets
a flush, so link outages hit mid-trip traffic exactly as they would on
the road, and stragglers are drained once generation finishes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np

from .agent import (
    WINDOW_S,
    DrivingProfile,
    aggregate_window,
    simulate_trip,
    trip_distance_m,
)
from .events import SCENARIO_ORDER, utc_ms
from .geo import GeoPoint
from .netsim import LinkConfig, SimClock, SimulatedLink
from .nn.classify import EyeRegionBaseline, FrameClassifier
from .outbox import DEFAULT_BATCH_SIZE, Outbox, RetryPolicy, drain, flush
from .server.client import HttpClient, HttpSender
from .server.service import ConflictError
from .util import derive_seed

DEFAULT_START = utc_ms(2026, 6, 1, 6, 0, 0)
ROUTE_SPACING_DEG = 0.2  # ~22 km of straight road per driver, non-overlapping


@dataclass(frozen=True, slots=True)
class FleetRun:
    driver_count: int
    duration_s: int
    seed: int = 0
    link: LinkConfig = LinkConfig()
    profiles: tuple[DrivingProfile, ...] = ()
    batch_size: int = DEFAULT_BATCH_SIZE
    start_ts: datetime = DEFAULT_START

    def __post_init__(self):
        if self.driver_count < 1:
            raise ValueError(f"driver_count must be >= 1, got {self.driver_count}")
        if self.duration_s < 0:
            raise ValueError(f"duration_s must be >= 0, got {self.duration_s}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")


@dataclass(slots=True)
class RunSummary:
    generated: int = 0
    delivered: int = 0
    duplicates: int = 0
    rejected: int = 0
    poisoned: int = 0
    transport_failures: int = 0
    server_rows: int = 0
    trips: list[str] = field(default_factory=list)

    @property
    def lost(self) -> int:
        """Events that neither landed as rows nor were judged and rejected."""
        return self.generated - self.server_rows - self.rejected


def driver_name(i: int) -> str:
    return f"driver-{i:02d}"


def vehicle_name(i: int) -> str:
    return f"vehicle-{i:02d}"


def driver_password(driver_id: str) -> str:
    return f"pw-{driver_id}"


def default_profile(i: int) -> DrivingProfile:
    return DrivingProfile(
        cruise_speed_mps=10.0 + (i % 3),
        speed_jitter_mps=1.0,
        stop_probability=0.05,
        drowsy_onset_probability=0.3,
        scenario=SCENARIO_ORDER[i % len(SCENARIO_ORDER)])


def default_route(i: int) -> list[GeoPoint]:
    lat = 25.0 + ROUTE_SPACING_DEG * i
    return [GeoPoint(lat, 51.0), GeoPoint(lat + ROUTE_SPACING_DEG, 51.0)]


def bootstrap_fleet(service, count: int) -> None:
    """Register the fleet's drivers and vehicles; reruns are no-ops."""
    from .events import Driver, Vehicle
    from datetime import date

    for i in range(1, count + 1):
        driver_id = driver_name(i)
        try:
            service.register_driver(Driver(driver_id, 25 + i, "other"),
                                    driver_password(driver_id))
        except ConflictError:
            pass
        if service.store.get_vehicle(vehicle_name(i)) is None:
            service.store.add_vehicle(
                Vehicle(vehicle_name(i), "sim-sedan", date(2024, 1, 1)))


class _Agent:
    """One driver's client, outbox, and link over the shared clock."""

    def __init__(self, i: int, run: FleetRun, base_url: str,
                 outbox_dir: Path, clock: SimClock,
                 classifier: FrameClassifier):
        profile = run.profiles[(i - 1) % len(run.profiles)] if run.profiles \
            else default_profile(i)
        self.driver_id = driver_name(i)
        self.client = HttpClient(base_url)
        self.client.login(self.driver_id, driver_password(self.driver_id))
        self.trip_id = self.client.create_trip(vehicle_name(i), run.start_ts)
        self.samples = simulate_trip(profile, default_route(i), run.duration_s,
                                     derive_seed(run.seed, "drive", i),
                                     frame_side=classifier.input_side)
        self.rng = np.random.default_rng(derive_seed(run.seed, "agent", i))
        self.outbox = Outbox(outbox_dir / f"{self.driver_id}.outbox")
        self.link = SimulatedLink(
            replace(run.link, seed=derive_seed(run.seed, "link", i)),
            HttpSender(self.client), clock)
        self.policy = RetryPolicy()

    def window(self, w: int) -> list:
        return self.samples[w * WINDOW_S:(w + 1) * WINDOW_S]


def run_fleet(base_url: str, run: FleetRun, outbox_dir: str | Path,
              classifier: FrameClassifier | None = None) -> RunSummary:
    """Drive the whole fleet against the service at base_url."""
    classifier = classifier or EyeRegionBaseline(16)
    outbox_dir = Path(outbox_dir)
    outbox_dir.mkdir(parents=True, exist_ok=True)
    clock = SimClock()
    summary = RunSummary()

    agents = [_Agent(i, run, base_url, outbox_dir, clock, classifier)
              for i in range(1, run.driver_count + 1)]
    summary.trips = [agent.trip_id for agent in agents]

    def absorb(report):
        summary.delivered += len(report.acked)
        summary.duplicates += len(report.duplicates)
        summary.rejected += len(report.rejected)
        summary.transport_failures += report.transport_failures

    n_windows = math.ceil(run.duration_s / WINDOW_S)
    for w in range(n_windows):
        for agent in agents:
            window = agent.window(w)
            if not window:
                continue
            end_ts = run.start_ts + timedelta(seconds=window[-1].t + 1)
            event = aggregate_window(window, agent.trip_id, end_ts,
                                     classifier, agent.rng)
            agent.outbox.enqueue(event)
            summary.generated += 1
        trip_time_ms = (w + 1) * WINDOW_S * 1000
        if clock.now_ms < trip_time_ms:
            clock.advance(trip_time_ms - clock.now_ms)
        for agent in agents:
            absorb(flush(agent.outbox, agent.link, agent.policy,
                         run.batch_size, clock.now_ms))

    for agent in agents:
        absorb(drain(agent.outbox, agent.link, agent.policy,
                     run.batch_size, clock))
        summary.poisoned += len(agent.outbox.poisoned())
        agent.outbox.close()

        speeds = [s.speed_mps for s in agent.samples]
        agent.client.end_trip(
            agent.trip_id,
            run.start_ts + timedelta(seconds=len(agent.samples)),
            trip_distance_m(agent.samples),
            min(speeds, default=0.0),
            float(np.mean(speeds)) if speeds else 0.0,
            max(speeds, default=0.0))
        summary.server_rows += len(agent.client.all_events(agent.trip_id))
    return summary
