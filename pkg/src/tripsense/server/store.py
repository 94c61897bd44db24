"""SQLite persistence for the seven-table telemetry schema.

One shared connection guarded by a reentrant lock; callers that need a
multi-statement consistent view hold ``store.lock`` around the sequence.
Timestamps are stored as integer epoch milliseconds, polylines as JSON.
"""

from __future__ import annotations

import json
import sqlite3
import threading
import uuid
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path

from ..events import (
    CrashRecord,
    Driver,
    Road,
    RoadSegment,
    TelemetryEvent,
    Vehicle,
    ms_to_ts,
    ts_to_ms,
)
from ..geo import GeoPoint

_SCHEMA = """
CREATE TABLE IF NOT EXISTS drivers (
    driver_id     TEXT PRIMARY KEY,
    age           INTEGER NOT NULL,
    gender        TEXT NOT NULL,
    password_salt BLOB NOT NULL,
    password_hash BLOB NOT NULL
);
CREATE TABLE IF NOT EXISTS vehicles (
    vehicle_id      TEXT PRIMARY KEY,
    model           TEXT NOT NULL,
    in_service_date TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS roads (
    road_id TEXT PRIMARY KEY,
    name    TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS road_segments (
    segment_id TEXT PRIMARY KEY,
    road_id    TEXT NOT NULL REFERENCES roads(road_id),
    polyline   TEXT NOT NULL,
    attributes TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS crashes (
    crash_id   TEXT PRIMARY KEY,
    segment_id TEXT NOT NULL REFERENCES road_segments(segment_id),
    ts         INTEGER NOT NULL,
    severity   TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS trips (
    trip_id           TEXT PRIMARY KEY,
    driver_id         TEXT NOT NULL REFERENCES drivers(driver_id),
    vehicle_id        TEXT NOT NULL REFERENCES vehicles(vehicle_id),
    start_ts          INTEGER NOT NULL,
    end_ts            INTEGER,
    client_distance_m REAL,
    server_distance_m REAL,
    speed_min_mps     REAL,
    speed_avg_mps     REAL,
    speed_max_mps     REAL
);
CREATE TABLE IF NOT EXISTS events (
    event_id         TEXT PRIMARY KEY,
    trip_id          TEXT NOT NULL REFERENCES trips(trip_id),
    ts               INTEGER NOT NULL,
    lat              REAL NOT NULL,
    lon              REAL NOT NULL,
    gps_accuracy_m   REAL NOT NULL,
    speed_mps        REAL NOT NULL,
    heading_deg      REAL NOT NULL,
    speed_min_mps    REAL NOT NULL,
    speed_avg_mps    REAL NOT NULL,
    speed_max_mps    REAL NOT NULL,
    accel_mps2       REAL NOT NULL,
    roll_dps         REAL NOT NULL,
    pitch_dps        REAL NOT NULL,
    yaw_dps          REAL NOT NULL,
    drowsiness_score REAL NOT NULL,
    drowsy           INTEGER NOT NULL,
    segment_id       TEXT REFERENCES road_segments(segment_id)
);
CREATE INDEX IF NOT EXISTS events_by_trip ON events(trip_id, ts, event_id);
CREATE INDEX IF NOT EXISTS events_by_segment ON events(segment_id, trip_id);
"""

_EVENT_COLUMNS = (
    "event_id, trip_id, ts, lat, lon, gps_accuracy_m, speed_mps, heading_deg, "
    "speed_min_mps, speed_avg_mps, speed_max_mps, accel_mps2, roll_dps, "
    "pitch_dps, yaw_dps, drowsiness_score, drowsy, segment_id"
)


@dataclass(frozen=True, slots=True)
class TripRecord:
    """A trip row; distance carries both the client's figure and the
    server's recomputation from stored event positions."""

    trip_id: str
    driver_id: str
    vehicle_id: str
    start_ts: datetime
    end_ts: datetime | None = None
    client_distance_m: float | None = None
    server_distance_m: float | None = None
    speed_min_mps: float | None = None
    speed_avg_mps: float | None = None
    speed_max_mps: float | None = None

    @property
    def open(self) -> bool:
        return self.end_ts is None

    @property
    def discrepancy_ratio(self) -> float | None:
        """|server - client| / max(server, client); None until both exist."""
        if self.client_distance_m is None or self.server_distance_m is None:
            return None
        bottom = max(self.client_distance_m, self.server_distance_m)
        if bottom <= 0.0:
            return 0.0
        return abs(self.server_distance_m - self.client_distance_m) / bottom


class Store:
    """The seven tables: drivers, vehicles, roads, road_segments, crashes,
    trips, and events. Foreign keys are enforced; events are unique on
    event_id so replayed batches cannot create duplicate rows."""

    def __init__(self, path: str | Path = ":memory:"):
        self.lock = threading.RLock()
        self._conn = sqlite3.connect(str(path), check_same_thread=False,
                                     isolation_level=None)
        self._conn.execute("PRAGMA foreign_keys = ON")
        self._conn.executescript(_SCHEMA)

    def close(self) -> None:
        with self.lock:
            self._conn.close()

    # -- drivers -------------------------------------------------------------

    def add_driver(self, driver: Driver, password_salt: bytes,
                   password_hash: bytes) -> None:
        with self.lock:
            self._conn.execute(
                "INSERT INTO drivers VALUES (?, ?, ?, ?, ?)",
                (driver.driver_id, driver.age, driver.gender,
                 password_salt, password_hash))

    def get_driver(self, driver_id: str) -> Driver | None:
        with self.lock:
            row = self._conn.execute(
                "SELECT driver_id, age, gender FROM drivers WHERE driver_id = ?",
                (driver_id,)).fetchone()
        return Driver(*row) if row else None

    def get_driver_auth(self, driver_id: str) -> tuple[bytes, bytes] | None:
        with self.lock:
            row = self._conn.execute(
                "SELECT password_salt, password_hash FROM drivers "
                "WHERE driver_id = ?", (driver_id,)).fetchone()
        return (row[0], row[1]) if row else None

    # -- vehicles, roads, segments, crashes -----------------------------------

    def add_vehicle(self, vehicle: Vehicle) -> None:
        with self.lock:
            self._conn.execute(
                "INSERT INTO vehicles VALUES (?, ?, ?)",
                (vehicle.vehicle_id, vehicle.model,
                 vehicle.in_service_date.isoformat()))

    def get_vehicle(self, vehicle_id: str) -> Vehicle | None:
        with self.lock:
            row = self._conn.execute(
                "SELECT vehicle_id, model, in_service_date FROM vehicles "
                "WHERE vehicle_id = ?", (vehicle_id,)).fetchone()
        if row is None:
            return None
        return Vehicle(row[0], row[1], datetime.strptime(row[2], "%Y-%m-%d").date())

    def add_road(self, road: Road) -> None:
        with self.lock:
            self._conn.execute("INSERT INTO roads VALUES (?, ?)",
                               (road.road_id, road.name))

    def get_road(self, road_id: str) -> Road | None:
        with self.lock:
            row = self._conn.execute(
                "SELECT road_id, name FROM roads WHERE road_id = ?",
                (road_id,)).fetchone()
        return Road(*row) if row else None

    def add_segment(self, segment: RoadSegment) -> None:
        polyline = json.dumps([[p.lat, p.lon] for p in segment.polyline])
        with self.lock:
            self._conn.execute(
                "INSERT INTO road_segments VALUES (?, ?, ?, ?)",
                (segment.segment_id, segment.road_id, polyline,
                 json.dumps(segment.attributes)))

    def _segment_from_row(self, row) -> RoadSegment:
        points = tuple(GeoPoint(lat, lon) for lat, lon in json.loads(row[2]))
        return RoadSegment(row[0], row[1], points, json.loads(row[3]))

    def get_segment(self, segment_id: str) -> RoadSegment | None:
        with self.lock:
            row = self._conn.execute(
                "SELECT segment_id, road_id, polyline, attributes "
                "FROM road_segments WHERE segment_id = ?", (segment_id,)).fetchone()
        return self._segment_from_row(row) if row else None

    def list_segments(self) -> list[RoadSegment]:
        with self.lock:
            rows = self._conn.execute(
                "SELECT segment_id, road_id, polyline, attributes "
                "FROM road_segments ORDER BY segment_id").fetchall()
        return [self._segment_from_row(row) for row in rows]

    def add_crash(self, crash: CrashRecord) -> None:
        with self.lock:
            self._conn.execute(
                "INSERT INTO crashes VALUES (?, ?, ?, ?)",
                (crash.crash_id, crash.segment_id, ts_to_ms(crash.ts),
                 crash.severity))

    def crash_count(self, segment_id: str) -> int:
        with self.lock:
            (count,) = self._conn.execute(
                "SELECT COUNT(*) FROM crashes WHERE segment_id = ?",
                (segment_id,)).fetchone()
        return count

    # -- trips ----------------------------------------------------------------

    def insert_trip(self, record: TripRecord) -> None:
        with self.lock:
            self._conn.execute(
                "INSERT INTO trips VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?, ?)",
                (record.trip_id, record.driver_id, record.vehicle_id,
                 ts_to_ms(record.start_ts),
                 None if record.end_ts is None else ts_to_ms(record.end_ts),
                 record.client_distance_m, record.server_distance_m,
                 record.speed_min_mps, record.speed_avg_mps,
                 record.speed_max_mps))

    def count_trips(self) -> int:
        with self.lock:
            (count,) = self._conn.execute("SELECT COUNT(*) FROM trips").fetchone()
        return count

    def _trip_from_row(self, row) -> TripRecord:
        return TripRecord(
            trip_id=row[0], driver_id=row[1], vehicle_id=row[2],
            start_ts=ms_to_ts(row[3]),
            end_ts=None if row[4] is None else ms_to_ts(row[4]),
            client_distance_m=row[5], server_distance_m=row[6],
            speed_min_mps=row[7], speed_avg_mps=row[8], speed_max_mps=row[9])

    def get_trip(self, trip_id: str) -> TripRecord | None:
        with self.lock:
            row = self._conn.execute(
                "SELECT * FROM trips WHERE trip_id = ?", (trip_id,)).fetchone()
        return self._trip_from_row(row) if row else None

    def list_trips(self, driver_id: str) -> list[TripRecord]:
        with self.lock:
            rows = self._conn.execute(
                "SELECT * FROM trips WHERE driver_id = ? ORDER BY trip_id",
                (driver_id,)).fetchall()
        return [self._trip_from_row(row) for row in rows]

    def finish_trip(self, trip_id: str, end_ts: datetime,
                    client_distance_m: float, server_distance_m: float,
                    speed_min_mps: float, speed_avg_mps: float,
                    speed_max_mps: float) -> None:
        with self.lock:
            self._conn.execute(
                "UPDATE trips SET end_ts = ?, client_distance_m = ?, "
                "server_distance_m = ?, speed_min_mps = ?, speed_avg_mps = ?, "
                "speed_max_mps = ? WHERE trip_id = ?",
                (ts_to_ms(end_ts), client_distance_m, server_distance_m,
                 speed_min_mps, speed_avg_mps, speed_max_mps, trip_id))

    # -- events ---------------------------------------------------------------

    def insert_event(self, event: TelemetryEvent,
                     segment_id: str | None = None) -> bool:
        """Insert; False when event_id is already stored (idempotent replay)."""
        with self.lock:
            cursor = self._conn.execute(
                f"INSERT OR IGNORE INTO events ({_EVENT_COLUMNS}) "
                "VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?)",
                (str(event.event_id), event.trip_id, ts_to_ms(event.ts),
                 event.position.lat, event.position.lon, event.gps_accuracy_m,
                 event.speed_mps, event.heading_deg, event.speed_min_mps,
                 event.speed_avg_mps, event.speed_max_mps, event.accel_mps2,
                 event.roll_dps, event.pitch_dps, event.yaw_dps,
                 event.drowsiness_score, int(event.drowsy), segment_id))
            return cursor.rowcount == 1

    def has_event(self, event_id: str) -> bool:
        with self.lock:
            row = self._conn.execute(
                "SELECT 1 FROM events WHERE event_id = ?", (event_id,)).fetchone()
        return row is not None

    def count_events(self, trip_id: str | None = None) -> int:
        with self.lock:
            if trip_id is None:
                (count,) = self._conn.execute(
                    "SELECT COUNT(*) FROM events").fetchone()
            else:
                (count,) = self._conn.execute(
                    "SELECT COUNT(*) FROM events WHERE trip_id = ?",
                    (trip_id,)).fetchone()
        return count

    @staticmethod
    def _event_from_row(row) -> tuple[TelemetryEvent, str | None]:
        event = TelemetryEvent(
            event_id=uuid.UUID(row[0]), trip_id=row[1], ts=ms_to_ts(row[2]),
            position=GeoPoint(row[3], row[4]), gps_accuracy_m=row[5],
            speed_mps=row[6], heading_deg=row[7], speed_min_mps=row[8],
            speed_avg_mps=row[9], speed_max_mps=row[10], accel_mps2=row[11],
            roll_dps=row[12], pitch_dps=row[13], yaw_dps=row[14],
            drowsiness_score=row[15], drowsy=bool(row[16]))
        return event, row[17]

    def events_for_trip(self, trip_id: str,
                        after: tuple[int, str] | None = None,
                        limit: int | None = None,
                        start_ms: int | None = None,
                        end_ms: int | None = None,
                        ) -> list[tuple[TelemetryEvent, str | None]]:
        """Events ordered by (ts, event_id); `after` is an exclusive cursor."""
        sql = [f"SELECT {_EVENT_COLUMNS} FROM events WHERE trip_id = ?"]
        args: list = [trip_id]
        if start_ms is not None:
            sql.append("AND ts >= ?")
            args.append(start_ms)
        if end_ms is not None:
            sql.append("AND ts <= ?")
            args.append(end_ms)
        if after is not None:
            sql.append("AND (ts, event_id) > (?, ?)")
            args.extend(after)
        sql.append("ORDER BY ts, event_id")
        if limit is not None:
            sql.append("LIMIT ?")
            args.append(limit)
        with self.lock:
            rows = self._conn.execute(" ".join(sql), args).fetchall()
        return [self._event_from_row(row) for row in rows]

    def traversal_count(self, segment_id: str) -> int:
        """Distinct (trip, segment) pairs among events mapped to the segment."""
        with self.lock:
            (count,) = self._conn.execute(
                "SELECT COUNT(DISTINCT trip_id) FROM events WHERE segment_id = ?",
                (segment_id,)).fetchone()
        return count
