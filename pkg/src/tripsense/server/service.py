"""Service operations: authentication, trips, idempotent ingestion,
segment matching, and segment risk analytics."""

from __future__ import annotations

import hashlib
import hmac
import secrets
import sqlite3
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone

from ..events import (
    Driver,
    RoadSegment,
    TelemetryEvent,
    WireDecodeError,
    decode_event_obj,
    ts_to_ms,
    validate_event,
)
from ..geo import GeoPoint, haversine_m, point_to_polyline_m
from ..outbox import IngestResult
from .store import Store, TripRecord

PBKDF2_ITERATIONS = 100_000
SALT_BYTES = 16
TOKEN_TTL_S = 24 * 3600
# An event maps to the nearest segment only when within this distance;
# ties within the epsilon resolve to the lowest segment_id.
SEGMENT_MATCH_M = 50.0
SEGMENT_TIE_EPS_M = 1e-9
DEFAULT_PAGE_SIZE = 100


class ServiceError(Exception):
    http_status = 400


class ValidationError(ServiceError):
    http_status = 400


class AuthError(ServiceError):
    http_status = 401


class NotFoundError(ServiceError):
    http_status = 404


class ConflictError(ServiceError):
    http_status = 409


@dataclass(frozen=True, slots=True)
class SessionToken:
    token: str
    driver_id: str
    expiry_ts: datetime


@dataclass(frozen=True, slots=True)
class SegmentRisk:
    """Crashes per 1000 traversals; flagged instead when exposure is zero."""

    segment_id: str
    crash_count: int
    traversal_count: int
    risk_per_1000: float
    insufficient_data: bool


def _hash_password(password: str, salt: bytes) -> bytes:
    return hashlib.pbkdf2_hmac("sha256", password.encode(), salt,
                               PBKDF2_ITERATIONS)


def _require_utc(ts: datetime, label: str) -> datetime:
    if ts.tzinfo is None or ts.utcoffset() != timezone.utc.utcoffset(None):
        raise ValidationError(f"{label}: must be timezone-aware UTC")
    return ts


def map_event_to_segment(position: GeoPoint,
                         segments: list[RoadSegment]) -> str | None:
    """Nearest segment within SEGMENT_MATCH_M of the position, or None."""
    best_id = None
    best_m = None
    for segment in segments:
        distance = point_to_polyline_m(position, list(segment.polyline))
        if best_m is None or distance < best_m - SEGMENT_TIE_EPS_M:
            best_id, best_m = segment.segment_id, distance
        elif abs(distance - best_m) <= SEGMENT_TIE_EPS_M and \
                segment.segment_id < best_id:
            best_id = segment.segment_id
    if best_m is None or best_m > SEGMENT_MATCH_M:
        return None
    return best_id


class TelemetryService:
    """Business operations over the store; one instance serves all requests.

    Sessions are in-memory: a restart invalidates tokens but never data.
    `now_fn` is injectable so expiry is testable without waiting.
    """

    def __init__(self, store: Store, token_ttl_s: int = TOKEN_TTL_S,
                 now_fn=None):
        if token_ttl_s <= 0:
            raise ValueError(f"token_ttl_s must be > 0, got {token_ttl_s}")
        self._store = store
        self._ttl = timedelta(seconds=token_ttl_s)
        self._now = now_fn or (lambda: datetime.now(timezone.utc))
        self._sessions: dict[str, SessionToken] = {}

    @property
    def store(self) -> Store:
        return self._store

    # -- authentication -------------------------------------------------------

    def register_driver(self, driver: Driver, password: str) -> None:
        if not password:
            raise ValidationError("password: must be nonempty")
        salt = secrets.token_bytes(SALT_BYTES)
        try:
            self._store.add_driver(driver, salt, _hash_password(password, salt))
        except sqlite3.IntegrityError:
            raise ConflictError(f"driver {driver.driver_id!r} already registered")

    def login(self, driver_id: str, password: str) -> SessionToken:
        auth = self._store.get_driver_auth(driver_id)
        # hash against a dummy salt on unknown users so both failure modes
        # cost the same and return the same error
        salt, stored = auth if auth else (b"\x00" * SALT_BYTES, b"")
        if not hmac.compare_digest(_hash_password(password, salt), stored):
            raise AuthError("invalid credentials")
        session = SessionToken(token=secrets.token_hex(16), driver_id=driver_id,
                               expiry_ts=self._now() + self._ttl)
        with self._store.lock:
            self._sessions[session.token] = session
        return session

    def authenticate(self, token: str) -> str:
        with self._store.lock:
            session = self._sessions.get(token)
        if session is None or self._now() >= session.expiry_ts:
            raise AuthError("invalid or expired token")
        return session.driver_id

    # -- trips ----------------------------------------------------------------

    def create_trip(self, token: str, vehicle_id: str,
                    start_ts: datetime) -> str:
        driver_id = self.authenticate(token)
        _require_utc(start_ts, "start_ts")
        with self._store.lock:
            if self._store.get_vehicle(vehicle_id) is None:
                raise NotFoundError(f"unknown vehicle {vehicle_id!r}")
            trip_id = f"trip-{self._store.count_trips() + 1:06d}"
            self._store.insert_trip(TripRecord(
                trip_id=trip_id, driver_id=driver_id, vehicle_id=vehicle_id,
                start_ts=start_ts))
        return trip_id

    def _owned_trip(self, driver_id: str, trip_id: str) -> TripRecord:
        trip = self._store.get_trip(trip_id)
        if trip is None:
            raise NotFoundError(f"unknown trip {trip_id!r}")
        if trip.driver_id != driver_id:
            raise AuthError("trip belongs to a different driver")
        return trip

    def end_trip(self, token: str, trip_id: str, end_ts: datetime,
                 client_distance_m: float, speed_min_mps: float,
                 speed_avg_mps: float, speed_max_mps: float) -> TripRecord:
        """Close the trip, recomputing distance from stored event positions
        so the client's 1 Hz figure and the server's 15 s chord sum are
        both kept."""
        driver_id = self.authenticate(token)
        _require_utc(end_ts, "end_ts")
        if client_distance_m < 0.0:
            raise ValidationError("distance_m: must be >= 0")
        with self._store.lock:
            trip = self._owned_trip(driver_id, trip_id)
            if not trip.open:
                raise ConflictError(f"trip {trip_id!r} is already ended")
            if end_ts < trip.start_ts:
                raise ValidationError("end_ts: precedes trip start")
            server_distance = self._recompute_distance(trip_id)
            self._store.finish_trip(trip_id, end_ts, client_distance_m,
                                    server_distance, speed_min_mps,
                                    speed_avg_mps, speed_max_mps)
            return self._store.get_trip(trip_id)

    def _recompute_distance(self, trip_id: str) -> float:
        rows = self._store.events_for_trip(trip_id)
        positions = [event.position for event, _ in rows]
        return sum(haversine_m(a, b) for a, b in zip(positions, positions[1:]))

    # -- ingestion ------------------------------------------------------------

    def ingest_events(self, token: str, trip_id: str,
                      batch: list) -> IngestResult:
        """Idempotent batch ingestion.

        Batch items are wire objects (dicts) or TelemetryEvent instances.
        Invalid items are rejected individually; a closed or unknown trip
        rejects the whole batch by raising.
        """
        driver_id = self.authenticate(token)
        with self._store.lock:
            trip = self._owned_trip(driver_id, trip_id)
            if not trip.open:
                raise ConflictError(f"trip {trip_id!r} is already ended")
            segments = self._store.list_segments()
            accepted, duplicates, rejected = [], [], {}
            for item in batch:
                if isinstance(item, TelemetryEvent):
                    event = item
                else:
                    try:
                        event = decode_event_obj(item)
                    except WireDecodeError as exc:
                        key = str(item.get("event_id", "<invalid>")) \
                            if isinstance(item, dict) else "<invalid>"
                        rejected[key] = str(exc)
                        continue
                key = str(event.event_id)
                violations = validate_event(event)
                if event.trip_id != trip_id:
                    violations.append("trip_id: does not match the ingestion trip")
                if violations:
                    rejected[key] = "; ".join(violations)
                    continue
                segment_id = map_event_to_segment(event.position, segments)
                if self._store.insert_event(event, segment_id):
                    accepted.append(key)
                else:
                    duplicates.append(key)
        return IngestResult(frozenset(accepted), frozenset(duplicates), rejected)

    # -- queries --------------------------------------------------------------

    def list_trips(self, token: str) -> list[TripRecord]:
        driver_id = self.authenticate(token)
        return self._store.list_trips(driver_id)

    def get_trip(self, token: str, trip_id: str) -> TripRecord:
        self.authenticate(token)
        trip = self._store.get_trip(trip_id)
        if trip is None:
            raise NotFoundError(f"unknown trip {trip_id!r}")
        return trip

    def list_events(self, token: str, trip_id: str,
                    start_ts: datetime | None = None,
                    end_ts: datetime | None = None,
                    after: tuple[int, str] | None = None,
                    limit: int = DEFAULT_PAGE_SIZE):
        """One page of (event, segment_id) ordered by (ts, event_id), plus
        the next cursor or None when the page exhausts the range."""
        self.authenticate(token)
        if limit < 1:
            raise ValidationError(f"limit: must be >= 1, got {limit}")
        with self._store.lock:
            if self._store.get_trip(trip_id) is None:
                raise NotFoundError(f"unknown trip {trip_id!r}")
            rows = self._store.events_for_trip(
                trip_id, after=after, limit=limit + 1,
                start_ms=None if start_ts is None else ts_to_ms(start_ts),
                end_ms=None if end_ts is None else ts_to_ms(end_ts))
        page = rows[:limit]
        cursor = None
        if len(rows) > limit and page:
            last_event = page[-1][0]
            cursor = (ts_to_ms(last_event.ts), str(last_event.event_id))
        return page, cursor

    # -- analytics ------------------------------------------------------------

    def segment_risk(self, segment_id: str) -> SegmentRisk:
        with self._store.lock:
            if self._store.get_segment(segment_id) is None:
                raise NotFoundError(f"unknown segment {segment_id!r}")
            crashes = self._store.crash_count(segment_id)
            traversals = self._store.traversal_count(segment_id)
        if traversals == 0:
            return SegmentRisk(segment_id, crashes, 0, 0.0, True)
        return SegmentRisk(segment_id, crashes, traversals,
                           1000.0 * crashes / traversals, False)
