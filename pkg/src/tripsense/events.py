"""Domain entities and the canonical JSON wire form for telemetry events.

All timestamps are UTC with millisecond resolution. Entities are immutable
values and safe to share across threads.
"""

from __future__ import annotations

import json
import math
import uuid
from dataclasses import dataclass, field, fields
from datetime import date, datetime, timedelta, timezone
from enum import Enum

from .geo import GeoPoint

# Decision threshold shared by the classifier and event validation:
# drowsy <=> drowsiness_score >= DROWSY_THRESHOLD.
DROWSY_THRESHOLD = 0.5

GENDERS = ("female", "male", "other")
CRASH_SEVERITIES = ("minor", "severe", "fatal")


class WireDecodeError(ValueError):
    """A payload could not be decoded; carries the offending field name."""

    def __init__(self, field_name: str, reason: str):
        super().__init__(f"{field_name}: {reason}")
        self.field_name = field_name
        self.reason = reason


def utc_ms(year: int, month: int, day: int, hour: int = 0, minute: int = 0,
           second: int = 0, ms: int = 0) -> datetime:
    """UTC datetime at millisecond resolution."""
    return datetime(year, month, day, hour, minute, second, ms * 1000, tzinfo=timezone.utc)


def format_ts(ts: datetime) -> str:
    """ISO-8601 UTC with a trailing Z and exactly millisecond precision."""
    return ts.astimezone(timezone.utc).isoformat(timespec="milliseconds").replace("+00:00", "Z")


def parse_ts(text: str) -> datetime:
    if not text.endswith("Z"):
        raise ValueError(f"timestamp {text!r} must end with 'Z'")
    ts = datetime.fromisoformat(text[:-1] + "+00:00")
    return ts.astimezone(timezone.utc)


_EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)


def ts_to_ms(ts: datetime) -> int:
    # Exact integer arithmetic; float seconds lose sub-ms precision at epoch scale.
    return (ts - _EPOCH) // timedelta(milliseconds=1)


def ms_to_ts(ms: int) -> datetime:
    return _EPOCH + timedelta(milliseconds=ms)


@dataclass(frozen=True, slots=True)
class TelemetryEvent:
    """One 15-second aggregated observation from a device.

    Construction is permissive; ``validate_event`` reports invariant
    violations so malformed payloads can be rejected individually.
    """

    event_id: uuid.UUID
    trip_id: str
    ts: datetime
    position: GeoPoint
    gps_accuracy_m: float
    speed_mps: float
    heading_deg: float
    speed_min_mps: float
    speed_avg_mps: float
    speed_max_mps: float
    accel_mps2: float
    roll_dps: float
    pitch_dps: float
    yaw_dps: float
    drowsiness_score: float
    drowsy: bool


_NUMERIC_EVENT_FIELDS = (
    "gps_accuracy_m", "speed_mps", "heading_deg", "speed_min_mps", "speed_avg_mps",
    "speed_max_mps", "accel_mps2", "roll_dps", "pitch_dps", "yaw_dps", "drowsiness_score",
)

_NONNEGATIVE_EVENT_FIELDS = (
    "gps_accuracy_m", "speed_mps", "speed_min_mps", "speed_avg_mps", "speed_max_mps",
)


def validate_event(e: TelemetryEvent) -> list[str]:
    """Return every violated invariant; an empty list means the event is valid."""
    violations: list[str] = []
    if not e.trip_id:
        violations.append("trip_id: must be nonempty")
    if e.ts.tzinfo is None or e.ts.utcoffset() != timezone.utc.utcoffset(None):
        violations.append("ts: must be timezone-aware UTC")
    elif e.ts.microsecond % 1000 != 0:
        violations.append("ts: resolution finer than one millisecond")
    for name in _NUMERIC_EVENT_FIELDS:
        if not math.isfinite(getattr(e, name)):
            violations.append(f"{name}: must be finite")
    for name in _NONNEGATIVE_EVENT_FIELDS:
        value = getattr(e, name)
        if math.isfinite(value) and value < 0.0:
            violations.append(f"{name}: must be >= 0")
    if math.isfinite(e.heading_deg) and not 0.0 <= e.heading_deg < 360.0:
        violations.append("heading_deg: outside [0, 360)")
    speeds = (e.speed_min_mps, e.speed_avg_mps, e.speed_max_mps)
    if all(math.isfinite(s) for s in speeds) and not (speeds[0] <= speeds[1] <= speeds[2]):
        violations.append("speed_min_mps/speed_avg_mps/speed_max_mps: ordering violated")
    if math.isfinite(e.drowsiness_score):
        if not 0.0 <= e.drowsiness_score <= 1.0:
            violations.append("drowsiness_score: outside [0, 1]")
        elif e.drowsy != (e.drowsiness_score >= DROWSY_THRESHOLD):
            violations.append("drowsy: inconsistent with drowsiness_score and threshold")
    return violations


def event_to_obj(e: TelemetryEvent) -> dict:
    """The event as a plain JSON-ready object (the wire form before dumping)."""
    return {
        "event_id": str(e.event_id),
        "trip_id": e.trip_id,
        "ts": format_ts(e.ts),
        "position": {"lat": e.position.lat, "lon": e.position.lon},
        "gps_accuracy_m": e.gps_accuracy_m,
        "speed_mps": e.speed_mps,
        "heading_deg": e.heading_deg,
        "speed_min_mps": e.speed_min_mps,
        "speed_avg_mps": e.speed_avg_mps,
        "speed_max_mps": e.speed_max_mps,
        "accel_mps2": e.accel_mps2,
        "roll_dps": e.roll_dps,
        "pitch_dps": e.pitch_dps,
        "yaw_dps": e.yaw_dps,
        "drowsiness_score": e.drowsiness_score,
        "drowsy": e.drowsy,
    }


def encode_event(e: TelemetryEvent) -> str:
    """Canonical UTF-8 wire form: one JSON object, decimal numbers, ISO Z timestamps."""
    return json.dumps(event_to_obj(e), allow_nan=False, separators=(",", ":"))


def decode_event(text: str | bytes) -> TelemetryEvent:
    """Decode the canonical wire form.

    Unknown fields are ignored for forward compatibility; missing required
    fields and type mismatches raise ``WireDecodeError`` naming the field.
    """
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise WireDecodeError("<payload>", f"malformed JSON: {exc.msg}") from exc
    if not isinstance(obj, dict):
        raise WireDecodeError("<payload>", "expected a JSON object")
    return decode_event_obj(obj)


def decode_event_obj(obj: dict) -> TelemetryEvent:
    """Decode an already-parsed JSON object into a TelemetryEvent."""
    event_id_text = _require_str(obj, "event_id")
    try:
        event_id = uuid.UUID(event_id_text)
    except ValueError as exc:
        raise WireDecodeError("event_id", f"not a valid UUID: {event_id_text!r}") from exc
    ts_text = _require_str(obj, "ts")
    try:
        ts = parse_ts(ts_text)
    except ValueError as exc:
        raise WireDecodeError("ts", str(exc)) from exc
    pos = _require(obj, "position")
    if not isinstance(pos, dict):
        raise WireDecodeError("position", "expected an object with lat and lon")
    try:
        position = GeoPoint(_require_num(pos, "lat", "position.lat"),
                            _require_num(pos, "lon", "position.lon"))
    except ValueError as exc:
        if isinstance(exc, WireDecodeError):
            raise
        raise WireDecodeError("position", str(exc)) from exc
    return TelemetryEvent(
        event_id=event_id,
        trip_id=_require_str(obj, "trip_id"),
        ts=ts,
        position=position,
        gps_accuracy_m=_require_num(obj, "gps_accuracy_m"),
        speed_mps=_require_num(obj, "speed_mps"),
        heading_deg=_require_num(obj, "heading_deg"),
        speed_min_mps=_require_num(obj, "speed_min_mps"),
        speed_avg_mps=_require_num(obj, "speed_avg_mps"),
        speed_max_mps=_require_num(obj, "speed_max_mps"),
        accel_mps2=_require_num(obj, "accel_mps2"),
        roll_dps=_require_num(obj, "roll_dps"),
        pitch_dps=_require_num(obj, "pitch_dps"),
        yaw_dps=_require_num(obj, "yaw_dps"),
        drowsiness_score=_require_num(obj, "drowsiness_score"),
        drowsy=_require_bool(obj, "drowsy"),
    )


def _require(obj: dict, name: str, label: str | None = None):
    if name not in obj:
        raise WireDecodeError(label or name, "missing required field")
    return obj[name]


def _require_str(obj: dict, name: str) -> str:
    value = _require(obj, name)
    if not isinstance(value, str):
        raise WireDecodeError(name, f"expected string, got {type(value).__name__}")
    return value


def _require_num(obj: dict, name: str, label: str | None = None) -> float:
    value = _require(obj, name, label)
    # bool is an int subclass; a JSON true/false is not an acceptable number.
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise WireDecodeError(label or name, f"expected number, got {type(value).__name__}")
    return float(value)


def _require_bool(obj: dict, name: str) -> bool:
    value = _require(obj, name)
    if not isinstance(value, bool):
        raise WireDecodeError(name, f"expected boolean, got {type(value).__name__}")
    return value


@dataclass(frozen=True, slots=True)
class Trip:
    trip_id: str
    driver_id: str
    vehicle_id: str
    start_ts: datetime
    end_ts: datetime | None = None
    distance_m: float = 0.0
    speed_min_mps: float = 0.0
    speed_avg_mps: float = 0.0
    speed_max_mps: float = 0.0

    def __post_init__(self) -> None:
        if self.end_ts is not None and self.end_ts < self.start_ts:
            raise ValueError("end_ts precedes start_ts")
        if self.distance_m < 0.0:
            raise ValueError("distance_m must be >= 0")


@dataclass(frozen=True, slots=True)
class Driver:
    driver_id: str
    age: int
    gender: str

    def __post_init__(self) -> None:
        if self.age <= 0:
            raise ValueError("age must be > 0")
        if self.gender not in GENDERS:
            raise ValueError(f"gender must be one of {GENDERS}")


@dataclass(frozen=True, slots=True)
class Vehicle:
    vehicle_id: str
    model: str
    in_service_date: date


@dataclass(frozen=True, slots=True)
class Road:
    road_id: str
    name: str


@dataclass(frozen=True, slots=True)
class RoadSegment:
    segment_id: str
    road_id: str
    polyline: tuple[GeoPoint, ...]
    attributes: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if len(self.polyline) < 2:
            raise ValueError("segment polyline needs at least 2 points")
        if len({(p.lat, p.lon) for p in self.polyline}) != len(self.polyline):
            raise ValueError("segment polyline points must be pairwise distinct")


@dataclass(frozen=True, slots=True)
class CrashRecord:
    crash_id: str
    segment_id: str
    ts: datetime
    severity: str

    def __post_init__(self) -> None:
        if self.severity not in CRASH_SEVERITIES:
            raise ValueError(f"severity must be one of {CRASH_SEVERITIES}")


class Scenario(str, Enum):
    """The five recording conditions used to stratify classifier accuracy."""

    GLASSES = "glasses"
    NO_GLASSES = "no_glasses"
    SUNGLASSES = "sunglasses"
    NIGHT_GLASSES = "night_glasses"
    NIGHT_NO_GLASSES = "night_no_glasses"


# Display order for accuracy tables (fixed so reports are reproducible).
SCENARIO_ORDER = (
    Scenario.GLASSES,
    Scenario.NIGHT_NO_GLASSES,
    Scenario.NIGHT_GLASSES,
    Scenario.NO_GLASSES,
    Scenario.SUNGLASSES,
)

SCENARIO_LABELS = {
    Scenario.GLASSES: "With glasses",
    Scenario.NIGHT_NO_GLASSES: "Night without glasses",
    Scenario.NIGHT_GLASSES: "Night with glasses",
    Scenario.NO_GLASSES: "Without glasses",
    Scenario.SUNGLASSES: "With sunglasses",
}

EVENT_FIELD_NAMES = tuple(f.name for f in fields(TelemetryEvent))
