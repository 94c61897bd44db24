"""Bulk CSV import with per-row rejection reporting.

Headers match the entity field names. Extra columns are ignored. A row
that fails validation or referential integrity is rejected individually;
the rest of the file still imports.
"""

from __future__ import annotations

import csv
import json
import sqlite3
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path

from ..events import CrashRecord, Driver, Road, RoadSegment, Vehicle, parse_ts
from ..geo import GeoPoint
from .service import ServiceError, TelemetryService

KINDS = ("drivers", "vehicles", "roads", "segments", "crashes")

_REQUIRED_HEADERS = {
    "drivers": ("driver_id", "age", "gender"),
    "vehicles": ("vehicle_id", "model", "in_service_date"),
    "roads": ("road_id", "name"),
    "segments": ("segment_id", "road_id", "polyline"),
    "crashes": ("crash_id", "segment_id", "ts", "severity"),
}


@dataclass(frozen=True, slots=True)
class ImportReport:
    kind: str
    imported: int
    rejected: list[tuple[int, str]] = field(default_factory=list)


def _parse_polyline(text: str) -> tuple[GeoPoint, ...]:
    points = json.loads(text)
    if not isinstance(points, list):
        raise ValueError("polyline must be a JSON list of [lat, lon] pairs")
    return tuple(GeoPoint(float(lat), float(lon)) for lat, lon in points)


def import_csv(service: TelemetryService, kind: str, path: str | Path) -> ImportReport:
    """Load one CSV file of the given kind into the store."""
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {KINDS}, got {kind!r}")
    store = service.store
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        headers = reader.fieldnames or []
        missing = [h for h in _REQUIRED_HEADERS[kind] if h not in headers]
        if missing:
            raise ValueError(f"{path}: missing required columns {missing}")

        imported = 0
        rejected: list[tuple[int, str]] = []
        for row in reader:
            try:
                if kind == "drivers":
                    driver = Driver(row["driver_id"], int(row["age"]),
                                    row["gender"])
                    # missing or blank password column falls back to a
                    # per-driver default so fixtures stay terse
                    password = row.get("password") or f"pw-{driver.driver_id}"
                    service.register_driver(driver, password)
                elif kind == "vehicles":
                    store.add_vehicle(Vehicle(
                        row["vehicle_id"], row["model"],
                        date.fromisoformat(row["in_service_date"])))
                elif kind == "roads":
                    store.add_road(Road(row["road_id"], row["name"]))
                elif kind == "segments":
                    attributes = json.loads(row["attributes"]) \
                        if row.get("attributes") else {}
                    store.add_segment(RoadSegment(
                        row["segment_id"], row["road_id"],
                        _parse_polyline(row["polyline"]), attributes))
                else:
                    store.add_crash(CrashRecord(
                        row["crash_id"], row["segment_id"],
                        parse_ts(row["ts"]), row["severity"]))
                imported += 1
            except (ValueError, TypeError, sqlite3.IntegrityError,
                    ServiceError) as exc:
                rejected.append((reader.line_num, str(exc)))
    return ImportReport(kind, imported, rejected)
