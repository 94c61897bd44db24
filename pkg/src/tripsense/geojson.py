"""GeoJSON (RFC 7946) export of trip tracks and events, and re-import.

One FeatureCollection per trip: a LineString through the event positions
in time order (only when two or more exist), then one Point per event
carrying the full wire-form fields as properties. Coordinates are
[lon, lat] per the RFC.
"""

from __future__ import annotations

from .events import TelemetryEvent, decode_event_obj, event_to_obj


def trip_feature_collection(events: list[TelemetryEvent]) -> dict:
    ordered = sorted(events, key=lambda e: (e.ts, str(e.event_id)))
    features: list[dict] = []
    if len(ordered) >= 2:
        features.append({
            "type": "Feature",
            "geometry": {
                "type": "LineString",
                "coordinates": [[e.position.lon, e.position.lat]
                                for e in ordered],
            },
            "properties": {"trip_id": ordered[0].trip_id, "kind": "track"},
        })
    for event in ordered:
        features.append({
            "type": "Feature",
            "geometry": {
                "type": "Point",
                "coordinates": [event.position.lon, event.position.lat],
            },
            "properties": event_to_obj(event),
        })
    return {"type": "FeatureCollection", "features": features}


def events_from_feature_collection(obj: dict) -> list[TelemetryEvent]:
    """Recover the events from an exported collection (Points only)."""
    if not isinstance(obj, dict) or obj.get("type") != "FeatureCollection":
        raise ValueError("expected a GeoJSON FeatureCollection")
    features = obj.get("features")
    if not isinstance(features, list):
        raise ValueError("FeatureCollection without a features list")
    events = []
    for feature in features:
        geometry = feature.get("geometry") or {}
        if geometry.get("type") != "Point":
            continue
        events.append(decode_event_obj(feature.get("properties") or {}))
    return events
