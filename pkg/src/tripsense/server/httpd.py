"""HTTP/JSON endpoints over the service layer, on the stdlib server.

POST /login, POST /trips, POST /trips/{id}/events, POST /trips/{id}/end,
GET /trips, GET /trips/{id}, GET /trips/{id}/events, GET /segments/{id}/risk.
All except /login require "Authorization: Bearer <token>". Errors are JSON
{"error": reason} with 400/401/404/409 status.
"""

from __future__ import annotations

import json
import re
from dataclasses import asdict
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlparse

from ..events import event_to_obj, format_ts, parse_ts
from .service import AuthError, ServiceError, TelemetryService
from .store import TripRecord

_TRIP_EVENTS = re.compile(r"^/trips/([^/]+)/events$")
_TRIP_END = re.compile(r"^/trips/([^/]+)/end$")
_TRIP = re.compile(r"^/trips/([^/]+)$")
_SEGMENT_RISK = re.compile(r"^/segments/([^/]+)/risk$")


def trip_to_obj(trip: TripRecord) -> dict:
    return {
        "trip_id": trip.trip_id,
        "driver_id": trip.driver_id,
        "vehicle_id": trip.vehicle_id,
        "start_ts": format_ts(trip.start_ts),
        "end_ts": None if trip.end_ts is None else format_ts(trip.end_ts),
        "client_distance_m": trip.client_distance_m,
        "server_distance_m": trip.server_distance_m,
        "speed_min_mps": trip.speed_min_mps,
        "speed_avg_mps": trip.speed_avg_mps,
        "speed_max_mps": trip.speed_max_mps,
        "discrepancy_ratio": trip.discrepancy_ratio,
    }


class _BadRequest(Exception):
    pass


def _field(body: dict, name: str):
    if name not in body:
        raise _BadRequest(f"{name}: missing required field")
    return body[name]


def _ts_field(body: dict, name: str):
    try:
        return parse_ts(_field(body, name))
    except (TypeError, ValueError) as exc:
        raise _BadRequest(f"{name}: {exc}")


def _num_field(body: dict, name: str) -> float:
    value = _field(body, name)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise _BadRequest(f"{name}: expected number")
    return float(value)


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"

    @property
    def service(self) -> TelemetryService:
        return self.server.service

    def log_message(self, fmt, *args):
        pass  # tests and the CLI decide what to print

    # -- plumbing -----------------------------------------------------------

    def _reply(self, status: int, obj: dict) -> None:
        payload = json.dumps(obj).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def _body(self) -> dict:
        length = int(self.headers.get("Content-Length") or 0)
        raw = self.rfile.read(length)
        try:
            obj = json.loads(raw) if raw else {}
        except json.JSONDecodeError as exc:
            raise _BadRequest(f"malformed JSON body: {exc.msg}")
        if not isinstance(obj, dict):
            raise _BadRequest("request body must be a JSON object")
        return obj

    def _token(self) -> str:
        header = self.headers.get("Authorization") or ""
        if not header.startswith("Bearer "):
            raise AuthError("missing bearer token")
        return header[len("Bearer "):]

    def _dispatch(self, handler) -> None:
        try:
            status, obj = handler()
        except _BadRequest as exc:
            status, obj = 400, {"error": str(exc)}
        except ServiceError as exc:
            status, obj = exc.http_status, {"error": str(exc)}
        self._reply(status, obj)

    # -- routes ---------------------------------------------------------------

    def do_POST(self):
        path = urlparse(self.path).path
        if path == "/login":
            return self._dispatch(self._post_login)
        match = _TRIP_EVENTS.match(path)
        if match:
            return self._dispatch(lambda: self._post_events(match.group(1)))
        match = _TRIP_END.match(path)
        if match:
            return self._dispatch(lambda: self._post_end(match.group(1)))
        if path == "/trips":
            return self._dispatch(self._post_trip)
        self._reply(404, {"error": f"no such endpoint: POST {path}"})

    def do_GET(self):
        url = urlparse(self.path)
        query = parse_qs(url.query)
        if url.path == "/trips":
            return self._dispatch(self._get_trips)
        match = _TRIP.match(url.path)
        if match:
            return self._dispatch(lambda: self._get_trip(match.group(1)))
        match = _TRIP_EVENTS.match(url.path)
        if match:
            return self._dispatch(lambda: self._get_events(match.group(1), query))
        match = _SEGMENT_RISK.match(url.path)
        if match:
            return self._dispatch(lambda: self._get_risk(match.group(1)))
        self._reply(404, {"error": f"no such endpoint: GET {url.path}"})

    def _post_login(self):
        body = self._body()
        session = self.service.login(str(_field(body, "driver_id")),
                                     str(_field(body, "password")))
        return 200, {"token": session.token, "driver_id": session.driver_id,
                     "expiry_ts": format_ts(session.expiry_ts)}

    def _post_trip(self):
        body = self._body()
        trip_id = self.service.create_trip(
            self._token(), str(_field(body, "vehicle_id")),
            _ts_field(body, "start_ts"))
        return 200, {"trip_id": trip_id}

    def _post_events(self, trip_id: str):
        body = self._body()
        events = _field(body, "events")
        if not isinstance(events, list):
            raise _BadRequest("events: expected a list")
        result = self.service.ingest_events(self._token(), trip_id, events)
        return 200, {"accepted": sorted(result.accepted),
                     "duplicates": sorted(result.duplicates),
                     "rejected": result.rejected}

    def _post_end(self, trip_id: str):
        body = self._body()
        trip = self.service.end_trip(
            self._token(), trip_id, _ts_field(body, "end_ts"),
            _num_field(body, "distance_m"), _num_field(body, "speed_min_mps"),
            _num_field(body, "speed_avg_mps"), _num_field(body, "speed_max_mps"))
        return 200, trip_to_obj(trip)

    def _get_trips(self):
        trips = self.service.list_trips(self._token())
        return 200, {"trips": [trip_to_obj(t) for t in trips]}

    def _get_trip(self, trip_id: str):
        return 200, trip_to_obj(self.service.get_trip(self._token(), trip_id))

    def _get_events(self, trip_id: str, query: dict):
        def single(name):
            values = query.get(name)
            return values[-1] if values else None

        after = None
        if single("after_ts") is not None or single("after_id") is not None:
            if single("after_ts") is None or single("after_id") is None:
                raise _BadRequest("paging needs both after_ts and after_id")
            try:
                after = (int(single("after_ts")), single("after_id"))
            except ValueError:
                raise _BadRequest("after_ts: expected integer milliseconds")
        try:
            limit = int(single("limit") or 100)
        except ValueError:
            raise _BadRequest("limit: expected integer")
        bounds = {}
        for name in ("start_ts", "end_ts"):
            if single(name) is not None:
                try:
                    bounds[name] = parse_ts(single(name))
                except ValueError as exc:
                    raise _BadRequest(f"{name}: {exc}")
        page, cursor = self.service.list_events(
            self._token(), trip_id, limit=limit, after=after,
            start_ts=bounds.get("start_ts"), end_ts=bounds.get("end_ts"))
        rows = [event_to_obj(event) | {"segment_id": segment_id}
                for event, segment_id in page]
        next_obj = None if cursor is None else \
            {"after_ts": cursor[0], "after_id": cursor[1]}
        return 200, {"events": rows, "next": next_obj}

    def _get_risk(self, segment_id: str):
        self.service.authenticate(self._token())
        return 200, asdict(self.service.segment_risk(segment_id))


def serve(service: TelemetryService, host: str = "127.0.0.1",
          port: int = 0) -> ThreadingHTTPServer:
    """Build the HTTP server; the caller runs serve_forever (or a thread)."""
    server = ThreadingHTTPServer((host, port), _Handler)
    server.service = service
    return server
