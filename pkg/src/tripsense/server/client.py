"""urllib client for the HTTP endpoints, plus the transport sender adapter."""

from __future__ import annotations

import json
import socket
import urllib.error
import urllib.parse
import urllib.request
from datetime import datetime

from ..events import TelemetryEvent, event_to_obj, format_ts
from ..outbox import BatchRejectedError, IngestResult, TransportError


class HttpError(Exception):
    """A non-2xx response; carries the status and the server's reason."""

    def __init__(self, status: int, message: str):
        super().__init__(f"HTTP {status}: {message}")
        self.status = status
        self.message = message


class HttpClient:
    """Thin JSON client; login stores the bearer token for later calls."""

    def __init__(self, base_url: str, timeout_s: float = 10.0):
        self.base_url = base_url.rstrip("/")
        self.timeout_s = timeout_s
        self.token: str | None = None

    def _request(self, method: str, path: str, body: dict | None = None,
                 query: dict | None = None) -> dict:
        url = self.base_url + path
        if query:
            url += "?" + urllib.parse.urlencode(query)
        data = None if body is None else json.dumps(body).encode()
        request = urllib.request.Request(url, data=data, method=method)
        request.add_header("Content-Type", "application/json")
        if self.token is not None:
            request.add_header("Authorization", f"Bearer {self.token}")
        try:
            with urllib.request.urlopen(request, timeout=self.timeout_s) as resp:
                return json.loads(resp.read())
        except urllib.error.HTTPError as exc:
            raw = exc.read()
            try:
                reason = json.loads(raw).get("error", raw.decode(errors="replace"))
            except (json.JSONDecodeError, AttributeError):
                reason = raw.decode(errors="replace") or exc.reason
            raise HttpError(exc.code, reason) from exc
        except (urllib.error.URLError, socket.timeout, ConnectionError) as exc:
            raise TransportError(f"{method} {url}: {exc}") from exc

    # -- endpoint wrappers ------------------------------------------------

    def login(self, driver_id: str, password: str) -> dict:
        result = self._request("POST", "/login",
                               {"driver_id": driver_id, "password": password})
        self.token = result["token"]
        return result

    def create_trip(self, vehicle_id: str, start_ts: datetime) -> str:
        result = self._request("POST", "/trips", {
            "vehicle_id": vehicle_id, "start_ts": format_ts(start_ts)})
        return result["trip_id"]

    def ingest(self, trip_id: str, events: list[TelemetryEvent]) -> IngestResult:
        result = self._request("POST", f"/trips/{trip_id}/events",
                               {"events": [event_to_obj(e) for e in events]})
        return IngestResult(frozenset(result["accepted"]),
                            frozenset(result["duplicates"]),
                            dict(result["rejected"]))

    def end_trip(self, trip_id: str, end_ts: datetime, distance_m: float,
                 speed_min_mps: float, speed_avg_mps: float,
                 speed_max_mps: float) -> dict:
        return self._request("POST", f"/trips/{trip_id}/end", {
            "end_ts": format_ts(end_ts), "distance_m": distance_m,
            "speed_min_mps": speed_min_mps, "speed_avg_mps": speed_avg_mps,
            "speed_max_mps": speed_max_mps})

    def list_trips(self) -> list[dict]:
        return self._request("GET", "/trips")["trips"]

    def get_trip(self, trip_id: str) -> dict:
        return self._request("GET", f"/trips/{trip_id}")

    def list_events(self, trip_id: str, limit: int | None = None,
                    after: dict | None = None, start_ts: datetime | None = None,
                    end_ts: datetime | None = None) -> tuple[list[dict], dict | None]:
        query: dict = {}
        if limit is not None:
            query["limit"] = limit
        if after is not None:
            query.update(after)
        if start_ts is not None:
            query["start_ts"] = format_ts(start_ts)
        if end_ts is not None:
            query["end_ts"] = format_ts(end_ts)
        result = self._request("GET", f"/trips/{trip_id}/events", query=query)
        return result["events"], result["next"]

    def all_events(self, trip_id: str, page_size: int = 200) -> list[dict]:
        """Every event of the trip, walking the (ts, event_id) cursor."""
        rows: list[dict] = []
        cursor = None
        while True:
            page, cursor = self.list_events(trip_id, limit=page_size, after=cursor)
            rows.extend(page)
            if cursor is None:
                return rows

    def segment_risk(self, segment_id: str) -> dict:
        return self._request("GET", f"/segments/{segment_id}/risk")


class HttpSender:
    """Adapts HttpClient to the transport contract: 4xx responses are
    permanent (`BatchRejectedError`), everything else remains retryable.
    Usable both as a flush sender and as a simulated-link endpoint."""

    def __init__(self, client: HttpClient):
        self.client = client

    def send(self, trip_id: str, events: list[TelemetryEvent]) -> IngestResult:
        try:
            return self.client.ingest(trip_id, events)
        except HttpError as exc:
            if 400 <= exc.status < 500:
                raise BatchRejectedError(exc.message) from exc
            raise TransportError(exc.message) from exc

    def ingest(self, trip_id: str, events: list[TelemetryEvent]) -> IngestResult:
        return self.send(trip_id, events)
