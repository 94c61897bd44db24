"""Application layer: persistence, service operations, HTTP endpoints."""

from .csvio import ImportReport, import_csv
from .httpd import serve
from .service import (
    AuthError,
    ConflictError,
    NotFoundError,
    SegmentRisk,
    ServiceError,
    SessionToken,
    TelemetryService,
    ValidationError,
    map_event_to_segment,
)
from .store import Store, TripRecord

__all__ = [
    "AuthError",
    "ConflictError",
    "ImportReport",
    "NotFoundError",
    "SegmentRisk",
    "ServiceError",
    "SessionToken",
    "Store",
    "TelemetryService",
    "TripRecord",
    "ValidationError",
    "import_csv",
    "map_event_to_segment",
    "serve",
]
