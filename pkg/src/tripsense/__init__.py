"""Vehicle telemetry pipeline: device agents, store-and-forward transport,
an ingestion service with trip/segment analytics, and a from-scratch
drowsiness classifier."""

__version__ = "0.1.0"
