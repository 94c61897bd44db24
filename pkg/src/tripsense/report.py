"""Deterministic text reports, delimited event export, and figure rendering.

Text layouts are frozen: the same data always renders byte-identically,
so goldens and repeated invocations can be compared directly.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .events import (  # noqa: E402
    SCENARIO_ORDER,
    Scenario,
    TelemetryEvent,
    format_ts,
)
from .nn.classify import AccuracyTable  # noqa: E402
from .nn.train import TrainingHistory  # noqa: E402
from .server.store import TripRecord  # noqa: E402

SCENARIO_LABELS = {
    Scenario.GLASSES: "With glasses",
    Scenario.NIGHT_NO_GLASSES: "Night without glasses",
    Scenario.NIGHT_GLASSES: "Night with glasses",
    Scenario.NO_GLASSES: "Without glasses",
    Scenario.SUNGLASSES: "With sunglasses",
}

EventRow = tuple[TelemetryEvent, str | None]


def render_accuracy_table(table: AccuracyTable) -> str:
    """Per-scenario accuracy as percentages, one row per scenario plus All."""
    rows = [(SCENARIO_LABELS[scenario], f"{table.rows[scenario] * 100.0:.3f}")
            for scenario in SCENARIO_ORDER]
    rows.append(("All", f"{table.overall * 100.0:.3f}"))
    label_w = max(len("Category"), max(len(label) for label, _ in rows))
    value_w = max(len("Accuracy (%)"), max(len(value) for _, value in rows))
    lines = [f"{'Category':<{label_w}}  {'Accuracy (%)':>{value_w}}"]
    lines.extend(f"{label:<{label_w}}  {value:>{value_w}}"
                 for label, value in rows)
    return "\n".join(lines) + "\n"


def _aligned(headers: tuple[str, ...], rows: list[tuple[str, ...]],
             right: set[int]) -> list[str]:
    widths = [max(len(headers[i]), max((len(r[i]) for r in rows), default=0))
              for i in range(len(headers))]

    def fmt(cells):
        parts = [f"{c:>{widths[i]}}" if i in right else f"{c:<{widths[i]}}"
                 for i, c in enumerate(cells)]
        return "  ".join(parts).rstrip()

    return [fmt(headers)] + [fmt(r) for r in rows]


def render_trip_report(trip: TripRecord, rows: list[EventRow]) -> str:
    """One row per event plus a summary footer with both distance figures."""
    def meters(value):
        return "n/a" if value is None else f"{value:.1f} m"

    header = [f"Trip {trip.trip_id}",
              f"  driver:  {trip.driver_id}",
              f"  vehicle: {trip.vehicle_id}",
              f"  start:   {format_ts(trip.start_ts)}"]
    if trip.end_ts is None:
        header.append("  end:     (open)")
    else:
        duration = (trip.end_ts - trip.start_ts).total_seconds()
        header.append(f"  end:     {format_ts(trip.end_ts)}")
        header.append(f"  duration: {duration:.0f} s")

    cells = [(format_ts(e.ts), f"{e.position.lat:.6f}", f"{e.position.lon:.6f}",
              f"{e.speed_mps:.2f}", f"{e.heading_deg:.2f}", f"{e.accel_mps2:.2f}",
              f"{e.drowsiness_score:.3f}", "yes" if e.drowsy else "no",
              segment_id if segment_id is not None else "-")
             for e, segment_id in rows]
    table = _aligned(
        ("ts", "lat", "lon", "speed_mps", "heading_deg", "accel_mps2",
         "score", "drowsy", "segment"),
        cells, right={1, 2, 3, 4, 5, 6})

    drowsy_count = sum(1 for e, _ in rows if e.drowsy)
    footer = [f"events: {len(rows)}  drowsy events: {drowsy_count}",
              f"distance: client {meters(trip.client_distance_m)}, "
              f"server {meters(trip.server_distance_m)}"]
    if trip.discrepancy_ratio is not None:
        footer[-1] += f" (discrepancy {trip.discrepancy_ratio * 100.0:.2f}%)"
    if trip.speed_min_mps is not None:
        footer.append(f"speed (m/s): min {trip.speed_min_mps:.2f} "
                      f"avg {trip.speed_avg_mps:.2f} "
                      f"max {trip.speed_max_mps:.2f}")
    return "\n".join(header + [""] + table + [""] + footer) + "\n"


CSV_COLUMNS = (
    "event_id", "trip_id", "ts", "lat", "lon", "gps_accuracy_m", "speed_mps",
    "heading_deg", "speed_min_mps", "speed_avg_mps", "speed_max_mps",
    "accel_mps2", "roll_dps", "pitch_dps", "yaw_dps", "drowsiness_score",
    "drowsy", "segment_id",
)


def write_events_csv(path: str | Path, rows: list[EventRow]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for event, segment_id in rows:
            writer.writerow([
                str(event.event_id), event.trip_id, format_ts(event.ts),
                event.position.lat, event.position.lon, event.gps_accuracy_m,
                event.speed_mps, event.heading_deg, event.speed_min_mps,
                event.speed_avg_mps, event.speed_max_mps, event.accel_mps2,
                event.roll_dps, event.pitch_dps, event.yaw_dps,
                event.drowsiness_score, "true" if event.drowsy else "false",
                segment_id if segment_id is not None else ""])


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return path


def save_speed_profile(path: str | Path, rows: list[EventRow]) -> Path:
    events = [e for e, _ in rows]
    seconds = [(e.ts - events[0].ts).total_seconds() for e in events] \
        if events else []
    fig, ax = plt.subplots(figsize=(8, 3))
    ax.plot(seconds, [e.speed_avg_mps for e in events], label="avg", color="C0")
    ax.fill_between(seconds, [e.speed_min_mps for e in events],
                    [e.speed_max_mps for e in events], alpha=0.25, color="C0",
                    label="min..max")
    ax.set_xlabel("trip time (s)")
    ax.set_ylabel("speed (m/s)")
    ax.legend(loc="best")
    ax.set_title("Speed profile")
    return _save(fig, path)


def save_drowsiness_timeline(path: str | Path, rows: list[EventRow]) -> Path:
    events = [e for e, _ in rows]
    seconds = [(e.ts - events[0].ts).total_seconds() for e in events] \
        if events else []
    fig, ax = plt.subplots(figsize=(8, 3))
    ax.plot(seconds, [e.drowsiness_score for e in events], marker="o",
            color="C1")
    ax.axhline(0.5, linestyle="--", color="gray", linewidth=1,
               label="decision threshold")
    ax.set_xlabel("trip time (s)")
    ax.set_ylabel("drowsiness score")
    ax.set_ylim(-0.05, 1.05)
    ax.legend(loc="best")
    ax.set_title("Drowsiness timeline")
    return _save(fig, path)


def save_track(path: str | Path, rows: list[EventRow]) -> Path:
    events = [e for e, _ in rows]
    lons = [e.position.lon for e in events]
    lats = [e.position.lat for e in events]
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.plot(lons, lats, color="C0", linewidth=1)
    alert = [(x, y) for x, y, e in zip(lons, lats, events) if not e.drowsy]
    drowsy = [(x, y) for x, y, e in zip(lons, lats, events) if e.drowsy]
    if alert:
        ax.scatter(*zip(*alert), s=12, color="C0", label="alert")
    if drowsy:
        ax.scatter(*zip(*drowsy), s=20, color="C3", label="drowsy")
    ax.set_xlabel("longitude")
    ax.set_ylabel("latitude")
    if alert or drowsy:
        ax.legend(loc="best")
    ax.set_title("Trip track")
    return _save(fig, path)


def save_loss_curve(path: str | Path, history: TrainingHistory) -> Path:
    fig, ax = plt.subplots(figsize=(6, 3))
    epochs = range(1, len(history.epoch_losses) + 1)
    ax.plot(list(epochs), history.epoch_losses, marker="o", color="C0")
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean training loss")
    ax.set_title("Training loss")
    return _save(fig, path)


def save_accuracy_chart(path: str | Path, table: AccuracyTable) -> Path:
    labels = [SCENARIO_LABELS[s] for s in SCENARIO_ORDER] + ["All"]
    values = [table.rows[s] * 100.0 for s in SCENARIO_ORDER] + \
        [table.overall * 100.0]
    fig, ax = plt.subplots(figsize=(7, 3.5))
    bars = ax.bar(range(len(values)), values,
                  color=["C0"] * (len(values) - 1) + ["C2"])
    ax.bar_label(bars, fmt="%.1f")
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels, rotation=20, ha="right")
    ax.set_ylabel("accuracy (%)")
    ax.set_ylim(0, 105)
    ax.set_title("Accuracy per scenario")
    return _save(fig, path)


def render_trip_figures(out_dir: str | Path, rows: list[EventRow]) -> list[Path]:
    """The three per-trip figures, written into out_dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return [save_speed_profile(out / "speed_profile.png", rows),
            save_drowsiness_timeline(out / "drowsiness.png", rows),
            save_track(out / "track.png", rows)]
