"""Simulated driver: 1 Hz sensor samples aggregated into 15-second events."""

from __future__ import annotations

import math
import uuid
from dataclasses import dataclass
from datetime import datetime, timedelta

import numpy as np

from .events import (
    DROWSY_THRESHOLD,
    Scenario,
    TelemetryEvent,
    Trip,
    validate_event,
)
from .frames import DEFAULT_SIDE, synth_frame
from .geo import BearingUndefinedError, GeoPoint, haversine_m, initial_bearing_deg
from .util import derive_seed

WINDOW_S = 15
SAMPLE_HZ = 1

# two-state drowsiness process: onset per profile, recovery averaging ~30 s
RECOVERY_PROB_PER_S = 1.0 / 30.0
# stops last 5..15 s once entered
STOP_MIN_S, STOP_MAX_S = 5, 15
GPS_ACCURACY_MIN_M, GPS_ACCURACY_MAX_M = 2.0, 8.0
ROTATION_NOISE_DPS = 1.5


@dataclass(frozen=True, slots=True)
class DrivingProfile:
    """How a simulated driver behaves; probabilities are per minute."""

    cruise_speed_mps: float
    speed_jitter_mps: float = 0.0
    stop_probability: float = 0.0
    drowsy_onset_probability: float = 0.0
    scenario: Scenario = Scenario.NO_GLASSES

    def __post_init__(self):
        if not self.cruise_speed_mps > 0.0:
            raise ValueError(f"cruise_speed_mps must be > 0, got {self.cruise_speed_mps}")
        if self.speed_jitter_mps < 0.0:
            raise ValueError(f"speed_jitter_mps must be >= 0, got {self.speed_jitter_mps}")
        for name in ("stop_probability", "drowsy_onset_probability"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {p}")


@dataclass(frozen=True, slots=True)
class SensorSample:
    """One second of sensor readings."""

    t: int
    position: GeoPoint
    speed_mps: float
    accel_mps2: float
    roll_dps: float
    pitch_dps: float
    yaw_dps: float
    drowsy_truth: bool
    frame: np.ndarray


class _RoutePath:
    """Arc-length positions along a lat/lon polyline, clamped to its ends."""

    def __init__(self, route: list[GeoPoint]):
        if len(route) < 2:
            raise ValueError("route needs at least 2 points")
        self.points = list(route)
        self.cum = [0.0]
        for i in range(len(route) - 1):
            self.cum.append(self.cum[-1] + haversine_m(route[i], route[i + 1]))
        self.total_m = self.cum[-1]

    def point_at(self, arc_m: float) -> GeoPoint:
        if arc_m <= 0.0:
            return self.points[0]
        if arc_m >= self.total_m:
            return self.points[-1]
        # segments are short relative to Earth, so linear lat/lon blending holds
        i = 0
        while self.cum[i + 1] < arc_m:
            i += 1
        seg = self.cum[i + 1] - self.cum[i]
        f = (arc_m - self.cum[i]) / seg if seg > 0.0 else 0.0
        a, b = self.points[i], self.points[i + 1]
        return GeoPoint(a.lat + f * (b.lat - a.lat), a.lon + f * (b.lon - a.lon))


def simulate_trip(profile: DrivingProfile, route: list[GeoPoint], duration_s: int,
                  seed: int, frame_side: int = DEFAULT_SIDE) -> list[SensorSample]:
    """One SensorSample per second; identical inputs give identical output.

    The vehicle follows the route at the profile's cruise speed with seeded
    jitter and stop episodes, parking at the route's end if it gets there.
    Drowsiness switches on with the profile's onset probability and recovers
    after half a minute on average.
    """
    if duration_s < 0:
        raise ValueError(f"duration_s must be >= 0, got {duration_s}")
    path = _RoutePath(route)
    rng = np.random.default_rng(derive_seed(seed, "drive"))
    samples: list[SensorSample] = []
    arc = 0.0
    drowsy = False
    stopped_for = 0
    prev_speed = 0.0
    for t in range(duration_s):
        if stopped_for > 0:
            stopped_for -= 1
            target = 0.0
        else:
            if profile.stop_probability > 0.0 and \
                    rng.random() < profile.stop_probability / 60.0:
                stopped_for = int(rng.integers(STOP_MIN_S, STOP_MAX_S + 1))
                target = 0.0
            else:
                target = profile.cruise_speed_mps
                if profile.speed_jitter_mps > 0.0:
                    target = max(0.0, target + profile.speed_jitter_mps *
                                 float(rng.standard_normal()))
        step = target * (1.0 / SAMPLE_HZ)
        if arc + step <= path.total_m:
            next_arc = arc + step
            speed = target
        else:  # parking at the route's end truncates the final step
            next_arc = path.total_m
            speed = (path.total_m - arc) * SAMPLE_HZ

        if drowsy:
            if rng.random() < RECOVERY_PROB_PER_S:
                drowsy = False
        elif profile.drowsy_onset_probability > 0.0 and \
                rng.random() < profile.drowsy_onset_probability / 60.0:
            drowsy = True

        frame = synth_frame(drowsy, profile.scenario,
                            derive_seed(seed, "frame", t), frame_side)
        samples.append(SensorSample(
            t=t,
            position=path.point_at(arc),
            speed_mps=speed,
            accel_mps2=speed - prev_speed,
            roll_dps=ROTATION_NOISE_DPS * float(rng.standard_normal()),
            pitch_dps=ROTATION_NOISE_DPS * float(rng.standard_normal()),
            yaw_dps=ROTATION_NOISE_DPS * float(rng.standard_normal()),
            drowsy_truth=drowsy,
            frame=frame,
        ))
        arc = next_arc
        prev_speed = speed
    return samples


def aggregate_window(samples: list[SensorSample], trip_id: str,
                     window_end_ts: datetime, classifier,
                     rng: np.random.Generator) -> TelemetryEvent:
    """Fold one window of samples into a TelemetryEvent.

    Speed stats cover the whole window; instantaneous speed, position, and
    rotation come from the last sample; heading is the bearing between the
    last two distinct positions (0 when stationary); the drowsiness score is
    the mean classifier score over the window's frames.
    """
    if not samples:
        raise ValueError("cannot aggregate an empty window")
    speeds = [s.speed_mps for s in samples]
    last = samples[-1]

    heading = 0.0
    for prev in reversed(samples[:-1]):
        if prev.position != last.position:
            try:
                heading = initial_bearing_deg(prev.position, last.position)
            except BearingUndefinedError:  # pragma: no cover - positions differ
                heading = 0.0
            break

    frames = np.stack([s.frame for s in samples])
    score = float(np.clip(classifier.score_batch(frames).mean(), 0.0, 1.0))

    return TelemetryEvent(
        event_id=uuid.UUID(int=int(rng.integers(0, 2 ** 63)) << 64
                           | int(rng.integers(0, 2 ** 63)), version=4),
        trip_id=trip_id,
        ts=window_end_ts,
        position=last.position,
        gps_accuracy_m=float(rng.uniform(GPS_ACCURACY_MIN_M, GPS_ACCURACY_MAX_M)),
        speed_mps=last.speed_mps,
        heading_deg=heading,
        speed_min_mps=min(speeds),
        speed_avg_mps=sum(speeds) / len(speeds),
        speed_max_mps=max(speeds),
        accel_mps2=last.accel_mps2,
        roll_dps=last.roll_dps,
        pitch_dps=last.pitch_dps,
        yaw_dps=last.yaw_dps,
        drowsiness_score=score,
        drowsy=score >= DROWSY_THRESHOLD,
    )


def trip_distance_m(samples: list[SensorSample]) -> float:
    """Cumulative great-circle distance over consecutive 1 Hz positions."""
    return sum(haversine_m(samples[i].position, samples[i + 1].position)
               for i in range(len(samples) - 1))


def run_agent(profile: DrivingProfile, route: list[GeoPoint], duration_s: int,
              seed: int, outbox, trip_id: str, driver_id: str, vehicle_id: str,
              start_ts: datetime, classifier) -> Trip:
    """Simulate a whole trip, enqueueing every 15-second event into the outbox.

    The partial final window is flushed as a short event, so event count is
    ceil(samples / 15). The returned Trip carries the 1 Hz cumulative
    distance and trip-wide speed stats.
    """
    samples = simulate_trip(profile, route, duration_s, seed,
                            frame_side=classifier.input_side)
    rng = np.random.default_rng(derive_seed(seed, "window"))
    for start in range(0, len(samples), WINDOW_S):
        window = samples[start:start + WINDOW_S]
        end_ts = start_ts + timedelta(seconds=window[-1].t + 1)
        event = aggregate_window(window, trip_id, end_ts, classifier, rng)
        violations = validate_event(event)
        if violations:  # pragma: no cover - aggregation keeps events valid
            raise ValueError(f"aggregated event invalid: {violations}")
        outbox.enqueue(event)

    speeds = [s.speed_mps for s in samples]
    end_ts = start_ts + timedelta(seconds=len(samples))
    return Trip(
        trip_id=trip_id,
        driver_id=driver_id,
        vehicle_id=vehicle_id,
        start_ts=start_ts,
        end_ts=end_ts,
        distance_m=trip_distance_m(samples),
        speed_min_mps=min(speeds, default=0.0),
        speed_avg_mps=sum(speeds) / len(speeds) if speeds else 0.0,
        speed_max_mps=max(speeds, default=0.0),
    )
