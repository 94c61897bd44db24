"""Domain types, validation, and the canonical JSON wire form."""

import json
import math
import uuid
from dataclasses import replace
from datetime import datetime, timezone

import pytest
from hypothesis import given
from hypothesis import strategies as st

from tripsense.events import (
    CRASH_SEVERITIES,
    DROWSY_THRESHOLD,
    EVENT_FIELD_NAMES,
    SCENARIO_LABELS,
    SCENARIO_ORDER,
    CrashRecord,
    Driver,
    GeoPoint,
    Road,
    RoadSegment,
    Scenario,
    TelemetryEvent,
    Trip,
    Vehicle,
    WireDecodeError,
    decode_event,
    encode_event,
    format_ts,
    ms_to_ts,
    parse_ts,
    ts_to_ms,
    utc_ms,
    validate_event,
)

finite = st.floats(allow_nan=False, allow_infinity=False, min_value=-1e6, max_value=1e6)
nonneg = st.floats(allow_nan=False, allow_infinity=False, min_value=0.0, max_value=1e6)
# millisecond-resolution UTC timestamps across several decades
timestamps = st.integers(min_value=0, max_value=4_102_444_800_000).map(ms_to_ts)


@st.composite
def valid_events(draw):
    lo, mid, hi = sorted(draw(st.tuples(nonneg, nonneg, nonneg)))
    score = draw(st.floats(min_value=0.0, max_value=1.0, allow_nan=False))
    return TelemetryEvent(
        event_id=uuid.UUID(int=draw(st.integers(min_value=0, max_value=(1 << 128) - 1))),
        trip_id=draw(st.text(min_size=1, max_size=20).filter(str.strip)),
        ts=draw(timestamps),
        position=GeoPoint(draw(st.floats(min_value=-90, max_value=90, allow_nan=False)),
                          draw(st.floats(min_value=-180, max_value=180, allow_nan=False))),
        gps_accuracy_m=draw(nonneg),
        speed_mps=draw(nonneg),
        heading_deg=draw(st.floats(min_value=0.0, max_value=359.999, allow_nan=False)),
        speed_min_mps=lo,
        speed_avg_mps=mid,
        speed_max_mps=hi,
        accel_mps2=draw(finite),
        roll_dps=draw(finite),
        pitch_dps=draw(finite),
        yaw_dps=draw(finite),
        drowsiness_score=score,
        drowsy=score >= DROWSY_THRESHOLD,
    )


def make_event(**overrides) -> TelemetryEvent:
    base = TelemetryEvent(
        event_id=uuid.UUID("12345678-1234-5678-1234-567812345678"),
        trip_id="trip-000001",
        ts=utc_ms(2026, 3, 14, 9, 26, 53, 589),
        position=GeoPoint(25.2854, 51.5310),
        gps_accuracy_m=4.5,
        speed_mps=13.2,
        heading_deg=87.0,
        speed_min_mps=11.0,
        speed_avg_mps=12.5,
        speed_max_mps=13.9,
        accel_mps2=0.3,
        roll_dps=1.2,
        pitch_dps=-0.4,
        yaw_dps=2.1,
        drowsiness_score=0.12,
        drowsy=False,
    )
    return replace(base, **overrides)


class TestTimestamps:
    def test_format_is_iso_utc_z_milliseconds(self):
        assert format_ts(utc_ms(2026, 3, 14, 9, 26, 53, 589)) == "2026-03-14T09:26:53.589Z"

    def test_parse_round_trip(self):
        text = "2026-03-14T09:26:53.589Z"
        assert format_ts(parse_ts(text)) == text

    def test_parse_requires_z(self):
        with pytest.raises(ValueError):
            parse_ts("2026-03-14T09:26:53.589+00:00")

    @given(st.integers(min_value=0, max_value=4_102_444_800_000))
    def test_ms_round_trip_exact(self, ms):
        assert ts_to_ms(ms_to_ts(ms)) == ms

    def test_epoch(self):
        assert ts_to_ms(datetime(1970, 1, 1, tzinfo=timezone.utc)) == 0


class TestValidation:
    def test_well_formed_event_is_clean(self):
        assert validate_event(make_event()) == []

    def test_speed_ordering_violation(self):
        bad = make_event(speed_min_mps=5.0, speed_avg_mps=4.0, speed_max_mps=3.0)
        assert any("ordering" in v for v in validate_event(bad))

    def test_heading_360_is_out_of_range(self):
        assert any("heading_deg" in v for v in validate_event(make_event(heading_deg=360.0)))

    def test_heading_zero_ok(self):
        assert validate_event(make_event(heading_deg=0.0)) == []

    def test_negative_speed(self):
        assert any("speed_mps" in v for v in validate_event(make_event(speed_mps=-1.0)))

    def test_score_out_of_range(self):
        assert any("drowsiness_score" in v
                   for v in validate_event(make_event(drowsiness_score=1.5)))

    def test_drowsy_flag_must_match_threshold(self):
        bad = make_event(drowsiness_score=0.9, drowsy=False)
        assert any("drowsy" in v for v in validate_event(bad))
        ok = make_event(drowsiness_score=0.9, drowsy=True)
        assert validate_event(ok) == []

    def test_threshold_boundary_counts_as_drowsy(self):
        assert validate_event(make_event(drowsiness_score=DROWSY_THRESHOLD, drowsy=True)) == []

    def test_nan_speed_reported(self):
        assert any("finite" in v for v in validate_event(make_event(speed_mps=math.nan)))

    def test_naive_timestamp_reported(self):
        bad = make_event(ts=datetime(2026, 3, 14, 9, 0, 0))
        assert any("ts" in v for v in validate_event(bad))

    def test_sub_millisecond_timestamp_reported(self):
        bad = make_event(ts=datetime(2026, 3, 14, 9, 0, 0, 123456, tzinfo=timezone.utc))
        assert any("ts" in v for v in validate_event(bad))

    @given(valid_events())
    def test_generated_events_are_valid(self, event):
        assert validate_event(event) == []


class TestWireForm:
    @given(valid_events())
    def test_round_trip_identity(self, event):
        assert decode_event(encode_event(event)) == event

    def test_wire_field_names_are_canonical(self):
        obj = json.loads(encode_event(make_event()))
        assert set(obj) == set(EVENT_FIELD_NAMES)
        assert set(obj["position"]) == {"lat", "lon"}

    def test_timestamp_is_iso_z(self):
        obj = json.loads(encode_event(make_event()))
        assert obj["ts"] == "2026-03-14T09:26:53.589Z"

    def test_unknown_fields_ignored(self):
        obj = json.loads(encode_event(make_event()))
        obj["foo"] = "bar"
        obj["position"]["extra"] = 1
        assert decode_event(json.dumps(obj)) == make_event()

    @pytest.mark.parametrize("missing", ["event_id", "trip_id", "ts", "position",
                                         "speed_mps", "drowsy"])
    def test_missing_field_names_it(self, missing):
        obj = json.loads(encode_event(make_event()))
        del obj[missing]
        with pytest.raises(WireDecodeError) as err:
            decode_event(json.dumps(obj))
        assert err.value.field_name == missing

    def test_missing_nested_lat_named(self):
        obj = json.loads(encode_event(make_event()))
        del obj["position"]["lat"]
        with pytest.raises(WireDecodeError) as err:
            decode_event(json.dumps(obj))
        assert "lat" in err.value.field_name

    @pytest.mark.parametrize("field,bad", [
        ("speed_mps", "fast"), ("speed_mps", True), ("drowsy", 1),
        ("trip_id", 7), ("ts", 123), ("event_id", "not-a-uuid"),
        ("position", [1, 2]),
    ])
    def test_type_mismatch_names_field(self, field, bad):
        obj = json.loads(encode_event(make_event()))
        obj[field] = bad
        with pytest.raises(WireDecodeError) as err:
            decode_event(json.dumps(obj))
        assert field in err.value.field_name

    def test_malformed_text(self):
        with pytest.raises(WireDecodeError):
            decode_event("{not json")

    def test_non_object_payload(self):
        with pytest.raises(WireDecodeError):
            decode_event("[1, 2, 3]")

    def test_bytes_accepted(self):
        assert decode_event(encode_event(make_event()).encode()) == make_event()

    def test_nan_rejected_on_encode(self):
        with pytest.raises(ValueError):
            encode_event(make_event(speed_mps=math.nan))


class TestDomainTypes:
    def test_trip_end_before_start_rejected(self):
        with pytest.raises(ValueError):
            Trip(trip_id="t", driver_id="d", vehicle_id="v",
                 start_ts=utc_ms(2026, 1, 2), end_ts=utc_ms(2026, 1, 1),
                 distance_m=0.0, speed_min_mps=0.0, speed_avg_mps=0.0, speed_max_mps=0.0)

    def test_trip_open_allows_no_end(self):
        t = Trip(trip_id="t", driver_id="d", vehicle_id="v",
                 start_ts=utc_ms(2026, 1, 1), end_ts=None,
                 distance_m=0.0, speed_min_mps=0.0, speed_avg_mps=0.0, speed_max_mps=0.0)
        assert t.end_ts is None

    def test_driver_age_positive(self):
        with pytest.raises(ValueError):
            Driver(driver_id="d", age=0, gender="other")

    def test_driver_gender_enumerated(self):
        with pytest.raises(ValueError):
            Driver(driver_id="d", age=30, gender="unknown")

    def test_segment_needs_two_points(self):
        with pytest.raises(ValueError):
            RoadSegment(segment_id="s", road_id="r", polyline=[GeoPoint(0, 0)], attributes={})

    def test_segment_points_pairwise_distinct(self):
        with pytest.raises(ValueError):
            RoadSegment(segment_id="s", road_id="r",
                        polyline=[GeoPoint(0, 0), GeoPoint(0, 1), GeoPoint(0, 0)],
                        attributes={})

    def test_crash_severity_enumerated(self):
        for sev in CRASH_SEVERITIES:
            CrashRecord(crash_id="c", segment_id="s", ts=utc_ms(2026, 1, 1), severity=sev)
        with pytest.raises(ValueError):
            CrashRecord(crash_id="c", segment_id="s", ts=utc_ms(2026, 1, 1), severity="bad")

    def test_vehicle_fields(self):
        v = Vehicle(vehicle_id="v", model="hatch", in_service_date="2024-05-01")
        assert v.model == "hatch"

    def test_road(self):
        assert Road(road_id="r", name="Corniche").name == "Corniche"

    def test_scenario_order_and_labels(self):
        assert len(SCENARIO_ORDER) == 5
        assert set(SCENARIO_LABELS) == set(SCENARIO_ORDER)
        assert Scenario.SUNGLASSES in SCENARIO_ORDER
