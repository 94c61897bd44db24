"""End-to-end delivery gates, one test per criterion.

Each test states a single measurable promise about the system and checks it
at the stated tolerance. Run with -v to get one pass/fail line per gate.
Thresholds and seeds are frozen here on purpose; loosening one is a product
decision, not a test fix.
"""

import json
import math
import threading
import time
import uuid
from datetime import date, timedelta

import numpy as np
import pytest

from tripsense.agent import (
    WINDOW_S,
    DrivingProfile,
    SensorSample,
    aggregate_window,
    run_agent,
)
from tripsense.events import (
    CrashRecord,
    Driver,
    Road,
    RoadSegment,
    Scenario,
    TelemetryEvent,
    Vehicle,
    decode_event,
    encode_event,
    ms_to_ts,
    ts_to_ms,
    utc_ms,
)
from tripsense.fleet import FleetRun, bootstrap_fleet, run_fleet
from tripsense.geo import GeoPoint, destination_point, haversine_m, point_to_polyline_m
from tripsense.geojson import events_from_feature_collection, trip_feature_collection
from tripsense.netsim import LinkConfig, SimClock
from tripsense.nn import (
    AccuracyTable,
    CnnClassifier,
    Conv2D,
    Dense,
    EyeRegionBaseline,
    Flatten,
    LeakyReLU,
    MaxPool2,
    Model,
    ModelConfigError,
    SoftmaxOutput,
    TrainConfig,
    build_scenario_dataset,
    drowsiness_net,
    evaluate,
    merge_groups,
    split_groups,
    train,
)
from tripsense.nn.train import loss_and_gradients
from tripsense.outbox import Outbox, RetryPolicy, TransportError, drain, flush, recover
from tripsense.report import render_accuracy_table
from tripsense.server import SegmentRisk, Store, TelemetryService, serve
from tripsense.server.service import SEGMENT_MATCH_M

START = utc_ms(2026, 5, 1, 8, 0, 0)


def make_event(i, trip_id="trip-000001", lat=25.0, lon=51.0):
    return TelemetryEvent(
        event_id=uuid.UUID(int=i + 1, version=4), trip_id=trip_id,
        ts=ms_to_ts(ts_to_ms(START) + 15_000 * i),
        position=GeoPoint(lat, lon), gps_accuracy_m=3.0,
        speed_mps=10.0, heading_deg=0.0, speed_min_mps=9.0, speed_avg_mps=10.0,
        speed_max_mps=11.0, accel_mps2=0.1, roll_dps=0.0, pitch_dps=0.0,
        yaw_dps=0.0, drowsiness_score=0.2, drowsy=False,
    )


def seeded_service():
    service = TelemetryService(Store())
    service.register_driver(Driver("d-1", 34, "female"), "hunter2")
    service.store.add_vehicle(Vehicle("v-1", "sedan", date(2024, 1, 1)))
    token = service.login("d-1", "hunter2").token
    return service, token


class ServiceSender:
    """In-process transport: hands batches straight to the service."""

    def __init__(self, service, token):
        self.service = service
        self.token = token

    def send(self, trip_id, events):
        return self.service.ingest_events(self.token, trip_id, events)


class DropAckSender:
    """Delivers every batch but loses the acknowledgement with probability p,
    so the caller retries batches the server already stored."""

    def __init__(self, inner, rng, p):
        self.inner = inner
        self.rng = rng
        self.p = p

    def send(self, trip_id, events):
        result = self.inner.send(trip_id, events)
        if self.rng.random() < self.p:
            raise TransportError("acknowledgement lost")
        return result


# -- 1: trained classifier accuracy ------------------------------------------

@pytest.mark.xfail(
    strict=True, raises=ModelConfigError,
    reason="a 16-pixel input collapses below the third convolution block; "
           "the smallest side the stack accepts is 22")
def test_criterion_01_reference_geometry_trains():
    """The reference 16x16 geometry cannot host the three-block stack."""
    model = drowsiness_net(16)
    model.init_params(seed=1234)


def test_criterion_01_trained_classifier_accuracy():
    """Trained on the five-scenario synthetic set (2,000 frames each, frozen
    seed), overall accuracy reaches 90% with sunglasses strictly lowest,
    inside a 10 minute budget. Runs at side 24, the smallest geometry near
    the reference that the stack accepts with margin."""
    t0 = time.perf_counter()
    groups = build_scenario_dataset(side=24, per_scenario=2000, seed=1234)
    train_groups, eval_groups = split_groups(groups, eval_fraction=0.2, seed=1234)
    frames, labels = merge_groups(train_groups)

    model = drowsiness_net(24)
    model.init_params(seed=1234)
    config = TrainConfig(learning_rate=0.1, epochs=10, batch_size=64, seed=1234)
    history = train(model, frames[:, None, :, :], labels, config)
    table = evaluate(CnnClassifier(model), eval_groups)
    elapsed = time.perf_counter() - t0

    assert elapsed <= 600.0, f"training budget blown: {elapsed:.0f}s"
    assert history.epoch_losses[-1] < history.epoch_losses[0]
    assert table.overall >= 0.90, f"overall accuracy {table.overall:.3f} < 0.90"
    others = min(acc for scenario, acc in table.rows.items()
                 if scenario is not Scenario.SUNGLASSES)
    assert table.rows[Scenario.SUNGLASSES] < others, (
        f"sunglasses {table.rows[Scenario.SUNGLASSES]:.3f} not strictly "
        f"below the best of the rest {others:.3f}")


# -- 2: shape chain ------------------------------------------------------------

def test_criterion_02_shape_chain_exact():
    """At side 128 the three blocks step 126/63/61/30/28/14 and flatten to
    exactly 25,088 features."""
    model = drowsiness_net(128, 2)
    sides = [shape[1] for shape in model.shapes if len(shape) == 3 and shape[1] != 128]
    # each block: conv shrinks by 2, LeakyReLU/Dropout keep shape, pool halves
    assert sides == [126, 126, 63, 63, 61, 61, 30, 30, 28, 28, 14, 14]
    flat = [shape for shape in model.shapes if len(shape) == 1]
    assert flat[0] == (25_088,)
    assert model.output_shape == (2,)


# -- 3: gradient check ---------------------------------------------------------

def test_criterion_03_gradient_check():
    """Analytic gradients agree with central finite differences to a relative
    error under 1e-4 on at least 200 randomly chosen parameters, within a
    minute."""
    t0 = time.perf_counter()
    model = Model((1, 10, 10), [
        Conv2D(1, 4), LeakyReLU(0.1), MaxPool2(), Flatten(),
        Dense(4 * 4 * 4, 16), LeakyReLU(0.1), SoftmaxOutput(16, 2),
    ])
    model.init_params(seed=11)
    rng = np.random.default_rng(11)
    x = rng.standard_normal((4, 1, 10, 10))
    y = rng.integers(0, 2, 4)

    _, grads = loss_and_gradients(model, x, y, train=False)
    grads = dict(grads)
    h = 1e-4
    checked = 0
    worst = 0.0
    for name, param in model.parameters():
        flat = param.ravel()
        gflat = grads[name].ravel()
        picks = rng.choice(flat.size, size=min(150, flat.size), replace=False)
        for i in picks:
            orig = flat[i]
            flat[i] = orig + h
            up, _ = loss_and_gradients(model, x, y, train=False)
            flat[i] = orig - h
            down, _ = loss_and_gradients(model, x, y, train=False)
            flat[i] = orig
            numeric = (up - down) / (2 * h)
            scale = max(abs(numeric), abs(gflat[i]), 1e-12)
            worst = max(worst, abs(numeric - gflat[i]) / scale)
            checked += 1
    elapsed = time.perf_counter() - t0

    assert checked >= 200
    assert worst < 1e-4, f"worst relative error {worst:.2e}"
    assert elapsed <= 60.0, f"gradient check budget blown: {elapsed:.0f}s"


# -- 4: softmax normalization --------------------------------------------------

def test_criterion_04_softmax_rows_normalized():
    """Across 10,000 random forward passes every probability row sums to one
    within 1e-9."""
    worst = 0.0
    for chunk_seed in range(20):
        model = Model((1, 12, 12), [
            Conv2D(1, 4), LeakyReLU(0.1), MaxPool2(), Flatten(),
            Dense(4 * 5 * 5, 16), LeakyReLU(0.1), SoftmaxOutput(16, 3),
        ])
        model.init_params(seed=chunk_seed)
        rng = np.random.default_rng(1000 + chunk_seed)
        x = rng.standard_normal((500, 1, 12, 12)) * 10.0
        probs = model.forward(x)
        worst = max(worst, float(np.abs(probs.sum(axis=1) - 1.0).max()))
    assert worst < 1e-9, f"worst |sum - 1| = {worst:.2e}"


# -- 5: delivery under adversity -----------------------------------------------

def _adversity_run(seed):
    service = TelemetryService(Store())
    server = serve(service)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        host, port = server.server_address
        bootstrap_fleet(service, 10)
        link = LinkConfig(loss_probability=0.3,
                          outages_s=((100.0, 160.0), (400.0, 460.0)))
        run = FleetRun(driver_count=10, duration_s=600, seed=seed, link=link)
        return run_fleet(f"http://{host}:{port}", run, _adversity_run.dir)
    finally:
        server.shutdown()
        thread.join(timeout=5)


def test_criterion_05_delivery_under_adversity(tmp_path):
    """Ten agents drive ten minutes over a link with 30% loss per direction
    and two 60 s outages: every generated event lands exactly once, nothing
    is poisoned, and the outcome is identical when replayed with the same
    seed. Two minute budget for the adversarial run."""
    _adversity_run.dir = tmp_path / "a"
    t0 = time.perf_counter()
    first = _adversity_run(seed=42)
    elapsed = time.perf_counter() - t0

    assert first.generated == 10 * 40
    assert first.server_rows == first.generated
    assert first.poisoned == 0
    assert first.rejected == 0
    assert first.lost == 0
    assert first.transport_failures > 0  # the link really was hostile
    assert elapsed <= 120.0, f"adversity budget blown: {elapsed:.0f}s"

    _adversity_run.dir = tmp_path / "b"
    second = _adversity_run(seed=42)
    key = ("generated", "delivered", "duplicates", "rejected", "poisoned",
           "transport_failures", "server_rows")
    assert tuple(getattr(first, k) for k in key) == \
        tuple(getattr(second, k) for k in key)


# -- 6: crash recovery ----------------------------------------------------------

def test_criterion_06_crash_restart_never_loses_events(tmp_path):
    """Killing the agent at a random operation boundary and restarting from
    the on-disk outbox never loses an event, across 50 seeded runs. The
    transport also drops acknowledgements, so recovery must retransmit work
    the server already stored without creating extra rows."""
    for seed in range(50):
        rng = np.random.default_rng(seed)
        service, token = seeded_service()
        trip_id = service.create_trip(token, "v-1", START)
        events = [make_event(i, trip_id=trip_id)
                  for i in range(int(rng.integers(8, 16)))]
        sender = DropAckSender(ServiceSender(service, token),
                               np.random.default_rng(seed + 1000), 0.3)
        policy = RetryPolicy()
        clock = SimClock()

        ops = []
        for n, event in enumerate(events, start=1):
            ops.append(("enqueue", event))
            if n % 3 == 0:
                ops.append(("flush", None))
        kill_at = int(rng.integers(0, len(ops) + 1))

        path = tmp_path / f"run-{seed}.outbox"
        outbox = Outbox(path)
        for kind, event in ops[:kill_at]:
            if kind == "enqueue":
                outbox.enqueue(event)
            else:
                clock.advance(60_000)
                flush(outbox, sender, policy, 4, clock.now_ms)
        # the crash: no close(), no final flush; restart from the log alone
        outbox = recover(path)
        for kind, event in ops[kill_at:]:
            if kind == "enqueue":
                outbox.enqueue(event)
            else:
                clock.advance(60_000)
                flush(outbox, sender, policy, 4, clock.now_ms)
        drain(outbox, sender, policy, 4, clock)
        outbox.close()

        stored = {event.event_id for event, _ in
                  service.store.events_for_trip(trip_id)}
        assert stored == {e.event_id for e in events}, f"seed {seed} lost events"
        assert outbox.pending() == []
        assert outbox.poisoned() == []


# -- 7: window aggregation --------------------------------------------------------

def test_criterion_07_window_aggregation_exact(tmp_path):
    """For 1,000 random windows the event's speed min/avg/max equal a
    brute-force scan bit for bit, and a trip always yields
    ceil(samples / 15) events."""
    classifier = EyeRegionBaseline(16)
    base = GeoPoint(25.0, 51.0)
    for case in range(1000):
        rng = np.random.default_rng(case)
        n = int(rng.integers(1, WINDOW_S + 1))
        samples = [
            SensorSample(
                t=t, position=destination_point(base, 90.0, 10.0 * t),
                speed_mps=float(rng.uniform(0.0, 40.0)),
                accel_mps2=float(rng.uniform(-3.0, 3.0)),
                roll_dps=0.0, pitch_dps=0.0, yaw_dps=0.0,
                drowsy_truth=False, frame=rng.random((16, 16)))
            for t in range(n)
        ]
        event = aggregate_window(samples, "trip-000001",
                                 START + timedelta(seconds=n), classifier, rng)

        lowest = highest = samples[0].speed_mps
        total = 0.0
        for sample in samples:
            if sample.speed_mps < lowest:
                lowest = sample.speed_mps
            if sample.speed_mps > highest:
                highest = sample.speed_mps
            total += sample.speed_mps
        assert event.speed_min_mps == lowest
        assert event.speed_max_mps == highest
        assert event.speed_avg_mps == total / n

    profile = DrivingProfile(cruise_speed_mps=12.0, speed_jitter_mps=1.0,
                             stop_probability=0.05,
                             drowsy_onset_probability=0.1,
                             scenario=Scenario.NO_GLASSES)
    route = [base, destination_point(base, 0.0, 10_000.0)]
    for duration in (1, 14, 15, 16, 29, 30, 31, 59, 60, 137, 300):
        outbox = Outbox(tmp_path / f"count-{duration}.outbox")
        run_agent(profile, route, duration, duration, outbox,
                  "trip-000001", "d-1", "v-1", START, classifier)
        assert len(outbox.pending()) == math.ceil(duration / WINDOW_S)
        outbox.close()


# -- 8: distance ---------------------------------------------------------------

def test_criterion_08_distance_recomputation(tmp_path):
    """For straight constant-speed trips the server's distance, recomputed
    from stored event positions, lands within 1% of the agent's 1 Hz
    figure; haversine itself matches independent oracle values to 0.01 m."""
    service, token = seeded_service()
    origin = GeoPoint(25.0, 51.0)
    for speed, seed in ((15.0, 7), (25.0, 8)):
        trip_id = service.create_trip(token, "v-1", START)
        profile = DrivingProfile(cruise_speed_mps=speed, speed_jitter_mps=0.0,
                                 stop_probability=0.0,
                                 drowsy_onset_probability=0.0,
                                 scenario=Scenario.NO_GLASSES)
        route = [origin, destination_point(origin, 0.0, 90_000.0)]
        outbox = Outbox(tmp_path / f"trip-{seed}.outbox")
        trip = run_agent(profile, route, 3000, seed, outbox, trip_id,
                         "d-1", "v-1", START, EyeRegionBaseline(16))
        drain(outbox, ServiceSender(service, token), RetryPolicy(), 50,
              SimClock())
        outbox.close()
        service.end_trip(token, trip_id, START + timedelta(seconds=3000),
                         trip.distance_m, trip.speed_min_mps,
                         trip.speed_avg_mps, trip.speed_max_mps)
        record = service.get_trip(token, trip_id)
        relative = abs(record.server_distance_m - trip.distance_m) / trip.distance_m
        assert relative < 0.01, f"distance discrepancy {relative:.4f} at {speed} m/s"

    # independently computed fixtures (spherical law of cosines oracle)
    d = haversine_m(GeoPoint(0.0, 0.0), GeoPoint(0.0, 1.0))
    assert d == pytest.approx(111194.92664455873, abs=0.01)
    d = haversine_m(GeoPoint(25.2854, 51.5310), GeoPoint(25.2760, 51.4910))
    assert d == pytest.approx(4155.419647542709, abs=0.01)
    assert haversine_m(origin, origin) == 0.0


# -- 9: segment risk --------------------------------------------------------------

def _risk_world(seed):
    """Random roads, trips, events, and crashes, plus everything needed to
    recompute risk outside SQL."""
    rng = np.random.default_rng(seed)
    service, token = seeded_service()
    store = service.store
    store.add_road(Road("r-1", "Corniche"))
    segments = []
    for i in range(int(rng.integers(1, 6))):
        start = GeoPoint(25.0 + 0.05 * i, 51.0)
        end = destination_point(start, float(rng.uniform(0, 360)),
                                float(rng.uniform(200, 800)))
        segment = RoadSegment(f"s-{i}", "r-1", (start, end), {})
        store.add_segment(segment)
        segments.append(segment)

    event_rows = []
    counter = 0
    for _ in range(int(rng.integers(1, 5))):
        trip_id = service.create_trip(token, "v-1", START)
        for _ in range(int(rng.integers(0, 13))):
            anchor = segments[int(rng.integers(0, len(segments)))]
            along = destination_point(anchor.polyline[0], 0.0,
                                      float(rng.uniform(0, 900)))
            position = destination_point(along, 90.0, float(rng.uniform(0, 120)))
            event = make_event(counter, trip_id=trip_id,
                               lat=position.lat, lon=position.lon)
            counter += 1
            service.ingest_events(token, trip_id, [event])
            event_rows.append((trip_id, position))

    crashes = {segment.segment_id: 0 for segment in segments}
    for c in range(int(rng.integers(0, 11))):
        segment_id = f"s-{int(rng.integers(0, len(segments)))}"
        store.add_crash(CrashRecord(f"c-{c}", segment_id, START, "minor"))
        crashes[segment_id] += 1
    return service, segments, event_rows, crashes


def _brute_force_risk(segment, segments, event_rows, crashes):
    trips = set()
    for trip_id, position in event_rows:
        nearest, best = None, None
        for candidate in sorted(segments, key=lambda s: s.segment_id):
            d = point_to_polyline_m(position, list(candidate.polyline))
            if best is None or d < best - 1e-9:
                nearest, best = candidate.segment_id, d
        if nearest == segment.segment_id and best <= SEGMENT_MATCH_M:
            trips.add(trip_id)
    n_crashes = crashes[segment.segment_id]
    if not trips:
        return SegmentRisk(segment.segment_id, n_crashes, 0, 0.0, True)
    return SegmentRisk(segment.segment_id, n_crashes, len(trips),
                       1000.0 * n_crashes / len(trips), False)


def test_criterion_09_segment_risk_matches_brute_force():
    """Risk per segment equals a full-scan recomputation, exactly, on 100
    random worlds of up to 5 segments, 50 events, and 10 crashes."""
    for seed in range(100):
        service, segments, event_rows, crashes = _risk_world(seed)
        for segment in segments:
            expected = _brute_force_risk(segment, segments, event_rows, crashes)
            assert service.segment_risk(segment.segment_id) == expected, \
                f"seed {seed}, {segment.segment_id}"


# -- 10: idempotent ingestion -----------------------------------------------------

def test_criterion_10_retransmission_leaves_content_identical():
    """Any retransmission schedule with up to five copies of each event
    leaves the stored rows identical to single-delivery ingestion."""
    events = [make_event(i) for i in range(30)]

    reference, token = seeded_service()
    trip_id = reference.create_trip(token, "v-1", START)
    reference.ingest_events(token, trip_id, events)
    want = reference.store.events_for_trip(trip_id)

    for seed in range(10):
        rng = np.random.default_rng(seed)
        service, token = seeded_service()
        trip_id = service.create_trip(token, "v-1", START)
        schedule = [event for event in events
                    for _ in range(int(rng.integers(1, 6)))]
        schedule = [schedule[i] for i in rng.permutation(len(schedule))]
        i = 0
        while i < len(schedule):
            batch = schedule[i:i + int(rng.integers(1, 9))]
            i += len(batch)
            result = service.ingest_events(token, trip_id, batch)
            assert result.rejected == {}
        assert service.store.events_for_trip(trip_id) == want, f"seed {seed}"


# -- 11: round-trips ---------------------------------------------------------------

def test_criterion_11_round_trips(tmp_path):
    """Wire encoding, model persistence, GeoJSON, and the outbox log are all
    identity on valid data, and a corrupted log suffix costs exactly the
    corrupted record."""
    events = [make_event(i, lat=25.0 + 0.001 * i) for i in range(5)]

    # event wire format
    for event in events:
        assert decode_event(encode_event(event)) == event

    # model persistence
    model = drowsiness_net(22)
    model.init_params(seed=5)
    x = np.random.default_rng(5).random((2, 1, 22, 22))
    before = model.forward(x)
    path = tmp_path / "model.bin"
    model.save(path)
    loaded = Model.load(path)
    for (name_a, param_a), (name_b, param_b) in zip(model.parameters(),
                                                    loaded.parameters()):
        assert name_a == name_b
        assert np.array_equal(param_a, param_b)
    assert np.array_equal(loaded.forward(x), before)

    # GeoJSON export/import through a real serialization
    collection = json.loads(json.dumps(trip_feature_collection(events)))
    assert events_from_feature_collection(collection) == events

    # outbox log write/recover
    log = tmp_path / "events.outbox"
    outbox = Outbox(log)
    for event in events:
        outbox.enqueue(event)
    outbox.close()
    recovered = recover(log)
    assert [entry.event for entry in recovered.pending()] == events
    assert recovered.corrupt_records == 0
    recovered.close()

    # a torn final write costs exactly that record
    log.write_bytes(log.read_bytes()[:-5])
    recovered = recover(log)
    assert recovered.corrupt_records == 1
    assert [entry.event for entry in recovered.pending()] == events[:-1]
    recovered.close()


# -- 12: accuracy table rendering ---------------------------------------------------

def test_criterion_12_accuracy_table_golden_bytes(request):
    """The published per-scenario accuracy fixture renders byte-for-byte
    identical to the frozen golden file."""
    table = AccuracyTable(
        rows={
            Scenario.GLASSES: 0.85548,
            Scenario.NIGHT_NO_GLASSES: 0.8320,
            Scenario.NIGHT_GLASSES: 0.79142,
            Scenario.NO_GLASSES: 0.8916,
            Scenario.SUNGLASSES: 0.78115,
        },
        overall=0.829)
    golden = request.path.parent / "golden" / "accuracy_table.txt"
    assert render_accuracy_table(table).encode() == golden.read_bytes()
