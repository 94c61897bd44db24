"""Operator entry point.

Subcommands: simulate, serve, train, eval, report, export-geojson, import,
gen-frames. Exit codes: 0 success, 1 usage, 2 data loss or validation
failure, 3 I/O or connectivity failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
import threading
from pathlib import Path

from .events import SCENARIO_ORDER
from .fleet import FleetRun, bootstrap_fleet, run_fleet
from .geojson import trip_feature_collection
from .netsim import LinkConfig
from .nn import (
    CnnClassifier,
    EyeRegionBaseline,
    Model,
    TrainConfig,
    build_scenario_dataset,
    drowsiness_net,
    evaluate,
    load_dataset,
    merge_groups,
    save_dataset,
    train,
)
from .outbox import DEFAULT_BATCH_SIZE, TransportError
from .report import (
    render_accuracy_table,
    render_trip_report,
    render_trip_figures,
    save_accuracy_chart,
    save_loss_curve,
    write_events_csv,
)
from .server import ServiceError, Store, TelemetryService, import_csv, serve
from .server.client import HttpError
from .server.csvio import KINDS

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_IO = 3

_ENV_PREFIX = "TRIPSENSE_"
_DEFAULTS = {"host": "127.0.0.1", "port": "8080", "storage": ":memory:",
             "token_ttl_s": "86400"}


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; the contract reserves 2 for data
    failures, so usage problems exit 1 instead."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def load_config_file(path: str | Path) -> dict[str, str]:
    """Flat KEY=VALUE lines; blank lines and # comments ignored."""
    values: dict[str, str] = {}
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"config line without '=': {line!r}")
        key, _, value = line.partition("=")
        values[key.strip()] = value.strip()
    return values


def resolve_setting(name: str, flag_value, config: dict[str, str]) -> str:
    """Precedence: command-line flag, then TRIPSENSE_<NAME> environment
    variable, then config file entry, then built-in default."""
    if flag_value is not None:
        return str(flag_value)
    env = os.environ.get(_ENV_PREFIX + name.upper())
    if env is not None:
        return env
    if name in config:
        return config[name]
    return _DEFAULTS[name]


def _parse_outage(text: str) -> tuple[float, float]:
    try:
        start, _, end = text.partition(":")
        return float(start), float(end)
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"outage must be START:END seconds, got {text!r}")


def build_parser() -> _Parser:
    parser = _Parser(prog="tripsense", description=__doc__)
    parser.add_argument("--config", help="flat KEY=VALUE config file")
    parser.add_argument("--seed", type=int, default=0, help="root RNG seed")
    parser.add_argument("--endpoint", help="URL of a running ingestion server")
    parser.add_argument("--storage", help="SQLite path (default in-memory)")
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)

    p = sub.add_parser("simulate", help="run a fleet of simulated drivers")
    p.add_argument("--drivers", type=int, default=1)
    p.add_argument("--duration", type=int, default=300,
                   help="trip length in seconds")
    p.add_argument("--loss", type=float, default=0.0,
                   help="per-direction packet loss probability")
    p.add_argument("--outage", type=_parse_outage, action="append", default=[],
                   metavar="START:END", help="link outage window in seconds")
    p.add_argument("--latency-ms", type=int, default=20)
    p.add_argument("--batch-size", type=int, default=DEFAULT_BATCH_SIZE)
    p.add_argument("--outbox-dir", help="directory for durable outbox logs")
    p.add_argument("--model", help="trained model file for scoring frames")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("serve", help="run the ingestion server")
    p.add_argument("--host")
    p.add_argument("--port", type=int)
    p.add_argument("--token-ttl-s", type=int)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("train", help="train the drowsiness classifier")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="model file to write")
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--learning-rate", type=float, default=0.01)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--figures-dir", help="also write the loss curve figure")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="per-scenario accuracy table")
    p.add_argument("--data", required=True, help="dataset directory")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--model", help="trained model file")
    group.add_argument("--baseline", action="store_true",
                       help="score with the eye-region heuristic")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--figures-dir", help="also write the accuracy chart")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="text report for one trip")
    p.add_argument("--trip", required=True)
    p.add_argument("--out-dir",
                   help="write events.csv and figures alongside the text")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("export-geojson", help="trip track as GeoJSON")
    p.add_argument("--trip", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_geojson)

    p = sub.add_parser("import", help="bulk-load CSV fixtures")
    p.add_argument("kind", choices=KINDS)
    p.add_argument("file")
    p.set_defaults(func=cmd_import)

    p = sub.add_parser("gen-frames", help="write the synthetic frame dataset")
    p.add_argument("--out", required=True, help="dataset directory")
    p.add_argument("--per-scenario", type=int, default=200)
    p.add_argument("--side", type=int, default=16)
    p.set_defaults(func=cmd_gen_frames)

    return parser


def _config(args) -> dict[str, str]:
    return load_config_file(args.config) if args.config else {}


def _storage(args) -> str:
    return resolve_setting("storage", args.storage, _config(args))


def _classifier(model_path: str | None):
    if model_path is None:
        return EyeRegionBaseline(16)
    return CnnClassifier(Model.load(model_path))


# -- subcommands --------------------------------------------------------------

def cmd_simulate(args) -> int:
    link = LinkConfig(loss_probability=args.loss,
                      outages_s=tuple(args.outage),
                      latency_ms=args.latency_ms)
    run = FleetRun(driver_count=args.drivers, duration_s=args.duration,
                   seed=args.seed, link=link, batch_size=args.batch_size)
    classifier = _classifier(args.model)

    server = None
    if args.endpoint:
        base_url = args.endpoint
    else:
        service = TelemetryService(Store(_storage(args)))
        bootstrap_fleet(service, args.drivers)
        server = serve(service)
        threading.Thread(target=server.serve_forever, daemon=True).start()
        base_url = f"http://{server.server_address[0]}:{server.server_address[1]}"

    try:
        if args.outbox_dir:
            summary = run_fleet(base_url, run, args.outbox_dir, classifier)
        else:
            with tempfile.TemporaryDirectory(prefix="tripsense-outbox-") as tmp:
                summary = run_fleet(base_url, run, tmp, classifier)
    finally:
        if server is not None:
            server.shutdown()

    print(f"trips: {' '.join(summary.trips)}")
    print(f"generated: {summary.generated}")
    print(f"delivered: {summary.delivered} first-time, "
          f"{summary.duplicates} duplicates absorbed")
    print(f"rejected: {summary.rejected}  poisoned: {summary.poisoned}")
    print(f"transport failures retried: {summary.transport_failures}")
    print(f"server rows: {summary.server_rows}  lost: {summary.lost}")
    return EXIT_OK if summary.lost == 0 else EXIT_DATA


def cmd_serve(args) -> int:
    config = _config(args)
    host = resolve_setting("host", args.host, config)
    port = int(resolve_setting("port", args.port, config))
    storage = resolve_setting("storage", args.storage, config)
    ttl = int(resolve_setting("token_ttl_s", args.token_ttl_s, config))
    service = TelemetryService(Store(storage), token_ttl_s=ttl)
    server = serve(service, host, port)
    print(f"listening on http://{host}:{server.server_address[1]} "
          f"(storage={storage})")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    return EXIT_OK


def cmd_train(args) -> int:
    groups = load_dataset(args.data)
    frames, labels = merge_groups(groups)
    side = frames.shape[1]
    model = drowsiness_net(side)
    model.init_params(args.seed)
    config = TrainConfig(learning_rate=args.learning_rate, epochs=args.epochs,
                         batch_size=args.batch_size, seed=args.seed)
    history = train(model, frames[:, None, :, :], labels, config)
    model.save(args.out)
    for epoch, loss in enumerate(history.epoch_losses, start=1):
        print(f"epoch {epoch:3d}  loss {loss:.6f}")
    print(f"model written to {args.out}")
    if args.figures_dir:
        Path(args.figures_dir).mkdir(parents=True, exist_ok=True)
        path = save_loss_curve(Path(args.figures_dir) / "loss_curve.png", history)
        print(f"figure written to {path}")
    return EXIT_OK


def cmd_eval(args) -> int:
    groups = load_dataset(args.data)
    classifier = EyeRegionBaseline(next(iter(groups.values()))[0].shape[1]) \
        if args.baseline else _classifier(args.model)
    table = evaluate(classifier, groups, threshold=args.threshold)
    print(render_accuracy_table(table), end="")
    if args.figures_dir:
        Path(args.figures_dir).mkdir(parents=True, exist_ok=True)
        path = save_accuracy_chart(Path(args.figures_dir) / "accuracy.png", table)
        print(f"figure written to {path}")
    return EXIT_OK


def _trip_rows(args):
    store = Store(_storage(args))
    trip = store.get_trip(args.trip)
    if trip is None:
        print(f"unknown trip {args.trip!r}", file=sys.stderr)
        return None, None
    return trip, store.events_for_trip(args.trip)


def cmd_report(args) -> int:
    trip, rows = _trip_rows(args)
    if trip is None:
        return EXIT_DATA
    print(render_trip_report(trip, rows), end="")
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_events_csv(out / "events.csv", rows)
        paths = render_trip_figures(out, rows)
        for path in [out / "events.csv"] + paths:
            print(f"written: {path}")
    return EXIT_OK


def cmd_export_geojson(args) -> int:
    trip, rows = _trip_rows(args)
    if trip is None:
        return EXIT_DATA
    collection = trip_feature_collection([event for event, _ in rows])
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(collection, fh, indent=2)
        fh.write("\n")
    print(f"written: {args.out} ({len(collection['features'])} features)")
    return EXIT_OK


def cmd_import(args) -> int:
    service = TelemetryService(Store(_storage(args)))
    report = import_csv(service, args.kind, args.file)
    print(f"imported {report.imported} {report.kind}")
    for line, reason in report.rejected:
        print(f"line {line}: rejected: {reason}", file=sys.stderr)
    return EXIT_OK if not report.rejected else EXIT_DATA


def cmd_gen_frames(args) -> int:
    groups = build_scenario_dataset(side=args.side,
                                    per_scenario=args.per_scenario,
                                    seed=args.seed)
    save_dataset(args.out, groups)
    total = sum(len(labels) for _, labels in groups.values())
    print(f"wrote {total} frames across {len(SCENARIO_ORDER)} scenarios "
          f"to {args.out}")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except HttpError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_DATA if 400 <= exc.status < 500 else EXIT_IO
    except ServiceError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_DATA
    except TransportError as exc:
        print(f"endpoint unreachable: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
