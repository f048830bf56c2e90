"""Command-line entry point.

Exit codes: 0 success, 1 runtime fault, 2 invalid input.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from trackline.geodesy import GeodesyError, SpanError, track_error
from trackline.scenario import ScenarioError, World, load
from trackline.tracker import TrackFormatError, import_track, iso_utc, render_track

EXIT_OK, EXIT_FAULT, EXIT_INVALID = 0, 1, 2


def _load_track(path: str):
    try:
        with open(path, encoding="utf-8") as fh:
            return import_track(fh)
    except OSError as exc:
        raise TrackFormatError(0, f"cannot read {path}: {exc.strerror}") from None


def cmd_run(args) -> int:
    scn = load(args.scenario)
    world = World(scn)
    summary = world.run()
    world.write_outputs(args.out, trace=args.trace)
    print(
        f"fixes={summary.fixes_recorded} served={summary.queries_served} "
        f"rejected={summary.queries_rejected} -> {args.out}"
    )
    if summary.error:
        print(f"runtime fault: {summary.error}", file=sys.stderr)
        return EXIT_FAULT
    return EXIT_OK


def cmd_phone(args) -> int:
    scn = load(args.scenario)
    world = World(scn, schedule=False)
    sender = args.sender or scn.server.authorized[0]
    if sender not in world.phones:
        print(f"phone {sender} is not part of the scenario", file=sys.stderr)
        return EXIT_INVALID
    at = scn.duration / 2 if args.at is None else args.at
    if not 0 <= at <= scn.duration:
        print(f"--at {at:g} is outside the scenario duration {scn.duration:g}", file=sys.stderr)
        return EXIT_INVALID
    phone = world.phones[sender]
    world.inject(at, args.verb, sender)
    inject_time = scn.start + at

    def got_reply():
        return any(t > inject_time for t, _ in phone.inbox)

    original = phone._receive

    def receive(msg):
        original(msg)
        if got_reply():
            world.server.stop()

    world.network.register(sender, receive)
    world.run(until=inject_time + args.reply_timeout)
    replies = [(t, m) for t, m in phone.inbox if t > inject_time]
    if not replies:
        print("NO REPLY")
        return EXIT_FAULT
    t, msg = replies[0]
    if args.verbose:
        print(f"# {iso_utc(t)} from {msg.from_msisdn}", file=sys.stderr)
    print(msg.text)
    return EXIT_OK


def cmd_report(args) -> int:
    scn = load(args.scenario)
    track = _load_track(args.track)
    try:
        err = track_error(track.valid_samples(), scn.route)
    except SpanError as exc:
        bad = ", ".join(iso_utc(t) for t in exc.timestamps[:10])
        print(f"error: {exc}: {bad}", file=sys.stderr)
        return EXIT_INVALID
    except GeodesyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    samples = track.valid_samples()
    table = ["t\terror_m"] + [f"{iso_utc(s.time)}\t{e:.3f}" for s, e in zip(samples, err.per_sample)]
    print(f"rmse: {err.rmse:.2f} m")
    print(f"max: {err.max:.2f} m")
    print(f"samples: {len(err.per_sample)}")
    text = "\n".join(table) + "\n"
    if args.table:
        Path(args.table).write_text(text, encoding="utf-8")
    else:
        print()
        sys.stdout.write(text)
    return EXIT_OK


def cmd_render(args) -> int:
    track = _load_track(args.track)
    try:
        text = render_track(track, args.style)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="trackline", description="GPS/GSM vehicle tracking simulator")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a scenario and write its outputs")
    p.add_argument("--scenario", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--trace", action="store_true", help="also write hex dumps of both serial lines")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("phone", help="text the tracker from a user's phone and print the reply")
    p.add_argument("--verb", required=True, choices=["SPEED", "LOC"])
    p.add_argument("--scenario", required=True)
    p.add_argument("--at", type=float, default=None, help="seconds after start (default: mid-run)")
    p.add_argument("--sender", default=None, help="phone number (default: first authorized user)")
    p.add_argument("--reply-timeout", type=float, default=30.0, help="virtual seconds to wait")
    p.set_defaults(func=cmd_phone)

    p = sub.add_parser("report", help="tracking error of a recorded track against the route")
    p.add_argument("--track", required=True)
    p.add_argument("--scenario", required=True)
    p.add_argument("--table", default=None, help="write the per-sample table here instead of stdout")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("render", help="draw a recorded track")
    p.add_argument("--track", required=True)
    p.add_argument("--style", choices=["ascii", "plot"], default="ascii")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_render)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except (ScenarioError, TrackFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except BrokenPipeError:
        # output piped into something like `head`; nothing left to say
        sys.stderr.close()
        return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
