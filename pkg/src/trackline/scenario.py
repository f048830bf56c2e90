"""Scenario files and the simulated world they describe.

A scenario is a YAML mapping; see ``scenarios/campus_loop.yaml`` for the
fully commented schema.  Validation errors carry the line they refer to.
"""
from __future__ import annotations

import datetime
import json
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from trackline.atproto import AtError, AtSession, InitPolicy
from trackline.geodesy import GeoPoint
from trackline.simnet import (
    ByteChannel, GpsDevice, ModemDevice, NoiseModel, Phone, Route, SmsNetwork, VirtualClock,
    named_script,
)
from trackline.simnet.route import RouteError, Waypoint
from trackline.tracker import (
    MonitorMode, RunSummary, ServerConfig, Track, TrackerServer, export_track_text, iso_utc,
    parse_iso_utc,
)

logger = logging.getLogger(__name__)

SEED_ENV = "TRACKLINE_SEED_OVERRIDE"
DEFAULT_START = "2013-06-01T06:00:00.000Z"

_TOP_KEYS = {"seed", "start", "duration", "vehicle", "route", "noise", "gps", "gsm", "server", "phones", "schedule"}


class ScenarioError(ValueError):
    def __init__(self, message: str, line: int | None = None, source: str = "<scenario>"):
        where = f"{source}:{line}" if line is not None else source
        super().__init__(f"{where}: {message}")
        self.line = line
        self.source = source


@dataclass(frozen=True)
class PhoneAction:
    t: float  # seconds after start
    text: str
    sender: str


@dataclass
class Scenario:
    seed: int
    duration: float
    route: Route
    server: ServerConfig
    start: float = field(default_factory=lambda: parse_iso_utc(DEFAULT_START))
    vehicle: str = "vehicle"
    noise: NoiseModel = NoiseModel()
    gps_baud: int = 4800
    gps_sats: int = 8
    gsm_baud: int = 9600
    modem_script: str = "healthy"
    sms_latency: float = 1.0
    at_timeout: float = 2.0
    max_restarts: int = 5
    phones: tuple[str, ...] = ()
    schedule: list[PhoneAction] = field(default_factory=list)

    @property
    def end(self) -> float:
        return self.start + self.duration


# -- YAML with line numbers --------------------------------------------------

def _plain(node, lines: dict, path: tuple):
    lines[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        out = {}
        for k, v in node.value:
            key = _scalar(k)
            if key in out:
                raise ScenarioError(f"duplicate key {key!r}", k.start_mark.line + 1)
            out[key] = _plain(v, lines, path + (key,))
        return out
    if isinstance(node, yaml.SequenceNode):
        return [_plain(v, lines, path + (i,)) for i, v in enumerate(node.value)]
    return _scalar(node)


def _scalar(node):
    loader = yaml.SafeLoader("")
    try:
        return loader.construct_object(node, deep=True)
    finally:
        loader.dispose()


class _Reader:
    def __init__(self, data: dict, lines: dict, source: str):
        self.data = data
        self.lines = lines
        self.source = source

    def line(self, path) -> int | None:
        path = tuple(path)
        while path and path not in self.lines:
            path = path[:-1]
        return self.lines.get(path)

    def fail(self, path, message):
        raise ScenarioError(message, self.line(path), self.source)

    def get(self, path, kind, default=..., check=None, what=None):
        cur = self.data
        for p in path:
            if isinstance(cur, dict) and p in cur:
                cur = cur[p]
            elif isinstance(cur, list) and isinstance(p, int) and p < len(cur):
                cur = cur[p]
            else:
                if default is ...:
                    self.fail(path[:-1], f"missing required key {'.'.join(map(str, path))!r}")
                return default
        if kind is float and isinstance(cur, int) and not isinstance(cur, bool):
            cur = float(cur)
        if kind is str and isinstance(cur, int) and not isinstance(cur, bool):
            cur = str(cur)
        if not isinstance(cur, kind) or (kind in (int, float) and isinstance(cur, bool)):
            self.fail(path, f"{'.'.join(map(str, path))} must be {kind.__name__}, got {cur!r}")
        if kind is float and not math.isfinite(cur):
            self.fail(path, f"{'.'.join(map(str, path))} must be finite")
        if check is not None and not check(cur):
            self.fail(path, f"{'.'.join(map(str, path))}={cur!r}: {what}")
        return cur


def loads(text: str, source: str = "<scenario>") -> Scenario:
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ScenarioError(f"YAML syntax: {getattr(exc, 'problem', exc)}",
                            mark.line + 1 if mark else None, source) from None
    if root is None or not isinstance(root, yaml.MappingNode):
        raise ScenarioError("scenario must be a mapping", 1, source)
    lines: dict = {}
    data = _plain(root, lines, ())
    r = _Reader(data, lines, source)

    for key in data:
        if key not in _TOP_KEYS:
            r.fail((key,), f"unknown key {key!r}")

    if "seed" not in data:
        raise ScenarioError("missing required key 'seed' (no implicit randomness)", 1, source)
    seed = r.get(("seed",), int)
    override = os.environ.get(SEED_ENV)
    if override is not None and override.strip():
        try:
            seed = int(override)
        except ValueError:
            raise ScenarioError(f"{SEED_ENV}={override!r} is not an integer", None, source) from None

    start_raw = data.get("start", DEFAULT_START)
    if isinstance(start_raw, datetime.datetime):
        start_raw = start_raw.replace(tzinfo=start_raw.tzinfo or datetime.timezone.utc).isoformat()
    elif not isinstance(start_raw, str):
        r.fail(("start",), "start must be an ISO-8601 UTC timestamp")
    try:
        start = parse_iso_utc(start_raw)
    except ValueError as exc:
        r.fail(("start",), f"bad start time: {exc}")
    duration = r.get(("duration",), float, check=lambda v: v > 0, what="must be > 0")

    raw_route = r.get(("route",), list)
    wps = []
    for i, wp in enumerate(raw_route):
        path = ("route", i)
        if isinstance(wp, list):
            if len(wp) not in (3, 4):
                r.fail(path, "waypoint list form is [t, lat, lon] or [t, lat, lon, alt]")
            wp = dict(zip(("t", "lat", "lon", "alt"), wp))
            r.data["route"][i] = wp
        elif not isinstance(wp, dict):
            r.fail(path, "waypoint must be a mapping or list")
        t = r.get(path + ("t",), float)
        lat = r.get(path + ("lat",), float, check=lambda v: -90 <= v <= 90, what="latitude out of range")
        lon = r.get(path + ("lon",), float, check=lambda v: -180 < v <= 180, what="longitude out of range")
        alt = r.get(path + ("alt",), float, 0.0)
        wps.append(Waypoint(GeoPoint(lat, lon, alt), start + t))
    try:
        route = Route(wps)
    except RouteError as exc:
        r.fail(("route",), str(exc))

    noise = NoiseModel(
        sigma=r.get(("noise", "sigma"), float, 0.0, lambda v: v >= 0, "must be >= 0"),
        dropout_prob=r.get(("noise", "dropout"), float, 0.0, lambda v: 0 <= v <= 1, "must lie in [0, 1]"),
        seed=seed,
    )

    mode_text = r.get(("server", "mode"), str, "continuous")
    modes = {"continuous": MonitorMode.CONTINUOUS_PATH, "on_demand": MonitorMode.ON_DEMAND}
    if mode_text not in modes:
        r.fail(("server", "mode"), f"mode must be one of {sorted(modes)}")
    digits = lambda v: v.isdigit() and 7 <= len(v) <= 15  # noqa: E731
    server_msisdn = r.get(("server", "msisdn"), str, check=digits, what="must be 7-15 digits")
    users_raw = r.get(("server", "users"), list, check=bool, what="needs at least one user")
    users = tuple(
        r.get(("server", "users", i), str, check=digits, what="must be 7-15 digits")
        for i in range(len(users_raw))
    )
    config = ServerConfig(
        msisdn=server_msisdn,
        authorized=users,
        mode=modes[mode_text],
        stale_after=r.get(("server", "stale_after"), float, 5.0, lambda v: v > 0, "must be > 0"),
    )

    if r.get(("phones",), list, None) is None:
        phones = tuple(users)
    else:
        phones = tuple(
            r.get(("phones", i), str, check=digits, what="must be 7-15 digits")
            for i in range(len(r.get(("phones",), list)))
        )
    if server_msisdn in phones:
        r.fail(("phones",), "a phone may not share the server modem's number")

    schedule = []
    for i, _ in enumerate(r.get(("schedule",), list, [])):
        path = ("schedule", i)
        t = r.get(path + ("t",), float, check=lambda v: 0 <= v <= duration,
                  what=f"schedule time must lie within [0, duration={duration:g}]")
        text = r.get(path + ("text",), str)
        sender = r.get(path + ("from",), str, phones[0] if phones else None)
        if sender not in phones:
            r.fail(path, f"sender {sender!r} is not a listed phone")
        if len(text) > 160:
            r.fail(path + ("text",), "SMS text longer than 160 characters")
        schedule.append(PhoneAction(t, text, sender))

    script = r.get(("gsm", "script"), str, "healthy")
    try:
        named_script(script)
    except ValueError as exc:
        r.fail(("gsm", "script"), str(exc))

    positive = lambda v: v > 0  # noqa: E731
    return Scenario(
        seed=seed,
        duration=duration,
        route=route,
        server=config,
        start=start,
        vehicle=r.get(("vehicle",), str, "vehicle"),
        noise=noise,
        gps_baud=r.get(("gps", "baud"), int, 4800, positive, "must be > 0"),
        gps_sats=r.get(("gps", "sats"), int, 8, lambda v: 0 <= v <= 24, "must lie in [0, 24]"),
        gsm_baud=r.get(("gsm", "baud"), int, 9600, positive, "must be > 0"),
        modem_script=script,
        sms_latency=r.get(("gsm", "sms_latency"), float, 1.0, lambda v: v >= 0, "must be >= 0"),
        at_timeout=r.get(("gsm", "timeout"), float, 2.0, positive, "must be > 0"),
        max_restarts=r.get(("gsm", "max_restarts"), int, 5, positive, "must be > 0"),
        phones=phones,
        schedule=schedule,
    )


def load(path: str | os.PathLike) -> Scenario:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario: {exc.strerror}", None, str(p)) from None
    return loads(text, str(p))


# -- world --------------------------------------------------------------------

class World:
    """Every simulated device from a scenario, wired to one tracker server."""

    def __init__(self, scn: Scenario, schedule: bool = True):
        self.scenario = scn
        self.clock = VirtualClock(scn.start)
        self.gps_channel = ByteChannel(self.clock, scn.gps_baud, "gps")
        self.gsm_channel = ByteChannel(self.clock, scn.gsm_baud, "gsm")
        self.network = SmsNetwork(self.clock, scn.sms_latency)
        self.modem = ModemDevice(scn.server.msisdn, named_script(scn.modem_script), self.network)
        self.modem.attach(self.gsm_channel.b)
        self.phones = {m: Phone(m, self.network) for m in scn.phones}
        self.gps = GpsDevice(scn.route, scn.noise, scn.gps_sats)
        self.gps.attach(self.clock, self.gps_channel.b, scn.start, scn.end)
        self.session = AtSession(self.gsm_channel.a, self.clock, scn.server.msisdn, scn.at_timeout)
        self.server = TrackerServer(scn.server, self.clock, self.gps_channel.a, self.session, Track(scn.vehicle))
        if schedule:
            for action in scn.schedule:
                self.inject(action.t, action.text, action.sender)

    def inject(self, t: float, text: str, sender: str) -> None:
        phone = self.phones[sender]
        self.clock.schedule(self.scenario.start + t, lambda: phone.send(self.scenario.server.msisdn, text))

    def run(self, until: float | None = None) -> RunSummary:
        until = self.scenario.end if until is None else until
        policy = InitPolicy(timeout=self.scenario.at_timeout, max_restarts=self.scenario.max_restarts,
                            max_polls=600)
        try:
            self.session.init_modem(policy)
        except AtError as exc:
            self.server.summary.error = f"{type(exc).__name__}: {exc}"
            self.server.log.append(f"{iso_utc(self.clock.now)} modem init failed: {exc}")
            return self.server.summary
        summary = self.server.run(until)
        if self.clock.now < until:
            self.clock.advance(until)
        return summary

    def transcript(self) -> str:
        out = []
        for d in self.network.log:
            out.append(json.dumps({
                "sent": iso_utc(d.sent_at),
                "delivered": iso_utc(d.deliver_at),
                "from": d.message.from_msisdn,
                "to": d.message.to_msisdn,
                "text": d.message.text,
            }, separators=(", ", ": ")))
        return "".join(line + "\n" for line in out)

    def summary_json(self) -> str:
        s = self.server.summary.to_dict()
        s["track_samples"] = len(self.server.track)
        s["log"] = list(self.server.log)
        return json.dumps(s, indent=2, sort_keys=True) + "\n"

    def write_outputs(self, out_dir: str | os.PathLike, trace: bool = False) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        files = {
            "track.jsonl": export_track_text(self.server.track),
            "sms.jsonl": self.transcript(),
            "summary.json": self.summary_json(),
        }
        if trace:
            files["gps.hex"] = self.gps_channel.hexdump()
            files["gsm.hex"] = self.gsm_channel.hexdump()
        written = []
        for name, content in files.items():
            p = out / name
            p.write_text(content, encoding="utf-8")
            written.append(p)
        return written
