"""The base-station server: owns the GPS line and the GSM session, records the
vehicle track and answers ``SPEED`` / ``LOC`` text queries."""
from __future__ import annotations

import datetime
import enum
import io
import json
import logging
import math
import time as _time
from dataclasses import asdict, dataclass, field
from typing import IO, Iterable

from trackline import nmea
from trackline.atproto import AtError, AtSession, HardwareFault, SmsMessage, TransportError
from trackline.geodesy import GeoPoint
from trackline.nmea import FixQuality, FixValidity, GpsFix, LineReader

logger = logging.getLogger(__name__)

GRID_W, GRID_H = 60, 20
RECORD_FIELDS = ("t", "lat", "lon", "alt", "speed_kmh", "sats", "quality", "valid")
NO_FIX_REPLY = "NO FIX"


class MonitorMode(enum.Enum):
    ON_DEMAND = "on_demand"
    CONTINUOUS_PATH = "continuous"


class Verb(enum.Enum):
    SPEED = "SPEED"
    LOC = "LOC"


@dataclass(frozen=True)
class ServerConfig:
    msisdn: str
    authorized: tuple[str, ...]
    mode: MonitorMode = MonitorMode.CONTINUOUS_PATH
    stale_after: float = 5.0
    speed_template: str = "SPEED {speed:.1f} KMPH AT {time}Z"
    loc_template: str = "LOC {lat:.6f} {lon:.6f} ALT {alt:.1f}M AT {time}Z"
    gps_read_timeout: float = 3.0

    def __post_init__(self):
        object.__setattr__(self, "authorized", tuple(self.authorized))
        if not self.authorized:
            raise ValueError("at least one authorized msisdn is required")
        if not self.stale_after > 0:
            raise ValueError("stale-fix threshold must be positive")


@dataclass(frozen=True)
class CommandRequest:
    sender: str
    verb: Verb
    received_at: float


def parse_command(text: str) -> Verb | None:
    """Exact-match the two known commands; anything else is ``None``."""
    try:
        return Verb(text)
    except ValueError:
        return None


# -- track ------------------------------------------------------------------

@dataclass(frozen=True)
class TrackSample:
    """One recorded fix, held at export precision."""

    time: float
    point: GeoPoint | None
    speed_kmh: float
    sats: int
    quality: FixQuality
    valid: bool

    @classmethod
    def from_fix(cls, fix: GpsFix, validity: FixValidity) -> TrackSample:
        point = None
        if fix.point is not None:
            point = GeoPoint(round(fix.point.lat, 6), round(fix.point.lon, 6), round(fix.point.alt, 1))
        return cls(
            round(fix.time, 3), point, round(fix.speed_kmh, 1), fix.num_sats, fix.fix_quality,
            validity.is_valid,
        )


@dataclass
class Track:
    vehicle_id: str = "vehicle"
    samples: list[TrackSample] = field(default_factory=list)
    started_at: float | None = None
    dropped: int = 0

    def __len__(self):
        return len(self.samples)

    def valid_samples(self) -> list[TrackSample]:
        return [s for s in self.samples if s.valid]


def record_fix(track: Track, fix: GpsFix, validity: FixValidity | None = None) -> Track:
    if validity is None:
        validity = nmea.validity(fix)
    if track.samples and not fix.time > track.samples[-1].time:
        track.dropped += 1
        logger.info("dropping fix at %.3f: not after %.3f", fix.time, track.samples[-1].time)
        return track
    if track.started_at is None:
        track.started_at = round(fix.time, 3)
    track.samples.append(TrackSample.from_fix(fix, validity))
    return track


def iso_utc(t: float) -> str:
    ms_total = round(t * 1000)
    secs, ms = divmod(ms_total, 1000)
    return _time.strftime("%Y-%m-%dT%H:%M:%S", _time.gmtime(secs)) + f".{ms:03d}Z"


def parse_iso_utc(text: str) -> float:
    """ISO-8601 timestamp to POSIX seconds; a zone is required."""
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    d = datetime.datetime.fromisoformat(text)
    if d.tzinfo is None:
        raise ValueError(f"timestamp {text!r} has no time zone")
    return round(d.timestamp(), 3)


class TrackFormatError(ValueError):
    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


def _record(s: TrackSample) -> dict:
    p = s.point
    return {
        "t": iso_utc(s.time),
        "lat": None if p is None else round(p.lat, 6),
        "lon": None if p is None else round(p.lon, 6),
        "alt": None if p is None else round(p.alt, 1),
        "speed_kmh": round(s.speed_kmh, 1),
        "sats": s.sats,
        "quality": s.quality.name.lower(),
        "valid": s.valid,
    }


def export_track(track: Track, sink: IO[str]) -> int:
    """Write one JSON record per sample; returns the number of lines."""
    for s in track.samples:
        sink.write(json.dumps(_record(s), separators=(", ", ": ")) + "\n")
    return len(track.samples)


def _sample_from_record(rec, line_no: int) -> TrackSample:
    if not isinstance(rec, dict):
        raise TrackFormatError(line_no, "record is not an object")
    keys = set(rec)
    if keys != set(RECORD_FIELDS):
        missing = sorted(set(RECORD_FIELDS) - keys)
        extra = sorted(keys - set(RECORD_FIELDS))
        raise TrackFormatError(line_no, f"fields missing {missing} / unknown {extra}")
    try:
        t = parse_iso_utc(rec["t"])
        quality = FixQuality[str(rec["quality"]).upper()]
        sats, valid, speed = rec["sats"], rec["valid"], rec["speed_kmh"]
        if not isinstance(sats, int) or isinstance(sats, bool) or not 0 <= sats <= nmea.MAX_SATS:
            raise ValueError(f"bad sats {sats!r}")
        if not isinstance(valid, bool):
            raise ValueError(f"bad valid flag {valid!r}")
        if not isinstance(speed, (int, float)) or isinstance(speed, bool) or not speed >= 0:
            raise ValueError(f"bad speed {speed!r}")
        coords = (rec["lat"], rec["lon"], rec["alt"])
        if quality is FixQuality.NO_FIX:
            if any(c is not None for c in coords):
                raise ValueError("no-fix record carries a position")
            point = None
        else:
            if any(isinstance(c, bool) or not isinstance(c, (int, float)) for c in coords):
                raise ValueError("position fields must be numbers")
            point = GeoPoint(float(coords[0]), float(coords[1]), float(coords[2]))
        expected = quality is not FixQuality.NO_FIX and sats >= nmea.MIN_SATS
        if valid != expected:
            raise ValueError("valid flag contradicts quality/sats")
    except (KeyError, ValueError, TypeError) as exc:
        raise TrackFormatError(line_no, str(exc)) from None
    return TrackSample(t, point, float(speed), sats, quality, valid)


def import_track(source: IO[str] | Iterable[str], vehicle_id: str = "vehicle") -> Track:
    track = Track(vehicle_id)
    for line_no, line in enumerate(source, start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise TrackFormatError(line_no, f"invalid JSON: {exc.msg}") from None
        s = _sample_from_record(rec, line_no)
        if track.samples and not s.time > track.samples[-1].time:
            raise TrackFormatError(line_no, "timestamps must strictly increase")
        track.samples.append(s)
    if track.samples:
        track.started_at = track.samples[0].time
    return track


def render_track(track: Track, style: str = "ascii") -> str:
    """Text rendering: a 60x20 character map, or a lon/lat table for plotting."""
    pts = [s.point for s in track.valid_samples()]
    if style in ("plot", "plot-data"):
        if not pts:
            raise ValueError("plot-data needs at least one valid sample")
        rows = ["# lon lat"] + [f"{p.lon:.6f} {p.lat:.6f}" for p in pts]
        return "\n".join(rows) + "\n"
    if style not in ("ascii", "ascii-grid"):
        raise ValueError(f"unknown render style {style!r}")
    grid = [["."] * GRID_W for _ in range(GRID_H)]
    if pts:
        lo_lon, hi_lon = min(p.lon for p in pts), max(p.lon for p in pts)
        lo_lat, hi_lat = min(p.lat for p in pts), max(p.lat for p in pts)

        def cell(v, lo, hi, n):
            if hi == lo:
                return (n - 1) // 2
            return min(n - 1, int((v - lo) / (hi - lo) * (n - 1) + 0.5))

        for p in pts:
            col = cell(p.lon, lo_lon, hi_lon, GRID_W)
            row = cell(-p.lat, -hi_lat, -lo_lat, GRID_H)  # north on top
            grid[row][col] = "*"
    return "\n".join("".join(r) for r in grid) + "\n"


# -- replies ----------------------------------------------------------------

def _hms(t: float) -> str:
    return _time.strftime("%H:%M:%S", _time.gmtime(math.floor(t)))


def answer_query(config: ServerConfig, req: CommandRequest, freshest: GpsFix | None, now: float) -> str | None:
    """Reply text for ``req``, or ``None`` when the sender is not authorized."""
    if req.sender not in config.authorized:
        return None
    if freshest is None or not nmea.validity(freshest) or now - freshest.time > config.stale_after:
        return NO_FIX_REPLY
    if req.verb is Verb.SPEED:
        return config.speed_template.format(speed=freshest.speed_kmh, time=_hms(freshest.time))
    p = freshest.point
    return config.loc_template.format(lat=p.lat, lon=p.lon, alt=p.alt, time=_hms(freshest.time))


# -- server loop ------------------------------------------------------------

@dataclass
class RunSummary:
    fixes_recorded: int = 0
    queries_served: int = 0
    queries_rejected: int = 0
    replies_failed: int = 0
    gps_errors: int = 0
    dropped_fixes: int = 0
    error: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)


class TrackerServer:
    def __init__(self, config: ServerConfig, clock, gps_port, session: AtSession, track: Track | None = None):
        self.config = config
        self.clock = clock
        self.gps_port = gps_port
        self.session = session
        self.track = track if track is not None else Track()
        self.summary = RunSummary()
        self.log: list[str] = []
        self._reader = LineReader()
        self._gga: nmea.NmeaSentence | None = None
        self._stopped = False

    def stop(self) -> None:
        self._stopped = True

    def _note(self, msg: str, *args) -> None:
        text = msg % args
        self.log.append(f"{iso_utc(self.clock.now)} {text}")
        logger.info(text)

    # GPS side

    def _discard_gps(self) -> None:
        self.gps_port.read()
        self._reader.reset()
        self._gga = None

    def _pump_gps(self, record: bool) -> list[GpsFix]:
        fixes = []
        for line in self._reader.feed(self.gps_port.read()):
            try:
                sentence = nmea.parse(line)
            except nmea.NmeaError as exc:
                self.summary.gps_errors += 1
                logger.debug("bad GPS line %r: %s", line, exc)
                continue
            if sentence.kind == "GGA":
                self._gga = sentence
            elif sentence.kind == "RMC" and self._gga is not None:
                gga, self._gga = self._gga, None
                try:
                    fix = nmea.extract_fix(gga, sentence)
                except nmea.NmeaError as exc:
                    self.summary.gps_errors += 1
                    logger.debug("unpaired GPS data: %s", exc)
                    continue
                fixes.append(fix)
                if record:
                    self._record(fix)
        return fixes

    def _record(self, fix: GpsFix) -> None:
        before = self.track.dropped
        record_fix(self.track, fix)
        if self.track.dropped == before:
            self.summary.fixes_recorded += 1
        else:
            self.summary.dropped_fixes += 1

    def fresh_fix(self) -> GpsFix | None:
        """Hand the line to the GPS receiver and wait for its next complete fix."""
        if self.config.mode is MonitorMode.CONTINUOUS_PATH:
            self._pump_gps(record=True)
        else:
            self._discard_gps()
        deadline = self.clock.now + self.config.gps_read_timeout
        while True:
            fixes = self._pump_gps(record=False)
            if fixes:
                fix = fixes[0]
                self._record(fix)
                for extra in fixes[1:]:
                    if self.config.mode is MonitorMode.CONTINUOUS_PATH:
                        self._record(extra)
                return fix
            if self.clock.now >= deadline or self.gps_port.closed:
                return None
            self.clock.run_until(lambda: self.gps_port.available() > 0, deadline)

    # GSM side

    def _handle(self, msg: SmsMessage) -> CommandRequest | None:
        verb = parse_command(msg.text)
        if verb is None:
            self.summary.queries_rejected += 1
            self._note("rejected unrecognised text %r from %s", msg.text, msg.from_msisdn)
            return None
        if msg.from_msisdn not in self.config.authorized:
            self.summary.queries_rejected += 1
            self._note("rejected %s from unauthorized %s", verb.value, msg.from_msisdn)
            return None
        return CommandRequest(msg.from_msisdn, verb, self.clock.now)

    def _serve(self, req: CommandRequest) -> None:
        fix = self.fresh_fix()
        reply = answer_query(self.config, req, fix, self.clock.now)
        if reply is None:
            return
        try:
            self.session.send_sms(req.sender, reply)
        except TransportError:
            raise
        except AtError as exc:
            self.summary.replies_failed += 1
            self._note("reply to %s failed: %s", req.sender, exc)
            return
        self.summary.queries_served += 1
        self._note("answered %s from %s: %s", req.verb.value, req.sender, reply)

    def _data_waiting(self) -> bool:
        if self.gps_port.closed:
            return True
        return self.gps_port.available() > 0 or self.session.port.available() > 0

    def run(self, until: float | None = None) -> RunSummary:
        """Serve until ``until`` (virtual time), :meth:`stop`, or a fatal fault."""
        continuous = self.config.mode is MonitorMode.CONTINUOUS_PATH
        try:
            while not self._stopped and (until is None or self.clock.now < until):
                for msg in self.session.read_sms():
                    req = self._handle(msg)
                    if req is not None:
                        self._serve(req)
                if continuous:
                    self._pump_gps(record=True)
                else:
                    self._discard_gps()
                if self.gps_port.closed:
                    raise TransportError("GPS channel closed")
                if not self.clock.run_until(self._data_waiting, until) and until is None:
                    if self.clock.next_event_time() is None:
                        break
        except (TransportError, HardwareFault) as exc:
            self.summary.error = f"{type(exc).__name__}: {exc}"
            self._note("run ended: %s", self.summary.error)
        return self.summary


def run(server: TrackerServer, until: float | None = None) -> RunSummary:
    return server.run(until)


def export_track_text(track: Track) -> str:
    buf = io.StringIO()
    export_track(track, buf)
    return buf.getvalue()
