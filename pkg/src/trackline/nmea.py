"""NMEA-0183 framing plus the GGA/RMC payloads a GPS receiver emits at 1 Hz."""
from __future__ import annotations

import calendar
import datetime
import enum
import math
import re
import time as _time
from dataclasses import dataclass, field

from trackline.geodesy import GeoPoint, normalize_lon

MAX_LINE = 82
MIN_SATS = 4
MAX_SATS = 24

_COORD_RE = re.compile(r"^(\d{2,3})(\d{2})\.(\d{1,6})$")
_TIME_RE = re.compile(r"^(\d{2})(\d{2})(\d{2})(?:\.(\d{1,3}))?$")
_DATE_RE = re.compile(r"^(\d{2})(\d{2})(\d{2})$")
_HEX = "0123456789ABCDEFabcdef"


class NmeaError(ValueError):
    pass


class FramingError(NmeaError):
    pass


class ChecksumError(NmeaError):
    def __init__(self, expected: int, actual: int):
        super().__init__(f"checksum mismatch: computed {expected:02X}, sentence says {actual:02X}")
        self.expected = expected
        self.actual = actual


class FieldError(NmeaError):
    """A payload field is malformed or out of range."""


class PairingError(NmeaError):
    pass


class SentenceKindError(NmeaError, TypeError):
    pass


class FixQuality(enum.IntEnum):
    NO_FIX = 0
    GPS = 1
    DGPS = 2


@dataclass(frozen=True)
class NmeaSentence:
    talker: str
    kind: str
    fields: list[str] = field(default_factory=list)
    checksum: int = 0

    @property
    def payload(self) -> str:
        return ",".join([self.talker + self.kind, *self.fields])


@dataclass(frozen=True)
class GpsFix:
    time: float  # POSIX seconds, UTC, millisecond resolution
    point: GeoPoint | None
    fix_quality: FixQuality = FixQuality.GPS
    num_sats: int = 8
    speed_knots: float = 0.0
    course: float = 0.0
    hdop: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "time", round(self.time, 3))
        object.__setattr__(self, "fix_quality", FixQuality(self.fix_quality))
        if self.fix_quality is FixQuality.NO_FIX:
            object.__setattr__(self, "point", None)
        elif self.point is None:
            raise ValueError("a fix with quality other than NO_FIX needs a position")
        if not 0 <= self.num_sats <= MAX_SATS:
            raise ValueError(f"num_sats {self.num_sats} outside [0, {MAX_SATS}]")
        if not (math.isfinite(self.speed_knots) and self.speed_knots >= 0):
            raise ValueError("speed must be finite and non-negative")
        if not 0.0 <= self.course < 360.0:
            raise ValueError(f"course {self.course} outside [0, 360)")

    @property
    def speed_kmh(self) -> float:
        return self.speed_knots * 1.852


@dataclass(frozen=True)
class FixValidity:
    reason: str | None = None

    @property
    def is_valid(self) -> bool:
        return self.reason is None

    def __bool__(self) -> bool:
        return self.is_valid


VALID = FixValidity()
NO_FIX = "no fix"
INSUFFICIENT_SATS = "insufficient satellites"


def checksum(payload: bytes | str) -> int:
    if isinstance(payload, str):
        payload = payload.encode("ascii")
    cs = 0
    for b in payload:
        cs ^= b
    return cs


def frame(payload: str) -> str:
    """Wrap a payload as ``$payload*CS\\r\\n``."""
    line = f"${payload}*{checksum(payload):02X}\r\n"
    if len(line) > MAX_LINE:
        raise FramingError(f"sentence is {len(line)} chars, limit is {MAX_LINE}")
    return line


def _split_time(t: float) -> tuple[_time.struct_time, int]:
    ms_total = round(t * 1000)
    secs, ms = divmod(ms_total, 1000)
    return _time.gmtime(secs), ms


def _fmt_time(t: float) -> str:
    st, ms = _split_time(t)
    return f"{st.tm_hour:02d}{st.tm_min:02d}{st.tm_sec:02d}.{ms:03d}"


def _fmt_date(t: float) -> str:
    st, _ = _split_time(t)
    return f"{st.tm_mday:02d}{st.tm_mon:02d}{st.tm_year % 100:02d}"


def format_coordinate(deg: float, is_lat: bool) -> tuple[str, str]:
    """Degrees to NMEA ``(d)ddmm.mmmm`` text plus hemisphere letter."""
    hemi = ("N" if deg >= 0 else "S") if is_lat else ("E" if deg >= 0 else "W")
    quanta = round(abs(deg) * 600_000)  # units of 1e-4 arcminute
    d, rem = divmod(quanta, 600_000)
    m_int, m_frac = divmod(rem, 10_000)
    width = 2 if is_lat else 3
    return f"{d:0{width}d}{m_int:02d}.{m_frac:04d}", hemi


def parse_coordinate(text: str, hemi: str) -> float:
    m = _COORD_RE.match(text)
    if not m:
        raise FieldError(f"malformed coordinate {text!r}")
    if hemi not in ("N", "S", "E", "W"):
        raise FieldError(f"bad hemisphere {hemi!r}")
    degrees = int(m.group(1))
    minutes = float(f"{m.group(2)}.{m.group(3)}")
    if minutes >= 60:
        raise FieldError(f"minutes {minutes} out of range in {text!r}")
    value = degrees + minutes / 60
    return -value if hemi in ("S", "W") else value


def encode_gga(fix: GpsFix) -> str:
    if fix.fix_quality is FixQuality.NO_FIX:
        pos = ["", "", "", ""]
        hdop = alt = geoid = ""
    else:
        lat, ns = format_coordinate(fix.point.lat, True)
        lon, ew = format_coordinate(fix.point.lon, False)
        pos = [lat, ns, lon, ew]
        hdop, alt, geoid = f"{fix.hdop:.1f}", f"{fix.point.alt:.1f}", "0.0"
    fields = [
        _fmt_time(fix.time), *pos, str(int(fix.fix_quality)), f"{fix.num_sats:02d}",
        hdop, alt, "M", geoid, "M", "", "",
    ]
    return frame(",".join(["GPGGA", *fields]))


def encode_rmc(fix: GpsFix) -> str:
    if fix.fix_quality is FixQuality.NO_FIX:
        fields = [_fmt_time(fix.time), "V", "", "", "", "", "", "", _fmt_date(fix.time), "", "", "N"]
    else:
        lat, ns = format_coordinate(fix.point.lat, True)
        lon, ew = format_coordinate(fix.point.lon, False)
        course = round(fix.course, 1) % 360.0
        mode = "D" if fix.fix_quality is FixQuality.DGPS else "A"
        fields = [
            _fmt_time(fix.time), "A", lat, ns, lon, ew,
            f"{fix.speed_knots:.1f}", f"{course:.1f}", _fmt_date(fix.time), "", "", mode,
        ]
    return frame(",".join(["GPRMC", *fields]))


def parse(line: bytes | str) -> NmeaSentence:
    """Parse one framed sentence, verifying its checksum.

    Any input is accepted; failures surface only as :class:`NmeaError`
    subclasses.
    """
    if isinstance(line, (bytes, bytearray)):
        try:
            line = bytes(line).decode("ascii")
        except UnicodeDecodeError:
            raise FramingError("non-ASCII byte in sentence") from None
    elif not isinstance(line, str):
        raise FramingError(f"cannot parse {type(line).__name__}")
    if not line.isascii():
        raise FramingError("non-ASCII character in sentence")
    if line.endswith("\r\n"):
        line = line[:-2]
    elif line.endswith("\n"):
        line = line[:-1]
    if len(line) + 2 > MAX_LINE:
        raise FramingError("sentence too long")
    if not line.startswith("$"):
        raise FramingError("missing '$' start delimiter")
    star = line.rfind("*")
    if star < 0 or len(line) - star != 3:
        raise FramingError("missing '*hh' checksum trailer")
    body, cs_text = line[1:star], line[star + 1 :]
    if not all(c in _HEX for c in cs_text):
        raise FramingError(f"checksum {cs_text!r} is not hex")
    if any(c in "$*\r\n" for c in body) or any(not c.isprintable() for c in body):
        raise FramingError("illegal character inside sentence")
    actual = int(cs_text, 16)
    expected = checksum(body)
    if expected != actual:
        raise ChecksumError(expected, actual)
    parts = body.split(",")
    address = parts[0]
    if len(address) != 5 or not address.isalnum() or not address.isupper():
        raise FramingError(f"bad address field {address!r}")
    return NmeaSentence(address[:2], address[2:], parts[1:], actual)


def _field(fields: list[str], i: int) -> str:
    return fields[i] if i < len(fields) else ""


def _parse_tod(text: str) -> float:
    m = _TIME_RE.match(text)
    if not m:
        raise FieldError(f"malformed time {text!r}")
    hh, mm, ss = (int(g) for g in m.groups()[:3])
    if hh > 23 or mm > 59 or ss > 60:
        raise FieldError(f"time {text!r} out of range")
    ms = int((m.group(4) or "0").ljust(3, "0"))
    return hh * 3600 + mm * 60 + ss + ms / 1000


def _parse_date(text: str) -> int:
    m = _DATE_RE.match(text)
    if not m:
        raise FieldError(f"malformed date {text!r}")
    day, month, yy = (int(g) for g in m.groups())
    year = 2000 + yy if yy < 80 else 1900 + yy
    try:
        d = datetime.date(year, month, day)
    except ValueError:
        raise FieldError(f"date {text!r} out of range") from None
    return calendar.timegm(d.timetuple())


def _float(text: str, what: str, default: float | None = None) -> float:
    if text == "" and default is not None:
        return default
    try:
        value = float(text)
    except ValueError:
        raise FieldError(f"malformed {what} {text!r}") from None
    if not math.isfinite(value):
        raise FieldError(f"non-finite {what}")
    return value


def extract_fix(gga: NmeaSentence, rmc: NmeaSentence) -> GpsFix:
    """Merge one second's GGA and RMC into a fix.

    Position, altitude, quality and satellite count come from GGA; speed,
    course and date from RMC.
    """
    if gga.kind != "GGA" or rmc.kind != "RMC":
        raise SentenceKindError(f"expected GGA+RMC, got {gga.kind}+{rmc.kind}")
    g, r = gga.fields, rmc.fields
    if _field(g, 0) != _field(r, 0):
        raise PairingError(f"GGA time {_field(g, 0)!r} != RMC time {_field(r, 0)!r}")
    t = _parse_date(_field(r, 8)) + _parse_tod(_field(g, 0))
    try:
        quality = FixQuality(int(_field(g, 5) or "0"))
    except ValueError:
        raise FieldError(f"unknown fix quality {_field(g, 5)!r}") from None
    sats_text = _field(g, 6) or "0"
    if not sats_text.isdigit():
        raise FieldError(f"malformed satellite count {sats_text!r}")
    num_sats = int(sats_text)
    if num_sats > MAX_SATS:
        raise FieldError(f"satellite count {num_sats} exceeds {MAX_SATS}")
    if quality is FixQuality.NO_FIX:
        return GpsFix(t, None, quality, num_sats)
    lat = parse_coordinate(_field(g, 1), _field(g, 2))
    lon = parse_coordinate(_field(g, 3), _field(g, 4))
    if abs(lat) > 90 or abs(lon) > 180:
        raise FieldError("coordinate out of range")
    alt = _float(_field(g, 8), "altitude", 0.0)
    hdop = _float(_field(g, 7), "hdop", 99.9)
    speed = _float(_field(r, 6), "speed", 0.0)
    course = _float(_field(r, 7), "course", 0.0) % 360.0
    if speed < 0:
        raise FieldError("negative speed")
    return GpsFix(t, GeoPoint(lat, normalize_lon(lon), alt), quality, num_sats, speed, course, hdop)


def validity(fix: GpsFix) -> FixValidity:
    if fix.fix_quality is FixQuality.NO_FIX:
        return FixValidity(NO_FIX)
    if fix.num_sats < MIN_SATS:
        return FixValidity(INSUFFICIENT_SATS)
    return VALID


class LineReader:
    """Reassemble CRLF-terminated sentences from an arbitrary byte stream."""

    def __init__(self):
        self._buf = bytearray()

    def feed(self, data: bytes) -> list[bytes]:
        self._buf += data
        lines = []
        while True:
            end = self._buf.find(b"\n")
            if end < 0:
                break
            raw = bytes(self._buf[: end + 1])
            del self._buf[: end + 1]
            start = raw.rfind(b"$")
            if start >= 0:
                lines.append(raw[start:])
        if len(self._buf) > 4 * MAX_LINE:
            # runaway junk without terminators
            start = self._buf.rfind(b"$")
            del self._buf[: start if start >= 0 else len(self._buf)]
        return lines

    def reset(self):
        self._buf.clear()
