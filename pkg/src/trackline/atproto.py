"""Host side of the GSM modem dialect: AT commands, modem bring-up, SMS in text mode.

A session drives one byte port (anything with ``write``, ``read``,
``available`` and ``closed``) and waits on a clock that provides ``now`` and
``run_until(predicate, deadline)``.  All timeouts are measured on that clock.
"""
from __future__ import annotations

import calendar
import enum
import logging
import re
from dataclasses import dataclass, field

logger = logging.getLogger(__name__)

CR = b"\r"
CTRL_Z = b"\x1a"
SMS_MAX_LEN = 160

_CREG_RE = re.compile(r"^\+CREG:\s*(\d)\s*,\s*(\d)")
_CPIN_READY_RE = re.compile(r"^\+CPIN:\s*READY\s*$")
_CMTI_RE = re.compile(r'^\+CMTI:\s*"(\w+)"\s*,\s*(\d+)\s*$')
_CMGS_RE = re.compile(r"^\+CMGS:\s*(\d+)\s*$")
_CMGR_RE = re.compile(
    r'^\+CMGR:\s*"([^"]*)"\s*,\s*"(\+?\d{7,15})"\s*,[^,]*,\s*'
    r'"(\d{2})/(\d{2})/(\d{2}),(\d{2}):(\d{2}):(\d{2})([+-]\d{1,2})?"\s*$'
)
_MSISDN_RE = re.compile(r"^\d{7,15}$")


class AtError(Exception):
    pass


class TransportError(AtError, ConnectionError):
    pass


class AtTimeout(AtError, TimeoutError):
    pass


class PreconditionError(AtError, ValueError):
    pass


class SendFailure(AtError):
    pass


class SmsParseError(AtError, ValueError):
    def __init__(self, message: str, raw: bytes):
        super().__init__(message)
        self.raw = raw


class HardwareFault(AtError):
    """The modem never answered ``AT``; something is physically wrong."""

    def __init__(self, message: str, restarts: int):
        super().__init__(message)
        self.restarts = restarts


class SimNotReady(AtError):
    def __init__(self, message: str, restarts: int):
        super().__init__(message)
        self.restarts = restarts


class NotRegistered(AtError):
    def __init__(self, message: str, polls: int):
        super().__init__(message)
        self.polls = polls


@dataclass(frozen=True)
class AtCommand:
    text: str

    def __post_init__(self):
        if not self.text.startswith("AT"):
            raise ValueError(f"AT command must start with 'AT': {self.text!r}")
        if "\r" in self.text or "\n" in self.text:
            raise ValueError("AT command must not contain CR or LF")
        if not self.text.isascii():
            raise ValueError("AT command must be ASCII")

    def wire(self) -> bytes:
        return self.text.encode("ascii") + CR


class Final(enum.Enum):
    OK = "OK"
    ERROR = "ERROR"
    TIMEOUT = "TIMEOUT"


@dataclass(frozen=True)
class AtResponse:
    info_lines: list[str]
    final: Final

    @property
    def ok(self) -> bool:
        return self.final is Final.OK


class Stage(enum.IntEnum):
    UNVERIFIED = 0
    ALIVE = 1
    SIM_READY = 2
    REGISTERED = 3


@dataclass
class ModemState:
    stage: Stage = Stage.UNVERIFIED
    retries: dict[str, int] = field(default_factory=lambda: {"at": 0, "sim": 0, "network": 0})


@dataclass(frozen=True)
class InitPolicy:
    """Bring-up knobs.

    ``max_restarts`` caps consecutive failed ``AT`` probes before declaring a
    hardware fault, and also caps SIM-check restarts.  ``max_polls=None``
    polls network registration forever.
    """

    timeout: float = 2.0
    max_restarts: int = 5
    max_polls: int | None = None
    poll_interval: float = 1.0


def _is_valid_sms_text(text: str) -> bool:
    return all(32 <= ord(c) < 127 or c == "\n" for c in text)


@dataclass(frozen=True)
class SmsMessage:
    from_msisdn: str
    to_msisdn: str
    text: str
    sent_at: float

    def __post_init__(self):
        for name in ("from_msisdn", "to_msisdn"):
            if not _MSISDN_RE.match(getattr(self, name)):
                raise ValueError(f"{name} {getattr(self, name)!r} must be 7-15 digits")
        if len(self.text) > SMS_MAX_LEN:
            raise ValueError(f"SMS text is {len(self.text)} chars, limit is {SMS_MAX_LEN}")
        if not _is_valid_sms_text(self.text):
            raise ValueError("SMS text must be printable ASCII")


class AtSession:
    """Exclusive, half-duplex conversation with one modem."""

    def __init__(self, port, clock, msisdn: str | None = None, timeout: float = 2.0):
        self.port = port
        self.clock = clock
        self.msisdn = msisdn
        self.timeout = timeout
        self.state = ModemState()
        self._buf = bytearray()
        self.unsolicited: list[str] = []
        self._pending_sms: list[int] = []

    # -- low-level line handling -------------------------------------------

    def _pull(self) -> None:
        if self.port.available():
            self._buf += self.port.read()

    def _next_line(self) -> str | None:
        end = self._buf.find(b"\r\n")
        if end < 0:
            return None
        raw = bytes(self._buf[:end])
        del self._buf[: end + 2]
        return raw.decode("ascii", errors="replace")

    def _note_unsolicited(self, line: str) -> bool:
        m = _CMTI_RE.match(line)
        if m:
            self._pending_sms.append(int(m.group(2)))
            self.unsolicited.append(line)
            return True
        if line.startswith("+CREG:") and line.count(",") == 0:
            self.unsolicited.append(line)
            return True
        return False

    def poll(self) -> None:
        """Consume whatever has arrived without sending anything."""
        self._pull()
        while (line := self._next_line()) is not None:
            line = line.strip()
            if line and not self._note_unsolicited(line):
                logger.debug("discarding stray modem line %r", line)

    def _wait(self, deadline: float) -> bool:
        return self.clock.run_until(lambda: self.port.available() > 0, deadline)

    def _write(self, data: bytes) -> None:
        if self.port.closed:
            raise TransportError("modem channel is closed")
        try:
            self.port.write(data)
        except ConnectionError as exc:
            raise TransportError(str(exc)) from exc

    def _collect(self, deadline: float, body_after: str | None = None) -> AtResponse:
        """Gather lines until a final result code or ``deadline``.

        When ``body_after`` is given, the line following a line with that
        prefix is taken verbatim as message body, even if it reads "OK".
        """
        info: list[str] = []
        expect_body = False
        while True:
            self._pull()
            while (raw := self._next_line()) is not None:
                if expect_body:
                    info.append(raw)
                    expect_body = False
                    continue
                line = raw.strip()
                if not line or self._note_unsolicited(line):
                    continue
                if line == "OK":
                    return AtResponse(info, Final.OK)
                if line == "ERROR":
                    return AtResponse(info, Final.ERROR)
                if line.startswith(("+CMS ERROR", "+CME ERROR")):
                    info.append(line)
                    return AtResponse(info, Final.ERROR)
                info.append(line)
                expect_body = body_after is not None and line.startswith(body_after)
            if self.clock.now >= deadline:
                return AtResponse(info, Final.TIMEOUT)
            if self.port.closed and not self.port.available():
                raise TransportError("modem channel closed mid-response")
            self._wait(deadline)

    def _wait_for_prompt(self, deadline: float) -> bool:
        while True:
            self._pull()
            while True:
                idx = self._buf.find(b"> ")
                nl = self._buf.find(b"\r\n")
                if 0 <= idx and (nl < 0 or idx < nl):
                    del self._buf[: idx + 2]
                    return True
                if nl < 0:
                    break
                line = self._next_line().strip()
                if line and not self._note_unsolicited(line):
                    if line == "ERROR" or line.startswith("+CMS ERROR"):
                        raise SendFailure(f"modem refused message: {line}")
            if self.clock.now >= deadline:
                return False
            self._wait(deadline)

    # -- operations ---------------------------------------------------------

    def send_at(
        self, cmd: AtCommand | str, timeout: float | None = None, body_after: str | None = None
    ) -> AtResponse:
        """Write ``cmd`` + CR and classify whatever comes back within ``timeout``.

        A silent modem yields ``Final.TIMEOUT``; only a closed channel raises.
        """
        if isinstance(cmd, str):
            cmd = AtCommand(cmd)
        timeout = self.timeout if timeout is None else timeout
        self.poll()
        self._write(cmd.wire())
        return self._collect(self.clock.now + timeout, body_after)

    def init_modem(self, policy: InitPolicy = InitPolicy()) -> ModemState:
        """Bring the modem to ``REGISTERED``: probe, SIM check, network poll.

        Raises:
            HardwareFault: ``AT`` failed ``policy.max_restarts`` times in a row.
            SimNotReady: the SIM check failed ``policy.max_restarts`` times.
            NotRegistered: registration polling hit ``policy.max_polls``.
        """
        state = ModemState()
        self.state = state

        # stage 1: is anyone there?
        while True:
            sent = self.clock.now
            resp = self.send_at("AT", policy.timeout)
            if resp.ok:
                break
            state.retries["at"] += 1
            logger.warning("no OK to AT (%s), restart %d", resp.final.name, state.retries["at"])
            if state.retries["at"] >= policy.max_restarts:
                raise HardwareFault(
                    f"modem silent after {state.retries['at']} restarts", state.retries["at"]
                )
            self._sleep_until(sent + policy.timeout)
        state.stage = Stage.ALIVE

        # stage 2: SIM presence, checked with CMGF=1 and expecting +CPIN: READY
        while True:
            sent = self.clock.now
            resp = self.send_at("AT+CMGF=1", policy.timeout)
            if resp.final is not Final.ERROR and any(_CPIN_READY_RE.match(l) for l in resp.info_lines):
                break
            state.retries["sim"] += 1
            logger.warning("SIM not ready (%s %s)", resp.final.name, resp.info_lines)
            if state.retries["sim"] >= policy.max_restarts:
                raise SimNotReady(f"SIM not ready after {state.retries['sim']} restarts", state.retries["sim"])
            self._sleep_until(sent + policy.timeout)
        state.stage = Stage.SIM_READY

        # stage 3: poll until registered on the home network
        while True:
            resp = self.send_at("AT+CREG?", policy.timeout)
            if resp.ok and any(is_registered(l) for l in resp.info_lines):
                break
            state.retries["network"] += 1
            if policy.max_polls is not None and state.retries["network"] >= policy.max_polls:
                raise NotRegistered(
                    f"not registered after {state.retries['network']} polls", state.retries["network"]
                )
            self.clock.run_until(lambda: False, self.clock.now + policy.poll_interval)
        state.stage = Stage.REGISTERED
        return state

    def _sleep_until(self, t: float) -> None:
        if t > self.clock.now:
            self.clock.run_until(lambda: False, t)

    def send_sms(self, to: str, text: str, timeout: float | None = None) -> int:
        """Send one text-mode SMS; returns the network message reference."""
        if self.state.stage is not Stage.REGISTERED:
            raise PreconditionError(f"modem is {self.state.stage.name}, not REGISTERED")
        if not _MSISDN_RE.match(to):
            raise PreconditionError(f"bad destination {to!r}")
        if len(text) > SMS_MAX_LEN:
            raise PreconditionError(f"SMS text is {len(text)} chars, limit is {SMS_MAX_LEN}")
        if not _is_valid_sms_text(text):
            raise PreconditionError("SMS text must be printable ASCII")
        timeout = self.timeout if timeout is None else timeout
        self.poll()
        self._write(AtCommand(f'AT+CMGS="{to}"').wire())
        if not self._wait_for_prompt(self.clock.now + timeout):
            raise AtTimeout("no '> ' prompt from modem")
        self._write(text.encode("ascii") + CTRL_Z)
        # the network leg can take a while; allow a generous window
        resp = self._collect(self.clock.now + max(timeout, 5.0))
        if resp.final is Final.TIMEOUT:
            raise AtTimeout("no confirmation for sent SMS")
        if resp.final is Final.ERROR:
            raise SendFailure(f"send failed: {resp.info_lines}")
        for line in resp.info_lines:
            m = _CMGS_RE.match(line)
            if m:
                return int(m.group(1))
        raise SendFailure(f"no +CMGS reference in {resp.info_lines}")

    def read_sms(self) -> list[SmsMessage]:
        """Fetch and delete every message announced by ``+CMTI``, in arrival order."""
        if self.state.stage is not Stage.REGISTERED:
            raise PreconditionError(f"modem is {self.state.stage.name}, not REGISTERED")
        if self.msisdn is None:
            raise PreconditionError("session has no own msisdn to address inbound messages")
        self.poll()
        out = []
        while self._pending_sms:
            index = self._pending_sms.pop(0)
            resp = self.send_at(f"AT+CMGR={index}", body_after="+CMGR:")
            if resp.final is not Final.OK:
                logger.warning("CMGR=%d failed: %s %s", index, resp.final.name, resp.info_lines)
                continue
            out.append(parse_cmgr(resp.info_lines, self.msisdn))
            self.send_at(f"AT+CMGD={index}")
        return out


def is_registered(line: str) -> bool:
    m = _CREG_RE.match(line)
    return bool(m) and m.group(2) == "1"


def parse_cmgr(lines: list[str], own_msisdn: str) -> SmsMessage:
    raw = "\r\n".join(lines).encode("ascii", errors="replace")
    if not lines:
        raise SmsParseError("empty CMGR response", raw)
    m = _CMGR_RE.match(lines[0])
    if not m:
        raise SmsParseError(f"unrecognised CMGR header {lines[0]!r}", raw)
    sender = m.group(2).lstrip("+")
    yy, mo, dd, hh, mi, ss = (int(g) for g in m.groups()[2:8])
    quarters = int(m.group(9) or 0)
    try:
        ts = calendar.timegm((2000 + yy, mo, dd, hh, mi, ss)) - quarters * 900
        return SmsMessage(sender, own_msisdn, "\n".join(lines[1:]), float(ts))
    except (ValueError, OverflowError) as exc:
        raise SmsParseError(str(exc), raw) from exc


# Functional spellings of the session methods.

def send_at(session: AtSession, cmd: AtCommand | str, timeout: float | None = None) -> AtResponse:
    return session.send_at(cmd, timeout)


def init_modem(session: AtSession, policy: InitPolicy = InitPolicy()) -> ModemState:
    return session.init_modem(policy)


def send_sms(session: AtSession, to: str, text: str) -> int:
    return session.send_sms(to, text)


def read_sms(session: AtSession) -> list[SmsMessage]:
    return session.read_sms()
