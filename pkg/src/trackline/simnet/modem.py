"""Scripted GSM modem device: the far end of an :class:`~trackline.atproto.AtSession`."""
from __future__ import annotations

import logging
import re
import time
from dataclasses import dataclass, field
from typing import Sequence

from trackline.atproto import SmsMessage
from trackline.simnet.network import SmsNetwork, Undeliverable

logger = logging.getLogger(__name__)

CTRL_Z = 0x1A
ESC = 0x1B
STORAGE_SLOTS = 255

_CMGS_RE = re.compile(r'^AT\+CMGS="(\+?\d{7,15})"$')
_CMGR_RE = re.compile(r"^AT\+CMGR=(\d+)$")
_CMGD_RE = re.compile(r"^AT\+CMGD=(\d+)(?:,\d)?$")


@dataclass(frozen=True)
class ScriptStep:
    """Reply ``lines`` the next time ``command`` arrives; ``None`` means stay silent."""

    command: str
    lines: tuple[str, ...] | None


@dataclass
class ModemScript:
    steps: list[ScriptStep] = field(default_factory=list)
    silent: bool = False


def _repeat(command: str, lines: Sequence[str] | None, n: int) -> list[ScriptStep]:
    return [ScriptStep(command, None if lines is None else tuple(lines)) for _ in range(n)]


SCRIPTS = {
    "healthy": lambda: ModemScript(),
    "silent": lambda: ModemScript(silent=True),
    "slow-network": lambda: ModemScript(_repeat("AT+CREG?", ["+CREG: 0,2", "OK"], 3)),
    "flaky-at": lambda: ModemScript(_repeat("AT", None, 2)),
    "spaced-creg": lambda: ModemScript([ScriptStep("AT+CREG?", ("+CREG: 0, 1", "OK"))]),
}


def named_script(name: str) -> ModemScript:
    try:
        return SCRIPTS[name]()
    except KeyError:
        raise ValueError(f"unknown modem script {name!r}; known: {', '.join(sorted(SCRIPTS))}") from None


def _frame(lines: Sequence[str]) -> bytes:
    return b"".join(b"\r\n" + line.encode("ascii") + b"\r\n" for line in lines)


def _cmgr_stamp(t: float) -> str:
    st = time.gmtime(int(t))
    return f"{st.tm_year % 100:02d}/{st.tm_mon:02d}/{st.tm_mday:02d},{st.tm_hour:02d}:{st.tm_min:02d}:{st.tm_sec:02d}+00"


class ModemDevice:
    def __init__(self, msisdn: str, script: ModemScript | None = None, network: SmsNetwork | None = None):
        self.msisdn = msisdn
        self.script = script or ModemScript()
        self.network = network
        self.storage: dict[int, tuple[SmsMessage, bool]] = {}
        self.commands: list[str] = []
        self.errors: list[str] = []
        self._inbuf = bytearray()
        self._text_to: str | None = None
        self._ref = 0

    # -- inbound command stream --------------------------------------------

    def step(self, inbound: bytes) -> bytes:
        """Consume bytes from the host and return whatever the modem says back."""
        self._inbuf += inbound
        out = bytearray()
        while self._inbuf:
            if self._text_to is not None:
                z = self._inbuf.find(bytes([CTRL_Z]))
                esc = self._inbuf.find(bytes([ESC]))
                if esc >= 0 and (z < 0 or esc < z):
                    del self._inbuf[: esc + 1]
                    self._text_to = None
                    out += _frame(["OK"])
                    continue
                if z < 0:
                    break
                body = bytes(self._inbuf[:z]).decode("ascii", errors="replace")
                del self._inbuf[: z + 1]
                to, self._text_to = self._text_to, None
                out += self._submit(to, body)
                continue
            cr = self._inbuf.find(b"\r")
            if cr < 0:
                break
            line = bytes(self._inbuf[:cr]).decode("ascii", errors="replace").strip("\n ")
            del self._inbuf[: cr + 1]
            if line:
                out += self._command(line)
        return bytes(out)

    def _command(self, cmd: str) -> bytes:
        self.commands.append(cmd)
        if self.script.steps and self.script.steps[0].command == cmd:
            step = self.script.steps.pop(0)
            return b"" if step.lines is None else _frame(step.lines)
        if self.script.silent:
            return b""
        return self._default(cmd)

    def _default(self, cmd: str) -> bytes:
        if cmd in ("AT", "ATE0"):
            return _frame(["OK"])
        if cmd == "AT+CMGF=1":
            # deliberate: the bring-up sequence pairs text mode with the SIM
            # status line, even though real modems only print it for AT+CPIN?
            return _frame(["+CPIN: READY", "OK"])
        if cmd == "AT+CPIN?":
            return _frame(["+CPIN: READY", "OK"])
        if cmd == "AT+CREG?":
            return _frame(["+CREG: 0,1", "OK"])
        if m := _CMGS_RE.match(cmd):
            self._text_to = m.group(1).lstrip("+")
            return b"\r\n> "
        if m := _CMGR_RE.match(cmd):
            idx = int(m.group(1))
            if idx not in self.storage:
                return _frame(["+CMS ERROR: 321"])
            msg, read = self.storage[idx]
            self.storage[idx] = (msg, True)
            status = "REC READ" if read else "REC UNREAD"
            header = f'+CMGR: "{status}","{msg.from_msisdn}",,"{_cmgr_stamp(msg.sent_at)}"'
            body = header.encode("ascii") + b"\r\n" + msg.text.encode("ascii")
            return b"\r\n" + body + b"\r\n" + _frame(["OK"])
        if m := _CMGD_RE.match(cmd):
            self.storage.pop(int(m.group(1)), None)
            return _frame(["OK"])
        logger.info("modem %s: unscripted command %r", self.msisdn, cmd)
        self.errors.append(cmd)
        return _frame(["ERROR"])

    def _submit(self, to: str, body: str) -> bytes:
        if self.network is None:
            return _frame(["+CMS ERROR: 331"])
        try:
            msg = SmsMessage(self.msisdn, to, body, self.network.clock.now)
            self.network.send(msg)
        except (Undeliverable, ValueError) as exc:
            logger.info("modem %s: send to %s failed: %s", self.msisdn, to, exc)
            return _frame(["+CMS ERROR: 500"])
        self._ref = self._ref % 255 + 1
        return _frame([f"+CMGS: {self._ref}", "OK"])

    # -- network side -------------------------------------------------------

    def deliver(self, msg: SmsMessage) -> bytes:
        """Store an inbound SMS and return the ``+CMTI`` notification bytes."""
        for idx in range(1, STORAGE_SLOTS + 1):
            if idx not in self.storage:
                self.storage[idx] = (msg, False)
                return _frame([f'+CMTI: "SM",{idx}'])
        logger.warning("modem %s: storage full, message from %s lost", self.msisdn, msg.from_msisdn)
        return b""

    def attach(self, port) -> None:
        """Serve the host on ``port`` and accept deliveries from the network."""

        def on_data():
            out = self.step(port.read())
            if out and not port.closed:
                port.write(out)

        def on_sms(msg):
            out = self.deliver(msg)
            if out and not port.closed and not self.script.silent:
                port.write(out)

        port.on_receive(on_data)
        if self.network is not None:
            self.network.register(self.msisdn, on_sms)


def modem_device_step(device: ModemDevice, inbound: bytes) -> bytes:
    return device.step(inbound)
