from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

from trackline.atproto import SmsMessage
from trackline.simnet.clock import VirtualClock

logger = logging.getLogger(__name__)


class Undeliverable(LookupError):
    pass


@dataclass(frozen=True)
class Delivery:
    message: SmsMessage
    sent_at: float
    deliver_at: float


class SmsNetwork:
    """Store-and-forward SMS delivery with a fixed latency.

    Deliveries between one sender and one receiver never overtake each other.
    """

    def __init__(self, clock: VirtualClock, latency: float = 1.0):
        if latency < 0:
            raise ValueError("latency must be >= 0")
        self.clock = clock
        self.latency = latency
        self._subscribers: dict[str, Callable[[SmsMessage], None]] = {}
        self._last: dict[tuple[str, str], float] = {}
        self.log: list[Delivery] = []

    def register(self, msisdn: str, handler: Callable[[SmsMessage], None]) -> None:
        self._subscribers[msisdn] = handler

    def __contains__(self, msisdn: str) -> bool:
        return msisdn in self._subscribers

    def send(self, msg: SmsMessage) -> Delivery:
        handler = self._subscribers.get(msg.to_msisdn)
        if handler is None:
            raise Undeliverable(f"no subscriber {msg.to_msisdn}")
        pair = (msg.from_msisdn, msg.to_msisdn)
        at = max(self.clock.now + self.latency, self._last.get(pair, self.clock.now))
        self._last[pair] = at
        d = Delivery(msg, self.clock.now, at)
        self.log.append(d)
        self.clock.schedule(at, lambda: handler(msg))
        return d


def sms_network_send(net: SmsNetwork, msg: SmsMessage) -> Delivery:
    return net.send(msg)


class Phone:
    """A user's handset: sends texts through the network, keeps an inbox."""

    def __init__(self, msisdn: str, network: SmsNetwork):
        self.msisdn = msisdn
        self.network = network
        self.inbox: list[tuple[float, SmsMessage]] = []
        network.register(msisdn, self._receive)

    def _receive(self, msg: SmsMessage) -> None:
        self.inbox.append((self.network.clock.now, msg))

    def send(self, to: str, text: str) -> Delivery:
        return self.network.send(SmsMessage(self.msisdn, to, text, self.network.clock.now))
