"""Deterministic stand-ins for the physical world: vehicle, receivers, radio links."""
from trackline.simnet.channel import ByteChannel, ChannelClosed, Endpoint
from trackline.simnet.clock import VirtualClock
from trackline.simnet.gps import GpsDevice, NoiseModel, gps_device_tick
from trackline.simnet.modem import ModemDevice, ModemScript, ScriptStep, modem_device_step, named_script
from trackline.simnet.network import Phone, SmsNetwork, Undeliverable, sms_network_send
from trackline.simnet.route import Route, RouteError, Waypoint, route_position_at


def clock_advance(clock: VirtualClock, until: float) -> int:
    return clock.advance(until)


__all__ = [
    "ByteChannel", "ChannelClosed", "Endpoint", "VirtualClock", "GpsDevice", "NoiseModel",
    "gps_device_tick", "ModemDevice", "ModemScript", "ScriptStep", "modem_device_step",
    "named_script", "Phone", "SmsNetwork", "Undeliverable", "sms_network_send", "Route",
    "RouteError", "Waypoint", "route_position_at", "clock_advance",
]
