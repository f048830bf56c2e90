"""Simulated GPS receiver: samples the route once a second and emits GGA+RMC."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from trackline.geodesy import offset_point
from trackline.nmea import FixQuality, GpsFix, encode_gga, encode_rmc
from trackline.simnet.channel import Endpoint
from trackline.simnet.clock import VirtualClock
from trackline.simnet.route import Route

MS_TO_KNOTS = 3600 / 1852


@dataclass(frozen=True)
class NoiseModel:
    """Horizontal position noise.

    ``sigma`` is the 2-D RMS error in meters; each of the north and east
    components is drawn with standard deviation ``sigma / sqrt(2)``.
    """

    sigma: float = 0.0
    dropout_prob: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not (math.isfinite(self.sigma) and self.sigma >= 0):
            raise ValueError("sigma must be finite and >= 0")
        if not 0.0 <= self.dropout_prob <= 1.0:
            raise ValueError("dropout_prob must lie in [0, 1]")


class GpsDevice:
    def __init__(
        self,
        route: Route,
        noise: NoiseModel = NoiseModel(),
        num_sats: int = 8,
        hdop: float = 1.0,
    ):
        self.route = route
        self.noise = noise
        self.num_sats = num_sats
        self.hdop = hdop
        self.rng = np.random.default_rng(noise.seed)
        self.ticks = 0

    def sample(self, t: float) -> GpsFix:
        # draw the same amount of randomness every tick so streams stay aligned
        drop, north, east = self.rng.random(), *self.rng.normal(0.0, 1.0, 2)
        if t not in self.route or drop < self.noise.dropout_prob:
            return GpsFix(t, None, FixQuality.NO_FIX, 0)
        per_axis = self.noise.sigma / math.sqrt(2)
        truth = self.route.position_at(t)
        point = offset_point(truth, north * per_axis, east * per_axis) if per_axis else truth
        return GpsFix(
            t,
            point,
            FixQuality.GPS,
            self.num_sats,
            self.route.speed_at(t) * MS_TO_KNOTS,
            self.route.course_at(t),
            self.hdop,
        )

    def tick(self, t: float) -> list[str]:
        fix = self.sample(t)
        self.ticks += 1
        return [encode_gga(fix), encode_rmc(fix)]

    def attach(self, clock: VirtualClock, port: Endpoint, start: float, stop: float) -> None:
        """Emit one sentence pair per second on ``port`` for ticks in ``[start, stop)``."""

        def fire(k=0):
            if port.closed:
                return
            t = start + k
            port.write("".join(self.tick(t)).encode("ascii"))
            if start + k + 1 < stop:
                clock.schedule(start + k + 1, lambda: fire(k + 1))

        if start < stop:
            clock.schedule(start, fire)


def gps_device_tick(device: GpsDevice, t: float) -> list[str]:
    return device.tick(t)
