import math

import pytest
import yaml

from trackline.atproto import AtSession
from trackline.geodesy import EARTH_RADIUS_M
from trackline.scenario import loads
from trackline.simnet import ByteChannel, ModemDevice, ModemScript, SmsNetwork, VirtualClock

T0 = 1370066400.0  # 2013-06-01T06:00:00Z
SERVER = "919437000000"
USER = "919437000001"
STRANGER = "919437000666"


class ModemRig:
    """Host session wired to a scripted modem over a 9600-baud line."""

    def __init__(self, script=None, latency=1.0, start=T0):
        self.clock = VirtualClock(start)
        self.channel = ByteChannel(self.clock, 9600, "gsm")
        self.network = SmsNetwork(self.clock, latency)
        self.device = ModemDevice(SERVER, script or ModemScript(), self.network)
        self.device.attach(self.channel.b)
        self.session = AtSession(self.channel.a, self.clock, SERVER)

    def host_writes(self) -> bytes:
        return b"".join(e.data for e in self.channel.trace if e.direction == "a>b")


@pytest.fixture
def rig():
    return ModemRig


def east_route_points(lat, lon, speed_ms, duration, step=60):
    """Waypoints for a constant-speed due-east drive, one every ``step`` seconds."""
    pts = []
    t = 0
    while True:
        dlon = math.degrees(speed_ms * t / (EARTH_RADIUS_M * math.cos(math.radians(lat))))
        pts.append({"t": t, "lat": lat, "lon": round(lon + dlon, 9), "alt": 45.0})
        if t >= duration:
            break
        t = min(duration, t + step)
    return pts


def scenario_dict(**over):
    base = {
        "seed": 7,
        "start": "2013-06-01T06:00:00Z",
        "duration": 60,
        "route": east_route_points(20.2961, 85.8245, 10.0, 60),
        "noise": {"sigma": 0.0, "dropout": 0.0},
        "gsm": {"script": "healthy", "sms_latency": 1.0},
        "server": {"msisdn": SERVER, "users": [USER], "mode": "continuous"},
        "phones": [USER, STRANGER],
        "schedule": [],
    }
    for key, value in over.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            base[key] = {**base[key], **value}
        else:
            base[key] = value
    return base


def scenario_text(**over):
    return yaml.safe_dump(scenario_dict(**over), sort_keys=False)


def make_scenario(**over):
    return loads(scenario_text(**over))


ORBIT_RADIUS_M = EARTH_RADIUS_M + 20_200_000.0


def random_constellation(rng, n_sats, max_bias=3e4, min_elev_deg=15.0, max_gdop=15.0):
    """Receiver on the ellipsoid plus ``n_sats`` visible satellites at GPS orbit radius.

    Returns (truth_ecef, bias, sat_positions).  Pseudoranges are left to the
    caller so the forward model stays visible in each test.
    """
    import numpy as np

    from trackline.geodesy import GeoPoint, geodetic_to_ecef

    while True:
        lat = math.degrees(math.asin(rng.uniform(-0.98, 0.98)))
        lon = rng.uniform(-179.9, 180.0)
        rx = geodetic_to_ecef(GeoPoint(lat, lon, 0.0)).as_array()
        up = rx / np.linalg.norm(rx)
        east = np.cross([0.0, 0.0, 1.0], up)
        east /= np.linalg.norm(east)
        north = np.cross(up, east)
        sats = []
        for _ in range(n_sats):
            el = math.radians(rng.uniform(min_elev_deg, 90.0))
            az = rng.uniform(0, 2 * math.pi)
            u = math.cos(el) * (math.sin(az) * east + math.cos(az) * north) + math.sin(el) * up
            b = rx @ u
            s = -b + math.sqrt(b * b - rx @ rx + ORBIT_RADIUS_M**2)
            sats.append(rx + s * u)
        sats = np.array(sats)
        los = (rx - sats) / np.linalg.norm(rx - sats, axis=1)[:, None]
        h = np.hstack([los, np.ones((n_sats, 1))])
        gdop = math.sqrt(np.trace(np.linalg.inv(h.T @ h)))
        if gdop <= max_gdop:
            return rx, rng.uniform(-max_bias, max_bias), sats
