"""Coordinate math for the tracker.

Distances, speeds and tracking error use a spherical Earth.  The WGS-84
ellipsoid is only used as the Cartesian frame for the pseudorange solver.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

EARTH_RADIUS_M = 6_371_008.8
"""Mean Earth radius (IUGG) used for great-circle math."""

WGS84_A = 6_378_137.0
WGS84_F = 1 / 298.257223563
WGS84_B = WGS84_A * (1 - WGS84_F)
WGS84_E2 = WGS84_F * (2 - WGS84_F)

KNOT_KMH = 1.852

FUNDAMENTAL_KHZ = 10_230
"""GPS fundamental clock, 10.23 MHz (L1 = 1575.42 MHz is its 154th multiple).

Kept as an integer in kHz so every carrier is one correctly rounded division
and prints as the familiar literal."""
FUNDAMENTAL_MHZ = FUNDAMENTAL_KHZ / 1000

MAX_CONDITION = 1e12


class GeodesyError(ValueError):
    pass


class OutOfOrderError(GeodesyError):
    """Fix timestamps do not strictly increase."""


class ConversionError(GeodesyError):
    """ECEF to geodetic iteration did not converge."""


class UnderdeterminedError(GeodesyError):
    pass


class GeometryError(GeodesyError):
    pass


class NonConvergenceError(GeodesyError):
    def __init__(self, message: str, last: PositionSolution):
        super().__init__(message)
        self.last = last


class SpanError(GeodesyError):
    def __init__(self, message: str, timestamps: Sequence[float] = ()):
        super().__init__(message)
        self.timestamps = list(timestamps)


@dataclass(frozen=True)
class GeoPoint:
    lat: float
    lon: float
    alt: float = 0.0

    def __post_init__(self):
        for name in ("lat", "lon", "alt"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"latitude {self.lat} outside [-90, 90]")
        if not -180.0 < self.lon <= 180.0:
            raise ValueError(f"longitude {self.lon} outside (-180, 180]")


@dataclass(frozen=True)
class EcefPoint:
    x: float
    y: float
    z: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.x, self.y, self.z)):
            raise ValueError("ECEF coordinates must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=float)

    @classmethod
    def from_array(cls, v) -> EcefPoint:
        return cls(float(v[0]), float(v[1]), float(v[2]))

    def distance_to(self, other: EcefPoint) -> float:
        return math.dist((self.x, self.y, self.z), (other.x, other.y, other.z))


@dataclass(frozen=True)
class SatObservation:
    sat_pos: EcefPoint
    pseudorange: float

    def __post_init__(self):
        if not (math.isfinite(self.pseudorange) and self.pseudorange > 0):
            raise ValueError("pseudorange must be positive and finite")


@dataclass(frozen=True)
class PositionSolution:
    pos: EcefPoint
    clock_bias: float
    iterations: int
    residual_rms: float


class GpsBand(enum.Enum):
    L1 = 154
    L2 = 120
    L5 = 115

    @property
    def multiplier(self) -> int:
        return self.value


def carrier_frequency(band: GpsBand) -> float:
    """Carrier frequency of ``band`` in MHz."""
    return band.multiplier * FUNDAMENTAL_KHZ / 1000


def normalize_lon(lon: float) -> float:
    """Wrap a longitude into (-180, 180]."""
    lon = math.fmod(lon, 360.0)
    if lon <= -180.0:
        lon += 360.0
    elif lon > 180.0:
        lon -= 360.0
    return lon


def haversine_distance(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance in meters, ignoring altitude."""
    phi1, phi2 = math.radians(a.lat), math.radians(b.lat)
    dphi = phi2 - phi1
    dlam = math.radians(b.lon - a.lon)
    h = math.sin(dphi / 2) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlam / 2) ** 2
    return 2 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(h)))


def initial_bearing(a: GeoPoint, b: GeoPoint) -> float:
    """Initial great-circle course from ``a`` to ``b``, degrees in [0, 360)."""
    phi1, phi2 = math.radians(a.lat), math.radians(b.lat)
    dlam = math.radians(b.lon - a.lon)
    y = math.sin(dlam) * math.cos(phi2)
    x = math.cos(phi1) * math.sin(phi2) - math.sin(phi1) * math.cos(phi2) * math.cos(dlam)
    brg = math.degrees(math.atan2(y, x)) % 360.0
    return 0.0 if brg >= 360.0 else brg


def offset_point(p: GeoPoint, north_m: float, east_m: float) -> GeoPoint:
    """Shift ``p`` by a small local north/east displacement."""
    lat = p.lat + math.degrees(north_m / EARTH_RADIUS_M)
    lat = max(-90.0, min(90.0, lat))
    coslat = math.cos(math.radians(p.lat))
    dlon = math.degrees(east_m / (EARTH_RADIUS_M * coslat)) if coslat > 1e-12 else 0.0
    return GeoPoint(lat, normalize_lon(p.lon + dlon), p.alt)


def knots_to_kmh(knots: float) -> float:
    return knots * KNOT_KMH


def ground_speed(prev, curr) -> float:
    """Average speed in km/h between two fixes.

    Both arguments need ``time`` (seconds) and ``point`` (GeoPoint) attributes.
    """
    dt = curr.time - prev.time
    if not dt > 0:
        raise OutOfOrderError(f"fix at {curr.time} does not follow fix at {prev.time}")
    return haversine_distance(prev.point, curr.point) / dt * 3.6


def geodetic_to_ecef(p: GeoPoint) -> EcefPoint:
    phi, lam = math.radians(p.lat), math.radians(p.lon)
    sin_phi = math.sin(phi)
    n = WGS84_A / math.sqrt(1 - WGS84_E2 * sin_phi * sin_phi)
    x = (n + p.alt) * math.cos(phi) * math.cos(lam)
    y = (n + p.alt) * math.cos(phi) * math.sin(lam)
    z = (n * (1 - WGS84_E2) + p.alt) * sin_phi
    return EcefPoint(x, y, z)


def ecef_to_geodetic(e: EcefPoint, max_iter: int = 20) -> GeoPoint:
    """Invert :func:`geodetic_to_ecef` by fixed-point iteration on latitude.

    Raises:
        ConversionError: if latitude has not settled after ``max_iter`` steps.
    """
    p = math.hypot(e.x, e.y)
    lon = normalize_lon(math.degrees(math.atan2(e.y, e.x))) if p > 0 else 0.0
    phi = math.atan2(e.z, p * (1 - WGS84_E2))
    for _ in range(max_iter):
        sin_phi = math.sin(phi)
        n = WGS84_A / math.sqrt(1 - WGS84_E2 * sin_phi * sin_phi)
        nxt = math.atan2(e.z + WGS84_E2 * n * sin_phi, p)
        if abs(nxt - phi) < 1e-14:
            phi = nxt
            break
        phi = nxt
    else:
        raise ConversionError(f"latitude iteration did not converge in {max_iter} steps")
    sin_phi = math.sin(phi)
    alt = p * math.cos(phi) + e.z * sin_phi - WGS84_A * math.sqrt(1 - WGS84_E2 * sin_phi * sin_phi)
    return GeoPoint(math.degrees(phi), lon, alt)


def solve_position(
    obs: Sequence[SatObservation],
    initial: EcefPoint = EcefPoint(0.0, 0.0, 0.0),
    max_iter: int = 20,
    tol: float = 1e-6,
    initial_bias: float = 0.0,
) -> PositionSolution:
    """Gauss-Newton fix of receiver position and clock bias from pseudoranges.

    The model for satellite ``i`` is ``pseudorange_i = |sat_i - pos| + bias``
    with the bias expressed in meters.  Iteration stops once the largest
    component of the parameter update drops below ``tol`` meters.

    Raises:
        UnderdeterminedError: fewer than four observations.
        GeometryError: the normal matrix is singular or its condition number
            exceeds 1e12.
        NonConvergenceError: ``max_iter`` steps without converging; the last
            iterate is attached as ``.last``.
    """
    if len(obs) < 4:
        raise UnderdeterminedError(
            f"{len(obs)} observations; at least 4 are needed for position and clock"
        )
    sats = np.array([o.sat_pos.as_array() for o in obs])
    rho = np.array([o.pseudorange for o in obs])
    x = np.append(initial.as_array(), initial_bias)

    def residuals(state):
        # math.dist is accurate to about half an ulp; at 2e7 m ranges the
        # difference from a naive norm is visible in the residual
        pos = state[:3].tolist()
        ranges = np.array([math.dist(s, pos) for s in sats.tolist()])
        return rho - (ranges + state[3]), ranges

    def rms(res):
        return float(np.sqrt(np.mean(res**2)))

    for it in range(1, max_iter + 1):
        r, ranges = residuals(x)
        if np.any(ranges == 0):
            raise GeometryError("receiver estimate coincides with a satellite")
        h = np.empty((len(obs), 4))
        h[:, :3] = (x[:3] - sats) / ranges[:, None]
        h[:, 3] = 1.0
        cond = np.linalg.cond(h) ** 2
        if not np.isfinite(cond) or cond > MAX_CONDITION:
            raise GeometryError(f"normal matrix condition {cond:.3g} exceeds {MAX_CONDITION:g}")
        dx, *_ = np.linalg.lstsq(h, r, rcond=None)
        stepped = x + dx
        if np.max(np.abs(dx)) < tol:
            # a sub-tolerance step is rounding noise; keep whichever fits better
            r_new, _ = residuals(stepped)
            if rms(r_new) <= rms(r):
                x, r = stepped, r_new
            return PositionSolution(EcefPoint.from_array(x), float(x[3]), it, rms(r))
        x = stepped
    r, _ = residuals(x)
    last = PositionSolution(EcefPoint.from_array(x), float(x[3]), max_iter, rms(r))
    raise NonConvergenceError(f"no convergence after {max_iter} iterations", last)


@dataclass(frozen=True)
class TrackError:
    rmse: float
    max: float
    per_sample: list[float]


def track_error(recorded: Iterable, truth) -> TrackError:
    """Compare recorded positions against a ground-truth route.

    ``recorded`` yields objects with ``time`` and ``point`` attributes; samples
    without a position are skipped.  ``truth`` must provide ``start``, ``end``
    and ``position_at(t)``.
    """
    samples = [s for s in recorded if getattr(s, "point", None) is not None]
    if not samples:
        raise GeodesyError("recorded track has no positioned samples")
    outside = [s.time for s in samples if not truth.start <= s.time <= truth.end]
    if outside:
        raise SpanError(
            f"{len(outside)} sample(s) outside route span [{truth.start}, {truth.end}]", outside
        )
    errors = [haversine_distance(s.point, truth.position_at(s.time)) for s in samples]
    rmse = math.sqrt(math.fsum(e * e for e in errors) / len(errors))
    return TrackError(rmse, max(errors), errors)
