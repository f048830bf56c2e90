from __future__ import annotations

import bisect
from dataclasses import dataclass
from typing import Sequence

from trackline.geodesy import GeoPoint, haversine_distance, initial_bearing

MAX_SEGMENT_M = 10_000.0


class RouteError(ValueError):
    pass


@dataclass(frozen=True)
class Waypoint:
    point: GeoPoint
    time: float


class Route:
    """Ground-truth path: waypoints joined by straight lat/lon/alt segments."""

    def __init__(self, waypoints: Sequence[Waypoint | tuple[GeoPoint, float]]):
        wps = [w if isinstance(w, Waypoint) else Waypoint(*w) for w in waypoints]
        if len(wps) < 2:
            raise RouteError("a route needs at least two waypoints")
        for i, (p, q) in enumerate(zip(wps, wps[1:]), start=1):
            if not q.time > p.time:
                raise RouteError(f"waypoint {i} time {q.time} does not follow {p.time}")
            gap = haversine_distance(p.point, q.point)
            if gap > MAX_SEGMENT_M:
                raise RouteError(f"waypoints {i - 1} and {i} are {gap:.0f} m apart (limit 10 km)")
        self.waypoints: tuple[Waypoint, ...] = tuple(wps)
        self._times = [w.time for w in wps]

    @property
    def start(self) -> float:
        return self._times[0]

    @property
    def end(self) -> float:
        return self._times[-1]

    def __contains__(self, t: float) -> bool:
        return self.start <= t <= self.end

    def _segment(self, t: float) -> int:
        """Index ``i`` of the segment ``[i, i+1]`` used for time ``t``."""
        if not self.start <= t <= self.end:
            raise RouteError(f"time {t} outside route span [{self.start}, {self.end}]")
        i = bisect.bisect_right(self._times, t) - 1
        return min(i, len(self._times) - 2)

    def position_at(self, t: float) -> GeoPoint:
        i = self._segment(t)
        a, b = self.waypoints[i], self.waypoints[i + 1]
        if t == a.time:
            return a.point
        if t == b.time:
            return b.point
        w = (t - a.time) / (b.time - a.time)
        return GeoPoint(
            a.point.lat + w * (b.point.lat - a.point.lat),
            a.point.lon + w * (b.point.lon - a.point.lon),
            a.point.alt + w * (b.point.alt - a.point.alt),
        )

    def speed_at(self, t: float) -> float:
        """Ground speed in m/s on the segment in use at ``t``."""
        i = self._segment(t)
        a, b = self.waypoints[i], self.waypoints[i + 1]
        return haversine_distance(a.point, b.point) / (b.time - a.time)

    def course_at(self, t: float) -> float:
        i = self._segment(t)
        a, b = self.waypoints[i], self.waypoints[i + 1]
        if a.point.lat == b.point.lat and a.point.lon == b.point.lon:
            return 0.0
        return initial_bearing(a.point, b.point)


def route_position_at(route: Route, t: float) -> GeoPoint:
    return route.position_at(t)
