import bisect
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import SERVER, STRANGER, T0, USER, make_scenario
from trackline.atproto import SmsMessage
from trackline.geodesy import GeoPoint, haversine_distance, track_error
from trackline.nmea import FixQuality, LineReader, extract_fix, parse
from trackline.scenario import World
from trackline.simnet import (
    ByteChannel, ChannelClosed, GpsDevice, ModemDevice, NoiseModel, Phone, Route, RouteError, SmsNetwork,
    Undeliverable, VirtualClock, clock_advance, gps_device_tick, modem_device_step, route_position_at,
)

A = GeoPoint(20.2961, 85.8245, 40.0)
B = GeoPoint(20.3041, 85.8325, 60.0)


def lerp(a, b, w):
    return a + w * (b - a)


def two_point():
    return Route([(A, 100.0), (B, 200.0)])


def long_route(duration=1200, speed=10.0):
    # due east at constant speed, waypoint every 100 s (1 km segments)
    pts = []
    for t in range(0, duration + 1, 100):
        dlon = math.degrees(speed * t / (6371008.8 * math.cos(math.radians(A.lat))))
        pts.append((GeoPoint(A.lat, A.lon + dlon, 40.0), T0 + t))
    return Route(pts)


def fixes_from(lines):
    out = []
    for gga, rmc in zip(lines[::2], lines[1::2]):
        out.append(extract_fix(parse(gga), parse(rmc)))
    return out


# -- route ------------------------------------------------------------------


def test_route_knots_and_midpoint():
    r = two_point()
    assert route_position_at(r, 100.0) == A
    assert route_position_at(r, 200.0) == B
    mid = r.position_at(150.0)
    assert mid.lat == pytest.approx((A.lat + B.lat) / 2, abs=1e-12)
    assert mid.lon == pytest.approx((A.lon + B.lon) / 2, abs=1e-12)
    assert mid.alt == pytest.approx(50.0)


def test_route_quarter_blend():
    p = two_point().position_at(125.0)
    assert p.lat == pytest.approx(lerp(A.lat, B.lat, 0.25), abs=1e-12)
    assert p.lon == pytest.approx(lerp(A.lon, B.lon, 0.25), abs=1e-12)
    assert p.alt == pytest.approx(lerp(40.0, 60.0, 0.25))


def test_route_waypoint_tie_break_uses_the_waypoint():
    c = GeoPoint(20.31, 85.84, 0)
    r = Route([(A, 0.0), (B, 10.0), (c, 20.0)])
    assert r.position_at(10.0) == B


@given(st.floats(100.0, 200.0))
def test_route_position_stays_on_segment(t):
    p = two_point().position_at(t)
    assert min(A.lat, B.lat) <= p.lat <= max(A.lat, B.lat)
    assert min(A.lon, B.lon) <= p.lon <= max(A.lon, B.lon)


def test_route_validation():
    with pytest.raises(RouteError):
        two_point().position_at(99.0)
    with pytest.raises(RouteError):
        Route([(A, 0.0)])
    with pytest.raises(RouteError):
        Route([(A, 5.0), (B, 5.0)])
    with pytest.raises(RouteError):
        Route([(A, 0.0), (GeoPoint(A.lat + 0.1, A.lon), 100.0)])  # ~11 km


def test_route_speed_and_course():
    r = long_route()
    assert r.speed_at(T0 + 50) == pytest.approx(10.0, rel=1e-6)
    assert r.course_at(T0 + 50) == pytest.approx(90.0, abs=0.01)


# -- gps device ---------------------------------------------------------------


def test_noiseless_tick_matches_route():
    r = long_route()
    dev = GpsDevice(r, NoiseModel(0.0, 0.0, 1))
    for t in range(0, 1200, 37):
        fix = fixes_from(gps_device_tick(dev, T0 + t))[0]
        truth = r.position_at(T0 + t)
        assert haversine_distance(fix.point, truth) < 0.2  # 1e-4 arcmin ~ 0.19 m
        assert fix.speed_kmh == pytest.approx(36.0, abs=0.1)


def test_total_dropout():
    dev = GpsDevice(long_route(), NoiseModel(5.0, 1.0, 3))
    for t in range(100):
        gga, rmc = gps_device_tick(dev, T0 + t)
        assert parse(gga).fields[5] == "0"
        assert fixes_from([gga, rmc])[0].fix_quality is FixQuality.NO_FIX


def test_out_of_span_tick_is_nofix_pair():
    lines = gps_device_tick(GpsDevice(long_route()), T0 + 5000)
    assert len(lines) == 2
    assert fixes_from(lines)[0].fix_quality is FixQuality.NO_FIX


def test_sigma_five_rmse():
    r = long_route(1200)
    dev = GpsDevice(r, NoiseModel(5.0, 0.0, 42))
    fixes = [fixes_from(dev.tick(T0 + t))[0] for t in range(1000)]
    assert 4.0 <= track_error(fixes, r).rmse <= 6.0


def test_same_seed_same_noise():
    r = long_route()
    a = [GpsDevice(r, NoiseModel(5, 0.2, 9)).tick(T0 + t) for t in range(50)]
    b = [GpsDevice(r, NoiseModel(5, 0.2, 9)).tick(T0 + t) for t in range(50)]
    assert a == b
    c = GpsDevice(r, NoiseModel(5, 0.2, 10))
    assert [c.tick(T0 + t) for t in range(50)] != a


def test_noise_model_validation():
    for bad in (dict(sigma=-1), dict(sigma=math.inf), dict(dropout_prob=1.5)):
        with pytest.raises(ValueError):
            NoiseModel(**bad)


def test_one_pair_per_second_on_the_wire():
    clock = VirtualClock(T0)
    chan = ByteChannel(clock, 4800, "gps")
    GpsDevice(long_route(300), NoiseModel(0, 0.3, 5)).attach(clock, chan.b, T0, T0 + 300)
    reader, per_second = LineReader(), {}
    while clock.next_event_time() is not None:
        clock.advance(clock.next_event_time())
        for line in reader.feed(chan.a.read()):
            per_second.setdefault(int(clock.now - T0 - 1e-9), []).append(parse(line).kind)
    assert len(per_second) == 300
    assert all(kinds == ["GGA", "RMC"] for kinds in per_second.values())


# -- channel ------------------------------------------------------------------


def max_in_window(times, width=1.0):
    times = sorted(times)
    return max(bisect.bisect_right(times, t + width) - i for i, t in enumerate(times))


@pytest.mark.parametrize("rate", [4800, 9600])
def test_baud_pacing_under_burst(rate):
    clock = VirtualClock(T0)
    chan = ByteChannel(clock, rate, record_arrivals=True)
    for _ in range(20):
        chan.a.write(b"x" * 500)
    clock.advance(T0 + 20)
    arrivals = chan.arrivals("a>b")
    assert len(arrivals) == 10_000
    assert max_in_window(arrivals) <= rate / 10 + 1
    assert arrivals == sorted(arrivals)


def test_baud_pacing_gps_stream():
    clock = VirtualClock(T0)
    chan = ByteChannel(clock, 4800, record_arrivals=True)
    GpsDevice(long_route(200)).attach(clock, chan.b, T0, T0 + 200)
    clock.advance(T0 + 201)
    assert max_in_window(chan.arrivals("b>a")) <= 481


def test_channel_order_and_partial_reads():
    clock = VirtualClock(0.0)
    chan = ByteChannel(clock, 9600)
    done = chan.a.write(b"hello")
    assert done == pytest.approx(5 / 960)
    clock.advance(2.5 / 960)
    assert chan.b.read() == b"he"
    chan.a.write(b" world")
    clock.advance(1.0)
    assert chan.b.read() == b"llo world"
    chan.close()
    with pytest.raises(ChannelClosed):
        chan.a.write(b"x")


def test_channel_bytes_arrive_at_posix_magnitudes():
    clock = VirtualClock(T0 + 0.123)
    chan = ByteChannel(clock, 9600)
    got = []
    chan.b.on_receive(lambda: got.append(chan.b.read()))
    for _ in range(50):
        chan.a.write(b"AT\r")
        clock.advance(clock.now + 0.0131)
    assert got == [b"AT\r"] * 50


# -- modem & network --------------------------------------------------------


def test_modem_healthy_init_responses():
    dev = ModemDevice(SERVER)
    assert modem_device_step(dev, b"AT\r") == b"\r\nOK\r\n"
    assert modem_device_step(dev, b"AT+CMGF=1\r") == b"\r\n+CPIN: READY\r\n\r\nOK\r\n"
    assert modem_device_step(dev, b"AT+CR") == b""
    assert modem_device_step(dev, b"EG?\r") == b"\r\n+CREG: 0,1\r\n\r\nOK\r\n"


def test_modem_unknown_command():
    dev = ModemDevice(SERVER)
    assert dev.step(b"AT+XYZ\r") == b"\r\nERROR\r\n"
    assert dev.errors == ["AT+XYZ"]


def test_modem_raises_cmti_on_delivery():
    clock = VirtualClock(T0)
    net = SmsNetwork(clock)
    chan = ByteChannel(clock, 9600)
    ModemDevice(SERVER, network=net).attach(chan.b)
    Phone(USER, net).send(SERVER, "LOC")
    clock.advance(T0 + 2)
    assert chan.a.read() == b'\r\n+CMTI: "SM",1\r\n'


def test_network_latency_exact():
    clock = VirtualClock(T0)
    net = SmsNetwork(clock, latency=1.0)
    seen = []
    net.register(SERVER, lambda m: seen.append((clock.now, m.text)))
    Phone(USER, net).send(SERVER, "LOC")
    clock.advance(T0 + 0.999)
    assert seen == []
    clock.advance(T0 + 5)
    assert seen == [(T0 + 1.0, "LOC")]


def test_network_undeliverable():
    clock = VirtualClock(T0)
    net = SmsNetwork(clock)
    with pytest.raises(Undeliverable):
        net.send(SmsMessage(USER, STRANGER, "hi", T0))


@settings(max_examples=50)
@given(st.lists(st.tuples(st.sampled_from([USER, STRANGER]), st.floats(0, 2)), min_size=1, max_size=20),
       st.floats(0, 3))
def test_network_fifo_no_duplicates(sends, latency):
    clock = VirtualClock(T0)
    net = SmsNetwork(clock, latency)
    got = []
    net.register(SERVER, got.append)
    phones = {m: Phone(m, net) for m in (USER, STRANGER)}
    texts = []
    for i, (who, gap) in enumerate(sends):
        clock.advance(clock.now + gap)
        phones[who].send(SERVER, f"m{i}")
        texts.append((who, f"m{i}"))
    clock.advance(clock.now + latency + 1)
    assert sorted((m.from_msisdn, m.text) for m in got) == sorted(texts)
    for who in phones:
        assert [m.text for m in got if m.from_msisdn == who] == [t for w, t in texts if w == who]


# -- clock ----------------------------------------------------------------------


def test_clock_empty_advance():
    clock = VirtualClock(0.0)
    assert clock_advance(clock, 10.0) == 0
    assert clock.now == 10.0


def test_clock_ordering():
    clock = VirtualClock(0.0)
    order = []
    clock.schedule(2, lambda: order.append("c"))
    clock.schedule(1, lambda: order.append("a"))
    clock.schedule(1, lambda: order.append("b"))
    assert clock_advance(clock, 2) == 3
    assert order == ["a", "b", "c"]
    with pytest.raises(ValueError):
        clock.advance(1)
    with pytest.raises(ValueError):
        clock.schedule(0.5, lambda: None)


def test_clock_run_until_deadline():
    clock = VirtualClock(0.0)
    hits = []
    for t in (1, 2, 3):
        clock.schedule(t, lambda t=t: hits.append(t))
    assert clock.run_until(lambda: len(hits) == 2, deadline=10)
    assert clock.now == 2
    assert not clock.run_until(lambda: False, deadline=2.5)
    assert clock.now == 2.5


# -- determinism ----------------------------------------------------------------


def test_replay_gives_identical_traces():
    def once():
        scn = make_scenario(
            noise={"sigma": 5.0, "dropout": 0.1},
            schedule=[{"t": 10, "text": "SPEED", "from": USER}, {"t": 30, "text": "LOC", "from": USER}],
        )
        w = World(scn)
        w.run()
        return w.gps_channel.hexdump(), w.gsm_channel.hexdump(), w.transcript(), w.clock.fired

    first, second = once(), once()
    assert first == second
    assert first[0] and first[1]
