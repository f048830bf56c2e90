from functools import reduce

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trackline.geodesy import GeoPoint
from trackline.nmea import (
    INSUFFICIENT_SATS, NO_FIX, ChecksumError, FieldError, FixQuality, FramingError, GpsFix,
    LineReader, NmeaError, PairingError, SentenceKindError, checksum, encode_gga, encode_rmc,
    extract_fix, format_coordinate, frame, parse, parse_coordinate, validity,
)

T0 = 1370066400.0
QUANTUM_DEG = 1e-4 / 60


def xor_fold(text):
    # oracle: fold written out by hand
    return reduce(lambda acc, ch: acc ^ ord(ch), text, 0)


def round_trip(fix):
    return extract_fix(parse(encode_gga(fix)), parse(encode_rmc(fix)))


def test_checksum_examples():
    assert checksum("") == 0
    assert checksum("GPGGA") == xor_fold("GPGGA") == 0x56
    assert checksum(b"GPGGA") == 0x56


@given(st.text(st.characters(min_codepoint=32, max_codepoint=126)))
def test_checksum_matches_fold_and_self_cancels(p):
    assert checksum(p) == xor_fold(p)
    assert checksum(p + p) == 0


def test_coordinate_fields_for_known_fix():
    fix = GpsFix(T0, GeoPoint(48.1173, 11.516667, 545.4), FixQuality.GPS, 8)
    fields = encode_gga(fix).split(",")
    assert fields[2:6] == ["4807.0380", "N", "01131.0000", "E"]
    assert format_coordinate(-48.1173, True) == ("4807.0380", "S")
    assert format_coordinate(-0.5, False) == ("00030.0000", "W")


def test_gga_line_shape():
    fix = GpsFix(T0 + 1.25, GeoPoint(48.1173, 11.516667, 545.4), FixQuality.GPS, 8)
    body = "GPGGA,060001.250,4807.0380,N,01131.0000,E,1,08,1.0,545.4,M,0.0,M,,"
    assert encode_gga(fix) == f"${body}*{xor_fold(body):02X}\r\n"


def test_nofix_encoding():
    fix = GpsFix(T0, None, FixQuality.NO_FIX, 0)
    gga = parse(encode_gga(fix))
    assert gga.fields[5] == "0"
    assert gga.fields[1:5] == ["", "", "", ""]
    rmc = parse(encode_rmc(fix))
    assert rmc.fields[1] == "V"
    back = extract_fix(gga, rmc)
    assert back.fix_quality is FixQuality.NO_FIX and back.point is None
    assert back.time == T0


def test_parse_coordinate_examples():
    assert parse_coordinate("0000.0000", "N") == 0.0
    assert parse_coordinate("4807.0380", "N") == pytest.approx(48 + 7.038 / 60, abs=1e-6)
    assert parse_coordinate("4807.0380", "N") == pytest.approx(48.1173, abs=1e-6)
    assert parse_coordinate("4807.0380", "S") == pytest.approx(-48.1173, abs=1e-6)
    assert parse_coordinate("01131.0000", "W") == pytest.approx(-11.516667, abs=1e-6)


@pytest.mark.parametrize("text,hemi", [("4860.0000", "N"), ("12375.5000", "E")])
def test_parse_coordinate_minutes_range(text, hemi):
    with pytest.raises(FieldError):
        parse_coordinate(text, hemi)


@pytest.mark.parametrize("text,hemi", [("48O7.0380", "N"), ("4807", "N"), ("", "N"), ("4807.0380", "X")])
def test_parse_coordinate_malformed(text, hemi):
    with pytest.raises(NmeaError):
        parse_coordinate(text, hemi)


@given(st.integers(0, 89), st.integers(0, 59), st.integers(0, 9999))
def test_hemisphere_symmetry_exact(deg, minutes, frac):
    text = f"{deg:02d}{minutes:02d}.{frac:04d}"
    assert parse_coordinate(text, "N") == -parse_coordinate(text, "S")


def test_parse_kind_from_encoded_line():
    s = parse(encode_gga(GpsFix(T0, GeoPoint(1, 2, 3))))
    assert (s.talker, s.kind) == ("GP", "GGA")
    assert s.checksum == checksum(s.payload)


def test_parse_errors():
    line = encode_gga(GpsFix(T0, GeoPoint(1, 2, 3)))
    last = line[-3]
    bad = line[:-3] + ("0" if last != "0" else "1") + "\r\n"
    with pytest.raises(ChecksumError) as info:
        parse(bad)
    assert info.value.expected != info.value.actual
    with pytest.raises(FramingError):
        parse("garbage")
    with pytest.raises(FramingError):
        parse(line.encode("ascii").replace(b"G", b"\xc7", 1))
    with pytest.raises(FramingError):
        parse("$" + "A" * 90 + "*00\r\n")


fixes = st.builds(
    lambda ms, lat, lon, alt, q, sats, spd, crs, hdop: GpsFix(
        T0 + ms / 1000, GeoPoint(lat, lon, alt / 10), q, sats, spd / 10, crs / 10, hdop / 10
    ),
    st.integers(0, 10 * 365 * 86400 * 1000),
    st.floats(-89.999, 89.999),
    st.floats(-179.999, 179.999),
    st.integers(-4000, 90000),
    st.sampled_from([FixQuality.GPS, FixQuality.DGPS]),
    st.integers(0, 24),
    st.integers(0, 9999),
    st.integers(0, 3599),
    st.integers(5, 999),
)


def assert_same_fix(back, fix):
    assert back.time == pytest.approx(fix.time, abs=1e-6)
    assert abs(back.point.lat - fix.point.lat) <= QUANTUM_DEG / 2 + 1e-12
    assert abs(back.point.lon - fix.point.lon) <= QUANTUM_DEG / 2 + 1e-12
    assert back.point.alt == pytest.approx(fix.point.alt, abs=0.05)
    assert back.fix_quality is fix.fix_quality
    assert back.num_sats == fix.num_sats
    assert back.speed_knots == pytest.approx(fix.speed_knots, abs=0.05)
    assert abs((back.course - fix.course + 180) % 360 - 180) <= 0.05 + 1e-9


@settings(max_examples=300)
@given(fixes)
def test_round_trip_property(fix):
    assert_same_fix(round_trip(fix), fix)


def test_round_trip_thousand_random_fixes():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        fix = GpsFix(
            T0 + float(rng.integers(0, 10**9)) / 1000,
            GeoPoint(rng.uniform(-90, 90), rng.uniform(-179.99999, 180), round(rng.uniform(-100, 9000), 1)),
            FixQuality.GPS, int(rng.integers(4, 25)),
            round(rng.uniform(0, 200), 1), round(rng.uniform(0, 359.9), 1),
        )
        assert_same_fix(round_trip(fix), fix)


def test_encoded_lines_fit_and_verify():
    for lat, lon in [(-89.99999, -179.99999), (0, 0), (89.9, 179.9)]:
        fix = GpsFix(T0, GeoPoint(lat, lon, -999.9), FixQuality.DGPS, 24, 999.9, 359.9, 99.9)
        for line in (encode_gga(fix), encode_rmc(fix)):
            assert len(line) <= 82
            body = line[1 : line.index("*")]
            assert int(line[-4:-2], 16) == xor_fold(body)


def test_frame_rejects_oversized():
    with pytest.raises(FramingError):
        frame("GPGGA," + "9" * 80)


def test_fuzz_parse_is_total():
    rng = np.random.default_rng(12345)
    valid = encode_gga(GpsFix(T0, GeoPoint(20.2961, 85.8245, 45))).encode("ascii")
    for i in range(100_000):
        if i % 3 == 0:
            line = rng.integers(0, 256, int(rng.integers(0, 100)), dtype=np.uint8).tobytes()
        else:
            buf = bytearray(valid)
            for _ in range(int(rng.integers(1, 4))):
                buf[int(rng.integers(0, len(buf)))] = int(rng.integers(0, 256))
            line = bytes(buf)
        try:
            parse(line)
        except NmeaError:
            pass


@settings(max_examples=200)
@given(fixes, st.data())
def test_single_character_mutation_rejected(fix, data):
    line = encode_rmc(fix)
    star = line.index("*")
    pos = data.draw(st.integers(1, star - 1))
    ch = data.draw(st.characters(min_codepoint=32, max_codepoint=126).filter(lambda c: c != line[pos]))
    with pytest.raises(NmeaError):
        parse(line[:pos] + ch + line[pos + 1 :])


def test_extract_fix_pairing_and_kinds():
    a = GpsFix(T0, GeoPoint(1, 2, 3))
    b = GpsFix(T0 + 1, GeoPoint(1, 2, 3))
    with pytest.raises(PairingError):
        extract_fix(parse(encode_gga(a)), parse(encode_rmc(b)))
    with pytest.raises(SentenceKindError):
        extract_fix(parse(encode_rmc(a)), parse(encode_gga(a)))
    with pytest.raises(TypeError):
        extract_fix(parse(encode_gga(a)), parse(encode_gga(a)))


def test_gga_nofix_with_any_rmc():
    gga = parse(encode_gga(GpsFix(T0, None, FixQuality.NO_FIX, 2)))
    rmc = parse(encode_rmc(GpsFix(T0, GeoPoint(1, 2, 3), FixQuality.GPS, 9, 4.0)))
    fix = extract_fix(gga, rmc)
    assert fix.fix_quality is FixQuality.NO_FIX
    assert validity(fix).reason == NO_FIX


def test_three_satellites_extracted_but_invalid():
    fix = round_trip(GpsFix(T0, GeoPoint(1, 2, 3), FixQuality.GPS, 3))
    assert fix.num_sats == 3
    v = validity(fix)
    assert not v and v.reason == INSUFFICIENT_SATS == "insufficient satellites"


@pytest.mark.parametrize(
    "quality,sats,reason",
    [(FixQuality.GPS, 7, None), (FixQuality.NO_FIX, 7, "no fix"), (FixQuality.GPS, 3, "insufficient satellites"),
     (FixQuality.DGPS, 4, None), (FixQuality.NO_FIX, 0, "no fix")],
)
def test_validity_cases(quality, sats, reason):
    point = None if quality is FixQuality.NO_FIX else GeoPoint(0, 0)
    v = validity(GpsFix(T0, point, quality, sats))
    assert v.reason == reason
    assert v.is_valid == (reason is None)


def test_gpsfix_invariants():
    assert GpsFix(T0 + 0.0004, GeoPoint(0, 0)).time == T0
    assert GpsFix(T0, GeoPoint(5, 5), FixQuality.NO_FIX, 3).point is None
    with pytest.raises(ValueError):
        GpsFix(T0, GeoPoint(0, 0), num_sats=25)
    with pytest.raises(ValueError):
        GpsFix(T0, None, FixQuality.GPS)
    with pytest.raises(ValueError):
        GpsFix(T0, GeoPoint(0, 0), course=360.0)
    assert GpsFix(T0, GeoPoint(0, 0), speed_knots=10.0).speed_kmh == pytest.approx(18.52)


def test_line_reader_reassembles_and_resyncs():
    a = encode_gga(GpsFix(T0, GeoPoint(1, 2, 3))).encode()
    b = encode_rmc(GpsFix(T0, GeoPoint(1, 2, 3))).encode()
    reader = LineReader()
    got = []
    stream = b"noise" + a[:10] + b"\x00$GP" + a + b
    for i in range(0, len(stream), 7):
        got += reader.feed(stream[i : i + 7])
    assert got[-2:] == [a, b]
    assert [parse(g).kind for g in got[-2:]] == ["GGA", "RMC"]
