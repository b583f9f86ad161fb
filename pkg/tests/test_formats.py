import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hombench.formats import (FormatError, SchemaError, atomic_write, decode_tags, encode_tags,
                              format_record, parse_record, read_scan, scan_from_csv,
                              scan_from_jsonl, scan_to_csv, scan_to_jsonl, write_scan)
from hombench.simulator import ScanPoint

POINTS = [
    ScanPoint.from_counts(-40.0, 10**6, 1000, 990, 11, n_live1=999_000, n_live2=999_100,
                          n_live12=998_200),
    ScanPoint.from_counts(0.0, 10**6, 0, 990, 0),
    ScanPoint.from_counts(40.5, 10**6, 1010, 980, 9),
]


def test_tag_header_layout():
    blob = encode_tags([162], [81], 81, 10_000)
    assert blob[:4] == b"HOMT" and blob[4] == 1
    assert int.from_bytes(blob[5:9], "little") == 81
    assert int.from_bytes(blob[9:17], "little") == 10_000
    assert len(blob) == 17 + 2 * 9
    # sorted by time: channel 1 record comes first
    assert int.from_bytes(blob[17:25], "little") == 81 and blob[25] == 1


@settings(max_examples=50)
@given(st.lists(st.integers(0, 2**62), max_size=40), st.lists(st.integers(0, 2**62), max_size=40))
def test_tag_round_trip(a, b):
    tf = decode_tags(encode_tags(a, b, 81, 10_000))
    assert (tf.tdc_bin, tf.rep_period) == (81, 10_000)
    assert sorted(tf.timestamps_for(0).tolist()) == sorted(a)
    assert sorted(tf.timestamps_for(1).tolist()) == sorted(b)
    assert np.all(np.diff(tf.timestamps) >= 0)


def test_tag_format_errors():
    good = encode_tags([81], [162], 81, 10_000)
    with pytest.raises(FormatError, match="magic"):
        decode_tags(b"XXXX" + good[4:])
    with pytest.raises(FormatError, match="version"):
        decode_tags(good[:4] + b"\x02" + good[5:])
    with pytest.raises(FormatError):
        decode_tags(good[:-1])
    with pytest.raises(FormatError):
        decode_tags(good[:10])
    with pytest.raises(FormatError, match="channel"):
        decode_tags(good[:-1] + b"\x07")


def test_scan_csv_round_trip_and_empty_g2():
    text = scan_to_csv(POINTS)
    header, first, second = text.splitlines()[:3]
    assert header.startswith("tau_ps,n_pulses,n1,n2,n_coinc,g2,g2_err")
    assert second.split(",")[5:7] == ["", ""]
    assert scan_from_csv(text) == POINTS
    assert scan_from_jsonl(scan_to_jsonl(POINTS)) == POINTS


def test_scan_csv_without_live_columns():
    text = "tau_ps,n_pulses,n1,n2,n_coinc,g2,g2_err\n0,100,10,10,1,1.0,1.0\n"
    (p,) = scan_from_csv(text)
    assert p.n_live12 == 100 and p.g2 == 1.0


@pytest.mark.parametrize("text, needle", [
    ("", "header"),
    ("tau_ps,n1\n0,1\n", "missing"),
    ("tau_ps,n_pulses,n1,n2,n_coinc,g2,g2_err\n0,100,x,10,1,1.0,1.0\n", "row 2, column 'n1'"),
    ("tau_ps,n_pulses,n1,n2,n_coinc,g2,g2_err\n0,100,10\n", "row 2"),
    ("tau_ps,n_pulses,n1,n2,n_coinc,g2,g2_err\n0,100,10,10,1,1.0,1.0\n0,100,5,3,4,,\n", "row 3"),
])
def test_scan_schema_errors(text, needle):
    with pytest.raises(SchemaError, match=needle):
        scan_from_csv(text)


def test_write_and_read_scan(tmp_path):
    write_scan(tmp_path / "a.csv", POINTS)
    write_scan(tmp_path / "a.jsonl", POINTS, fmt="json-lines")
    assert read_scan(tmp_path / "a.csv") == read_scan(tmp_path / "a.jsonl") == POINTS


def test_atomic_write_leaves_no_temp_files(tmp_path):
    atomic_write(tmp_path / "sub" / "x.txt", "hello")
    atomic_write(tmp_path / "sub" / "x.txt", b"bytes")
    assert [p.name for p in (tmp_path / "sub").iterdir()] == ["x.txt"]
    assert (tmp_path / "sub" / "x.txt").read_bytes() == b"bytes"


def test_record_round_trip():
    rec = {"visibility": 0.5, "n_points": 21, "converged": True, "chi2_red": None}
    text = format_record(rec)
    assert "converged = true" in text
    assert parse_record(text) == {"visibility": "0.5", "n_points": "21", "converged": "true",
                                  "chi2_red": ""}
