"""On-disk formats: binary time-tag files, ScanPoint tables, fit records.

Tag file layout (little endian)::

    b"HOMT" | u8 version (=1) | u32 tdc_bin [ps] | u64 rep_period [ps]
    then 9-byte records: u64 timestamp [ps] | u8 channel (0 or 1)

Records are sorted by timestamp, ties broken by channel.
"""
from __future__ import annotations

import csv
import io
import json
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .simulator import ScanPoint

TAG_MAGIC = b"HOMT"
TAG_VERSION = 1
_HEADER = struct.Struct("<4sBIQ")
_RECORD = np.dtype([("timestamp", "<u8"), ("channel", "u1")])
assert _RECORD.itemsize == 9

SCAN_COLUMNS = ("tau_ps", "n_pulses", "n1", "n2", "n_coinc", "g2", "g2_err")
LIVE_COLUMNS = ("n_live1", "n_live2", "n_live12")


class FormatError(ValueError):
    pass


class SchemaError(ValueError):
    pass


def atomic_write(path, data):
    """Write ``data`` (str or bytes) next to ``path`` and rename it into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, mode, **({} if mode == "wb" else {"newline": "", "encoding": "utf-8"})) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# -- tag files ---------------------------------------------------------------

@dataclass
class TagFile:
    tdc_bin: int
    rep_period: int
    timestamps: np.ndarray
    channels: np.ndarray

    def timestamps_for(self, channel):
        return self.timestamps[self.channels == channel]


def encode_tags(tags0, tags1, tdc_bin, rep_period):
    t = np.concatenate([np.asarray(tags0, np.int64), np.asarray(tags1, np.int64)])
    c = np.concatenate([np.zeros(len(tags0), np.uint8), np.ones(len(tags1), np.uint8)])
    order = np.lexsort((c, t))
    rec = np.empty(t.size, dtype=_RECORD)
    rec["timestamp"] = t[order]
    rec["channel"] = c[order]
    return _HEADER.pack(TAG_MAGIC, TAG_VERSION, int(tdc_bin), int(rep_period)) + rec.tobytes()


def decode_tags(blob):
    if len(blob) < _HEADER.size:
        raise FormatError("tag file too short for its header")
    magic, version, tdc_bin, rep = _HEADER.unpack_from(blob)
    if magic != TAG_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {TAG_MAGIC!r}")
    if version != TAG_VERSION:
        raise FormatError(f"unsupported tag file version {version}")
    body = memoryview(blob)[_HEADER.size:]
    if len(body) % _RECORD.itemsize:
        raise FormatError("tag file body is not a whole number of 9-byte records")
    rec = np.frombuffer(body, dtype=_RECORD)
    if rec.size and rec["channel"].max() > 1:
        raise FormatError("channel byte must be 0 or 1")
    return TagFile(int(tdc_bin), int(rep), rec["timestamp"].astype(np.int64),
                   rec["channel"].astype(np.int64))


def write_tags(path, tags0, tags1, tdc_bin, rep_period):
    atomic_write(path, encode_tags(tags0, tags1, tdc_bin, rep_period))


def read_tags(path):
    return decode_tags(Path(path).read_bytes())


# -- scan tables -------------------------------------------------------------

def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _point_row(p: ScanPoint):
    return [p.tau, p.n_pulses, p.n1, p.n2, p.n_coinc, p.g2, p.g2_err,
            p.n_live1, p.n_live2, p.n_live12]


def scan_to_csv(points):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SCAN_COLUMNS + LIVE_COLUMNS)
    for p in points:
        w.writerow([_fmt(v) for v in _point_row(p)])
    return buf.getvalue()


def scan_to_jsonl(points):
    keys = SCAN_COLUMNS + LIVE_COLUMNS
    return "".join(json.dumps(dict(zip(keys, _point_row(p)))) + "\n" for p in points)


def _parse_field(raw, column, row_no, kind):
    try:
        if kind is int:
            return int(raw)
        return float(raw)
    except (TypeError, ValueError):
        raise SchemaError(f"row {row_no}, column {column!r}: cannot parse {raw!r} as {kind.__name__}") from None


def _point_from_mapping(row, row_no):
    missing = [c for c in SCAN_COLUMNS if c not in row]
    if missing:
        raise SchemaError(f"missing column(s): {', '.join(missing)}")
    vals = {}
    vals["tau"] = _parse_field(row["tau_ps"], "tau_ps", row_no, float)
    for c in ("n_pulses", "n1", "n2", "n_coinc"):
        vals[c] = _parse_field(row[c], c, row_no, int)
    for c in ("g2", "g2_err"):
        raw = row[c]
        vals[c] = None if raw in ("", None) else _parse_field(raw, c, row_no, float)
    for c in LIVE_COLUMNS:
        raw = row.get(c)
        vals[c] = None if raw in ("", None) else _parse_field(raw, c, row_no, int)
    try:
        return ScanPoint(**vals)
    except ValueError as exc:
        raise SchemaError(f"row {row_no}: {exc}") from None


def scan_from_csv(text):
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None:
        raise SchemaError("empty scan table (header row required)")
    missing = [c for c in SCAN_COLUMNS if c not in reader.fieldnames]
    if missing:
        raise SchemaError(f"header is missing column(s): {', '.join(missing)}")
    points = []
    for row_no, row in enumerate(reader, start=2):
        if None in row or any(v is None for v in row.values()):
            raise SchemaError(f"row {row_no}: wrong number of fields")
        points.append(_point_from_mapping(row, row_no))
    return points


def scan_from_jsonl(text):
    points = []
    for row_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"line {row_no}: {exc.msg}") from None
        row = {k: ("" if v is None else v) for k, v in row.items()}
        points.append(_point_from_mapping(row, row_no))
    return points


def read_scan(path):
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix in (".jsonl", ".json"):
        return scan_from_jsonl(text)
    return scan_from_csv(text)


def write_scan(path, points, fmt="csv"):
    atomic_write(path, scan_to_jsonl(points) if fmt == "json-lines" else scan_to_csv(points))


# -- key/value records -------------------------------------------------------

def format_record(record):
    lines = []
    for k, v in record.items():
        if isinstance(v, bool):
            v = "true" if v else "false"
        lines.append(f"{k} = {_fmt(v)}")
    return "\n".join(lines) + "\n"


def parse_record(text):
    out = {}
    for line in text.splitlines():
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out
