"""Event-stream data model, file I/O, blast-centred polar encoding,
angle partitioning and distance-time histograms.

Events are held column-wise in numpy arrays. Timestamps are int64
microseconds end to end and are never re-quantized.
"""

from __future__ import annotations

import io
import logging
import math
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .errors import ConfigError, ParseError, ValidationError

log = logging.getLogger(__name__)

CSV_HEADER = "t,x,y,p"
BINARY_MAGIC = b"EVS1"
RECORD_DTYPE = np.dtype([("t", "<u8"), ("x", "<u2"), ("y", "<u2"), ("p", "i1")])
_HEADER = struct.Struct("<4sIIQ")


class Event(NamedTuple):
    x: int
    y: int
    p: int
    t: int


class PolarEvent(NamedTuple):
    d: float
    alpha: float
    p: int
    t: int


def _frozen(a, dtype):
    a = np.ascontiguousarray(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class StreamHeader:
    width: int
    height: int
    t_min: int
    t_max: int
    count: int

    def __post_init__(self):
        if self.count < 0:
            raise ValidationError("event count must be >= 0")
        if self.count and self.t_min > self.t_max:
            raise ValidationError("t_min > t_max")


@dataclass(frozen=True, eq=False)
class EventStream:
    """Time-ordered event columns plus the sensor header."""

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    p: np.ndarray
    width: int
    height: int
    unsorted_input: bool = False

    def __post_init__(self):
        object.__setattr__(self, "t", _frozen(self.t, np.int64))
        object.__setattr__(self, "x", _frozen(self.x, np.int32))
        object.__setattr__(self, "y", _frozen(self.y, np.int32))
        object.__setattr__(self, "p", _frozen(self.p, np.int8))
        n = len(self.t)
        if not (len(self.x) == len(self.y) == len(self.p) == n):
            raise ValidationError("event columns differ in length")
        if n:
            if not np.all((self.p == 1) | (self.p == -1)):
                raise ValidationError("polarity must be -1 or +1")
            if self.t.min() < 0:
                raise ValidationError("timestamps must be >= 0")
            if self.x.min() < 0 or self.y.min() < 0:
                raise ValidationError("pixel coordinates must be >= 0")
            if self.x.max() >= self.width or self.y.max() >= self.height:
                raise ValidationError(
                    f"event outside declared sensor {self.width}x{self.height}")

    def __len__(self):
        return len(self.t)

    def __getitem__(self, i) -> Event:
        return Event(int(self.x[i]), int(self.y[i]), int(self.p[i]), int(self.t[i]))

    @property
    def header(self) -> StreamHeader:
        if len(self):
            return StreamHeader(self.width, self.height, int(self.t[0]), int(self.t[-1]), len(self))
        return StreamHeader(self.width, self.height, 0, 0, 0)

    def select(self, mask) -> "EventStream":
        return EventStream(self.t[mask], self.x[mask], self.y[mask], self.p[mask],
                           self.width, self.height)

    def time_window(self, t_start, t_end) -> "EventStream":
        """Events with ``t_start <= t < t_end``."""
        lo, hi = np.searchsorted(self.t, [t_start, t_end], side="left")
        return self.select(slice(lo, hi))

    @classmethod
    def from_arrays(cls, t, x, y, p, width=None, height=None) -> "EventStream":
        """Build a stream, stable-sorting by time when needed."""
        t = np.asarray(t, dtype=np.int64)
        x = np.asarray(x, dtype=np.int64)
        y = np.asarray(y, dtype=np.int64)
        p = np.asarray(p, dtype=np.int64)
        if width is None:
            width = int(x.max()) + 1 if len(x) else 0
        if height is None:
            height = int(y.max()) + 1 if len(y) else 0
        unsorted = bool(len(t) > 1 and np.any(np.diff(t) < 0))
        if unsorted:
            order = np.argsort(t, kind="stable")
            t, x, y, p = t[order], x[order], y[order], p[order]
        return cls(t, x, y, p, int(width), int(height), unsorted)


# -- file I/O ---------------------------------------------------------------

def _sniff_format(path) -> str:
    with open(path, "rb") as fh:
        return "binary" if fh.read(4) == BINARY_MAGIC else "csv"


def read_events(path, format: str | None = None) -> tuple[StreamHeader, EventStream]:
    """Read a CSV or binary event file.

    Unsorted input is stable-sorted and a warning is logged; the returned
    stream has ``unsorted_input`` set.
    """
    if not os.path.exists(path):
        raise ValidationError(f"no such event file: {path}")
    fmt = format or _sniff_format(path)
    if fmt == "csv":
        stream = _read_csv(path)
    elif fmt == "binary":
        stream = _read_binary(path)
    else:
        raise ConfigError(f"unknown event format {fmt!r}")
    if stream.unsorted_input:
        log.warning("%s: events not time-ordered; applied stable sort", path)
    return stream.header, stream


def _read_csv(path) -> EventStream:
    width = height = None
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    lines = text.splitlines()
    lineno = 0
    while lineno < len(lines) and lines[lineno].startswith("#"):
        for token in lines[lineno][1:].split():
            key, _, value = token.partition("=")
            if key == "width":
                width = int(value)
            elif key == "height":
                height = int(value)
        lineno += 1
    if lineno >= len(lines):
        raise ParseError("missing CSV header", line=lineno + 1)
    if lines[lineno].strip().replace(" ", "") != CSV_HEADER:
        raise ParseError(f"expected header {CSV_HEADER!r}, got {lines[lineno]!r}", line=lineno + 1)
    first_data = lineno + 1
    body = "\n".join(lines[first_data:])
    if not body.strip():
        return EventStream.from_arrays([], [], [], [], width or 0, height or 0)
    try:
        data = np.loadtxt(io.StringIO(body), delimiter=",", dtype=np.int64, ndmin=2)
    except ValueError:
        _locate_bad_row(lines, first_data)
        raise
    if data.shape[1] != 4:
        _locate_bad_row(lines, first_data)
    t, x, y, p = data.T
    bad = np.flatnonzero((p != 1) & (p != -1))
    if len(bad):
        raise ValidationError(f"line {_data_line(lines, first_data, bad[0])}: "
                              f"polarity {p[bad[0]]} not in {{-1, 1}}")
    return EventStream.from_arrays(t, x, y, p, width, height)


def _data_line(lines, first, k):
    seen = -1
    for i in range(first, len(lines)):
        if lines[i].strip():
            seen += 1
            if seen == k:
                return i + 1
    return len(lines)


def _locate_bad_row(lines, first):
    for i in range(first, len(lines)):
        raw = lines[i].strip()
        if not raw:
            continue
        parts = raw.split(",")
        if len(parts) != 4:
            raise ParseError(f"expected 4 fields, got {len(parts)}", line=i + 1)
        try:
            [int(v) for v in parts]
        except ValueError:
            raise ParseError(f"non-integer field in {raw!r}", line=i + 1) from None
    raise ParseError("malformed CSV", line=None)


def _read_binary(path) -> EventStream:
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) < _HEADER.size:
            raise ParseError("truncated binary header")
        magic, width, height, count = _HEADER.unpack(head)
        if magic != BINARY_MAGIC:
            raise ParseError(f"bad magic {magic!r}")
        raw = fh.read()
    expected = count * RECORD_DTYPE.itemsize
    if len(raw) != expected:
        raise ParseError(f"expected {count} records ({expected} bytes), found {len(raw)} bytes")
    rec = np.frombuffer(raw, dtype=RECORD_DTYPE, count=count)
    bad = np.flatnonzero((rec["p"] != 1) & (rec["p"] != -1))
    if len(bad):
        raise ValidationError(f"record {bad[0]}: polarity {rec['p'][bad[0]]} not in {{-1, 1}}")
    return EventStream.from_arrays(rec["t"].astype(np.int64), rec["x"], rec["y"], rec["p"],
                                   width, height)


def write_events(path, stream: EventStream, format: str = "binary") -> None:
    if format == "binary":
        rec = np.empty(len(stream), dtype=RECORD_DTYPE)
        rec["t"], rec["x"], rec["y"], rec["p"] = stream.t, stream.x, stream.y, stream.p
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(BINARY_MAGIC, stream.width, stream.height, len(stream)))
            fh.write(rec.tobytes())
    elif format == "csv":
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(f"# width={stream.width} height={stream.height}\n{CSV_HEADER}\n")
            if len(stream):
                cols = np.column_stack([stream.t, stream.x, stream.y, stream.p])
                np.savetxt(fh, cols, fmt="%d", delimiter=",")
    else:
        raise ConfigError(f"unknown event format {format!r}")


# -- polar encoding ---------------------------------------------------------

@dataclass(frozen=True)
class BlastImagePoint:
    x_b: float
    y_b: float

    def __post_init__(self):
        if not (math.isfinite(self.x_b) and math.isfinite(self.y_b)):
            raise ValidationError("blast image point must be finite")

    def check_inside(self, width, height):
        if not (0 <= self.x_b < width and 0 <= self.y_b < height):
            raise ValidationError(f"blast point ({self.x_b}, {self.y_b}) outside {width}x{height}")


@dataclass(frozen=True, eq=False)
class PolarEvents:
    """Polar-encoded events. ``index`` points back into the source stream."""

    d: np.ndarray
    alpha: np.ndarray
    p: np.ndarray
    t: np.ndarray
    index: np.ndarray
    blast: BlastImagePoint | None = None

    def __post_init__(self):
        for name, dtype in (("d", np.float64), ("alpha", np.float64), ("p", np.int8),
                            ("t", np.int64), ("index", np.int64)):
            object.__setattr__(self, name, _frozen(getattr(self, name), dtype))

    def __len__(self):
        return len(self.t)

    def __getitem__(self, i) -> PolarEvent:
        return PolarEvent(float(self.d[i]), float(self.alpha[i]), int(self.p[i]), int(self.t[i]))

    def take(self, idx) -> "PolarEvents":
        return PolarEvents(self.d[idx], self.alpha[idx], self.p[idx], self.t[idx],
                           self.index[idx], self.blast)

    def to_cartesian(self) -> tuple[np.ndarray, np.ndarray]:
        """Inverse of the encoding; y grows downward like the sensor rows."""
        if self.blast is None:
            raise ValidationError("polar events carry no blast point")
        a = np.radians(self.alpha)
        return self.blast.x_b + self.d * np.cos(a), self.blast.y_b + self.d * np.sin(a)


def _encode_chunk(x, y, x_b, y_b):
    dx = x - x_b
    dy = y - y_b
    d = np.hypot(dx, dy)
    # atan2 equals arccos(dx/d), mirrored to 360 - . when dy < 0, without
    # arccos's precision loss near 0 and 180 degrees
    alpha = np.degrees(np.arctan2(dy, dx))
    alpha = np.where(alpha < 0, alpha + 360.0, alpha)
    alpha = np.where((alpha >= 360.0) | (d == 0), 0.0, alpha)
    return d, alpha


def polar_encode(stream: EventStream, blast: BlastImagePoint, workers: int = 1,
                 chunk: int = 1 << 18) -> PolarEvents:
    """Encode every event as (distance, angle) about the blast image point.

    Angles are degrees in [0, 360) measured in raw image coordinates.
    Events exactly at the pole get angle 0.
    """
    x = stream.x.astype(np.float64)
    y = stream.y.astype(np.float64)
    n = len(stream)
    bounds = [(s, min(s + chunk, n)) for s in range(0, n, chunk)] or [(0, 0)]
    if workers > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda b: _encode_chunk(x[b[0]:b[1]], y[b[0]:b[1]],
                                                          blast.x_b, blast.y_b), bounds))
    else:
        parts = [_encode_chunk(x[a:b], y[a:b], blast.x_b, blast.y_b) for a, b in bounds]
    d = np.concatenate([pt[0] for pt in parts])
    alpha = np.concatenate([pt[1] for pt in parts])
    return PolarEvents(d, alpha, stream.p, stream.t, np.arange(n, dtype=np.int64), blast)


# -- angle segments ---------------------------------------------------------

@dataclass(frozen=True, eq=False)
class AngleSegment:
    alpha_lo: float
    alpha_hi: float
    events: PolarEvents

    def __len__(self):
        return len(self.events)

    @property
    def center(self) -> float:
        return 0.5 * (self.alpha_lo + self.alpha_hi)


def _check_bin_width(bin_width):
    if not bin_width > 0:
        raise ConfigError(f"angle bin width must be > 0, got {bin_width}")
    k = 360.0 / bin_width
    if abs(k - round(k)) > 1e-9:
        raise ConfigError(f"angle bin width {bin_width} does not divide 360")
    return int(round(k))


def angle_bin(alpha, bin_width) -> np.ndarray:
    nbins = _check_bin_width(bin_width)
    idx = np.floor(np.asarray(alpha) / bin_width).astype(np.int64)
    return np.clip(idx, 0, nbins - 1)


def sort_segment(events: PolarEvents) -> PolarEvents:
    """Order by time; ties broken by distance then source index."""
    order = np.lexsort((events.index, events.d, events.t))
    return events.take(order)


def partition_by_angle(events: PolarEvents, bin_width: float,
                       keep_empty: bool = True) -> list[AngleSegment]:
    """Split into half-open angular sectors ``[k*w, (k+1)*w)``."""
    nbins = _check_bin_width(bin_width)
    bins = angle_bin(events.alpha, bin_width)
    order = np.lexsort((events.index, events.d, events.t, bins))
    sorted_bins = bins[order]
    edges = np.searchsorted(sorted_bins, np.arange(nbins + 1), side="left")
    segments = []
    for k in range(nbins):
        sel = order[edges[k]:edges[k + 1]]
        if not keep_empty and len(sel) == 0:
            continue
        segments.append(AngleSegment(k * bin_width, (k + 1) * bin_width, events.take(sel)))
    return segments


def select_angles(events: PolarEvents, alpha_lo: float, alpha_hi: float) -> AngleSegment:
    mask = (events.alpha >= alpha_lo) & (events.alpha < alpha_hi)
    return AngleSegment(alpha_lo, alpha_hi, sort_segment(events.take(np.flatnonzero(mask))))


# -- d-t histogram ----------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DtHistogram:
    t_bin: float
    d_bin: float
    counts: np.ndarray  # shape (n_t, n_d)
    origin: tuple[float, float]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def t_edges(self):
        return self.origin[0] + self.t_bin * np.arange(self.counts.shape[0] + 1)

    def d_edges(self):
        return self.origin[1] + self.d_bin * np.arange(self.counts.shape[1] + 1)


def dt_histogram(segment, t_bin: float, d_bin: float, origin=None) -> DtHistogram:
    """2-D count grid; row ``i`` is time bin ``i``, column ``j`` distance bin ``j``."""
    if not (t_bin > 0 and d_bin > 0):
        raise ConfigError("histogram bins must be positive")
    ev = segment.events if isinstance(segment, AngleSegment) else segment
    if len(ev) == 0:
        return DtHistogram(t_bin, d_bin, np.zeros((0, 0), dtype=np.int64), origin or (0.0, 0.0))
    if origin is None:
        origin = (float(ev.t.min()), 0.0)
    i = np.floor((ev.t - origin[0]) / t_bin).astype(np.int64)
    j = np.floor((ev.d - origin[1]) / d_bin).astype(np.int64)
    if i.min() < 0 or j.min() < 0:
        raise ConfigError("histogram origin lies above some events")
    shape = (int(i.max()) + 1, int(j.max()) + 1)
    flat = np.bincount(i * shape[1] + j, minlength=shape[0] * shape[1])
    return DtHistogram(t_bin, d_bin, flat.reshape(shape).astype(np.int64), origin)
