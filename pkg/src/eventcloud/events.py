"""Event stream ingestion, windowing and Event Cloud sampling.

Streams are stored column-wise (one numpy array per field) so that windowing
and sampling stay vectorised even for 10^5+ events.

N-MNIST ``.bin`` layout
-----------------------
Every event is a 5-byte (40-bit) big-endian record::

    byte 0       byte 1       byte 2                 bytes 3-4
    [x: 8 bits]  [y: 8 bits]  [p: 1 bit][t: 7 bits]  [t: 16 bits]

i.e. ``x = b0``, ``y = b1``, ``p = b2 >> 7`` and
``t = (b2 & 0x7F) << 16 | b3 << 8 | b4`` (microseconds).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

import numpy as np

NMNIST_SIZE = 34
US_PER_MS = 1000


class EventFormatError(ValueError):
    """Malformed event input (truncated record, bad field, out-of-range value)."""


class RawEvent(NamedTuple):
    x: int
    y: int
    t: int
    p: int


@dataclass(frozen=True, eq=False)
class EventStream:
    x: np.ndarray
    y: np.ndarray
    t: np.ndarray
    p: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        n = len(self.t)
        if not (len(self.x) == len(self.y) == len(self.p) == n):
            raise ValueError("event columns must have equal length")

    @classmethod
    def from_events(cls, events: Iterable, width: int, height: int) -> "EventStream":
        arr = np.asarray(list(events), dtype=np.int64).reshape(-1, 4)
        return cls.from_columns(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3], width, height)

    @classmethod
    def from_columns(cls, x, y, t, p, width: int, height: int, *, check: bool = True) -> "EventStream":
        x, y, t, p = (np.ascontiguousarray(c, dtype=np.int64) for c in (x, y, t, p))
        order = np.argsort(t, kind="stable")
        if not np.all(order == np.arange(len(t))):
            x, y, t, p = x[order], y[order], t[order], p[order]
        stream = cls(x, y, t, p, int(width), int(height))
        if check:
            stream.validate()
        return stream

    @classmethod
    def empty(cls, width: int, height: int) -> "EventStream":
        z = np.zeros(0, dtype=np.int64)
        return cls(z, z, z, z, width, height)

    def validate(self) -> None:
        if len(self) == 0:
            return
        if self.x.min() < 0 or self.x.max() >= self.width:
            raise EventFormatError(f"x out of range [0, {self.width})")
        if self.y.min() < 0 or self.y.max() >= self.height:
            raise EventFormatError(f"y out of range [0, {self.height})")
        if self.t.min() < 0:
            raise EventFormatError("negative timestamp")
        if not np.isin(self.p, (0, 1)).all():
            raise EventFormatError("polarity must be 0 or 1")
        if np.any(np.diff(self.t) < 0):
            raise EventFormatError("events are not sorted by timestamp")

    def __len__(self) -> int:
        return len(self.t)

    def __eq__(self, other) -> bool:
        if not isinstance(other, EventStream):
            return NotImplemented
        return (self.width, self.height) == (other.width, other.height) and all(
            np.array_equal(getattr(self, c), getattr(other, c)) for c in "xytp")

    __hash__ = None

    def __getitem__(self, i: int) -> RawEvent:
        return RawEvent(int(self.x[i]), int(self.y[i]), int(self.t[i]), int(self.p[i]))

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def select(self, index) -> "EventStream":
        return EventStream(self.x[index], self.y[index], self.t[index], self.p[index],
                           self.width, self.height)

    def as_array(self) -> np.ndarray:
        return np.stack([self.x, self.y, self.t, self.p], axis=1)

    def duration_us(self) -> int:
        if len(self) == 0:
            return 0
        return int(self.t[-1] - self.t[0]) + 1


@dataclass(frozen=True)
class WindowSpec:
    window_ms: float
    stride_ms: float
    points: int

    def __post_init__(self):
        if self.window_ms <= 0 or self.stride_ms <= 0 or self.points <= 0:
            raise ValueError("window_ms, stride_ms and points must be positive")


@dataclass(frozen=True)
class EventCloud:
    """T x 4 normalized (x, y, t, p) rows in chronological order.

    ``t_min``/``t_max`` and the sensor size are kept so that
    :func:`denormalize` can invert the mapping.
    """

    coords: np.ndarray
    t_min: int
    t_max: int
    width: int
    height: int
    source_index: np.ndarray = field(repr=False)

    @property
    def length(self) -> int:
        return self.coords.shape[0]


# --------------------------------------------------------------------------
# parsing / serialisation

def parse_nmnist_bin(data: bytes, *, width: int = NMNIST_SIZE, height: int = NMNIST_SIZE) -> EventStream:
    if len(data) % 5:
        raise EventFormatError(f"truncated record: {len(data)} bytes is not a multiple of 5")
    raw = np.frombuffer(data, dtype=np.uint8).reshape(-1, 5).astype(np.int64)
    x = raw[:, 0]
    y = raw[:, 1]
    p = raw[:, 2] >> 7
    t = ((raw[:, 2] & 0x7F) << 16) | (raw[:, 3] << 8) | raw[:, 4]
    if len(raw) and (x.max() >= width or y.max() >= height):
        raise EventFormatError(f"x/y out of bounds for a {width}x{height} sensor")
    return EventStream.from_columns(x, y, t, p, width, height)


def encode_nmnist_bin(stream: EventStream) -> bytes:
    if len(stream) and (stream.x.max() > 255 or stream.y.max() > 255 or stream.t.max() >= 1 << 23):
        raise EventFormatError("event does not fit the 40-bit record layout")
    out = np.empty((len(stream), 5), dtype=np.uint8)
    out[:, 0] = stream.x
    out[:, 1] = stream.y
    out[:, 2] = (stream.p << 7) | (stream.t >> 16)
    out[:, 3] = (stream.t >> 8) & 0xFF
    out[:, 4] = stream.t & 0xFF
    return out.tobytes()


def parse_text_events(text: str, *, width: int | None = None, height: int | None = None) -> EventStream:
    """Parse ``x y t p`` lines; ``#`` lines are comments.

    A ``# sensor WIDTH HEIGHT`` comment sets the sensor size unless it is
    given explicitly. Without either, the size is inferred from the data.
    """
    rows = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        if not s:
            continue
        if s.startswith("#"):
            parts = s[1:].split()
            if len(parts) == 3 and parts[0] == "sensor":
                width = int(parts[1]) if width is None else width
                height = int(parts[2]) if height is None else height
            continue
        fields = s.split()
        if len(fields) != 4:
            raise EventFormatError(f"line {lineno}: expected 4 fields 'x y t p', got {len(fields)}")
        try:
            x, y, t, p = (int(f) for f in fields)
        except ValueError:
            raise EventFormatError(f"line {lineno}: non-integer field in {s!r}") from None
        if p not in (0, 1):
            raise EventFormatError(f"line {lineno}: polarity must be 0 or 1, got {p}")
        if x < 0 or y < 0 or t < 0:
            raise EventFormatError(f"line {lineno}: negative field in {s!r}")
        rows.append((x, y, t, p))
    arr = np.asarray(rows, dtype=np.int64).reshape(-1, 4)
    if width is None:
        width = int(arr[:, 0].max()) + 1 if len(arr) else 1
    if height is None:
        height = int(arr[:, 1].max()) + 1 if len(arr) else 1
    try:
        return EventStream.from_columns(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3], width, height)
    except EventFormatError as exc:
        raise EventFormatError(f"{exc} (sensor {width}x{height})") from None


def format_text_events(stream: EventStream) -> str:
    lines = [f"# sensor {stream.width} {stream.height}"]
    lines.extend(f"{x} {y} {t} {p}" for x, y, t, p in stream.as_array().tolist())
    return "\n".join(lines) + "\n"


def load_events(path) -> EventStream:
    """Load a ``.bin`` (N-MNIST) or text event file."""
    path = str(path)
    if path.endswith(".bin"):
        with open(path, "rb") as fh:
            return parse_nmnist_bin(fh.read())
    with open(path, encoding="utf-8") as fh:
        return parse_text_events(fh.read())


def save_text_events(path, stream: EventStream) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_text_events(stream))


# --------------------------------------------------------------------------
# synthetic data

def synth_rotating_dot(class_id: int, n_events: int, seed: int, *, size: int = 64,
                       duration_us: int = 300_000) -> EventStream:
    """A dot circling the sensor; class 0 clockwise, class 1 counterclockwise.

    Class 1 replays the class-0 trajectory backwards in time, so both classes
    share the exact multiset of (x, y, p) and only temporal order differs.
    """
    if class_id not in (0, 1):
        raise ValueError("class_id must be 0 or 1")
    if n_events <= 0:
        raise ValueError("n_events must be positive")
    rng = np.random.default_rng(seed)
    radius = rng.uniform(0.2, 0.35) * size
    cx, cy = rng.uniform(0.4, 0.6, size=2) * size
    phase = rng.uniform(0, 2 * np.pi)
    turns = rng.uniform(1.0, 2.0)
    # image y points down, so decreasing angle reads as clockwise on screen
    theta = phase - 2 * np.pi * turns * np.arange(n_events) / n_events
    jitter = rng.normal(0.0, 0.6, size=(n_events, 2))
    x = np.clip(np.rint(cx + radius * np.cos(theta) + jitter[:, 0]), 0, size - 1).astype(np.int64)
    y = np.clip(np.rint(cy + radius * np.sin(theta) + jitter[:, 1]), 0, size - 1).astype(np.int64)
    p = rng.integers(0, 2, size=n_events)
    t = np.sort(rng.integers(0, duration_us, size=n_events))
    if class_id == 1:
        x, y, p = x[::-1], y[::-1], p[::-1]
    return EventStream.from_columns(x, y, t, p, size, size)


# --------------------------------------------------------------------------
# windowing and sampling

def slide_windows(stream: EventStream, spec: WindowSpec) -> list[EventStream]:
    """Cut ``[t0 + k*stride, t0 + k*stride + window)`` slices, t0 = first event.

    Windows must fit inside the stream duration; a stream shorter than one
    window still yields its first (partial) window. Empty windows are dropped.
    """
    if len(stream) == 0:
        return []
    window = int(round(spec.window_ms * US_PER_MS))
    stride = int(round(spec.stride_ms * US_PER_MS))
    duration = stream.duration_us()
    count = max(1, (duration - window) // stride + 1)
    t0 = int(stream.t[0])
    out = []
    for k in range(count):
        lo = t0 + k * stride
        a, b = np.searchsorted(stream.t, [lo, lo + window], side="left")
        if b > a:
            out.append(stream.select(slice(a, b)))
    return out


def sample_indices(n: int, T: int) -> np.ndarray:
    """Order-preserving selection of T indices out of n.

    n >= T: first index of every ``n // T`` block. n < T: index ``i*n // T``,
    so every event is repeated in place and time stays non-decreasing.
    """
    if T <= 0:
        raise ValueError("T must be positive")
    if n <= 0:
        raise ValueError("cannot sample from an empty window")
    if n >= T:
        return np.arange(T, dtype=np.int64) * (n // T)
    return (np.arange(T, dtype=np.int64) * n) // T


def sample_event_cloud(window: EventStream, T: int) -> EventCloud:
    idx = sample_indices(len(window), T)
    t_min, t_max = int(window.t[0]), int(window.t[-1])
    coords = np.empty((T, 4), dtype=np.float64)
    coords[:, 0] = window.x[idx] / max(window.width - 1, 1)
    coords[:, 1] = window.y[idx] / max(window.height - 1, 1)
    span = t_max - t_min
    coords[:, 2] = (window.t[idx] - t_min) / span if span > 0 else 0.0
    coords[:, 3] = 2.0 * window.p[idx] - 1.0
    return EventCloud(coords, t_min, t_max, window.width, window.height, idx)


def denormalize(cloud: EventCloud) -> np.ndarray:
    """Invert the normalization back to integer (x, y, t, p) rows."""
    c = cloud.coords
    out = np.empty(c.shape, dtype=np.int64)
    out[:, 0] = np.rint(c[:, 0] * max(cloud.width - 1, 1))
    out[:, 1] = np.rint(c[:, 1] * max(cloud.height - 1, 1))
    out[:, 2] = np.rint(cloud.t_min + c[:, 2] * (cloud.t_max - cloud.t_min))
    out[:, 3] = np.rint((c[:, 3] + 1) / 2)
    return out


def stream_to_clouds(stream: EventStream, spec: WindowSpec | None, T: int) -> list[EventCloud]:
    """All Event Clouds of a recording: one per non-empty window, or one for the whole stream."""
    windows = [stream] if spec is None else slide_windows(stream, spec)
    return [sample_event_cloud(w, T) for w in windows if len(w)]
