"""Event streams, frame integration, static repeat encoding and synthetic datasets.

Binary event file layout (all little-endian)::

    offset  size  field
    0       6     magic b"TRREVT"
    6       1     version (1)
    7       1     reserved, 0
    8       2     sensor width  (u16)
    10      2     sensor height (u16)
    12      4     record count  (u32)
    16      9*n   records: t u32, p u8, x u16, y u16 (packed, no padding)

CSV fallback: an optional ``# width=W height=H`` comment line, a ``t,p,x,y``
header, then one record per row.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, NamedTuple, Optional

import numpy as np

from .autograd import Tensor, repeat_axis0
from .errors import ContractError, DataError, DimensionError, ParseError

EVENT_MAGIC = b"TRREVT"
EVENT_VERSION = 1
HEADER = struct.Struct("<6sBBHHI")
EVENT_DTYPE = np.dtype([("t", "<u4"), ("p", "u1"), ("x", "<u2"), ("y", "<u2")])
assert EVENT_DTYPE.itemsize == 9


class EventRecord(NamedTuple):
    t: int
    p: int
    x: int
    y: int


@dataclass
class EventStream:
    width: int
    height: int
    events: np.ndarray  # structured, EVENT_DTYPE

    def __len__(self) -> int:
        return len(self.events)

    def __eq__(self, other) -> bool:
        if not isinstance(other, EventStream):
            return NotImplemented
        return (self.width, self.height) == (other.width, other.height) and np.array_equal(self.events, other.events)

    @classmethod
    def from_records(cls, records, width: int, height: int) -> "EventStream":
        events = np.array([tuple(r) for r in records], dtype=EVENT_DTYPE)
        stream = cls(width, height, events)
        stream.validate()
        return stream

    def records(self) -> list[EventRecord]:
        return [EventRecord(int(t), int(p), int(x), int(y)) for t, p, x, y in self.events.tolist()]

    def validate(self) -> None:
        ev = self.events
        if len(ev) == 0:
            return
        if np.any(ev["p"] > 1):
            raise DataError(f"polarity must be 0 or 1 (record {int(np.argmax(ev['p'] > 1))})")
        if np.any(ev["x"] >= self.width) or np.any(ev["y"] >= self.height):
            bad = int(np.argmax((ev["x"] >= self.width) | (ev["y"] >= self.height)))
            raise DataError(f"record {bad} lies outside the {self.width}x{self.height} sensor")
        back = np.flatnonzero(np.diff(ev["t"].astype(np.int64)) < 0)
        if back.size:
            raise DataError(f"timestamp regression at record {int(back[0]) + 1}")


# ---------------------------------------------------------------------------
# binary / CSV I/O
# ---------------------------------------------------------------------------

def serialize_events(stream: EventStream) -> bytes:
    stream.validate()
    header = HEADER.pack(EVENT_MAGIC, EVENT_VERSION, 0, stream.width, stream.height, len(stream))
    return header + np.ascontiguousarray(stream.events, dtype=EVENT_DTYPE).tobytes()


def deserialize_events(blob: bytes) -> EventStream:
    if len(blob) < HEADER.size:
        raise ParseError(f"truncated header: {len(blob)} of {HEADER.size} bytes", len(blob))
    magic, version, _, width, height, count = HEADER.unpack_from(blob, 0)
    if magic != EVENT_MAGIC:
        raise ParseError(f"bad magic {magic!r}", 0)
    if version != EVENT_VERSION:
        raise ParseError(f"unsupported version {version}", 6)
    expected = HEADER.size + count * EVENT_DTYPE.itemsize
    if len(blob) != expected:
        complete = (len(blob) - HEADER.size) // EVENT_DTYPE.itemsize
        offset = HEADER.size + min(complete, count) * EVENT_DTYPE.itemsize
        raise ParseError(f"header announces {count} records but payload has {len(blob) - HEADER.size} bytes", offset)
    events = np.frombuffer(blob, dtype=EVENT_DTYPE, count=count, offset=HEADER.size).copy()
    bad = np.flatnonzero((events["p"] > 1) | (events["x"] >= width) | (events["y"] >= height))
    if bad.size:
        raise ParseError(f"malformed record {int(bad[0])}", HEADER.size + int(bad[0]) * EVENT_DTYPE.itemsize)
    stream = EventStream(width, height, events)
    stream.validate()
    return stream


def write_event_file(stream: EventStream, path) -> None:
    Path(path).write_bytes(serialize_events(stream))


def _parse_csv(text: str) -> EventStream:
    width = height = None
    header_seen = False
    rows = []
    offset = 0
    for line in text.splitlines(keepends=True):
        line_start = offset
        offset += len(line.encode())
        stripped = line.strip()
        if not stripped:
            continue
        if stripped.startswith("#"):
            for token in stripped[1:].split():
                key, _, value = token.partition("=")
                if key == "width":
                    width = int(value)
                elif key == "height":
                    height = int(value)
            continue
        fields = [f.strip() for f in next(csv.reader([stripped]))]
        if not header_seen:
            if fields != ["t", "p", "x", "y"]:
                raise ParseError("CSV header must be 't,p,x,y'", line_start)
            header_seen = True
            continue
        try:
            t, p, x, y = (int(v) for v in fields)
        except ValueError:
            raise ParseError(f"malformed CSV record {fields!r}", line_start) from None
        if p not in (0, 1) or min(t, x, y) < 0:
            raise ParseError(f"out-of-range CSV record {fields!r}", line_start)
        rows.append((t, p, x, y))
    if not header_seen:
        raise ParseError("CSV header must be 't,p,x,y'", offset)
    events = np.array(rows, dtype=EVENT_DTYPE) if rows else np.zeros(0, dtype=EVENT_DTYPE)
    if width is None:
        width = int(events["x"].max()) + 1 if rows else 1
    if height is None:
        height = int(events["y"].max()) + 1 if rows else 1
    stream = EventStream(width, height, events)
    stream.validate()
    return stream


def write_event_csv(stream: EventStream, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# width={stream.width} height={stream.height}\n")
        writer = csv.writer(fh)
        writer.writerow(["t", "p", "x", "y"])
        writer.writerows(stream.events.tolist())


def parse_event_file(path) -> EventStream:
    """Read a binary event file, or a CSV one when the name ends in ``.csv``."""
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return _parse_csv(path.read_text())
    return deserialize_events(path.read_bytes())


# ---------------------------------------------------------------------------
# frame integration
# ---------------------------------------------------------------------------

def fixed_count_sizes(n: int, T: int) -> list[int]:
    """Near-equal slice sizes; the remainder goes to the earliest slices."""
    base, extra = divmod(n, T)
    return [base + (1 if i < extra else 0) for i in range(T)]


def integrate_frames(stream: EventStream, T: int, policy: str = "fixed_count") -> np.ndarray:
    """Accumulate events into ``[T, 2, H, W]`` count frames (polarity = channel)."""
    if T < 1:
        raise ContractError(f"T must be >= 1, got {T}")
    ev = stream.events
    n = len(ev)
    if policy == "fixed_count":
        if n == 0:
            raise DataError("fixed_count integration needs a non-empty stream")
        slices = np.repeat(np.arange(T), fixed_count_sizes(n, T))
    elif policy == "fixed_duration":
        if n == 0:
            return np.zeros((T, 2, stream.height, stream.width), dtype=np.float32)
        t = ev["t"].astype(np.int64)
        span = int(t[-1] - t[0])
        if span == 0:
            slices = np.zeros(n, dtype=np.int64)
        else:
            slices = np.minimum((t - t[0]) * T // span, T - 1)
    else:
        raise ContractError(f"unknown integration policy {policy!r}")
    frames = np.zeros((T, 2, stream.height, stream.width), dtype=np.float32)
    np.add.at(frames, (slices, ev["p"].astype(np.intp), ev["y"].astype(np.intp), ev["x"].astype(np.intp)), 1.0)
    return frames


def downsample_spatial(frames: np.ndarray, factor: int) -> np.ndarray:
    """Block-sum pooling of the two trailing (spatial) axes; conserves counts."""
    if factor < 1:
        raise ContractError("factor must be >= 1")
    *lead, h, w = frames.shape
    if h % factor or w % factor:
        raise DimensionError(f"spatial dims {h}x{w} are not divisible by {factor}")
    if factor == 1:
        return frames.copy()
    blocks = frames.reshape(*lead, h // factor, factor, w // factor, factor)
    return blocks.sum(axis=(-3, -1))


def frames_to_events(frames: np.ndarray, frame_duration: int = 1000) -> EventStream:
    """Expand integer count frames ``[T, 2, H, W]`` into an event stream."""
    T, _, h, w = frames.shape
    records = []
    for t in range(T):
        ps, ys, xs = np.nonzero(frames[t])
        for p, y, x in zip(ps.tolist(), ys.tolist(), xs.tolist()):
            records.extend([(t * frame_duration, p, x, y)] * int(frames[t, p, y, x]))
    events = np.array(records, dtype=EVENT_DTYPE) if records else np.zeros(0, dtype=EVENT_DTYPE)
    return EventStream(w, h, events)


def encode_static(batch: Tensor, T: int) -> Tensor:
    """Present a static ``[B, C, H, W]`` batch at every one of ``T`` timesteps."""
    if T < 1:
        raise ContractError(f"T must be >= 1, got {T}")
    batch = batch if isinstance(batch, Tensor) else Tensor(batch)
    return repeat_axis0(batch, T)


# ---------------------------------------------------------------------------
# synthetic datasets
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticDatasetSpec:
    kind: str = "moving_bar"
    num_classes: int = 10
    samples_per_class: int = 50
    T: int = 5
    height: int = 16
    width: int = 16
    noise: float = 0.05
    seed: int = 0
    test_fraction: float = 0.1

    def validate(self) -> None:
        if self.kind not in ("moving_bar", "static_blobs"):
            raise ContractError(f"unknown dataset kind {self.kind!r}")
        if self.kind == "moving_bar" and self.num_classes % 2:
            raise ContractError("moving_bar needs an even class count (axes x 2 speeds)")
        if self.samples_per_class < 2 or self.T < 1:
            raise ContractError("need >= 2 samples per class and T >= 1")
        if not 0.0 < self.test_fraction < 1.0:
            raise ContractError(f"test_fraction must lie in (0, 1), got {self.test_fraction}")


@dataclass
class Dataset:
    """Samples plus labels. Temporal samples are ``[N, T, C, H, W]``, static ``[N, C, H, W]``."""

    x: np.ndarray
    y: np.ndarray
    mode: str

    def __len__(self) -> int:
        return len(self.y)

    def batch_input(self, index) -> np.ndarray:
        x = self.x[index]
        return np.ascontiguousarray(x.transpose(1, 0, 2, 3, 4)) if self.mode == "temporal" else x

    def batches(self, batch_size: int, order: Optional[np.ndarray] = None) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        order = np.arange(len(self)) if order is None else order
        for start in range(0, len(order), batch_size):
            index = order[start:start + batch_size]
            yield self.batch_input(index), self.y[index]


MOVING_BAR_SPEEDS = (0.75, 2.0)


def render_moving_bar(axis_angle: float, direction: int, speed: float, midpoint: tuple[float, float],
                      T: int, height: int, width: int, thickness: float = 1.6, length: float = 8.0,
                      polarity: Optional[np.ndarray] = None) -> np.ndarray:
    """Event frames ``[T, 2, H, W]`` of a bar sweeping along ``axis_angle``.

    The bar is perpendicular to its motion and centred on ``midpoint`` at the
    middle of the window; ``direction`` (+1/-1) picks which way it travels.
    Each covered pixel emits one event whose polarity is ``polarity[y, x]``
    (all ON when omitted). Rendering is symmetric under time reversal:
    reversing the frames of direction +1 yields exactly direction -1.
    """
    if direction not in (1, -1):
        raise ContractError("direction must be +1 or -1")
    ux, uy = np.cos(axis_angle), np.sin(axis_angle)
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    yy += 0.5
    xx += 0.5
    pol = np.ones((height, width), dtype=np.intp) if polarity is None else polarity.astype(np.intp)
    frames = np.zeros((T, 2, height, width), dtype=np.float32)
    mid_t = (T + 1) / 2
    for t in range(1, T + 1):
        offset = (direction * speed) * (t - mid_t)
        cx = midpoint[0] + offset * ux
        cy = midpoint[1] + offset * uy
        dx, dy = xx - cx, yy - cy
        along = np.abs(dx * ux + dy * uy)
        across = np.abs(-dx * uy + dy * ux)
        covered = (along < thickness / 2) & (across < length / 2)
        ys, xs = np.nonzero(covered)
        frames[t - 1, pol[ys, xs], ys, xs] = 1.0
    return frames


def moving_bar_class(label: int, num_classes: int) -> tuple[float, float]:
    """``(axis_angle, speed)`` of a moving_bar class."""
    n_speeds = len(MOVING_BAR_SPEEDS)
    n_axes = num_classes // n_speeds
    return np.pi * (label // n_speeds) / n_axes, MOVING_BAR_SPEEDS[label % n_speeds]


def _moving_bar_sample(label: int, spec: SyntheticDatasetSpec, rng: np.random.Generator) -> np.ndarray:
    angle, speed = moving_bar_class(label, spec.num_classes)
    scale = spec.height / 16
    direction = int(rng.choice((-1, 1)))
    midpoint = (spec.width / 2 + rng.uniform(-2, 2) * scale, spec.height / 2 + rng.uniform(-2, 2) * scale)
    thickness = rng.uniform(1.2, 2.2) * scale
    length = rng.uniform(6.0, 10.0) * scale
    frames = render_moving_bar(angle, direction, speed * scale, midpoint, spec.T, spec.height, spec.width,
                               thickness, length)
    if spec.noise > 0:
        dropout = rng.random(frames.shape) < spec.noise * 2
        frames[dropout] = 0.0
        frames += (rng.random(frames.shape) < spec.noise).astype(np.float32)
    return frames


def _blob_prototypes(spec: SyntheticDatasetSpec) -> np.ndarray:
    rng = np.random.default_rng([spec.seed, 1])
    margin = spec.height / 5
    return rng.uniform(margin, spec.height - margin, (spec.num_classes, 2, 3, 2))


def _static_blob_sample(label: int, spec: SyntheticDatasetSpec, protos: np.ndarray,
                        rng: np.random.Generator) -> np.ndarray:
    yy, xx = np.mgrid[0:spec.height, 0:spec.width] + 0.5
    image = np.zeros((2, spec.height, spec.width))
    sigma = spec.height / 10
    for channel in range(2):
        for cx, cy in protos[label, channel]:
            cx += rng.normal(0, 0.75)
            cy += rng.normal(0, 0.75)
            amp = rng.uniform(0.7, 1.3)
            image[channel] += amp * np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * sigma ** 2))
    image += rng.normal(0, spec.noise, image.shape)
    return image.astype(np.float32)


def generate_synthetic(spec: SyntheticDatasetSpec) -> tuple[Dataset, Dataset]:
    """Seeded class-balanced dataset, split per class into train and test."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    protos = _blob_prototypes(spec) if spec.kind == "static_blobs" else None
    samples, labels = [], []
    for label in range(spec.num_classes):
        for _ in range(spec.samples_per_class):
            if spec.kind == "moving_bar":
                samples.append(_moving_bar_sample(label, spec, rng))
            else:
                samples.append(_static_blob_sample(label, spec, protos, rng))
            labels.append(label)
    x = np.stack(samples)
    y = np.asarray(labels, dtype=np.int64)
    n_test = min(spec.samples_per_class - 1, max(1, int(round(spec.samples_per_class * spec.test_fraction))))
    train_idx, test_idx = [], []
    for label in range(spec.num_classes):
        members = np.flatnonzero(y == label)
        members = members[rng.permutation(len(members))]
        test_idx.extend(members[:n_test].tolist())
        train_idx.extend(members[n_test:].tolist())
    train_idx, test_idx = np.sort(train_idx), np.sort(test_idx)
    mode = "temporal" if spec.kind == "moving_bar" else "static"
    return Dataset(x[train_idx], y[train_idx], mode), Dataset(x[test_idx], y[test_idx], mode)


def save_dataset(dataset: Dataset, path) -> None:
    np.savez(path, x=dataset.x, y=dataset.y, mode=np.array(dataset.mode))


def load_dataset(path) -> Dataset:
    with np.load(path) as blob:
        return Dataset(blob["x"].astype(np.float32), blob["y"].astype(np.int64), str(blob["mode"]))
