"""Input encodings, synthetic spike tasks, event binning and IDX files."""

from __future__ import annotations

import csv
import gzip
import struct
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

IDX_IMAGE_MAGIC = 2051
IDX_LABEL_MAGIC = 2049

_IDX_DTYPES = {
    0x08: np.dtype(">u1"),
    0x09: np.dtype(">i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}


@dataclass
class SpikeBatch:
    """Input sequences shaped ``(batch, time, features)`` with values in [0, 1]."""

    data: np.ndarray
    labels: np.ndarray
    num_classes: Optional[int] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.data.ndim != 3:
            raise ValueError(f"data must be (batch, time, features), got shape {self.data.shape}")
        if len(self.labels) != len(self.data):
            raise ValueError("labels and data disagree on the batch size")
        if self.data.size and (self.data.min() < 0 or self.data.max() > 1):
            raise ValueError("input values must lie in [0, 1]")
        if self.num_classes is None:
            self.num_classes = int(self.labels.max()) + 1 if len(self.labels) else 0
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError("labels out of range for num_classes")

    def __len__(self):
        return len(self.data)

    @property
    def T(self) -> int:
        return self.data.shape[1]

    @property
    def features(self) -> int:
        return self.data.shape[2]

    def subset(self, idx) -> "SpikeBatch":
        return SpikeBatch(self.data[idx], self.labels[idx], self.num_classes)

    def split(self, n_first: int):
        return self.subset(slice(0, n_first)), self.subset(slice(n_first, None))


def direct_encode(images, T: int, labels=None, num_classes=None) -> SpikeBatch:
    """Feed each (normalized) image unchanged to the network at every step."""
    if T < 1:
        raise ValueError("T must be at least 1")
    images = np.asarray(images, dtype=float)
    if images.ndim == 1:
        images = images[None, :]
    data = np.repeat(images[:, None, :], T, axis=1)
    if labels is None:
        labels = np.zeros(len(images), dtype=np.int64)
    return SpikeBatch(data, labels, num_classes)


# ---------------------------------------------------------------------------
# synthetic tasks


def synthetic_task(
    kind: str,
    n_samples: int,
    T: int,
    features: int,
    seed: int = 1234,
    rates=(0.8, 0.2),
    noise: float = 0.02,
) -> SpikeBatch:
    """Two-class desk-scale spike tasks.

    ``rate-pair``: the features are split into two groups; in class ``c``
    group ``c`` fires with probability ``rates[0]`` per step and the other
    group with ``rates[1]``.

    ``temporal-order``: both groups fire at the same rate ``rates[0]``, one
    during the first half of the sequence and the other during the second
    half; the class is which group goes first.  Only the order carries the
    label, so the task needs credit assignment across time.  ``noise`` adds
    background spikes everywhere.
    """
    if n_samples < 1 or features < 2 or T < 1:
        raise ValueError("need n_samples >= 1, features >= 2, T >= 1")
    rng = np.random.default_rng(seed)
    labels = np.arange(n_samples) % 2
    rng.shuffle(labels)
    half = features // 2
    groups = [slice(0, half), slice(half, 2 * half)]

    prob = np.zeros((n_samples, T, features))
    if kind == "rate-pair":
        hi, lo = rates
        for c in (0, 1):
            rows = labels == c
            prob[np.ix_(rows, np.arange(T), np.arange(features)[groups[c]])] = hi
            prob[np.ix_(rows, np.arange(T), np.arange(features)[groups[1 - c]])] = lo
    elif kind == "temporal-order":
        if T < 4:
            raise ValueError("temporal-order needs T >= 4")
        early = np.arange(T // 2)
        late = np.arange(T // 2, T)
        for c in (0, 1):
            rows = labels == c
            first, second = groups[c], groups[1 - c]
            prob[np.ix_(rows, early, np.arange(features)[first])] = rates[0]
            prob[np.ix_(rows, late, np.arange(features)[second])] = rates[0]
        prob = np.maximum(prob, noise)
    else:
        raise ValueError(f"unknown synthetic task {kind!r}")
    data = (rng.random(prob.shape) < prob).astype(float)
    return SpikeBatch(data, labels, num_classes=2, meta={"kind": kind, "seed": seed})


# ---------------------------------------------------------------------------
# event streams


EVENT_DTYPE = np.dtype([("t_us", np.int64), ("x", np.int64), ("y", np.int64), ("p", np.int8)])


@dataclass
class EventStream:
    events: np.ndarray  # structured array with EVENT_DTYPE fields

    def __post_init__(self):
        ev = np.asarray(self.events)
        if ev.dtype != EVENT_DTYPE:
            ev = np.array([tuple(e) for e in ev], dtype=EVENT_DTYPE) if len(ev) else np.zeros(0, EVENT_DTYPE)
        if len(ev) and np.any(np.diff(ev["t_us"]) < 0):
            raise ValueError("event timestamps must be nondecreasing")
        if len(ev) and not np.all(np.isin(ev["p"], (0, 1))):
            raise ValueError("polarity must be 0 or 1")
        self.events = ev

    def __len__(self):
        return len(self.events)


def read_event_csv(path) -> EventStream:
    """Read ``t_us,x,y,p`` rows (with that header) into an event stream."""
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["t_us", "x", "y", "p"]:
            raise ValueError(f"{path}: expected header 't_us,x,y,p', got {header}")
        rows = [tuple(int(v) for v in row) for row in reader if row]
    return EventStream(np.array(rows, dtype=EVENT_DTYPE) if rows else np.zeros(0, EVENT_DTYPE))


def write_event_csv(path, stream: EventStream) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\r\n")
        writer.writerow(["t_us", "x", "y", "p"])
        for e in stream.events:
            writer.writerow([int(e["t_us"]), int(e["x"]), int(e["y"]), int(e["p"])])


def bin_events(
    stream: EventStream,
    T: int,
    height: int,
    width: int,
    mode: str = "or",
    label: int = 0,
    num_classes: Optional[int] = None,
    count_norm: Optional[float] = None,
) -> SpikeBatch:
    """Bin an event stream into ``T`` equal-duration frames.

    Bins are half-open, ``[t0 + k D/T, t0 + (k+1) D/T)`` with ``t0`` the first
    timestamp and ``D = t_last - t0 + 1`` microseconds, so an event sitting
    exactly on a boundary belongs to the later bin.  Features are laid out as
    ``polarity * H * W + y * W + x``.  In ``or`` mode a feature is 1 when at
    least one event of that polarity hit the pixel during the bin; ``count``
    mode divides counts by ``count_norm`` (default: the largest count) and
    clips to [0, 1].  Out-of-bounds events are dropped and counted in
    ``meta["rejected"]``; an empty stream gives zeros with ``meta["empty"]``.
    """
    if T < 1:
        raise ValueError("T must be at least 1")
    if mode not in ("or", "count"):
        raise ValueError(f"unknown binning mode {mode!r}")
    counts = np.zeros((T, 2, height, width))
    ev = stream.events
    ok = (ev["x"] >= 0) & (ev["x"] < width) & (ev["y"] >= 0) & (ev["y"] < height)
    rejected = int(np.sum(~ok))
    ev = ev[ok]
    meta = {"rejected": rejected, "empty": len(ev) == 0}
    if len(ev) == 0:
        warnings.warn("event stream has no usable events; returning an all-zero frame")
    else:
        t0 = int(ev["t_us"][0])
        duration = int(ev["t_us"][-1]) - t0 + 1
        bins = ((ev["t_us"] - t0) * T) // duration
        np.add.at(counts, (bins, ev["p"].astype(np.int64), ev["y"], ev["x"]), 1.0)
    if mode == "or":
        frames = (counts > 0).astype(float)
    else:
        norm = count_norm if count_norm is not None else max(counts.max(), 1.0)
        frames = np.clip(counts / norm, 0.0, 1.0)
    data = frames.reshape(1, T, 2 * height * width)
    return SpikeBatch(data, [label], num_classes, meta=meta)


# ---------------------------------------------------------------------------
# IDX files


class IdxFormatError(ValueError):
    def __init__(self, message: str, offset: Optional[int] = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)


def _open(path):
    return gzip.open(path, "rb") if str(path).endswith(".gz") else open(path, "rb")


def read_idx(path) -> np.ndarray:
    """Parse any IDX file: two zero bytes, a dtype code, a rank, big-endian dims."""
    with _open(path) as f:
        raw = f.read()
    if len(raw) < 4:
        raise IdxFormatError("file too short for the magic number", len(raw))
    if raw[0] != 0 or raw[1] != 0:
        raise IdxFormatError("bad magic: first two bytes must be zero", 0)
    code, ndim = raw[2], raw[3]
    if code not in _IDX_DTYPES:
        raise IdxFormatError(f"bad magic: unknown element type 0x{code:02x}", 2)
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IdxFormatError("truncated dimension header", len(raw))
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    dtype = _IDX_DTYPES[code]
    need = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
    if len(raw) - header < need:
        raise IdxFormatError(
            f"truncated payload: expected {need} bytes after the header, found {len(raw) - header}",
            len(raw),
        )
    return np.frombuffer(raw, dtype=dtype, count=need // dtype.itemsize, offset=header).reshape(dims)


def write_idx(path, array: np.ndarray) -> None:
    array = np.asarray(array)
    codes = {v: k for k, v in _IDX_DTYPES.items()}
    dtype = array.dtype.newbyteorder(">")
    if dtype not in codes:
        raise ValueError(f"dtype {array.dtype} has no IDX code")
    with open(path, "wb") as f:
        f.write(bytes([0, 0, codes[dtype], array.ndim]))
        f.write(struct.pack(f">{array.ndim}I", *array.shape))
        f.write(array.astype(dtype).tobytes())


def _magic(path) -> int:
    with _open(path) as f:
        head = f.read(4)
    return struct.unpack(">I", head)[0] if len(head) == 4 else -1


def load_idx_images(images_path, labels_path=None):
    """Load IDX images as ``(n, rows*cols)`` floats in [0, 1], plus labels.

    Returns ``(images, labels)``; ``labels`` is ``None`` without a label file.
    """
    magic = _magic(images_path)
    if magic != IDX_IMAGE_MAGIC:
        raise IdxFormatError(f"bad magic {magic} for an image file, expected {IDX_IMAGE_MAGIC}", 0)
    images = read_idx(images_path)
    images = images.reshape(len(images), -1).astype(float) / 255.0
    labels = None
    if labels_path is not None:
        magic = _magic(labels_path)
        if magic != IDX_LABEL_MAGIC:
            raise IdxFormatError(f"bad magic {magic} for a label file, expected {IDX_LABEL_MAGIC}", 0)
        labels = read_idx(labels_path).astype(np.int64)
        if len(labels) != len(images):
            raise IdxFormatError(
                f"label count {len(labels)} does not match image count {len(images)}"
            )
    return images, labels


__all__ = [
    "SpikeBatch",
    "direct_encode",
    "synthetic_task",
    "EventStream",
    "EVENT_DTYPE",
    "read_event_csv",
    "write_event_csv",
    "bin_events",
    "IdxFormatError",
    "read_idx",
    "write_idx",
    "load_idx_images",
]
