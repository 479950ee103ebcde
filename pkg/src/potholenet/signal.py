"""Domain types and sequence preparation shared by the edge and cloud sides.

Intervals are half-open ``[start, end)`` in sample indices everywhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Iterator, Sequence

import numpy as np

from .errors import DataError

DEFAULT_SAMPLE_RATE_HZ = 100.0
DEFAULT_SEQ_LEN = 512
AXIS_INDEX = {"ax": 0, "ay": 1, "az": 2}


class RoadClass(IntEnum):
    NORMAL = 0
    MANHOLE = 1
    SPEED_BUMP = 2
    POTHOLE = 3


N_CLASSES = len(RoadClass)
EVENT_CLASSES = (RoadClass.MANHOLE, RoadClass.SPEED_BUMP, RoadClass.POTHOLE)


@dataclass(frozen=True)
class SensorRecord:
    t: int
    timestamp: float
    gps: tuple[float, float]
    speed: float
    accel: tuple[float, float, float]

    def validate(self) -> None:
        lat, lon = self.gps
        if not (math.isfinite(lat) and math.isfinite(lon)) or abs(lat) > 90 or abs(lon) > 180:
            raise DataError("invalid-gps", f"t={self.t} gps={self.gps}")
        if not math.isfinite(self.speed) or self.speed < 0:
            raise DataError("invalid-speed", f"t={self.t} speed={self.speed}")
        if not math.isfinite(self.timestamp):
            raise DataError("invalid-timestamp", f"t={self.t}")


@dataclass(frozen=True, eq=False)
class SensingStream:
    """A vehicle's raw sensing stream, stored column-wise.

    ``accel`` has shape ``(T, 3)`` with columns ``(a_x, a_y, a_z)``.
    ``ground_truth`` holds ``(start, end, class)`` triples when known.
    """

    vehicle_id: str
    t: np.ndarray
    timestamp: np.ndarray
    lat: np.ndarray
    lon: np.ndarray
    speed: np.ndarray
    accel: np.ndarray
    sample_rate_hz: float = DEFAULT_SAMPLE_RATE_HZ
    ground_truth: tuple[tuple[int, int, int], ...] = ()

    def __post_init__(self) -> None:
        n = len(self.t)
        for name in ("timestamp", "lat", "lon", "speed"):
            if len(getattr(self, name)) != n:
                raise DataError("column-length", f"{name} has {len(getattr(self, name))} != {n}")
        if self.accel.shape != (n, 3):
            raise DataError("column-length", f"accel shape {self.accel.shape}")
        if n > 1 and np.any(np.diff(self.t) <= 0):
            raise DataError("non-monotone-index", self.vehicle_id)

    def __len__(self) -> int:
        return len(self.t)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SensingStream):
            return NotImplemented
        return (
            self.vehicle_id == other.vehicle_id
            and self.sample_rate_hz == other.sample_rate_hz
            and tuple(map(tuple, self.ground_truth)) == tuple(map(tuple, other.ground_truth))
            and all(
                np.array_equal(getattr(self, k), getattr(other, k))
                for k in ("t", "timestamp", "lat", "lon", "speed", "accel")
            )
        )

    def record(self, i: int) -> SensorRecord:
        return SensorRecord(
            t=int(self.t[i]),
            timestamp=float(self.timestamp[i]),
            gps=(float(self.lat[i]), float(self.lon[i])),
            speed=float(self.speed[i]),
            accel=(float(self.accel[i, 0]), float(self.accel[i, 1]), float(self.accel[i, 2])),
        )

    @property
    def records(self) -> Iterator[SensorRecord]:
        return (self.record(i) for i in range(len(self)))

    @classmethod
    def from_records(
        cls,
        vehicle_id: str,
        records: Sequence[SensorRecord],
        sample_rate_hz: float = DEFAULT_SAMPLE_RATE_HZ,
        ground_truth: Sequence[tuple[int, int, int]] = (),
    ) -> "SensingStream":
        n = len(records)
        accel = np.array([r.accel for r in records], dtype=np.float64).reshape(n, 3)
        return cls(
            vehicle_id=vehicle_id,
            t=np.array([r.t for r in records], dtype=np.int64),
            timestamp=np.array([r.timestamp for r in records], dtype=np.float64),
            lat=np.array([r.gps[0] for r in records], dtype=np.float64),
            lon=np.array([r.gps[1] for r in records], dtype=np.float64),
            speed=np.array([r.speed for r in records], dtype=np.float64),
            accel=accel,
            sample_rate_hz=sample_rate_hz,
            ground_truth=tuple((int(s), int(e), int(c)) for s, e, c in ground_truth),
        )

    def valid_gps(self) -> np.ndarray:
        return (
            np.isfinite(self.lat)
            & np.isfinite(self.lon)
            & (np.abs(self.lat) <= 90)
            & (np.abs(self.lon) <= 180)
        )


@dataclass(frozen=True, eq=False)
class CandidateEvent:
    """Edge-to-cloud packet: an accel segment plus context metadata.

    ``t_start``/``t_end`` bound the abnormal interval before context was added;
    ``seg_start`` is the stream index of the first sample in ``accel``.
    """

    vehicle_id: str
    event_id: int
    t_start: int
    t_end: int
    seg_start: int
    timestamp: float
    lat: float
    lon: float
    speed: float
    sample_rate_hz: float
    accel: np.ndarray  # (3, l)

    @property
    def seg_end(self) -> int:
        return self.seg_start + self.accel.shape[1]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CandidateEvent):
            return NotImplemented
        scalars = ("vehicle_id", "event_id", "t_start", "t_end", "seg_start",
                    "timestamp", "lat", "lon", "speed", "sample_rate_hz")
        return all(getattr(self, k) == getattr(other, k) for k in scalars) and np.array_equal(
            self.accel, other.accel
        )


@dataclass(frozen=True, eq=False)
class LabeledSequence:
    """Fixed-length model input ``x`` (C x L) with point-wise labels ``y`` (L,).

    ``offset`` is the segment index that maps to output position 0 (negative
    when the segment was padded on the left).
    """

    x: np.ndarray
    y: np.ndarray
    meta: dict = field(default_factory=dict)
    seq_id: str = ""
    offset: int = 0

    def __post_init__(self) -> None:
        if self.x.ndim != 2 or self.y.shape != (self.x.shape[1],):
            raise DataError("shape-error", f"x {self.x.shape} y {self.y.shape}")

    @property
    def length(self) -> int:
        return self.x.shape[1]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, LabeledSequence):
            return NotImplemented
        return (
            self.seq_id == other.seq_id
            and self.offset == other.offset
            and self.meta == other.meta
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.y, other.y)
        )


def label_runs(labels: np.ndarray, *, skip_normal: bool = True) -> list[tuple[int, int, int]]:
    """Maximal runs of identical labels as ``(start, end, class)``."""
    labels = np.asarray(labels)
    if labels.size == 0:
        return []
    change = np.flatnonzero(labels[1:] != labels[:-1]) + 1
    starts = np.concatenate(([0], change))
    ends = np.concatenate((change, [labels.size]))
    return [
        (int(s), int(e), int(labels[s]))
        for s, e in zip(starts, ends)
        if not (skip_normal and labels[s] == RoadClass.NORMAL)
    ]


def to_fixed_length(
    segment: np.ndarray,
    labels: np.ndarray,
    L: int = DEFAULT_SEQ_LEN,
    *,
    meta: dict | None = None,
    seq_id: str = "",
) -> LabeledSequence:
    """Pad (centered) or crop a ``C x l`` segment to exactly ``L`` samples.

    Crops are centered on the midpoint of the hull of non-Normal labels, or on
    the segment midpoint when every label is Normal.
    """
    segment = np.asarray(segment)
    labels = np.asarray(labels, dtype=np.uint8)
    if segment.ndim != 2 or segment.shape[1] == 0:
        raise DataError("empty-segment")
    if labels.shape != (segment.shape[1],):
        raise DataError("shape-error", f"labels {labels.shape} vs segment {segment.shape}")
    if L < 8:
        raise DataError("invalid-length", f"L={L}")
    n = segment.shape[1]
    if n <= L:
        left = (L - n) // 2
        x = np.zeros((segment.shape[0], L), dtype=segment.dtype)
        x[:, left:left + n] = segment
        y = np.zeros(L, dtype=np.uint8)
        y[left:left + n] = labels
        offset = -left
    else:
        events = np.flatnonzero(labels != RoadClass.NORMAL)
        if events.size:
            lo, hi = int(events[0]), int(events[-1]) + 1
        else:
            lo, hi = 0, n
        start = min(max((lo + hi - L) // 2, 0), n - L)
        x = segment[:, start:start + L].copy()
        y = labels[start:start + L].copy()
        offset = start
    return LabeledSequence(x=x, y=y, meta=dict(meta or {}), seq_id=seq_id, offset=offset)


def normalize(seq: LabeledSequence) -> LabeledSequence:
    """Per-channel z-score (population sd); constant channels map to zeros."""
    x = np.asarray(seq.x, dtype=np.float64)
    mean = x.mean(axis=1, keepdims=True)
    centered = x - mean
    sd = np.sqrt(np.mean(centered * centered, axis=1, keepdims=True))
    flat = sd <= 1e-9 * np.maximum(1.0, np.abs(mean))
    out = np.where(flat, 0.0, centered / np.where(flat, 1.0, sd))
    return LabeledSequence(x=out, y=seq.y, meta=seq.meta, seq_id=seq.seq_id, offset=seq.offset)
