"""Turn dense label predictions into event reports."""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .errors import ConfigError
from .signal import N_CLASSES, RoadClass, label_runs


@dataclass(frozen=True)
class PostConfig:
    mode_window: int = 11
    min_len: int = 10
    conf_threshold: float = 0.5

    def __post_init__(self) -> None:
        if self.mode_window < 1 or self.mode_window % 2 == 0:
            raise ConfigError("invalid-config", "mode_window must be a positive odd number")
        if self.min_len < 1 or not 0 <= self.conf_threshold <= 1:
            raise ConfigError("invalid-config", "min_len >= 1, conf_threshold in [0, 1]")

    @classmethod
    def from_dict(cls, d: dict) -> "PostConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError("unknown-key", f"post: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True)
class EventReport:
    cls: int
    start: int
    end: int
    confidence: float
    gps: tuple[float, float] | None = None
    timestamp: float | None = None
    vehicle_id: str = ""
    event_id: str = ""

    def to_dict(self) -> dict:
        return {
            "class": int(self.cls), "class_name": RoadClass(self.cls).name.lower(),
            "start": self.start, "end": self.end, "confidence": self.confidence,
            "gps": list(self.gps) if self.gps else None, "timestamp": self.timestamp,
            "vehicle_id": self.vehicle_id, "event_id": self.event_id,
        }


def mode_filter(labels: np.ndarray, window: int = 11, n_classes: int = N_CLASSES) -> np.ndarray:
    """Sliding majority vote over a centered window (truncated at the edges).

    A tie for the most frequent label keeps the original label.
    """
    if window % 2 == 0:
        raise ConfigError("invalid-config", "window must be odd")
    labels = np.asarray(labels)
    L = labels.size
    if L == 0 or window == 1:
        return labels.copy()
    half = window // 2
    onehot = labels[None, :] == np.arange(n_classes)[:, None]
    csum = np.concatenate([np.zeros((n_classes, 1), dtype=np.int64), np.cumsum(onehot, axis=1)], axis=1)
    idx = np.arange(L)
    lo = np.maximum(idx - half, 0)
    hi = np.minimum(idx + half + 1, L)
    counts = csum[:, hi] - csum[:, lo]
    top = counts.max(axis=0)
    unique = (counts == top).sum(axis=0) == 1
    return np.where(unique, counts.argmax(axis=0), labels).astype(labels.dtype)


def length_filter(labels: np.ndarray, min_len: int) -> np.ndarray:
    """Reset event runs shorter than ``min_len`` to Normal."""
    out = np.array(labels, copy=True)
    for s, e, _ in label_runs(out):
        if e - s < min_len:
            out[s:e] = RoadClass.NORMAL
    return out


def postprocess(labels: np.ndarray, cfg: PostConfig = PostConfig()) -> np.ndarray:
    return length_filter(mode_filter(labels, cfg.mode_window), cfg.min_len)


def extract_events(
    labels: np.ndarray,
    probs: np.ndarray,
    min_len: int = 10,
    conf_threshold: float = 0.5,
    meta: dict | None = None,
) -> list[EventReport]:
    """Group runs of one non-Normal class into reports with mean-probability confidence.

    ``probs`` is the ``(n_classes, L)`` probability matrix of the same sequence.
    """
    meta = meta or {}
    gps = (meta["lat"], meta["lon"]) if "lat" in meta and "lon" in meta else None
    reports = []
    for s, e, c in label_runs(labels):
        if e - s < min_len:
            continue
        conf = float(np.mean(probs[c, s:e]))
        if conf < conf_threshold:
            continue
        reports.append(EventReport(
            cls=c, start=s, end=e, confidence=conf, gps=gps,
            timestamp=meta.get("timestamp"), vehicle_id=meta.get("vehicle_id", ""),
            event_id=f"{meta.get('seq_id', '')}#{len(reports)}",
        ))
    return reports


def events_from_prediction(probs: np.ndarray, cfg: PostConfig = PostConfig(), meta: dict | None = None):
    """Argmax, filter and extract: the full dense-to-event chain for one sequence."""
    labels = postprocess(np.argmax(probs, axis=0).astype(np.uint8), cfg)
    return labels, extract_events(labels, probs, cfg.min_len, cfg.conf_threshold, meta)
