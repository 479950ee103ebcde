"""Synthetic vibration streams with injected road events.

The event waveforms below are plausible inventions, not measured templates:

* pothole: a sharp negative dip (wheel drops in) followed by an impact
  overshoot that rings down as an exponentially damped ~8 Hz oscillation;
* manhole: a short biphasic spike;
* speed bump: two smooth positive humps (front and rear axle) joined by a
  shallow body-bounce sag.

Every template is scaled to unit peak magnitude, then multiplied by the
event amplitude (in multiples of background sigma) and by the local background
sigma at the event onset.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, DataError
from .rng import make_rng
from .signal import RoadClass, SensingStream

GRAVITY = 9.81

CLASS_NAMES = {
    "manhole": RoadClass.MANHOLE,
    "speed_bump": RoadClass.SPEED_BUMP,
    "pothole": RoadClass.POTHOLE,
}


def _pothole_shape(n: int, fs: float) -> np.ndarray:
    n_dip = max(3, n // 4)
    dip = -np.sin(np.pi * np.arange(n_dip) / n_dip)
    k = np.arange(n - n_dip)
    tau = max(1.0, (n - n_dip) / 2.5)
    ring = 1.3 * np.exp(-k / tau) * np.cos(2 * np.pi * 8.0 * k / fs)
    taper = np.minimum(1.0, (n - n_dip - k) / max(1.0, 0.15 * (n - n_dip)))
    return np.concatenate([dip, ring * taper])


def _manhole_shape(n: int, fs: float) -> np.ndarray:
    u = (np.arange(n) + 0.5) / n
    return np.sin(2 * np.pi * u) * np.sin(np.pi * u) ** 2


def _speed_bump_shape(n: int, fs: float) -> np.ndarray:
    u = (np.arange(n) + 0.5) / n
    width = 0.38
    front = np.where(u < width, np.clip(np.sin(np.pi * u / width), 0.0, None) ** 0.5, 0.0)
    rear = np.where(u > 1 - width, np.clip(np.sin(np.pi * (u - (1 - width)) / width), 0.0, None) ** 0.5, 0.0)
    mid = (u >= width) & (u <= 1 - width)
    sag = np.where(mid, -0.45 * np.sin(np.pi * (u - width) / (1 - 2 * width)), 0.0)
    return front + rear + sag


@dataclass(frozen=True)
class EventTemplate:
    cls: RoadClass
    duration: tuple[int, int]
    amplitude: tuple[float, float]
    shape: Callable[[int, float], np.ndarray]

    def __post_init__(self) -> None:
        if self.duration[0] < 8 or self.duration[1] < self.duration[0]:
            raise ConfigError("invalid-template", f"{self.cls.name}: duration {self.duration}")
        if self.amplitude[0] <= 0 or self.amplitude[1] < self.amplitude[0]:
            raise ConfigError("invalid-template", f"{self.cls.name}: amplitude {self.amplitude}")

    def waveform(self, n: int, fs: float) -> np.ndarray:
        w = self.shape(n, fs)
        return w / np.max(np.abs(w))


POTHOLE_DURATION = (24, 48)
POTHOLE_AMPLITUDE = (8.0, 16.0)

TEMPLATES: dict[RoadClass, EventTemplate] = {
    RoadClass.POTHOLE: EventTemplate(
        RoadClass.POTHOLE, POTHOLE_DURATION, POTHOLE_AMPLITUDE, _pothole_shape),
    # 0.6-1.2x the pothole amplitude range: amplitude-confusable, shape-separable
    RoadClass.MANHOLE: EventTemplate(
        RoadClass.MANHOLE, (10, 20),
        (0.6 * POTHOLE_AMPLITUDE[0], 1.2 * POTHOLE_AMPLITUDE[1]), _manhole_shape),
    # 2-4x the pothole duration range
    RoadClass.SPEED_BUMP: EventTemplate(
        RoadClass.SPEED_BUMP, (2 * POTHOLE_DURATION[0], 4 * POTHOLE_DURATION[1]),
        (5.0, 10.0), _speed_bump_shape),
}


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 11
    n_streams: int = 50
    stream_length: int = 12000
    sample_rate_hz: float = 100.0
    sigma_range: tuple[float, float] = (0.05, 0.3)
    events_mean: float = 5.0
    class_mix: dict = field(
        default_factory=lambda: {"pothole": 0.4, "manhole": 0.3, "speed_bump": 0.3})
    speed_range: tuple[float, float] = (5.0, 15.0)
    lead_in: int = 1000
    min_gap_s: float = 2.0

    def __post_init__(self) -> None:
        unknown = set(self.class_mix) - set(CLASS_NAMES)
        if unknown:
            raise ConfigError("invalid-config", f"unknown classes {sorted(unknown)}")
        total = sum(self.class_mix.values())
        if abs(total - 1.0) > 1e-9 or any(p < 0 for p in self.class_mix.values()):
            raise ConfigError("invalid-config", f"class_mix must sum to 1 (got {total})")
        max_dur = max(TEMPLATES[CLASS_NAMES[c]].duration[1] for c in self.class_mix)
        if self.stream_length <= 4 * max_dur:
            raise ConfigError("invalid-config", "stream_length must exceed 4x max event duration")
        if self.stream_length <= self.lead_in + max_dur:
            raise ConfigError("invalid-config", "stream_length too short for lead_in")
        lo, hi = self.sigma_range
        if not 0 < lo <= hi:
            raise ConfigError("invalid-config", f"sigma_range {self.sigma_range}")
        if self.events_mean < 0 or self.n_streams < 0 or self.sample_rate_hz <= 0:
            raise ConfigError("invalid-config", "negative count or rate")

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError("unknown-key", f"synth: {sorted(unknown)}")
        kw = dict(d)
        for key in ("sigma_range", "speed_range"):
            if key in kw:
                kw[key] = tuple(kw[key])
        return cls(**kw)

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["sigma_range"] = list(self.sigma_range)
        d["speed_range"] = list(self.speed_range)
        d["class_mix"] = dict(self.class_mix)
        return d


@dataclass(frozen=True)
class PlacedEvent:
    start: int
    end: int
    cls: RoadClass
    amplitude: float  # multiples of local background sigma
    sigma_local: float


def _background_sigma(cfg: SynthConfig, index: int) -> np.ndarray:
    rng = make_rng(cfg.seed, "sigma", index)
    base = rng.uniform(*cfg.sigma_range)
    period = rng.uniform(20.0, 60.0) * cfg.sample_rate_hz
    phase = rng.uniform(0, 2 * np.pi)
    t = np.arange(cfg.stream_length)
    return base * (1.0 + 0.25 * np.sin(2 * np.pi * t / period + phase))


def plan_events(cfg: SynthConfig, index: int) -> list[PlacedEvent]:
    """Choose event classes, durations, amplitudes and non-overlapping positions."""
    rng = make_rng(cfg.seed, "events", index)
    sigma = _background_sigma(cfg, index)
    names = sorted(cfg.class_mix)
    probs = np.array([cfg.class_mix[n] for n in names])
    count = int(rng.poisson(cfg.events_mean))
    gap = int(round(cfg.min_gap_s * cfg.sample_rate_hz))
    placed: list[PlacedEvent] = []
    for _ in range(count):
        cls = CLASS_NAMES[names[int(rng.choice(len(names), p=probs))]]
        tpl = TEMPLATES[cls]
        dur = int(rng.integers(tpl.duration[0], tpl.duration[1] + 1))
        amp = float(rng.uniform(*tpl.amplitude))
        hi = cfg.stream_length - gap // 2 - dur
        for _attempt in range(100):
            start = int(rng.integers(cfg.lead_in, hi + 1))
            end = start + dur
            if all(end + gap <= p.start or start >= p.end + gap for p in placed):
                break
        else:
            raise DataError("placement-failed", f"stream {index}: {count} events")
        placed.append(PlacedEvent(start, end, cls, amp, float(sigma[start])))
    placed.sort(key=lambda p: p.start)
    return placed


def generate_stream(cfg: SynthConfig, index: int, *, include_events: bool = True) -> SensingStream:
    """Render stream ``index``; a pure function of ``(cfg, index)``."""
    T = cfg.stream_length
    fs = cfg.sample_rate_hz
    sigma = _background_sigma(cfg, index)
    noise = make_rng(cfg.seed, "noise", index).standard_normal((T, 3))
    accel = np.empty((T, 3))
    accel[:, 0] = 0.5 * sigma * noise[:, 0]
    accel[:, 1] = 0.5 * sigma * noise[:, 1]
    accel[:, 2] = GRAVITY + sigma * noise[:, 2]

    events = plan_events(cfg, index)
    if include_events:
        for ev in events:
            n = ev.end - ev.start
            w = TEMPLATES[ev.cls].waveform(n, fs) * ev.amplitude * ev.sigma_local
            accel[ev.start:ev.end, 2] += w
            accel[ev.start:ev.end, 0] += 0.3 * w
            accel[ev.start:ev.end, 1] += 0.2 * w

    mrng = make_rng(cfg.seed, "motion", index)
    v0 = mrng.uniform(*cfg.speed_range)
    bearing = mrng.uniform(0, 2 * np.pi)
    t = np.arange(T)
    speed = v0 * (1.0 + 0.1 * np.sin(2 * np.pi * t / (90.0 * fs) + mrng.uniform(0, 2 * np.pi)))
    dist = np.concatenate(([0.0], np.cumsum(speed[:-1]) / fs))
    lat = 23.10 + dist * np.cos(bearing) / 111_320.0
    lon = 113.30 + dist * np.sin(bearing) / (111_320.0 * np.cos(np.radians(23.10)))
    timestamp = 1.7e9 + 3600.0 * index + t / fs

    return SensingStream(
        vehicle_id=f"veh{index:03d}",
        t=t.astype(np.int64),
        timestamp=timestamp,
        lat=lat,
        lon=lon,
        speed=speed,
        accel=accel,
        sample_rate_hz=fs,
        ground_truth=tuple((e.start, e.end, int(e.cls)) for e in events),
    )


def generate_corpus(cfg: SynthConfig) -> list[SensingStream]:
    return [generate_stream(cfg, i) for i in range(cfg.n_streams)]


def dominant_class(labels: np.ndarray) -> int:
    counts = np.bincount(np.asarray(labels, dtype=np.int64), minlength=len(RoadClass))
    counts[RoadClass.NORMAL] = 0
    return int(np.argmax(counts)) if counts.any() else int(RoadClass.NORMAL)


def partition_noniid(corpus: Sequence, n_clients: int, dirichlet_alpha: float, seed: int) -> list[list]:
    """Split ``corpus`` (LabeledSequence items) across clients by Dirichlet class shares.

    Sequences are grouped by dominant event class; each class's members are
    shuffled and cut according to proportions drawn from Dirichlet(alpha).
    Within a client, the original corpus order is preserved.
    """
    if n_clients < 1:
        raise ConfigError("invalid-config", "n_clients must be >= 1")
    if dirichlet_alpha <= 0:
        raise ConfigError("invalid-config", "dirichlet_alpha must be > 0")
    if not corpus:
        raise DataError("empty-corpus")
    if n_clients > len(corpus):
        raise DataError("too-many-clients", f"{n_clients} clients for {len(corpus)} sequences")
    if n_clients == 1:
        return [list(corpus)]
    by_class: dict[int, list[int]] = {}
    for i, seq in enumerate(corpus):
        by_class.setdefault(dominant_class(seq.y), []).append(i)
    assigned: list[list[int]] = [[] for _ in range(n_clients)]
    for cls in sorted(by_class):
        idx = np.array(by_class[cls])
        rng = make_rng(seed, "partition", cls)
        rng.shuffle(idx)
        shares = rng.dirichlet(np.full(n_clients, float(dirichlet_alpha)))
        cuts = np.round(np.cumsum(shares) * len(idx)).astype(int)[:-1]
        for client, part in enumerate(np.split(idx, cuts)):
            assigned[client].extend(int(i) for i in part)
    return [[corpus[i] for i in sorted(a)] for a in assigned]
