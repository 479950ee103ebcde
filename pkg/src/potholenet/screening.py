"""Onboard candidate-event screening.

An online Gaussian mixture tracks the background distribution of the vertical
acceleration. Samples that no background component explains are flagged,
flagged runs are merged into intervals, and each interval is cut out with
temporal context as a :class:`CandidateEvent` packet.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from typing import Sequence

import numpy as np

from .errors import ConfigError, DataError
from .signal import AXIS_INDEX, CandidateEvent, SensingStream

MATCH_RULES = ("rank", "nearest")


@dataclass(frozen=True)
class GmmConfig:
    """Mixture hyperparameters; thresholds are in units of component sigma.

    ``match_rule`` picks the component a sample updates when several match:
    ``"rank"`` takes the first match in descending weight/sigma order,
    ``"nearest"`` the smallest normalized distance (ties to the lowest index).
    """

    K: int = 4
    alpha: float = 0.01
    rho: float | None = None
    m_match: float = 2.5
    m_event: float = 3.0
    sigma0_sq: float = 1.0
    omega0: float = 0.05
    t_b: float = 0.9
    warmup: int = 200
    var_floor: float = 1e-4
    match_rule: str = "rank"

    def __post_init__(self) -> None:
        if self.K < 1:
            raise ConfigError("invalid-config", "K must be >= 1")
        if not 0 < self.alpha < 1:
            raise ConfigError("invalid-config", "alpha must be in (0, 1)")
        if self.rho is not None and not 0 < self.rho <= 1:
            raise ConfigError("invalid-config", "rho must be in (0, 1]")
        if not 0 < self.omega0 < 1 or not 0 < self.t_b < 1:
            raise ConfigError("invalid-config", "omega0 and t_b must be in (0, 1)")
        if self.sigma0_sq <= 0 or self.var_floor <= 0 or self.warmup < 0:
            raise ConfigError("invalid-config", "sigma0_sq/var_floor must be > 0, warmup >= 0")
        if self.match_rule not in MATCH_RULES:
            raise ConfigError("invalid-config", f"match_rule must be one of {MATCH_RULES}")

    @property
    def update_rate(self) -> float:
        return self.alpha if self.rho is None else self.rho

    @classmethod
    def from_dict(cls, d: dict) -> "GmmConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError("unknown-key", f"gmm: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True)
class ScreenConfig:
    merge_gap: int = 25
    min_interval: int = 3
    w_left: int = 64
    w_right: int = 64
    axis: str = "az"

    def __post_init__(self) -> None:
        if min(self.merge_gap, self.min_interval, self.w_left, self.w_right) < 0:
            raise ConfigError("invalid-config", "screen parameters must be non-negative")
        if self.axis not in AXIS_INDEX:
            raise ConfigError("invalid-config", f"axis must be one of {sorted(AXIS_INDEX)}")

    @classmethod
    def from_dict(cls, d: dict) -> "ScreenConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError("unknown-key", f"screen: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class GmmState:
    """Mutable per-stream mixture state, owned by a single screening loop.

    ``last_update`` records which branch the latest step took: ``"match"``
    or ``"replace"``.
    """

    weight: list[float]
    mean: list[float]
    var: list[float]
    t: int = 0
    last_update: str = ""
    background: list[int] = field(default_factory=list)

    def copy(self) -> "GmmState":
        return GmmState(list(self.weight), list(self.mean), list(self.var), self.t,
                        self.last_update, list(self.background))


def gmm_init(cfg: GmmConfig, x0: float) -> GmmState:
    """Component 1 sits on ``x0`` with all the weight; the rest are spread
    ``3 * sigma0`` apart above it with zero weight."""
    s0 = math.sqrt(cfg.sigma0_sq)
    return GmmState(
        weight=[1.0] + [0.0] * (cfg.K - 1),
        mean=[x0 + 3.0 * k * s0 for k in range(cfg.K)],
        var=[cfg.sigma0_sq] * cfg.K,
    )


def _rank_order(weight: list[float], sd: list[float]) -> list[int]:
    # stable: equal ratios keep index order
    return sorted(range(len(weight)), key=lambda k: -weight[k] / sd[k])


def background_set(state: GmmState, t_b: float) -> list[int]:
    """Leading components by weight/sigma until cumulative weight exceeds ``t_b``."""
    sd = [math.sqrt(v) for v in state.var]
    chosen = []
    cum = 0.0
    for k in _rank_order(state.weight, sd):
        chosen.append(k)
        cum += state.weight[k]
        if cum > t_b:
            break
    return chosen


def gmm_step(state: GmmState, x: float, cfg: GmmConfig) -> tuple[GmmState, int]:
    """Advance the mixture by one sample, in place; returns ``(state, I_t)``."""
    if not math.isfinite(x):
        raise DataError("invalid-sample", f"t={state.t}: {x}")
    w, mu, var = state.weight, state.mean, state.var
    K = len(w)
    sd = [math.sqrt(v) for v in var]
    dist = [abs(x - mu[k]) / sd[k] for k in range(K)]

    best = -1
    if cfg.match_rule == "rank":
        for k in _rank_order(w, sd):
            if dist[k] <= cfg.m_match:
                best = k
                break
    else:
        for k in range(K):
            if dist[k] <= cfg.m_match and (best < 0 or dist[k] < dist[best]):
                best = k

    if best >= 0:
        rho = cfg.update_rate
        a = cfg.alpha
        m = (1.0 - rho) * mu[best] + rho * x
        mu[best] = m
        var[best] = max(cfg.var_floor, (1.0 - rho) * var[best] + rho * (x - m) ** 2)
        for k in range(K):
            w[k] *= 1.0 - a
        w[best] += a
        state.last_update = "match"
    else:
        low = min(range(K), key=lambda k: w[k])
        mu[low] = x
        var[low] = cfg.sigma0_sq
        w[low] = cfg.omega0
        state.last_update = "replace"
    total = math.fsum(w)
    for k in range(K):
        w[k] /= total

    bg = background_set(state, cfg.t_b)
    state.background = bg
    score = min(abs(x - mu[k]) / math.sqrt(var[k]) for k in bg)
    flag = int(score > cfg.m_event and state.t >= cfg.warmup)
    state.t += 1
    return state, flag


def gmm_indicator(x: np.ndarray, cfg: GmmConfig) -> np.ndarray:
    """Run the mixture over a whole signal and return the 0/1 indicator."""
    out = np.zeros(len(x), dtype=np.uint8)
    if len(x) == 0:
        return out
    values = [float(v) for v in x]
    state = gmm_init(cfg, values[0])
    for i, v in enumerate(values):
        _, out[i] = gmm_step(state, v, cfg)
    return out


def zpeak_indicator(x: np.ndarray, z_th: float) -> np.ndarray:
    """Fixed-threshold baseline: ``|x - mean| > z_th * sd`` with global statistics."""
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        return np.zeros(0, dtype=np.uint8)
    sd = x.std()
    return (np.abs(x - x.mean()) > z_th * sd).astype(np.uint8)


def indicator_runs(indicator: np.ndarray) -> list[tuple[int, int]]:
    ind = np.asarray(indicator).astype(bool)
    if not ind.any():
        return []
    edges = np.diff(np.concatenate(([0], ind.astype(np.int8), [0])))
    starts = np.flatnonzero(edges == 1)
    ends = np.flatnonzero(edges == -1)
    return [(int(s), int(e)) for s, e in zip(starts, ends)]


def merge_intervals(
    intervals: Sequence[tuple[int, int]], merge_gap: int, min_interval: int
) -> list[tuple[int, int]]:
    """Merge intervals whose gap is below ``merge_gap``, then drop short ones."""
    merged: list[list[int]] = []
    for s, e in sorted(intervals):
        if merged and s - merged[-1][1] < merge_gap:
            merged[-1][1] = max(merged[-1][1], e)
        else:
            merged.append([s, e])
    return [(s, e) for s, e in merged if e - s >= min_interval]


def group_events(
    indicator: np.ndarray, stream: SensingStream, cfg: ScreenConfig
) -> list[CandidateEvent]:
    if len(indicator) != len(stream):
        raise DataError("shape-error", f"indicator {len(indicator)} != stream {len(stream)}")
    intervals = merge_intervals(indicator_runs(indicator), cfg.merge_gap, cfg.min_interval)
    valid = stream.valid_gps() & (stream.speed >= 0) & np.isfinite(stream.timestamp)
    n = len(stream)
    events = []
    for s, e in intervals:
        inside = np.flatnonzero(valid[s:e]) + s
        if inside.size == 0:
            continue
        mid = (s + e - 1) / 2.0
        j = int(inside[np.argmin(np.abs(inside - mid))])
        lo = max(0, s - cfg.w_left)
        hi = min(n, e + cfg.w_right)
        events.append(CandidateEvent(
            vehicle_id=stream.vehicle_id,
            event_id=len(events),
            t_start=int(stream.t[s]),
            t_end=int(stream.t[e - 1]) + 1,
            seg_start=int(stream.t[lo]),
            timestamp=float(stream.timestamp[j]),
            lat=float(stream.lat[j]),
            lon=float(stream.lon[j]),
            speed=float(stream.speed[j]),
            sample_rate_hz=float(stream.sample_rate_hz),
            accel=np.ascontiguousarray(stream.accel[lo:hi].T),
        ))
    return events


@dataclass(frozen=True)
class ScreenStats:
    samples_in: int
    samples_uploaded: int
    n_events: int

    @property
    def reduction_ratio(self) -> float:
        if self.samples_in == 0:
            return 1.0
        return 1.0 - self.samples_uploaded / self.samples_in

    def __add__(self, other: "ScreenStats") -> "ScreenStats":
        return ScreenStats(self.samples_in + other.samples_in,
                           self.samples_uploaded + other.samples_uploaded,
                           self.n_events + other.n_events)

    def to_dict(self) -> dict:
        return {"samples_in": self.samples_in, "samples_uploaded": self.samples_uploaded,
                "n_events": self.n_events, "reduction_ratio": self.reduction_ratio}


def screen_stream(
    stream: SensingStream, gmm_cfg: GmmConfig = GmmConfig(), screen_cfg: ScreenConfig = ScreenConfig()
) -> tuple[list[CandidateEvent], ScreenStats]:
    x = stream.accel[:, AXIS_INDEX[screen_cfg.axis]]
    indicator = gmm_indicator(x, gmm_cfg)
    events = group_events(indicator, stream, screen_cfg)
    uploaded = sum(ev.accel.shape[1] for ev in events)
    return events, ScreenStats(len(stream), uploaded, len(events))
