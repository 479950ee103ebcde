"""From screened candidate events to labeled, fixed-length training sequences."""

from __future__ import annotations

import hashlib
from dataclasses import replace
from typing import Sequence

import numpy as np

from .errors import ConfigError, DataError
from .screening import GmmConfig, ScreenConfig, ScreenStats, screen_stream
from .signal import (
    AXIS_INDEX, DEFAULT_SEQ_LEN, CandidateEvent, LabeledSequence, normalize, to_fixed_length,
)
from .synth import SynthConfig, generate_stream


def candidate_labels(ev: CandidateEvent, ground_truth: Sequence[tuple[int, int, int]]) -> np.ndarray:
    """Point labels of the uploaded segment: ground-truth intervals clipped to it."""
    n = ev.accel.shape[1]
    y = np.zeros(n, dtype=np.uint8)
    for s, e, c in ground_truth:
        lo = max(s - ev.seg_start, 0)
        hi = min(e - ev.seg_start, n)
        if hi > lo:
            y[lo:hi] = c
    return y


def event_to_sequence(
    ev: CandidateEvent,
    labels: np.ndarray | None = None,
    L: int = DEFAULT_SEQ_LEN,
    channels: Sequence[str] = ("az",),
) -> LabeledSequence:
    """Select channels, fix the length, z-score, and store as float32."""
    try:
        rows = [AXIS_INDEX[c] for c in channels]
    except KeyError as exc:
        raise ConfigError("invalid-config", f"unknown channel {exc}") from None
    if labels is None:
        labels = np.zeros(ev.accel.shape[1], dtype=np.uint8)
    meta = {
        "vehicle_id": ev.vehicle_id, "event_id": ev.event_id, "seg_start": ev.seg_start,
        "timestamp": ev.timestamp, "lat": ev.lat, "lon": ev.lon, "speed": ev.speed,
    }
    seq = to_fixed_length(ev.accel[rows], labels, L, meta=meta, seq_id=f"{ev.vehicle_id}/{ev.event_id}")
    seq = normalize(seq)
    return replace(seq, x=seq.x.astype(np.float32))


def synthesize_corpus(
    n_sequences: int,
    synth_cfg: SynthConfig = SynthConfig(),
    gmm_cfg: GmmConfig = GmmConfig(),
    screen_cfg: ScreenConfig = ScreenConfig(),
    L: int = DEFAULT_SEQ_LEN,
    channels: Sequence[str] = ("az",),
) -> tuple[list[LabeledSequence], ScreenStats]:
    """Generate, screen and label streams (in index order) until ``n_sequences`` exist.

    The ``n_streams`` field of ``synth_cfg`` is ignored; streams keep coming
    until the quota is met and the last stream's surplus is dropped.
    """
    if n_sequences < 1:
        raise ConfigError("invalid-config", "n_sequences must be >= 1")
    seqs: list[LabeledSequence] = []
    stats = ScreenStats(0, 0, 0)
    index = 0
    while len(seqs) < n_sequences:
        stream = generate_stream(synth_cfg, index)
        events, st = screen_stream(stream, gmm_cfg, screen_cfg)
        stats = stats + st
        for ev in events:
            seqs.append(event_to_sequence(ev, candidate_labels(ev, stream.ground_truth), L, channels))
        index += 1
    return seqs[:n_sequences], stats


def split_train_val(
    seqs: Sequence[LabeledSequence], val_fraction: float = 0.2, seed: int = 0
) -> tuple[list[LabeledSequence], list[LabeledSequence]]:
    """Deterministic split by a hash of ``seed:seq_id``; order is preserved."""
    if not 0 <= val_fraction < 1:
        raise ConfigError("invalid-config", "val_fraction must lie in [0, 1)")
    train, val = [], []
    for s in seqs:
        h = hashlib.sha256(f"{seed}:{s.seq_id}".encode()).digest()
        u = int.from_bytes(h[:8], "big") / 2.0 ** 64
        (val if u < val_fraction else train).append(s)
    return train, val


def stack(seqs: Sequence[LabeledSequence]) -> tuple[np.ndarray, np.ndarray]:
    """Batch arrays ``x (N, C, L)`` float32 and ``y (N, L)`` uint8."""
    if not seqs:
        raise DataError("empty-corpus", "no sequences")
    x = np.stack([s.x for s in seqs]).astype(np.float32, copy=False)
    y = np.stack([s.y for s in seqs]).astype(np.uint8, copy=False)
    return x, y
