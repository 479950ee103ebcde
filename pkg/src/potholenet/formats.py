"""File formats: stream CSV, candidate-event JSONL and the sequence binary.

Sequence/checkpoint binaries share one layout: a little-endian ``u32`` manifest
length, the UTF-8 JSON manifest, then raw little-endian payloads.
"""

from __future__ import annotations

import csv
import io as _io
import json
import logging
import math
import struct
from pathlib import Path
from typing import IO, Iterable

import numpy as np

from .errors import DataError
from .signal import DEFAULT_SAMPLE_RATE_HZ, CandidateEvent, LabeledSequence, SensingStream

log = logging.getLogger(__name__)

STREAM_HEADER = ["t", "timestamp", "lat", "lon", "speed", "ax", "ay", "az"]
SEQUENCE_FORMAT_VERSION = 1


def write_stream_csv(stream: SensingStream, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(STREAM_HEADER)
        for i in range(len(stream)):
            w.writerow([
                int(stream.t[i]),
                repr(float(stream.timestamp[i])),
                repr(float(stream.lat[i])),
                repr(float(stream.lon[i])),
                repr(float(stream.speed[i])),
                repr(float(stream.accel[i, 0])),
                repr(float(stream.accel[i, 1])),
                repr(float(stream.accel[i, 2])),
            ])


def read_stream_csv(
    path: str | Path,
    vehicle_id: str | None = None,
    sample_rate_hz: float = DEFAULT_SAMPLE_RATE_HZ,
    ground_truth: Iterable[tuple[int, int, int]] = (),
) -> tuple[SensingStream, int]:
    """Parse a stream CSV; returns the stream and the number of dropped records.

    Records with a non-finite acceleration value are dropped (and counted);
    malformed rows or invalid GPS/speed raise :class:`DataError`.
    """
    path = Path(path)
    rows: list[tuple] = []
    dropped = 0
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            header = STREAM_HEADER
        if [h.strip() for h in header] != STREAM_HEADER:
            raise DataError("malformed-row", f"{path}: line 1: bad header {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(STREAM_HEADER):
                raise DataError("malformed-row", f"{path}: line {lineno}: {len(row)} fields")
            try:
                t = int(row[0])
                ts, lat, lon, speed, ax, ay, az = (float(v) for v in row[1:])
            except ValueError as exc:
                raise DataError("malformed-row", f"{path}: line {lineno}: {exc}") from None
            if not (math.isfinite(lat) and math.isfinite(lon)) or abs(lat) > 90 or abs(lon) > 180:
                raise DataError("invalid-gps", f"{path}: line {lineno}: lat={lat} lon={lon}")
            if not math.isfinite(speed) or speed < 0:
                raise DataError("invalid-speed", f"{path}: line {lineno}: speed={speed}")
            if not all(math.isfinite(a) for a in (ax, ay, az)):
                dropped += 1
                continue
            rows.append((t, ts, lat, lon, speed, ax, ay, az))
    if dropped:
        log.warning("%s: dropped %d records with non-finite acceleration", path, dropped)
    arr = np.array(rows, dtype=np.float64).reshape(len(rows), 8)
    stream = SensingStream(
        vehicle_id=vehicle_id if vehicle_id is not None else path.stem,
        t=np.array([r[0] for r in rows], dtype=np.int64),
        timestamp=arr[:, 1].copy(),
        lat=arr[:, 2].copy(),
        lon=arr[:, 3].copy(),
        speed=arr[:, 4].copy(),
        accel=arr[:, 5:8].copy(),
        sample_rate_hz=sample_rate_hz,
        ground_truth=tuple((int(s), int(e), int(c)) for s, e, c in ground_truth),
    )
    return stream, dropped


def event_to_json(ev: CandidateEvent) -> str:
    obj = {
        "vehicle_id": ev.vehicle_id,
        "event_id": int(ev.event_id),
        "t_start": int(ev.t_start),
        "t_end": int(ev.t_end),
        "seg_start": int(ev.seg_start),
        "timestamp": float(ev.timestamp),
        "lat": float(ev.lat),
        "lon": float(ev.lon),
        "speed": float(ev.speed),
        "sample_rate_hz": float(ev.sample_rate_hz),
        "accel": [[float(v) for v in axis] for axis in ev.accel],
    }
    return json.dumps(obj, separators=(",", ":"))


def event_from_json(line: str) -> CandidateEvent:
    obj = json.loads(line)
    accel = np.array(obj["accel"], dtype=np.float64)
    if accel.ndim != 2 or accel.shape[0] != 3:
        raise DataError("malformed-row", f"accel shape {accel.shape}")
    return CandidateEvent(
        vehicle_id=str(obj["vehicle_id"]),
        event_id=int(obj["event_id"]),
        t_start=int(obj["t_start"]),
        t_end=int(obj["t_end"]),
        seg_start=int(obj.get("seg_start", obj["t_start"])),
        timestamp=float(obj["timestamp"]),
        lat=float(obj["lat"]),
        lon=float(obj["lon"]),
        speed=float(obj["speed"]),
        sample_rate_hz=float(obj["sample_rate_hz"]),
        accel=accel,
    )


def write_events_jsonl(events: Iterable[CandidateEvent], dest: str | Path | IO[str]) -> None:
    if isinstance(dest, (str, Path)):
        with open(dest, "w", encoding="utf-8", newline="\n") as fh:
            write_events_jsonl(events, fh)
        return
    for ev in events:
        dest.write(event_to_json(ev))
        dest.write("\n")


def read_events_jsonl(path: str | Path) -> list[CandidateEvent]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                out.append(event_from_json(line))
            except (ValueError, KeyError, TypeError) as exc:
                raise DataError("malformed-row", f"{path}: line {lineno}: {exc}") from None
    return out


def pack_binary(manifest: dict, payloads: Iterable[bytes]) -> bytes:
    head = json.dumps(manifest, separators=(",", ":"), sort_keys=True).encode("utf-8")
    buf = _io.BytesIO()
    buf.write(struct.pack("<I", len(head)))
    buf.write(head)
    for p in payloads:
        buf.write(p)
    return buf.getvalue()


def unpack_binary(blob: bytes) -> tuple[dict, memoryview]:
    if len(blob) < 4:
        raise DataError("truncated-file")
    (n,) = struct.unpack_from("<I", blob, 0)
    if 4 + n > len(blob):
        raise DataError("truncated-file")
    manifest = json.loads(blob[4:4 + n].decode("utf-8"))
    return manifest, memoryview(blob)[4 + n:]


def encode_sequences(seqs: list[LabeledSequence], *, single: bool = False) -> bytes:
    """Serialize sequences; ``single`` writes the ``[C, L]`` one-sequence form."""
    if not seqs:
        manifest = {"dtype": "f32", "shape": [0, 0, 0], "label_shape": [0, 0],
                    "format_version": SEQUENCE_FORMAT_VERSION, "items": []}
        return pack_binary(manifest, [])
    C, L = seqs[0].x.shape
    for s in seqs:
        if s.x.shape != (C, L):
            raise DataError("shape-error", f"{s.seq_id}: {s.x.shape} != {(C, L)}")
    if single and len(seqs) != 1:
        raise DataError("shape-error", "single form needs exactly one sequence")
    x = np.stack([s.x for s in seqs]).astype("<f4")
    y = np.stack([s.y for s in seqs]).astype("<u1")
    items = [{"seq_id": s.seq_id, "offset": int(s.offset), "meta": s.meta} for s in seqs]
    if single:
        shape, label_shape = [C, L], [L]
    else:
        shape, label_shape = [len(seqs), C, L], [len(seqs), L]
    manifest = {"dtype": "f32", "shape": shape, "label_shape": label_shape,
                "format_version": SEQUENCE_FORMAT_VERSION, "items": items}
    return pack_binary(manifest, [x.tobytes(), y.tobytes()])


def decode_sequences(blob: bytes) -> list[LabeledSequence]:
    manifest, payload = unpack_binary(blob)
    if manifest.get("dtype") != "f32":
        raise DataError("unsupported-dtype", str(manifest.get("dtype")))
    shape = list(manifest["shape"])
    if len(shape) == 2:
        shape = [1] + shape
    N, C, L = shape
    nx = N * C * L * 4
    if len(payload) != nx + N * L:
        raise DataError("truncated-file", f"payload {len(payload)} != {nx + N * L}")
    x = np.frombuffer(payload[:nx], dtype="<f4").reshape(N, C, L).astype(np.float32)
    y = np.frombuffer(payload[nx:], dtype="<u1").reshape(N, L).astype(np.uint8)
    items = manifest.get("items") or [{}] * N
    return [
        LabeledSequence(x=x[i], y=y[i], meta=items[i].get("meta", {}),
                        seq_id=items[i].get("seq_id", ""), offset=int(items[i].get("offset", 0)))
        for i in range(N)
    ]


def write_sequences(seqs: list[LabeledSequence], path: str | Path, *, single: bool = False) -> None:
    Path(path).write_bytes(encode_sequences(seqs, single=single))


def read_sequences(path: str | Path) -> list[LabeledSequence]:
    return decode_sequences(Path(path).read_bytes())
