import io
import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from potholenet.errors import DataError
from potholenet.formats import (
    STREAM_HEADER, decode_sequences, encode_sequences, event_from_json, event_to_json,
    read_events_jsonl, read_sequences, read_stream_csv, write_events_jsonl, write_sequences,
    write_stream_csv,
)
from potholenet.signal import CandidateEvent, LabeledSequence, SensingStream
from potholenet.synth import SynthConfig, generate_stream


def _random_stream(seed: int, n: int) -> SensingStream:
    rng = np.random.default_rng(seed)
    return SensingStream(
        vehicle_id=f"v{seed}",
        t=np.arange(n, dtype=np.int64) * 2,
        timestamp=1.7e9 + rng.random(n).cumsum(),
        lat=rng.uniform(-90, 90, n),
        lon=rng.uniform(-180, 180, n),
        speed=rng.uniform(0, 30, n),
        accel=rng.standard_normal((n, 3)) * 5,
    )


def test_stream_csv_round_trip(tmp_path):
    s = _random_stream(7, 1000)
    write_stream_csv(s, tmp_path / "s.csv")
    back, dropped = read_stream_csv(tmp_path / "s.csv", s.vehicle_id)
    assert dropped == 0
    assert back == s


def test_synthetic_stream_csv_round_trip(tmp_path):
    s = generate_stream(SynthConfig(stream_length=3000, lead_in=500), 0)
    write_stream_csv(s, tmp_path / "s.csv")
    back, _ = read_stream_csv(tmp_path / "s.csv", s.vehicle_id, s.sample_rate_hz, s.ground_truth)
    assert back == s


def test_empty_stream_round_trip(tmp_path):
    s = _random_stream(0, 0)
    write_stream_csv(s, tmp_path / "e.csv")
    back, _ = read_stream_csv(tmp_path / "e.csv", s.vehicle_id)
    assert len(back) == 0 and back == s


def _write_rows(path, rows):
    path.write_text("\n".join([",".join(STREAM_HEADER)] + rows) + "\n")


def test_invalid_gps_rejected(tmp_path):
    _write_rows(tmp_path / "bad.csv", ["0,1.0,95,10,1.0,0,0,9.8"])
    with pytest.raises(DataError, match="invalid-gps"):
        read_stream_csv(tmp_path / "bad.csv")


def test_malformed_row_reports_line(tmp_path):
    _write_rows(tmp_path / "bad.csv", ["0,1.0,10,10,1.0,0,0,9.8", "1,2.0,10,10,abc,0,0,9.8"])
    with pytest.raises(DataError, match="line 3"):
        read_stream_csv(tmp_path / "bad.csv")


def test_nan_accel_dropped_and_counted(tmp_path):
    _write_rows(tmp_path / "nan.csv", [
        "0,1.0,10,10,1.0,0,0,9.8", "1,1.01,10,10,1.0,nan,0,9.8", "2,1.02,10,10,1.0,0,0,9.7",
    ])
    s, dropped = read_stream_csv(tmp_path / "nan.csv")
    assert dropped == 1
    assert list(s.t) == [0, 2]


def _random_event(rng, n) -> CandidateEvent:
    return CandidateEvent(
        vehicle_id="veh" + str(rng.integers(0, 99)), event_id=int(rng.integers(0, 1000)),
        t_start=int(rng.integers(0, 10**6)), t_end=int(rng.integers(0, 10**6)),
        seg_start=int(rng.integers(0, 10**6)), timestamp=float(rng.uniform(0, 2e9)),
        lat=float(rng.uniform(-90, 90)), lon=float(rng.uniform(-180, 180)),
        speed=float(rng.uniform(0, 40)), sample_rate_hz=100.0,
        accel=rng.standard_normal((3, n)),
    )


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 300))
def test_event_jsonl_round_trip(seed, n):
    ev = _random_event(np.random.default_rng(seed), n)
    assert event_from_json(event_to_json(ev)) == ev


def test_event_jsonl_file(tmp_path):
    rng = np.random.default_rng(1)
    evs = [_random_event(rng, 50 + i) for i in range(5)]
    write_events_jsonl(evs, tmp_path / "e.jsonl")
    assert read_events_jsonl(tmp_path / "e.jsonl") == evs
    first = json.loads((tmp_path / "e.jsonl").read_text().splitlines()[0])
    for key in ("vehicle_id", "event_id", "t_start", "t_end", "timestamp", "lat", "lon",
                "speed", "sample_rate_hz", "accel"):
        assert key in first
    assert len(first["accel"]) == 3


def test_event_jsonl_malformed_line(tmp_path):
    buf = io.StringIO()
    write_events_jsonl([_random_event(np.random.default_rng(0), 4)], buf)
    (tmp_path / "e.jsonl").write_text(buf.getvalue() + "{not json}\n")
    with pytest.raises(DataError, match="line 2"):
        read_events_jsonl(tmp_path / "e.jsonl")


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 5), st.integers(1, 3), st.integers(8, 64))
def test_sequence_binary_round_trip(seed, n, C, L):
    rng = np.random.default_rng(seed)
    seqs = [
        LabeledSequence(rng.standard_normal((C, L)).astype(np.float32),
                        rng.integers(0, 4, L).astype(np.uint8),
                        {"vehicle_id": "v", "lat": float(rng.random())}, f"v/{i}", int(rng.integers(-9, 9)))
        for i in range(n)
    ]
    blob = encode_sequences(seqs)
    back = decode_sequences(blob)
    assert back == seqs
    assert encode_sequences(back) == blob


def test_sequence_binary_layout(tmp_path):
    x = np.arange(8, dtype=np.float32)[None]
    y = np.array([0, 1, 2, 3, 0, 1, 2, 3], np.uint8)
    write_sequences([LabeledSequence(x, y, seq_id="a")], tmp_path / "s.bin", single=True)
    blob = (tmp_path / "s.bin").read_bytes()
    (n,) = struct.unpack("<I", blob[:4])
    manifest = json.loads(blob[4:4 + n])
    assert manifest["dtype"] == "f32" and manifest["shape"] == [1, 8] and manifest["label_shape"] == [8]
    payload = blob[4 + n:]
    assert payload[:32] == x.astype("<f4").tobytes()
    assert payload[32:] == y.tobytes()
    assert read_sequences(tmp_path / "s.bin")[0] == LabeledSequence(x, y, seq_id="a")


def test_truncated_binary_rejected():
    blob = encode_sequences([LabeledSequence(np.zeros((1, 8), np.float32), np.zeros(8, np.uint8))])
    with pytest.raises(DataError, match="truncated"):
        decode_sequences(blob[:-3])
