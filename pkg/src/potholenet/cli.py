"""Command-line entry point: ``python -m potholenet <subcommand>``.

Subcommands: synth, screen, train, infer, eval, report, e2e. All of them take
one JSON run configuration (``--config``); ``--print-defaults`` shows it.
Exit status: 0 success, 2 configuration error, 3 data error, 4 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import segnet
from .autodiff import load_checkpoint, params_checksum, save_checkpoint
from .dataset import candidate_labels, event_to_sequence, split_train_val, stack
from .errors import ConfigError, DataError, PipelineError
from .formats import read_events_jsonl, read_sequences, read_stream_csv, write_events_jsonl, write_stream_csv
from .losses import LossConfig
from .metrics import compute_metrics
from .postproc import PostConfig, events_from_prediction
from .screening import GmmConfig, ScreenConfig, ScreenStats, screen_stream
from .signal import CandidateEvent, LabeledSequence, label_runs
from .synth import SynthConfig, generate_stream, partition_noniid
from .training import (
    FedConfig, TrainConfig, make_clients, predict, train_centralized, train_federated,
)

log = logging.getLogger("potholenet")

SUMMARY_SCHEMA_VERSION = 1
MODES = ("centralized", "federated")

_BLOCKS = {
    "synth": SynthConfig, "gmm": GmmConfig, "screen": ScreenConfig, "net": segnet.NetConfig,
    "loss": LossConfig, "train": TrainConfig, "fed": FedConfig, "post": PostConfig,
}


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    mode: str = "centralized"
    channels: tuple[str, ...] = ("az",)
    test_fraction: float = 0.2
    synth: SynthConfig = field(default_factory=SynthConfig)
    gmm: GmmConfig = field(default_factory=GmmConfig)
    screen: ScreenConfig = field(default_factory=ScreenConfig)
    net: segnet.NetConfig = field(default_factory=segnet.NetConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    fed: FedConfig = field(default_factory=FedConfig)
    post: PostConfig = field(default_factory=PostConfig)

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ConfigError("invalid-config", f"mode must be one of {MODES}")
        if len(self.channels) != self.net.in_channels:
            raise ConfigError("invalid-config", f"{len(self.channels)} channels but net.in_channels={self.net.in_channels}")
        if not 0 < self.test_fraction < 1:
            raise ConfigError("invalid-config", "test_fraction must lie in (0, 1)")

    @property
    def seq_len(self) -> int:
        return self.net.length

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("invalid-config", "run configuration must be a JSON object")
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError("unknown-key", f"run: {sorted(unknown)}")
        kw = {k: v for k, v in d.items() if k not in _BLOCKS}
        if "channels" in kw:
            kw["channels"] = tuple(kw["channels"])
        seed = int(kw.get("seed", 0))
        for name, block in _BLOCKS.items():
            sub = dict(d.get(name) or {})
            if name in ("train", "fed"):
                sub.setdefault("seed", seed)  # the global seed drives training unless overridden
            try:
                kw[name] = block.from_dict(sub)
            except TypeError as exc:
                raise ConfigError("invalid-config", f"{name}: {exc}") from None
        return cls(**kw)

    def to_dict(self) -> dict:
        out: dict = {"seed": self.seed, "mode": self.mode, "channels": list(self.channels),
                     "test_fraction": self.test_fraction}
        for name in _BLOCKS:
            out[name] = getattr(self, name).to_dict()
        return out


def load_config(path: str | None, overrides: dict | None = None) -> RunConfig:
    d: dict = {}
    if path:
        try:
            d = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError("missing-config", str(path)) from None
        except json.JSONDecodeError as exc:
            raise ConfigError("invalid-json", f"{path}: {exc}") from None
    for key, val in (overrides or {}).items():
        # block overrides merge field-wise into the block from the file
        d[key] = {**(d.get(key) or {}), **val} if key in _BLOCKS else val
    return RunConfig.from_dict(d)


def _read_block(path: str, name: str) -> dict:
    try:
        block = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError("missing-config", str(path)) from None
    except json.JSONDecodeError as exc:
        raise ConfigError("invalid-json", f"{path}: {exc}") from None
    if not isinstance(block, dict):
        raise ConfigError("invalid-config", f"{name} config must be a JSON object")
    return block


def _dump_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# ---------------------------------------------------------------- stages


def run_synth(cfg: RunConfig, out: Path) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(cfg.synth.n_streams):
        stream = generate_stream(cfg.synth, i)
        name = f"{stream.vehicle_id}.csv"
        write_stream_csv(stream, out / name)
        entries.append({"vehicle_id": stream.vehicle_id, "file": name, "n_samples": len(stream),
                        "sample_rate_hz": stream.sample_rate_hz,
                        "ground_truth": [list(g) for g in stream.ground_truth]})
    manifest = {"synth": cfg.synth.to_dict(), "streams": entries}
    _dump_json(manifest, out / "manifest.json")
    return manifest


def _load_manifest(data: Path) -> dict:
    try:
        return json.loads((data / "manifest.json").read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise DataError("missing-manifest", str(data / "manifest.json")) from None
    except json.JSONDecodeError as exc:
        raise DataError("malformed-manifest", str(exc)) from None


def _ground_truth(manifest: dict) -> dict[str, list]:
    return {e["vehicle_id"]: [tuple(g) for g in e["ground_truth"]] for e in manifest["streams"]}


def run_screen(cfg: RunConfig, data: Path, out: Path) -> ScreenStats:
    manifest = _load_manifest(data)
    events: list[CandidateEvent] = []
    stats = ScreenStats(0, 0, 0)
    for entry in manifest["streams"]:
        stream, dropped = read_stream_csv(data / entry["file"], entry["vehicle_id"],
                                          entry.get("sample_rate_hz", 100.0), entry["ground_truth"])
        if dropped:
            log.warning("%s: dropped %d records with non-finite acceleration", entry["file"], dropped)
        evs, st = screen_stream(stream, cfg.gmm, cfg.screen)
        events.extend(evs)
        stats = stats + st
    write_events_jsonl(events, out)
    return stats


def label_events(cfg: RunConfig, events: Sequence[CandidateEvent], gt: dict[str, list]) -> list[LabeledSequence]:
    return [
        event_to_sequence(ev, candidate_labels(ev, gt.get(ev.vehicle_id, ())), cfg.seq_len, cfg.channels)
        for ev in events
    ]


def load_sequences(cfg: RunConfig, data: Path) -> list[LabeledSequence]:
    """Labeled sequences from a sequence binary, an events JSONL or a synth directory.

    Events are labeled from the ground truth in the neighbouring
    ``manifest.json``; a bare JSONL without one gets all-Normal labels.
    """
    if data.is_file() and data.suffix == ".jsonl":
        gt = _ground_truth(_load_manifest(data.parent)) if (data.parent / "manifest.json").exists() else {}
        return label_events(cfg, read_events_jsonl(data), gt)
    if data.is_file():
        return read_sequences(data)
    events_path = data / "events.jsonl"
    if not events_path.exists():
        raise DataError("missing-events", f"{events_path} (run `screen` first)")
    return label_events(cfg, read_events_jsonl(events_path), _ground_truth(_load_manifest(data)))


def run_train(cfg: RunConfig, seqs: list[LabeledSequence], out: Path, log_path: Path | None, jobs: int = 1) -> dict:
    if not seqs:
        raise DataError("empty-corpus", "no labeled sequences to train on")
    extra = {"net": cfg.net.to_dict(), "mode": cfg.mode}
    if cfg.mode == "centralized":
        res = train_centralized(seqs, cfg.net, cfg.loss, cfg.train, log_path=log_path, post_cfg=cfg.post)
        params = res.params
        info = {"epochs_run": len(res.history), "best_epoch": res.best_epoch}
    else:
        fit, val = split_train_val(seqs, cfg.train.val_fraction, cfg.fed.seed)
        parts = partition_noniid(fit, cfg.fed.n_clients, cfg.fed.dirichlet_alpha, cfg.fed.seed)
        fres = train_federated(make_clients(parts), val, cfg.net, cfg.loss, cfg.fed,
                               log_path=log_path, post_cfg=cfg.post, jobs=jobs)
        params = fres.params
        info = {"rounds_run": len(fres.rounds), "client_sizes": [len(p) for p in parts]}
    save_checkpoint(params, out, extra)
    info["checksum"] = params_checksum(params)
    return info


def run_infer(cfg: RunConfig, ckpt: Path, seqs: list[LabeledSequence], out: Path) -> None:
    params, extra = load_checkpoint(ckpt)
    net = segnet.NetConfig.from_dict(extra["net"]) if "net" in extra else cfg.net
    x, _ = stack(seqs)
    if x.shape[1:] != (net.in_channels, net.length):
        raise DataError("shape-error", f"sequences {x.shape[1:]} vs network ({net.in_channels}, {net.length})")
    probs = predict(params, x, net)
    with open(out, "w", encoding="utf-8", newline="\n") as fh:
        for seq, p in zip(seqs, probs):
            meta = {**seq.meta, "seq_id": seq.seq_id}
            labels, reports = events_from_prediction(p, cfg.post, meta)
            raw = segnet.predict_labels(p)
            rec = {
                "seq_id": seq.seq_id, "offset": seq.offset,
                "labels": "".join(map(str, raw.tolist())),
                "max_prob": [round(float(v), 6) for v in p.max(axis=0)],
                "filtered": "".join(map(str, labels.tolist())),
                "events": [r.to_dict() for r in reports],
            }
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")


def read_predictions(path: Path) -> list[dict]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if line.strip():
                try:
                    out.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise DataError("malformed-row", f"{path}: line {lineno}: {exc}") from None
    return out


def run_eval(preds: list[dict], gt_seqs: list[LabeledSequence], thresholds: Sequence[float]) -> dict:
    by_id = {s.seq_id: s for s in gt_seqs}
    y_pred, y_true, p_ev, g_ev = [], [], [], []
    for rec in preds:
        seq = by_id.get(rec["seq_id"])
        if seq is None:
            raise DataError("unknown-sequence", rec["seq_id"])
        labels = np.frombuffer(rec["labels"].encode(), dtype=np.uint8) - ord("0")
        if labels.shape != seq.y.shape:
            raise DataError("shape-error", f"{rec['seq_id']}: {labels.shape} vs {seq.y.shape}")
        y_pred.append(labels)
        y_true.append(seq.y)
        p_ev.append([(e["start"], e["end"], e["class"]) for e in rec["events"]])
        g_ev.append(label_runs(seq.y))
    if not preds:
        raise DataError("empty-predictions", "nothing to evaluate")
    return compute_metrics(np.concatenate(y_pred), np.concatenate(y_true), p_ev, g_ev, thresholds).to_dict()


def run_report(metrics: dict, out: Path) -> list[str]:
    """Plot-ready CSVs: an F1 table per IoU threshold and the confusion matrices."""
    out.mkdir(parents=True, exist_ok=True)
    written = []
    names = ["normal", "manhole", "speed_bump", "pothole"]
    with open(out / "event_f1.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iou", "class", "precision", "recall", "f1", "n_matched", "n_pred", "n_gt"])
        for thr, ev in metrics["events"].items():
            for c, pc in ev["per_class"].items():
                w.writerow([thr, names[int(c)], pc["precision"], pc["recall"], pc["f1"],
                            pc["n_matched"], pc["n_pred"], pc["n_gt"]])
            w.writerow([thr, "all", ev["precision"], ev["recall"], ev["f1"], ev["n_matched"], ev["n_pred"], ev["n_gt"]])
            w.writerow([thr, "macro", "", "", ev["macro_f1"], "", "", ""])
    written.append("event_f1.csv")
    pt = metrics["point"]
    with open(out / "point_metrics.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["class", "precision", "recall", "f1", "support"])
        for i, n in enumerate(names):
            w.writerow([n, pt["precision"][i], pt["recall"][i], pt["f1"][i], pt["support"][i]])
        w.writerow(["macro", "", "", pt["macro_f1"], sum(pt["support"])])
        w.writerow(["weighted", "", "", pt["weighted_f1"], sum(pt["support"])])
    written.append("point_metrics.csv")
    tables = [("point_confusion.csv", pt["confusion"], names, names)]
    for thr, ev in metrics["events"].items():
        rows = ["false_alarm"] + names[1:]
        cols = ["miss"] + names[1:]
        tables.append((f"event_confusion_iou{thr}.csv", ev["confusion"], rows, cols))
    for fname, mat, rows, cols in tables:
        with open(out / fname, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["true\\pred"] + cols)
            for r, row in zip(rows, mat):
                w.writerow([r] + list(row))
        written.append(fname)
    return written


def _summary_metrics(m: dict) -> dict:
    return {
        "point_accuracy": m["point"]["accuracy"],
        "point_macro_f1": m["point"]["macro_f1"],
        "point_weighted_f1": m["point"]["weighted_f1"],
        "events": {t: {k: ev[k] for k in ("precision", "recall", "f1", "macro_f1", "mean_iou")}
                   for t, ev in m["events"].items()},
    }


def run_e2e(cfg: RunConfig, out: Path, jobs: int = 1) -> dict:
    """synth -> screen -> label -> train -> infer -> eval, with a summary JSON."""
    out.mkdir(parents=True, exist_ok=True)
    stage = "synth"
    try:
        streams = out / "streams"
        run_synth(cfg, streams)
        stage = "screen"
        stats = run_screen(cfg, streams, streams / "events.jsonl")
        stage = "label"
        seqs = load_sequences(cfg, streams)
        rest, test = split_train_val(seqs, cfg.test_fraction, cfg.seed + 1)
        if not rest or not test:
            raise DataError("empty-corpus", f"{len(rest)} train / {len(test)} test sequences")
        stage = "train"
        info = run_train(cfg, rest, out / "model.bin", out / "train_log.csv", jobs)
        stage = "infer"
        run_infer(cfg, out / "model.bin", test, out / "predictions.jsonl")
        stage = "eval"
        metrics = run_eval(read_predictions(out / "predictions.jsonl"), test, (0.1, 0.3, 0.5, 0.7))
        _dump_json(metrics, out / "metrics.json")
    except PipelineError as exc:
        exc.args = (f"[{stage}] {exc.args[0]}",)
        raise
    summary = {
        "schema_version": SUMMARY_SCHEMA_VERSION,
        "mode": cfg.mode,
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "screening": stats.to_dict(),
        "n_sequences": len(seqs), "n_train": len(rest), "n_test": len(test),
        "training": info,
        "metrics": _summary_metrics(metrics),
    }
    _dump_json(summary, out / "summary.json")
    return summary


# ---------------------------------------------------------------- argparse


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="potholenet", description=__doc__.splitlines()[0])
    ap.add_argument("--print-defaults", action="store_true", help="print the default run config and exit")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd")

    def common(p):
        p.add_argument("--config", help="run configuration JSON")
        p.add_argument("--jobs", type=int, default=1, help="worker cap for parallel stages")
        return p

    p = common(sub.add_parser("synth", help="generate synthetic streams"))
    p.add_argument("--out", required=True)
    p = common(sub.add_parser("screen", help="edge-side GMM screening"))
    p.add_argument("--data", "--in", dest="data", required=True, help="directory written by synth")
    p.add_argument("--out", help="events JSONL (default: DATA/events.jsonl)")
    p.add_argument("--gmm-config", help="JSON object overriding the gmm block")
    p.add_argument("--screen-config", help="JSON object overriding the screen block")
    p.add_argument("--stats", help="write screening stats JSON here")
    p = common(sub.add_parser("train", help="train the segmentation network"))
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--data", required=True, help="synth directory with events.jsonl, or a sequence binary")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", help="per-epoch / per-round CSV log")
    p = common(sub.add_parser("infer", help="predict events for candidate sequences"))
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", "--in", dest="data", required=True,
                   help="events JSONL, synth directory or sequence binary")
    p.add_argument("--out", required=True, help="predictions JSONL")
    p = common(sub.add_parser("eval", help="score predictions against ground truth"))
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True, help="synth directory with events.jsonl, or a sequence binary")
    p.add_argument("--out", required=True)
    p.add_argument("--iou", default="0.1,0.3,0.5,0.7")
    p = common(sub.add_parser("report", help="plot-ready CSV tables from metrics JSON"))
    p.add_argument("--metrics", required=True)
    p.add_argument("--out", required=True)
    p = common(sub.add_parser("e2e", help="run the whole pipeline"))
    p.add_argument("--out", required=True)
    return ap


def _parse_iou(text: str) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError("invalid-config", f"--iou {text!r}") from None
    if not vals or any(not 0 <= v < 1 for v in vals):
        raise ConfigError("invalid-config", "IoU thresholds must lie in [0, 1)")
    return vals


def dispatch(args: argparse.Namespace) -> int:
    if args.print_defaults:
        print(json.dumps(RunConfig().to_dict(), indent=2, sort_keys=True))
        return 0
    if args.cmd is None:
        raise ConfigError("missing-command", "choose a subcommand (see --help)")
    if args.jobs < 1:
        raise ConfigError("invalid-config", "--jobs must be >= 1")
    overrides: dict = {"mode": args.mode} if getattr(args, "mode", None) else {}
    for block in ("gmm", "screen"):
        path = getattr(args, f"{block}_config", None)
        if path:
            overrides[block] = _read_block(path, block)
    cfg = load_config(args.config, overrides)
    if args.cmd == "synth":
        m = run_synth(cfg, Path(args.out))
        print(json.dumps({"streams": len(m["streams"])}))
    elif args.cmd == "screen":
        data = Path(args.data)
        stats = run_screen(cfg, data, Path(args.out) if args.out else data / "events.jsonl")
        if args.stats:
            _dump_json(stats.to_dict(), Path(args.stats))
        print(json.dumps(stats.to_dict(), sort_keys=True))
    elif args.cmd == "train":
        info = run_train(cfg, load_sequences(cfg, Path(args.data)), Path(args.out),
                         Path(args.log) if args.log else None, args.jobs)
        print(json.dumps(info, sort_keys=True))
    elif args.cmd == "infer":
        run_infer(cfg, Path(args.ckpt), load_sequences(cfg, Path(args.data)), Path(args.out))
    elif args.cmd == "eval":
        metrics = run_eval(read_predictions(Path(args.pred)), load_sequences(cfg, Path(args.gt)),
                           _parse_iou(args.iou))
        _dump_json(metrics, Path(args.out))
        print(json.dumps(_summary_metrics(metrics), sort_keys=True))
    elif args.cmd == "report":
        try:
            metrics = json.loads(Path(args.metrics).read_text(encoding="utf-8"))
        except (FileNotFoundError, json.JSONDecodeError) as exc:
            raise DataError("bad-metrics", str(exc)) from None
        print("\n".join(run_report(metrics, Path(args.out))))
    elif args.cmd == "e2e":
        summary = run_e2e(cfg, Path(args.out), args.jobs)
        print(json.dumps(summary["metrics"], sort_keys=True))
    return 0


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return dispatch(args)
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
