"""Centralized training and simulated federated averaging over vehicle clients."""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import segnet
from .autodiff import AdamState, ModelParams, adam_step, cosine_lr, params_checksum
from .dataset import split_train_val, stack
from .errors import ConfigError, DataError
from .losses import LossConfig, combined, inverse_frequency_weights
from .metrics import MetricsBundle, compute_metrics
from .postproc import PostConfig, events_from_prediction
from .rng import make_rng
from .signal import LabeledSequence, label_runs

log = logging.getLogger(__name__)

CENTRAL_LOG_FIELDS = ["epoch", "lr", "loss", "focal", "tversky", "val_acc", "val_event_f1"]
FED_LOG_FIELDS = ["round", "clients", "weights_checksum", "loss", "focal", "tversky",
                  "val_acc", "val_event_f1"]


def _check_keys(cls, d: dict, section: str) -> None:
    unknown = set(d) - {f.name for f in fields(cls)}
    if unknown:
        raise ConfigError("unknown-key", f"{section}: {sorted(unknown)}")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 32
    lr: float = 1e-3
    seed: int = 0
    patience: int = 10
    val_fraction: float = 0.2
    shuffle: bool = True
    val_iou: float = 0.5

    def __post_init__(self) -> None:
        if self.epochs < 0 or self.batch_size < 1 or self.lr <= 0 or self.patience < 1:
            raise ConfigError("invalid-config", "epochs >= 0, batch_size >= 1, lr > 0, patience >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        _check_keys(cls, d, "train")
        return cls(**d)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True)
class FedConfig:
    n_clients: int = 100
    clients_per_round: int = 10
    rounds: int = 20
    local_epochs: int = 2
    local_lr: float = 1e-3
    batch_size: int = 32
    seed: int = 0
    dirichlet_alpha: float = 0.5
    shuffle: bool = True
    val_iou: float = 0.5

    def __post_init__(self) -> None:
        if not 1 <= self.clients_per_round <= self.n_clients:
            raise ConfigError("invalid-config", "need 1 <= clients_per_round <= n_clients")
        if self.rounds < 1 or self.local_epochs < 0 or self.local_lr <= 0 or self.batch_size < 1:
            raise ConfigError("invalid-config", "rounds >= 1, local_epochs >= 0, local_lr > 0")

    @classmethod
    def from_dict(cls, d: dict) -> "FedConfig":
        _check_keys(cls, d, "fed")
        return cls(**d)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


# ------------------------------------------------------------------ primitives


def train_step(
    params: ModelParams, adam: AdamState, x: np.ndarray, y: np.ndarray,
    net_cfg: segnet.NetConfig, loss_cfg: LossConfig, lr: float,
) -> tuple[float, dict]:
    """Forward, loss, backward and one Adam update on a single batch."""
    p, trace = segnet.forward(params, x, net_cfg, train=True)
    loss, dp, parts = combined(p, y, loss_cfg)
    grads = segnet.backward(params, trace, dp)
    adam_step(params, grads, adam, lr)
    return loss, parts


def run_epoch(
    params: ModelParams, adam: AdamState, x: np.ndarray, y: np.ndarray,
    net_cfg: segnet.NetConfig, loss_cfg: LossConfig, lr: float, batch_size: int,
    order: np.ndarray,
) -> dict:
    """One pass over ``order``; returns sample-weighted mean loss terms."""
    tot = {"loss": 0.0, "focal": 0.0, "tversky": 0.0}
    for i in range(0, len(order), batch_size):
        idx = order[i:i + batch_size]
        loss, parts = train_step(params, adam, x[idx], y[idx], net_cfg, loss_cfg, lr)
        tot["loss"] += loss * len(idx)
        tot["focal"] += parts["focal"] * len(idx)
        tot["tversky"] += parts["tversky"] * len(idx)
    n = max(len(order), 1)
    return {k: v / n for k, v in tot.items()}


def evaluate_loss(
    params: ModelParams, x: np.ndarray, y: np.ndarray, net_cfg: segnet.NetConfig, loss_cfg: LossConfig,
) -> float:
    """Training objective on one full batch (batch statistics, running stats untouched)."""
    p, _ = segnet.forward(params.copy(), x, net_cfg, train=True)
    return combined(p, y, loss_cfg)[0]


def predict(params: ModelParams, x: np.ndarray, net_cfg: segnet.NetConfig, batch_size: int = 64) -> np.ndarray:
    """Inference-mode class probabilities ``(N, n_classes, L)``."""
    out = [segnet.forward(params, x[i:i + batch_size], net_cfg, train=False)[0]
           for i in range(0, len(x), batch_size)]
    return np.concatenate(out, axis=0)


def evaluate(
    params: ModelParams,
    seqs: Sequence[LabeledSequence],
    net_cfg: segnet.NetConfig,
    post_cfg: PostConfig = PostConfig(),
    thresholds: Sequence[float] = (0.1, 0.3, 0.5, 0.7),
) -> MetricsBundle:
    """Point metrics on raw argmax, event metrics on post-processed predictions."""
    x, y = stack(seqs)
    probs = predict(params, x, net_cfg)
    raw = segnet.predict_labels(probs)
    pred_events = [events_from_prediction(p, post_cfg)[1] for p in probs]
    gt_events = [label_runs(t) for t in y]
    return compute_metrics(raw, y, pred_events, gt_events, thresholds)


def _resolve_weights(loss_cfg: LossConfig, y: np.ndarray, n_classes: int) -> LossConfig:
    if loss_cfg.class_weights is not None:
        return loss_cfg
    return replace(loss_cfg, class_weights=inverse_frequency_weights(y, n_classes))


def _write_log(path: str | Path | None, header: list[str], rows: list[dict]) -> None:
    if path is None:
        return
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=header, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


# ------------------------------------------------------------------ centralized


@dataclass
class TrainResult:
    params: ModelParams
    history: list[dict]
    best_epoch: int
    loss_cfg: LossConfig


def train_centralized(
    corpus: Sequence[LabeledSequence],
    net_cfg: segnet.NetConfig = segnet.NetConfig(),
    loss_cfg: LossConfig = LossConfig(),
    cfg: TrainConfig = TrainConfig(),
    *,
    val: Sequence[LabeledSequence] | None = None,
    params: ModelParams | None = None,
    log_path: str | Path | None = None,
    post_cfg: PostConfig = PostConfig(),
) -> TrainResult:
    """Adam with a per-epoch cosine schedule and early stopping on val event F1.

    When ``val`` is not given the corpus is split by :func:`split_train_val`.
    The returned parameters are those of the best validation epoch.
    """
    if not corpus:
        raise DataError("empty-corpus", "nothing to train on")
    train, val = (list(corpus), list(val)) if val is not None else split_train_val(corpus, cfg.val_fraction, cfg.seed)
    if not train:
        raise DataError("empty-corpus", "training split is empty")
    x, y = stack(train)
    loss_cfg = _resolve_weights(loss_cfg, y, net_cfg.n_classes)
    params = segnet.build(net_cfg, cfg.seed) if params is None else params.copy()
    adam = AdamState()
    best = params.copy()
    best_f1, best_epoch, stale = -1.0, -1, 0
    history: list[dict] = []
    for epoch in range(cfg.epochs):
        lr = cosine_lr(epoch, cfg.epochs, cfg.lr)
        order = make_rng(cfg.seed, "shuffle", epoch).permutation(len(train)) if cfg.shuffle else np.arange(len(train))
        terms = run_epoch(params, adam, x, y, net_cfg, loss_cfg, lr, cfg.batch_size, order)
        row = {"epoch": epoch, "lr": lr, **terms, "val_acc": 0.0, "val_event_f1": 0.0}
        if val:
            m = evaluate(params, val, net_cfg, post_cfg, (cfg.val_iou,))
            row["val_acc"] = m.point.accuracy
            row["val_event_f1"] = m.events[cfg.val_iou].macro_f1
        history.append(row)
        log.info("epoch %d lr %.3g loss %.4f val_acc %.4f val_f1 %.4f",
                 epoch, lr, row["loss"], row["val_acc"], row["val_event_f1"])
        if row["val_event_f1"] > best_f1:
            best, best_f1, best_epoch, stale = params.copy(), row["val_event_f1"], epoch, 0
        else:
            stale += 1
            if stale >= cfg.patience:
                log.info("early stop at epoch %d (best %d)", epoch, best_epoch)
                break
    _write_log(log_path, CENTRAL_LOG_FIELDS, history)
    return TrainResult(params=best, history=history, best_epoch=best_epoch, loss_cfg=loss_cfg)


# ------------------------------------------------------------------ federated


@dataclass(frozen=True)
class ClientUpdate:
    """Everything a client reveals to the server: parameters and a sample count."""

    client_id: int
    params: ModelParams
    n_samples: int
    loss: dict


class Client:
    """A vehicle holding private sequences; only :meth:`update` is visible to the server."""

    def __init__(self, client_id: int, seqs: Sequence[LabeledSequence]) -> None:
        self.client_id = client_id
        self._seqs = list(seqs)

    @property
    def n_samples(self) -> int:
        return len(self._seqs)

    def update(
        self, global_params: ModelParams, round_index: int, fed_cfg: FedConfig,
        net_cfg: segnet.NetConfig, loss_cfg: LossConfig,
    ) -> ClientUpdate:
        params, terms = local_update(global_params, self._seqs, fed_cfg, net_cfg, loss_cfg,
                                     round_index=round_index, client_id=self.client_id)
        return ClientUpdate(self.client_id, params, len(self._seqs), terms)


def local_update(
    global_params: ModelParams,
    data: Sequence[LabeledSequence],
    fed_cfg: FedConfig,
    net_cfg: segnet.NetConfig,
    loss_cfg: LossConfig,
    *,
    round_index: int = 0,
    client_id: int = 0,
) -> tuple[ModelParams, dict]:
    """Train a copy of the global model for ``local_epochs`` with a fresh Adam state."""
    if not data:
        raise DataError("empty-client", f"client {client_id} has no data")
    params = global_params.copy()
    terms = {"loss": 0.0, "focal": 0.0, "tversky": 0.0}
    if fed_cfg.local_epochs == 0:
        return params, terms
    x, y = stack(data)
    loss_cfg = _resolve_weights(loss_cfg, y, net_cfg.n_classes)
    adam = AdamState()
    for epoch in range(fed_cfg.local_epochs):
        if fed_cfg.shuffle:
            order = make_rng(fed_cfg.seed, "local-shuffle", round_index, client_id, epoch).permutation(len(data))
        else:
            order = np.arange(len(data))
        terms = run_epoch(params, adam, x, y, net_cfg, loss_cfg, fed_cfg.local_lr, fed_cfg.batch_size, order)
    return params, terms


def aggregation_weights(sizes: Mapping[int, int]) -> dict[int, float]:
    total = sum(sizes.values())
    if total <= 0:
        raise DataError("empty-round", "no samples to aggregate")
    return {cid: sizes[cid] / total for cid in sorted(sizes)}


def aggregate(updates: Mapping[int, ModelParams], sizes: Mapping[int, int]) -> ModelParams:
    """Sample-size-weighted average, accumulated in float64 in client-id order."""
    if not updates:
        raise DataError("empty-round", "no client updates")
    if set(updates) != set(sizes):
        raise DataError("incompatible-update", "updates and sizes name different clients")
    ids = sorted(updates)
    ref = updates[ids[0]]
    for cid in ids[1:]:
        if updates[cid].manifest() != ref.manifest():
            raise DataError("incompatible-update", f"client {cid} manifest differs")
    weights = aggregation_weights(sizes)
    out = ModelParams()
    for name in ref.names():
        acc = np.zeros(ref[name].shape, dtype=np.float64)
        for cid in ids:
            acc += weights[cid] * updates[cid][name].astype(np.float64)
        out[name] = acc.astype(ref[name].dtype)
    return out


@dataclass
class RoundRecord:
    round: int
    clients: list[int]
    sizes: list[int]
    weights: list[float]
    loss: dict
    val_acc: float
    val_event_f1: float
    weights_checksum: str

    def log_row(self) -> dict:
        return {
            "round": self.round, "clients": " ".join(map(str, self.clients)),
            "weights_checksum": self.weights_checksum, **self.loss,
            "val_acc": self.val_acc, "val_event_f1": self.val_event_f1,
        }


@dataclass
class FedResult:
    params: ModelParams
    rounds: list[RoundRecord] = field(default_factory=list)
    final_metrics: MetricsBundle | None = None


def select_clients(n_clients: int, per_round: int, seed: int, round_index: int) -> list[int]:
    rng = make_rng(seed, "select", round_index)
    return sorted(int(i) for i in rng.choice(n_clients, size=per_round, replace=False))


def train_federated(
    clients: Sequence[Client],
    val: Sequence[LabeledSequence],
    net_cfg: segnet.NetConfig = segnet.NetConfig(),
    loss_cfg: LossConfig = LossConfig(),
    fed_cfg: FedConfig = FedConfig(),
    *,
    params: ModelParams | None = None,
    log_path: str | Path | None = None,
    post_cfg: PostConfig = PostConfig(),
    jobs: int = 1,
) -> FedResult:
    """FedAvg rounds of select, local update, aggregate and validate.

    ``clients`` must hold ``fed_cfg.n_clients`` entries. Empty clients are
    skipped with a warning. Local updates may run on ``jobs`` threads; the
    result does not depend on scheduling.
    """
    if len(clients) != fed_cfg.n_clients:
        raise ConfigError("invalid-config", f"{len(clients)} clients for n_clients={fed_cfg.n_clients}")
    if not any(c.n_samples for c in clients):
        raise DataError("empty-corpus", "every client is empty")
    global_params = segnet.build(net_cfg, fed_cfg.seed) if params is None else params.copy()
    result = FedResult(params=global_params)
    pool = ThreadPoolExecutor(max_workers=jobs) if jobs > 1 else None
    try:
        for r in range(fed_cfg.rounds):
            chosen = select_clients(fed_cfg.n_clients, fed_cfg.clients_per_round, fed_cfg.seed, r)
            active = []
            for cid in chosen:
                if clients[cid].n_samples == 0:
                    log.warning("round %d: client %d is empty, excluded", r, cid)
                else:
                    active.append(cid)
            if not active:
                log.warning("round %d: no nonempty client selected, model unchanged", r)
                continue
            work = lambda cid: clients[cid].update(global_params, r, fed_cfg, net_cfg, loss_cfg)  # noqa: E731
            ups = list(pool.map(work, active)) if pool else [work(cid) for cid in active]
            sizes = {u.client_id: u.n_samples for u in ups}
            global_params = aggregate({u.client_id: u.params for u in ups}, sizes)
            w = aggregation_weights(sizes)
            loss = {k: sum(w[u.client_id] * u.loss[k] for u in ups) for k in ("loss", "focal", "tversky")}
            m = evaluate(global_params, val, net_cfg, post_cfg, (fed_cfg.val_iou,)) if val else None
            rec = RoundRecord(
                round=r, clients=active, sizes=[sizes[c] for c in active], weights=[w[c] for c in active],
                loss=loss, val_acc=m.point.accuracy if m else 0.0,
                val_event_f1=m.events[fed_cfg.val_iou].macro_f1 if m else 0.0,
                weights_checksum=params_checksum(global_params),
            )
            result.rounds.append(rec)
            log.info("round %d clients %s loss %.4f val_f1 %.4f", r, active, loss["loss"], rec.val_event_f1)
    finally:
        if pool:
            pool.shutdown()
    result.params = global_params
    _write_log(log_path, FED_LOG_FIELDS, [rec.log_row() for rec in result.rounds])
    return result


def make_clients(partitions: Sequence[Sequence[LabeledSequence]]) -> list[Client]:
    return [Client(i, part) for i, part in enumerate(partitions)]
