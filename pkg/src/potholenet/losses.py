"""Focal, Tversky and combined segmentation losses with gradients w.r.t. P.

``P`` is a probability tensor ``(B, n_classes, L)`` (a single ``(n_classes, L)``
sequence is accepted too) and ``y`` holds integer labels ``(B, L)``. The focal
term averages over every position in the batch; the Tversky counts are summed
over the whole batch before forming the per-class index.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .errors import ConfigError, DataError
from .signal import N_CLASSES


@dataclass(frozen=True)
class LossConfig:
    class_weights: tuple[float, ...] | None = None  # None: inverse training frequency
    gamma: float = 2.0
    eps: float = 1e-7
    fp_weight: float = 0.3
    fn_weight: float = 0.7
    eta: float = 1.0

    def __post_init__(self) -> None:
        if self.class_weights is not None and any(a <= 0 for a in self.class_weights):
            raise ConfigError("invalid-config", "class weights must be > 0")
        if self.gamma < 0 or self.eps <= 0 or self.fp_weight <= 0 or self.fn_weight <= 0:
            raise ConfigError("invalid-config", "gamma >= 0; eps, fp_weight, fn_weight > 0")

    def weights(self, n_classes: int = N_CLASSES) -> np.ndarray:
        if self.class_weights is None:
            return np.ones(n_classes)
        if len(self.class_weights) != n_classes:
            raise ConfigError("invalid-config", f"need {n_classes} class weights")
        return np.asarray(self.class_weights, dtype=np.float64)

    @classmethod
    def from_dict(cls, d: dict) -> "LossConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError("unknown-key", f"loss: {sorted(unknown)}")
        kw = dict(d)
        if kw.get("class_weights") is not None:
            kw["class_weights"] = tuple(kw["class_weights"])
        return cls(**kw)

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        if d["class_weights"] is not None:
            d["class_weights"] = list(d["class_weights"])
        return d


def inverse_frequency_weights(
    labels: np.ndarray, n_classes: int = N_CLASSES, clamp: tuple[float, float] = (0.25, 10.0)
) -> tuple[float, ...]:
    """Inverse label frequency normalized to mean 1, then clamped."""
    counts = np.bincount(np.asarray(labels, dtype=np.int64).ravel(), minlength=n_classes)[:n_classes]
    inv = counts.sum() / np.maximum(counts, 1).astype(np.float64)
    inv = inv / inv.mean()
    return tuple(float(v) for v in np.clip(inv, *clamp))


def _as_batch(p: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray, bool]:
    single = p.ndim == 2
    if single:
        p, y = p[None], np.asarray(y)[None]
    y = np.asarray(y)
    if p.ndim != 3 or y.shape != (p.shape[0], p.shape[2]):
        raise DataError("shape-error", f"P {p.shape} vs y {y.shape}")
    if y.size and (y.min() < 0 or y.max() >= p.shape[1]):
        raise DataError("invalid-label", f"labels must lie in 0..{p.shape[1] - 1}")
    return p, y.astype(np.int64), single


def focal(p: np.ndarray, y: np.ndarray, cfg: LossConfig) -> tuple[float, np.ndarray]:
    """Mean of ``-alpha_y (1 - p_y)^gamma log(p_y + eps)`` and its gradient."""
    pb, yb, single = _as_batch(p, y)
    alpha = cfg.weights(pb.shape[1])[yb]
    pt = np.take_along_axis(pb, yb[:, None, :], axis=1)[:, 0, :].astype(np.float64)
    n = pt.size
    g = cfg.gamma
    one_m = np.maximum(1.0 - pt, 0.0)
    logp = np.log(pt + cfg.eps)
    mod = one_m ** g
    loss = float(np.sum(-alpha * mod * logp) / n)
    # d/dp [-(1-p)^g log(p+eps)] = g (1-p)^(g-1) log(p+eps) - (1-p)^g / (p+eps)
    safe = np.where(one_m > 0, one_m, 1.0)
    dmod = np.where(one_m > 0, g * safe ** (g - 1), g if g == 1 else 0.0)
    dpt = alpha * (dmod * logp - mod / (pt + cfg.eps)) / n
    grad = np.zeros(pb.shape, dtype=np.float64)
    np.put_along_axis(grad, yb[:, None, :], dpt[:, None, :], axis=1)
    grad = grad.astype(p.dtype)
    return loss, grad[0] if single else grad


def tversky_index(p: np.ndarray, y: np.ndarray, cfg: LossConfig) -> np.ndarray:
    pb, yb, _ = _as_batch(p, y)
    onehot = np.eye(pb.shape[1])[yb].transpose(0, 2, 1)
    pd = pb.astype(np.float64)
    tp = (pd * onehot).sum(axis=(0, 2))
    fp = (pd * (1 - onehot)).sum(axis=(0, 2))
    fn = ((1 - pd) * onehot).sum(axis=(0, 2))
    return (tp + cfg.eps) / (tp + cfg.fp_weight * fp + cfg.fn_weight * fn + cfg.eps)


def tversky(p: np.ndarray, y: np.ndarray, cfg: LossConfig) -> tuple[float, np.ndarray]:
    """``1 - mean_c TI_c`` over batch-summed soft TP/FP/FN, and its gradient."""
    pb, yb, single = _as_batch(p, y)
    C = pb.shape[1]
    onehot = np.eye(C)[yb].transpose(0, 2, 1)
    pd = pb.astype(np.float64)
    tp = (pd * onehot).sum(axis=(0, 2))
    fp = (pd * (1 - onehot)).sum(axis=(0, 2))
    fn = ((1 - pd) * onehot).sum(axis=(0, 2))
    lam, beta, eps = cfg.fp_weight, cfg.fn_weight, cfg.eps
    num = tp + eps
    den = tp + lam * fp + beta * fn + eps
    ti = num / den
    loss = float(1.0 - ti.mean())
    # dTP/dP = Y, dFP/dP = 1 - Y, dFN/dP = -Y
    dti_dtp = (den - num) / den ** 2
    dti_dfp = -num * lam / den ** 2
    dti_dfn = -num * beta / den ** 2
    dti_dp = (dti_dtp - dti_dfn)[None, :, None] * onehot + dti_dfp[None, :, None] * (1 - onehot)
    grad = (-dti_dp / C).astype(p.dtype)
    return loss, grad[0] if single else grad


def combined(p: np.ndarray, y: np.ndarray, cfg: LossConfig) -> tuple[float, np.ndarray, dict]:
    """Focal + eta * Tversky; returns ``(loss, grad, parts)``."""
    lf, gf = focal(p, y, cfg)
    if cfg.eta == 0:
        return lf, gf, {"focal": lf, "tversky": 0.0}
    lt, gt = tversky(p, y, cfg)
    return lf + cfg.eta * lt, gf + cfg.eta * gt, {"focal": lf, "tversky": lt}
