"""A fixed set of differentiable 1D tensor ops with hand-written gradients.

Tensors are plain numpy arrays laid out ``batch x channels x length``. Each op
is a pair: the forward returns ``(output, cache)`` and ``<op>_backward`` maps
the upstream gradient and the cache to input gradients. Ops keep the dtype of
their inputs, so the same code runs in float32 for training and float64 for
gradient checks.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DataError, ShapeError
from .formats import pack_binary, unpack_binary

CHECKPOINT_FORMAT_VERSION = 1
BUFFER_SUFFIXES = (".running_mean", ".running_var")


# --------------------------------------------------------------------------- conv


def conv1d(x: np.ndarray, w: np.ndarray, b: np.ndarray | None = None, stride: int = 1):
    """Cross-correlation with "same" zero padding; output length ``ceil(L / stride)``."""
    if x.ndim != 3 or w.ndim != 3 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv1d: x {x.shape} w {w.shape}")
    if w.shape[2] % 2 == 0:
        raise ShapeError(f"conv1d: kernel size must be odd, got {w.shape[2]}")
    if b is not None and b.shape != (w.shape[0],):
        raise ShapeError(f"conv1d: bias {b.shape} for {w.shape[0]} outputs")
    B, C, L = x.shape
    O, _, k = w.shape
    pad = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad)))
    # (B, C, L, k) -> (B, C*k, Lout)
    cols = sliding_window_view(xp, k, axis=2)[:, :, ::stride, :]
    Lout = cols.shape[2]
    cols = cols.transpose(0, 1, 3, 2).reshape(B, C * k, Lout)
    y = np.matmul(w.reshape(O, C * k), cols)
    if b is not None:
        y += b[None, :, None]
    return y, (cols, w, x.shape, stride, b is not None)


def conv1d_backward(dy: np.ndarray, cache):
    cols, w, xshape, stride, has_bias = cache
    B, C, L = xshape
    O, _, k = w.shape
    pad = k // 2
    Lout = dy.shape[2]
    dw = np.tensordot(dy, cols, axes=([0, 2], [0, 2])).reshape(w.shape)
    dcols = np.matmul(w.reshape(O, C * k).T, dy).reshape(B, C, k, Lout)
    dxp = np.zeros((B, C, L + 2 * pad), dtype=dy.dtype)
    span = stride * (Lout - 1) + 1
    for j in range(k):
        dxp[:, :, j:j + span:stride] += dcols[:, :, j, :]
    dx = dxp[:, :, pad:pad + L]
    db = dy.sum(axis=(0, 2)) if has_bias else None
    return dx, dw, db


# ------------------------------------------------------------------ normalization


def batchnorm1d(
    x: np.ndarray,
    scale: np.ndarray,
    shift: np.ndarray,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    *,
    momentum: float = 0.9,
    eps: float = 1e-5,
    train: bool = True,
):
    """Per-channel normalization over batch and length.

    Returns ``(y, cache, (new_running_mean, new_running_var))``. In training
    mode the running statistics move by ``momentum`` toward the (biased) batch
    statistics; in eval mode they are used as-is and returned unchanged.
    """
    if x.ndim != 3 or scale.shape != (x.shape[1],):
        raise ShapeError(f"batchnorm1d: x {x.shape} scale {scale.shape}")
    if x.shape[0] == 0 or x.shape[2] == 0:
        raise DataError("empty-batch", "batchnorm1d needs at least one sample")
    if train:
        mean = x.mean(axis=(0, 2))
        centered = x - mean[None, :, None]
        var = (centered * centered).mean(axis=(0, 2))
        new_mean = (momentum * running_mean + (1 - momentum) * mean).astype(running_mean.dtype)
        new_var = (momentum * running_var + (1 - momentum) * var).astype(running_var.dtype)
    else:
        mean, var = running_mean.astype(x.dtype), running_var.astype(x.dtype)
        centered = x - mean[None, :, None]
        new_mean, new_var = running_mean, running_var
    inv = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = centered * inv[None, :, None]
    y = xhat * scale[None, :, None] + shift[None, :, None]
    return y, (xhat, inv, scale, train), (new_mean, new_var)


def batchnorm1d_backward(dy: np.ndarray, cache):
    xhat, inv, scale, train = cache
    dscale = (dy * xhat).sum(axis=(0, 2))
    dshift = dy.sum(axis=(0, 2))
    dxhat = dy * scale[None, :, None]
    if not train:
        return dxhat * inv[None, :, None], dscale, dshift
    n = dy.shape[0] * dy.shape[2]
    s1 = dxhat.sum(axis=(0, 2))
    s2 = (dxhat * xhat).sum(axis=(0, 2))
    dx = (inv[None, :, None] / n) * (
        n * dxhat - s1[None, :, None] - xhat * s2[None, :, None]
    )
    return dx, dscale, dshift


# -------------------------------------------------------------- pointwise & misc


def relu(x: np.ndarray):
    mask = x > 0
    return x * mask, mask


def relu_backward(dy: np.ndarray, mask: np.ndarray) -> np.ndarray:
    return dy * mask


def sigmoid(x: np.ndarray):
    y = np.empty_like(x)
    pos = x >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    y[~pos] = ex / (1.0 + ex)
    return y, y


def sigmoid_backward(dy: np.ndarray, y: np.ndarray) -> np.ndarray:
    return dy * y * (1.0 - y)


def softmax_channel(x: np.ndarray):
    """Softmax over axis 1 (classes) at every batch item and position."""
    z = x - x.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)
    return p, p


def softmax_channel_backward(dp: np.ndarray, p: np.ndarray) -> np.ndarray:
    return p * (dp - (dp * p).sum(axis=1, keepdims=True))


def maxpool1d(x: np.ndarray, size: int = 2):
    """Non-overlapping max pooling; gradients go to the first maximum in a window."""
    B, C, L = x.shape
    if L % size:
        raise ShapeError(f"maxpool1d: length {L} not divisible by {size}")
    win = x.reshape(B, C, L // size, size)
    idx = win.argmax(axis=3)
    y = np.take_along_axis(win, idx[..., None], axis=3)[..., 0]
    return y, (idx, x.shape, size)


def maxpool1d_backward(dy: np.ndarray, cache) -> np.ndarray:
    idx, shape, size = cache
    B, C, L = shape
    dwin = np.zeros((B, C, L // size, size), dtype=dy.dtype)
    np.put_along_axis(dwin, idx[..., None], dy[..., None], axis=3)
    return dwin.reshape(shape)


def upsample_nearest(x: np.ndarray, scale: int = 2):
    return np.repeat(x, scale, axis=2), scale


def upsample_nearest_backward(dy: np.ndarray, scale: int) -> np.ndarray:
    B, C, L = dy.shape
    return dy.reshape(B, C, L // scale, scale).sum(axis=3)


def concat_channels(a: np.ndarray, b: np.ndarray):
    if a.shape[0] != b.shape[0] or a.shape[2] != b.shape[2]:
        raise ShapeError(f"concat_channels: {a.shape} vs {b.shape}")
    return np.concatenate([a, b], axis=1), a.shape[1]


def concat_channels_backward(dy: np.ndarray, split: int):
    return dy[:, :split], dy[:, split:]


def global_avgpool(x: np.ndarray):
    return x.mean(axis=2), x.shape


def global_avgpool_backward(dy: np.ndarray, shape) -> np.ndarray:
    return np.broadcast_to(dy[:, :, None] / shape[2], shape).astype(dy.dtype)


def global_maxpool(x: np.ndarray):
    idx = x.argmax(axis=2)
    y = np.take_along_axis(x, idx[..., None], axis=2)[..., 0]
    return y, (idx, x.shape)


def global_maxpool_backward(dy: np.ndarray, cache) -> np.ndarray:
    idx, shape = cache
    dx = np.zeros(shape, dtype=dy.dtype)
    np.put_along_axis(dx, idx[..., None], dy[..., None], axis=2)
    return dx


def dense(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    """``x @ w.T + b`` for ``x`` of shape (B, n) and ``w`` of shape (m, n)."""
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[1] or b.shape != (w.shape[0],):
        raise ShapeError(f"dense: x {x.shape} w {w.shape} b {b.shape}")
    return x @ w.T + b, (x, w)


def dense_backward(dy: np.ndarray, cache):
    x, w = cache
    return dy @ w, dy.T @ x, dy.sum(axis=0)


def channel_scale(f: np.ndarray, w: np.ndarray):
    """Multiply each channel of ``f`` (B, C, L) by ``w`` (B, C)."""
    if w.shape != f.shape[:2]:
        raise ShapeError(f"channel_scale: {f.shape} vs {w.shape}")
    return f * w[:, :, None], (f, w)


def channel_scale_backward(dy: np.ndarray, cache):
    f, w = cache
    return dy * w[:, :, None], (dy * f).sum(axis=2)


# ------------------------------------------------------------------- parameters


class ModelParams:
    """Named parameter tensors, iterated in lexicographic name order.

    Names ending in ``.running_mean``/``.running_var`` are normalization
    buffers: stored and averaged like weights but never optimized.
    """

    def __init__(self, tensors: Mapping[str, np.ndarray] | None = None) -> None:
        self._t: dict[str, np.ndarray] = {}
        for name, arr in (tensors or {}).items():
            self[name] = arr

    def __setitem__(self, name: str, arr: np.ndarray) -> None:
        self._t[name] = arr

    def __getitem__(self, name: str) -> np.ndarray:
        return self._t[name]

    def __contains__(self, name: str) -> bool:
        return name in self._t

    def __len__(self) -> int:
        return len(self._t)

    def __iter__(self) -> Iterator[str]:
        return iter(sorted(self._t))

    def names(self) -> list[str]:
        return sorted(self._t)

    def items(self) -> list[tuple[str, np.ndarray]]:
        return [(n, self._t[n]) for n in self.names()]

    def trainable_names(self) -> list[str]:
        return [n for n in self.names() if not n.endswith(BUFFER_SUFFIXES)]

    def num_parameters(self, trainable_only: bool = True) -> int:
        names = self.trainable_names() if trainable_only else self.names()
        return int(sum(self._t[n].size for n in names))

    def copy(self) -> "ModelParams":
        return ModelParams({n: a.copy() for n, a in self._t.items()})

    def astype(self, dtype) -> "ModelParams":
        return ModelParams({n: a.astype(dtype) for n, a in self._t.items()})

    def manifest(self) -> list[tuple[str, tuple[int, ...]]]:
        return [(n, tuple(self._t[n].shape)) for n in self.names()]

    def equal(self, other: "ModelParams") -> bool:
        return self.names() == other.names() and all(
            a.dtype == other[n].dtype and np.array_equal(a, other[n]) for n, a in self.items()
        )


def init_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = math.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


# ---------------------------------------------------------------- optimization


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adam_step(
    params: ModelParams,
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> ModelParams:
    """One bias-corrected Adam update, applied in place to ``params``."""
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name in sorted(grads):
        g = grads[name]
        p = params[name]
        if g.shape != p.shape:
            raise ShapeError(f"adam: {name} grad {g.shape} vs param {p.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        mhat = m / c1
        vhat = v / c2
        p -= (lr * mhat / (np.sqrt(vhat) + eps)).astype(p.dtype)
    return params


def cosine_lr(epoch: int, total: int, lr0: float) -> float:
    return lr0 * 0.5 * (1.0 + math.cos(math.pi * epoch / total))


# ------------------------------------------------------------------ checkpoints


def encode_checkpoint(params: ModelParams, extra: dict | None = None) -> bytes:
    tensors = [{"name": n, "shape": list(s)} for n, s in params.manifest()]
    manifest = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "dtype": "f32",
        "tensors": tensors,
        "extra": extra or {},
    }
    payloads = [np.ascontiguousarray(params[n], dtype="<f4").tobytes() for n in params.names()]
    return pack_binary(manifest, payloads)


def decode_checkpoint(blob: bytes) -> tuple[ModelParams, dict]:
    manifest, payload = unpack_binary(blob)
    if manifest.get("format_version") != CHECKPOINT_FORMAT_VERSION or manifest.get("dtype") != "f32":
        raise DataError("bad-checkpoint", f"unsupported manifest {manifest.get('format_version')}")
    params = ModelParams()
    pos = 0
    for entry in manifest["tensors"]:
        shape = tuple(entry["shape"])
        nbytes = 4 * int(np.prod(shape, dtype=np.int64))
        if pos + nbytes > len(payload):
            raise DataError("truncated-file", entry["name"])
        params[entry["name"]] = (
            np.frombuffer(payload[pos:pos + nbytes], dtype="<f4").reshape(shape).astype(np.float32)
        )
        pos += nbytes
    if pos != len(payload):
        raise DataError("bad-checkpoint", "trailing bytes")
    return params, manifest.get("extra", {})


def save_checkpoint(params: ModelParams, path: str | Path, extra: dict | None = None) -> None:
    Path(path).write_bytes(encode_checkpoint(params, extra))


def load_checkpoint(path: str | Path) -> tuple[ModelParams, dict]:
    return decode_checkpoint(Path(path).read_bytes())


def params_checksum(params: ModelParams) -> str:
    return hashlib.sha256(encode_checkpoint(params)).hexdigest()[:16]
