"""1D Attention U-Net for point-wise road-event segmentation.

Layout for the default ``channels=(16, 32, 64, 128)``::

    enc1 (C->16)  -> att1 -> pool ----------------------------- skip1
    enc2 (16->32) -> att2 -> pool ---------------------- skip2    |
    enc3 (32->64) -> att3 -> pool --------------- skip3    |      |
    bottleneck (64->128)                            |      |      |
    dec3: up(128) ++ skip3 -> 64 -----------------+      |      |
    dec2: up(64)  ++ skip2 -> 32 ------------------------+      |
    dec1: up(32)  ++ skip1 -> 16 -------------------------------+
    head: 1x1 conv 16 -> 4, softmax over classes

Every ``enc*``/``dec*``/``bottleneck`` block is (conv -> batchnorm -> relu) x 2.
Channel attention gates a feature map with
``sigmoid(mlp(avgpool(F)) + mlp(maxpool(F)))`` using one MLP shared by both
descriptors; the gated map feeds both the pooling path and the skip.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields

import numpy as np

from . import autodiff as ad
from .autodiff import ModelParams
from .errors import ConfigError, ShapeError
from .rng import make_rng
from .signal import N_CLASSES

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class NetConfig:
    in_channels: int = 1
    n_classes: int = N_CLASSES
    channels: tuple[int, ...] = (16, 32, 64, 128)
    kernel_size: int = 5
    reduction: int = 4
    length: int = 512
    bn_momentum: float = 0.9
    bn_eps: float = 1e-5

    def __post_init__(self) -> None:
        ch = tuple(self.channels)
        if len(ch) < 2:
            raise ConfigError("invalid-config", "need at least one encoder stage and a bottleneck")
        if any(b <= a for a, b in zip(ch, ch[1:])):
            raise ConfigError("invalid-config", f"channels must strictly increase: {ch}")
        if self.in_channels not in (1, 3):
            raise ConfigError("invalid-config", "in_channels must be 1 or 3")
        if self.kernel_size % 2 == 0 or self.kernel_size < 1:
            raise ConfigError("invalid-config", "kernel_size must be odd")
        if self.length % (2 ** self.depth):
            raise ConfigError("invalid-config", f"length {self.length} not divisible by 2^{self.depth}")
        if self.reduction < 1:
            raise ConfigError("invalid-config", "reduction must be >= 1")

    @property
    def depth(self) -> int:
        return len(self.channels) - 1

    def hidden(self, c: int) -> int:
        return max(1, c // self.reduction)

    @classmethod
    def from_dict(cls, d: dict) -> "NetConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError("unknown-key", f"net: {sorted(unknown)}")
        kw = dict(d)
        if "channels" in kw:
            kw["channels"] = tuple(kw["channels"])
        return cls(**kw)

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["channels"] = list(self.channels)
        return d


def _block_specs(cfg: NetConfig) -> list[tuple[str, int, int]]:
    ch = cfg.channels
    specs = []
    cin = cfg.in_channels
    for s in range(cfg.depth):
        specs.append((f"enc{s + 1}", cin, ch[s]))
        cin = ch[s]
    specs.append(("bottleneck", ch[-2], ch[-1]))
    for s in reversed(range(cfg.depth)):
        specs.append((f"dec{s + 1}", ch[s + 1] + ch[s], ch[s]))
    return specs


def build(cfg: NetConfig, seed: int) -> ModelParams:
    """Initialize all parameters; each tensor draws from its own named stream."""
    params = ModelParams()
    k = cfg.kernel_size

    def uniform(name: str, shape: tuple[int, ...], fan_in: int) -> None:
        params[name] = ad.init_uniform(make_rng(seed, f"init/{name}"), shape, fan_in)

    def bn(prefix: str, c: int) -> None:
        params[f"{prefix}.scale"] = np.ones(c, dtype=np.float32)
        params[f"{prefix}.shift"] = np.zeros(c, dtype=np.float32)
        params[f"{prefix}.running_mean"] = np.zeros(c, dtype=np.float32)
        params[f"{prefix}.running_var"] = np.ones(c, dtype=np.float32)

    for name, cin, cout in _block_specs(cfg):
        uniform(f"{name}.conv1.weight", (cout, cin, k), cin * k)
        bn(f"{name}.bn1", cout)
        uniform(f"{name}.conv2.weight", (cout, cout, k), cout * k)
        bn(f"{name}.bn2", cout)
    for s in range(cfg.depth):
        c = cfg.channels[s]
        h = cfg.hidden(c)
        uniform(f"enc{s + 1}.att.fc1.weight", (h, c), c)
        uniform(f"enc{s + 1}.att.fc1.bias", (h,), c)
        uniform(f"enc{s + 1}.att.fc2.weight", (c, h), h)
        uniform(f"enc{s + 1}.att.fc2.bias", (c,), h)
    c0 = cfg.channels[0]
    uniform("head.weight", (cfg.n_classes, c0, 1), c0)
    uniform("head.bias", (cfg.n_classes,), c0)
    log.info("built attention U-Net: %d trainable parameters", params.num_parameters())
    return params


# ------------------------------------------------------------------ sub-blocks


def _conv_block(params: ModelParams, prefix: str, x: np.ndarray, cfg: NetConfig, train: bool):
    caches = []
    h = x
    for i in (1, 2):
        conv = f"{prefix}.conv{i}"
        bn = f"{prefix}.bn{i}"
        h, c_conv = ad.conv1d(h, params[f"{conv}.weight"])
        h, c_bn, (rm, rv) = ad.batchnorm1d(
            h, params[f"{bn}.scale"], params[f"{bn}.shift"],
            params[f"{bn}.running_mean"], params[f"{bn}.running_var"],
            momentum=cfg.bn_momentum, eps=cfg.bn_eps, train=train,
        )
        if train:
            params[f"{bn}.running_mean"] = rm
            params[f"{bn}.running_var"] = rv
        h, c_relu = ad.relu(h)
        caches.append((c_conv, c_bn, c_relu))
    return h, caches


def _conv_block_backward(prefix: str, dy: np.ndarray, caches, grads: dict) -> np.ndarray:
    d = dy
    for i, (c_conv, c_bn, c_relu) in zip((2, 1), reversed(caches)):
        d = ad.relu_backward(d, c_relu)
        d, dscale, dshift = ad.batchnorm1d_backward(d, c_bn)
        grads[f"{prefix}.bn{i}.scale"] = dscale
        grads[f"{prefix}.bn{i}.shift"] = dshift
        d, dw, _ = ad.conv1d_backward(d, c_conv)
        grads[f"{prefix}.conv{i}.weight"] = dw
    return d


def _mlp(params: ModelParams, prefix: str, z: np.ndarray):
    h, c1 = ad.dense(z, params[f"{prefix}.fc1.weight"], params[f"{prefix}.fc1.bias"])
    h, cr = ad.relu(h)
    out, c2 = ad.dense(h, params[f"{prefix}.fc2.weight"], params[f"{prefix}.fc2.bias"])
    return out, (c1, cr, c2)


def _mlp_backward(prefix: str, dout: np.ndarray, cache, grads: dict) -> np.ndarray:
    c1, cr, c2 = cache
    dh, dw2, db2 = ad.dense_backward(dout, c2)
    dh = ad.relu_backward(dh, cr)
    dz, dw1, db1 = ad.dense_backward(dh, c1)
    for name, g in ((f"{prefix}.fc1.weight", dw1), (f"{prefix}.fc1.bias", db1),
                    (f"{prefix}.fc2.weight", dw2), (f"{prefix}.fc2.bias", db2)):
        grads[name] = grads[name] + g if name in grads else g
    return dz


def channel_attention(params: ModelParams, prefix: str, f: np.ndarray):
    """Returns the gated map, the cache and the per-channel gate ``w`` (B, C)."""
    z_avg, c_avg = ad.global_avgpool(f)
    z_max, c_max = ad.global_maxpool(f)
    a_avg, c_mlp_avg = _mlp(params, prefix, z_avg)
    a_max, c_mlp_max = _mlp(params, prefix, z_max)
    w, c_sig = ad.sigmoid(a_avg + a_max)
    out, c_scale = ad.channel_scale(f, w)
    return out, (c_avg, c_max, c_mlp_avg, c_mlp_max, c_sig, c_scale), w


def _attention_backward(prefix: str, dout: np.ndarray, cache, grads: dict) -> np.ndarray:
    c_avg, c_max, c_mlp_avg, c_mlp_max, c_sig, c_scale = cache
    df, dw = ad.channel_scale_backward(dout, c_scale)
    da = ad.sigmoid_backward(dw, c_sig)
    dz_avg = _mlp_backward(prefix, da, c_mlp_avg, grads)
    dz_max = _mlp_backward(prefix, da, c_mlp_max, grads)
    df = df + ad.global_avgpool_backward(dz_avg, c_avg)
    df = df + ad.global_maxpool_backward(dz_max, c_max)
    return df


# ---------------------------------------------------------------- whole network


@dataclass
class Trace:
    """Activations cached by :func:`forward` for :func:`backward`."""

    cfg: NetConfig
    train: bool
    enc: list = field(default_factory=list)
    bottleneck: object = None
    dec: list = field(default_factory=list)
    head: object = None
    softmax: object = None
    attention: dict = field(default_factory=dict)
    lengths: list = field(default_factory=list)  # encoder inputs, then bottleneck input
    dec_lengths: list = field(default_factory=list)


def forward(params: ModelParams, x: np.ndarray, cfg: NetConfig, *, train: bool = False):
    """Class probabilities ``(B, n_classes, L)`` plus the trace for backward.

    In training mode batch statistics are used and the running statistics in
    ``params`` are updated in place.
    """
    if x.ndim != 3 or x.shape[1] != cfg.in_channels or x.shape[2] % (2 ** cfg.depth):
        raise ShapeError(f"forward: input {x.shape} for {cfg.in_channels} channels, depth {cfg.depth}")
    tr = Trace(cfg=cfg, train=train)
    skips = []
    h = x
    for s in range(cfg.depth):
        name = f"enc{s + 1}"
        tr.lengths.append(h.shape[2])
        f, c_blk = _conv_block(params, name, h, cfg, train)
        g, c_att, w = channel_attention(params, f"{name}.att", f)
        tr.attention[name] = w
        h, c_pool = ad.maxpool1d(g, 2)
        skips.append(g)
        tr.enc.append((c_blk, c_att, c_pool))
    tr.lengths.append(h.shape[2])
    h, tr.bottleneck = _conv_block(params, "bottleneck", h, cfg, train)
    for s in reversed(range(cfg.depth)):
        name = f"dec{s + 1}"
        u, c_up = ad.upsample_nearest(h, 2)
        cat, c_cat = ad.concat_channels(u, skips[s])
        h, c_blk = _conv_block(params, name, cat, cfg, train)
        tr.dec.append((c_up, c_cat, c_blk))
        tr.dec_lengths.append(h.shape[2])
    z, tr.head = ad.conv1d(h, params["head.weight"], params["head.bias"])
    p, tr.softmax = ad.softmax_channel(z)
    return p, tr


def backward(params: ModelParams, tr: Trace, dp: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss w.r.t. every trainable parameter, given dL/dP."""
    cfg = tr.cfg
    grads: dict[str, np.ndarray] = {}
    dz = ad.softmax_channel_backward(dp, tr.softmax)
    dh, grads["head.weight"], grads["head.bias"] = ad.conv1d_backward(dz, tr.head)
    dskips: list = [None] * cfg.depth
    # tr.dec is stored deepest-first; walk it from dec1 inward
    for s, (c_up, c_cat, c_blk) in zip(range(cfg.depth), reversed(tr.dec)):
        dcat = _conv_block_backward(f"dec{s + 1}", dh, c_blk, grads)
        du, dskips[s] = ad.concat_channels_backward(dcat, c_cat)
        dh = ad.upsample_nearest_backward(du, c_up)
    dh = _conv_block_backward("bottleneck", dh, tr.bottleneck, grads)
    for s in reversed(range(cfg.depth)):
        name = f"enc{s + 1}"
        c_blk, c_att, c_pool = tr.enc[s]
        dg = ad.maxpool1d_backward(dh, c_pool) + dskips[s]
        df = _attention_backward(f"{name}.att", dg, c_att, grads)
        dh = _conv_block_backward(name, df, c_blk, grads)
    return grads


def predict_labels(p: np.ndarray) -> np.ndarray:
    """Per-position argmax over the class axis; ties go to the lowest class."""
    return np.argmax(p, axis=-2).astype(np.uint8)
