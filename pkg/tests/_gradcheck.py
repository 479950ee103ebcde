"""Central finite-difference checks for every differentiable op.

Each case builds random inputs, a forward returning ``(y, cache)`` and a
backward mapping ``(dy, cache)`` to input gradients. The scalar probed is
``sum(R * y)`` for a fixed random ``R``. The numeric side always runs in
float64 (the "shadow"); the analytic side runs in the dtype under test.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from potholenet import autodiff as ad
from potholenet import losses, segnet

H_OP = 1e-3
# ReLU/max-pool kinks sit within 1e-3 of some pre-activation in a full network,
# and log(p) near small p has large third derivatives, so network and loss
# checks use a smaller step (see the decisions ledger).
H_NET = 1e-5


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    den = max(np.linalg.norm(a), np.linalg.norm(b), 1e-30)
    return float(np.linalg.norm(a - b) / den)


def numeric_grad(f: Callable[[dict], float], inputs: dict, name: str, h: float) -> np.ndarray:
    x = inputs[name]
    g = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f(inputs)
        flat[i] = old - h
        fm = f(inputs)
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * h)
    return g


@dataclass
class Case:
    inputs: dict
    forward: Callable  # (**inputs) -> (y, cache)
    backward: Callable  # (dy, cache) -> {name: grad}
    h: float = H_OP
    scalar: bool = False  # forward already returns a scalar loss


def check_case(case: Case, dtype) -> float:
    """Worst relative error over the case's inputs for analytic grads in ``dtype``."""
    shadow = {k: np.array(v, dtype=np.float64) for k, v in case.inputs.items()}
    y64, _ = case.forward(**shadow)
    rng = np.random.default_rng(12345)
    r = None if case.scalar else rng.standard_normal(np.shape(y64))

    def f(inp):
        y, _ = case.forward(**inp)
        return float(y) if case.scalar else float(np.sum(r * y))

    typed = {k: np.array(v, dtype=dtype) for k, v in case.inputs.items()}
    y, cache = case.forward(**typed)
    dy = None if case.scalar else r.astype(dtype)
    grads = case.backward(dy, cache)
    worst = 0.0
    for name, g in grads.items():
        num = numeric_grad(f, shadow, name, case.h)
        worst = max(worst, rel_err(g, num))
    return worst


# ---------------------------------------------------------------- case builders


def _spread(rng, shape, gap=0.05):
    """Values whose pairwise gaps exceed ``gap`` (keeps max-pools and ReLU off their kinks)."""
    n = int(np.prod(shape))
    vals = (np.arange(n) + 0.5) * gap * rng.choice([-1.0, 1.0], n)
    return rng.permutation(vals).reshape(shape)


def conv1d_case(rng):
    B, C, O = rng.integers(1, 4), rng.integers(1, 4), rng.integers(1, 4)
    k = int(rng.choice([1, 3, 5]))
    L = int(rng.integers(4, 17))
    stride = int(rng.choice([1, 2]))
    inputs = {"x": rng.standard_normal((B, C, L)), "w": rng.standard_normal((O, C, k)),
              "b": rng.standard_normal(O)}
    return Case(
        inputs,
        lambda x, w, b: ad.conv1d(x, w, b, stride=stride),
        lambda dy, c: dict(zip(("x", "w", "b"), ad.conv1d_backward(dy, c))),
    )


def batchnorm_case(rng, train=True):
    B, C, L = rng.integers(1, 4), rng.integers(1, 4), rng.integers(3, 12)
    inputs = {"x": rng.standard_normal((B, C, L)) * 2 + 1,
              "scale": rng.uniform(0.5, 2, C), "shift": rng.standard_normal(C)}
    rm, rv = rng.standard_normal(C), rng.uniform(0.5, 2, C)

    def fwd(x, scale, shift):
        y, cache, _ = ad.batchnorm1d(x, scale, shift, rm, rv, train=train)
        return y, cache

    return Case(inputs, fwd, lambda dy, c: dict(zip(("x", "scale", "shift"), ad.batchnorm1d_backward(dy, c))))


def relu_case(rng):
    shape = (rng.integers(1, 4), rng.integers(1, 4), rng.integers(2, 12))
    x = _spread(rng, shape)
    return Case({"x": x}, ad.relu, lambda dy, m: {"x": ad.relu_backward(dy, m)})


def sigmoid_case(rng):
    shape = (rng.integers(1, 4), rng.integers(1, 5))
    return Case({"x": rng.standard_normal(shape) * 3}, ad.sigmoid,
                lambda dy, y: {"x": ad.sigmoid_backward(dy, y)})


def softmax_case(rng):
    shape = (rng.integers(1, 4), rng.integers(2, 6), rng.integers(1, 8))
    return Case({"x": rng.standard_normal(shape) * 2}, ad.softmax_channel,
                lambda dy, p: {"x": ad.softmax_channel_backward(dy, p)})


def maxpool_case(rng):
    shape = (rng.integers(1, 4), rng.integers(1, 4), 2 * rng.integers(1, 7))
    return Case({"x": _spread(rng, shape)}, lambda x: ad.maxpool1d(x, 2),
                lambda dy, c: {"x": ad.maxpool1d_backward(dy, c)})


def upsample_case(rng):
    shape = (rng.integers(1, 4), rng.integers(1, 4), rng.integers(1, 8))
    return Case({"x": rng.standard_normal(shape)}, lambda x: ad.upsample_nearest(x, 2),
                lambda dy, s: {"x": ad.upsample_nearest_backward(dy, s)})


def concat_case(rng):
    B, L = rng.integers(1, 4), rng.integers(1, 8)
    inputs = {"a": rng.standard_normal((B, rng.integers(1, 4), L)),
              "b": rng.standard_normal((B, rng.integers(1, 4), L))}
    return Case(inputs, ad.concat_channels,
                lambda dy, s: dict(zip(("a", "b"), ad.concat_channels_backward(dy, s))))


def avgpool_case(rng):
    shape = (rng.integers(1, 4), rng.integers(1, 4), rng.integers(1, 10))
    return Case({"x": rng.standard_normal(shape)}, ad.global_avgpool,
                lambda dy, s: {"x": ad.global_avgpool_backward(dy, s)})


def globalmax_case(rng):
    shape = (rng.integers(1, 4), rng.integers(1, 4), rng.integers(1, 10))
    return Case({"x": _spread(rng, shape)}, ad.global_maxpool,
                lambda dy, c: {"x": ad.global_maxpool_backward(dy, c)})


def dense_case(rng):
    B, n, m = rng.integers(1, 4), rng.integers(1, 6), rng.integers(1, 6)
    inputs = {"x": rng.standard_normal((B, n)), "w": rng.standard_normal((m, n)), "b": rng.standard_normal(m)}
    return Case(inputs, ad.dense, lambda dy, c: dict(zip(("x", "w", "b"), ad.dense_backward(dy, c))))


def channel_scale_case(rng):
    B, C, L = rng.integers(1, 4), rng.integers(1, 4), rng.integers(1, 8)
    inputs = {"f": rng.standard_normal((B, C, L)), "w": rng.uniform(0, 1, (B, C))}
    return Case(inputs, ad.channel_scale,
                lambda dy, c: dict(zip(("f", "w"), ad.channel_scale_backward(dy, c))))


def attention_case(rng):
    """The channel-attention gate as one composite op (input features only)."""
    C = int(rng.integers(2, 9))
    cfg = segnet.NetConfig(channels=(C, C + 1), length=8, reduction=2)
    params = segnet.build(cfg, int(rng.integers(0, 1000)))
    B, L = int(rng.integers(1, 3)), int(rng.integers(2, 9))
    f0 = _spread(rng, (B, C, L)) * 3

    def fwd(f):
        p = params.astype(f.dtype)
        out, cache, _ = segnet.channel_attention(p, "enc1.att", f)
        return out, cache

    def bwd(dy, cache):
        grads: dict = {}
        return {"f": segnet._attention_backward("enc1.att", dy, cache, grads)}

    return Case({"f": f0}, fwd, bwd)


def _simplex(rng, B, C, L):
    z = rng.standard_normal((B, C, L))
    p = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)
    return np.clip(p, 0.02, None)


def loss_case(rng, which):
    B, L = int(rng.integers(1, 3)), int(rng.integers(2, 9))
    p = _simplex(rng, B, 4, L)
    y = rng.integers(0, 4, (B, L))
    cfg = losses.LossConfig(class_weights=tuple(rng.uniform(0.5, 2, 4)), gamma=float(rng.choice([0, 1, 2, 2.5])))
    fn = {"focal": losses.focal, "tversky": losses.tversky,
          "combined": lambda p, y, c: losses.combined(p, y, c)[:2]}[which]

    def fwd(p):
        val, grad = fn(p, y, cfg)
        return val, grad

    return Case({"p": p}, fwd, lambda dy, grad: {"p": grad}, h=H_NET, scalar=True)


OP_CASES: dict[str, Callable] = {
    "conv1d": conv1d_case,
    "batchnorm1d_train": lambda rng: batchnorm_case(rng, True),
    "batchnorm1d_eval": lambda rng: batchnorm_case(rng, False),
    "relu": relu_case,
    "sigmoid": sigmoid_case,
    "softmax_channel": softmax_case,
    "maxpool1d": maxpool_case,
    "upsample_nearest": upsample_case,
    "concat_channels": concat_case,
    "global_avgpool": avgpool_case,
    "global_maxpool": globalmax_case,
    "dense": dense_case,
    "channel_scale": channel_scale_case,
    "channel_attention": attention_case,
    "focal": lambda rng: loss_case(rng, "focal"),
    "tversky": lambda rng: loss_case(rng, "tversky"),
    "combined_loss": lambda rng: loss_case(rng, "combined"),
}

TINY_NET = segnet.NetConfig(channels=(2, 3), length=16, kernel_size=3)


def network_error(seed: int, dtype, cfg: segnet.NetConfig = TINY_NET, h: float = H_NET) -> float:
    """Full forward/loss/backward of a tiny network vs f64 finite differences."""
    rng = np.random.default_rng(seed)
    base = segnet.build(cfg, seed).astype(np.float64)
    x = rng.standard_normal((2, cfg.in_channels, cfg.length))
    y = rng.integers(0, cfg.n_classes, (2, cfg.length))
    lcfg = losses.LossConfig(class_weights=(1.0, 2.0, 0.5, 1.5))

    def loss_of(params, xx):
        p, tr = segnet.forward(params, xx, cfg, train=True)
        val, dp, _ = losses.combined(p, y, lcfg)
        return val, dp, tr

    typed = base.astype(dtype)
    _, dp, tr = loss_of(typed, x.astype(dtype))
    grads = segnet.backward(typed, tr, dp)
    num_all, ana_all = [], []
    for name in base.trainable_names():
        arr = base[name]
        flat = arr.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            fp = loss_of(base, x)[0]
            flat[i] = old - h
            fm = loss_of(base, x)[0]
            flat[i] = old
            num_all.append((fp - fm) / (2 * h))
        ana_all.append(np.asarray(grads[name], dtype=np.float64).ravel())
    return rel_err(np.concatenate(ana_all), np.array(num_all))


def op_errors(name: str, n_cases: int = 20, dtype=np.float64, seed: int = 0) -> list[float]:
    build = OP_CASES[name]
    out = []
    for i in range(n_cases):
        rng = np.random.default_rng([seed, i, sum(map(ord, name))])
        out.append(check_case(build(rng), dtype))
    return out
