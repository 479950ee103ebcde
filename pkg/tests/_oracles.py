"""Brute-force reference implementations used by the metric tests."""

from __future__ import annotations

import itertools

import numpy as np


def iou(a, b) -> float:
    inter = len(set(range(a[0], a[1])) & set(range(b[0], b[1])))
    union = len(set(range(a[0], a[1])) | set(range(b[0], b[1])))
    return inter / union if union else 0.0


def best_matching(pred, gt, thr) -> tuple[int, float]:
    """Exhaustive one-to-one matching: most pairs, then largest total IoU."""
    best = (0, 0.0)
    n = len(pred)
    for k in range(min(n, len(gt)), 0, -1):
        for ps in itertools.combinations(range(n), k):
            for gs in itertools.permutations(range(len(gt)), k):
                ok = True
                tot = 0.0
                for i, j in zip(ps, gs):
                    v = iou(pred[i], gt[j])
                    if pred[i][2] != gt[j][2] or not v > thr:
                        ok = False
                        break
                    tot += v
                if ok and (k, tot) > best:
                    best = (k, tot)
        if best[0] == k:
            return best
    return best


def f1(m, n_pred, n_gt) -> float:
    p = m / n_pred if n_pred else 0.0
    r = m / n_gt if n_gt else 0.0
    return 2 * p * r / (p + r) if p + r else 0.0


def mode_filter(labels, window) -> list:
    half = window // 2
    out = []
    for i in range(len(labels)):
        win = list(labels[max(0, i - half):i + half + 1])
        counts = {c: win.count(c) for c in set(win)}
        top = max(counts.values())
        winners = [c for c, n in counts.items() if n == top]
        out.append(winners[0] if len(winners) == 1 else labels[i])
    return out


def random_instance(rng: np.random.Generator, L: int = 60, max_events: int = 4):
    """Disjoint ground-truth intervals plus (possibly overlapping) predictions."""
    gt = []
    pos = int(rng.integers(0, 5))
    for _ in range(int(rng.integers(0, max_events + 1))):
        s = pos + int(rng.integers(0, 6))
        e = s + int(rng.integers(2, 12))
        if e > L:
            break
        gt.append((s, e, int(rng.integers(1, 4))))
        pos = e
    pred = []
    for _ in range(int(rng.integers(0, max_events + 1))):
        s = int(rng.integers(0, L - 2))
        e = min(L, s + int(rng.integers(2, 14)))
        pred.append((s, e, int(rng.integers(1, 4))))
    return pred, gt
