"""Independent reference implementations used to check the package."""
from __future__ import annotations

from functools import lru_cache

import numpy as np


def levenshtein_recursive(a, b) -> int:
    """Memoised recursion over suffixes; shares no code with the package."""
    a, b = tuple(a), tuple(b)

    @lru_cache(maxsize=None)
    def d(i, j):
        if i == len(a):
            return len(b) - j
        if j == len(b):
            return len(a) - i
        if a[i] == b[j]:
            return d(i + 1, j + 1)
        return 1 + min(d(i + 1, j), d(i, j + 1), d(i + 1, j + 1))

    return d(0, 0)


def cer_oracle(ref: str, hyp: str) -> float:
    ref = " ".join(ref.lower().split())
    hyp = " ".join(hyp.lower().split())
    return 100.0 * levenshtein_recursive(ref, hyp) / len(ref)


def wer_oracle(ref: str, hyp: str) -> float:
    r, h = ref.lower().split(), hyp.lower().split()
    return 100.0 * levenshtein_recursive(r, h) / len(r)


def psr_hand_count(cers, excluded) -> float:
    kept = 0
    hits = 0
    for c, e in zip(cers, excluded):
        if e:
            continue
        kept += 1
        if c >= 50:
            hits += 1
    return 100.0 * hits / kept


def auc_all_thresholds(scores, labels) -> float:
    """Trapezoidal area under the ROC traced by every distinct threshold."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=bool)
    pos, neg = y.sum(), (~y).sum()
    pts = [(0.0, 0.0)]
    for thr in sorted(set(s.tolist()), reverse=True):
        pred = s >= thr
        pts.append(((pred & ~y).sum() / neg, (pred & y).sum() / pos))
    area = 0.0
    for (x0, y0), (x1, y1) in zip(pts, pts[1:]):
        area += (x1 - x0) * (y0 + y1) / 2
    return float(area)


def central_difference(f, x: np.ndarray, index, eps: float) -> float:
    xp = x.copy()
    xm = x.copy()
    xp[index] += eps
    xm[index] -= eps
    return (f(xp) - f(xm)) / (2 * eps)
