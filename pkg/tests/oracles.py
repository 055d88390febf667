"""Independent reference implementations used as test oracles.

Nothing here imports the package under test.
"""

from fractions import Fraction

import numpy as np


def ibm_word_value(word):
    """IBM System/360 single precision, evaluated with exact rationals."""
    sign = -1 if word >> 31 else 1
    exponent = (word >> 24) & 0x7F
    fraction = word & 0xFFFFFF
    return float(sign * Fraction(fraction, 1 << 24) * Fraction(16) ** (exponent - 64))


def loop_squared_distance(x, m):
    total = 0.0
    for a, b in zip(x, m):
        total += (float(a) - float(b)) ** 2
    return total


def lloyd(x, centroids, max_iters):
    """Plain full-batch Lloyd iteration.

    Returns per-iteration objectives (measured against the centroids used for
    that assignment), the centroids after each update, and the final labels.
    Stops once an assignment repeats. Empty clusters take the row farthest
    from its own centroid.
    """
    x = np.asarray(x, dtype=np.float64)
    m = np.array(centroids, dtype=np.float64)
    k = len(m)
    objectives, trail = [], []
    labels = None
    for _ in range(max_iters):
        d = ((x[:, None, :] - m[None, :, :]) ** 2).sum(axis=2)
        new_labels = d.argmin(axis=1)
        best = d[np.arange(len(x)), new_labels]
        objectives.append(float(best.sum()))
        repeat = labels is not None and np.array_equal(new_labels, labels)
        labels = new_labels
        nxt = m.copy()
        for j in range(k):
            members = x[labels == j]
            if len(members):
                nxt[j] = members.mean(axis=0)
        far = best.copy()
        for j in range(k):
            if not (labels == j).any():
                r = int(np.argmax(far))
                nxt[j] = x[r]
                far = np.minimum(far, ((x - x[r]) ** 2).sum(axis=1))
        m = nxt
        trail.append(m.copy())
        if repeat:
            break
    return objectives, trail, labels
