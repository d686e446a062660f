"""Independent numerical oracles shared by the test suite.

These deliberately avoid the library's own backward rules: gradients come
from central finite differences, graph expansions from brute-force path
enumeration, AUC from all-pairs comparison.
"""

import numpy as np

FD_H = 1e-5


def finite_difference(f, x, h=FD_H):
    """Central-difference gradient of scalar f at array x."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        xp = x.copy()
        xp[idx] += h
        xm = x.copy()
        xm[idx] -= h
        grad[idx] = (f(xp) - f(xm)) / (2.0 * h)
        it.iternext()
    return grad


def rel_error(analytic, reference):
    analytic = np.asarray(analytic, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    denom = max(np.linalg.norm(reference), 1e-10)
    return np.linalg.norm(analytic - reference) / denom


def pairwise_auc(scores, labels):
    """O(n^2) probability a positive outranks a negative, half credit for ties."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    if len(pos) == 0 or len(neg) == 0:
        raise ValueError("pairwise_auc: need both classes")
    wins = 0.0
    for p in pos:
        for n in neg:
            if p > n:
                wins += 1.0
            elif p == n:
                wins += 0.5
    return wins / (len(pos) * len(neg))
