"""Slow, obviously-correct reference implementations used only by the tests.

Nothing here imports the package; each oracle is a direct transcription of a
definition with plain loops.
"""

import cmath
import math

import numpy as np


def naive_dft(x):
    """X[k] = sum_n x[n] exp(-2j pi k n / L) for every k (full spectrum)."""
    L = len(x)
    return np.array([sum(x[n] * cmath.exp(-2j * math.pi * k * n / L) for n in range(L)) for k in range(L)])


def naive_dft_matrix_form(x):
    """Same definition, vectorised over a trailing batch with an exact integer phase table."""
    x = np.asarray(x)
    L = x.shape[-1]
    kn = np.outer(np.arange(L), np.arange(L)) % L
    W = np.exp(-2j * np.pi * kn / L)
    return x @ W.T


def naive_idft(X):
    L = len(X)
    return np.array([sum(X[k] * cmath.exp(2j * math.pi * k * n / L) for k in range(L)) / L for n in range(L)])


def circular_convolution(x, h):
    """y[n] = sum_m h[m] x[(n - m) mod L]."""
    L = len(x)
    return np.array([sum(h[m] * x[(n - m) % L] for m in range(L)) for n in range(L)])


def brute_fps(points, alpha, m):
    """Farthest point sampling with explicit loops: seed row 0, ties to the lowest index."""
    pts = [[float(a) * float(v) for a, v in zip(alpha, row)] for row in points]
    chosen = [0]
    while len(chosen) < m:
        best, best_d = None, -1.0
        for i, p in enumerate(pts):
            if i in chosen:
                continue
            d = min(sum((p[j] - pts[c][j]) ** 2 for j in range(len(p))) for c in chosen)
            if d > best_d:
                best, best_d = i, d
        chosen.append(best)
    return chosen


def brute_knn(query, features, K):
    """Sort every row by (squared distance, row index) and keep the first K."""
    out = []
    for q in query:
        keyed = sorted((float(np.sum((np.asarray(f) - q) ** 2)), i) for i, f in enumerate(features))
        out.append([i for _, i in keyed[:K]])
    return out


def adam_trace(w0, grad_fn, steps, lr, b1=0.9, b2=0.999, eps=1e-8, wd=0.0):
    """Scalar-by-scalar AdamW, decay applied before the Adam update."""
    w = list(w0)
    m = [0.0] * len(w)
    v = [0.0] * len(w)
    trace = []
    for t in range(1, steps + 1):
        g = grad_fn(w)
        for i in range(len(w)):
            m[i] = b1 * m[i] + (1 - b1) * g[i]
            v[i] = b2 * v[i] + (1 - b2) * g[i] ** 2
            w[i] = w[i] - lr * wd * w[i]
            mh = m[i] / (1 - b1 ** t)
            vh = v[i] / (1 - b2 ** t)
            w[i] = w[i] - lr * mh / (math.sqrt(vh) + eps)
        trace.append(list(w))
    return trace


def recompute_fps(points, alpha, m):
    """FPS that recomputes every candidate's distance to the whole chosen set each round."""
    pts = np.asarray(points, dtype=np.float64) * np.asarray(alpha, dtype=np.float64)
    chosen = [0]
    while len(chosen) < m:
        diff = pts[:, None, :] - pts[chosen][None, :, :]
        d = np.min(np.sum(diff * diff, axis=-1), axis=1)
        d[chosen] = -np.inf
        chosen.append(int(np.argmax(d)))  # argmax returns the first maximum
    return chosen


def exhaustive_knn(query, features, K):
    """Direct squared distances to every row, ranked by (distance, row index)."""
    f = np.asarray(features, dtype=np.float64)
    out = []
    for q in np.asarray(query, dtype=np.float64):
        d = np.sum((f - q) ** 2, axis=1)
        order = np.lexsort((np.arange(len(f)), d))
        out.append(order[:K].tolist())
    return out
