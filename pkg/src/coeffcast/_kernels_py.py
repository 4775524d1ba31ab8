"""Pure numpy versions of the compiled kernels, used when the extension is absent."""

import numpy as np


def discrete_frechet(a, b):
    dist = np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(-1))
    n, m = dist.shape
    ca = np.empty((n, m))
    ca[:, 0] = np.maximum.accumulate(dist[:, 0])
    ca[0, :] = np.maximum.accumulate(dist[0, :])
    # sweep anti-diagonals; each cell depends only on the previous two diagonals
    for s in range(2, n + m - 1):
        i = np.arange(max(1, s - m + 1), min(n - 1, s - 1) + 1)
        if i.size == 0:
            continue
        j = s - i
        best = np.minimum(np.minimum(ca[i - 1, j], ca[i, j - 1]), ca[i - 1, j - 1])
        ca[i, j] = np.maximum(best, dist[i, j])
    return float(ca[-1, -1])


def nearest_code(z, codebook):
    out = np.empty(z.shape[0], dtype=np.int64)
    step = max(1, (1 << 22) // max(1, codebook.shape[0] * codebook.shape[1]))
    for s in range(0, z.shape[0], step):
        d = ((z[s:s + step, None, :] - codebook[None, :, :]) ** 2).sum(-1)
        out[s:s + step] = d.argmin(axis=1)  # first minimum wins ties
    return out


def causal_smooth(x, weights):
    T = x.shape[0]
    w = weights.shape[0]
    out = np.zeros_like(x, dtype=np.float64)
    t = np.arange(T)
    for k in range(w):
        src = np.maximum(t - w + 1 + k, 0)
        out += weights[k] * x[src]
    return out
