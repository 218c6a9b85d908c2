"""Independent reference implementations used as test oracles.

Everything here is written directly from the model definition with plain
loops and dense arrays; nothing is imported from the package except data
containers, so agreement with the package is a genuine cross-check.
"""

import math

import numpy as np


def reference_operator(h_dense, w=None):
    """Hbar built entry by entry with the 0^-p := 0 convention."""
    n, m = h_dense.shape
    w = np.ones(m) if w is None else np.asarray(w, dtype=float)
    dv = [sum(h_dense[v, e] * w[e] for e in range(m)) for v in range(n)]
    de = [sum(h_dense[v, e] for v in range(n)) for e in range(m)]
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if dv[i] == 0 or dv[j] == 0:
                continue
            acc = 0.0
            for e in range(m):
                if de[e] == 0:
                    continue
                acc += h_dense[i, e] * w[e] * h_dense[j, e] / de[e]
            out[i, j] = acc / math.sqrt(dv[i] * dv[j])
    return out


def reference_probs(w0, w1, h_dense, x, w=None):
    hb = reference_operator(h_dense, w)
    z = hb @ np.maximum(hb @ x @ w0, 0.0) @ w1
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def reference_loss(w0, w1, h_dense, x, target, label):
    p = reference_probs(w0, w1, h_dense, x)[target, label]
    return -math.log(max(p, 1e-12))


def fd_gradient(w0, w1, h_dense, x, target, label, step=1e-5):
    """Central differences of the target loss over the target's incidence row."""
    g = np.zeros(h_dense.shape[1])
    for e in range(h_dense.shape[1]):
        hp, hm = h_dense.copy(), h_dense.copy()
        hp[target, e] += step
        hm[target, e] -= step
        g[e] = (reference_loss(w0, w1, hp, x, target, label)
                - reference_loss(w0, w1, hm, x, target, label)) / (2 * step)
    return g


def flip_delta(w0, w1, h_dense, x, target, label, edge):
    """L(entry=1) - L(entry=0) at coordinate (target, edge); the exact IG limit."""
    h1, h0 = h_dense.copy(), h_dense.copy()
    h1[target, edge] = 1.0
    h0[target, edge] = 0.0
    return (reference_loss(w0, w1, h1, x, target, label)
            - reference_loss(w0, w1, h0, x, target, label))


def best_single_flip(w0, w1, h_dense, x, target, label):
    """Exhaustive search: (edge, loss increase) of the most damaging single flip."""
    base = reference_loss(w0, w1, h_dense, x, target, label)
    best = (None, -np.inf)
    for e in range(h_dense.shape[1]):
        hf = h_dense.copy()
        hf[target, e] = 1.0 - hf[target, e]
        gain = reference_loss(w0, w1, hf, x, target, label) - base
        if gain > best[1]:
            best = (e, gain)
    return best


def knn_edges(points, k):
    """Brute force: node i plus its k-1 nearest others, ties to the lower index."""
    pts = np.asarray(points, dtype=float).reshape(len(points), -1)
    edges = []
    for i in range(len(pts)):
        others = sorted((float(np.sum((pts[i] - pts[j]) ** 2)), j)
                        for j in range(len(pts)) if j != i)
        edges.append(sorted([i] + [j for _, j in others[:k - 1]]))
    return edges


def eps_edges(points, eps):
    pts = np.asarray(points, dtype=float).reshape(len(points), -1)
    return [sorted({i} | {j for j in range(len(pts))
                          if np.linalg.norm(pts[i] - pts[j]) <= eps})
            for i in range(len(pts))]


def random_instance(seed, n=12, m=8, dim=5, classes=3, fractional=True):
    """Random (w0, w1, H, X) toy problem; every row and column has some mass."""
    rng = np.random.default_rng(seed)
    if fractional:
        h = rng.uniform(0.05, 1.0, size=(n, m)) * (rng.random((n, m)) < 0.6)
    else:
        h = (rng.random((n, m)) < 0.35).astype(float)
    for v in range(n):
        if not h[v].any():
            h[v, rng.integers(m)] = 1.0
    for e in range(m):
        if not h[:, e].any():
            h[rng.integers(n), e] = 1.0
    x = rng.standard_normal((n, dim))
    w0 = rng.standard_normal((dim, 6))
    w1 = rng.standard_normal((6, classes))
    return w0, w1, h, x
