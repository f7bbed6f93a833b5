"""Independent reference computations shared by the unit and acceptance tests."""

import numpy as np


def central_diff(f, x, h=1e-6):
    """Central-difference gradient of scalar f at flat vector x."""
    x = np.asarray(x, float).copy()
    g = np.empty_like(x)
    for i in range(x.size):
        old = x[i]
        x[i] = old + h
        fp = f(x)
        x[i] = old - h
        fm = f(x)
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b, floor=1e-8):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), np.linalg.norm(a), floor))


def mlp_forward_loops(W, b, acts, x):
    """Plain Python re-implementation of a dense forward pass, one unit at a time."""
    a = [float(v) for v in x]
    for Wl, bl, act in zip(W, b, acts):
        out = []
        for j in range(Wl.shape[1]):
            z = bl[j] + sum(a[i] * Wl[i, j] for i in range(len(a)))
            out.append(np.tanh(z) if act == "tanh" else (max(z, 0.0) if act == "relu" else z))
        a = out
    return np.array(a)


def min_norm_grid(g1, g2, step=1e-6, stride=1000):
    """Smallest ||nu g1 + (1 - nu) g2|| over the grid nu = k * step, k = 0..1/step.

    The squared norm is convex in nu, so the grid minimiser lies within one
    coarse stride of the coarse-grid argmin; the fine grid is scanned only
    there. The reported value is the norm recomputed directly at the grid
    point, not the expanded quadratic.
    """
    g1, g2 = np.asarray(g1, float), np.asarray(g2, float)
    n = int(round(1.0 / step))
    d = g1 - g2
    a, b, c = d @ d, 2 * (g2 @ d), g2 @ g2

    def sq(k):
        nu = k * step
        return a * nu * nu + b * nu + c

    coarse = np.unique(np.r_[np.arange(0, n + 1, stride), n])
    kc = int(coarse[np.argmin(sq(coarse))])
    fine = np.arange(max(0, kc - stride), min(n, kc + stride) + 1)
    kf = int(fine[np.argmin(sq(fine))])
    cands = range(max(0, kf - 2), min(n, kf + 2) + 1)
    vals = [(float(np.linalg.norm(g2 + (k * step) * d)), k * step) for k in cands]
    return min(vals)
