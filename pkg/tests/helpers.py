"""Shared test oracles, independent of the library's own gradient machinery."""

import numpy as np


def finite_difference(f, arrays, h=1e-5):
    """Central finite-difference gradients of scalar ``f(arrays)``.

    Perturbs every element of every array in place and restores it, so ``f``
    must re-read ``arrays`` on each call.
    """
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        flat, gf = a.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f(arrays)
            flat[i] = orig - h
            fm = f(arrays)
            flat[i] = orig
            gf[i] = (fp - fm) / (2.0 * h)
        grads.append(g)
    return grads


def max_rel_error(analytic, numeric):
    """Elementwise |a - n| / max(1, |a|, |n|), reduced to the worst case."""
    a, n = np.asarray(analytic), np.asarray(numeric)
    denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(n)))
    return float((np.abs(a - n) / denom).max()) if a.size else 0.0


def greedy_farthest_points(coords, k, start):
    """Brute-force greedy max-min point selection (squared distances)."""
    coords = np.asarray(coords, dtype=np.float64)
    chosen = [int(start)]
    for _ in range(k - 1):
        best_idx, best_dist = -1, -np.inf
        for i in range(coords.shape[0]):
            d = min(((coords[i] - coords[j]) ** 2).sum() for j in chosen)
            if d > best_dist:
                best_idx, best_dist = i, d
        chosen.append(best_idx)
    return np.asarray(chosen, dtype=np.int64)


def brute_ball_neighbors(center, coords, radius, max_k):
    """Reference ball query: in-radius indices ascending, padded per the contract."""
    coords = np.asarray(coords, dtype=np.float64)
    d2 = ((coords - center) ** 2).sum(axis=1)
    inside = np.flatnonzero(d2 <= radius * radius)
    if inside.size == 0:
        return np.full(max_k, int(np.argmin(d2)), dtype=np.int64)
    picked = inside[:max_k]
    if picked.size < max_k:
        pad = np.full(max_k - picked.size, picked[0], dtype=np.int64)
        picked = np.concatenate([picked, pad])
    return picked.astype(np.int64)
