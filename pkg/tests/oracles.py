"""Independent reference computations used to check the fast paths.

Nothing here imports the code under test's algorithms; each oracle is the
slow, obvious version.
"""
from __future__ import annotations

import bisect
import itertools
from fractions import Fraction

import numpy as np

from femseg.volume import LabelMask, Volume


def finite_difference(f, arrays, h=1e-5, indices=None):
    """Central differences of scalar ``f()`` w.r.t. entries of ``arrays`` (mutated in place).

    ``indices`` maps array position -> iterable of flat indices; default is all.
    Returns a list of gradient arrays (flat, only requested entries filled).
    """
    grads = []
    for k, a in enumerate(arrays):
        g = np.zeros(a.size)
        flat = a.reshape(-1)
        idx = range(a.size) if indices is None else indices[k]
        for i in idx:
            old = flat[i]
            flat[i] = old + h
            fp = f()
            flat[i] = old - h
            fm = f()
            flat[i] = old
            g[i] = (fp - fm) / (2 * h)
        grads.append(g)
    return grads


def rel_error(a, b) -> float:
    a, b = np.ravel(a), np.ravel(b)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / scale)


def naive_conv3d(x, w, b=None, stride=1, padding=0):
    """Direct six-fold loop cross-correlation."""
    n, ci, Z, Y, X = x.shape
    co, _, kz, ky, kx = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding), (padding, padding)))
    oz = (Z + 2 * padding - kz) // stride + 1
    oy = (Y + 2 * padding - ky) // stride + 1
    ox = (X + 2 * padding - kx) // stride + 1
    out = np.zeros((n, co, oz, oy, ox))
    for i, j, l in itertools.product(range(oz), range(oy), range(ox)):
        win = xp[:, :, i * stride : i * stride + kz, j * stride : j * stride + ky, l * stride : l * stride + kx]
        out[:, :, i, j, l] = np.einsum("ncabd,ocabd->no", win, w)
    if b is not None:
        out += b.reshape(1, -1, 1, 1, 1)
    return out


def otsu_bruteforce(values, bins):
    """Lowest interior bin edge maximizing between-class variance, exact rationals.

    Histogram over [min, max] with bins closed on the left (last bin closed on
    both ends); class means use bin centres.
    """
    v = np.asarray(values, dtype=np.float64).ravel()
    lo, hi = v.min(), v.max()
    edges = np.linspace(lo, hi, bins + 1)
    counts = [0] * bins
    for x in v:
        # bin k holds edges[k] <= x < edges[k+1]; the last bin also takes x == hi
        k = bisect.bisect_right(edges, x) - 1
        counts[min(k, bins - 1)] += 1
    best, best_k = None, None
    for k in range(1, bins):
        n0 = sum(counts[:k])
        n1 = sum(counts[k:])
        if n0 == 0 or n1 == 0:
            continue
        m0 = Fraction(sum(c * (i + Fraction(1, 2)) for i, c in enumerate(counts[:k])), n0)
        m1 = Fraction(sum(c * (i + k + Fraction(1, 2)) for i, c in enumerate(counts[k:])), n1)
        n = n0 + n1
        var_between = Fraction(n0, n) * Fraction(n1, n) * (m0 - m1) ** 2
        if best is None or var_between > best:
            best, best_k = var_between, k
    return best_k


def surface_set(mask):
    """Foreground voxels with a background or out-of-grid face neighbour."""
    m = np.asarray(mask).astype(bool)
    out = []
    for z, y, x in zip(*np.nonzero(m)):
        for dz, dy, dx in ((1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)):
            q = (z + dz, y + dy, x + dx)
            if not all(0 <= c < s for c, s in zip(q, m.shape)) or not m[q]:
                out.append((z, y, x))
                break
    return np.array(out, dtype=np.int64).reshape(-1, 3)


def hd95_bruteforce(a, b, spacing):
    sa, sb = surface_set(a), surface_set(b)
    sp = np.asarray(spacing, dtype=np.float64)
    pa, pb = sa * sp, sb * sp
    a_to_b = np.full(len(pa), np.inf)
    b_to_a = np.full(len(pb), np.inf)
    # all pairs, in row blocks to bound memory
    for i in range(0, len(pa), 512):
        d = np.sqrt(((pa[i : i + 512, None, :] - pb[None, :, :]) ** 2).sum(-1))
        a_to_b[i : i + 512] = d.min(axis=1)
        b_to_a = np.minimum(b_to_a, d.min(axis=0))
    return max(np.percentile(a_to_b, 95), np.percentile(b_to_a, 95))


def dice_by_sets(a, b):
    A = {tuple(p) for p in np.argwhere(a)}
    B = {tuple(p) for p in np.argwhere(b)}
    if not A and not B:
        return 1.0
    return 2 * len(A & B) / (len(A) + len(B))


def adam_scalar(p, grads, lr=1e-4, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        p = p - lr * (m / (1 - b1**t)) / ((v / (1 - b2**t)) ** 0.5 + eps)
    return p


def unet_param_count(depth, base, convs=2, c_in=1, classes=2):
    """Closed-form trainable-parameter total, layer by layer."""
    def conv(ci, co, k):
        return co * ci * k**3 + co

    def bn(c):
        return 2 * c

    total = 0
    ch = [base * 2**i for i in range(depth + 1)]
    prev = c_in
    for s in range(depth + 1):
        for _ in range(convs):
            total += conv(prev, ch[s], 3) + bn(ch[s])
            prev = ch[s]
    for s in reversed(range(depth)):
        total += ch[s + 1] * ch[s] * 8 + ch[s]  # transposed conv 2^3
        prev = 2 * ch[s]
        for _ in range(convs):
            total += conv(prev, ch[s], 3) + bn(ch[s])
            prev = ch[s]
    return total + conv(ch[0], classes, 1)


class OracleNet:
    """Stub that reports normalized intensity 1.0 as certain foreground."""

    def predict_proba(self, batch):
        return (batch[:, 0] > 0.7).astype(np.float32)


def oracle_case(rng, dims=None):
    dims = dims or tuple(int(d) for d in rng.integers(6, 40, size=3))
    img = rng.uniform(0.0, 0.4, size=dims)
    img.flat[0] = 0.0
    truth = np.zeros(dims, np.uint8)
    lo = [int(rng.integers(0, d - 2)) for d in dims]
    hi = [int(rng.integers(l + 1, d + 1)) for l, d in zip(lo, dims)]
    truth[tuple(slice(a, b) for a, b in zip(lo, hi))] = 1
    truth |= (rng.random(dims) < 0.01).astype(np.uint8)
    img[truth.astype(bool)] = 1.0
    spacing = tuple(rng.uniform(0.5, 2.0, size=3))
    return Volume(img, spacing), LabelMask(truth, spacing)
