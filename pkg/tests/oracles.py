"""Independent slow reference implementations used as test oracles.

Nothing here imports the package's numeric code; each function is written
from the definition with explicit loops.
"""
import itertools
import math

import numpy as np


def naive_conv1d(x, w, b, stride, groups):
    B, cin, L = x.shape
    cout, cin_g, k = w.shape
    cout_g = cout // groups
    lout = (L - k) // stride + 1
    out = np.zeros((B, cout, lout))
    for n in range(B):
        for o in range(cout):
            g = o // cout_g
            for t in range(lout):
                acc = 0.0 if b is None else b[o]
                for c in range(cin_g):
                    for j in range(k):
                        acc += w[o, c, j] * x[n, g * cin_g + c, t * stride + j]
                out[n, o, t] = acc
    return out


def naive_linear(x, w, b):
    out = np.zeros((x.shape[0], w.shape[0]))
    for n in range(x.shape[0]):
        for o in range(w.shape[0]):
            out[n, o] = sum(w[o, i] * x[n, i] for i in range(x.shape[1])) + b[o]
    return out


def brute_ecod(X):
    """ECOD by counting, one entry at a time."""
    X = np.asarray(X, dtype=float)
    M, p = X.shape
    o_l = np.zeros((M, p))
    o_r = np.zeros((M, p))
    skew_neg = []
    for j in range(p):
        col = X[:, j]
        mu = sum(col) / M
        m2 = sum((v - mu) ** 2 for v in col) / M
        m3 = sum((v - mu) ** 3 for v in col) / M
        skew_neg.append(m2 > 0 and m3 / m2 ** 1.5 < -1e-9)
        # all-pairs comparison counts, no sorting
        le = (col[None, :] <= col[:, None]).sum(axis=1)
        ge = (col[None, :] >= col[:, None]).sum(axis=1)
        for i in range(M):
            o_l[i, j] = -math.log(le[i] / M)
            o_r[i, j] = -math.log(ge[i] / M)
    out = []
    for i in range(M):
        auto = sum(o_l[i, j] if skew_neg[j] else o_r[i, j] for j in range(p))
        out.append(max(sum(o_l[i]), sum(o_r[i]), auto))
    return np.array(out)


def pair_count_auc(scores, truth):
    pos = [s for s, t in zip(scores, truth) if t == 1]
    neg = [s for s, t in zip(scores, truth) if t == 0]
    total = 0.0
    for a in pos:
        for b in neg:
            total += 1.0 if a > b else 0.5 if a == b else 0.0
    return total / (len(pos) * len(neg))


def enumerate_wilcoxon(a, b):
    """Exact two-sided p by enumerating every sign assignment."""
    d = [x - y for x, y in zip(a, b) if x != y]
    absd = sorted(abs(v) for v in d)
    ranks = {}
    for v in set(absd):
        idx = [i + 1 for i, u in enumerate(absd) if u == v]
        ranks[v] = sum(idx) / len(idx)
    r = [ranks[abs(v)] for v in d]
    w_plus = sum(ri for ri, v in zip(r, d) if v > 0)
    w_minus = sum(ri for ri, v in zip(r, d) if v < 0)
    n = len(d)
    ge = le = 0
    for signs in itertools.product((0, 1), repeat=n):
        w = sum(ri for ri, s in zip(r, signs) if s)
        ge += w >= w_plus - 1e-9
        le += w <= w_plus + 1e-9
    p = min(1.0, 2 * min(ge, le) / 2 ** n)
    return min(w_plus, w_minus), p


def dtft_gain_db(h, f, fs):
    re = sum(hk * math.cos(2 * math.pi * f * k / fs) for k, hk in enumerate(h))
    im = sum(hk * math.sin(2 * math.pi * f * k / fs) for k, hk in enumerate(h))
    return 20 * math.log10(math.hypot(re, im))


def biquad_gain_db(b, a, f, fs):
    z = complex(math.cos(2 * math.pi * f / fs), math.sin(2 * math.pi * f / fs))
    num = sum(bk * z ** -k for k, bk in enumerate(b))
    den = sum(ak * z ** -k for k, ak in enumerate(a))
    return 20 * math.log10(abs(num / den))


def rms(x):
    return float(np.sqrt(np.mean(np.square(x))))
