"""Naive scalar reference implementations.

Written with plain Python lists, loops and the ``math`` module only, directly
from the loss definitions. Nothing here imports the package under test.
"""

import math


def dot(u, v):
    return sum(a * b for a, b in zip(u, v))


def normalize(v):
    n = math.sqrt(dot(v, v))
    return [a / n for a in v]


def softmax_excluding_self(z, i, temp):
    """Returns {j: p_ij} for every j != i."""
    n = len(z)
    logits = {j: dot(z[i], z[j]) / temp for j in range(n) if j != i}
    m = max(logits.values())
    denom = sum(math.exp(v - m) for v in logits.values())
    return {j: math.exp(v - m) / denom for j, v in logits.items()}


def supcon(z, labels, tau, anchors=None):
    n = len(z)
    anchors = range(n) if anchors is None else [i for i in range(n) if anchors[i]]
    total = 0.0
    for i in anchors:
        pos = [j for j in range(n) if j != i and labels[j] == labels[i]]
        denom = sum(math.exp(dot(z[i], z[k]) / tau) for k in range(n) if k != i)
        acc = 0.0
        for j in pos:
            acc += math.log(math.exp(dot(z[i], z[j]) / tau) / denom)
        total += -acc / len(pos)
    return total


def ird(z_past, z_cur, kappa_star, kappa):
    total = 0.0
    for i in range(len(z_cur)):
        p = softmax_excluding_self(z_past, i, kappa_star)
        q = softmax_excluding_self(z_cur, i, kappa)
        total += -sum(p[j] * math.log(q[j]) for j in p)
    return total


def seed(emb_t, emb_s, gamma_t, gamma_s):
    return ird([normalize(r) for r in emb_t], [normalize(r) for r in emb_s], gamma_t, gamma_s)


def mse_rows(cur, past):
    return sum(sum((a - b) ** 2 for a, b in zip(c, p)) for c, p in zip(cur, past)) / len(cur)


def cross_entropy(logits, labels):
    total = 0.0
    for row, y in zip(logits, labels):
        m = max(row)
        lse = m + math.log(sum(math.exp(v - m) for v in row))
        total += lse - row[y]
    return total / len(logits)
