"""Independent longhand transcriptions of the metric formulas.

Plain Python loops over lists, written without looking at the vectorised code.
Used as oracles by the metric tests and the acceptance suite.
"""

import math


def quantile7(data, p):
    x = sorted(data)
    h = (len(x) - 1) * p
    lo = math.floor(h)
    hi = min(lo + 1, len(x) - 1)
    return x[lo] + (h - lo) * (x[hi] - x[lo])


def col(rows, levels, q):
    j = min(range(len(levels)), key=lambda i: abs(levels[i] - q))
    assert abs(levels[j] - q) < 1e-9
    return [r[j] for r in rows]


def pce(rows, levels, y, use=None):
    use = use or levels
    total = 0.0
    for q in use:
        c = col(rows, levels, q)
        hits = 0
        for t in range(len(y)):
            if y[t] <= c[t]:
                hits += 1
        total += abs(q - hits / len(y))
    return total / len(use)


def cce(rows, levels, y, confs):
    total = 0.0
    for s in confs:
        lo, hi = col(rows, levels, (1 - s) / 2), col(rows, levels, (1 + s) / 2)
        inside = 0
        for t in range(len(y)):
            if lo[t] <= y[t] and y[t] <= hi[t]:
                inside += 1
        total += s - inside / len(y)
    return total / len(confs)


def siw(rows, levels, y, confs):
    total = 0.0
    for s in confs:
        ql, qh = (1 - s) / 2, (1 + s) / 2
        lo, hi = col(rows, levels, ql), col(rows, levels, qh)
        width = 0.0
        for t in range(len(y)):
            width += hi[t] - lo[t]
        total += (width / len(y)) / (quantile7(y, qh) - quantile7(y, ql))
    return total / len(confs)


def naive(y):
    acc = 0.0
    for t in range(1, len(y)):
        acc += abs(y[t] - y[t - 1])
    return acc / (len(y) - 1)


def mase(median, y):
    err = 0.0
    for t in range(len(y)):
        err += abs(median[t] - y[t])
    return (err / len(y)) / naive(y)


def pinball(y, yhat, q):
    if yhat >= y:
        return 2 * (1 - q) * (yhat - y)
    return 2 * q * (y - yhat)


def wql(rows, levels, y):
    num = 0.0
    for t in range(len(y)):
        for j, q in enumerate(levels):
            num += pinball(y[t], rows[t][j], q)
    den = 0.0
    for v in y:
        den += abs(v)
    return num / den


def msis(rows, levels, y, s=0.8):
    lo, hi = col(rows, levels, (1 - s) / 2), col(rows, levels, (1 + s) / 2)
    acc = 0.0
    for t in range(len(y)):
        acc += hi[t] - lo[t]
        if y[t] < lo[t]:
            acc += 2 / (1 - s) * (lo[t] - y[t])
        if y[t] > hi[t]:
            acc += 2 / (1 - s) * (y[t] - hi[t])
    return (acc / len(y)) / naive(y)
