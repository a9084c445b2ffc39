"""Two-sample rank-sum and one-sample t tests used by object association."""

from __future__ import annotations

import math

import numpy as np

EXACT_MAX_TOTAL = 16


def midranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with ties sharing the mean of their positions."""
    values = np.asarray(values, dtype=float)
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values))
    sv = values[order]
    i = 0
    while i < len(sv):
        j = i
        while j + 1 < len(sv) and sv[j + 1] == sv[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def _exact_rank_sum_p(ranks: np.ndarray, n: int, w_obs: float) -> float:
    # count subsets of size n by their doubled rank sum
    r2 = np.rint(2 * ranks).astype(int)
    total = int(r2.sum())
    ways = np.zeros((n + 1, total + 1))
    ways[0, 0] = 1.0
    for r in r2:
        ways[1:, r:] += ways[:-1, :total + 1 - r].copy()
    dist = ways[n]
    sums = np.arange(total + 1)
    centre = n * total / len(r2)
    dev_obs = abs(2 * w_obs - centre)
    extreme = np.abs(sums - centre) >= dev_obs - 1e-9
    return float(min(1.0, dist[extreme].sum() / dist.sum()))


def wilcoxon_rank_sum(a, b) -> float:
    """Two-sided p-value of the rank-sum test for samples ``a`` and ``b``.

    Exact null distribution (midranks for ties) when the pooled size is at
    most 16, otherwise the tie-corrected normal approximation with continuity
    correction.
    """
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    n, m = len(a), len(b)
    if n < 2 or m < 2:
        raise ValueError("rank-sum test needs at least 2 samples per group")
    pooled = np.concatenate([a, b])
    if np.all(pooled == pooled[0]):
        return 1.0
    ranks = midranks(pooled)
    w = float(ranks[:n].sum())
    N = n + m
    if N <= EXACT_MAX_TOTAL:
        return _exact_rank_sum_p(ranks, n, w)
    u = w - n * (n + 1) / 2.0
    mean = n * m / 2.0
    _, counts = np.unique(pooled, return_counts=True)
    tie = float(np.sum(counts ** 3 - counts)) / (N * (N - 1))
    var = n * m / 12.0 * ((N + 1) - tie)
    if var <= 0:
        return 1.0
    z = max(abs(u - mean) - 0.5, 0.0) / math.sqrt(var)
    return float(min(1.0, math.erfc(z / math.sqrt(2.0))))


def _betacf(a: float, b: float, x: float, max_iter: int = 300, tol: float = 1e-15) -> float:
    """Continued fraction of the incomplete beta function (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = tiny if abs(d) < tiny else d
    d = 1.0 / d
    h = d
    for k in range(1, max_iter + 1):
        m2 = 2 * k
        aa = k * (b - k) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        h *= d * c
        aa = -(a + k) * (qab + k) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < tol:
            break
    return h


def betainc_reg(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b)."""
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    if x == 0.0 or x == 1.0:
        return x
    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * math.log(x) + b * math.log1p(-x))
    if x < (a + 1.0) / (a + b + 2.0):
        return math.exp(log_front) * _betacf(a, b, x) / a
    return 1.0 - math.exp(log_front) * _betacf(b, a, 1.0 - x) / b


def t_sf_two_sided(t: float, dof: float) -> float:
    """P(|T| >= |t|) for Student's t with ``dof`` degrees of freedom."""
    return betainc_reg(0.5 * dof, 0.5, dof / (dof + t * t))


def t_test_one_sample(xs, mu0: float) -> float:
    xs = np.asarray(xs, dtype=float).ravel()
    n = len(xs)
    if n < 2:
        raise ValueError("t-test needs at least 2 samples")
    mean = float(xs.mean())
    sd = float(xs.std(ddof=1))
    if sd == 0.0:
        return 1.0 if mean == mu0 else 0.0
    t = (mean - mu0) / (sd / math.sqrt(n))
    return float(min(1.0, t_sf_two_sided(t, n - 1)))
