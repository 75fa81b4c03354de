"""Independent brute-force oracles used only by the tests.

These deliberately share no code with the implementations they check:
exactly-rounded fsum for moments, quadratic pair enumeration for tau, a
from-scratch ranking for Spearman, and Simpson quadrature of the Student t
density for p-values.
"""

from __future__ import annotations

import math


def pearson_oracle(x, y) -> float:
    n = len(x)
    mx = math.fsum(x) / n
    my = math.fsum(y) / n
    sxy = math.fsum((a - mx) * (b - my) for a, b in zip(x, y))
    sxx = math.fsum((a - mx) ** 2 for a in x)
    syy = math.fsum((b - my) ** 2 for b in y)
    return sxy / math.sqrt(sxx * syy)


def ranks_oracle(values) -> list[float]:
    """Average ranks computed by position counting, not by sorting indices:
    rank(v) = (#strictly smaller) + (#equal + 1) / 2."""
    ranks = []
    for v in values:
        smaller = sum(1 for w in values if w < v)
        equal = sum(1 for w in values if w == v)
        ranks.append(smaller + (equal + 1) / 2.0)
    return ranks


def spearman_oracle(x, y) -> float:
    return pearson_oracle(ranks_oracle(x), ranks_oracle(y))


def kendall_oracle(x, y) -> float:
    """tau-b from explicit enumeration of every pair."""
    n = len(x)
    concordant = discordant = ties_x = ties_y = 0
    for i in range(n):
        xi, yi = x[i], y[i]
        for j in range(i + 1, n):
            dx = xi - x[j]
            dy = yi - y[j]
            if dx == 0:
                ties_x += 1
            if dy == 0:
                ties_y += 1
            if dx == 0 or dy == 0:
                continue
            if (dx > 0) == (dy > 0):
                concordant += 1
            else:
                discordant += 1
    n0 = n * (n - 1) // 2
    return (concordant - discordant) / math.sqrt((n0 - ties_x) * (n0 - ties_y))


def t_density(x: float, df: int) -> float:
    norm = math.exp(math.lgamma((df + 1) / 2.0) - math.lgamma(df / 2.0))
    return norm / math.sqrt(df * math.pi) * (1.0 + x * x / df) ** (-(df + 1) / 2.0)


def t_two_tailed_p_quadrature(t: float, df: int, points: int = 10001) -> float:
    """two-tailed p = 1 - 2 * integral_0^|t| f(x) dx, composite Simpson."""
    if t == 0.0:
        return 1.0
    if points % 2 == 0:
        points += 1
    a, b = 0.0, abs(t)
    h = (b - a) / (points - 1)
    acc = t_density(a, df) + t_density(b, df)
    for k in range(1, points - 1):
        acc += t_density(a + k * h, df) * (4 if k % 2 else 2)
    return 1.0 - 2.0 * (acc * h / 3.0)
