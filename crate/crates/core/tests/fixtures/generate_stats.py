"""Reference fixtures for the rank-statistics and normality tests.

Regenerate with `python3 generate_stats.py > stats_cases.json`. Shapiro-Wilk and
Kruskal-Wallis values come from scipy.stats; Dunn's test is computed here from
scipy's average ranks and the normal survival function (no p-value adjustment).
"""
import itertools
import json

import numpy as np
from scipy import stats


def dunn(groups):
    data = np.concatenate(groups)
    n = len(data)
    ranks = stats.rankdata(data)
    _, counts = np.unique(data, return_counts=True)
    tie = np.sum(counts**3 - counts) / (12.0 * (n - 1))
    out = {}
    start = 0
    mean_ranks, sizes = [], []
    for g in groups:
        mean_ranks.append(ranks[start : start + len(g)].mean())
        sizes.append(len(g))
        start += len(g)
    for i, j in itertools.combinations(range(len(groups)), 2):
        se = np.sqrt((n * (n + 1) / 12.0 - tie) * (1.0 / sizes[i] + 1.0 / sizes[j]))
        z = (mean_ranks[i] - mean_ranks[j]) / se
        out[f"{i},{j}"] = float(2.0 * stats.norm.sf(abs(z)))
    return out


def draw(rng, kind, n):
    if kind == "normal":
        return rng.normal(rng.uniform(-5, 5), rng.uniform(0.5, 3), n)
    if kind == "exponential":
        return rng.exponential(rng.uniform(0.5, 4), n)
    if kind == "uniform":
        return rng.uniform(0, rng.uniform(1, 10), n)
    if kind == "lognormal":
        return rng.lognormal(0, 0.8, n)
    # rounded values produce ties
    return np.round(rng.normal(3, 2, n))


def main():
    rng = np.random.default_rng(20240611)
    kinds = ["normal", "exponential", "uniform", "lognormal", "ties"]
    cases = []
    for case_id in range(100):
        k = int(rng.integers(2, 5))
        groups = []
        for _ in range(k):
            n = int(rng.integers(3, 60)) if case_id % 10 else int(rng.integers(3, 12))
            kind = kinds[int(rng.integers(0, len(kinds)))]
            g = draw(rng, kind, n) + rng.uniform(0, 2)
            groups.append([float(v) for v in g])
        normality = []
        for g in groups:
            if np.ptp(g) == 0:
                normality.append(None)
            else:
                w, p = stats.shapiro(g)
                normality.append({"w": float(w), "p": float(p)})
        h, p = stats.kruskal(*groups)
        cases.append(
            {
                "id": case_id,
                "groups": groups,
                "shapiro": normality,
                "kruskal": {"h": float(h), "p": float(p)},
                "dunn": dunn([np.asarray(g) for g in groups]),
            }
        )
    large = []
    for n in [12, 50, 200, 1000, 4000]:
        x = rng.normal(0, 1, n)
        y = rng.exponential(1, n)
        for v in (x, y):
            w, p = stats.shapiro(v)
            large.append({"sample": [float(a) for a in v], "w": float(w), "p": float(p)})
    print(json.dumps({"format_version": 1, "cases": cases, "shapiro_large": large}))


if __name__ == "__main__":
    main()
