"""Greedy selection of a diverse yet representative reference subset.

Start from the medoid of the pool, then repeatedly add the candidate whose
averaged rank is best on two criteria: far from what is already selected
(diversity) and close to the remaining candidates (representativeness).
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .colorlab import chi_square
from .exceptions import ConfigurationError


def pairwise_distances(features: Sequence[np.ndarray],
                       distance: Callable[[np.ndarray, np.ndarray], float] = chi_square) -> np.ndarray:
    n = len(features)
    m = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            m[i, j] = m[j, i] = distance(features[i], features[j])
    return m


def competition_rank(values: np.ndarray, descending: bool = False) -> np.ndarray:
    """1-based ranks where ties share the smallest rank of their group ("1, 2, 2, 4")."""
    v = np.asarray(values)
    better = v[None, :] > v[:, None] if descending else v[None, :] < v[:, None]
    return 1 + better.sum(axis=1)


def select_from_distances(dist: np.ndarray, k: int) -> list[int]:
    n = dist.shape[0]
    if k < 1:
        raise ConfigurationError("k must be >= 1")
    if k > n:
        raise ConfigurationError(f"k={k} exceeds pool size {n}")
    mean_all = (dist.sum(axis=1) - np.diag(dist)) / (n - 1) if n > 1 else np.zeros(1)
    selected = [int(np.argmin(mean_all))]
    remaining = [i for i in range(n) if i != selected[0]]
    while len(selected) < k:
        cand = np.asarray(remaining)
        d_ref = dist[np.ix_(cand, selected)].mean(axis=1)
        if len(cand) > 1:
            sub = dist[np.ix_(cand, cand)]
            d_query = (sub.sum(axis=1) - np.diag(sub)) / (len(cand) - 1)
        else:
            d_query = np.zeros(1)
        rho = (competition_rank(d_ref, descending=True) + competition_rank(d_query)) / 2
        pick = int(cand[np.argmin(rho)])  # argmin returns the first, i.e. lowest index
        selected.append(pick)
        remaining.remove(pick)
    return selected


def select_references(features: Sequence[np.ndarray], k: int,
                      distance: Callable[[np.ndarray, np.ndarray], float] = chi_square) -> list[int]:
    """Indices (0-based, in selection order) of ``k`` references from ``features``.

    Any prefix of the result is itself the selection for that smaller ``k``.
    """
    if len(features) == 0:
        raise ConfigurationError("empty pool")
    return select_from_distances(pairwise_distances(features, distance), k)
