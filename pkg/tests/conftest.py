"""Shared instance generators for the test suite.

Random graphs are drawn with positive self-loop mass on every patch: that
guarantees aperiodicity and, more importantly, keeps the set of realizable
occupancy frequencies full-dimensional, which the simplex ascent needs
(degenerate supports are exercised separately).
"""

import numpy as np

from sourcesink import MetapopGraph, validate_graph


def random_graph(rng, K, m_range=(0.05, 3.0), zero_frac=0.35, min_spread=0.0):
    """An irreducible aperiodic instance with means drawn in m_range."""
    while True:
        D = rng.dirichlet(np.ones(K) * 0.7, size=K)
        mask = rng.random((K, K)) < zero_frac
        D = np.where(mask & (D < 0.5), 0.0, D)
        D[np.diag_indices(K)] += rng.uniform(0.05, 0.3, K)
        s = D.sum(axis=1)
        if np.any(s == 0):
            continue
        D = D / s[:, None]
        m = rng.uniform(*m_range, K)
        if min_spread and (m.max() - m.min()) < min_spread:
            continue
        g = MetapopGraph(m=m, D=D)
        rep = validate_graph(g)
        if rep.irreducible and rep.aperiodic:
            return g


def random_fully_mixing(rng, K, m_range=(0.05, 3.0)):
    """Parent-independent migration: every row of D is the same delta."""
    delta = rng.dirichlet(np.ones(K) * 2.0)
    while delta.min() < 1e-3:
        delta = rng.dirichlet(np.ones(K) * 2.0)
    D = np.tile(delta, (K, 1))
    m = rng.uniform(*m_range, K)
    return MetapopGraph(m=m, D=D), delta


def random_two_habitat(rng, K):
    """Patch 0 is the source (mean M > 1), all other patches share one mean."""
    g = random_graph(rng, K)
    M = rng.uniform(1.05, 3.0)
    m = rng.uniform(0.05, 0.95)
    return MetapopGraph(m=[M] + [m] * (K - 1), D=g.D)


def two_patch(M=2.0, m=0.5, p=0.5, q=0.5):
    return MetapopGraph(m=[M, m], D=[[1.0 - p, p], [q, 1.0 - q]])
