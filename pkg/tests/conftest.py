"""Shared test oracles and the acceptance-criteria result banner.

Every oracle here is an INDEPENDENT implementation of something the library
computes — hash-set adjacency, BFS neighborhoods, dense linear solves, dummy
-variable regressions, exact-fraction sandwiches — deliberately written the
slow, obvious way so agreement is evidence rather than tautology.
"""

from __future__ import annotations

from fractions import Fraction

import numpy as np
import pytest

# ---------------------------------------------------------------------------
# graph oracles


def adjacency_oracle(edges):
    """{node: {neighbor: formed_week}} keeping the earliest week per pair."""
    adj = {}
    for a, b, w in edges:
        a, b, w = int(a), int(b), int(w)
        if a == b:
            continue
        for u, v in ((a, b), (b, a)):
            adj.setdefault(u, {})
            if v not in adj[u] or w < adj[u][v]:
                adj[u][v] = w
    return adj


def neighbors_oracle(adj, i, t):
    return {j for j, w in adj.get(i, {}).items() if w <= t}


def second_degree_oracle(adj, i, t):
    """Depth-2 BFS minus the depth-1 frontier minus the root."""
    first = neighbors_oracle(adj, i, t)
    second = set()
    for j in first:
        second |= neighbors_oracle(adj, j, t)
    return second - first - {i}


def katz_dense_oracle(adj, nodes, t, alpha):
    """Solve (I - alpha*A_t) x = 1 densely."""
    idx = {n: k for k, n in enumerate(nodes)}
    n = len(nodes)
    A = np.zeros((n, n))
    for i in nodes:
        for j, w in adj.get(i, {}).items():
            if w <= t and j in idx:
                A[idx[i], idx[j]] = 1.0
    return np.linalg.solve(np.eye(n) - alpha * A, np.ones(n))


def random_edges(rng, n_nodes, n_edges, max_week=30):
    a = rng.integers(0, n_nodes, n_edges)
    b = rng.integers(0, n_nodes, n_edges)
    w = rng.integers(0, max_week + 1, n_edges)
    return list(zip(a.tolist(), b.tolist(), w.tolist()))


# ---------------------------------------------------------------------------
# estimation oracles


def demean_oracle(cols, player, week, fe=("player", "week")):
    """Residualize columns on FE dummies via dense least squares."""
    n = len(player)
    blocks = [np.ones((n, 1))]
    if "player" in fe:
        _, pc = np.unique(player, return_inverse=True)
        blocks.append(np.eye(pc.max() + 1)[pc])
    if "week" in fe:
        _, wc = np.unique(week, return_inverse=True)
        blocks.append(np.eye(wc.max() + 1)[wc])
    D = np.hstack(blocks)
    out = {}
    for name, col in cols.items():
        coef, *_ = np.linalg.lstsq(D, col, rcond=None)
        out[name] = col - D @ coef
    return out


def lsdv_oracle(y, X, player, week, fe=("player", "week")):
    """Coefficients of y ~ X + FE dummies via one dense lstsq."""
    n = len(y)
    blocks = [np.ones((n, 1))]
    if "player" in fe:
        _, pc = np.unique(player, return_inverse=True)
        blocks.append(np.eye(pc.max() + 1)[pc][:, 1:])
    if "week" in fe:
        _, wc = np.unique(week, return_inverse=True)
        blocks.append(np.eye(wc.max() + 1)[wc][:, 1:])
    D = np.hstack([X] + blocks)
    coef, *_ = np.linalg.lstsq(D, y, rcond=None)
    return coef[: X.shape[1]]


def tsls_closed_form(y, X, Z):
    return np.linalg.solve(Z.T @ X, Z.T @ y)


def cr1_sandwich_loop(u, X, Z, clusters):
    """Cluster sandwich by explicit per-cluster loops (float)."""
    N, K = X.shape
    groups = {}
    for r, c in enumerate(clusters):
        groups.setdefault(c, []).append(r)
    G = len(groups)
    meat = np.zeros((K, K))
    for rows in groups.values():
        s = Z[rows].T @ u[rows]
        meat += np.outer(s, s)
    bread = np.linalg.inv(Z.T @ X)
    factor = (G / (G - 1)) * ((N - 1) / (N - K))
    return factor * bread @ meat @ bread.T


def cr1_sandwich_fractions(y_int, x_int, clusters):
    """One-regressor CR1 OLS sandwich in EXACT rational arithmetic.

    Integer-valued y and x keep every intermediate a Fraction, so the
    float implementation can be held to 1e-12.
    """
    y = [Fraction(int(v)) for v in y_int]
    x = [Fraction(int(v)) for v in x_int]
    n = len(y)
    sxx = sum(xi * xi for xi in x)
    sxy = sum(xi * yi for xi, yi in zip(x, y))
    beta = sxy / sxx
    u = [yi - beta * xi for xi, yi in zip(x, y)]
    groups = {}
    for r, c in enumerate(clusters):
        groups.setdefault(c, []).append(r)
    G = len(groups)
    meat = Fraction(0)
    for rows in groups.values():
        s = sum(x[r] * u[r] for r in rows)
        meat += s * s
    factor = Fraction(G, G - 1) * Fraction(n - 1, n - 1)  # K = 1
    return beta, factor * meat / (sxx * sxx)


def toy_panel(rng, n_players=8, n_weeks=6, binary=False):
    """Small two-way panel dict with y, x, z columns carrying real structure."""
    player = np.repeat(np.arange(n_players), n_weeks)
    week = np.tile(np.arange(n_weeks), n_players)
    alpha = rng.normal(0, 1, n_players)[player]
    wfx = rng.normal(0, 1, n_weeks)[week]
    z = rng.normal(0, 1, player.size)
    x = 0.8 * z + alpha * 0.3 + rng.normal(0, 1, player.size)
    y = 0.5 * x + alpha + wfx + rng.normal(0, 1, player.size)
    if binary:
        x = (x > 0).astype(float)
        z = (z > 0).astype(float)
        y = (y > np.median(y)).astype(float)
    return {"player": player, "week": week, "y": y, "x": x, "z": z}


# ---------------------------------------------------------------------------
# acceptance banner

ACCEPTANCE_RESULTS = []


def record_criterion(number, label, passed, detail=""):
    ACCEPTANCE_RESULTS.append((number, label, bool(passed), detail))


@pytest.hookimpl(trylast=True)
def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    tr = terminalreporter
    tr.write_sep("-", "acceptance criteria")
    for number, label, passed, detail in sorted(ACCEPTANCE_RESULTS):
        status = "PASS" if passed else "FAIL"
        line = f"criterion {number} {status:4s} {label}"
        if detail:
            line += f" — {detail}"
        tr.write_line(line, green=passed, red=not passed)
