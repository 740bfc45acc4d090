"""Temporal friendship graphs and the graph computations the pipeline needs.

A :class:`TemporalNetwork` is an undirected graph whose edges carry the week
they were formed.  The data model is formation-only (the source data has no
dissolution timestamps), so "the network as of week t" is simply the subgraph
of edges with ``formed <= t``.  On top of the time-sliced views this module
provides second-degree neighborhoods (the instrument's support), Katz
centrality by power iteration, and the key-player / old-friend tagging that
the heterogeneity regressors are built from.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import DivergedError, InvalidParameterError, NotFoundError

WEEK_SECONDS = 604800

# Platform maximum friends; configurable in build_network.
DEFAULT_DEGREE_CAP = 2000

# Sentinel week meaning "never" (no purchase / no direct edge). Large enough
# that `week <= t` is false for any real WeekIndex.
NEVER = np.int64(2**31 - 1)


def week_of_unix(unix, epoch_unix: int = 0):
    """Bucket Unix seconds into week indices: floor((unix - epoch) / 604800)."""
    return (np.asarray(unix, dtype=np.int64) - np.int64(epoch_unix)) // WEEK_SECONDS


@dataclass(frozen=True)
class TemporalEdge:
    a: int
    b: int
    formed: int


class TemporalNetwork:
    """Immutable undirected graph with per-edge formation weeks.

    Adjacency is CSR-like over dense node indices: row i's neighbors live in
    ``nbr[indptr[i]:indptr[i+1]]`` sorted by neighbor id, with parallel
    ``formed`` weeks.  All queries are read-only, so instances are safe to
    share across threads.

    Attributes
    ----------
    nodes : np.ndarray
        Sorted unique player ids (int64).
    indptr, nbr, formed : np.ndarray
        CSR adjacency (symmetric; each undirected edge appears in both rows).
    diagnostics : dict
        Build counters: self loops dropped, duplicate records collapsed,
        nodes/edges removed by the node filter.
    """

    def __init__(self, nodes, indptr, nbr, formed, diagnostics=None):
        self.nodes = nodes
        self.indptr = indptr
        self.nbr = nbr
        self.formed = formed
        self.diagnostics = diagnostics or {}

    # -- basic shape -------------------------------------------------------

    @property
    def n_nodes(self) -> int:
        return int(self.nodes.size)

    @property
    def n_edges(self) -> int:
        return int(self.nbr.size // 2)

    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    def index_of(self, player: int) -> int:
        """Dense index of a player id; NotFoundError for unknown ids."""
        pos = int(np.searchsorted(self.nodes, player))
        if pos >= self.nodes.size or self.nodes[pos] != player:
            raise NotFoundError(f"player {player} not in network")
        return pos

    def indices_of(self, players) -> np.ndarray:
        players = np.asarray(players, dtype=np.int64)
        if self.nodes.size == 0:
            if players.size:
                raise NotFoundError(f"player {players[0]} not in network")
            return np.zeros(0, dtype=np.int64)
        pos = np.searchsorted(self.nodes, players)
        bad = (pos >= self.nodes.size) | (self.nodes[np.minimum(pos, self.nodes.size - 1)] != players)
        if bad.any():
            raise NotFoundError(f"player {players[bad][0]} not in network")
        return pos

    # -- time-sliced queries -------------------------------------------------

    def neighbors_at(self, i: int, t: int) -> np.ndarray:
        """Player ids adjacent to i through edges formed no later than t (sorted)."""
        ix = self.index_of(i)
        lo, hi = self.indptr[ix], self.indptr[ix + 1]
        keep = self.formed[lo:hi] <= t
        return self.nodes[self.nbr[lo:hi][keep]]

    def second_degree_at(self, i: int, t: int) -> np.ndarray:
        """Friends-of-friends at week t, excluding direct friends and i itself."""
        ix = self.index_of(i)
        lo, hi = self.indptr[ix], self.indptr[ix + 1]
        keep = self.formed[lo:hi] <= t
        js = self.nbr[lo:hi][keep]
        if js.size == 0:
            return self.nodes[:0]
        parts = []
        for j in js:
            jlo, jhi = self.indptr[j], self.indptr[j + 1]
            jkeep = self.formed[jlo:jhi] <= t
            parts.append(self.nbr[jlo:jhi][jkeep])
        second = np.unique(np.concatenate(parts))
        second = second[~np.isin(second, js)]
        second = second[second != ix]
        return self.nodes[second]

    def csr_at(self, t: int) -> sp.csr_matrix:
        """0/1 adjacency of the week-t view as a scipy CSR matrix."""
        keep = self.formed <= t
        csum = np.zeros(self.nbr.size + 1, dtype=np.int64)
        np.cumsum(keep, out=csum[1:])
        indptr = csum[self.indptr]
        data = np.ones(int(indptr[-1]), dtype=np.int32)
        return sp.csr_matrix((data, self.nbr[keep], indptr),
                             shape=(self.n_nodes, self.n_nodes))

    def edge_array(self):
        """Unique undirected edges as (a_idx, b_idx, formed) with a_idx < b_idx."""
        rows = np.repeat(np.arange(self.n_nodes, dtype=np.int64), np.diff(self.indptr))
        upper = rows < self.nbr
        return rows[upper], self.nbr[upper].astype(np.int64), self.formed[upper]


def _as_edge_arrays(edges):
    """Accept (a, b, formed) array triples or an iterable of edge tuples."""
    if isinstance(edges, tuple) and len(edges) == 3 and not isinstance(edges[0], (int, np.integer)):
        a, b, f = edges
        return (np.asarray(a, dtype=np.int64), np.asarray(b, dtype=np.int64),
                np.asarray(f, dtype=np.int64))
    rows = [(int(e[0]), int(e[1]), int(e[2])) for e in edges]
    if not rows:
        z = np.zeros(0, dtype=np.int64)
        return z, z.copy(), z.copy()
    arr = np.asarray(rows, dtype=np.int64)
    return arr[:, 0], arr[:, 1], arr[:, 2]


def build_network(
    edges: Iterable[TemporalEdge] | tuple,
    node_filter: Callable[[np.ndarray], np.ndarray] | set | None = None,
    nodes: Sequence[int] | None = None,
    max_degree: int = DEFAULT_DEGREE_CAP,
) -> TemporalNetwork:
    """Build a deduplicated symmetric temporal network from an edge stream.

    Parameters
    ----------
    edges : iterable of (a, b, formed_week) or a tuple of three arrays
        May contain duplicates and both orientations; the EARLIEST formation
        week per unordered pair wins.  Self loops are dropped and counted in
        ``diagnostics`` (not fatal).
    node_filter : callable, set, or None
        Either a vectorized predicate ``ids -> bool array`` or a set of ids to
        keep.  Nodes failing the filter are removed with all incident edges.
        Zero-edge nodes are NOT dropped (friendless players stay).
    nodes : sequence of int, optional
        Explicit node universe.  When given, edges touching ids outside it
        are dropped; otherwise the universe is the union of edge endpoints.
    max_degree : int
        Degree cap (platform maximum); a node exceeding it is an error.
    """
    a, b, f = _as_edge_arrays(edges)
    if a.size and (a.min() < 0 or b.min() < 0):
        raise InvalidParameterError("player ids must be non-negative")
    if f.size and f.min() < 0:
        raise InvalidParameterError("formation weeks must be non-negative")

    diagnostics = {"self_loops": 0, "duplicates": 0, "filtered_nodes": 0, "filtered_edges": 0}

    selfloop = a == b
    diagnostics["self_loops"] = int(selfloop.sum())
    if selfloop.any():
        a, b, f = a[~selfloop], b[~selfloop], f[~selfloop]

    if nodes is not None:
        universe = np.unique(np.asarray(list(nodes), dtype=np.int64))
    else:
        universe = np.unique(np.concatenate((a, b))) if a.size else np.zeros(0, dtype=np.int64)
    if universe.size and universe.min() < 0:
        raise InvalidParameterError("player ids must be non-negative")

    if node_filter is not None:
        if callable(node_filter):
            keep_mask = np.asarray(node_filter(universe), dtype=bool)
        else:
            keep = np.unique(np.asarray(list(node_filter), dtype=np.int64))
            keep_mask = np.isin(universe, keep)
        diagnostics["filtered_nodes"] = int((~keep_mask).sum())
        universe = universe[keep_mask]

    if a.size:
        pos_a = np.searchsorted(universe, a)
        pos_b = np.searchsorted(universe, b)
        n_u = universe.size
        ok_a = (pos_a < n_u) & (universe[np.minimum(pos_a, max(n_u - 1, 0))] == a) if n_u else np.zeros(a.size, bool)
        ok_b = (pos_b < n_u) & (universe[np.minimum(pos_b, max(n_u - 1, 0))] == b) if n_u else np.zeros(a.size, bool)
        ok = ok_a & ok_b
        diagnostics["filtered_edges"] = int((~ok).sum())
        ia, ib, f = pos_a[ok], pos_b[ok], f[ok]
    else:
        ia = ib = np.zeros(0, dtype=np.int64)

    # Deduplicate unordered pairs keeping the earliest formation week.
    lo = np.minimum(ia, ib)
    hi = np.maximum(ia, ib)
    if lo.size:
        order = np.lexsort((f, hi, lo))
        lo, hi, f = lo[order], hi[order], f[order]
        first = np.ones(lo.size, dtype=bool)
        first[1:] = (lo[1:] != lo[:-1]) | (hi[1:] != hi[:-1])
        diagnostics["duplicates"] = int((~first).sum())
        lo, hi, f = lo[first], hi[first], f[first]

    # Symmetrize and build CSR sorted by (row, neighbor id).
    n = universe.size
    rows = np.concatenate((lo, hi))
    cols = np.concatenate((hi, lo))
    wks = np.concatenate((f, f))
    order = np.lexsort((cols, rows))
    rows, cols, wks = rows[order], cols[order], wks[order]
    deg = np.bincount(rows, minlength=n).astype(np.int64)
    if deg.size and deg.max() > max_degree:
        worst = int(universe[int(np.argmax(deg))])
        raise InvalidParameterError(
            f"player {worst} has degree {int(deg.max())} > cap {max_degree}")
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(deg, out=indptr[1:])
    return TemporalNetwork(universe, indptr, cols.astype(np.int32), wks.astype(np.int32),
                           diagnostics)


# Module-level wrappers matching the operation names.
def neighbors_at(net: TemporalNetwork, i: int, t: int) -> np.ndarray:
    return net.neighbors_at(i, t)


def second_degree_at(net: TemporalNetwork, i: int, t: int) -> np.ndarray:
    return net.second_degree_at(i, t)


def second_degree_counts(net: TemporalNetwork, players, t: int,
                         block: int = 2048) -> np.ndarray:
    """|second_degree_at(i, t)| for many players, in fixed-size row blocks.

    The per-block sparse product A[rows] @ A materializes each block's
    second-degree sets and immediately reduces them to counts, so memory
    stays bounded on dense networks (full materialization at mean degree
    ~100 would need gigabytes).  Block order is fixed → deterministic.
    """
    idx = net.indices_of(players)
    A = net.csr_at(t)
    A_bool = A.copy()
    A_bool.data = np.ones_like(A_bool.data)
    out = np.zeros(idx.size, dtype=np.int64)
    for s in range(0, idx.size, block):
        rows = idx[s:s + block]
        sub = A_bool[rows]
        paths = sub @ A_bool              # path counts i -> j -> k
        paths.data = np.ones_like(paths.data)
        # mask out direct friends and the player itself
        mask = sub.copy()
        ii = sp.csr_matrix(
            (np.ones(rows.size, dtype=np.int32),
             (np.arange(rows.size), rows)), shape=sub.shape)
        mask = ((mask + ii) > 0).astype(np.int32)
        hits = paths.multiply(mask)
        out[s:s + rows.size] = paths.getnnz(axis=1) - hits.getnnz(axis=1)
    return out


@dataclass
class CentralityScores:
    """Katz scores for every node of a week-t view.

    ``values`` aligns with ``players`` (= network node order).  ``scores``
    exposes the same data as a dict for small-graph ergonomics.
    """

    players: np.ndarray
    values: np.ndarray
    asof: int
    alpha: float
    iterations: int
    converged: bool

    @property
    def scores(self) -> dict:
        return {int(p): float(v) for p, v in zip(self.players, self.values)}

    def __getitem__(self, player: int) -> float:
        pos = int(np.searchsorted(self.players, player))
        if pos >= self.players.size or self.players[pos] != player:
            raise NotFoundError(f"player {player} not in scores")
        return float(self.values[pos])


def _estimate_spectral_radius(A: sp.csr_matrix, steps: int = 50) -> float:
    n = A.shape[0]
    if n == 0 or A.nnz == 0:
        return 0.0
    v = np.ones(n)
    lam = 0.0
    for _ in range(steps):
        w = A @ v
        norm = float(np.linalg.norm(w))
        if norm == 0.0:
            return 0.0
        lam = norm / float(np.linalg.norm(v))
        v = w / norm
    return lam


def katz_centrality(net: TemporalNetwork, t: int, alpha: float | None = None,
                    tol: float = 1e-10, max_iter: int = 1000) -> CentralityScores:
    """Katz centrality of the week-t view: fixed point of x = alpha*A_t*x + 1.

    ``alpha=None`` uses 0.9 / lambda_hat, with lambda_hat estimated by 50
    power-iteration steps on A_t (0.9 when the view has no edges, where any
    alpha yields the all-ones fixed point).  Returns ``converged=False`` with
    the last iterate if the sup-norm change is still >= tol after max_iter.
    """
    A = net.csr_at(t)
    if alpha is None:
        lam = _estimate_spectral_radius(A)
        alpha = 0.9 / lam if lam > 0 else 0.9
    alpha = float(alpha)
    if alpha <= 0:
        raise InvalidParameterError(f"katz alpha must be positive, got {alpha}")
    n = net.n_nodes
    x = np.ones(n)
    converged = False
    iterations = 0
    guard = 1e100
    for iterations in range(1, max_iter + 1):
        x_new = alpha * (A @ x) + 1.0
        if not np.isfinite(x_new).all() or (x_new.size and np.abs(x_new).max() > guard):
            raise DivergedError(f"katz iteration diverged at alpha={alpha}")
        change = float(np.abs(x_new - x).max()) if n else 0.0
        x = x_new
        if change < tol:
            converged = True
            break
    return CentralityScores(net.nodes, x, int(t), alpha, iterations, converged)


@dataclass
class PeerTags:
    """Key players and old-friend pairs, determined at the reference week.

    The reference week defaults to ``release_week - 4`` (tags are fixed
    before the panel window for exogeneity).  ``old_friend_pairs`` holds
    player-id pairs with a < b; ``old_friend_cutoff`` is the formation-week
    boundary the pairs satisfy, kept for fast bulk checks.
    """

    key_players: np.ndarray
    old_friend_pairs: np.ndarray
    reference_week: int
    old_friend_cutoff: int
    percentile: float
    threshold: float
    _kp_set: set = field(default=None, repr=False, compare=False)

    def is_key_player(self, player) -> np.ndarray | bool:
        if np.isscalar(player):
            if self._kp_set is None:
                self._kp_set = set(int(p) for p in self.key_players)
            return int(player) in self._kp_set
        player = np.asarray(player, dtype=np.int64)
        pos = np.searchsorted(self.key_players, player)
        pos = np.minimum(pos, max(self.key_players.size - 1, 0))
        if self.key_players.size == 0:
            return np.zeros(player.shape, dtype=bool)
        return self.key_players[pos] == player

    def is_old_friend(self, a, b) -> np.ndarray | bool:
        scalar = np.isscalar(a) and np.isscalar(b)
        a = np.atleast_1d(np.asarray(a, dtype=np.int64))
        b = np.atleast_1d(np.asarray(b, dtype=np.int64))
        lo, hi = np.minimum(a, b), np.maximum(a, b)
        m = self.old_friend_pairs
        if m.size == 0:
            out = np.zeros(lo.shape, dtype=bool)
            return bool(out[0]) if scalar else out
        keys = m[:, 0] * (2**32) + m[:, 1]
        want = lo * (2**32) + hi
        pos = np.minimum(np.searchsorted(keys, want), keys.size - 1)
        out = keys[pos] == want
        return bool(out[0]) if scalar else out


def tag_peers(net: TemporalNetwork, scores: CentralityScores, release_week: int,
              percentile: float = 0.99, min_age_weeks: int = 52,
              connected_only: bool = False) -> PeerTags:
    """Tag key players (score >= empirical quantile) and old-friend edges.

    Key players: nodes whose Katz score is at or above the ``percentile``
    quantile (weak inequality — ties are all included).  By default the
    quantile is taken over ALL nodes; ``connected_only=True`` restricts it to
    nodes with at least one edge.  Old friends: edges formed at least
    ``min_age_weeks`` before ``reference_week = release_week - 4``.
    """
    if release_week < 4:
        raise InvalidParameterError("release_week must be >= 4 (reference = release - 4)")
    if not 0.0 < percentile < 1.0:
        raise InvalidParameterError("percentile must be in (0, 1)")
    reference_week = int(release_week) - 4
    vals = scores.values
    if connected_only:
        vals = vals[net.degrees() > 0]
    if vals.size == 0:
        threshold = np.inf
        kp = net.nodes[:0]
    else:
        threshold = float(np.quantile(vals, percentile))
        kp = net.nodes[scores.values >= threshold]
    cutoff = reference_week - int(min_age_weeks)
    ai, bi, f = net.edge_array()
    old = f <= cutoff
    pairs = np.stack((net.nodes[ai[old]], net.nodes[bi[old]]), axis=1) if old.any() \
        else np.zeros((0, 2), dtype=np.int64)
    return PeerTags(kp, pairs, reference_week, cutoff, float(percentile), threshold)
