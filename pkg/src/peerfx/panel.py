"""Panel construction: achievement events + temporal network -> regression inputs.

The pipeline here mirrors the study design: derive per-player purchase weeks
from first-achievement timestamps, sample treatment/control groups, and lay
out a balanced player-by-week panel with the friend-adoption regressor, the
lagged second-degree instrument, and the key-player / old-friend splits of
both.  A cross-sectional playtime table (first-purchasing-friend tags plus
covariates) supports the post-adoption intensity regression.

Columns are assembled with interval difference arrays on a (players x weeks)
grid: every friend edge / second-degree pair contributes a [start, end) week
interval during which it raises the relevant count, so no per-(player, week)
loop is ever executed.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .errors import InsufficientPoolError, InvalidParameterError, ParseError
from .graph import NEVER, PeerTags, TemporalNetwork, week_of_unix


@dataclass
class AdoptionSchedule:
    """Per-player purchase week for one game (earliest achievement's week).

    ``players`` is sorted; ``weeks`` aligns with it.  Players absent from
    ``players`` have no purchase; bulk lookups return the sentinel ``NEVER``
    for them so that `week <= t` comparisons are naturally false.
    """

    game: str
    players: np.ndarray
    weeks: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def n_players(self) -> int:
        return int(self.players.size)

    def week_of(self, player: int):
        pos = int(np.searchsorted(self.players, player))
        if pos < self.players.size and self.players[pos] == player:
            return int(self.weeks[pos])
        return None

    def weeks_for(self, players) -> np.ndarray:
        """Purchase weeks for an id array; NEVER where there is no purchase."""
        players = np.asarray(players, dtype=np.int64)
        out = np.full(players.shape, NEVER, dtype=np.int64)
        if self.players.size == 0 or players.size == 0:
            return out
        pos = np.minimum(np.searchsorted(self.players, players), self.players.size - 1)
        hit = self.players[pos] == players
        out[hit] = self.weeks[pos[hit]]
        return out

    def to_dict(self) -> dict:
        return {int(p): int(w) for p, w in zip(self.players, self.weeks)}


def derive_schedule(events, game: str, cutoff_week: int | None = None,
                    epoch_unix: int = 0) -> AdoptionSchedule:
    """Group achievement events to per-player purchase weeks for one game.

    ``events`` is either an iterable of (player, game, unlocked_unix) tuples
    or a (players, games, unix) array triple.  The purchase week is the week
    of the EARLIEST event; players whose earliest event falls after
    ``cutoff_week`` are excluded (the boundary week itself is included).
    """
    if isinstance(events, tuple) and len(events) == 3 and not isinstance(events[0], tuple):
        players, games, unix = events
        players = np.asarray(players, dtype=np.int64)
        games = np.asarray(games, dtype=object)
        unix = np.asarray(unix, dtype=np.int64)
    else:
        rows = [(int(p), str(g), int(u)) for p, g, u in events]
        players = np.asarray([r[0] for r in rows], dtype=np.int64)
        games = np.asarray([r[1] for r in rows], dtype=object)
        unix = np.asarray([r[2] for r in rows], dtype=np.int64)

    pick = games == game
    players, unix = players[pick], unix[pick]
    if players.size == 0:
        warnings.warn(f"no achievement events for game {game!r}; schedule is empty")
        return AdoptionSchedule(game, np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64))
    if players.min() < 0:
        raise ParseError("player ids must be non-negative")
    weeks = week_of_unix(unix, epoch_unix)
    if weeks.min() < 0:
        raise ParseError(f"event timestamp precedes the epoch {epoch_unix}")

    order = np.lexsort((weeks, players))
    players, weeks = players[order], weeks[order]
    first = np.ones(players.size, dtype=bool)
    first[1:] = players[1:] != players[:-1]
    players, weeks = players[first], weeks[first]
    if cutoff_week is not None:
        keep = weeks <= cutoff_week
        players, weeks = players[keep], weeks[keep]
    return AdoptionSchedule(game, players, weeks.astype(np.int64))


@dataclass
class GroupAssignment:
    """Sampled treatment/control player sets (disjoint, sorted ids)."""

    treatment: np.ndarray
    control: np.ndarray
    seed: int
    n_requested: int
    n_dropped_treatment: int = 0

    def all_players(self) -> np.ndarray:
        return np.unique(np.concatenate((self.treatment, self.control)))


def _fisher_yates_prefix(pool: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """First k entries of a seeded Fisher-Yates shuffle of ``pool`` (sorted ids in)."""
    arr = pool.copy()
    n = arr.size
    if k == 0:
        return arr[:0]
    draws = rng.integers(0, n - np.arange(k))
    for i in range(k):
        j = i + int(draws[i])
        arr[i], arr[j] = arr[j], arr[i]
    return np.sort(arr[:k])


def assign_groups(net: TemporalNetwork, schedule: AdoptionSchedule, n_per_group: int,
                  seed: int, horizon_week: int | None = None) -> GroupAssignment:
    """Sample treatment (>=1 purchasing friend) and control (none) groups.

    Pool membership uses the full crawled network and the full schedule.
    When ``horizon_week`` is given, sampled treatment players whose friends'
    purchases ALL fall after the horizon are dropped post-sampling (their
    exposure never materializes inside the study window), so the realized
    treatment group may be smaller than requested.  Sampling is a seeded
    Fisher-Yates prefix per pool, treatment drawn first.
    """
    if n_per_group < 0:
        raise InvalidParameterError("n_per_group must be non-negative")
    deg = net.degrees()
    adopter = np.zeros(net.n_nodes, dtype=np.int32)
    if schedule.players.size:
        inside = np.isin(schedule.players, net.nodes)
        adopter[net.indices_of(schedule.players[inside])] = 1
    A = net.csr_at(int(NEVER) - 1)
    has_adopting_friend = (A @ adopter) > 0
    treat_pool = net.nodes[(deg > 0) & has_adopting_friend]
    control_pool = net.nodes[(deg > 0) & ~has_adopting_friend]
    if treat_pool.size < n_per_group or control_pool.size < n_per_group:
        raise InsufficientPoolError(
            f"pools smaller than n_per_group={n_per_group} "
            f"(treatment {treat_pool.size}, control {control_pool.size})",
            {"treatment": int(treat_pool.size), "control": int(control_pool.size)})

    rng = np.random.default_rng(seed)
    treatment = _fisher_yates_prefix(treat_pool, n_per_group, rng)
    control = _fisher_yates_prefix(control_pool, n_per_group, rng)

    n_dropped = 0
    if horizon_week is not None and treatment.size:
        in_horizon = np.zeros(net.n_nodes, dtype=np.int32)
        if schedule.players.size:
            early = schedule.weeks <= horizon_week
            ids = schedule.players[early]
            ids = ids[np.isin(ids, net.nodes)]
            in_horizon[net.indices_of(ids)] = 1
        usable = (A @ in_horizon) > 0
        keep = usable[net.indices_of(treatment)]
        n_dropped = int((~keep).sum())
        treatment = treatment[keep]
    return GroupAssignment(treatment, control, int(seed), int(n_per_group), n_dropped)


@dataclass
class PanelConfig:
    """Mode flags for panel assembly.

    outcome_mode : "absorbing" (y = owns by week t; the headline default)
        or "event" (y = purchased exactly in week t).
    aggregation : "any" (binary, headline-table default), "sum", or "mean"
        over the contributing friend / second-degree sets.  The instrument
        mirrors the regressor's mode.
    censor_after_purchase : drop a player's rows after their own purchase
        week (the purchase-week row itself is kept).  Breaks exact balance;
        off by default.
    """

    outcome_mode: str = "absorbing"
    aggregation: str = "any"
    censor_after_purchase: bool = False

    def __post_init__(self):
        if self.outcome_mode not in ("absorbing", "event"):
            raise InvalidParameterError(f"unknown outcome_mode {self.outcome_mode!r}")
        if self.aggregation not in ("any", "sum", "mean"):
            raise InvalidParameterError(f"unknown aggregation {self.aggregation!r}")


@dataclass
class PanelDataset:
    """Columnar player-by-week panel.

    Rows are ordered player-major (ascending player id, then week).  With
    censoring off the panel is exactly balanced:
    ``n_rows == n_players * (w_end - w_start)``.
    """

    player: np.ndarray
    week: np.ndarray
    columns: dict
    window: tuple
    config: PanelConfig
    meta: dict = field(default_factory=dict)
    _codes: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_rows(self) -> int:
        return int(self.player.size)

    def column(self, name: str) -> np.ndarray:
        if name == "player":
            return self.player
        if name == "week":
            return self.week
        try:
            return self.columns[name]
        except KeyError:
            raise InvalidParameterError(f"panel has no column {name!r}") from None

    def codes(self, dim: str) -> np.ndarray:
        """Dense 0..G-1 group codes for 'player' or 'week' rows."""
        if dim not in self._codes:
            _, inv = np.unique(self.column(dim), return_inverse=True)
            self._codes[dim] = inv.astype(np.int64)
        return self._codes[dim]


def expected_row_count(n_players: int, window) -> int:
    """Balanced row count: players x (window length - 1); the first window
    week is consumed by the instrument lag."""
    w0, w1 = int(window[0]), int(window[1])
    if w1 <= w0:
        raise InvalidParameterError(f"window [{w0}, {w1}] has no post-lag weeks")
    return int(n_players) * (w1 - w0)


def _gather_edges(net: TemporalNetwork, sample_idx: np.ndarray):
    """All adjacency entries of the sampled rows as flat arrays.

    Returns (row, j_idx, f_ij) where ``row`` indexes into ``sample_idx``.
    Entries are grouped by row in ascending order and sorted by neighbor id
    within each row (inherited from the CSR layout).
    """
    deg = np.diff(net.indptr)
    lens = deg[sample_idx]
    total = int(lens.sum())
    if total == 0:
        z = np.zeros(0, dtype=np.int64)
        return z, z.copy(), z.copy()
    rows = np.repeat(np.arange(sample_idx.size, dtype=np.int64), lens)
    shift = np.cumsum(lens) - lens
    offs = np.arange(total, dtype=np.int64) - np.repeat(shift, lens)
    pos = np.repeat(net.indptr[sample_idx], lens) + offs
    return rows, net.nbr[pos].astype(np.int64), net.formed[pos].astype(np.int64)


def _sd_pairs(net, rows, j_idx, f_ij, sample_idx, keep_level1=None,
              direct_keys=None, direct_formed=None, chunk_paths=8_000_000):
    """Unique second-degree pairs reachable through the given level-1 edges.

    Returns (row, k_idx, w2, f_direct): per unique (row, k) the earliest
    week the pair is path-connected (min over paths of max(f_ij, f_jk)) and
    the week a DIRECT i-k edge forms (NEVER when none) — membership in the
    second-degree set at week t is ``w2 <= t < f_direct``.

    ``keep_level1`` restricts the first hop (key-player middle nodes /
    old-friend edges); the direct-edge exclusion always uses the full edge
    set, passed in via sorted ``direct_keys``/``direct_formed``.
    """
    if keep_level1 is not None:
        rows, j_idx, f_ij = rows[keep_level1], j_idx[keep_level1], f_ij[keep_level1]
    n = net.n_nodes
    deg = np.diff(net.indptr)
    lens2 = deg[j_idx]
    out_rows, out_k, out_w2 = [], [], []
    # chunk the level-1 edge list so each expansion stays within the path budget
    csum = np.cumsum(lens2)
    start = 0
    while start < rows.size:
        stop = int(np.searchsorted(csum, (csum[start - 1] if start else 0) + chunk_paths)) + 1
        stop = min(max(stop, start + 1), rows.size)
        r, j, f1 = rows[start:stop], j_idx[start:stop], f_ij[start:stop]
        l2 = lens2[start:stop]
        total = int(l2.sum())
        if total:
            prow = np.repeat(r, l2)
            pf1 = np.repeat(f1, l2)
            shift = np.cumsum(l2) - l2
            offs = np.arange(total, dtype=np.int64) - np.repeat(shift, l2)
            pos = np.repeat(net.indptr[j], l2) + offs
            k = net.nbr[pos].astype(np.int64)
            w2 = np.maximum(pf1, net.formed[pos].astype(np.int64))
            notself = k != sample_idx[prow]
            out_rows.append(prow[notself])
            out_k.append(k[notself])
            out_w2.append(w2[notself])
        start = stop
    if not out_rows:
        z = np.zeros(0, dtype=np.int64)
        return z, z.copy(), z.copy(), z.copy()
    prow = np.concatenate(out_rows)
    k = np.concatenate(out_k)
    w2 = np.concatenate(out_w2)
    order = np.lexsort((w2, k, prow))
    prow, k, w2 = prow[order], k[order], w2[order]
    first = np.ones(prow.size, dtype=bool)
    first[1:] = (prow[1:] != prow[:-1]) | (k[1:] != k[:-1])
    prow, k, w2 = prow[first], k[first], w2[first]

    f_direct = np.full(prow.size, NEVER, dtype=np.int64)
    if direct_keys is not None and direct_keys.size:
        q = prow * n + k
        pos = np.minimum(np.searchsorted(direct_keys, q), direct_keys.size - 1)
        hit = direct_keys[pos] == q
        f_direct[hit] = direct_formed[pos[hit]]
    return prow, k, w2, f_direct


def _interval_add(diff, rows, start, end, W):
    """diff-array += 1 on [start, end) per row, clipped to [0, W)."""
    start = np.maximum(start, 0)
    ok = start < np.minimum(end, W)
    r, s, e = rows[ok], start[ok], end[ok]
    np.add.at(diff, (r, s), 1)
    inside = e < W
    np.add.at(diff, (r[inside], e[inside]), -1)


def _point_add(diff_or_grid, rows, col, W):
    ok = (col >= 0) & (col < W)
    np.add.at(diff_or_grid, (rows[ok], col[ok]), 1)


def build_panel(net: TemporalNetwork, schedule: AdoptionSchedule, tags: PeerTags,
                groups: GroupAssignment, window, cfg: PanelConfig | None = None,
                block: int = 4096) -> PanelDataset:
    """Assemble the balanced player-by-week panel.

    For each sampled player i and week t in (w_start, w_end]:

    * ``y``: own purchase (absorbing: week <= t; event: week == t),
    * ``x_friend``: aggregation over friends-at-t j of their purchases,
    * ``z_sd_lag``: aggregation over second-degree-at-(t-1) k of their
      purchases at/through t-1 — by construction it only uses week <= t-1
      data,
    * ``x_kp`` / ``x_of``: x_friend restricted to key-player friends /
      old-friend pairs,
    * ``z_kp_lag`` / ``z_of_lag``: the instrument restricted to paths whose
      middle node is a key player / whose first hop is an old-friend edge.

    The first window week carries no rows (the lag consumes it).  Rows are
    player-major; with ``censor_after_purchase`` rows after a player's own
    purchase week are dropped (the panel is then no longer balanced).
    """
    cfg = cfg or PanelConfig()
    w0, w1 = int(window[0]), int(window[1])
    if w1 <= w0:
        raise InvalidParameterError(f"window [{w0}, {w1}] has no post-lag weeks")
    if tags.reference_week >= w0:
        warnings.warn("tags.reference_week is inside the panel window; "
                      "key-player/old-friend tags are not predetermined")
    players = groups.all_players()
    if players.size == 0:
        raise InvalidParameterError("no sampled players")
    sample_idx_all = net.indices_of(players)
    P = players.size
    W = w1 - w0 + 1
    mean_mode = cfg.aggregation == "mean"
    absorbing = cfg.outcome_mode == "absorbing"

    names = ("x_friend", "x_kp", "x_of", "z_sd_lag", "z_kp_lag", "z_of_lag")
    grids = {n: np.zeros((P, W), dtype=np.int32) for n in names}
    denoms = {n: np.zeros((P, W), dtype=np.int32) for n in names} if mean_mode else None

    kp_flag = np.zeros(net.n_nodes, dtype=bool)
    if tags.key_players.size:
        kp_flag[net.indices_of(tags.key_players)] = True
    p_all = schedule.weeks_for(net.nodes)  # purchase week per dense index

    for s in range(0, P, block):
        bidx = np.arange(s, min(s + block, P))
        sub_idx = sample_idx_all[bidx]
        rows, j_idx, f_ij = _gather_edges(net, sub_idx)
        rows_g = bidx[rows] if rows.size else rows  # global grid rows
        p_j = p_all[j_idx] if rows.size else j_idx

        # --- x columns: one interval / point per qualifying friend edge
        variants = (("x_friend", None),
                    ("x_kp", kp_flag[j_idx] if rows.size else None),
                    ("x_of", (f_ij <= tags.old_friend_cutoff) if rows.size else None))
        for name, keep in variants:
            if rows.size == 0:
                break
            r = rows_g if keep is None else rows_g[keep]
            f = f_ij if keep is None else f_ij[keep]
            p = p_j if keep is None else p_j[keep]
            bought = p != NEVER
            if absorbing:
                act = np.maximum(f[bought], p[bought]) - w0
                _interval_add(grids[name], r[bought], act, np.full(act.size, W), W)
            else:
                ok = bought & (f <= p)
                _point_add(grids[name], r[ok], p[ok] - w0, W)
            if mean_mode:
                _interval_add(denoms[name], r, f - w0, np.full(f.size, W), W)

        # --- z columns: one interval / point per unique second-degree pair
        if rows.size:
            dkeys = rows * net.n_nodes + j_idx  # sorted by construction
            zvariants = (("z_sd_lag", None),
                         ("z_kp_lag", kp_flag[j_idx]),
                         ("z_of_lag", f_ij <= tags.old_friend_cutoff))
            for name, keep in zvariants:
                prow, k, w2, fdir = _sd_pairs(net, rows, j_idx, f_ij, sub_idx,
                                              keep_level1=keep,
                                              direct_keys=dkeys, direct_formed=f_ij)
                if prow.size == 0:
                    continue
                rg = bidx[prow]
                p_k = p_all[k]
                bought = p_k != NEVER
                if absorbing:
                    # pair contributes at row week t iff max(w2, p_k) <= t-1 < fdir
                    startc = np.maximum(w2[bought], p_k[bought]) + 1 - w0
                    endc = np.minimum(fdir[bought], NEVER - 1) + 1 - w0
                    _interval_add(grids[name], rg[bought], startc, endc, W)
                else:
                    ok = bought & (w2 <= p_k) & (p_k < fdir)
                    _point_add(grids[name], rg[ok], p_k[ok] + 1 - w0, W)
                if mean_mode:
                    _interval_add(denoms[name], rg, w2 + 1 - w0,
                                  np.minimum(fdir, NEVER - 1) + 1 - w0, W)

    # interval diffs -> running counts (event mode stores points directly)
    for name in names:
        if absorbing:
            np.cumsum(grids[name], axis=1, out=grids[name])
        if mean_mode:
            np.cumsum(denoms[name], axis=1, out=denoms[name])

    # --- y from own purchase weeks
    p_own = p_all[sample_idx_all]
    y_grid = np.zeros((P, W), dtype=np.int8)
    has = p_own != NEVER
    if absorbing:
        cols = np.maximum(p_own[has] - w0, 0)
        inwin = p_own[has] <= w1
        rs = np.nonzero(has)[0][inwin]
        cs = cols[inwin]
        for r, c in zip(rs, cs):
            y_grid[r, c:] = 1
    else:
        cols = p_own[has] - w0
        ok = (cols >= 0) & (cols < W)
        y_grid[np.nonzero(has)[0][ok], cols[ok]] = 1

    def finalize(name):
        g = grids[name][:, 1:]
        if cfg.aggregation == "any":
            return (g > 0).astype(np.float64).ravel()
        if cfg.aggregation == "sum":
            return g.astype(np.float64).ravel()
        d = denoms[name][:, 1:]
        return np.divide(g, d, out=np.zeros(g.shape, dtype=np.float64),
                         where=d > 0).ravel()

    columns = {name: finalize(name) for name in names}
    columns["y"] = y_grid[:, 1:].astype(np.float64).ravel()
    player_col = np.repeat(players, W - 1)
    week_col = np.tile(np.arange(w0 + 1, w1 + 1, dtype=np.int64), P)

    n_balanced = P * (W - 1)
    if cfg.censor_after_purchase:
        limit = np.repeat(np.where(p_own == NEVER, np.int64(w1), p_own), W - 1)
        keep = week_col <= limit
        player_col, week_col = player_col[keep], week_col[keep]
        columns = {k: v[keep] for k, v in columns.items()}

    meta = {
        "window": [w0, w1],
        "outcome_mode": cfg.outcome_mode,
        "aggregation": cfg.aggregation,
        "censor_after_purchase": cfg.censor_after_purchase,
        "seed": groups.seed,
        "game": schedule.game,
        "n_players": int(P),
        "n_treatment": int(groups.treatment.size),
        "n_control": int(groups.control.size),
        "n_rows": int(player_col.size),
        "n_rows_balanced": int(n_balanced),
        "first_week_dropped": w0,
        "reference_week": int(tags.reference_week),
    }
    return PanelDataset(player_col, week_col, columns, (w0, w1), cfg, meta)


@dataclass
class PlaytimeRow:
    """One player-game observation of the post-adoption intensity table."""

    player: int
    game: str
    log_playtime: float
    kp_purchase: int
    of_purchase: int
    no_friend_purchase: int
    num_games: float
    num_groups: float
    start_week: float
    num_friends: int
    owns_smb: int
    owns_nv: int


def first_purchasing_friend(net: TemporalNetwork, schedule: AdoptionSchedule,
                            players: np.ndarray) -> np.ndarray:
    """Id of each player's earliest-purchasing friend, or -1 when none.

    A friend j qualifies when the edge formed no later than the player's own
    purchase week and j purchased STRICTLY earlier; ties on the purchase
    week break to the smallest player id.  Players without an own purchase
    week get -1.
    """
    out = np.full(len(players), -1, dtype=np.int64)
    idx = net.indices_of(players)
    p_own = schedule.weeks_for(players)
    for q, (ix, pw) in enumerate(zip(idx, p_own)):
        if pw == NEVER:
            continue
        lo, hi = net.indptr[ix], net.indptr[ix + 1]
        good = net.formed[lo:hi] <= pw
        js = net.nbr[lo:hi][good]
        if js.size == 0:
            continue
        ids = net.nodes[js]
        pj = schedule.weeks_for(ids)
        earlier = pj < pw
        if not earlier.any():
            continue
        ids, pj = ids[earlier], pj[earlier]
        best = np.lexsort((ids, pj))[0]
        out[q] = ids[best]
    return out


def build_playtime_crosssection(net: TemporalNetwork, schedule_by_game: dict,
                                tags: PeerTags, playtimes: dict,
                                covariates: dict,
                                diagnostics: dict | None = None) -> list:
    """Build PlaytimeRows for every recorded (player, game) playtime.

    ``playtimes`` maps (player, game) -> minutes; ``covariates`` is the
    columnar dict from the covariates CSV.  Players without an own purchase
    week for the game, with playtime below one minute, or without covariates
    are excluded (counts reported in ``diagnostics`` when a dict is passed).
    Log playtime is over hours floored at 1 (so logs are >= 0).
    """
    diag = {"no_purchase": 0, "below_minimum": 0, "no_covariates": 0,
            "not_in_network": 0}
    cov_players = covariates["player"]
    deg_all = net.degrees()

    first_cache = {}
    for game, schedule in schedule_by_game.items():
        inside = schedule.players[np.isin(schedule.players, net.nodes)]
        firsts = first_purchasing_friend(net, schedule, inside)
        first_cache[game] = dict(zip(inside.tolist(), firsts.tolist()))

    rows = []
    for (player, game) in sorted(playtimes):
        minutes = playtimes[(player, game)]
        pos_n = int(np.searchsorted(net.nodes, player))
        if pos_n >= net.nodes.size or net.nodes[pos_n] != player:
            diag["not_in_network"] += 1
            continue
        schedule = schedule_by_game.get(game)
        own = schedule.week_of(player) if schedule is not None else None
        if own is None:
            diag["no_purchase"] += 1
            continue
        if minutes < 1:
            diag["below_minimum"] += 1
            continue
        pos = int(np.searchsorted(cov_players, player))
        if pos >= cov_players.size or cov_players[pos] != player:
            diag["no_covariates"] += 1
            continue
        friend = first_cache[game].get(player, -1)
        if friend < 0:
            kp = of = 0
            nf = 1
        else:
            kp = int(tags.is_key_player(friend))
            of = int(tags.is_old_friend(player, friend))
            nf = 0
        owns_smb = int("SMB" in schedule_by_game and schedule_by_game["SMB"].week_of(player) is not None)
        owns_nv = int("NV" in schedule_by_game and schedule_by_game["NV"].week_of(player) is not None)
        rows.append(PlaytimeRow(
            player=int(player), game=game,
            log_playtime=float(np.log(max(minutes / 60.0, 1.0))),
            kp_purchase=kp, of_purchase=of, no_friend_purchase=nf,
            num_games=float(covariates["num_games"][pos]),
            num_groups=float(covariates["num_groups"][pos]),
            start_week=float(covariates["start_week"][pos]),
            num_friends=int(deg_all[pos_n]),
            owns_smb=owns_smb, owns_nv=owns_nv))
    if diagnostics is not None:
        diagnostics.update(diag)
    return rows
