"""Synthetic friendship-and-adoption generator with known ground truth.

Everything here exists so the estimation pipeline can be pointed at data
whose true contagion effect is chosen up front: a configuration-model
network with timestamped edges, a weekly adoption process whose hazard
shifts by ``beta`` when a friend already owns the game, and a log-normal
playtime layer on top of realized purchases.

Within a week, adoption is sequential: every player gets a uniform draw and
a random evaluation slot, purchases commit in slot order, and a commit
immediately raises the hazard of friends evaluated later the same week.
The loop below reproduces those semantics exactly without walking all
players in Python — only actual purchases and their neighborhoods are
touched.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np

from .errors import GenerationFailedError, InvalidParameterError
from .graph import (DEFAULT_DEGREE_CAP, TemporalNetwork, build_network,
                    katz_centrality, tag_peers)
from .panel import AdoptionSchedule, first_purchasing_friend

_NEVER_WEEK = np.int64(2**31 - 1)


@dataclass
class SimConfig:
    """Shape of the synthetic world (network + calendar), not its behavior."""

    n_players: int = 20000
    mean_degree: float = 2.15
    degree_dist: str = "poisson"
    powerlaw_exponent: float = 2.5
    n_weeks: int = 100
    release_week: int = 60
    old_edge_fraction: float = 0.5
    formation_end: int | None = None
    key_player_share: float = 0.01
    seed: int = 0
    game: str = "SMB"
    epoch_unix: int = 0

    def __post_init__(self):
        if self.n_players < 2:
            raise InvalidParameterError("n_players must be at least 2")
        if not 0 <= self.mean_degree < self.n_players:
            raise InvalidParameterError("mean_degree must be in [0, n_players)")
        if self.degree_dist not in ("poisson", "powerlaw"):
            raise InvalidParameterError(f"unknown degree_dist {self.degree_dist!r}")
        if self.degree_dist == "powerlaw" and self.powerlaw_exponent <= 2.0:
            raise InvalidParameterError(
                "powerlaw_exponent must exceed 2 (finite mean degree)")
        if not 4 <= self.release_week < self.n_weeks:
            raise InvalidParameterError(
                "release_week must be >= 4 and before n_weeks")
        if not 0.0 <= self.old_edge_fraction <= 1.0:
            raise InvalidParameterError("old_edge_fraction must be in [0, 1]")
        if self.formation_end is None:
            self.formation_end = self.release_week
        if not 0 <= self.formation_end < self.n_weeks:
            raise InvalidParameterError("formation_end must be in [0, n_weeks)")
        if not 0.0 < self.key_player_share < 1.0:
            raise InvalidParameterError("key_player_share must be in (0, 1)")
        if not self.game:
            raise InvalidParameterError("game must be a non-empty string")

    @property
    def reference_week(self) -> int:
        return self.release_week - 4

    @property
    def old_edge_cutoff(self) -> int:
        # edges at least 52 weeks old when measured at the reference week
        return self.reference_week - 52


@dataclass
class SimTruth:
    """The parameters the toolkit is supposed to recover (or hold at zero).

    ``beta`` is the weekly adoption-probability shift from having at least
    one owning friend; ``beta_kp``/``beta_of`` add on top when that friend
    is a key player / an old friend.  ``week_effects`` (length
    n_weeks - release_week) and per-player ``sigma_alpha`` noise enter the
    hazard additively, mirroring the two-way fixed effects the estimator
    absorbs.  ``gamma_*`` and the loadings drive the playtime layer only.
    """

    beta: float = 0.05
    beta_kp: float = 0.0
    beta_of: float = 0.0
    baseline_hazard: float = 5e-4
    sigma_alpha: float = 1e-4
    week_effects: tuple | None = None
    prob_noise_sd: float = 0.0
    homophily: float = 0.0
    gamma_kp: float = 0.0
    gamma_of: float = 0.0
    gamma_nofriend: float = 0.0
    playtime_mu: float = 2.8
    noise_sd: float = 1.0
    playtime_loadings: dict = field(default_factory=lambda: {
        "num_games": 0.01, "num_groups": 0.02,
        "start_week": -0.005, "num_friends": 0.01})

    def to_dict(self) -> dict:
        out = dict(self.__dict__)
        if self.week_effects is not None:
            out["week_effects"] = [float(w) for w in self.week_effects]
        out["playtime_loadings"] = dict(self.playtime_loadings)
        return out


def _draw_degrees(cfg: SimConfig, rng) -> np.ndarray:
    cap = min(cfg.n_players - 1, DEFAULT_DEGREE_CAP)
    if cfg.degree_dist == "poisson":
        deg = rng.poisson(cfg.mean_degree, cfg.n_players)
    else:
        alpha = cfg.powerlaw_exponent - 1.0
        # Pareto-I floored to ints; x_min tuned so the floored mean lands
        # near the requested mean degree
        x_min = (cfg.mean_degree + 0.5) * (alpha - 1.0) / alpha
        deg = np.floor(x_min * (1.0 + rng.pareto(alpha, cfg.n_players))).astype(np.int64)
    deg = np.minimum(deg, cap)
    if deg.sum() % 2 == 1:
        bump = int(np.flatnonzero(deg < cap)[0])
        deg[bump] += 1
    return deg.astype(np.int64)


def _pair_stubs(deg: np.ndarray, rng, max_rounds: int = 50):
    """Configuration-model matching; reshuffles bad pairs against good ones.

    Self-loops and duplicate pairs are re-matched together with an equal
    number of randomly chosen good pairs (pure re-shuffles of only the bad
    stubs often cannot untangle them).  Leftovers after ``max_rounds`` are
    dropped, which perturbs realized degrees by at most that many stubs.
    """
    n = deg.size
    stubs = np.repeat(np.arange(n, dtype=np.int64), deg)
    rng.shuffle(stubs)
    left, right = stubs[0::2].copy(), stubs[1::2].copy()
    dropped = 0
    rounds = 0
    for rounds in range(max_rounds):
        a, b = np.minimum(left, right), np.maximum(left, right)
        bad = left == right
        keys = a * n + b
        order = np.argsort(keys, kind="stable")
        dup = np.zeros(keys.size, dtype=bool)
        dup[order[1:]] = keys[order[1:]] == keys[order[:-1]]
        bad |= dup
        nbad = int(bad.sum())
        if nbad == 0:
            break
        good_idx = np.flatnonzero(~bad)
        k = min(nbad, good_idx.size)
        pick = rng.choice(good_idx, size=k, replace=False) if k else good_idx[:0]
        pool_idx = np.concatenate([np.flatnonzero(bad), pick])
        pool = np.concatenate([left[pool_idx], right[pool_idx]])
        rng.shuffle(pool)
        left[pool_idx] = pool[:pool_idx.size]
        right[pool_idx] = pool[pool_idx.size:]
    else:
        a, b = np.minimum(left, right), np.maximum(left, right)
        bad = left == right
        keys = a * n + b
        order = np.argsort(keys, kind="stable")
        dup = np.zeros(keys.size, dtype=bool)
        dup[order[1:]] = keys[order[1:]] == keys[order[:-1]]
        bad |= dup
        dropped = int(bad.sum())
        if dropped > max(1, keys.size // 100):
            raise GenerationFailedError(
                f"could not form a simple graph: {dropped} conflicting pairs "
                f"after {max_rounds} rematch rounds")
        left, right = left[~bad], right[~bad]
    return left, right, dropped, rounds + 1


def gen_network(cfg: SimConfig, rng=None) -> TemporalNetwork:
    """Configuration-model friendship graph with edge formation weeks.

    An ``old_edge_fraction`` share of edges forms uniformly in
    [0, old_edge_cutoff] (old enough to count as long-standing ties at the
    release reference week); the rest form uniformly in
    (old_edge_cutoff, formation_end].  When the cutoff falls before week 0
    every edge is recent.
    """
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    deg = _draw_degrees(cfg, rng)
    left, right, dropped, rounds = _pair_stubs(deg, rng)
    m = left.size
    cutoff = cfg.old_edge_cutoff
    if cutoff < 0 or cutoff >= cfg.formation_end:
        formed = rng.integers(0, cfg.formation_end + 1, m)
        n_old = 0
    else:
        old = rng.random(m) < cfg.old_edge_fraction
        w_old = rng.integers(0, cutoff + 1, m)
        w_new = rng.integers(cutoff + 1, cfg.formation_end + 1, m)
        formed = np.where(old, w_old, w_new)
        n_old = int(old.sum())
    net = build_network((left, right, formed.astype(np.int64)),
                        nodes=np.arange(cfg.n_players, dtype=np.int64))
    net.diagnostics.update({
        "requested_mean_degree": float(cfg.mean_degree),
        "realized_mean_degree": float(2.0 * net.n_edges / cfg.n_players),
        "rematch_rounds": rounds,
        "dropped_bad_pairs": dropped,
        "old_edges": n_old,
    })
    return net


def _neighbor_mean(net: TemporalNetwork, values: np.ndarray) -> np.ndarray:
    A = net.csr_at(int(_NEVER_WEEK) - 1)
    deg = np.asarray(net.degrees(), dtype=np.float64)
    total = A @ values
    out = np.zeros_like(values)
    np.divide(total, deg, out=out, where=deg > 0)
    return out


def simulate_adoption(net: TemporalNetwork, cfg: SimConfig, truth: SimTruth,
                      rng, kp_mask: np.ndarray | None = None,
                      game: str | None = None) -> AdoptionSchedule:
    """Weekly hazard process with exact within-week sequential commits.

    Each horizon week draws one uniform and one evaluation slot per player.
    Week-start buyers seed a heap keyed by slot; every commit bumps friend
    exposure counts over edges already formed, and a friend whose updated
    hazard now exceeds their uniform joins the heap if their slot is still
    ahead.  Because hazards only rise within a week, this reproduces a
    strict player-by-player sweep while touching only actual buyers.

    ``kp_mask`` marks key players by position (needed when ``beta_kp`` is
    nonzero); old-friend edges come from ``cfg.old_edge_cutoff``.
    """
    P = net.n_nodes
    horizon = cfg.n_weeks - cfg.release_week
    wfx = np.zeros(horizon) if truth.week_effects is None else \
        np.asarray(truth.week_effects, dtype=np.float64)
    if wfx.size != horizon:
        raise InvalidParameterError(
            f"week_effects needs length {horizon}, got {wfx.size}")
    if kp_mask is None:
        kp_mask = np.zeros(P, dtype=bool)
        if truth.beta_kp != 0.0:
            raise InvalidParameterError("beta_kp set but no kp_mask given")
    kp_mask = np.asarray(kp_mask, dtype=bool)

    alpha = rng.normal(0.0, truth.sigma_alpha, P) if truth.sigma_alpha > 0 \
        else np.zeros(P)
    if truth.homophily != 0.0:
        alpha = alpha + truth.homophily * _neighbor_mean(net, alpha)

    indptr, nbr, formed_slot = net.indptr, net.nbr, net.formed
    src = np.repeat(np.arange(P, dtype=np.int64), net.degrees())
    old_slot = formed_slot <= cfg.old_edge_cutoff
    # directed slots whose edge forms mid-horizon, bucketed by week
    late = np.flatnonzero(formed_slot > cfg.release_week)
    buckets = {}
    for idx in late:
        buckets.setdefault(int(formed_slot[idx]), []).append(int(idx))

    p_week = np.full(P, _NEVER_WEEK, dtype=np.int64)
    n_f = np.zeros(P, dtype=np.int32)
    n_kp = np.zeros(P, dtype=np.int32)
    n_of = np.zeros(P, dtype=np.int32)
    at_risk = np.ones(P, dtype=bool)
    clip_low = clip_high = 0
    beta, bkp, bof = truth.beta, truth.beta_kp, truth.beta_of

    def hazard_of(f: int, base_f: float) -> float:
        h = base_f + beta * (n_f[f] > 0) + bkp * (n_kp[f] > 0) + bof * (n_of[f] > 0)
        return 0.0 if h < 0.0 else (1.0 if h > 1.0 else h)

    for t in range(cfg.release_week, cfg.n_weeks):
        for idx in buckets.get(t, ()):
            i = int(src[idx])
            if p_week[i] < t:  # owner acquired before this week: expose friend
                f = int(nbr[idx])
                n_f[f] += 1
                if kp_mask[i]:
                    n_kp[f] += 1
                if old_slot[idx]:
                    n_of[f] += 1
        base = truth.baseline_hazard + alpha + wfx[t - cfg.release_week]
        if truth.prob_noise_sd > 0:
            base = base + rng.normal(0.0, truth.prob_noise_sd, P)
        raw = base + beta * (n_f > 0) + bkp * (n_kp > 0) + bof * (n_of > 0)
        clip_low += int((raw[at_risk] < 0.0).sum())
        clip_high += int((raw[at_risk] > 1.0).sum())
        prob = np.clip(raw, 0.0, 1.0)
        u = rng.random(P)
        slots = rng.permutation(P)
        heap = [(int(slots[i]), int(i)) for i in np.flatnonzero(at_risk & (u < prob))]
        heapq.heapify(heap)
        in_heap = np.zeros(P, dtype=bool)
        for r, i in heap:
            in_heap[i] = True
        while heap:
            r, i = heapq.heappop(heap)
            p_week[i] = t
            at_risk[i] = False
            for idx in range(int(indptr[i]), int(indptr[i + 1])):
                if formed_slot[idx] > t:
                    continue
                f = int(nbr[idx])
                n_f[f] += 1
                if kp_mask[i]:
                    n_kp[f] += 1
                if old_slot[idx]:
                    n_of[f] += 1
                if at_risk[f] and not in_heap[f] and slots[f] > r:
                    if u[f] < hazard_of(f, float(base[f])):
                        in_heap[f] = True
                        heapq.heappush(heap, (int(slots[f]), f))

    bought = p_week < _NEVER_WEEK
    meta = {
        "game": game or cfg.game,
        "n_adopters": int(bought.sum()),
        "horizon": [int(cfg.release_week), int(cfg.n_weeks - 1)],
        "clip_low": clip_low,
        "clip_high": clip_high,
        "seed_stream": "shared",
    }
    return AdoptionSchedule(game=game or cfg.game,
                            players=net.nodes[bought].astype(np.int64),
                            weeks=p_week[bought].astype(np.int64),
                            meta=meta)


COVARIATE_RATES = {"num_games": 20.6, "num_groups": 5.2}


def simulate_playtime(net: TemporalNetwork, schedules: dict, tags, cfg: SimConfig,
                      truth: SimTruth, rng):
    """Log-normal playtime for realized owners, plus the covariate table.

    log hours = mu + gamma_kp*kp + gamma_of*of + gamma_nofriend*nf
    + loadings . (num_games, num_groups, start_week, num_friends) + noise,
    where the first-purchase channel flags come from the earliest-buying
    friend (ties to the smallest id), exactly as the cross-section builder
    later reconstructs them.  Minutes are floored at 1.
    """
    P = net.n_nodes
    cov = {
        "player": net.nodes.astype(np.int64),
        "num_games": rng.poisson(COVARIATE_RATES["num_games"], P).astype(np.int64),
        "num_groups": rng.poisson(COVARIATE_RATES["num_groups"], P).astype(np.int64),
        "start_week": rng.integers(0, cfg.release_week, P).astype(np.int64),
    }
    deg = np.asarray(net.degrees(), dtype=np.float64)
    load = truth.playtime_loadings
    base = (truth.playtime_mu
            + load.get("num_games", 0.0) * cov["num_games"]
            + load.get("num_groups", 0.0) * cov["num_groups"]
            + load.get("start_week", 0.0) * cov["start_week"]
            + load.get("num_friends", 0.0) * deg)
    playtimes = {}
    for game in sorted(schedules):
        sched = schedules[game]
        noise = rng.normal(0.0, truth.noise_sd, P)
        if sched.players.size == 0:
            continue
        firsts = first_purchasing_friend(net, sched, sched.players)
        has_first = firsts >= 0
        kp = np.zeros(sched.players.size, dtype=bool)
        of = np.zeros(sched.players.size, dtype=bool)
        if has_first.any():
            kp[has_first] = tags.is_key_player(firsts[has_first])
            pairs = np.column_stack([sched.players[has_first], firsts[has_first]])
            of[has_first] = tags.is_old_friend(pairs[:, 0], pairs[:, 1])
        pos = net.indices_of(sched.players)
        logpt = (base[pos]
                 + truth.gamma_kp * kp
                 + truth.gamma_of * of
                 + truth.gamma_nofriend * (~has_first)
                 + noise[pos])
        minutes = np.maximum(np.rint(np.exp(logpt) * 60.0), 1.0).astype(np.int64)
        for pid, m in zip(sched.players.tolist(), minutes.tolist()):
            playtimes[(pid, game)] = int(m)
    return playtimes, cov


@dataclass
class SimOutput:
    """Everything one simulation run produced, ground truth included."""

    config: SimConfig
    truth: SimTruth
    network: TemporalNetwork
    tags: object
    schedules: dict
    playtimes: dict
    covariates: dict

    @property
    def schedule(self) -> AdoptionSchedule:
        return self.schedules[self.config.game]


def run_simulation(cfg: SimConfig, truth: SimTruth | None = None,
                   games: tuple = ("SMB", "NV")) -> SimOutput:
    """Network -> centrality tags -> adoption per game -> playtime.

    One seeded generator drives every stage in a fixed order, so a (config,
    truth) pair maps to byte-identical output files.  The primary game is
    always simulated even if left out of ``games``.
    """
    truth = truth or SimTruth()
    rng = np.random.default_rng(cfg.seed)
    net = gen_network(cfg, rng)
    scores = katz_centrality(net, cfg.reference_week)
    tags = tag_peers(net, scores, cfg.release_week,
                     percentile=1.0 - cfg.key_player_share)
    kp_mask = np.zeros(net.n_nodes, dtype=bool)
    if tags.key_players.size:
        kp_mask[net.indices_of(tags.key_players)] = True
    game_list = list(dict.fromkeys((cfg.game, *games)))
    schedules = {g: simulate_adoption(net, cfg, truth, rng, kp_mask=kp_mask, game=g)
                 for g in game_list}
    playtimes, cov = simulate_playtime(net, schedules, tags, cfg, truth, rng)
    return SimOutput(config=cfg, truth=truth, network=net, tags=tags,
                     schedules=schedules, playtimes=playtimes, covariates=cov)
