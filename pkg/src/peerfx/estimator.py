"""Fixed-effects linear-probability estimation with clustered inference.

Player and week effects are absorbed by alternating within-group demeaning;
coefficients come from normal equations with a pivoted decomposition (the
regressor count is tiny, the row count is huge); covariance is the CR1
cluster sandwich.  2SLS is just-identified only: beta = (Z'X)^-1 Z'y after
demeaning, which keeps the reduced-form / first-stage ratio identity exact.

Cross products accumulate over fixed-size row blocks reduced in a fixed
order, so results are bit-identical no matter how many threads compute the
block partials.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg
from scipy import stats

from .errors import (InsufficientClustersError, InvalidParameterError,
                     RankDeficientError, WeakIdentificationError)

_BLOCK_ROWS = 1 << 20  # fixed reduction block for deterministic accumulation
_DEGENERATE_RTOL = 1e-8


def _get_col(panel, name: str) -> np.ndarray:
    col = panel.column(name) if hasattr(panel, "column") else panel[name]
    col = np.asarray(col, dtype=np.float64)
    if not np.isfinite(col).all():
        raise InvalidParameterError(f"column {name!r} contains non-finite values")
    return col


def _get_codes(panel, dim: str) -> np.ndarray:
    if hasattr(panel, "codes"):
        return panel.codes(dim)
    _, inv = np.unique(np.asarray(panel[dim]), return_inverse=True)
    return inv.astype(np.int64)


def _crossprod(A: np.ndarray, B: np.ndarray, threads: int = 1) -> np.ndarray:
    """A'B accumulated over fixed row blocks (bit-stable across thread counts)."""
    n = A.shape[0]
    starts = list(range(0, max(n, 1), _BLOCK_ROWS))

    def part(s):
        return np.einsum("ij,ik->jk", A[s:s + _BLOCK_ROWS], B[s:s + _BLOCK_ROWS])

    if threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(part, starts))
    else:
        parts = [part(s) for s in starts]
    if len(parts) == 1:
        return parts[0]
    return np.add.reduce(np.stack(parts), axis=0)


@dataclass
class WithinResult:
    """Within-transformed column copies plus the demeaning diagnostics."""

    columns: dict
    iterations: int
    converged: bool


def within_transform(panel, columns: Sequence[str], fe_dims=("player", "week"),
                     tol: float = 1e-10, max_sweeps: int = 100) -> WithinResult:
    """Alternating within-group demeaning until sup-norm convergence.

    Each sweep demeans every column by each fixed-effect dimension in turn;
    iteration stops when no value moved by ``tol`` or more during a full
    sweep.  Originals are untouched.  Non-convergence is not fatal — the
    flag is carried into any FitResult built from the output.
    """
    if tol <= 0:
        raise InvalidParameterError("tol must be positive")
    bad = [d for d in fe_dims if d not in ("player", "week")]
    if bad:
        raise InvalidParameterError(f"unknown fixed-effect dims: {bad}")
    data = {name: _get_col(panel, name).copy() for name in columns}
    if not fe_dims:
        return WithinResult(data, 0, True)
    groups = []
    for dim in fe_dims:
        codes = _get_codes(panel, dim)
        counts = np.bincount(codes).astype(np.float64)
        groups.append((codes, counts))
    prev = {name: col.copy() for name, col in data.items()}
    iterations = 0
    converged = False
    for iterations in range(1, max_sweeps + 1):
        for codes, counts in groups:
            for col in data.values():
                means = np.bincount(codes, weights=col) / counts
                col -= means[codes]
        change = 0.0
        for name, col in data.items():
            delta = float(np.abs(col - prev[name]).max()) if col.size else 0.0
            change = max(change, delta)
            prev[name][...] = col
        if change < tol:
            converged = True
            break
    return WithinResult(data, iterations, converged)


@dataclass
class DesignSpec:
    """What to regress on what, and how to absorb and cluster.

    ``endog``/``instruments`` must have equal length (just-identified 2SLS
    only); OLS specs leave ``instruments`` empty and may carry regressors in
    either ``endog`` or ``exog``.  ``fixed_effects`` is any subset of
    {"player", "week"}; with no fixed effects an intercept is added
    automatically.  ``cluster`` is a column name (default "player") or None
    for heteroskedasticity-robust (HC1) errors.
    """

    outcome: str
    endog: tuple = ()
    instruments: tuple = ()
    exog: tuple = ()
    fixed_effects: tuple = ("player", "week")
    cluster: str | None = "player"

    def __post_init__(self):
        self.endog = tuple(self.endog)
        self.instruments = tuple(self.instruments)
        self.exog = tuple(self.exog)
        self.fixed_effects = tuple(self.fixed_effects)
        if self.instruments and len(self.instruments) != len(self.endog):
            raise InvalidParameterError(
                "need exactly one instrument per endogenous column (just-identified)")
        if set(self.instruments) & set(self.exog):
            raise InvalidParameterError("instruments must be disjoint from exogenous columns")
        if len(self.endog) > 2:
            raise InvalidParameterError("at most two endogenous columns are supported")


@dataclass
class FitResult:
    """Named coefficients with cluster-robust covariance and diagnostics.

    ``n_singletons`` counts singleton clusters (kept — they contribute no
    within variation but preserve the balanced row count).  ``ar_stat`` is
    the cluster-robust reduced-form Wald statistic (set on IV fits);
    ``first_stage`` nests the first-stage fit(s).  ``dropped`` lists columns
    removed for having no variation after the within transform.
    """

    terms: tuple
    coef: np.ndarray
    vcov: np.ndarray
    n_obs: int
    n_clusters: int
    n_singletons: int
    iterations: int
    converged: bool
    fixed_effects: tuple
    cluster: str | None
    model: str = "ols"
    ar_stat: float | None = None
    first_stage: "FitResult | tuple | None" = None
    dropped: tuple = ()
    stats: dict = field(default_factory=dict)

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.vcov), 0.0, None))

    def tstats(self) -> np.ndarray:
        return self.coef / self.se

    def pvalues(self) -> np.ndarray:
        return 2.0 * stats.norm.sf(np.abs(self.tstats()))

    def conf_int(self, level: float = 0.95) -> np.ndarray:
        half = stats.norm.ppf(0.5 + level / 2.0) * self.se
        return np.column_stack((self.coef - half, self.coef + half))

    def coef_of(self, term: str) -> float:
        return float(self.coef[self.terms.index(term)])

    def se_of(self, term: str) -> float:
        return float(self.se[self.terms.index(term)])

    def summary(self) -> str:
        lines = [f"{self.model.upper()} fit: {self.n_obs} obs, "
                 f"{self.n_clusters} clusters ({self.cluster or 'HC1'}), "
                 f"FE: {'+'.join(self.fixed_effects) or 'none'}, "
                 f"within sweeps: {self.iterations}"
                 f"{'' if self.converged else ' (NOT converged)'}"]
        if self.n_singletons:
            lines.append(f"singleton clusters kept: {self.n_singletons}")
        if self.dropped:
            lines.append(f"dropped (no variation): {', '.join(self.dropped)}")
        lines.append(f"{'term':<16}{'estimate':>14}{'se':>12}{'z':>10}{'p':>10}")
        for i, term in enumerate(self.terms):
            z = self.coef[i] / self.se[i] if self.se[i] > 0 else float("inf")
            p = 2.0 * stats.norm.sf(abs(z))
            lines.append(f"{term:<16}{self.coef[i]:>14.6f}{self.se[i]:>12.6f}"
                         f"{z:>10.3f}{p:>10.4f}")
        if self.ar_stat is not None:
            lines.append(f"Anderson-Rubin stat (cluster-robust reduced form): "
                         f"{self.ar_stat:.2f}")
        return "\n".join(lines)

    def csv_rows(self, prefix: str = "") -> list:
        rows = []
        for i, term in enumerate(self.terms):
            se = float(self.se[i])
            stat = float(self.coef[i] / se) if se > 0 else None
            rows.append((prefix + term, float(self.coef[i]), se, stat))
        return rows


def _drop_degenerate(names, transformed, originals, protect=()):
    """Names of columns with no variation left after the transform."""
    dropped = []
    for name in names:
        if name in protect:
            continue
        col = transformed[name]
        scale = max(1.0, float(np.abs(originals[name]).max()) if originals[name].size else 0.0)
        if col.size == 0 or float(np.abs(col).max()) <= _DEGENERATE_RTOL * scale:
            dropped.append(name)
    return dropped


def _solve_pivoted(A: np.ndarray, b: np.ndarray, names: Sequence[str]) -> np.ndarray:
    """Solve A beta = b with a pivoted-QR rank check naming collinear columns."""
    if A.shape[0] == 0:
        raise RankDeficientError(tuple(names))
    _, R, piv = scipy.linalg.qr(A, pivoting=True)
    diag = np.abs(np.diag(R))
    tol = diag.max() * A.shape[0] * np.finfo(np.float64).eps * 100 if diag.size else 0.0
    rank = int((diag > tol).sum())
    if rank < A.shape[0]:
        raise RankDeficientError(tuple(names[p] for p in piv[rank:]))
    return scipy.linalg.solve(A, b)


def _cluster_scores(S: np.ndarray, u: np.ndarray, codes: np.ndarray, G: int) -> np.ndarray:
    out = np.empty((G, S.shape[1]))
    for c in range(S.shape[1]):
        out[:, c] = np.bincount(codes, weights=S[:, c] * u, minlength=G)
    return out


def _cr1_factor(G: int, N: int, K: int) -> float:
    return (G / (G - 1.0)) * ((N - 1.0) / (N - K))


def _cluster_codes(panel, cluster: str | None, n: int) -> np.ndarray:
    if cluster is None:
        return np.arange(n, dtype=np.int64)  # each row its own cluster -> HC1
    return _get_codes(panel, cluster)


def clustered_vcov(residuals: np.ndarray, X: np.ndarray, clusters,
                   threads: int = 1) -> np.ndarray:
    """CR1 cluster sandwich: (X'X)^-1 (sum_g X_g'u_g u_g'X_g) (X'X)^-1, scaled
    by G/(G-1) * (N-1)/(N-K).  With every row its own cluster this equals HC1.
    """
    u = np.asarray(residuals, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    codes, uniq = np.unique(np.asarray(clusters), return_inverse=True)
    G = codes.size
    if G < 2:
        raise InsufficientClustersError(f"need at least 2 clusters, got {G}")
    N, K = X.shape
    XtX = _crossprod(X, X, threads=threads)
    bread = scipy.linalg.solve(XtX, np.eye(K), assume_a="sym")
    S = _cluster_scores(X, u, uniq.astype(np.int64), G)
    meat = _crossprod(S, S, threads=threads)
    V = bread @ meat @ bread.T * _cr1_factor(G, N, K)
    return (V + V.T) / 2.0


def _fit_core(panel, spec: DesignSpec, x_names, z_names, threads, tol, max_sweeps,
              model: str) -> FitResult:
    """Shared OLS/2SLS engine on within-transformed columns."""
    need = [spec.outcome, *dict.fromkeys((*x_names, *z_names))]
    originals = {name: _get_col(panel, name) for name in need}
    n = originals[spec.outcome].size
    for name, col in originals.items():
        if col.size != n:
            raise InvalidParameterError(f"column {name!r} length mismatch")
    if n == 0:
        raise InvalidParameterError("empty panel")

    add_const = not spec.fixed_effects
    within = within_transform(panel, need, spec.fixed_effects, tol, max_sweeps)
    data = within.columns
    if add_const:
        # no absorbed intercept: include one and test variation around it
        centered = {k: v - v.mean() for k, v in data.items()}
        degenerate = _drop_degenerate(x_names, centered, originals)
        z_degenerate = _drop_degenerate(z_names, centered, originals)
    else:
        degenerate = _drop_degenerate(x_names, data, originals)
        z_degenerate = _drop_degenerate(z_names, data, originals)

    dropped = []
    if z_names:
        # drop endogenous/instrument PAIRS: either side degenerate kills both
        keep_pairs = [(x, z) for x, z in zip(spec.endog, spec.instruments)
                      if x not in degenerate and z not in z_degenerate]
        dropped += [x for x in spec.endog if x in degenerate]
        dropped += [z for z, x in zip(spec.instruments, spec.endog)
                    if z in z_degenerate and x not in degenerate]
        exog_kept = [e for e in spec.exog if e not in degenerate]
        dropped += [e for e in spec.exog if e in degenerate]
        x_kept = [x for x, _ in keep_pairs] + exog_kept
        z_kept = [z for _, z in keep_pairs] + exog_kept
        if not keep_pairs:
            raise RankDeficientError(tuple(spec.endog))
    else:
        x_kept = [x for x in x_names if x not in degenerate]
        dropped += [x for x in x_names if x in degenerate]
        z_kept = []
        if not x_kept and not add_const:
            raise RankDeficientError(tuple(x_names))

    terms = list(x_kept)
    X = np.column_stack([data[c] for c in terms]) if terms else np.empty((n, 0))
    if add_const:
        terms.append("const")
        X = np.column_stack([X, np.ones(n)])
    Z = np.column_stack([data[c] for c in z_kept]) if z_kept else X
    if add_const and z_kept:
        Z = np.column_stack([Z, np.ones(n)])
    y = data[spec.outcome]

    ZtX = _crossprod(Z, X, threads=threads)
    if z_kept:
        # numerically-zero det on the angle-normalized matrix => unidentified
        dz = np.sqrt(np.einsum("ij,ij->j", Z, Z))
        dx = np.sqrt(np.einsum("ij,ij->j", X, X))
        norm = ZtX / np.outer(dz, dx)
        smin = float(np.linalg.svd(norm, compute_uv=False)[-1])
        if smin < 1e-10:
            raise WeakIdentificationError(
                f"instrument matrix numerically singular (sigma_min={smin:.2e})")
    Zty = _crossprod(Z, y[:, None], threads=threads)[:, 0]
    coef = _solve_pivoted(ZtX, Zty, terms)
    resid = y - X @ coef

    codes_raw = _cluster_codes(panel, spec.cluster, n)
    uniq, codes = np.unique(codes_raw, return_inverse=True)
    G = uniq.size
    if G < 2:
        raise InsufficientClustersError(f"need at least 2 clusters, got {G}")
    sizes = np.bincount(codes)
    K = X.shape[1]
    bread = scipy.linalg.solve(ZtX, np.eye(K))
    S = _cluster_scores(Z, resid, codes.astype(np.int64), G)
    meat = _crossprod(S, S, threads=threads)
    V = bread @ meat @ bread.T * _cr1_factor(G, n, K)
    V = (V + V.T) / 2.0

    n_singletons = int((sizes == 1).sum()) if spec.cluster is not None else 0
    return FitResult(
        terms=tuple(terms), coef=coef, vcov=V, n_obs=int(n), n_clusters=int(G),
        n_singletons=n_singletons, iterations=within.iterations,
        converged=within.converged, fixed_effects=spec.fixed_effects,
        cluster=spec.cluster, model=model, dropped=tuple(dropped))


def ols_fit(panel, spec: DesignSpec, threads: int = 1, tol: float = 1e-10,
            max_sweeps: int = 100) -> FitResult:
    """Within-transformed OLS with CR1 clustered (or HC1) covariance."""
    if spec.instruments:
        raise InvalidParameterError("ols_fit takes a spec without instruments")
    x_names = (*spec.endog, *spec.exog)
    return _fit_core(panel, spec, x_names, (), threads, tol, max_sweeps, "ols")


def tsls_fit(panel, spec: DesignSpec, threads: int = 1, tol: float = 1e-10,
             max_sweeps: int = 100, attach_diagnostics: bool = True) -> FitResult:
    """Just-identified 2SLS: beta = (Z'X)^-1 Z'y on within-transformed data.

    The first-stage fit (one per endogenous column) is attached, as is the
    Anderson-Rubin statistic for the single-instrument case.  Residuals for
    the sandwich are structural (y - X beta), scores are instrument-side.
    """
    if not spec.instruments:
        raise InvalidParameterError("tsls_fit needs instruments")
    x_names = (*spec.endog, *spec.exog)
    try:
        result = _fit_core(panel, spec, x_names, spec.instruments, threads, tol,
                           max_sweeps, "2sls")
    except WeakIdentificationError as err:
        if err.first_stage_stat is None and len(spec.endog) == 1:
            fs_spec = DesignSpec(outcome=spec.endog[0],
                                 exog=(*spec.instruments, *spec.exog),
                                 fixed_effects=spec.fixed_effects,
                                 cluster=spec.cluster)
            fs = ols_fit(panel, fs_spec, threads=threads, tol=tol,
                         max_sweeps=max_sweeps)
            z = spec.instruments[0]
            se = fs.se_of(z)
            wald = (fs.coef_of(z) / se) ** 2 if se > 0 else float("inf")
            raise WeakIdentificationError(str(err), first_stage_stat=wald) from err
        raise
    if attach_diagnostics:
        stages = []
        for x, z in zip(spec.endog, spec.instruments):
            if x in result.dropped:
                continue
            fs_spec = DesignSpec(outcome=x, exog=(*spec.instruments, *spec.exog),
                                 fixed_effects=spec.fixed_effects, cluster=spec.cluster)
            fs = ols_fit(panel, fs_spec, threads=threads, tol=tol, max_sweeps=max_sweeps)
            fs.model = "first_stage"
            fs.stats["instrument_wald"] = (fs.coef_of(z) / fs.se_of(z)) ** 2 \
                if fs.se_of(z) > 0 else float("inf")
            stages.append(fs)
        result.first_stage = stages[0] if len(stages) == 1 else tuple(stages)
        if len(spec.endog) == 1 and len(stages) == 1:
            result.ar_stat = anderson_rubin(panel, spec, threads=threads, tol=tol,
                                            max_sweeps=max_sweeps)
            result.stats["first_stage_wald"] = stages[0].stats["instrument_wald"]
    return result


def anderson_rubin(panel, spec: DesignSpec, threads: int = 1, tol: float = 1e-10,
                   max_sweeps: int = 100) -> float:
    """Cluster-robust Wald statistic on the instrument in the reduced form.

    AR = (delta_RF / se_cluster(delta_RF))^2 from regressing the outcome on
    the (within-transformed) instrument plus exogenous columns.  In the
    just-identified case this equals the Anderson-Rubin test of a zero
    structural coefficient and stays valid under weak instruments.
    """
    if len(spec.instruments) != 1 or len(spec.endog) != 1:
        raise InvalidParameterError("anderson_rubin needs a single-instrument spec")
    z = spec.instruments[0]
    rf_spec = DesignSpec(outcome=spec.outcome, exog=(z, *spec.exog),
                         fixed_effects=spec.fixed_effects, cluster=spec.cluster)
    rf = ols_fit(panel, rf_spec, threads=threads, tol=tol, max_sweeps=max_sweeps)
    se = rf.se_of(z)
    if se == 0:
        return float("inf")
    return float((rf.coef_of(z) / se) ** 2)


def heterogeneity_fit(panel, method: str = "2sls", threads: int = 1,
                      tol: float = 1e-10, max_sweeps: int = 100) -> FitResult:
    """Key-player / old-friend decomposition: y on (x_kp, x_of), both FE dims.

    2SLS instruments the pair with the correspondingly restricted
    second-degree lags (z_kp_lag, z_of_lag); the omitted category is recent
    non-key-player friends.  A column with no variation (e.g. x_of all zero)
    is dropped with a diagnostic instead of failing.
    """
    if method == "2sls":
        spec = DesignSpec(outcome="y", endog=("x_kp", "x_of"),
                          instruments=("z_kp_lag", "z_of_lag"))
        return tsls_fit(panel, spec, threads=threads, tol=tol, max_sweeps=max_sweeps)
    if method == "ols":
        spec = DesignSpec(outcome="y", endog=("x_kp", "x_of"))
        return ols_fit(panel, spec, threads=threads, tol=tol, max_sweeps=max_sweeps)
    raise InvalidParameterError(f"unknown method {method!r}")


PLAYTIME_COVARIATES = ("num_games", "num_groups", "start_week", "num_friends",
                       "owns_smb", "owns_nv")


def playtime_fit(rows, variant: int = 2, threads: int = 1) -> FitResult:
    """Cross-sectional OLS of log playtime with HC1 standard errors.

    Variants select the peer dummies: 1 = no_friend_purchase only; 2/3/4 =
    kp_purchase + of_purchase + no_friend_purchase (3 and 4 are meant for
    game-restricted row subsets — the caller filters the rows).  The
    covariate vector and an intercept always enter; covariates without
    variation in the sample are dropped with a diagnostic.
    """
    if variant not in (1, 2, 3, 4):
        raise InvalidParameterError("variant must be 1..4")
    if not rows:
        raise InvalidParameterError("empty playtime cross-section")
    dummies = ("no_friend_purchase",) if variant == 1 else \
        ("kp_purchase", "of_purchase", "no_friend_purchase")
    names = (*dummies, *PLAYTIME_COVARIATES)
    table = {name: np.asarray([getattr(r, name) for r in rows], dtype=np.float64)
             for name in names}
    table["log_playtime"] = np.asarray([r.log_playtime for r in rows], dtype=np.float64)
    spec = DesignSpec(outcome="log_playtime", exog=names, fixed_effects=(),
                      cluster=None)
    fit = ols_fit(table, spec, threads=threads)
    fit.model = f"playtime_v{variant}"
    return fit
