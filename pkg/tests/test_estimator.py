"""Within transform, OLS/2SLS, clustered covariance, and wrapper fits.

Every numerical claim is checked against a second route: dense dummy-matrix
least squares, textbook closed forms, per-cluster python loops, or exact
Fraction arithmetic.
"""

import numpy as np
import pytest

from peerfx import (
    DesignSpec,
    InsufficientClustersError,
    InvalidParameterError,
    RankDeficientError,
    WeakIdentificationError,
    anderson_rubin,
    clustered_vcov,
    heterogeneity_fit,
    ols_fit,
    playtime_fit,
    tsls_fit,
    within_transform,
)
from peerfx.panel import PlaytimeRow

from conftest import (
    cr1_sandwich_fractions,
    cr1_sandwich_loop,
    demean_oracle,
    lsdv_oracle,
    toy_panel,
    tsls_closed_form,
)


def group_mean_absmax(col, codes):
    sums = np.bincount(codes, weights=col)
    cnts = np.bincount(codes)
    return np.abs(sums / cnts).max()


# ---------------------------------------------------------------------------
# within transform


def test_within_single_dim_is_one_pass():
    rng = np.random.default_rng(0)
    d = toy_panel(rng)
    res = within_transform(d, ["y", "x"], fe_dims=("player",))
    assert res.converged
    assert group_mean_absmax(res.columns["y"], d["player"]) < 1e-12


def test_within_two_way_kills_both_margins():
    rng = np.random.default_rng(1)
    d = toy_panel(rng)
    res = within_transform(d, ["y"], fe_dims=("player", "week"))
    assert res.converged
    assert group_mean_absmax(res.columns["y"], d["player"]) < 1e-10
    assert group_mean_absmax(res.columns["y"], d["week"]) < 1e-10


def test_within_absorbs_player_constant_column():
    rng = np.random.default_rng(2)
    d = toy_panel(rng)
    d["c"] = rng.normal(0, 5, 8)[d["player"]]  # varies only across players
    res = within_transform(d, ["c"], fe_dims=("player",))
    assert np.abs(res.columns["c"]).max() < 1e-12


def test_within_balanced_converges_in_one_cycle():
    rng = np.random.default_rng(3)
    d = toy_panel(rng)
    res = within_transform(d, ["y"], fe_dims=("player", "week"))
    assert res.iterations <= 2  # balanced: exact after one sweep pair


def test_within_unbalanced_matches_dense_residualization():
    rng = np.random.default_rng(4)
    d = toy_panel(rng, n_players=10, n_weeks=8)
    keep = rng.random(d["y"].size) > 0.25
    d = {k: v[keep] for k, v in d.items()}
    res = within_transform(d, ["y", "x", "z"])
    want = demean_oracle({k: d[k] for k in ("y", "x", "z")},
                         d["player"], d["week"])
    for name in ("y", "x", "z"):
        assert np.abs(res.columns[name] - want[name]).max() < 1e-8


def test_within_no_dims_is_identity():
    rng = np.random.default_rng(5)
    d = toy_panel(rng)
    res = within_transform(d, ["y"], fe_dims=())
    assert res.iterations == 0
    assert np.array_equal(res.columns["y"], d["y"])


# ---------------------------------------------------------------------------
# OLS


def test_ols_outcome_on_itself():
    rng = np.random.default_rng(6)
    d = toy_panel(rng)
    d["y2"] = d["y"].copy()
    fit = ols_fit(d, DesignSpec(outcome="y", exog=("y2",)))
    assert fit.coef_of("y2") == pytest.approx(1.0, abs=1e-12)
    assert fit.n_obs == 48


def test_ols_matches_dummy_regression():
    rng = np.random.default_rng(7)
    d = toy_panel(rng, n_players=12, n_weeks=7)
    fit = ols_fit(d, DesignSpec(outcome="y", exog=("x", "z")))
    want = lsdv_oracle(d["y"], np.column_stack([d["x"], d["z"]]),
                       d["player"], d["week"])
    assert fit.coef_of("x") == pytest.approx(want[0], abs=1e-8)
    assert fit.coef_of("z") == pytest.approx(want[1], abs=1e-8)


def test_ols_no_fe_adds_intercept():
    rng = np.random.default_rng(8)
    d = toy_panel(rng)
    fit = ols_fit(d, DesignSpec(outcome="y", exog=("x",), fixed_effects=(),
                                cluster=None))
    D = np.column_stack([d["x"], np.ones(d["y"].size)])
    want, *_ = np.linalg.lstsq(D, d["y"], rcond=None)
    assert fit.terms == ("x", "const")
    assert np.abs(fit.coef - want).max() < 1e-10


def test_ols_duplicate_column_names_the_culprit():
    rng = np.random.default_rng(9)
    d = toy_panel(rng)
    d["x_copy"] = d["x"].copy()
    with pytest.raises(RankDeficientError) as err:
        ols_fit(d, DesignSpec(outcome="y", exog=("x", "x_copy")))
    assert "x" in str(err.value)


def test_ols_degenerate_column_dropped_with_note():
    rng = np.random.default_rng(10)
    d = toy_panel(rng)
    d["flat"] = rng.normal(0, 1, 8)[d["player"]]  # absorbed by player FE
    fit = ols_fit(d, DesignSpec(outcome="y", exog=("x", "flat")))
    assert fit.dropped == ("flat",)
    solo = ols_fit(d, DesignSpec(outcome="y", exog=("x",)))
    assert fit.coef_of("x") == pytest.approx(solo.coef_of("x"), abs=1e-12)


def test_ols_insufficient_clusters():
    d = {"y": np.arange(5.0), "x": np.arange(5.0) ** 2,
         "cl": np.full(5, 7.0)}
    with pytest.raises(InsufficientClustersError):
        ols_fit(d, DesignSpec(outcome="y", exog=("x",), fixed_effects=(),
                              cluster="cl"))


def test_ols_counts_singleton_clusters():
    rng = np.random.default_rng(11)
    n = 12
    d = {"y": rng.normal(0, 1, n), "x": rng.normal(0, 1, n),
         "g": np.array([0, 0, 0, 0, 0, 1, 1, 1, 1, 2, 3, 4], dtype=np.float64)}
    fit = ols_fit(d, DesignSpec(outcome="y", exog=("x",), fixed_effects=(),
                                cluster="g"))
    assert fit.n_clusters == 5
    assert fit.n_singletons == 3


# ---------------------------------------------------------------------------
# clustered covariance


def test_cluster_vcov_matches_loop_oracle():
    rng = np.random.default_rng(12)
    d = toy_panel(rng, n_players=9, n_weeks=5)
    fit = ols_fit(d, DesignSpec(outcome="y", exog=("x",), fixed_effects=(),
                                cluster="player"))
    X = np.column_stack([d["x"], np.ones(d["y"].size)])
    u = d["y"] - X @ fit.coef
    want = cr1_sandwich_loop(u, X, X, d["player"].tolist())
    assert np.abs(fit.vcov - want).max() < 1e-10


def test_cluster_vcov_exact_fraction_oracle():
    y = [3, -1, 4, 1, -5, 9, 2, -6, 5, 3, 5, -8]
    x = [2, 1, -3, 4, 1, -2, 5, 1, -4, 2, 2, -1]
    clusters = [0, 0, 0, 0, 0, 1, 1, 1, 2, 2, 2, 2]
    beta, var = cr1_sandwich_fractions(y, x, clusters)
    X = np.asarray(x, dtype=np.float64)[:, None]
    u = np.asarray(y, dtype=np.float64) - float(beta) * X[:, 0]
    V = clustered_vcov(u, X, clusters)
    assert abs(V[0, 0] - float(var)) < 1e-12 * max(1.0, float(var))


def test_hc1_is_singleton_cluster_case():
    rng = np.random.default_rng(13)
    d = toy_panel(rng)
    fit = ols_fit(d, DesignSpec(outcome="y", exog=("x",), fixed_effects=(),
                                cluster=None))
    X = np.column_stack([d["x"], np.ones(d["y"].size)])
    u = d["y"] - X @ fit.coef
    want = cr1_sandwich_loop(u, X, X, list(range(u.size)))
    assert np.abs(fit.vcov - want).max() < 1e-12
    assert fit.n_clusters == u.size and fit.n_singletons == 0


def test_vcov_positive_semidefinite():
    rng = np.random.default_rng(14)
    for trial in range(8):
        d = toy_panel(rng, n_players=6 + trial, n_weeks=4,
                      binary=trial % 2 == 0)
        fit = ols_fit(d, DesignSpec(outcome="y", exog=("x", "z")))
        assert np.linalg.eigvalsh(fit.vcov).min() >= -1e-10


def test_cluster_vcov_public_raises_on_one_cluster():
    X = np.ones((4, 1))
    with pytest.raises(InsufficientClustersError):
        clustered_vcov(np.ones(4), X, [3, 3, 3, 3])


def test_cluster_se_near_classical_when_homoskedastic():
    # iid errors, strictly exogenous x: CR1 and the classical within-OLS
    # standard error should agree to ~10% at this size
    rng = np.random.default_rng(15)
    P, W = 1000, 10
    player = np.repeat(np.arange(P), W)
    week = np.tile(np.arange(W), P)
    x = rng.normal(0, 1, P * W)
    y = (0.5 * x + rng.normal(0, 1, P)[player] + rng.normal(0, 1, W)[week]
         + rng.normal(0, 1, P * W))
    d = {"player": player, "week": week, "x": x, "y": y}
    fit = ols_fit(d, DesignSpec(outcome="y", exog=("x",)))
    res = within_transform(d, ["y", "x"])
    xt, yt = res.columns["x"], res.columns["y"]
    b = float(xt @ yt / (xt @ xt))
    u = yt - b * xt
    dof = P * W - 1 - (P - 1) - (W - 1) - 1
    se_classical = float(np.sqrt(u @ u / dof / (xt @ xt)))
    assert fit.se_of("x") == pytest.approx(se_classical, rel=0.10)


# ---------------------------------------------------------------------------
# 2SLS


def test_tsls_collapses_to_ols_when_instrument_is_regressor():
    rng = np.random.default_rng(16)
    d = toy_panel(rng)
    d["zx"] = d["x"].copy()
    iv = tsls_fit(d, DesignSpec(outcome="y", endog=("x",), instruments=("zx",)),
                  attach_diagnostics=False)
    ols = ols_fit(d, DesignSpec(outcome="y", exog=("x",)))
    assert iv.coef_of("x") == pytest.approx(ols.coef_of("x"), abs=1e-10)


def test_tsls_closed_form_no_fe():
    rng = np.random.default_rng(17)
    d = toy_panel(rng)
    fit = tsls_fit(d, DesignSpec(outcome="y", endog=("x",), instruments=("z",),
                                 fixed_effects=(), cluster=None),
                   attach_diagnostics=False)
    n = d["y"].size
    X = np.column_stack([d["x"], np.ones(n)])
    Z = np.column_stack([d["z"], np.ones(n)])
    want = tsls_closed_form(d["y"], X, Z)
    assert np.abs(fit.coef - want).max() < 1e-10


def test_tsls_closed_form_two_way_fe():
    rng = np.random.default_rng(18)
    d = toy_panel(rng, n_players=11, n_weeks=6)
    fit = tsls_fit(d, DesignSpec(outcome="y", endog=("x",), instruments=("z",)),
                   attach_diagnostics=False)
    wd = demean_oracle({k: d[k] for k in ("y", "x", "z")}, d["player"], d["week"])
    want = tsls_closed_form(wd["y"], wd["x"][:, None], wd["z"][:, None])
    assert fit.coef_of("x") == pytest.approx(want[0], abs=1e-8)


def test_tsls_equals_reduced_form_over_first_stage():
    rng = np.random.default_rng(19)
    d = toy_panel(rng)
    iv = tsls_fit(d, DesignSpec(outcome="y", endog=("x",), instruments=("z",)))
    rf = ols_fit(d, DesignSpec(outcome="y", exog=("z",)))
    fs = ols_fit(d, DesignSpec(outcome="x", exog=("z",)))
    ratio = rf.coef_of("z") / fs.coef_of("z")
    assert iv.coef_of("x") == pytest.approx(ratio, abs=1e-10)


def test_tsls_attaches_first_stage_and_ar():
    rng = np.random.default_rng(20)
    d = toy_panel(rng)
    iv = tsls_fit(d, DesignSpec(outcome="y", endog=("x",), instruments=("z",)))
    fs = iv.first_stage
    assert fs.model == "first_stage"
    assert fs.stats["instrument_wald"] > 10  # strong by construction
    assert iv.ar_stat == pytest.approx(
        anderson_rubin(d, DesignSpec(outcome="y", endog=("x",),
                                     instruments=("z",))), abs=1e-12)
    assert iv.stats["first_stage_wald"] == fs.stats["instrument_wald"]


def test_tsls_orthogonal_instrument_raises_weak():
    d = {"y": np.array([1.0, 2.0, 3.0, 4.0]),
         "x": np.array([1.0, -1.0, 1.0, -1.0]),
         "z": np.array([1.0, 1.0, -1.0, -1.0])}
    with pytest.raises(WeakIdentificationError) as err:
        tsls_fit(d, DesignSpec(outcome="y", endog=("x",), instruments=("z",),
                               fixed_effects=(), cluster=None))
    assert err.value.first_stage_stat == pytest.approx(0.0, abs=1e-20)


def test_tsls_scale_equivariance():
    rng = np.random.default_rng(21)
    d = toy_panel(rng)
    base = tsls_fit(d, DesignSpec(outcome="y", endog=("x",), instruments=("z",)),
                    attach_diagnostics=False)
    c = 3.7
    d2 = dict(d)
    d2["x"] = d["x"] * c
    scaled = tsls_fit(d2, DesignSpec(outcome="y", endog=("x",),
                                     instruments=("z",)),
                      attach_diagnostics=False)
    assert scaled.coef_of("x") == pytest.approx(base.coef_of("x") / c, rel=1e-10)
    assert scaled.se_of("x") == pytest.approx(base.se_of("x") / c, rel=1e-10)
    d3 = dict(d)
    d3["z"] = d["z"] * c  # instrument scale must not matter at all
    rescaled = tsls_fit(d3, DesignSpec(outcome="y", endog=("x",),
                                       instruments=("z",)),
                        attach_diagnostics=False)
    assert rescaled.coef_of("x") == pytest.approx(base.coef_of("x"), rel=1e-10)


def test_anderson_rubin_scale_invariant():
    rng = np.random.default_rng(22)
    d = toy_panel(rng)
    spec = DesignSpec(outcome="y", endog=("x",), instruments=("z",))
    base = anderson_rubin(d, spec)
    d2 = dict(d)
    d2["z"] = d["z"] * 10.0
    assert anderson_rubin(d2, spec) == pytest.approx(base, rel=1e-10)
    d3 = dict(d)
    d3["z"] = -d["z"]
    assert anderson_rubin(d3, spec) == pytest.approx(base, rel=1e-10)


def test_anderson_rubin_is_squared_reduced_form_t():
    rng = np.random.default_rng(23)
    d = toy_panel(rng)
    rf = ols_fit(d, DesignSpec(outcome="y", exog=("z",)))
    want = (rf.coef_of("z") / rf.se_of("z")) ** 2
    got = anderson_rubin(d, DesignSpec(outcome="y", endog=("x",),
                                       instruments=("z",)))
    assert got == pytest.approx(want, rel=1e-12)


def test_design_spec_validation():
    with pytest.raises(InvalidParameterError):
        DesignSpec(outcome="y", endog=("x",), instruments=("z1", "z2"))
    with pytest.raises(InvalidParameterError):
        DesignSpec(outcome="y", endog=("a", "b", "c"),
                   instruments=("d", "e", "f"))
    with pytest.raises(InvalidParameterError):
        DesignSpec(outcome="y", endog=("x",), instruments=("w",), exog=("w",))
    with pytest.raises(InvalidParameterError):
        ols_fit({"y": np.ones(3)}, DesignSpec(outcome="y", endog=("x",),
                                              instruments=("z",)))
    with pytest.raises(InvalidParameterError):
        tsls_fit({"y": np.ones(3)}, DesignSpec(outcome="y", exog=("x",)))


# ---------------------------------------------------------------------------
# heterogeneity decomposition


def het_panel(rng, zero_of=False):
    d = toy_panel(rng, n_players=14, n_weeks=8)
    n = d["y"].size
    d["z_kp_lag"] = rng.normal(0, 1, n)
    d["z_of_lag"] = rng.normal(0, 1, n)
    d["x_kp"] = 0.9 * d["z_kp_lag"] + 0.1 * d["z_of_lag"] + rng.normal(0, 1, n)
    d["x_of"] = (np.zeros(n) if zero_of
                 else 0.2 * d["z_kp_lag"] + 0.8 * d["z_of_lag"] + rng.normal(0, 1, n))
    d["y"] = 0.3 * d["x_kp"] + 0.7 * d["x_of"] + d["y"]
    return d


def test_heterogeneity_matches_two_endog_closed_form():
    rng = np.random.default_rng(24)
    d = het_panel(rng)
    fit = heterogeneity_fit(d, method="2sls")
    names = ("y", "x_kp", "x_of", "z_kp_lag", "z_of_lag")
    wd = demean_oracle({k: d[k] for k in names}, d["player"], d["week"])
    want = tsls_closed_form(wd["y"],
                            np.column_stack([wd["x_kp"], wd["x_of"]]),
                            np.column_stack([wd["z_kp_lag"], wd["z_of_lag"]]))
    assert fit.coef_of("x_kp") == pytest.approx(want[0], abs=1e-8)
    assert fit.coef_of("x_of") == pytest.approx(want[1], abs=1e-8)
    assert isinstance(fit.first_stage, tuple) and len(fit.first_stage) == 2


def test_heterogeneity_drops_flat_endog_pairwise():
    rng = np.random.default_rng(25)
    d = het_panel(rng, zero_of=True)
    fit = heterogeneity_fit(d, method="2sls")
    assert "x_of" in fit.dropped
    assert "x_of" not in fit.terms
    solo = tsls_fit(d, DesignSpec(outcome="y", endog=("x_kp",),
                                  instruments=("z_kp_lag",)),
                    attach_diagnostics=False)
    assert fit.coef_of("x_kp") == pytest.approx(solo.coef_of("x_kp"), abs=1e-12)


def test_heterogeneity_ols_and_bad_method():
    rng = np.random.default_rng(26)
    d = het_panel(rng)
    fit = heterogeneity_fit(d, method="ols")
    assert fit.model == "ols" and set(fit.terms) == {"x_kp", "x_of"}
    with pytest.raises(InvalidParameterError):
        heterogeneity_fit(d, method="gmm")


# ---------------------------------------------------------------------------
# playtime cross-section fit


def make_rows(rng, n=20, flat_nv=True):
    rows = []
    for i in range(n):
        kp = int(rng.random() < 0.3)
        of = int(rng.random() < 0.3)
        nf = int(kp == 0 and of == 0 and rng.random() < 0.5)
        rows.append(PlaytimeRow(
            player=i, game="SMB",
            log_playtime=float(rng.normal(2.8, 1.0)),
            kp_purchase=kp, of_purchase=of, no_friend_purchase=nf,
            num_games=float(rng.integers(1, 40)),
            num_groups=float(rng.integers(0, 8)),
            start_week=float(rng.integers(0, 50)),
            num_friends=int(rng.integers(1, 30)),
            owns_smb=1, owns_nv=0 if flat_nv else int(rng.random() < 0.5)))
    return rows


def test_playtime_variant_terms():
    rng = np.random.default_rng(27)
    rows = make_rows(rng, flat_nv=False)
    v1 = playtime_fit(rows, variant=1)
    v2 = playtime_fit(rows, variant=2)
    assert "kp_purchase" not in v1.terms and "no_friend_purchase" in v1.terms
    assert {"kp_purchase", "of_purchase", "no_friend_purchase"} < set(v2.terms)
    assert v1.model == "playtime_v1" and v2.model == "playtime_v2"
    assert v2.cluster is None


def test_playtime_matches_dense_regression():
    rng = np.random.default_rng(28)
    rows = make_rows(rng, flat_nv=False)
    fit = playtime_fit(rows, variant=2)
    cols = [np.array([getattr(r, t) for r in rows], dtype=np.float64)
            for t in fit.terms if t != "const"]
    D = np.column_stack(cols + [np.ones(len(rows))])
    y = np.array([r.log_playtime for r in rows])
    want, *_ = np.linalg.lstsq(D, y, rcond=None)
    assert np.abs(fit.coef - want).max() < 1e-8
    u = y - D @ fit.coef
    V = cr1_sandwich_loop(u, D, D, list(range(len(rows))))
    assert np.abs(fit.vcov - V).max() < 1e-10


def test_playtime_drops_flat_covariates():
    rng = np.random.default_rng(29)
    rows = make_rows(rng, flat_nv=True)  # owns_smb and owns_nv constant
    fit = playtime_fit(rows, variant=2)
    assert set(fit.dropped) == {"owns_smb", "owns_nv"}


def test_playtime_bad_inputs():
    rng = np.random.default_rng(30)
    rows = make_rows(rng)
    with pytest.raises(InvalidParameterError):
        playtime_fit(rows, variant=5)
    with pytest.raises(InvalidParameterError):
        playtime_fit([], variant=1)


# ---------------------------------------------------------------------------
# result object surface


def test_fit_result_summary_and_confint():
    rng = np.random.default_rng(31)
    d = toy_panel(rng)
    fit = ols_fit(d, DesignSpec(outcome="y", exog=("x",)))
    text = fit.summary()
    assert "x" in text and "cluster" in text.lower()
    lo, hi = fit.conf_int(0.95)[0]
    assert lo < fit.coef_of("x") < hi
    wide = fit.conf_int(0.99)[0]
    assert wide[0] < lo and hi < wide[1]
    rows = fit.csv_rows(prefix="ols_")
    assert rows[0][0] == "ols_x"
