import warnings

import numpy as np
import pytest

import cumident as ci
from cumident.simulate import CompositeDgpConfig, gen_composite
from _designs import TOP_MIX, simulate_top_var


def test_fit_var_white_noise_coefficients_near_zero():
    rng = np.random.default_rng(0)
    y = rng.standard_normal((2_000, 3))
    fit = ci.fit_var(y, p=1)
    # each coefficient has standard error about 1/sqrt(T)
    assert np.abs(fit.coefficients[0]).max() < 3.5 / np.sqrt(2_000)
    assert np.abs(fit.residuals.mean(axis=0)).max() < 1e-12


def test_fit_var_recovers_known_matrix():
    rng = np.random.default_rng(1)
    a1 = 0.5 * np.eye(2)
    y = np.zeros((10_000, 2))
    shocks = rng.standard_normal((10_000, 2))
    for t in range(1, 10_000):
        y[t] = a1 @ y[t - 1] + shocks[t]
    fit = ci.fit_var(y, p=1)
    np.testing.assert_allclose(fit.coefficients[0], a1, atol=0.05)


def test_fit_var_long_lag_shapes():
    rng = np.random.default_rng(2)
    fit = ci.fit_var(rng.standard_normal((400, 3)), p=6)
    assert len(fit.coefficients) == 6
    assert all(c.shape == (3, 3) for c in fit.coefficients)
    assert fit.residuals.shape == (394, 3)


def test_fit_var_length_and_rank_checks():
    rng = np.random.default_rng(3)
    with pytest.raises(ValueError):
        ci.fit_var(rng.standard_normal((10, 3)), p=3)
    base = rng.standard_normal((200, 1))
    dup = np.hstack([base, base])  # collinear lags
    with pytest.raises(ValueError):
        ci.fit_var(dup, p=1)
    with pytest.raises(ValueError):
        ci.fit_var(rng.standard_normal((200, 2)), p=0)


def test_residuals_orthogonal_to_regressors():
    rng = np.random.default_rng(4)
    y = rng.standard_normal((500, 2))
    fit = ci.fit_var(y, p=2)
    lagged = np.hstack([y[1:-1], y[:-2]])
    cross = fit.residuals.T @ lagged / len(lagged)
    assert np.abs(cross).max() < 1e-10


def test_partial_out_orthogonal_controls_demeans():
    rng = np.random.default_rng(5)
    controls = rng.standard_normal((100, 2))
    cc = controls - controls.mean(axis=0)
    raw = rng.standard_normal((100, 2))
    tc = raw - raw.mean(axis=0)
    tc -= cc @ np.linalg.lstsq(cc, tc, rcond=None)[0]  # kill control overlap
    targets = tc + 5.0
    resid = ci.partial_out(targets, controls)
    np.testing.assert_allclose(resid, targets - targets.mean(axis=0), atol=1e-9)


def test_partial_out_of_self_is_zero():
    rng = np.random.default_rng(6)
    c = rng.standard_normal((50, 3))
    np.testing.assert_allclose(ci.partial_out(c, c), 0.0, atol=1e-10)


def test_partial_out_recovers_constructed_noise():
    rng = np.random.default_rng(7)
    c = rng.standard_normal((400, 3))
    beta = np.array([[0.5, -1.0], [2.0, 0.3], [0.0, 1.2]])
    noise = rng.standard_normal((400, 2))
    noise -= noise.mean(axis=0)
    # make the noise exactly orthogonal to the centered controls
    cc = c - c.mean(axis=0)
    noise -= cc @ np.linalg.lstsq(cc, noise, rcond=None)[0]
    targets = 3.0 + c @ beta + noise
    np.testing.assert_allclose(ci.partial_out(targets, c), noise, atol=1e-8)


def test_partial_out_rank_deficient_controls():
    rng = np.random.default_rng(8)
    c = rng.standard_normal((60, 2))
    with pytest.raises(ValueError):
        ci.partial_out(rng.standard_normal((60, 1)), np.hstack([c, c[:, :1]]))


def test_pairwise_top_structure_detected():
    y = simulate_top_var(5_000, np.random.default_rng(9))
    fit = ci.fit_var(y, p=6)
    probes = ci.ProbeVectors.draw(2, 9)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        report = ci.pairwise_overid(fit, probes, alpha=0.05)
    results = {(i, j): res for i, j, res in report.pairs}
    assert report.n_effective == 5_000 - 6
    assert results[(0, 1)].p_value > 1e-3
    assert results[(0, 2)].p_value > 1e-3
    assert results[(1, 2)].p_value < 1e-3


def test_pairwise_independent_shocks_near_nominal():
    rejections, total = 0, 0
    probes = ci.ProbeVectors.draw(2, 10)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for rep in range(25):
            y = simulate_top_var(2_000, np.random.default_rng([10, rep]),
                                 mix=np.eye(3))
            report = ci.pairwise_overid(ci.fit_var(y, p=2), probes, alpha=0.05)
            rejections += len(report.rejected())
            total += len(report.pairs)
    assert rejections / total < 0.15


def test_pairwise_correlated_composite_rejected():
    # feed correlated composite innovations through a VAR(1) and test d=2
    innov = gen_composite(CompositeDgpConfig(n=5_000, k=0.5, seed=11), 0).x
    y = np.zeros_like(innov)
    for t in range(1, len(innov)):
        y[t] = 0.3 * y[t - 1] + innov[t]
    fit = ci.fit_var(y, p=1)
    report = ci.pairwise_overid(fit, ci.ProbeVectors.draw(2, 11), alpha=0.05)
    assert report.pairs[0][2].p_value < 0.01


def test_pairwise_validates_pairs():
    y = np.random.default_rng(12).standard_normal((300, 3))
    fit = ci.fit_var(y, p=1)
    probes = ci.ProbeVectors.draw(2, 12)
    with pytest.raises(ValueError):
        ci.pairwise_overid(fit, probes, pairs=[(0, 5)])


def test_estimated_vs_true_residual_statistics_converge():
    # The statistic on fitted residuals approaches the statistic on the true
    # errors as T grows; the median gap should at least halve from T=2500
    # to T=10000.
    probes = ci.ProbeVectors.draw(2, 13)
    mix = np.array([[1.0, 0.0], [0.5, 1.0]])
    a1 = np.array([[0.4, 0.1], [0.0, 0.3]])
    gaps = {}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for t_len in (2_500, 10_000):
            deltas = []
            for rep in range(60):
                rng = np.random.default_rng([13, t_len, rep])
                u = rng.standard_exponential((t_len + 100, 2)) - 1.0
                e = u @ mix.T
                y = np.zeros((t_len + 100, 2))
                for t in range(1, t_len + 100):
                    y[t] = a1 @ y[t - 1] + e[t]
                y, e = y[100:], e[100:]
                fit = ci.fit_var(y, p=1)
                t_est = ci.wald_test(fit.residuals, probes).statistic
                t_true = ci.wald_test(e[1:], probes).statistic
                deltas.append(abs(t_est - t_true))
            gaps[t_len] = np.median(deltas)
    assert gaps[10_000] < 0.5 * gaps[2_500]


def test_load_series_csv(tmp_path):
    p = tmp_path / "series.csv"
    p.write_text("date,a,b\n2001-01,1.0,2.0\n2001-02,2.0,3.0\n2001-03,3.0,5.0\n")
    out = ci.load_series_csv(p)
    assert out.names == ["a", "b"]
    assert out.date_column == "date"
    assert out.dates == ["2001-01", "2001-02", "2001-03"]
    np.testing.assert_array_equal(out.data, [[1, 2], [2, 3], [3, 5]])


def test_load_series_csv_rejects_missing_values(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("a,b\n1.0,2.0\n,3.0\n")
    with pytest.raises(ValueError, match="missing"):
        ci.load_series_csv(p)


def test_load_series_csv_rejects_ragged_rows(tmp_path):
    p = tmp_path / "ragged.csv"
    p.write_text("a,b\n1.0,2.0\n1.0\n")
    with pytest.raises(ValueError, match="fields"):
        ci.load_series_csv(p)


def test_load_series_csv_named_date_column(tmp_path):
    p = tmp_path / "named.csv"
    p.write_text("t,x,y\n1,1.0,2.0\n2,2.0,3.0\n")
    out = ci.load_series_csv(p, date_column="t")
    assert out.names == ["x", "y"]
    assert out.dates == ["1", "2"]
