import numpy as np
import pytest

import cumident as ci
from cumident import _pipeline
from cumident.errors import IllConditionedError
from cumident.inference import FD_STEP_SCALE
from cumident.simulate import CompositeDgpConfig, _assemble, _draw_primitives, gen_composite


def test_jacobian_identity_coordinate():
    m = ci.raw_moments(np.random.default_rng(0).standard_normal((50, 2)))
    jac = ci.numerical_jacobian(lambda v: v[3], m)
    want = np.zeros((1, 9))
    want[0, 3] = 1.0
    np.testing.assert_allclose(jac, want, atol=1e-8)


def test_jacobian_product_rule():
    m = ci.RawMomentVector(
        values=np.array([2.0, 3.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7]), d=2
    )
    jac = ci.numerical_jacobian(lambda v: v[0] * v[1], m)
    want = np.zeros(9)
    want[:2] = [3.0, 2.0]
    np.testing.assert_allclose(jac[0], want, atol=1e-6)


def test_jacobian_failure_names_coordinate():
    m = ci.raw_moments(np.random.default_rng(1).standard_normal((50, 2)))

    def bad(v):
        if v[4] != m.values[4]:
            raise FloatingPointError("boom")
        return v[0]

    with pytest.raises(RuntimeError, match="monomial"):
        ci.numerical_jacobian(bad, m)


def test_jacobian_of_eigenvector_map_self_consistency():
    # Halving the step must not move the Jacobian beyond the O(step^2) bias.
    x = gen_composite(CompositeDgpConfig(n=4_000, k=0.2, seed=2), 0).x
    probes = ci.ProbeVectors.draw(2, 2)
    m = ci.raw_moments(x)

    def stat(values):
        rows, _, _, _ = _pipeline.demix_rows(values, 2, probes.w1, probes.w2, "A")
        return rows[0]

    jac = ci.numerical_jacobian(stat, m)

    steps = 0.5 * FD_STEP_SCALE * np.maximum(1.0, np.abs(m.values))
    fine = np.empty_like(jac)
    for j in range(m.values.size):
        up, down = m.values.copy(), m.values.copy()
        up[j] += steps[j]
        down[j] -= steps[j]
        fine[:, j] = (stat(up) - stat(down)) / (2.0 * steps[j])
    scale = np.abs(jac).max()
    np.testing.assert_allclose(jac, fine, atol=1e-4 * scale)


def test_delta_variance_psd_and_shapes():
    x = gen_composite(CompositeDgpConfig(n=3_000, k=0.5, seed=3), 0).x
    res = ci.delta_variance(x, ci.ProbeVectors.draw(2, 3), k="all")
    assert res.sigma_u.shape == (4, 4)
    assert res.jacobian.shape == (4, 9)
    evals = np.linalg.eigvalsh(res.sigma_u)
    assert evals.min() > -1e-10 * np.trace(res.sigma_u)


def test_delta_variance_single_row():
    x = gen_composite(CompositeDgpConfig(n=3_000, k=0.0, seed=4), 0).x
    res = ci.delta_variance(x, ci.ProbeVectors.draw(2, 3), k=0)
    assert res.sigma_u.shape == (2, 2)


def test_delta_variance_monomial_alignment():
    # Permuting monomial coordinates consistently in both Sigma_M and the
    # Jacobian leaves the sandwich unchanged.
    x = gen_composite(CompositeDgpConfig(n=2_000, k=0.3, seed=5), 0).x
    res = ci.delta_variance(x, ci.ProbeVectors.draw(2, 3), k=0)
    perm = np.random.default_rng(5).permutation(9)
    sandwich = res.jacobian[:, perm] @ res.sigma_m[np.ix_(perm, perm)] @ res.jacobian[:, perm].T
    np.testing.assert_allclose(sandwich, res.sigma_u, rtol=1e-12)


def test_delta_variance_degenerate_sample_errors():
    x = np.column_stack([np.random.default_rng(6).standard_normal(500),
                         np.full(500, 1.0)])
    with pytest.raises(IllConditionedError):
        ci.delta_variance(x, ci.ProbeVectors.draw(2, 3))


def test_ci_half_widths_shrink_at_root_n():
    probes = ci.ProbeVectors.draw(2, 7)

    def batch(ms):
        values, _ = _pipeline.labeled_entry(
            ms, 2, probes.w1, probes.w2, ci.SUPPLY_DEMAND_PATTERN, (0, 1)
        )
        return values

    cfg = CompositeDgpConfig(n=2_000, k=0.5, seed=11)
    ratios = []
    for rep in range(100):
        s, e, eps, _ = _draw_primitives(cfg, rep, 2_000)
        widths = []
        for n in (1_000, 2_000):
            x = _assemble(cfg, s[:n], e[:n], eps[:n], 0.5)
            res = ci.delta_variance_statistic(x, batch_statistic=batch)
            widths.append(np.sqrt(res.sigma_u[0, 0] / n))
        ratios.append(widths[1] / widths[0])
    assert 0.6 < np.mean(ratios) < 0.8


def test_jackknife_mean_recovers_classical_variance():
    x = np.random.default_rng(8).standard_normal((200, 1))
    res = ci.jackknife_variance(x, lambda sub: sub.mean())
    s2 = x.var(ddof=1)
    np.testing.assert_allclose(res.variance[0, 0], s2 / 200, rtol=1e-10)


def test_jackknife_minimum_sample_size():
    x = np.random.default_rng(9).standard_normal((10, 1))
    with pytest.raises(ValueError):
        ci.jackknife_variance(x, lambda sub: sub.mean())


def test_jackknife_reports_failing_index():
    x = np.random.default_rng(10).standard_normal((40, 1))

    def flaky(sub):
        if sub.shape[0] != 40 and abs(sub[0, 0] - x[1, 0]) < 1e-12:
            raise ZeroDivisionError("synthetic")
        return sub.mean()

    with pytest.raises(RuntimeError, match="row 0"):
        ci.jackknife_variance(x, flaky)


def test_fast_jackknife_matches_generic_closure():
    x = gen_composite(CompositeDgpConfig(n=80, k=0.2, seed=12), 0).x
    probes = ci.ProbeVectors.draw(2, 12)

    fast = ci.demixing_jackknife(x, probes, pattern=ci.SUPPLY_DEMAND_PATTERN,
                                 entry=(0, 1))

    def estimator(sub):
        est = ci.estimate_demixing(sub, probes)
        lab = ci.label_by_signs(est, ci.SUPPLY_DEMAND_PATTERN, on_tie="margin")
        return lab.lambda_final[0, 1]

    slow = ci.jackknife_variance(x, estimator)
    np.testing.assert_allclose(fast.estimates[:, 0], slow.estimates[:, 0],
                               rtol=1e-8, atol=1e-10)
    np.testing.assert_allclose(fast.variance, slow.variance, rtol=1e-6)
    assert fast.label_flips is not None


def test_jackknife_and_delta_agree_at_scale():
    x = gen_composite(CompositeDgpConfig(n=5_000, k=0.5, seed=13), 0).x
    probes = ci.ProbeVectors.draw(2, 13)
    jk = ci.demixing_jackknife(x, probes, pattern=ci.SUPPLY_DEMAND_PATTERN,
                               entry=(0, 1))
    se_jk = np.sqrt(jk.variance[0, 0])

    def batch(ms):
        values, _ = _pipeline.labeled_entry(
            ms, 2, probes.w1, probes.w2, ci.SUPPLY_DEMAND_PATTERN, (0, 1)
        )
        return values

    dv = ci.delta_variance_statistic(x, batch_statistic=batch)
    se_delta = np.sqrt(dv.sigma_u[0, 0] / 5_000)
    assert abs(se_jk - se_delta) / se_delta < 0.25


def test_confidence_interval_examples():
    assert ci.confidence_interval(1.0, 0.0, 50) == (1.0, 1.0)
    lo, hi = ci.confidence_interval(0.0, 1.0, 100, level=0.95)
    assert (hi - lo) / 2 == pytest.approx(0.19600, abs=1e-4)
    with pytest.raises(ValueError):
        ci.confidence_interval(0.0, 1.0, 100, level=1.2)
    with pytest.raises(ValueError):
        ci.confidence_interval(0.0, -1.0, 100)


def test_confidence_interval_matches_textbook_mean_interval():
    rng = np.random.default_rng(14)
    x = rng.standard_normal(400) * 2.0 + 1.0
    var_sqrtn = x.var() # variance of sqrt(n)*(mean - mu) is sigma^2
    lo, hi = ci.confidence_interval(x.mean(), var_sqrtn, 400, 0.95)
    half = 1.959964 * np.sqrt(x.var() / 400)
    assert (hi - lo) / 2 == pytest.approx(half, rel=1e-5)


def test_jackknife_confidence_interval_consistent_with_sqrtn_convention():
    point, var_hat = 2.0, 0.09
    lo1, hi1 = ci.jackknife_confidence_interval(point, var_hat, 0.95)
    lo2, hi2 = ci.confidence_interval(point, var_hat * 123, 123, 0.95)
    assert lo1 == pytest.approx(lo2)
    assert hi1 == pytest.approx(hi2)


def test_delta_variance_labeled_public_helper():
    x = gen_composite(CompositeDgpConfig(n=2_000, k=0.5, seed=14), 0).x
    probes = ci.ProbeVectors.draw(2, 14)
    res = ci.delta_variance_labeled(x, probes, ci.SUPPLY_DEMAND_PATTERN)

    def batch(ms):
        values, _ = _pipeline.labeled_entry(
            ms, 2, probes.w1, probes.w2, ci.SUPPLY_DEMAND_PATTERN, (0, 1)
        )
        return values

    manual = ci.delta_variance_statistic(x, batch_statistic=batch)
    np.testing.assert_array_equal(res.sigma_u, manual.sigma_u)
    with pytest.raises(IllConditionedError):
        bad = np.column_stack([x[:, 0], np.full(len(x), 3.0)])
        ci.delta_variance_labeled(bad, probes, ci.SUPPLY_DEMAND_PATTERN)
