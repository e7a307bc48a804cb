import itertools

import numpy as np
import pytest

from cumident import (
    contract_hessian,
    cumulant_map,
    monomial_tuples,
    moment_vector_length,
    projected_cumulant,
    raw_moments,
    third_cumulants,
    validate_sample,
)
from _designs import population_contraction


def test_raw_moments_single_row_matches_documented_order():
    m = raw_moments([[1.0, 2.0]])
    np.testing.assert_allclose(m.values, [1, 2, 1, 2, 4, 1, 2, 4, 8])


def test_raw_moments_zero_sample_is_zero():
    m = raw_moments(np.zeros((4, 3)))
    assert np.all(m.values == 0.0)


def test_raw_moments_scalar_sample():
    m = raw_moments([[0.0], [0.0], [3.0]])
    np.testing.assert_allclose(m.values, [1.0, 3.0, 9.0])


def test_raw_moments_lookup_by_monomial():
    m = raw_moments([[1.0, 2.0]])
    assert m[(0, 1)] == 2.0
    assert m[(1, 1, 0)] == 4.0  # sorted to X1*X2^2


def test_moment_vector_length():
    for d in range(1, 6):
        assert moment_vector_length(d) == len(monomial_tuples(d))


def test_validate_sample_rejects_bad_input():
    with pytest.raises(ValueError):
        validate_sample([[1.0, np.nan]])
    with pytest.raises(ValueError):
        validate_sample(np.ones((2, 2, 2)))
    with pytest.raises(ValueError):
        validate_sample(np.ones((1, 2)), min_rows=2)


def test_third_cumulant_scalar_value():
    t = third_cumulants([[0.0], [0.0], [3.0]])
    np.testing.assert_allclose(t, [[[2.0]]])


def test_third_cumulant_symmetric_sample_vanishes():
    a = np.array([[1.0, -2.0], [-1.0, 2.0]])
    np.testing.assert_allclose(third_cumulants(a), 0.0, atol=1e-14)


def test_third_cumulant_needs_two_rows():
    with pytest.raises(ValueError):
        third_cumulants([[1.0, 2.0]])


def test_gamma_diagonal_skewness():
    x = np.random.default_rng(0).standard_exponential((200_000, 2))
    t = third_cumulants(x)
    np.testing.assert_allclose(np.diagonal(t, axis1=1, axis2=2).diagonal(),
                               [2.0, 2.0], atol=0.15)


def test_tensor_symmetry_exact():
    x = np.random.default_rng(1).standard_normal((60, 3)) ** 3
    t = third_cumulants(x)
    for perm in itertools.permutations(range(3)):
        np.testing.assert_array_equal(t, np.transpose(t, perm))


def test_translation_invariance():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((300, 3))
    shift = np.array([5.0, -3.0, 0.25])
    np.testing.assert_allclose(
        third_cumulants(x + shift), third_cumulants(x), atol=1e-11
    )


def test_cumulant_map_matches_tensor():
    rng = np.random.default_rng(3)
    for d in (1, 2, 4, 5):
        x = rng.standard_exponential((180, d))
        got = cumulant_map(raw_moments(x))
        want = third_cumulants(x)
        np.testing.assert_allclose(got, want, rtol=1e-10, atol=1e-12)


def test_cumulant_map_centered_passthrough():
    # degree-1 block zero: the degree-3 block must pass through unchanged
    m = raw_moments([[1.0, -1.0], [-1.0, 1.0]])
    assert np.allclose(m.values[:2], 0.0)
    tensor = cumulant_map(m)
    assert tensor[0, 0, 0] == m[(0, 0, 0)]
    assert tensor[0, 0, 1] == m[(0, 0, 1)]


def test_cumulant_map_point_mass_is_zero():
    m = raw_moments(np.tile([[2.0, -1.0, 0.5]], (7, 1)))
    np.testing.assert_allclose(cumulant_map(m), 0.0, atol=1e-14)


def test_contract_hessian_zero_w():
    x = np.random.default_rng(4).standard_normal((40, 3))
    g = contract_hessian(x, np.zeros(3), order=3)
    np.testing.assert_array_equal(g.matrix, np.zeros((3, 3)))


def test_contract_hessian_scalar_case():
    g = contract_hessian([[0.0], [0.0], [3.0]], [1.0], order=3)
    np.testing.assert_allclose(g.matrix, [[12.0]])


def test_contract_hessian_linearity_in_w():
    x = np.random.default_rng(5).standard_exponential((100, 3))
    w1 = np.array([0.3, -1.0, 0.7])
    w2 = np.array([1.0, 0.5, -0.2])
    lhs = contract_hessian(x, 2.0 * w1 - 0.5 * w2).matrix
    rhs = 2.0 * contract_hessian(x, w1).matrix - 0.5 * contract_hessian(x, w2).matrix
    np.testing.assert_allclose(lhs, rhs, atol=1e-10 * np.abs(rhs).max())


def test_contract_hessian_validates_input():
    x = np.random.default_rng(6).standard_normal((30, 2))
    with pytest.raises(ValueError):
        contract_hessian(x, [1.0], order=3)
    with pytest.raises(ValueError):
        contract_hessian(x, [1.0, np.inf], order=3)
    with pytest.raises(ValueError):
        contract_hessian(x, [1.0, 1.0], order=5)


def test_contract_hessian_population_congruence():
    # On X = A S with independent skewed S, G(w) converges to A D_w A'.
    rng = np.random.default_rng(7)
    a = np.array([[1.0, 0.5, 0.0], [-0.3, 1.0, 0.4], [0.2, -0.1, 1.0]])
    kappa3 = np.array([2.0, 2.0, 2.0])
    s = rng.standard_exponential((100_000, 3)) - 1.0
    x = s @ a.T
    w = np.array([0.9, 0.2, -0.4])
    got = contract_hessian(x, w).matrix
    want = population_contraction(a, kappa3, w)
    rel = np.linalg.norm(got - want) / np.linalg.norm(want)
    assert rel < 0.05


def _numeric_hessian(x, w, order, step=1e-4):
    d = w.size
    h = np.empty((d, d))
    for i in range(d):
        for j in range(d):
            wpp = w.copy(); wpp[i] += step; wpp[j] += step
            wpm = w.copy(); wpm[i] += step; wpm[j] -= step
            wmp = w.copy(); wmp[i] -= step; wmp[j] += step
            wmm = w.copy(); wmm[i] -= step; wmm[j] -= step
            h[i, j] = (
                projected_cumulant(x, wpp, order)
                - projected_cumulant(x, wpm, order)
                - projected_cumulant(x, wmp, order)
                + projected_cumulant(x, wmm, order)
            ) / (4.0 * step**2)
    return h


@pytest.mark.parametrize("order", [3, 4])
def test_hessian_closed_form_matches_finite_differences(order):
    # Gate for the assembled Hessians: they must be the second derivative of
    # the projected sample cumulant, verified numerically.
    rng = np.random.default_rng(8)
    x = rng.standard_exponential((400, 3))
    w = np.array([0.7, -0.3, 1.1])
    closed = contract_hessian(x, w, order=order).matrix
    numeric = _numeric_hessian(x, w, order)
    np.testing.assert_allclose(closed, numeric, rtol=2e-5, atol=1e-7)


def test_fourth_order_population_congruence():
    # X = A S with known excess kurtosis: G4(w) ~ A diag(12 k4 (A'w)^2) A'.
    rng = np.random.default_rng(9)
    a = np.array([[1.0, 0.6], [-0.4, 1.0]])
    s = rng.standard_exponential((400_000, 2)) - 1.0  # excess kurtosis 6
    x = s @ a.T
    w = np.array([0.8, 0.3])
    got = contract_hessian(x, w, order=4).matrix
    want = a @ np.diag(12.0 * 6.0 * (a.T @ w) ** 2) @ a.T
    rel = np.linalg.norm(got - want) / np.linalg.norm(want)
    assert rel < 0.1


def test_moment_vector_length_enforced():
    import cumident as ci
    with pytest.raises(ValueError):
        ci.RawMomentVector(values=np.zeros(7), d=2)  # needs 9 for d=2
