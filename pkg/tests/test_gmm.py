import numpy as np
import pytest
from helpers import random_unit_rows

from safeclip.errors import ConfigurationError, EmptySafeSetError, InputError
from safeclip.gmm import (
    Partition,
    cosine_similarities,
    em_fit,
    fast_reevaluate,
    initial_partition,
    mixture_posterior,
    reevaluation_indices,
    reevaluation_window,
    update_partition,
)
from safeclip.validation import count_from_percent


def two_gaussian_sample(rng, n_lo=500, n_hi=500, mu=(0.2, 0.7), sigma=0.05):
    lo = rng.normal(mu[0], sigma, n_lo)
    hi = rng.normal(mu[1], sigma, n_hi)
    return np.concatenate([lo, hi])


# -------------------------------------------------------------- similarities


def test_cosine_similarity_identity_orthogonal_antipodal():
    a = np.array([[1.0, 0.0], [1.0, 0.0], [1.0, 0.0]])
    b = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]])
    assert np.allclose(cosine_similarities(a, b), [1.0, 0.0, -1.0])


def test_cosine_similarity_rejects_misaligned():
    with pytest.raises(InputError):
        cosine_similarities(np.zeros((3, 2)), np.zeros((2, 2)))


# ------------------------------------------------------------------ EM fit


def test_em_recovers_two_well_separated_means():
    rng = np.random.default_rng(0)
    x = two_gaussian_sample(rng)
    fit = em_fit(x)
    assert abs(fit.means[0] - 0.2) <= 0.02
    assert abs(fit.means[1] - 0.7) <= 0.02
    # posterior at the high mean must identify the high component
    assert mixture_posterior(np.array([0.7]), fit.weights, fit.means, fit.variances)[0] > 0.99


def test_em_posteriors_calibrated_against_true_parameters():
    rng = np.random.default_rng(1)
    x = two_gaussian_sample(rng, n_lo=5000, n_hi=5000)
    fit = em_fit(x)
    oracle = mixture_posterior(x, [0.5, 0.5], [0.2, 0.7], [0.05**2, 0.05**2])
    assert np.mean(np.abs(fit.posteriors - oracle)) < 0.05


def test_em_log_likelihood_trace_non_decreasing():
    rng = np.random.default_rng(2)
    for trial in range(40):
        x = rng.normal(rng.uniform(-1, 1), rng.uniform(0.01, 0.5), int(rng.integers(4, 300)))
        fit = em_fit(x)
        diffs = np.diff(fit.log_likelihood_trace)
        assert np.all(diffs >= -1e-9)


def test_em_degenerate_identical_inputs():
    fit = em_fit(np.full(10, 0.42))
    assert np.allclose(fit.means, 0.42)
    assert np.allclose(fit.posteriors, 0.5)
    assert np.all(fit.variances >= 1e-6)


def test_em_rejects_tiny_input():
    with pytest.raises(InputError):
        em_fit(np.array([0.1, 0.2, 0.3]))


def test_em_weights_sum_to_one_and_variances_floored():
    rng = np.random.default_rng(3)
    x = two_gaussian_sample(rng, n_lo=100, n_hi=100)
    fit = em_fit(x)
    assert fit.weights.sum() == pytest.approx(1.0, abs=1e-9)
    assert np.all(fit.variances >= 1e-6)
    assert fit.means[1] >= fit.means[0]
    assert np.all((fit.posteriors >= 0.0) & (fit.posteriors <= 1.0))


# --------------------------------------------------------------- partitions


def fit_with_posteriors(p):
    """Minimal GmmFit stand-in for partition logic tests."""
    from safeclip.gmm import GmmFit

    p = np.asarray(p, dtype=np.float64)
    return GmmFit(
        weights=np.array([0.5, 0.5]),
        means=np.array([0.0, 1.0]),
        variances=np.array([0.01, 0.01]),
        log_likelihood_trace=np.array([0.0]),
        posteriors=p,
        converged=True,
    )


def test_initial_partition_threshold_semantics():
    part = initial_partition(fit_with_posteriors([0.95, 0.85, 0.99]), t=0.9)
    assert part.safe_indices.tolist() == [0, 2]
    assert part.risky_indices.tolist() == [1]
    assert part.safe_ratio_m == pytest.approx(100.0 * 2 / 3)


def test_initial_partition_empty_safe_set_signaled():
    with pytest.raises(EmptySafeSetError):
        initial_partition(fit_with_posteriors([0.1, 0.5, 0.9]), t=0.9)


def test_initial_partition_zero_threshold_takes_everything():
    part = initial_partition(fit_with_posteriors([0.2, 0.4, 0.9]), t=0.0)
    assert part.safe_indices.tolist() == [0, 1, 2]
    assert part.risky_indices.size == 0


def test_update_partition_grows_by_s_and_counts_match():
    n = 1000
    rng = np.random.default_rng(4)
    p = rng.random(n)
    prev = initial_partition(fit_with_posteriors(p), t=0.9)
    prev.growth_s = 1.0
    updated = update_partition(fit_with_posteriors(p), prev)
    assert updated.safe_ratio_m == pytest.approx(prev.safe_ratio_m + 1.0)
    assert updated.safe_indices.size == count_from_percent(updated.safe_ratio_m, n)
    # disjoint cover
    union = np.union1d(updated.safe_indices, updated.risky_indices)
    assert np.array_equal(union, np.arange(n))
    assert np.intersect1d(updated.safe_indices, updated.risky_indices).size == 0


def test_update_partition_clamps_at_100():
    p = np.linspace(0, 1, 50)
    prev = Partition(
        safe_indices=np.arange(49),
        risky_indices=np.array([49]),
        safe_ratio_m=99.5,
        growth_s=1.0,
        threshold_t=0.9,
    )
    updated = update_partition(fit_with_posteriors(p), prev)
    assert updated.safe_ratio_m == 100.0
    assert updated.safe_indices.size == 50


def test_update_partition_nests_when_posteriors_fixed():
    rng = np.random.default_rng(5)
    p = rng.random(400)
    part = initial_partition(fit_with_posteriors(p), t=0.5)
    part.growth_s = 2.5
    for _ in range(10):
        new = update_partition(fit_with_posteriors(p), part)
        assert np.all(np.isin(part.safe_indices, new.safe_indices))
        part = new


def test_update_partition_tie_break_prefers_lower_index():
    p = np.array([0.9, 0.9, 0.9, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1])
    prev = Partition(
        safe_indices=np.array([0]),
        risky_indices=np.arange(1, 10),
        safe_ratio_m=10.0,
        growth_s=10.0,
        threshold_t=0.9,
    )
    updated = update_partition(fit_with_posteriors(p), prev)
    assert updated.safe_indices.tolist() == [0, 1]


# ----------------------------------------------------------- fast refresh


def test_fast_reevaluate_full_window_equals_full_evaluation():
    rng = np.random.default_rng(6)
    n, d = 40, 5
    img = random_unit_rows(rng, n, d)
    txt = random_unit_rows(rng, n, d)
    stale = rng.random(n)
    posteriors = rng.random(n)
    refresh = reevaluation_indices(posteriors, 100.0)
    merged = fast_reevaluate(img[refresh], txt[refresh], refresh, stale)
    assert np.allclose(merged, cosine_similarities(img, txt))


def test_fast_reevaluate_partial_window_carries_stale_values():
    rng = np.random.default_rng(7)
    n, d = 50, 4
    img = random_unit_rows(rng, n, d)
    txt = random_unit_rows(rng, n, d)
    stale = rng.random(n)
    posteriors = rng.random(n)
    refresh = reevaluation_indices(posteriors, 30.0)
    assert refresh.size == count_from_percent(30.0, n)
    merged = fast_reevaluate(img[refresh], txt[refresh], refresh, stale)
    fresh = cosine_similarities(img, txt)
    untouched = np.setdiff1d(np.arange(n), refresh)
    assert np.array_equal(merged[untouched], stale[untouched])
    assert np.allclose(merged[refresh], fresh[refresh])


def test_reevaluation_window_boundary_and_error():
    prev = Partition(
        safe_indices=np.arange(11),
        risky_indices=np.arange(11, 100),
        safe_ratio_m=11.0,
        growth_s=1.0,
        threshold_t=0.9,
    )
    reevaluation_window(prev, 12.0)  # exactly m + s: minimal legal window
    with pytest.raises(ConfigurationError):
        reevaluation_window(prev, 11.5)
