"""Two-component 1-D Gaussian mixture over pair similarities, and the
safe/risky partition logic built on its posteriors.

The mixture is fit with plain EM. Initialization is deterministic: means at
the 25th/75th percentiles of the data, both variances at the sample variance,
equal weights. Variances are floored at VARIANCE_FLOOR to keep near-duplicate
inputs from collapsing a component. The posterior reported per point is the
responsibility of the component with the larger mean.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import ConfigurationError, EmptySafeSetError, InputError
from .validation import as_matrix, count_from_percent

VARIANCE_FLOOR = 1e-6
DEFAULT_MAX_ITERS = 100
DEFAULT_TOL = 1e-6


@dataclass
class GmmFit:
    weights: np.ndarray  # (2,), sums to 1; index 1 is the larger-mean component
    means: np.ndarray  # (2,), means[1] >= means[0]
    variances: np.ndarray  # (2,), each >= VARIANCE_FLOOR
    log_likelihood_trace: np.ndarray  # one entry per E-step, non-decreasing
    posteriors: np.ndarray  # (n,) responsibility of the larger-mean component
    converged: bool


@dataclass
class Partition:
    safe_indices: np.ndarray  # sorted ascending
    risky_indices: np.ndarray  # sorted ascending
    safe_ratio_m: float  # percent of the corpus in the safe set
    growth_s: float  # percent added per epoch
    threshold_t: float  # posterior threshold used for the initial split

    @property
    def size(self) -> int:
        return self.safe_indices.size + self.risky_indices.size


def cosine_similarities(image_reps, text_reps) -> np.ndarray:
    """Per-pair inner products s_i = <z_i_image, z_i_text>, clipped to [-1, 1]."""
    zi = as_matrix(image_reps, "image_reps")
    zt = as_matrix(text_reps, "text_reps")
    if zi.shape != zt.shape:
        raise InputError(f"misaligned batches: {zi.shape} vs {zt.shape}")
    return np.clip(np.sum(zi * zt, axis=1), -1.0, 1.0)


def _log_gaussians(x: np.ndarray, weights, means, variances) -> np.ndarray:
    """(n, 2) array of log(w_c) + log N(x; mu_c, var_c)."""
    log_w = np.log(weights)
    return log_w + (-0.5 * np.log(2.0 * np.pi * variances) - (x[:, None] - means) ** 2 / (2.0 * variances))


def _e_step(x, weights, means, variances):
    joint = _log_gaussians(x, weights, means, variances)
    norm = logsumexp(joint, axis=1)
    log_resp = joint - norm[:, None]
    return log_resp, float(np.sum(norm))


def em_fit(similarities, max_iters: int = DEFAULT_MAX_ITERS, tol: float = DEFAULT_TOL) -> GmmFit:
    """Fit the two-component mixture by EM.

    Stops when the log-likelihood improves by less than ``tol`` or after
    ``max_iters`` M-steps. All-identical inputs get the documented degenerate
    fit: both means at the common value, floored variances, posteriors 0.5.
    """
    x = np.asarray(similarities, dtype=np.float64).reshape(-1)
    if x.size < 4:
        raise InputError(f"need at least 4 similarity values, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise InputError("similarities contain non-finite values")

    if x.max() == x.min():
        c = float(x[0])
        weights = np.array([0.5, 0.5])
        means = np.array([c, c])
        variances = np.array([VARIANCE_FLOOR, VARIANCE_FLOOR])
        _, ll = _e_step(x, weights, means, variances)
        return GmmFit(
            weights=weights,
            means=means,
            variances=variances,
            log_likelihood_trace=np.array([ll]),
            posteriors=np.full(x.size, 0.5),
            converged=True,
        )

    weights = np.array([0.5, 0.5])
    means = np.percentile(x, [25.0, 75.0])
    variances = np.full(2, max(float(np.var(x)), VARIANCE_FLOOR))

    trace = []
    log_resp, ll = _e_step(x, weights, means, variances)
    trace.append(ll)
    converged = False
    for _ in range(max_iters):
        resp = np.exp(log_resp)
        totals = resp.sum(axis=0)
        weights = totals / x.size
        means = (resp * x[:, None]).sum(axis=0) / totals
        variances = (resp * (x[:, None] - means) ** 2).sum(axis=0) / totals
        variances = np.maximum(variances, VARIANCE_FLOOR)

        log_resp, ll = _e_step(x, weights, means, variances)
        trace.append(ll)
        if trace[-1] - trace[-2] < tol:
            converged = True
            break

    order = np.argsort(means, kind="stable")  # index 1 = larger mean
    weights = weights[order]
    means = means[order]
    variances = variances[order]
    posteriors = np.exp(log_resp[:, order[1]])
    return GmmFit(
        weights=weights,
        means=means,
        variances=variances,
        log_likelihood_trace=np.asarray(trace),
        posteriors=posteriors,
        converged=converged,
    )


def mixture_posterior(x, weights, means, variances) -> np.ndarray:
    """Posterior of the larger-mean component under given parameters.

    Used as the independent oracle when checking calibration of fitted
    posteriors against the generating distribution.
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    weights = np.asarray(weights, dtype=np.float64)
    means = np.asarray(means, dtype=np.float64)
    variances = np.asarray(variances, dtype=np.float64)
    order = np.argsort(means, kind="stable")
    joint = _log_gaussians(x, weights[order], means[order], variances[order])
    return np.exp(joint[:, 1] - logsumexp(joint, axis=1))


def _ranked_by_posterior(posteriors: np.ndarray) -> np.ndarray:
    """Indices sorted by posterior descending; ties keep the lower pair index first."""
    return np.argsort(-posteriors, kind="stable")


def initial_partition(fit: GmmFit, t: float) -> Partition:
    """Threshold split: safe = {i : p_i > t}; records the resulting safe ratio."""
    if not 0.0 <= t < 1.0:
        raise ConfigurationError(f"threshold t must be in [0, 1), got {t}")
    p = fit.posteriors
    n = p.size
    safe_mask = p > t
    if not np.any(safe_mask):
        raise EmptySafeSetError(f"no pair has posterior > {t}")
    safe = np.flatnonzero(safe_mask)
    risky = np.flatnonzero(~safe_mask)
    return Partition(
        safe_indices=safe,
        risky_indices=risky,
        safe_ratio_m=100.0 * safe.size / n,
        growth_s=0.0,
        threshold_t=t,
    )


def update_partition(fit: GmmFit, previous: Partition, growth_s: float | None = None) -> Partition:
    """Grow the safe ratio by ``growth_s`` percent and take the top-m% by posterior."""
    s = previous.growth_s if growth_s is None else growth_s
    if s <= 0:
        raise ConfigurationError(f"growth s must be > 0, got {s}")
    n = fit.posteriors.size
    if n != previous.size:
        raise InputError(f"posterior count {n} does not cover the previous partition of {previous.size}")
    m = min(previous.safe_ratio_m + s, 100.0)
    k = count_from_percent(m, n)
    ranked = _ranked_by_posterior(fit.posteriors)
    safe = np.sort(ranked[:k])
    risky = np.sort(ranked[k:])
    return Partition(
        safe_indices=safe,
        risky_indices=risky,
        safe_ratio_m=m,
        growth_s=s,
        threshold_t=previous.threshold_t,
    )


def reevaluation_window(previous: Partition, q: float) -> np.ndarray:
    """Validate the fast-refresh window size q (percent) against the next safe ratio.

    The next epoch promotes pairs into the top (m + s)% so the refreshed pool
    must be at least that large.
    """
    needed = previous.safe_ratio_m + previous.growth_s
    if q < needed:
        raise ConfigurationError(
            f"refresh window q={q}% is smaller than the next safe ratio m+s={needed}%"
        )
    return np.array(q, dtype=np.float64)


def reevaluation_indices(posteriors: np.ndarray, q: float) -> np.ndarray:
    """Pairs whose similarities get refreshed: the top-q% by posterior."""
    n = posteriors.size
    k = count_from_percent(min(q, 100.0), n)
    return _ranked_by_posterior(posteriors)[:k]


def fast_reevaluate(
    image_reps,
    text_reps,
    refresh_indices: np.ndarray,
    previous_similarities: np.ndarray,
) -> np.ndarray:
    """Merge freshly computed similarities for ``refresh_indices`` into the previous vector.

    ``image_reps``/``text_reps`` are the re-encoded representations of exactly
    the refreshed pairs, aligned with ``refresh_indices``. Pairs outside the
    window keep their stale similarity values.
    """
    fresh = cosine_similarities(image_reps, text_reps)
    if fresh.size != np.asarray(refresh_indices).size:
        raise InputError("refreshed reps and refresh_indices are misaligned")
    sims = np.array(previous_similarities, dtype=np.float64, copy=True)
    sims[np.asarray(refresh_indices, dtype=np.int64)] = fresh
    return sims
