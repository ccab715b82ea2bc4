"""Sums of independent exponentials with distinct rates.

The closed forms below divide by pairwise rate differences, so they lose
accuracy when rates nearly coincide.  Two safeguards are applied:

* rates closer than ``1e-8`` (relative) are spread apart by a deterministic
  relative jitter of ``1e-7 * index``; for a near-equal pair this keeps the
  result within ~1e-6 of the exact (Erlang) limit;
* if the closed form is still ill-conditioned (three or more near-equal
  rates, tiny probabilities), the value is computed instead from the matrix
  exponential of the pure-birth generator, which is exact for tied rates.

The matrix exponential is taken after shifting by the smallest rate and
rescaling the superdiagonal to ones, so that the wanted entry is an O(1)
divided difference of ``exp`` and keeps full relative accuracy even when the
probability itself is tiny.
"""

import math

import numpy as np
from scipy.linalg import expm

TIE_THRESHOLD = 1e-8
JITTER = 1e-7
# tolerated relative rounding error of the closed form before falling back
MAX_CANCELLATION = 1e-9
_EPS = np.finfo(float).eps


def _separate(rates):
    rates = np.array(rates, dtype=float)
    if rates.size > 1:
        srt = np.sort(rates)
        if np.min(np.diff(srt)) < TIE_THRESHOLD * srt[-1]:
            rates = rates * (1.0 + JITTER * np.arange(rates.size))
    return rates


def _coefficients(rates):
    # c_i = prod_{j != i} 1 / (lam_j - lam_i)
    diff = rates[None, :] - rates[:, None]
    np.fill_diagonal(diff, 1.0)
    return 1.0 / np.prod(diff, axis=1)


def _check_rates(rates, allow_last_zero=False):
    body = rates[:-1] if allow_last_zero else rates
    if np.any(body <= 0) or not np.all(np.isfinite(rates)) or rates[-1] < 0:
        raise ValueError(f"rates must be positive and finite, got {rates}")


def _scaled_generator(y, rates):
    """Shifted, similarity-scaled pure-birth generator times ``y``."""
    size = rates.size
    a = np.diag(-y * (rates - rates.min()))
    a[np.arange(size - 1), np.arange(1, size)] = 1.0
    return a


def log_stage_prob_expm(y, rates):
    """log P(T_k <= y < T_{k+1}) from the matrix exponential (scalar ``y``).

    ``rates`` holds ``k + 1`` rates, positive except possibly the last.
    """
    rates = np.asarray(rates, dtype=float)
    k = rates.size - 1
    if k == 0:
        return -rates[0] * y
    if y == 0.0:
        return -math.inf
    g = expm(_scaled_generator(y, rates))[0, k]
    if g <= 0.0:
        return -math.inf
    with np.errstate(divide="ignore"):
        return float(-rates.min() * y + np.log(y * rates[:k]).sum() + math.log(g))


def _expm_vector(y_arr, rates):
    out = np.array([math.exp(log_stage_prob_expm(t, rates)) for t in y_arr.ravel()])
    out = out.reshape(y_arr.shape)
    return out if y_arr.ndim else float(out)


def _cdf_expm(y_arr, rates):
    # near 1 the complement (sum of the stage probabilities before
    # absorption) keeps more digits than the direct entry
    out = []
    for t in y_arr.ravel():
        direct = math.exp(log_stage_prob_expm(t, np.append(rates, 0.0)))
        if direct > 0.5:
            surv = math.fsum(
                math.exp(log_stage_prob_expm(t, rates[:j + 1])) for j in range(rates.size)
            )
            direct = 1.0 - surv
        out.append(min(max(direct, 0.0), 1.0))
    out = np.array(out).reshape(y_arr.shape)
    return out if y_arr.ndim else float(out)


def hypoexp_cdf(y, rates):
    """P(X_1 + ... + X_r <= y) for independent X_i ~ Exp(rates[i]).

    ``y`` may be a scalar or an array.  An empty rate list is the point mass
    at zero.
    """
    y_arr = np.asarray(y, dtype=float)
    if np.any(y_arr < 0):
        raise ValueError("y must be nonnegative")
    rates = np.asarray(rates, dtype=float).reshape(-1)
    if rates.size == 0:
        return np.ones_like(y_arr) if y_arr.ndim else 1.0
    _check_rates(rates)
    if rates.size == 1:
        out = -np.expm1(-rates[0] * y_arr)
        return out if y_arr.ndim else float(out)
    lam = _separate(rates)
    # F = sum_i prod_{j != i} lam_j / (lam_j - lam_i) * (1 - exp(-lam_i y))
    c = _coefficients(lam) * np.prod(lam) / lam
    out = np.tensordot(-np.expm1(-np.multiply.outer(y_arr, lam)), c, axes=([-1], [0]))
    err = _EPS * np.abs(c).sum() * rates.size
    if np.any(err > MAX_CANCELLATION * np.abs(out)):
        return _cdf_expm(y_arr, rates)
    out = np.clip(out, 0.0, 1.0)
    return out if y_arr.ndim else float(out)


def stage_prob(y, rates):
    """P(T_k <= y < T_{k+1}) where T_i are partial sums of Exp(rates[i]).

    ``rates`` holds ``k + 1`` rates; the last may be 0 (the chain stops after
    ``k`` jumps), in which case this is ``hypoexp_cdf(y, rates[:-1])``.
    Equals ``hypoexp_cdf(y, rates[:k]) - hypoexp_cdf(y, rates)`` but is
    computed without that subtraction.
    """
    y_arr = np.asarray(y, dtype=float)
    rates = np.asarray(rates, dtype=float).reshape(-1)
    if rates.size == 0:
        raise ValueError("need at least one rate")
    if rates[-1] == 0.0:
        return hypoexp_cdf(y, rates[:-1])
    _check_rates(rates)
    if np.any(y_arr < 0):
        raise ValueError("y must be nonnegative")
    k = rates.size - 1
    if k == 0:
        out = np.exp(-rates[0] * y_arr)
        return out if y_arr.ndim else float(out)
    lam = _separate(rates)
    # prod_{i<=k} lam_i * sum_{i<=k+1} exp(-lam_i y) / prod_{j != i} (lam_j - lam_i)
    c = _coefficients(lam) * np.prod(lam[:-1])
    terms = np.exp(-np.multiply.outer(y_arr, lam)) * c
    out = terms.sum(axis=-1)
    err = _EPS * np.abs(terms).sum(axis=-1) * rates.size
    if np.any(err > MAX_CANCELLATION * np.abs(out)):
        return _expm_vector(y_arr, rates)
    out = np.clip(out, 0.0, 1.0)
    return out if y_arr.ndim else float(out)


def log_stage_prob_and_grad(y, rates):
    """log ``stage_prob`` at scalar ``y`` and its gradient in ``rates``.

    The derivative of the matrix exponential comes from the block-triangular
    (Van Loan) identity, which is exact for any rates including ties.
    """
    rates = np.asarray(rates, dtype=float).reshape(-1)
    _check_rates(rates, allow_last_zero=True)
    k = rates.size - 1
    size = k + 1
    grad = np.zeros(size)
    if k == 0:
        grad[0] = -y
        return -rates[0] * y, grad
    if y <= 0.0:
        return -math.inf, grad
    a = _scaled_generator(y, rates)
    big = np.zeros((2 * size, 2 * size))
    big[:size, :size] = a.T
    big[size:, size:] = a.T
    big[0, size + k] = 1.0
    e = expm(big)
    g = e[k, 0]
    if g <= 0.0:
        return -math.inf, grad
    # kmat[i, i] = d g / d a[i, i]; the shift by min(rates) cancels in the log
    kmat = e[:size, size:]
    grad = -y * np.diag(kmat) / g
    grad[:k] += 1.0 / rates[:k]
    log_value = -rates.min() * y + np.log(y * rates[:k]).sum() + math.log(g)
    return float(log_value), grad


def stage_prob_and_grad(y, rates):
    """``stage_prob`` at scalar ``y`` together with its gradient in ``rates``."""
    log_value, dlog = log_stage_prob_and_grad(y, rates)
    value = math.exp(log_value)
    return value, value * dlog
