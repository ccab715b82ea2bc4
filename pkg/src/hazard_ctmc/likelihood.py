"""Exact probabilities and gradients under the cumulative CTMC.

Three observation models are covered:

* full sequences (the chain run to completion, no observation time);
* partial sequences / sets observed at a known time ``t``;
* partial sequences / sets observed at an unknown time ``T ~ Exp(1)``.

Set probabilities sum over all orderings of the set, so they are limited to
sets of at most ``enum_cap`` items (default 10).
"""

import itertools
import math

import numpy as np

from . import kernels
from .hypoexp import hypoexp_cdf, log_stage_prob_and_grad, stage_prob  # noqa: F401
from .model import ItemSet, ParamMatrix, PreconditionError, as_sequence

ENUM_CAP = 10


class EnumerationTooLarge(PreconditionError):
    """Exact enumeration over orderings was requested for too large a set."""


def theta_array(theta):
    if isinstance(theta, ParamMatrix):
        return theta.theta
    arr = np.ascontiguousarray(theta, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise PreconditionError(f"theta must be square, got {arr.shape}")
    return arr


def set_items(s, n):
    if isinstance(s, ItemSet):
        if s.n != n:
            raise PreconditionError(f"item set capacity {s.n} does not match n={n}")
        return s.as_array()
    return as_sequence(sorted(int(i) for i in s), n)


def _check_cap(k, enum_cap):
    if k > enum_cap:
        raise EnumerationTooLarge(
            f"set of size {k} needs {math.factorial(k)} orderings; enumeration cap is "
            f"{enum_cap} (raise enum_cap or use the MCMC estimator)"
        )


# -- full sequences -----------------------------------------------------------

def full_sequence_logprob(theta, sigma):
    th = theta_array(theta)
    seq = as_sequence(sigma, th.shape[0])
    if seq.size != th.shape[0]:
        raise PreconditionError("sigma must be a permutation of all items")
    return float(kernels.full_seq_logp(th, seq))


def full_sequence_prob(theta, sigma):
    return math.exp(full_sequence_logprob(theta, sigma))


# -- known observation time ---------------------------------------------------

def partial_sequence_given_time_logprob(theta, sigma, t):
    """log p(sigma | t): first ``k`` jumps follow ``sigma`` and ``T_k <= t < T_{k+1}``.

    The holding time before jump ``i`` has rate equal to the exit rate of the
    state ``sigma[:i-1]`` it leaves.
    """
    th = theta_array(theta)
    seq = as_sequence(sigma, th.shape[0])
    if t < 0:
        raise PreconditionError("t must be nonnegative")
    log_path = kernels.full_seq_logp(th, seq)
    lam = kernels.exit_rates_along(th, seq)
    p_time = stage_prob(t, lam)
    return log_path + (math.log(p_time) if p_time > 0 else -math.inf)


def partial_sequence_given_time_prob(theta, sigma, t):
    return math.exp(partial_sequence_given_time_logprob(theta, sigma, t))


def _given_time_perm_terms(th, seq, t):
    """log p(seq | t) and exit-rate gradient coefficients via the matrix exponential."""
    rates = kernels.rates_along(th, seq)
    lam = rates.sum(axis=1)
    k = seq.size
    log_path = float(np.sum(np.log(rates[np.arange(k), seq]) - np.log(lam[:k])))
    log_time, coef = log_stage_prob_and_grad(t, lam)
    coef[:k] -= 1.0 / lam[:k]
    return log_path + log_time, coef


def log_set_given_time_and_grad(theta, s, t, enum_cap=ENUM_CAP):
    """log p(S | t) and its gradient, by enumerating orderings of ``S``."""
    th = theta_array(theta)
    items = set_items(s, th.shape[0])
    _check_cap(items.size, enum_cap)
    if t < 0:
        raise PreconditionError("t must be nonnegative")
    logs, coefs, ok = kernels.given_time_set_terms(th, items, float(t))
    if not ok.all():
        perms = list(itertools.permutations(items.tolist()))
        for c in np.flatnonzero(~ok):
            logs[c], coefs[c] = _given_time_perm_terms(th, np.array(perms[c]), t)
    lse = float(kernels.logsumexp(logs))
    grad = np.zeros_like(th)
    if np.isfinite(lse):
        kernels.accumulate_weighted_orderings(th, items, np.exp(logs - lse), coefs, grad)
    return lse, grad


def diagonal_log_set_given_time_prob(weights, items_mask, t):
    """log p(S | t) for non-interacting items with the given rates."""
    t = np.asarray(t, dtype=float)
    wt = np.multiply.outer(t, weights)
    with np.errstate(divide="ignore"):
        log_in = np.log(-np.expm1(-wt[..., items_mask])).sum(axis=-1)
    return log_in - wt[..., ~items_mask].sum(axis=-1)


def _block_log_set_given_time(th, items, t, enum_cap):
    n = th.shape[0]
    mask = np.zeros(n, dtype=bool)
    mask[items] = True
    if not np.any(th - np.diag(np.diag(th))):
        return diagonal_log_set_given_time_prob(np.exp(np.diag(th)), mask, t)
    _check_cap(items.size, enum_cap)
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    terms = []
    for perm in itertools.permutations(items.tolist()):
        seq = np.array(perm, dtype=np.int64)
        path = kernels.full_seq_logp(th, seq)
        with np.errstate(divide="ignore"):
            terms.append(path + np.log(stage_prob(t_arr, kernels.exit_rates_along(th, seq))))
    terms = np.array(terms)
    mx = terms.max(axis=0)
    safe = np.where(np.isfinite(mx), mx, 0.0)
    with np.errstate(divide="ignore"):
        out = safe + np.log(np.exp(terms - safe).sum(axis=0))
    out = np.where(np.isfinite(mx), out, -np.inf)
    return out if np.ndim(t) else float(out[0])


def log_set_given_time_prob(theta, s, t, enum_cap=ENUM_CAP):
    """log p(S | t), vectorised over ``t``.

    With a declared block structure the value factorises over blocks; blocks
    without interactions use the closed-form product of item probabilities.
    """
    if isinstance(theta, ParamMatrix) and theta.blocks is not None:
        items = set(set_items(s, theta.n).tolist())
        out = 0.0
        for a, b in theta.blocks:
            sub = np.array([i - a for i in range(a, b) if i in items], dtype=np.int64)
            out = out + _block_log_set_given_time(theta.theta[a:b, a:b], sub, t, enum_cap)
        return out
    th = theta_array(theta)
    return _block_log_set_given_time(th, set_items(s, th.shape[0]), t, enum_cap)


def set_given_time_prob(theta, s, t, enum_cap=ENUM_CAP):
    """p(S | t), vectorised over ``t``; see :func:`log_set_given_time_prob`."""
    return np.exp(log_set_given_time_prob(theta, s, t, enum_cap))


# -- unknown observation time -------------------------------------------------

def marginal_sequence_logprob(theta, sigma):
    th = theta_array(theta)
    return float(kernels.marginal_seq_logp(th, as_sequence(sigma, th.shape[0])))


def marginal_sequence_prob(theta, sigma):
    return math.exp(marginal_sequence_logprob(theta, sigma))


def marginal_set_logprob(theta, s, enum_cap=ENUM_CAP):
    th = theta_array(theta)
    items = set_items(s, th.shape[0])
    _check_cap(items.size, enum_cap)
    return float(kernels.logsumexp(kernels.enumerate_logp(th, items)))


def marginal_set_prob(theta, s, enum_cap=ENUM_CAP):
    return math.exp(marginal_set_logprob(theta, s, enum_cap))


def grad_log_marginal_sequence(theta, sigma):
    th = theta_array(theta)
    out = np.zeros_like(th)
    kernels.accumulate_marginal_grad(th, as_sequence(sigma, th.shape[0]), 1.0, out)
    return out


def grad_log_full_sequence(theta, sigma):
    th = theta_array(theta)
    seq = as_sequence(sigma, th.shape[0])
    if seq.size != th.shape[0]:
        raise PreconditionError("sigma must be a permutation of all items")
    out = np.zeros_like(th)
    kernels.accumulate_full_grad(th, seq, 1.0, out)
    return out


def grad_log_marginal_set_exact(theta, s, enum_cap=ENUM_CAP):
    """Posterior-weighted average of the per-ordering gradients."""
    th = theta_array(theta)
    items = set_items(s, th.shape[0])
    _check_cap(items.size, enum_cap)
    out = np.zeros_like(th)
    kernels.exact_set_grad(th, items, 1.0, out)
    return out


def ordering_posterior(theta, s, enum_cap=ENUM_CAP):
    """All orderings of ``S`` (lexicographic) with their probabilities given ``S``."""
    th = theta_array(theta)
    items = set_items(s, th.shape[0])
    _check_cap(items.size, enum_cap)
    logps = kernels.enumerate_logp(th, items)
    perms = [tuple(p) for p in itertools.permutations(sorted(items.tolist()))]
    return perms, np.exp(logps - kernels.logsumexp(logps))


def all_partial_sequences(n):
    """Every ordered duplicate-free sequence over ``range(n)``, including ()."""
    for k in range(n + 1):
        yield from itertools.permutations(range(n), k)


# -- diagonal models by quadrature over the observation time -------------------

_GL_X, _GL_W = np.polynomial.legendre.leggauss(16)
_PANELS = 24


def _log_time_grid(lo, hi):
    edges = np.linspace(lo, hi, _PANELS + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    u = (mid[:, None] + half[:, None] * _GL_X[None, :]).ravel()
    wu = (half[:, None] * _GL_W[None, :]).ravel()
    t = np.exp(u)
    return t, np.log(wu) + u  # dt = t du


def diagonal_log_set_prob_and_grad(diag, s):
    """log p(S) and d/d(diag) for a model without interactions.

    Items are independent given the observation time, so
    ``p(S) = int prod_{j in S} (1 - e^{-w_j t}) prod_{j not in S} e^{-w_j t} e^{-t} dt``,
    evaluated by composite Gauss-Legendre quadrature in ``log t``.
    """
    diag = np.asarray(diag, dtype=float)
    w = np.exp(diag)
    mask = np.zeros(diag.size, dtype=bool)
    mask[np.asarray(list(s), dtype=np.int64)] = True
    k = int(mask.sum())
    c = 1.0 + w[~mask].sum()
    t, logdt = _log_time_grid(math.log(1e-12 / c), math.log((60.0 + 2.0 * k) / c))
    w_in = w[mask]
    wt = np.multiply.outer(t, w_in)
    logf = np.log(-np.expm1(-wt)).sum(axis=1) - c * t + logdt
    lse = float(kernels.logsumexp(logf))
    post = np.exp(logf - lse)
    grad = np.empty(diag.size)
    grad[~mask] = -w[~mask] * (post @ t)
    # d/dtheta log(1 - e^{-w t}) = w t / (e^{w t} - 1)
    grad[mask] = post @ (wt / np.expm1(wt))
    return lse, grad
