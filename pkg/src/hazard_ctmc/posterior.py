"""Posterior over the observation time of a sample.

For ``m`` independent items with a shared log-rate ``theta_plus`` and ``k``
of them observed, ``Y = exp(-w t)`` is Beta(alpha, beta) a posteriori with

    alpha = 1/w + (m - k),   beta = k + 1,

which gives the mean and variance of ``t`` through digamma and trigamma.
For general block-diagonal models the density is evaluated on a time grid.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import trapezoid
from scipy.optimize import brentq, minimize_scalar

from . import kernels
from .likelihood import log_set_given_time_prob, marginal_set_prob
from .model import ItemSet, ParamMatrix, PreconditionError
from .rng import derive
from .special import digamma, trigamma

# prior tail mass beyond T_MAX is e^-21 < 1e-9
T_MAX = 21.0
GRID_POINTS = 4000


@dataclass(frozen=True)
class PosteriorSummary:
    mean: float
    variance: float
    alpha: float
    beta: float
    w_plus: float


@dataclass(frozen=True)
class BoundConstants:
    C1: float
    C2: float
    w_plus: float
    t_star: float


def iid_posterior_summary(theta_plus, m, k):
    """Posterior mean and variance of t given ``k`` of ``m`` iid items observed."""
    if m < 1:
        raise PreconditionError("m must be at least 1")
    if not 0 <= k <= m:
        raise PreconditionError(f"k must lie in [0, m], got k={k}, m={m}")
    w = math.exp(theta_plus)
    alpha = 1.0 / w + (m - k)
    beta = k + 1.0
    mean = (digamma(alpha + beta) - digamma(alpha)) / w
    var = (trigamma(alpha) - trigamma(alpha + beta)) / (w * w)
    return PosteriorSummary(mean, var, alpha, beta, w)


def iid_log_density(t, theta_plus, m, k):
    """Unnormalised log posterior density of t (iid items, Exp(1) prior)."""
    w = math.exp(theta_plus)
    t = np.asarray(t, dtype=float)
    with np.errstate(divide="ignore"):
        return k * np.log(-np.expm1(-w * t)) - t * (1.0 + (m - k) * w)


def bound_constants(theta_plus, t_star):
    """C1 = e^{w t*} / w and C2 = (2 - e^{-w t*}) / (w^2 e^{-w t*})."""
    if not t_star > 0:
        raise PreconditionError("t_star must be positive")
    w = math.exp(theta_plus)
    decay = math.exp(-w * t_star)
    return BoundConstants(1.0 / (w * decay), (2.0 - decay) / (w * w * decay), w, t_star)


def bound_minimizer(t_star, which="C1"):
    """The rate w minimising C1 (or C2) at fixed t*."""
    if which == "C1":
        # d/dw log(e^{w t}/w) = t - 1/w
        return 1.0 / t_star
    res = minimize_scalar(
        lambda lw: math.log(bound_constants(lw, t_star).C2),
        bracket=(-5.0, 0.0, 5.0), tol=1e-12,
    )
    return math.exp(res.x)


def default_time_grid(t_max=T_MAX, points=GRID_POINTS):
    return np.linspace(0.0, t_max, points)


def normalize_log_density(t_grid, log_dens):
    """Turn log densities on a grid into densities integrating to 1 (trapezoid)."""
    log_dens = np.asarray(log_dens, dtype=float)
    finite = np.isfinite(log_dens)
    if not finite.any():
        raise PreconditionError("density vanishes on the whole grid")
    dens = np.exp(log_dens - log_dens[finite].max())
    return dens / trapezoid(dens, t_grid)


def grid_moments(t_grid, density):
    mean = trapezoid(t_grid * density, t_grid)
    var = trapezoid((t_grid - mean) ** 2 * density, t_grid)
    return float(mean), float(var)


def block_posterior_density(theta_full, sample, t_grid=None, enum_cap=10):
    """Posterior density of the observation time of ``sample`` on ``t_grid``.

    ``theta_full`` should declare its block structure so that the likelihood
    factorises; each interacting block is enumerated separately.  Returns
    ``(t_grid, density)`` with the density normalised on the grid.
    """
    if not isinstance(theta_full, ParamMatrix):
        theta_full = ParamMatrix(theta_full)
    t = default_time_grid() if t_grid is None else np.asarray(t_grid, dtype=float)
    log_like = log_set_given_time_prob(theta_full, sample, t, enum_cap)
    return t, normalize_log_density(t, log_like - t)


def block_marginal_frequency(theta_d, gamma):
    """Marginal frequency of each item in the symmetric two-item block."""
    th = np.array([[theta_d, gamma], [gamma, theta_d]])
    return marginal_set_prob(th, [0]) + marginal_set_prob(th, [0, 1])


def calibrate_block_diagonals(gamma, target_freq, tol=1e-8, lo=-20.0, hi=10.0):
    """Shared diagonal of a 2x2 block with off-diagonals ``gamma`` that gives
    each item the marginal frequency ``target_freq``."""
    if not 0.0 < target_freq < 1.0:
        raise PreconditionError("target_freq must lie in (0, 1)")

    def gap(d):
        return block_marginal_frequency(d, gamma) - target_freq

    g_lo, g_hi = gap(lo), gap(hi)
    if g_lo > 0 or g_hi < 0:
        raise PreconditionError(
            f"no diagonal in [{lo}, {hi}] reaches frequency {target_freq} at gamma={gamma}"
        )
    d = brentq(gap, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=500)
    if abs(gap(d)) > tol:
        raise PreconditionError(f"calibration missed the target by {abs(gap(d)):.3g}")
    return ParamMatrix(np.array([[d, gamma], [gamma, d]]))


# -- sweeps over the number of extra items ------------------------------------

def _ols_slope(x, y):
    x = np.log(np.asarray(x, float))
    y = np.log(np.asarray(y, float))
    return float(np.polyfit(x, y, 1)[0])


def iid_variance_sweep(theta_plus, m_values, replicates=1000, seed=0):
    """Average posterior variance for iid items across values of ``m``.

    Each replicate draws ``t* ~ Exp(1)`` and the observed count
    ``k ~ Binomial(m, 1 - e^{-w t*})``; the posterior only depends on ``k``.
    Returns a list of dicts with keys m, mean_variance, stderr,
    mean_abs_error (of the posterior mean against t*).
    """
    w = math.exp(theta_plus)
    rows = []
    for m in m_values:
        rng = derive(seed, "variance-sweep", m)
        t_star = rng.exponential(1.0, replicates)
        k = rng.binomial(m, -np.expm1(-w * t_star))
        summ = [iid_posterior_summary(theta_plus, m, int(x)) for x in k]
        var = np.array([s.variance for s in summ])
        err = np.abs(np.array([s.mean for s in summ]) - t_star)
        rows.append({
            "m": int(m),
            "mean_variance": float(var.mean()),
            "stderr": float(var.std(ddof=1) / math.sqrt(replicates)),
            "mean_abs_error": float(err.mean()),
        })
    return rows


def sweep_slope(rows):
    """Least-squares slope of log mean variance against log m."""
    return _ols_slope([r["m"] for r in rows], [r["mean_variance"] for r in rows])


def _block_curves(block, t_grid):
    """log p(S_b | t) on the grid for every subset of a small block."""
    size = block.shape[0]
    curves = np.empty((1 << size, t_grid.size))
    for bits in range(1 << size):
        items = [i for i in range(size) if bits >> i & 1]
        curves[bits] = log_set_given_time_prob(block, items, t_grid)
    return curves


def block_variance_sweep(blocks_for_m, m_values, replicates=1000, seed=0, base=None,
                         label="block-sweep"):
    """Average posterior variance when the extra items come in small blocks.

    ``blocks_for_m(m, rng)`` returns the list of block matrices (numpy
    arrays) making up the ``m`` extra items; ``base`` is an optional model
    block present in every sample.  Each replicate draws ``t* ~ Exp(1)``,
    samples every block at time ``t*``, and evaluates the posterior on the
    default grid.
    """
    t_grid = default_time_grid()
    rows = []
    for m in m_values:
        rng = derive(seed, label, m)
        blocks = list(blocks_for_m(m, rng))
        if base is not None:
            blocks = [np.asarray(base.theta if isinstance(base, ParamMatrix) else base)] + blocks
        curves = {}
        keyed = []
        for b in blocks:
            key = b.tobytes()
            if key not in curves:
                curves[key] = _block_curves(b, t_grid)
            keyed.append(key)
        t_star = rng.exponential(1.0, replicates)
        var = np.empty(replicates)
        err = np.empty(replicates)
        for r in range(replicates):
            log_like = np.zeros(t_grid.size)
            for b, key in zip(blocks, keyed):
                size = b.shape[0]
                u = rng.random(2 * size + 1)
                seq = np.empty(size, dtype=np.int64)
                hold = np.empty(size)
                k = kernels.trajectory_until(b, t_star[r], u, seq, hold)
                bits = 0
                for x in seq[:k]:
                    bits |= 1 << int(x)
                log_like += curves[key][bits]
            dens = normalize_log_density(t_grid, log_like - t_grid)
            mean, var[r] = grid_moments(t_grid, dens)
            err[r] = abs(mean - t_star[r])
        rows.append({
            "m": int(m),
            "mean_variance": float(var.mean()),
            "stderr": float(var.std(ddof=1) / math.sqrt(replicates)),
            "mean_abs_error": float(err.mean()),
        })
    return rows


def iid_blocks(theta_plus):
    """``blocks_for_m`` for m iid items with a shared log-rate."""
    def make(m, rng):
        return [np.array([[float(theta_plus)]])] * m
    return make


def uniform_iid_blocks(low=-3.0, high=-1.0):
    """``blocks_for_m`` for m independent items with log-rates ~ U[low, high]."""
    def make(m, rng):
        return [np.array([[x]]) for x in rng.uniform(low, high, m)]
    return make


def paired_blocks(gamma, target_freq):
    """``blocks_for_m`` for m/2 calibrated two-item blocks with off-diagonals ``gamma``."""
    block = calibrate_block_diagonals(gamma, target_freq).theta

    def make(m, rng):
        if m % 2:
            raise PreconditionError("paired blocks need an even m")
        return [np.array(block)] * (m // 2)
    return make


def sample_items_at(theta, t, rng):
    """Items observed at a fixed time ``t`` (one draw)."""
    th = theta.theta if isinstance(theta, ParamMatrix) else np.asarray(theta, float)
    n = th.shape[0]
    u = rng.random(2 * n + 1)
    seq = np.empty(n, dtype=np.int64)
    hold = np.empty(n)
    k = kernels.trajectory_until(th, float(t), u, seq, hold)
    return ItemSet.from_items(n, seq[:k])
