"""Proximal AdaGrad on the L1-regularised log-likelihood.

The objective is ``F = mean_d log p(S_d) - reg * sum_{i != j} |theta_ij|``,
with ``p(S)`` either marginal over an Exp(1) observation time or conditional
on known observation times.  Training runs in three phases:

1. warm start: ``theta_jj = logit(item frequency)``, clamped to [-10, 2];
2. diagonal pretraining with off-diagonals held at 0 and an exact gradient
   (one-dimensional quadrature over the observation time);
3. off-diagonals drawn from ``Unif[-h, h]``, then full-batch epochs of
   AdaGrad-scaled ascent followed by soft-thresholding of the off-diagonals.

The AdaGrad accumulator is reset between phases 2 and 3.
"""

import logging
import math
import time
import warnings
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import kernels
from .likelihood import (
    ENUM_CAP,
    EnumerationTooLarge,
    diagonal_log_set_prob_and_grad,
    log_set_given_time_and_grad,
    theta_array,
)
from .mcmc import ChainConfig, batch_grad
from .model import Dataset, ParamMatrix, PreconditionError
from .parallel import chunk_bounds, ordered_map
from .rng import child_seed, derive

log = logging.getLogger("hazard_ctmc")

MODES = ("marginal", "given_times", "diagonal_only")
GRADIENTS = ("mcmc", "exact")
TRACES = ("auto", "exact", "estimate", "none")
WARN_DIAGONAL = 8.0


class NumericalError(ArithmeticError):
    """A non-finite value appeared during training."""

    def __init__(self, message, theta=None, sample=None):
        super().__init__(message)
        self.theta = None if theta is None else np.array(theta)
        self.sample = sample


@dataclass(frozen=True)
class FitConfig:
    step_size: float = 1.0
    reg_weight: float = 0.01
    epochs: int = 100
    diag_pretrain_epochs: int = 50
    init_offdiag_halfwidth: float = 0.2
    mcmc: ChainConfig = field(default_factory=ChainConfig)
    seed: int = 0
    mode: str = "marginal"
    adagrad_epsilon: float = 1e-8
    # "exact" enumerates orderings instead of running chains (small sets only)
    gradient: str = "mcmc"
    enum_cap: int = ENUM_CAP
    # objective trace: exact when every set has at most trace_cap items
    trace: str = "auto"
    trace_cap: int = 6
    trace_draws: int = 10
    threads: int = None

    def __post_init__(self):
        if not self.step_size > 0:
            raise PreconditionError("step_size must be positive")
        if self.reg_weight < 0:
            raise PreconditionError("reg_weight must be nonnegative")
        if self.epochs < 0 or self.diag_pretrain_epochs < 0:
            raise PreconditionError("epoch counts must be nonnegative")
        if self.init_offdiag_halfwidth < 0:
            raise PreconditionError("init_offdiag_halfwidth must be nonnegative")
        if not self.adagrad_epsilon > 0:
            raise PreconditionError("adagrad_epsilon must be positive")
        if self.mode not in MODES:
            raise PreconditionError(f"mode must be one of {MODES}")
        if self.gradient not in GRADIENTS:
            raise PreconditionError(f"gradient must be one of {GRADIENTS}")
        if self.trace not in TRACES:
            raise PreconditionError(f"trace must be one of {TRACES}")
        if isinstance(self.mcmc, dict):
            object.__setattr__(self, "mcmc", ChainConfig(**self.mcmc))

    def to_dict(self):
        out = asdict(self)
        out.pop("threads")
        return out

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d.pop("threads", None)
        return cls(**d)


@dataclass
class FitReport:
    theta_hat: ParamMatrix
    objective_trace: np.ndarray
    trace_kind: str
    pretrain_trace: np.ndarray
    acceptance_rate: np.ndarray
    config: FitConfig
    wall_time: float = 0.0
    warnings: list = field(default_factory=list)


# -- objective -----------------------------------------------------------------

def l1_offdiag(theta):
    th = theta_array(theta)
    return float(np.abs(th).sum() - np.abs(np.diag(th)).sum())


def _distinct_sets(data):
    """Distinct samples (sorted by bitmask) with their multiplicities."""
    counts = {}
    for s in data.samples:
        counts[s.bits] = counts.get(s.bits, 0) + 1
    keys = sorted(counts)
    lookup = {s.bits: s for s in data.samples}
    return [lookup[b].as_array() for b in keys], np.array([counts[b] for b in keys], float)


def objective(theta, data, reg_weight, enum_cap=ENUM_CAP):
    """Exact regularised mean log-likelihood (marginal over the observation time)."""
    th = theta_array(theta)
    sets, counts = _distinct_sets(data)
    for s in sets:
        if s.size > enum_cap:
            raise EnumerationTooLarge(
                f"a sample has {s.size} items, above the enumeration cap {enum_cap}; "
                "use objective_estimate"
            )
    logs = np.array([kernels.logsumexp(kernels.enumerate_logp(th, s)) for s in sets])
    return float(counts @ logs / counts.sum() - reg_weight * l1_offdiag(th))


def estimate_log_set_prob(theta, s, draws, rng):
    """Importance-sampling estimate of log p(S) with the guided proposal."""
    th = theta_array(theta)
    items = np.asarray(s, dtype=np.int64)
    if items.size <= 1:
        return float(kernels.marginal_seq_logp(th, items))
    w = np.exp(th)
    u = rng.random((draws, items.size))
    logr = np.empty(draws)
    for i in range(draws):
        perm, log_q = kernels.guided_draw(th, w, items, u[i])
        logr[i] = kernels.marginal_seq_logp(th, perm) - log_q
    return float(kernels.logsumexp(logr) - math.log(draws))


def objective_estimate(theta, data, reg_weight, draws=10, rng=0, exact_cap=6):
    """Regularised mean log-likelihood; sets above ``exact_cap`` items are estimated."""
    th = theta_array(theta)
    sets, counts = _distinct_sets(data)
    logs = np.empty(len(sets))
    for i, s in enumerate(sets):
        if s.size <= exact_cap:
            logs[i] = kernels.logsumexp(kernels.enumerate_logp(th, s))
        else:
            logs[i] = estimate_log_set_prob(th, s, draws, derive(rng, "objective", i))
    return float(counts @ logs / counts.sum() - reg_weight * l1_offdiag(th))


def given_times_objective(theta, data, reg_weight, enum_cap=ENUM_CAP, threads=None):
    value, _ = _given_times_value_and_grad(theta_array(theta), data, enum_cap, threads)
    return value - reg_weight * l1_offdiag(theta)


# -- gradients -----------------------------------------------------------------

def _reduce(parts, shape):
    total = np.zeros(shape)
    value = 0.0
    for v, g in parts:
        value += v
        total += g
    return value, total


def _exact_value_and_grad(th, sets, counts, threads):
    def run(bounds):
        value = 0.0
        grad = np.zeros_like(th)
        for i in range(*bounds):
            value += counts[i] * kernels.exact_set_grad(th, sets[i], counts[i], grad)
        return value, grad

    value, grad = _reduce(ordered_map(run, chunk_bounds(len(sets), 16), threads), th.shape)
    return value / counts.sum(), grad / counts.sum()


def _given_times_value_and_grad(th, data, enum_cap, threads):
    arrays = data.item_arrays()
    times = data.times

    def run(bounds):
        value = 0.0
        grad = np.zeros_like(th)
        for d in range(*bounds):
            lp, g = log_set_given_time_and_grad(th, arrays[d], times[d], enum_cap)
            if not np.isfinite(lp):
                raise NumericalError(
                    f"sample {d} has zero probability at t={times[d]}", th, d
                )
            value += lp
            grad += g
        return value, grad

    value, grad = _reduce(ordered_map(run, chunk_bounds(len(arrays), 16), threads), th.shape)
    return value / len(arrays), grad / len(arrays)


def _diag_value_and_grad(diag, sets, counts):
    value = 0.0
    grad = np.zeros(diag.size)
    for s, c in zip(sets, counts):
        lp, g = diagonal_log_set_prob_and_grad(diag, s)
        value += c * lp
        grad += c * g
    return value / counts.sum(), grad / counts.sum()


def _diag_given_times_value_and_grad(diag, data):
    x = np.zeros((len(data), data.n), dtype=bool)
    for d, s in enumerate(data.samples):
        x[d, list(s.items)] = True
    wt = np.multiply.outer(data.times, np.exp(diag))
    with np.errstate(divide="ignore", invalid="ignore"):
        inside = np.where(x, np.log(-np.expm1(-wt)), -wt)
        g_in = np.where(wt > 0, wt / np.expm1(wt), 1.0)
    grad = np.where(x, g_in, -wt)
    return float(inside.sum() / len(data)), grad.mean(axis=0)


# -- optimizer -----------------------------------------------------------------

def soft_threshold(x, threshold):
    """sign(x) * max(0, |x| - threshold); exact zeros below the threshold."""
    return np.where(np.abs(x) <= threshold, 0.0, x - np.sign(x) * threshold)


def prox_adagrad_step(theta, grad, accum, step_size, reg_weight, eps, offdiag=None):
    """One ascent step; updates ``accum`` in place and returns the new theta.

    Entries outside ``offdiag`` (default: the diagonal) are not regularised.
    """
    theta = np.asarray(theta, dtype=float)
    if offdiag is None:
        offdiag = ~np.eye(theta.shape[0], dtype=bool)
    accum += grad * grad
    scale = step_size / np.sqrt(accum + eps)
    out = theta + scale * grad
    out[offdiag] = soft_threshold(out[offdiag], reg_weight * scale[offdiag])
    return out


def warm_start_diagonal(data):
    f = np.clip(data.frequencies(), 1e-12, 1 - 1e-12)
    return np.clip(np.log(f) - np.log1p(-f), -10.0, 2.0)


def _check_finite(grad, th, what):
    if not np.all(np.isfinite(grad)):
        bad = np.argwhere(~np.isfinite(grad))[0].tolist()
        raise NumericalError(f"non-finite {what} gradient at entry {bad}", th)


def fit(data, config=FitConfig(), rng=None):
    """Learn a parameter matrix from ``data``; see the module docstring."""
    if not isinstance(data, Dataset) or len(data) == 0:
        raise PreconditionError("data must be a non-empty Dataset")
    if rng is None:
        seed = config.seed
    elif isinstance(rng, np.random.Generator):
        seed = child_seed(rng)
    else:
        seed = int(rng)
    given_times = config.mode == "given_times"
    if given_times and data.times is None:
        raise PreconditionError("given_times mode needs observation times")
    start = time.perf_counter()
    n = data.n
    sets, counts = _distinct_sets(data)
    cap = max((s.size for s in sets), default=0)
    if (given_times or config.gradient == "exact") and cap > config.enum_cap:
        raise EnumerationTooLarge(
            f"a sample has {cap} items, above the enumeration cap {config.enum_cap}"
        )
    notes = []

    # phases 1-2: diagonal model
    diag = warm_start_diagonal(data)
    accum = np.zeros(n)
    pre_trace = []
    for _ in range(config.diag_pretrain_epochs):
        if given_times:
            value, g = _diag_given_times_value_and_grad(diag, data)
        else:
            value, g = _diag_value_and_grad(diag, sets, counts)
        _check_finite(g, np.diag(diag), "diagonal")
        pre_trace.append(value)
        accum += g * g
        diag = diag + config.step_size * g / np.sqrt(accum + config.adagrad_epsilon)
    if np.any(np.abs(diag) > WARN_DIAGONAL):
        msg = (
            f"diagonal entries {np.flatnonzero(np.abs(diag) > WARN_DIAGONAL).tolist()} "
            f"exceed {WARN_DIAGONAL} in magnitude after pretraining"
        )
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        notes.append(msg)

    theta = np.diag(diag)
    offdiag = ~np.eye(n, dtype=bool)
    if config.mode != "diagonal_only":
        h = config.init_offdiag_halfwidth
        theta[offdiag] = derive(seed, "init").uniform(-h, h, size=n * n - n)

    trace_kind = _trace_kind(config, cap)
    accum = np.zeros((n, n))
    trace = []
    accept = []
    for epoch in range(config.epochs):
        if config.mode == "diagonal_only":
            _, gd = _diag_value_and_grad(np.diag(theta), sets, counts)
            grad = np.diag(gd)
            rate = 1.0
        elif given_times:
            _, grad = _given_times_value_and_grad(theta, data, config.enum_cap, config.threads)
            rate = 1.0
        elif config.gradient == "exact":
            _, grad = _exact_value_and_grad(theta, sets, counts, config.threads)
            rate = 1.0
        else:
            try:
                grad, rate = batch_grad(
                    theta, data.item_arrays(), config.mcmc, seed, epoch, config.threads
                )
            except FloatingPointError as exc:
                sample = int(str(exc).rsplit(" ", 1)[-1])
                raise NumericalError(str(exc), theta, sample) from None
        _check_finite(grad, theta, "likelihood")
        if config.mode == "diagonal_only":
            accum += grad * grad
            theta = theta + np.diag(
                config.step_size * np.diag(grad) / np.sqrt(np.diag(accum) + config.adagrad_epsilon)
            )
        else:
            theta = prox_adagrad_step(
                theta, grad, accum, config.step_size, config.reg_weight,
                config.adagrad_epsilon, offdiag,
            )
        if not np.all(np.isfinite(theta)):
            raise NumericalError(f"parameters became non-finite in epoch {epoch}", theta)
        value = _trace_value(theta, data, config, trace_kind, seed, epoch, sets, counts)
        trace.append(value)
        accept.append(rate)
        log.info("epoch %d objective %.6f time %.2fs", epoch + 1, value,
                 time.perf_counter() - start)

    names = data.item_names
    return FitReport(
        theta_hat=ParamMatrix(theta, names),
        objective_trace=np.array(trace),
        trace_kind=trace_kind,
        pretrain_trace=np.array(pre_trace),
        acceptance_rate=np.array(accept),
        config=config,
        wall_time=time.perf_counter() - start,
        warnings=notes,
    )


def fit_given_times(data, config=FitConfig(), rng=None):
    """``fit`` with the likelihood conditioned on the recorded observation times."""
    if data.times is None:
        raise PreconditionError("dataset has no observation times")
    return fit(data, replace(config, mode="given_times"), rng)


def _trace_kind(config, cap):
    if config.trace == "none":
        return "none"
    if config.mode == "given_times":
        return "exact"
    if config.trace == "auto":
        return "exact" if cap <= config.trace_cap else "estimate"
    if config.trace == "exact" and cap > config.enum_cap:
        raise EnumerationTooLarge(f"exact trace needs sets of at most {config.enum_cap} items")
    return config.trace


def _trace_value(theta, data, config, kind, seed, epoch, sets, counts):
    if kind == "none":
        return math.nan
    reg = config.reg_weight * l1_offdiag(theta)
    if config.mode == "given_times":
        value, _ = _given_times_value_and_grad(theta, data, config.enum_cap, config.threads)
        return value - reg
    if kind == "exact":
        logs = [kernels.logsumexp(kernels.enumerate_logp(theta, s)) for s in sets]
    else:
        logs = [
            kernels.logsumexp(kernels.enumerate_logp(theta, s))
            if s.size <= config.trace_cap
            else estimate_log_set_prob(
                theta, s, config.trace_draws, derive(seed, "trace", epoch, i)
            )
            for i, s in enumerate(sets)
        ]
    return float(counts @ np.array(logs) / counts.sum() - reg)
