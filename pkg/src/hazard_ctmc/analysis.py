"""Evaluation of learned models and the synthetic experiment harnesses.

Monte Carlo quantities (KL to a reference model, order proportions) sample
marginal sequences in fixed shards; shard ``i`` uses the stream
``derive(seed, "draws", i)`` and per-shard histograms are merged in shard
order, so results do not depend on the thread count.
"""

import math
from dataclasses import dataclass, replace

import numpy as np

from . import kernels
from .likelihood import (
    all_partial_sequences,
    marginal_sequence_logprob,
    marginal_sequence_prob,
    marginal_set_prob,
    theta_array,
)
from .mcmc import ChainConfig, batch_grad
from .model import (
    Dataset,
    ItemSet,
    ParamMatrix,
    PreconditionError,
    five_item_model,
    two_item_model,
    with_independent_items,
)
from .parallel import chunk_bounds, ordered_map
from .rng import child_seed, derive
from .sampler import generate_dataset
from .trainer import FitConfig, _distinct_sets, _exact_value_and_grad, fit

MAX_RESTRICT = 15
EXTRA_RANGE = (-4.0, -2.0)


def _seed_of(rng):
    if isinstance(rng, np.random.Generator):
        return child_seed(rng)
    return 0 if rng is None else int(rng)


# -- two-item equivalence family -------------------------------------------------

def two_item_probs(alpha):
    """p(empty), p({1}), p({2}) under the two-item model with strength ``alpha``."""
    th = two_item_model(alpha)
    return tuple(marginal_set_prob(th, s) for s in ([], [0], [1]))


def prop1_interval(alpha):
    """Open interval of ``s`` for which every weight of the family is positive.

    Returns ``((lo, hi), (0, 1/p0 - 1))``: the effective interval and the
    nominal one bounded only by ``w_11 > 0`` and ``w_22 > 0``.
    """
    p0, p1, p2 = two_item_probs(alpha)
    nominal = (0.0, 1.0 / p0 - 1.0)
    return (max(0.0, p1 / p0), min(nominal[1], (1.0 - p0 - p2) / p0)), nominal


def prop1_family(alpha, s):
    """Two-item parameters with the same set distribution as the ``alpha`` model."""
    (lo, hi), nominal = prop1_interval(alpha)
    if not lo < s < hi:
        raise PreconditionError(
            f"s={s} outside the valid interval ({lo:.10g}, {hi:.10g}); "
            f"nominal interval (0, 1/p0 - 1) = ({nominal[0]:.10g}, {nominal[1]:.10g})"
        )
    p0, p1, p2 = two_item_probs(alpha)
    w = np.empty((2, 2))
    w[0, 0] = s
    w[1, 1] = 1.0 / p0 - 1.0 - s
    w[1, 0] = (1.0 - p0 - p2 - p0 * s) / (p2 * s)
    w[0, 1] = (p0 * s - p1) / (p1 * (1.0 / p0 - 1.0 - s))
    return ParamMatrix(np.log(w))


# -- sampled restricted sequences -------------------------------------------------

def draw_shard_size(n):
    return max(1000, 2_000_000 // (2 * n + 1))


def restricted_histogram(theta, restrict, draws, seed, threads=None):
    """Counts of sampled marginal sequences restricted to ``restrict``.

    Items outside ``restrict`` are deleted, keeping the order of the rest.
    Returns ``(codes, counts)`` sorted by code; decode with
    :func:`decode_sequence` using ``base = len(restrict) + 1``.
    """
    th = theta_array(theta)
    n = th.shape[0]
    restrict = [int(i) for i in restrict]
    if len(restrict) > MAX_RESTRICT:
        raise PreconditionError(f"at most {MAX_RESTRICT} restricted items are supported")
    if len(set(restrict)) != len(restrict) or any(not 0 <= i < n for i in restrict):
        raise PreconditionError(f"invalid restricted items {restrict} for n={n}")
    code_map = np.full(n, -1, dtype=np.int64)
    code_map[restrict] = np.arange(len(restrict))
    base = len(restrict) + 1

    def run(job):
        idx, (a, b) = job
        u = derive(seed, "draws", idx).random((b - a, 2 * n + 1))
        return np.unique(kernels.sample_codes(th, u, code_map, base), return_counts=True)

    parts = ordered_map(run, enumerate(chunk_bounds(int(draws), draw_shard_size(n))), threads)
    merged = {}
    for codes, counts in parts:
        for c, k in zip(codes.tolist(), counts.tolist()):
            merged[c] = merged.get(c, 0) + k
    keys = sorted(merged)
    return np.array(keys, dtype=np.int64), np.array([merged[k] for k in keys], dtype=np.int64)


def decode_sequence(code, base):
    out = []
    while code:
        code, digit = divmod(int(code), base)
        out.append(digit - 1)
    return tuple(reversed(out))


def encode_sequence(seq, base):
    code = 0
    for x in seq:
        code = code * base + int(x) + 1
    return code


@dataclass(frozen=True)
class KlReport:
    kl: float
    stderr: float
    num_draws: int
    restricted_items: tuple
    histogram_support: int
    negative_flag: bool


def kl_recovery(theta_hat, theta_true, restrict=None, draws=10**6, rng=0, threads=None):
    """Plug-in KL from sampled restricted sequences of ``theta_hat`` to ``theta_true``.

    ``restrict`` lists the items of ``theta_hat`` that correspond, in order,
    to items ``0..r-1`` of ``theta_true`` (default: the first ``r``).
    """
    th_true = theta_array(theta_true)
    r = th_true.shape[0]
    restrict = tuple(range(r)) if restrict is None else tuple(int(i) for i in restrict)
    if len(restrict) != r:
        raise PreconditionError(
            f"restrict has {len(restrict)} items but the reference model has {r}"
        )
    codes, counts = restricted_histogram(theta_hat, restrict, draws, _seed_of(rng), threads)
    p_hat = counts / counts.sum()
    log_true = np.array(
        [marginal_sequence_logprob(th_true, decode_sequence(c, r + 1)) for c in codes]
    )
    terms = np.log(p_hat) - log_true
    kl = float(p_hat @ terms)
    var = float(p_hat @ (terms - kl) ** 2)
    se = math.sqrt(var / counts.sum())
    return KlReport(kl, se, int(counts.sum()), restrict, int(codes.size), kl < -3 * se)


@dataclass(frozen=True)
class OrderReport:
    item_a: int
    item_b: int
    prop_a_first: float
    stderr: float
    num_cooccurrences: int
    num_draws: int
    defined: bool


def order_proportion(theta, a, b, draws=10**6, rng=0, threads=None):
    """Fraction of sampled sequences containing both items in which ``a`` comes first."""
    if a == b:
        raise PreconditionError("a and b must differ")
    codes, counts = restricted_histogram(theta, (a, b), draws, _seed_of(rng), threads)
    lookup = dict(zip(codes.tolist(), counts.tolist()))
    a_first = lookup.get(encode_sequence((0, 1), 3), 0)
    b_first = lookup.get(encode_sequence((1, 0), 3), 0)
    both = a_first + b_first
    if both == 0:
        return OrderReport(a, b, math.nan, math.nan, 0, int(draws), False)
    p = a_first / both
    return OrderReport(a, b, p, math.sqrt(p * (1 - p) / both), both, int(draws), True)


def exact_order_proportion(theta, a, b):
    """P(a before b | both observed) by summing marginal sequence probabilities.

    Only for small models: enumerates every partial sequence.
    """
    th = theta_array(theta)
    first = both = 0.0
    for seq in all_partial_sequences(th.shape[0]):
        if a in seq and b in seq:
            p = marginal_sequence_prob(th, seq)
            both += p
            if seq.index(a) < seq.index(b):
                first += p
    return first / both


# -- stability across initialisations -----------------------------------------

def stability_report(data, config, num_inits, rng=0, seeds=None, pairs=None,
                     order_draws=10**5, threads=None):
    """Spread of learned parameters (and order proportions) across fit seeds."""
    if seeds is None:
        if num_inits < 2:
            raise PreconditionError("num_inits must be at least 2")
        base = _seed_of(rng)
        seeds = [child_seed(derive(base, "stability", i)) for i in range(num_inits)]
    seeds = [int(s) for s in seeds]
    if len(seeds) < 2:
        raise PreconditionError("need at least two initialisations")
    if pairs is None:
        pairs = [(i, j) for i in range(data.n) for j in range(i + 1, data.n)] if data.n <= 10 else []
    thetas = []
    orders = []
    for s in seeds:
        report = fit(data, replace(config, seed=s, threads=threads))
        thetas.append(report.theta_hat.theta)
        orders.append([
            order_proportion(report.theta_hat, a, b, order_draws, derive(s, "order"), threads)
            .prop_a_first
            for a, b in pairs
        ])
    stack = np.array(thetas)
    orders = np.array(orders, dtype=float).reshape(len(seeds), len(pairs))
    return {
        "seeds": seeds,
        "min": stack.min(axis=0),
        "max": stack.max(axis=0),
        "range": stack.max(axis=0) - stack.min(axis=0),
        "pairs": [tuple(p) for p in pairs],
        "order_min": orders.min(axis=0) if pairs else np.zeros(0),
        "order_max": orders.max(axis=0) if pairs else np.zeros(0),
        "order_spread": (orders.max(axis=0) - orders.min(axis=0)) if pairs else np.zeros(0),
    }


# -- synthetic experiment harnesses -----------------------------------------------

BASE_MODELS = {"two": two_item_model, "five": five_item_model}


def synthetic_model(base, m, rng, extra_range=EXTRA_RANGE):
    """``base`` model plus ``m`` independent items with log-rates ~ U[extra_range]."""
    model = BASE_MODELS[base]() if isinstance(base, str) else base
    diag = rng.uniform(extra_range[0], extra_range[1], m)
    return with_independent_items(model, diag) if m else model


def _mean_se(x):
    x = np.asarray(x, dtype=float)
    se = float(x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else 0.0
    return float(x.mean()), se


def add_independent_items(data, log_rates, rng):
    """Append independent items observed at the recorded times of ``data``.

    Item ``i`` is present in sample ``d`` with probability
    ``1 - exp(-exp(log_rates[i]) * t_d)``, its law given the time when it
    does not interact with the other items.
    """
    if data.times is None:
        raise PreconditionError("data needs observation times")
    w = np.exp(np.asarray(log_rates, dtype=float))
    present = rng.random((len(data), w.size)) < -np.expm1(-np.outer(data.times, w))
    samples = [
        list(s.items) + (data.n + np.flatnonzero(row)).tolist()
        for s, row in zip(data.samples, present)
    ]
    return Dataset(data.n + w.size, samples, data.times)


def kl_experiment(base="two", m_values=(0, 5, 25), repetitions=8, samples=500,
                  config=None, draws=10**6, seed=0, threads=None):
    """KL recovery against the number of extra independent items.

    One dataset over the base items (with observation times) is drawn from
    ``derive(seed, "kl-data", base)`` and kept fixed.  Repetition ``rep`` at
    ``m`` draws the extra log-rates, samples the extra items at the recorded
    times, and fits with its own seed.  The baseline fits the base data with
    known times, repeated over fit seeds.

    Returns ``{"rows": [...], "baseline": {...}}`` with the mean and
    standard error of the KL over repetitions.
    """
    config = config or FitConfig()
    truth = BASE_MODELS[base]()
    r = truth.n
    base_data = generate_dataset(truth, samples, with_times=True,
                                 rng=derive(seed, "kl-data", base), threads=threads)
    baseline = []
    for rep in range(repetitions):
        rng = derive(seed, "kl-baseline", base, rep)
        cfg = replace(config, mode="given_times", seed=child_seed(rng), threads=threads)
        report = fit(base_data, cfg)
        baseline.append(kl_recovery(report.theta_hat, truth, None, draws, rng, threads).kl)
    rows = []
    for m in m_values:
        kls = []
        for rep in range(repetitions):
            rng = derive(seed, "kl", base, m, rep)
            log_rates = rng.uniform(EXTRA_RANGE[0], EXTRA_RANGE[1], m)
            full = add_independent_items(base_data, log_rates, rng)
            data = Dataset(full.n, full.samples)
            cfg = replace(config, mode="marginal", seed=child_seed(rng), threads=threads)
            report = fit(data, cfg)
            kls.append(kl_recovery(report.theta_hat, truth, range(r), draws, rng, threads).kl)
        mean, se = _mean_se(kls)
        rows.append({"m": int(m), "kl_mean": mean, "kl_stderr": se, "kl_values": kls})
    mean, se = _mean_se(baseline)
    return {"rows": rows, "baseline": {"kl_mean": mean, "kl_stderr": se, "kl_values": baseline}}


def order_experiment(pair=(1, 2), n_values=(5, 10, 20), repetitions=4, samples=500,
                     config=None, draws=10**5, seed=0, threads=None):
    """Learned order proportion of a pair of base items as extra items are added.

    Uses the five-item model plus ``n - 5`` independent items.  The exact
    proportion under the true model is included for reference.
    """
    config = config or FitConfig()
    truth = five_item_model()
    a, b = pair
    rows = []
    for n in n_values:
        props = []
        for rep in range(repetitions):
            rng = derive(seed, "order", n, rep)
            model = synthetic_model(truth, n - truth.n, rng)
            data = generate_dataset(model, samples, rng=rng, threads=threads)
            report = fit(data, replace(config, seed=child_seed(rng), threads=threads))
            props.append(order_proportion(report.theta_hat, a, b, draws, rng, threads).prop_a_first)
        mean, se = _mean_se(props)
        rows.append({"n": int(n), "prop": mean, "stderr": se, "values": props})
    return {"rows": rows, "truth": exact_order_proportion(truth, a, b)}


def gradient_error_experiment(n_values=(10, 20), sample_counts=(5, 10, 20, 50),
                              replicates=20, samples=500, warm_epochs=100, max_set_size=8,
                              warm_reg_weight=0.0, seed=0, threads=None):
    """Gradient error of the MCMC estimator for both proposals.

    For each ``n``: two-item model plus ``n - 2`` independent items, a fit
    with exact gradients of the (by default unregularised) objective for
    ``warm_epochs`` epochs, then the error norm of
    the estimated full-data gradient against the exact one.  Replicate ``r``
    uses the same chain streams for both proposals.  Samples with more than
    ``max_set_size`` items are dropped so that exact gradients stay cheap.
    """
    rows = []
    for n in n_values:
        rng = derive(seed, "graderror", n)
        model = synthetic_model("two", n - 2, rng)
        data = generate_dataset(model, samples, rng=rng, threads=threads)
        data = Dataset(data.n, [s for s in data.samples if len(s) <= max_set_size])
        cfg = FitConfig(epochs=warm_epochs, gradient="exact", reg_weight=warm_reg_weight,
                        seed=child_seed(rng),
                        trace="none", threads=threads)
        theta = fit(data, cfg).theta_hat.theta
        sets, counts = _distinct_sets(data)
        _, exact = _exact_value_and_grad(theta, sets, counts, threads)
        arrays = data.item_arrays()
        for proposal in ("guided", "uniform"):
            for count in sample_counts:
                chain = ChainConfig(num_samples=count, burn_in=10, proposal=proposal)
                errs = []
                for rep in range(replicates):
                    est, _ = batch_grad(theta, arrays, chain, child_seed(derive(seed, "rep", n, rep)),
                                        0, threads)
                    errs.append(float(np.linalg.norm(est - exact)))
                mean, se = _mean_se(errs)
                rows.append({"n": int(n), "proposal": proposal, "M": int(count),
                             "error_mean": mean, "error_stderr": se, "errors": errs})
    return rows


def timing_dataset(n, samples, seed=0):
    """Five-item model plus ``n - 5`` independent items, as used for timings."""
    rng = derive(seed, "timing", n)
    model = synthetic_model(five_item_model(), n - 5, rng)
    return generate_dataset(model, samples, rng=rng)


def set_size_summary(data):
    sizes = np.array([len(s) for s in data.samples])
    return {"mean": float(sizes.mean()), "max": int(sizes.max())}


__all__ = [
    "ItemSet",
    "add_independent_items",
    "KlReport",
    "OrderReport",
    "decode_sequence",
    "encode_sequence",
    "exact_order_proportion",
    "gradient_error_experiment",
    "kl_experiment",
    "kl_recovery",
    "order_experiment",
    "order_proportion",
    "prop1_family",
    "prop1_interval",
    "restricted_histogram",
    "stability_report",
    "synthetic_model",
    "timing_dataset",
    "two_item_probs",
]
