"""End-to-end acceptance checks, one test per criterion.

Each test records its outcome in ``conftest.ACCEPTANCE``; the terminal
summary prints one PASS/FAIL line per criterion.  Run only this file with
``pytest tests/test_acceptance.py -v``.
"""

import itertools
import math
import os
import time

import mpmath
import numpy as np
import pytest
from scipy.integrate import quad

from hazard_ctmc.analysis import (
    gradient_error_experiment,
    kl_experiment,
    prop1_family,
    prop1_interval,
    timing_dataset,
    two_item_probs,
)
from hazard_ctmc.cli import main
from hazard_ctmc.hypoexp import hypoexp_cdf
from hazard_ctmc.likelihood import (
    all_partial_sequences,
    grad_log_marginal_sequence,
    grad_log_marginal_set_exact,
    marginal_sequence_logprob,
    marginal_sequence_prob,
    marginal_set_logprob,
    marginal_set_prob,
    ordering_posterior,
    partial_sequence_given_time_prob,
    set_given_time_prob,
)
from hazard_ctmc.mcmc import mh_kernel_matrix, proposal_logq
from hazard_ctmc.model import two_item_model
from hazard_ctmc.posterior import iid_posterior_summary, iid_variance_sweep, sweep_slope
from hazard_ctmc.sampler import generate_dataset
from hazard_ctmc.special import digamma, trigamma
from hazard_ctmc.trainer import FitConfig, fit, objective

import conftest
from conftest import random_theta

# epochs for the KL experiment fits; see the decisions ledger
KL_EPOCHS = 1000


def record(num, passed, desc, detail):
    conftest.ACCEPTANCE[num] = (bool(passed), desc, detail)
    assert passed, f"criterion {num}: {desc} ({detail})"


def subsets(n):
    for k in range(n + 1):
        yield from itertools.combinations(range(n), k)


def central_difference(func, theta, h=1e-5):
    out = np.zeros_like(theta)
    for idx in np.ndindex(theta.shape):
        up, dn = theta.copy(), theta.copy()
        up[idx] += h
        dn[idx] -= h
        out[idx] = (func(up) - func(dn)) / (2 * h)
    return out


def rel_error(a, b):
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))


def test_criterion_01_normalisation():
    start = time.perf_counter()
    rng = np.random.default_rng(1)
    worst = 0.0
    for n in range(1, 6):
        for _ in range(3):
            th = random_theta(rng, n)
            total = math.fsum(marginal_sequence_prob(th, s) for s in all_partial_sequences(n))
            worst = max(worst, abs(total - 1))
            if n <= 4:
                total = math.fsum(marginal_set_prob(th, s) for s in subsets(n))
                worst = max(worst, abs(total - 1))
            if n <= 3:
                for t in (0.1, 1.0, 5.0):
                    total = math.fsum(set_given_time_prob(th, s, t) for s in subsets(n))
                    worst = max(worst, abs(total - 1))
                    total = math.fsum(partial_sequence_given_time_prob(th, s, t)
                                      for s in all_partial_sequences(n))
                    worst = max(worst, abs(total - 1))
    elapsed = time.perf_counter() - start
    record(1, worst <= 1e-10 and elapsed < 60, "normalisation of sequences, sets, given-time",
           f"max |total - 1| = {worst:.2e}, {elapsed:.1f} s")


def test_criterion_02_equivalence_family():
    (lo, hi), _ = prop1_interval(4.0)
    ref = np.array(two_item_probs(4.0))
    data = generate_dataset(two_item_model(), 500, rng=0)
    f_ref = objective(two_item_model(), data, 0.0)
    worst_p = worst_f = 0.0
    for s in np.linspace(lo, hi, 52)[1:-1]:
        th = prop1_family(4.0, s)
        got = np.array([marginal_set_prob(th, x) for x in ([], [0], [1])])
        worst_p = max(worst_p, float(np.max(np.abs(got - ref))))
        worst_f = max(worst_f, abs(objective(th, data, 0.0) - f_ref))
    record(2, worst_p <= 1e-12 and worst_f <= 1e-10, "two-item equivalence family",
           f"max |dp| = {worst_p:.2e}, max |dF| = {worst_f:.2e} over 50 values of s")


def test_criterion_03_gradients():
    start = time.perf_counter()
    rng = np.random.default_rng(3)
    worst_seq = worst_set = 0.0
    for _ in range(100):
        th = random_theta(rng, 6)
        k = int(rng.integers(1, 6))
        sigma = tuple(int(x) for x in rng.permutation(6)[:k])
        fd = central_difference(lambda x: marginal_sequence_logprob(x, sigma), th)
        worst_seq = max(worst_seq, rel_error(grad_log_marginal_sequence(th, sigma), fd))
        s = sorted(sigma)
        fd = central_difference(lambda x: marginal_set_logprob(x, s), th)
        worst_set = max(worst_set, rel_error(grad_log_marginal_set_exact(th, s), fd))
    elapsed = time.perf_counter() - start
    record(3, max(worst_seq, worst_set) <= 1e-6 and elapsed < 60,
           "sequence and set gradients against finite differences",
           f"relative error {worst_seq:.1e} / {worst_set:.1e} on 100 instances, {elapsed:.1f} s")


def _stationary(kmat):
    vals, vecs = np.linalg.eig(kmat.T)
    v = np.real(vecs[:, np.argmin(np.abs(vals - 1))])
    return v / v.sum()


def test_criterion_04_mh_kernel():
    rng = np.random.default_rng(4)
    worst_stat = worst_two = 0.0
    for _ in range(10):
        th = random_theta(rng, 5, scale=1.5)
        s = sorted(int(x) for x in rng.choice(5, 3, replace=False))
        _, target = ordering_posterior(th, s)
        for proposal in ("guided", "uniform"):
            _, kmat = mh_kernel_matrix(th, s, proposal)
            worst_stat = max(worst_stat, float(np.max(np.abs(_stationary(kmat) - target))))
        pair = sorted(int(x) for x in rng.choice(5, 2, replace=False))
        perms, target = ordering_posterior(th, pair)
        q = np.exp([proposal_logq(th, p) for p in perms])
        worst_two = max(worst_two, float(np.max(np.abs(q - target))))
    record(4, worst_stat <= 1e-10 and worst_two <= 1e-14, "MH kernel stationarity",
           f"|S|=3 max deviation {worst_stat:.1e}, |S|=2 guided vs target {worst_two:.1e}")


def test_criterion_05_proposal_quality():
    start = time.perf_counter()
    rows = gradient_error_experiment(n_values=(20,), sample_counts=(50,), replicates=20, seed=0)
    err = {r["proposal"]: r["error_mean"] for r in rows}
    elapsed = time.perf_counter() - start
    record(5, err["guided"] <= err["uniform"] and elapsed < 600,
           "guided proposal error at n=20, M=50 not above uniform",
           f"guided {err['guided']:.4f}, uniform {err['uniform']:.4f}, 20 paired replicates, "
           f"{elapsed:.0f} s")


@pytest.mark.slow
def test_criterion_06_kl_recovery():
    start = time.perf_counter()
    res = kl_experiment("two", (0, 5, 25), repetitions=8, samples=500,
                        config=FitConfig(epochs=KL_EPOCHS, trace="none"), draws=10**6, seed=0)
    elapsed = time.perf_counter() - start
    means = [r["kl_mean"] for r in res["rows"]]
    base = res["baseline"]["kl_mean"]
    decreasing = all(a > b for a, b in zip(means, means[1:]))
    near_base = abs(means[-1] - base) <= 0.05
    base_ok = abs(base - 0.015) <= 0.01
    record(6, decreasing and near_base and base_ok and elapsed < 3600,
           "KL recovery decreasing in m and approaching the given-times baseline",
           "KL " + ", ".join(f"m={r['m']}: {r['kl_mean']:.4f}" for r in res["rows"])
           + f"; baseline {base:.4f}; {elapsed:.0f} s")


def test_criterion_07_posterior_scaling():
    start = time.perf_counter()
    worst = 0.0
    for tp in (-3.0, -2.0, -1.0, 0.0):
        w = math.exp(tp)
        for m, k in ((5, 2), (20, 7), (100, 40)):
            s = iid_posterior_summary(tp, m, k)

            def dens(t):
                return math.exp(k * math.log(-math.expm1(-w * t)) - t * (1 + (m - k) * w)
                                - (k * math.log(-math.expm1(-w * s.mean))
                                   - s.mean * (1 + (m - k) * w)))

            kw = dict(points=[s.mean], epsabs=0, epsrel=1e-13, limit=500)
            upper = s.mean + 60 * math.sqrt(s.variance) + 40
            z = quad(dens, 0, upper, **kw)[0]
            mean = quad(lambda t: t * dens(t), 0, upper, **kw)[0] / z
            var = quad(lambda t: (t - mean) ** 2 * dens(t), 0, upper, **kw)[0] / z
            worst = max(worst, abs(s.mean - mean) / mean, abs(s.variance - var) / var)
    slopes = {tp: sweep_slope(iid_variance_sweep(tp, (5, 10, 20, 50, 100), 1000, seed=0))
              for tp in (-3.0, -2.0, -1.0)}
    elapsed = time.perf_counter() - start
    in_range = all(-1.2 <= v <= -0.8 for v in slopes.values())
    record(7, in_range and worst <= 1e-8 and elapsed < 300,
           "posterior variance slope in [-1.2, -0.8] and closed-form moments",
           "slopes " + ", ".join(f"{tp:g}: {v:.3f}" for tp, v in slopes.items())
           + f"; moment rel. error {worst:.1e}; {elapsed:.0f} s")


def _timed_fit(n):
    data = timing_dataset(n, 400, seed=0)
    config = FitConfig(epochs=100, trace="none")
    start = time.perf_counter()
    fit(data, config)
    return time.perf_counter() - start


@pytest.mark.slow
def test_criterion_08_runtime():
    t20 = _timed_fit(20)
    t100 = _timed_fit(100)
    record(8, t20 <= 80 and t100 <= 10 * (33 * 60 + 43),
           "fit runtime within 10x of the reference timings",
           f"n=20: {t20:.1f} s (limit 80 s), n=100: {t100 / 60:.1f} min (limit 337 min)")


def test_criterion_09_special_functions():
    grid = np.concatenate([np.geomspace(1e-3, 1e6, 400), np.arange(1, 21)])
    err_d = max(abs(digamma(x) - float(mpmath.digamma(x))) for x in grid)
    err_t = max(abs(trigamma(x) - float(mpmath.psi(1, x))) for x in grid)
    erlang = 1 - 2 * math.exp(-1)
    err_e = max(abs(hypoexp_cdf(1.0, [1.0, 1.0 + d]) - erlang) for d in (1e-6, 1e-9, 1e-12))
    rates = np.array([0.7, 1.9, 3.3])
    rng = np.random.default_rng(9)
    draws = 10**7
    total = sum(rng.exponential(1 / r, draws) for r in rates)
    p = float(np.mean(total <= 1.2))
    z = abs(hypoexp_cdf(1.2, rates) - p) / math.sqrt(p * (1 - p) / draws)
    record(9, max(err_d, err_t) <= 1e-10 and err_e <= 1e-6 and z < 4,
           "digamma, trigamma and hypoexponential CDF",
           f"digamma {err_d:.1e}, trigamma {err_t:.1e}, Erlang limit {err_e:.1e}, "
           f"Monte Carlo z = {z:.2f}")


def _outputs(root):
    found = {}
    for dirpath, _, files in os.walk(root):
        for name in files:
            if name.endswith(".manifest.json"):
                continue
            path = os.path.join(dirpath, name)
            with open(path, "rb") as fh:
                found[os.path.relpath(path, root)] = fh.read()
    return found


def _run_all(root, threads):
    os.makedirs(root)
    j = lambda name: os.path.join(root, name)  # noqa: E731
    common = ["--threads", str(threads), "--quiet"]
    cmds = [
        ["family", "--s", "0.8", "--out", j("family.json")],
        ["simulate", "--model", j("family.json"), "--samples", "300", "--with-times",
         "--out", j("data.csv")],
        ["fit", "--data", j("data.csv"), "--out", j("fit.json"), "--epochs", "30"],
        ["fit", "--data", j("data.csv"), "--out", j("fit_gt.json"), "--epochs", "10",
         "--mode", "given-times"],
        ["eval", "kl", "--fit", j("fit.json"), "--truth", j("family.json"),
         "--draws", "200000", "--out", j("kl.json")],
        ["eval", "order", "--model", j("fit.json"), "--pair", "1,2", "--draws", "200000",
         "--out", j("order.json")],
        ["eval", "stability", "--data", j("data.csv"), "--inits", "3", "--epochs", "10",
         "--order-draws", "10000", "--out", j("stability.json")],
        ["eval", "time-posterior", "--model", j("family.json"), "--data", j("data.csv"),
         "--samples", "1,2,3", "--out", j("posterior.json")],
        ["eval", "variance-sweep", "--replicates", "200", "--out", j("sweep.json")],
        ["eval", "bounds", "--out", j("bounds.json")],
        ["repro", "--scale", "quick", "--out-dir", j("repro")],
    ]
    for cmd in cmds:
        seeded = cmd[0] not in ("family",) and cmd[:2] != ["eval", "bounds"]
        code = main(cmd + common + (["--seed", "11"] if seeded else []))
        if code != 0:
            return cmd, code
    return None, 0


@pytest.mark.slow
def test_criterion_10_determinism(tmp_path):
    failed = [_run_all(str(tmp_path / name), threads)
              for name, threads in (("a", 1), ("b", 4), ("c", 1))]
    bad = [f for f in failed if f[0] is not None]
    a, b, c = (_outputs(str(tmp_path / name)) for name in "abc")
    same = not bad and a == b == c and len(a) >= 20
    differing = sorted(k for k in a if a.get(k) != b.get(k) or a.get(k) != c.get(k))
    record(10, same, "byte-identical outputs across reruns and thread counts",
           f"{len(a)} files compared" + (f", differing: {differing}" if differing else "")
           + (f", failed: {bad}" if bad else ""))
