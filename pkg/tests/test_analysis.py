import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from hazard_ctmc.analysis import (
    add_independent_items,
    decode_sequence,
    encode_sequence,
    exact_order_proportion,
    gradient_error_experiment,
    kl_recovery,
    order_proportion,
    prop1_family,
    prop1_interval,
    restricted_histogram,
    stability_report,
    synthetic_model,
    timing_dataset,
    two_item_probs,
)
from hazard_ctmc.likelihood import all_partial_sequences, marginal_set_prob
from hazard_ctmc.mcmc import ChainConfig
from hazard_ctmc.model import (
    Dataset,
    PreconditionError,
    five_item_model,
    two_item_model,
    with_independent_items,
)
from hazard_ctmc.rng import derive
from hazard_ctmc.sampler import generate_dataset
from hazard_ctmc.trainer import FitConfig, objective


def family_grid(alpha=4.0, points=50):
    (lo, hi), _ = prop1_interval(alpha)
    return np.linspace(lo, hi, points + 2)[1:-1]


class TestFamily:
    def test_unit_s_is_truth(self):
        th = prop1_family(4.0, 1.0).theta
        assert_allclose(th, two_item_model(4.0).theta, atol=1e-12)

    def test_interval(self):
        (lo, hi), nominal = prop1_interval(4.0)
        assert_allclose([lo, hi], [0.5, 1.00916], atol=1e-5)
        assert nominal[0] == 0.0 and nominal[1] > hi

    @pytest.mark.parametrize("s", family_grid())
    def test_same_set_distribution(self, s):
        ref = two_item_probs(4.0)
        th = prop1_family(4.0, s)
        got = [marginal_set_prob(th, x) for x in ([], [0], [1])]
        assert np.max(np.abs(np.array(got) - ref)) <= 1e-12

    def test_objective_flat(self):
        data = generate_dataset(two_item_model(), 500, rng=0)
        ref = objective(two_item_model(), data, 0.0)
        for s in family_grid():
            assert abs(objective(prop1_family(4.0, s), data, 0.0) - ref) <= 1e-10

    def test_order_reversal_at_lower_end(self):
        (lo, _), _ = prop1_interval(4.0)
        th = prop1_family(4.0, lo + 1e-7)
        assert exact_order_proportion(th, 1, 0) > 0.99

    @pytest.mark.parametrize("s", [0.0, 0.3, 1.2, 2.0])
    def test_outside_interval(self, s):
        with pytest.raises(PreconditionError, match="nominal"):
            prop1_family(4.0, s)

    @settings(max_examples=30, deadline=None)
    @given(st.floats(1.0, 8.0), st.floats(0.01, 0.99))
    def test_any_alpha(self, alpha, frac):
        (lo, hi), _ = prop1_interval(alpha)
        s = lo + frac * (hi - lo)
        th = prop1_family(alpha, s)
        got = [marginal_set_prob(th, x) for x in ([], [0], [1])]
        assert_allclose(got, two_item_probs(alpha), atol=1e-12)


class TestEncoding:
    @settings(max_examples=100)
    @given(st.permutations(list(range(6))), st.integers(0, 6))
    def test_round_trip(self, perm, k):
        seq = tuple(perm[:k])
        assert decode_sequence(encode_sequence(seq, 7), 7) == seq

    def test_histogram_thread_invariant(self):
        th = five_item_model()
        a = restricted_histogram(th, [0, 2, 4], 50000, 3, threads=1)
        b = restricted_histogram(th, [0, 2, 4], 50000, 3, threads=4)
        assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
        assert a[1].sum() == 50000

    def test_restrict_validation(self):
        with pytest.raises(PreconditionError):
            restricted_histogram(np.zeros((3, 3)), [0, 0], 10, 0)
        with pytest.raises(PreconditionError):
            restricted_histogram(np.zeros((3, 3)), [3], 10, 0)


class TestKl:
    def test_self_two_item(self, theta_star):
        rep = kl_recovery(theta_star, theta_star, draws=10**6, rng=0)
        assert rep.kl <= 5e-5 and rep.num_draws == 10**6
        assert rep.histogram_support <= 5

    def test_five_item_support(self):
        assert len(list(all_partial_sequences(5))) == 326
        rep = kl_recovery(five_item_model(), five_item_model(), draws=10**6, rng=1)
        assert rep.histogram_support <= 326
        assert rep.kl <= 3 * (rep.histogram_support / 2) / 10**6 + 4 * rep.stderr

    def test_bias_shrinks_with_draws(self, theta_star):
        small = np.mean([kl_recovery(theta_star, theta_star, draws=10**4, rng=r).kl for r in range(10)])
        large = np.mean([kl_recovery(theta_star, theta_star, draws=10**5, rng=r).kl for r in range(10)])
        assert large < small

    def test_restriction_drops_extra_items(self, theta_star):
        wide = synthetic_model(theta_star, 6, derive(0))
        rep = kl_recovery(wide, theta_star, range(2), draws=10**6, rng=2)
        assert rep.kl <= 5e-5

    def test_wrong_model_positive(self, theta_star):
        other = prop1_family(4.0, 0.6)
        rep = kl_recovery(other, theta_star, draws=10**5, rng=0)
        assert rep.kl > 0.1 and not rep.negative_flag

    def test_restrict_length(self, theta_star):
        with pytest.raises(PreconditionError):
            kl_recovery(np.zeros((3, 3)), theta_star, restrict=[0])


class TestOrder:
    def test_truth_order(self, theta_star):
        rep = order_proportion(theta_star, 0, 1, draws=10**6, rng=0)
        exact = exact_order_proportion(theta_star, 0, 1)
        assert_allclose(exact, 0.98201379, atol=1e-8)
        assert rep.defined and abs(rep.prop_a_first - exact) < 4 * rep.stderr

    def test_swapped_model(self, theta_star):
        sym = theta_star.theta[::-1, ::-1]
        a = order_proportion(theta_star, 0, 1, draws=10**5, rng=0)
        b = order_proportion(sym, 1, 0, draws=10**5, rng=0)
        assert abs(a.prop_a_first - b.prop_a_first) < 3 * (a.stderr + b.stderr)

    def test_exchangeable(self):
        th = np.array([[-1.0, 0.0], [0.0, -1.0]])
        rep = order_proportion(th, 0, 1, draws=10**5, rng=0)
        assert abs(rep.prop_a_first - 0.5) < 3 * rep.stderr

    def test_relabel_invariance(self):
        th = five_item_model().theta
        perm = np.array([3, 0, 4, 1, 2])
        inv = np.argsort(perm)
        relabelled = th[np.ix_(perm, perm)]
        assert_allclose(exact_order_proportion(th, 1, 3),
                        exact_order_proportion(relabelled, inv[1], inv[3]), rtol=1e-12)

    def test_undefined_without_cooccurrence(self):
        th = np.array([[-30.0, 0.0], [0.0, -30.0]])
        rep = order_proportion(th, 0, 1, draws=1000, rng=0)
        assert not rep.defined and math.isnan(rep.prop_a_first)

    def test_same_item(self, theta_star):
        with pytest.raises(PreconditionError):
            order_proportion(theta_star, 1, 1)


def quick_fit(**kw):
    base = dict(epochs=100, mcmc=ChainConfig(num_samples=20, burn_in=5))
    base.update(kw)
    return FitConfig(**base)


class TestStability:
    def test_identical_seeds(self):
        data = generate_dataset(two_item_model(), 100, rng=0)
        rep = stability_report(data, quick_fit(epochs=20), 2, seeds=[7, 7], order_draws=1000)
        assert np.all(rep["range"] == 0) and np.all(rep["order_spread"] == 0)

    def test_single_item_unimodal(self):
        data = generate_dataset(np.array([[-1.0]]), 500, rng=1)
        rep = stability_report(data, quick_fit(), 20, rng=0, order_draws=1000)
        assert rep["range"][0, 0] <= 0.05

    def test_two_item_ridge(self):
        data = generate_dataset(two_item_model(), 500, rng=2)
        rep = stability_report(data, quick_fit(), 20, rng=0, order_draws=10**4)
        assert rep["range"][0, 1] > 1

    def test_needs_two(self):
        with pytest.raises(PreconditionError):
            stability_report(Dataset(1, [[0]]), quick_fit(), 1)


class TestHarness:
    def test_added_items_match_joint_model(self, theta_star):
        base = generate_dataset(theta_star, 200000, with_times=True, rng=0)
        log_rates = [-1.0, -2.5]
        data = add_independent_items(base, log_rates, derive(1))
        full = with_independent_items(theta_star, log_rates)
        counts = {}
        for smp in data.samples:
            counts[smp.items] = counts.get(smp.items, 0) + 1
        for items in [(), (0,), (0, 1), (0, 2), (0, 1, 2), (2, 3), (0, 1, 2, 3)]:
            p = marginal_set_prob(full, items)
            f = counts.get(items, 0) / len(data)
            assert abs(f - p) < 4 * math.sqrt(p * (1 - p) / len(data)) + 1e-6

    def test_added_items_need_times(self, theta_star):
        with pytest.raises(PreconditionError):
            add_independent_items(generate_dataset(theta_star, 5, rng=0), [-2.0], derive(0))

    def test_synthetic_model(self, theta_star):
        model = synthetic_model("two", 5, derive(0))
        assert model.n == 7
        assert_allclose(model.theta[:2, :2], theta_star.theta)
        extra = np.diag(model.theta)[2:]
        assert np.all((extra >= -4) & (extra <= -2))
        assert np.all(model.theta[2:, :2] == 0) and np.all(model.theta[:2, 2:] == 0)

    def test_timing_dataset(self):
        data = timing_dataset(20, 400, seed=0)
        assert data.n == 20 and len(data) == 400
        assert np.array_equal(timing_dataset(20, 400, seed=0).item_arrays()[5],
                              data.item_arrays()[5])

    def test_gradient_error_small(self):
        rows = gradient_error_experiment(n_values=(6,), sample_counts=(5, 50), replicates=4,
                                         samples=100, warm_epochs=20)
        assert len(rows) == 4
        for prop in ("guided", "uniform"):
            errs = {r["M"]: r["error_mean"] for r in rows if r["proposal"] == prop}
            assert errs[50] < errs[5]
