import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from hazard_ctmc.model import (
    MAX_ITEMS,
    Dataset,
    ItemSet,
    ParamMatrix,
    PreconditionError,
    exit_rate,
    five_item_model,
    make_block_diagonal,
    transition_rate,
    transition_rates,
    two_item_model,
    with_independent_items,
)


class TestRates:
    def test_empty_set_rate(self, theta_star):
        assert transition_rate(theta_star, [], 0) == 1.0

    def test_cancelling_exponent(self, theta_star):
        assert transition_rate(theta_star, [0], 1) == 1.0

    def test_second_item_from_empty(self, theta_star):
        assert_allclose(transition_rate(theta_star, [], 1), 0.0183156389, rtol=1e-9)

    def test_exit_rate_empty(self, theta_star):
        assert_allclose(exit_rate(theta_star, []), 1.0183156389, rtol=1e-9)

    def test_exit_rate_full_set_is_zero(self, rng):
        th = ParamMatrix(rng.normal(size=(4, 4)))
        assert exit_rate(th, [0, 1, 2, 3]) == 0.0

    def test_zero_matrix(self):
        assert exit_rate(np.zeros((5, 5)), []) == 5.0

    def test_rate_of_present_item_rejected(self, theta_star):
        with pytest.raises(PreconditionError):
            transition_rate(theta_star, [0], 0)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 7), st.integers(0, 2**32 - 1), st.data())
    def test_exit_rate_is_sum_of_positive_rates(self, n, seed, data):
        th = np.random.default_rng(seed).normal(0, 2, (n, n))
        s = data.draw(st.sets(st.integers(0, n - 1)))
        rates = [transition_rate(th, s, j) for j in range(n) if j not in s]
        assert all(r > 0 for r in rates)
        assert_allclose(exit_rate(th, s), math.fsum(rates), rtol=1e-12, atol=0)

    def test_block_rate_depends_on_own_block(self, rng):
        model = make_block_diagonal([rng.normal(size=(2, 2)), rng.normal(size=(3, 3))])
        # item 3 lives in the second block; adding first-block items changes nothing
        assert transition_rate(model, [2], 3) == transition_rate(model, [0, 1, 2], 3)

    def test_rates_vector_marks_present_items(self, theta_star):
        r = transition_rates(theta_star, [0])
        assert r[0] == 0.0 and r[1] == 1.0


class TestBlocks:
    def test_one_by_one_blocks(self):
        m = make_block_diagonal([[[0.0]], [[-2.0]]])
        assert_array_equal(m.theta, [[0.0, 0.0], [0.0, -2.0]])
        assert m.blocks == ((0, 1), (1, 2))

    def test_two_item_plus_iid(self, theta_star):
        m = with_independent_items(theta_star, [-2.0] * 3)
        assert m.n == 5
        assert not np.any(m.theta[:2, 2:]) and not np.any(m.theta[2:, :2])
        assert_array_equal(np.diag(m.theta)[2:], -2.0)

    def test_two_by_two_blocks_zero_corners(self, rng):
        a, b = rng.normal(size=(2, 2)), rng.normal(size=(2, 2))
        m = make_block_diagonal([a, b])
        assert not np.any(m.theta[:2, 2:]) and not np.any(m.theta[2:, :2])

    def test_blocks_must_tile(self):
        with pytest.raises(PreconditionError):
            ParamMatrix(np.zeros((3, 3)), blocks=[(0, 1), (2, 3)])


class TestParamMatrix:
    def test_frozen_copy(self):
        arr = np.zeros((2, 2))
        m = ParamMatrix(arr)
        arr[0, 0] = 5
        assert m.theta[0, 0] == 0
        with pytest.raises(ValueError):
            m.theta[0, 0] = 1

    @pytest.mark.parametrize("bad", [np.zeros((2, 3)), np.array([[np.nan]]), np.zeros((0, 0))])
    def test_rejects_bad_theta(self, bad):
        with pytest.raises(PreconditionError):
            ParamMatrix(bad)

    def test_too_many_items(self):
        with pytest.raises(PreconditionError):
            ParamMatrix(np.zeros((MAX_ITEMS + 1, MAX_ITEMS + 1)))

    def test_named_models(self):
        assert two_item_model(4.0) == ParamMatrix([[0.0, 4.0], [0.0, -4.0]])
        assert five_item_model().n == 5

    def test_diagonal_check(self):
        assert ParamMatrix(np.diag([1.0, 2.0])).is_diagonal()
        assert not two_item_model().is_diagonal()


class TestItemSetAndDataset:
    def test_item_set_roundtrip(self):
        s = ItemSet.from_items(10, [7, 2, 9])
        assert s.items == (2, 7, 9)
        assert 7 in s and 3 not in s and len(s) == 3

    def test_item_set_bounds(self):
        with pytest.raises(PreconditionError):
            ItemSet.from_items(3, [3])

    def test_dataset_frequencies(self):
        d = Dataset(3, [[0], [0, 2], []])
        assert_allclose(d.frequencies(), [2 / 3, 0, 1 / 3])

    def test_dataset_times_length(self):
        with pytest.raises(PreconditionError):
            Dataset(2, [[0], []], times=[1.0])

    def test_negative_times_rejected(self):
        with pytest.raises(PreconditionError):
            Dataset(1, [[0]], times=[-1.0])

    def test_restrict_relabels(self):
        d = Dataset(4, [[0, 3], [1, 2]], item_names=list("abcd"))
        r = d.restrict([3, 1])
        assert [s.items for s in r.samples] == [(0,), (1,)]
        assert r.item_names == ("d", "b")
