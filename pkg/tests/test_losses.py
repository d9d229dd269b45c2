import math

import numpy as np
import pytest

from fusionerc import losses as L
from fusionerc import tensor as T
from fusionerc.gradcheck import gradcheck
from fusionerc.losses import ExtractorLossConfig, TripletDistances
from fusionerc.tensor import Tensor

# mpmath, 30 digits
M_HALF = 1.27067056647322538378799898994
AMT_111 = 4.03663127777746836058743604255
LN7 = 1.94591014905531330510535274344


def leaf(x):
    return Tensor(np.asarray(x, dtype=float), requires_grad=True)


class TestDistance:
    def test_self(self):
        assert L.pairwise_distance([0.3, 0.4], [0.3, 0.4]) == 0.0

    def test_orthogonal(self):
        assert L.pairwise_distance([1, 0], [0, 1]) == pytest.approx(math.sqrt(2), abs=1e-15)

    def test_manual(self):
        assert L.pairwise_distance([1, 0], [0.6, 0.8]) == pytest.approx(math.sqrt(0.8), abs=1e-15)

    def test_mismatch(self):
        with pytest.raises(ValueError):
            L.pairwise_distance([1, 0], [1, 0, 0])


class TestMargin:
    def test_exact(self):
        m = L.adaptive_margin(0.0, 1.0)
        assert (m.m_sim, m.m_dissim, m.m_am) == (3.0, 3.0, 6.0)

    def test_half(self):
        m = L.adaptive_margin(0.5, 0.5)
        assert m.m_sim == pytest.approx(M_HALF, abs=1e-14)
        assert m.m_dissim == pytest.approx(M_HALF, abs=1e-14)
        assert m.m_am == pytest.approx(2 * M_HALF, abs=1e-14)

    def test_monotone_and_bounded_on_grid(self):
        grid = np.linspace(0, 2, 100)
        sims = [L.adaptive_margin(d, 0.0).m_sim for d in grid]
        dissims = [L.adaptive_margin(0.0, d).m_dissim for d in grid]
        assert np.all(np.diff(sims) < 0) and np.all(np.diff(dissims) > 0)
        assert all(1 < s <= 3 for s in sims)
        assert all(d >= 1 + 2 * math.exp(-4) - 1e-15 for d in dissims)
        for a in grid[::10]:
            for n in grid[::10]:
                m = L.adaptive_margin(a, n)
                assert m.m_am == m.m_sim + m.m_dissim
                assert 2 < m.m_am <= 3 + 1 + 2 * math.exp(4) + 1e-12


class TestAmt:
    def test_exact(self):
        assert L.amt_loss(TripletDistances(0.0, 1.0, 1.0)) == 5.0

    def test_all_ones(self):
        assert L.amt_loss(TripletDistances(1.0, 1.0, 1.0)) == pytest.approx(AMT_111, abs=1e-14)

    def test_tensor_matches_scalar(self):
        rng = np.random.default_rng(0)
        d = rng.uniform(0, 2, size=(3, 30))
        vals = L.amt_loss_tensor(*d).data
        for i in range(30):
            assert vals[i] == pytest.approx(L.amt_loss(TripletDistances(*d[:, i])), abs=1e-13)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            ds = [leaf(rng.uniform(0, 2, size=4)) for _ in range(3)]
            res = gradcheck(lambda: L.amt_loss_tensor(*ds).sum(), ds)
            assert res.passed(1e-4), res.per_input

    def test_exact_gradient_closed_form(self):
        d = [leaf([0.2]), leaf([0.7]), leaf([0.4])]
        L.amt_loss_tensor(*d).sum().backward()
        assert d[0].grad[0] == pytest.approx(1 - 8 * math.exp(-0.8), abs=1e-12)
        assert d[1].grad[0] == pytest.approx(-0.5 + 8 * math.exp(4 * 0.7 - 4), abs=1e-12)
        assert d[2].grad[0] == -0.5

    def test_constant_margin_gradient_never_vanishes(self):
        grid = np.linspace(0, 2, 50)
        d = [leaf(grid), leaf(grid[::-1].copy()), leaf(np.full(50, 0.3))]
        L.amt_loss_tensor(*d, margin_gradient=False).sum().backward()
        assert np.all(d[0].grad > 0)
        np.testing.assert_array_equal(d[0].grad, 1.0)
        np.testing.assert_array_equal(d[1].grad, -0.5)
        np.testing.assert_array_equal(d[2].grad, -0.5)

    def test_constant_margin_has_same_value(self):
        rng = np.random.default_rng(2)
        d = rng.uniform(0, 2, size=(3, 10))
        np.testing.assert_array_equal(L.amt_loss_tensor(*d, margin_gradient=False).data, L.amt_loss_tensor(*d).data)


class TestVariance:
    def test_collapsed(self):
        z = np.tile(np.random.default_rng(0).normal(size=5), (8, 1))
        assert abs(L.variance_loss(z, 1e-4).item() - (1 - math.sqrt(1e-4))) < 1e-12

    def test_unit_variance(self):
        z = np.array([[-1.0, 1.0], [1.0, -1.0]]) / math.sqrt(2)
        assert L.variance_loss(z).item() == pytest.approx(-0.0000499987500624960940234, abs=1e-15)

    def test_var_two_column(self):
        z = np.array([[-1.0], [1.0]])
        assert L.variance_loss(z).item() == pytest.approx(1 - math.sqrt(2 + 1e-4), abs=1e-15)

    def test_too_few_rows(self):
        with pytest.raises(ValueError):
            L.variance_loss(np.ones((1, 3)))

    def test_collapse_worse_than_spread(self):
        rng = np.random.default_rng(1)
        collapsed = L.variance_loss(np.ones((10, 4))).item()
        for _ in range(20):
            z = rng.normal(size=(10, 4))
            z = (z - z.mean(0)) / z.std(0, ddof=1) * rng.uniform(1, 3, size=4)
            assert collapsed > L.variance_loss(z).item()


class TestCovariance:
    def test_single_dim(self):
        assert L.covariance_loss(np.random.default_rng(0).normal(size=(6, 1))).item() == 0.0

    def test_independent_columns_small(self):
        z = np.random.default_rng(42).normal(size=(1000, 8))
        assert L.covariance_loss(z).item() < 0.05

    def test_perfect_correlation(self):
        col = np.array([-1.0, 1.0, -1.0, 1.0])
        col = col / col.std(ddof=1)
        z = np.stack([col, col], axis=1)
        assert abs(L.covariance_loss(z).item() - 1.0) < 1e-9

    def test_raw_variant_is_signed(self):
        col = np.array([-1.0, 1.0])
        z = np.stack([col, -col], axis=1) / math.sqrt(2)
        assert L.covariance_loss(z, squared=False).item() == pytest.approx(-1.0)
        assert L.covariance_loss(z).item() == pytest.approx(1.0)

    def test_translation_invariant(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            z = rng.normal(size=(7, 5))
            shifted = z + rng.normal(scale=10, size=(1, 5))
            assert L.covariance_loss(shifted).item() == pytest.approx(L.covariance_loss(z).item(), rel=1e-9)

    def test_matches_numpy_cov(self):
        z = np.random.default_rng(4).normal(size=(9, 4))
        c = np.cov(z, rowvar=False)
        expected = (np.sum(c ** 2) - np.sum(np.diag(c) ** 2)) / 4
        assert L.covariance_loss(z).item() == pytest.approx(expected, rel=1e-12)


class TestExtractorLoss:
    def test_zero_weights(self):
        rng = np.random.default_rng(0)
        z = [rng.normal(size=(5, 3)) for _ in range(3)]
        total, _ = L.extractor_loss(*z, ExtractorLossConfig(0.0, 0.0, 0.0))
        assert total.item() == 0.0

    def test_combination(self):
        assert L.combine_extractor_loss(5.0, 1.0, 0.99, ExtractorLossConfig()) == pytest.approx(105.99, abs=1e-12)

    def test_components_consistent(self):
        rng = np.random.default_rng(1)
        z = [rng.normal(size=(6, 4)) for _ in range(3)]
        total, parts = L.extractor_loss(*z)
        assert total.item() == pytest.approx(20 * parts["amt"] + 5 * parts["cov"] + parts["var"], rel=1e-12)

    @pytest.mark.parametrize("weights", [(1, 0, 0), (0, 1, 0), (0, 0, 1), (20, 5, 1)])
    def test_every_term_has_live_gradient(self, weights):
        rng = np.random.default_rng(2)
        cfg = ExtractorLossConfig(*weights, margin_gradient=True)
        for _ in range(5):
            raw = [rng.normal(size=(5, 3)) for _ in range(3)]
            z = [leaf(r / np.linalg.norm(r, axis=1, keepdims=True)) for r in raw]
            res = gradcheck(lambda: L.extractor_loss(*z, cfg)[0], z)
            assert res.passed(1e-4), res.per_input
            assert any(np.abs(t.grad).max() > 1e-6 for t in z)

    def test_variance_and_covariance_gradients(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            z = leaf(rng.normal(size=(int(rng.integers(2, 7)), int(rng.integers(1, 5)))))
            assert gradcheck(lambda: L.variance_loss(z), [z]).passed(1e-4)
            assert gradcheck(lambda: L.covariance_loss(z), [z]).passed(1e-4)


class TestCrossEntropy:
    def test_perfect(self):
        probs = np.eye(4)[[0, 2, 3]]
        assert L.cross_entropy(probs, [0, 2, 3]).item() == 0.0

    def test_uniform(self):
        probs = np.full((2, 5, 7), 1 / 7)
        labels = np.random.default_rng(0).integers(0, 7, size=(2, 5))
        assert abs(L.cross_entropy(probs, labels).item() - LN7) < 1e-12

    def test_manual(self):
        assert L.cross_entropy([[0.5, 0.25, 0.25]], [0]).item() == pytest.approx(math.log(2), abs=1e-15)

    def test_floor(self):
        assert L.cross_entropy([[1.0, 0.0]], [1]).item() == pytest.approx(-math.log(1e-12))

    def test_invalid_label(self):
        with pytest.raises(ValueError):
            L.cross_entropy([[0.5, 0.5]], [2])
        with pytest.raises(ValueError):
            L.cross_entropy([[0.5, 0.5]], [-1])

    def test_gradient_through_softmax(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            logits = leaf(rng.normal(size=(2, 3, 4)))
            labels = rng.integers(0, 4, size=(2, 3))
            assert gradcheck(lambda: L.cross_entropy(T.softmax(logits, -1), labels), [logits]).passed(1e-4)
