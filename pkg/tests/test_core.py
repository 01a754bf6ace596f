import numpy as np
import pytest

from privfed.core import (Availability, FederatedDataset, PrivacyBudget,
                          Regularizer, RunConfig, clip_gradient)
from privfed.rng import derive_rng


class TestClipGradient:
    def test_zero_vector(self):
        np.testing.assert_array_equal(clip_gradient(np.array([0.0, 0.0]), 1.0),
                                      [0.0, 0.0])

    def test_rescale(self):
        np.testing.assert_allclose(clip_gradient(np.array([3.0, 4.0]), 1.0),
                                   [0.6, 0.8], rtol=0, atol=1e-15)

    def test_inside_ball_untouched(self):
        g = np.array([1.0, 1.0])
        out = clip_gradient(g, 5.0)
        np.testing.assert_array_equal(out, g)

    def test_norm_bounded(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            g = rng.normal(0, 10, rng.integers(1, 8))
            out = clip_gradient(g, 2.0)
            assert np.linalg.norm(out) <= 2.0 * (1 + 1e-12)

    def test_idempotent(self):
        rng = np.random.default_rng(1)
        for _ in range(1000):
            g = rng.normal(0, 5, 6)
            once = clip_gradient(g, 1.3)
            twice = clip_gradient(once, 1.3)
            np.testing.assert_array_equal(once, twice)

    def test_direction_preserved(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            g = rng.normal(0, 1, 5)
            c = float(rng.uniform(0.1, 20))
            out = clip_gradient(c * g, 0.7)
            cos = out @ g / (np.linalg.norm(out) * np.linalg.norm(g))
            assert cos > 1 - 1e-12

    def test_nonfinite_rejected(self):
        with pytest.raises(ValueError):
            clip_gradient(np.array([np.nan, 0.0]), 1.0)
        with pytest.raises(ValueError):
            clip_gradient(np.array([np.inf, 0.0]), 1.0)

    def test_bad_threshold(self):
        with pytest.raises(ValueError):
            clip_gradient(np.array([1.0]), 0.0)


class TestDerivedStreams:
    def test_same_key_reproduces(self):
        a = derive_rng(123, "alg", 4, 2, "noise").random(100)
        b = derive_rng(123, "alg", 4, 2, "noise").random(100)
        np.testing.assert_array_equal(a, b)

    def test_distinct_silos_uncorrelated(self):
        x = derive_rng(123, "alg", 4, 2, "noise").random(100_000)
        y = derive_rng(123, "alg", 4, 3, "noise").random(100_000)
        rho = np.corrcoef(x, y)[0, 1]
        assert abs(rho) < 0.05

    def test_gaussian_moments(self):
        z = derive_rng(7, purpose="gauss").normal(1_000_000)
        assert abs(z.mean()) < 0.005
        assert abs(z.var() - 1.0) < 0.01

    def test_every_key_component_matters(self):
        base = derive_rng(1, "a", 0, 0, "p", 0).random(8)
        for kw in ({"algo": "b"}, {"round_key": 1}, {"silo": 1},
                   {"purpose": "q"}, {"index": 1}):
            other = derive_rng(1, **{"algo": "a", "round_key": 0, "silo": 0,
                                     "purpose": "p", "index": 0, **kw}).random(8)
            assert not np.array_equal(base, other)

    def test_normal_scale_and_shape(self):
        z = derive_rng(3).normal((4, 5), scale=2.5)
        assert z.shape == (4, 5)


class TestFederatedDataset:
    def test_shapes(self):
        ds = FederatedDataset(np.zeros((3, 5, 2)))
        assert (ds.n_silos, ds.records_per_silo, ds.n_features) == (3, 5, 2)

    def test_labels_shape_checked(self):
        with pytest.raises(ValueError):
            FederatedDataset(np.zeros((3, 5, 2)), labels=np.zeros((3, 4)))

    def test_nonfinite_rejected(self):
        feats = np.zeros((2, 2, 2))
        feats[0, 0, 0] = np.nan
        with pytest.raises(ValueError):
            FederatedDataset(feats)

    def test_replace_record(self):
        ds = FederatedDataset(np.zeros((2, 3, 2)), labels=np.ones((2, 3)))
        ds2 = ds.replace_record(1, 2, np.array([5.0, 6.0]), label=-1.0)
        assert ds.features[1, 2, 0] == 0.0
        assert ds2.features[1, 2, 0] == 5.0
        assert ds2.labels[1, 2] == -1.0


class TestAvailability:
    def test_fixed_subset_size(self):
        av = Availability.fixed_m(3)
        for r in range(50):
            s = av.draw(derive_rng(0, "avail", r), 10)
            assert len(s) == 3 and len(set(s.tolist())) == 3
            assert sorted(s.tolist()) == s.tolist()

    def test_inclusion_frequency(self):
        N, M, rounds = 8, 3, 10_000
        av = Availability.fixed_m(M)
        counts = np.zeros(N)
        for r in range(rounds):
            counts[av.draw(derive_rng(1, "avail", r), N)] += 1
        freq = counts / rounds
        p = M / N
        se = np.sqrt(p * (1 - p) / rounds)
        assert np.all(np.abs(freq - p) <= 3 * se)

    def test_random_mode(self):
        av = Availability.random_m([2, 4])
        sizes = {len(av.draw(derive_rng(2, "avail", r), 6)) for r in range(100)}
        assert sizes == {2, 4}
        assert av.expected_inverse_m(6) == pytest.approx((1 / 2 + 1 / 4) / 2)

    def test_m_exceeds_n(self):
        with pytest.raises(ValueError):
            Availability.fixed_m(7).draw(derive_rng(0), 5)


class TestConfigTypes:
    def test_privacy_budget_ranges(self):
        with pytest.raises(ValueError):
            PrivacyBudget(0.0, 1e-5)
        with pytest.raises(ValueError):
            PrivacyBudget(1.0, 0.5)
        PrivacyBudget(1.0, 0.49)

    def test_runconfig_requires_budget(self):
        with pytest.raises(ValueError):
            RunConfig(mechanism="gaussian")
        RunConfig(mechanism="none")

    def test_runconfig_positivity(self):
        with pytest.raises(ValueError):
            RunConfig(rounds=0, mechanism="none")
        with pytest.raises(ValueError):
            RunConfig(eta=0.0, mechanism="none")

    def test_regularizer_menu(self):
        assert Regularizer.zero().kind == "zero"
        assert Regularizer.l1(0.5).kind == "l1"
        assert Regularizer.ball(2.0).kind == "ball"
        assert Regularizer.l1_ball(0.5, 2.0).kind == "l1_ball"
        with pytest.raises(ValueError):
            Regularizer.l1(-1.0)
        with pytest.raises(ValueError):
            Regularizer.ball(0.0)

    def test_indicator_value(self):
        r = Regularizer.ball(1.0)
        assert r.value(np.array([0.5, 0.5])) == 0.0
        assert r.value(np.array([2.0, 0.0])) == np.inf
