import math

import numpy as np
import pytest

from privfed.core import PrivacyBudget, RunConfig
from privfed.privacy import (InfeasibleConfigError, ZcdpLedger,
                             advanced_composition, amplify_by_subsampling,
                             compose_zcdp, gaussian_sigma_sq,
                             isrl_to_user_level, plan_noise,
                             update_sensitivity, zcdp_to_dp)


class TestGaussianSigma:
    def test_worked_value(self):
        got = gaussian_sigma_sq(0.2, PrivacyBudget(1.0, 0.01))
        assert got == pytest.approx(0.16 * math.log(100.0), rel=1e-12)
        assert got == pytest.approx(0.7368272297580947, rel=1e-9)

    def test_zero_sensitivity(self):
        assert gaussian_sigma_sq(0.0, PrivacyBudget(1.0, 0.01)) == 0.0

    def test_homogeneous_degree_two(self):
        b = PrivacyBudget(0.7, 1e-3)
        assert gaussian_sigma_sq(0.4, b) == pytest.approx(
            4 * gaussian_sigma_sq(0.2, b), rel=1e-12)

    def test_precondition_named(self):
        with pytest.raises(InfeasibleConfigError) as err:
            gaussian_sigma_sq(1.0, PrivacyBudget(10.0, 0.2))
        assert "epsilon <= 2*ln(1/delta)" in str(err.value)


class TestZcdp:
    def test_zero(self):
        assert zcdp_to_dp(0.0, 0.1) == 0.0

    def test_worked_value(self):
        got = zcdp_to_dp(0.125, math.exp(-1.0))
        assert got == pytest.approx(0.125 + 2 * math.sqrt(0.125), rel=1e-12)
        assert got == pytest.approx(0.8321067811865476, rel=1e-9)

    def test_round_trip_bounded(self):
        eps, delta = 1.0, 1e-5
        rho = eps ** 2 / (8.0 * math.log(1.0 / delta))
        assert zcdp_to_dp(rho, delta) <= eps

    def test_ledger_composition(self):
        ledger = ZcdpLedger()
        assert ledger.total == 0.0
        ledger = compose_zcdp(compose_zcdp(ledger, 0.1), 0.2)
        assert ledger.total == pytest.approx(0.3, rel=1e-15)
        for _ in range(5):
            ledger = compose_zcdp(ledger, 0.3)
        assert ledger.total == pytest.approx(0.3 + 5 * 0.3, rel=1e-12)
        with pytest.raises(ValueError):
            compose_zcdp(ledger, -0.1)

    def test_compose_then_convert_matches_direct(self):
        # T copies of rho through the ledger == Prop applied to T*rho exactly
        rho, T, delta = 0.0123, 7, 1e-4
        ledger = ZcdpLedger()
        for _ in range(T):
            ledger = compose_zcdp(ledger, rho)
        assert ledger.to_dp(delta) == zcdp_to_dp(T * rho, delta)


class TestAdvancedComposition:
    def test_single_round_formula(self):
        eps, delta, dp = 0.3, 1e-5, 1e-6
        got_eps, got_delta = advanced_composition(eps, delta, 1, dp)
        expect = math.sqrt(2 * math.log(1 / dp)) * eps + eps * (math.e ** eps - 1)
        assert got_eps == pytest.approx(expect, rel=1e-12)
        assert got_delta == pytest.approx(delta + dp, rel=1e-12)

    def test_worked_value(self):
        got_eps, got_delta = advanced_composition(0.1, 1e-8, 100, 1e-6)
        assert got_eps == pytest.approx(6.308230947268184, rel=1e-9)
        assert got_delta == pytest.approx(100e-8 + 1e-6, rel=1e-12)

    def test_vanishes_with_epsilon(self):
        got_eps, _ = advanced_composition(1e-9, 1e-9, 50, 1e-6)
        assert got_eps < 1e-6

    def test_monotone_in_each_argument(self):
        base = advanced_composition(0.2, 1e-6, 10, 1e-6)[0]
        assert advanced_composition(0.3, 1e-6, 10, 1e-6)[0] > base
        assert advanced_composition(0.2, 1e-6, 20, 1e-6)[0] > base
        assert advanced_composition(0.2, 1e-6, 10, 1e-8)[0] > base


class TestAmplification:
    def test_full_rate(self):
        assert amplify_by_subsampling(0.4, 1.0) == pytest.approx(0.8)

    def test_worked_value(self):
        assert amplify_by_subsampling(0.5, 0.1) == pytest.approx(0.1)

    def test_zero_rate(self):
        assert amplify_by_subsampling(0.5, 0.0) == 0.0

    def test_large_epsilon_rejected(self):
        with pytest.raises(InfeasibleConfigError):
            amplify_by_subsampling(1.5, 0.1)


class TestUserLevel:
    def test_n_one_identity(self):
        assert isrl_to_user_level(0.3, 1e-5, 1) == (0.3, 1e-5)

    def test_worked_value(self):
        eps_u, delta_u = isrl_to_user_level(0.5, 1e-5, 2)
        assert eps_u == pytest.approx(1.0)
        assert delta_u == pytest.approx(3.297442541400256e-05, rel=1e-9)

    def test_zero_epsilon(self):
        eps_u, delta_u = isrl_to_user_level(0.0, 1e-5, 7)
        assert eps_u == 0.0
        assert delta_u == pytest.approx(7e-5)


class TestUpdateSensitivity:
    def test_sgd_batch(self):
        assert update_sensitivity("sgd_batch", 1.0, K=10) == pytest.approx(0.2)

    def test_spider_diff_zero_step(self):
        assert update_sensitivity("spider_diff", 1.0, n=10, beta=3.0,
                                  step_norm=0.0) == 0.0

    def test_svrg_is_twice_sgd(self):
        for K in (1, 5, 40):
            assert update_sensitivity("svrg_diff", 2.0, K=K) == pytest.approx(
                2 * update_sensitivity("sgd_batch", 2.0, K=K))

    def test_spider_diff_cap(self):
        # large steps fall back to the 4L/n cap
        assert update_sensitivity("spider_diff", 1.0, n=10, beta=3.0,
                                  step_norm=100.0) == pytest.approx(0.4)
        assert update_sensitivity("spider_full", 1.0, n=10) == pytest.approx(0.2)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            update_sensitivity("bogus", 1.0)


def _cfg(eps, delta, **kw):
    return RunConfig(privacy=PrivacyBudget(eps, delta), **kw)


class TestPlanNoise:
    def test_prox_sgd_worked_value(self):
        # K = floor(200/10) = 20: sigma^2 = 8 ln(100)/400
        cfg = _cfg(1.0, 0.01, rounds=10)
        plan = plan_noise("isrl_prox_sgd", cfg, n=200, d=3, L=1.0, beta=1.0)
        assert plan.batch_size == 20
        assert plan.sigma_sq == pytest.approx(8 * math.log(100.0) / 400.0, rel=1e-12)
        assert plan.sigma_sq == pytest.approx(0.09210340371976184, rel=1e-9)

    def test_prox_sgd_k_zero_infeasible(self):
        with pytest.raises(InfeasibleConfigError) as err:
            plan_noise("isrl_prox_sgd", _cfg(1.0, 0.01, rounds=300), n=200,
                       d=3, L=1.0, beta=1.0)
        assert "floor(n/R)" in err.value.constraint

    def test_svrg_batch_bound_enforced(self):
        # K below eps*n/(4*sqrt(2SR ln(2/delta))) must be rejected by name
        cfg = _cfg(8.0, 1e-6, epochs=2, k=4)
        with pytest.raises(InfeasibleConfigError) as err:
            plan_noise("isrl_prox_svrg", cfg, n=100, d=3, L=1.0, beta=1.0)
        assert "K >= eps*n" in err.value.constraint

    def test_svrg_formulas(self):
        n, eps, delta = 400, 1.0, 1e-5
        cfg = _cfg(eps, delta, epochs=3, k=100, restarts=2)
        plan = plan_noise("isrl_prox_pl_svrg", cfg, n=n, d=2, L=2.0, beta=1.0)
        S, E = 2, 3
        Q = n // 100
        R = E * Q
        s1 = 256 * 4 * S * E * math.log(2 / delta) * math.log(5 * E / delta) / (eps ** 2 * n ** 2)
        s2 = 1024 * 4 * S * R * math.log(2 / delta) * math.log(2.5 * R / delta) / (eps ** 2 * n ** 2)
        assert plan.sigma1_sq == pytest.approx(s1, rel=1e-12)
        assert plan.sigma2_sq == pytest.approx(s2, rel=1e-12)
        assert plan.epoch_length == Q

    def test_spider_formulas_and_slope_zero_step(self):
        n, eps, delta, beta = 300, 1.0, 1e-4, 2.5
        cfg = _cfg(eps, delta, rounds=12, q=3)
        plan = plan_noise("isrl_spider", cfg, n=n, d=4, L=1.5, beta=beta)
        ln1d = math.log(1 / delta)
        assert plan.sigma1_sq == pytest.approx(
            16 * 1.5 ** 2 * ln1d / (eps ** 2 * n ** 2) * 4.0, rel=1e-12)
        assert plan.sigma2_sq_slope == pytest.approx(
            16 * beta ** 2 * 12 * ln1d / (eps ** 2 * n ** 2), rel=1e-12)
        assert plan.sigma2_sq_cap == pytest.approx(
            64 * 1.5 ** 2 * 12 * ln1d / (eps ** 2 * n ** 2), rel=1e-12)
        from privfed.optimizers.spider import diff_noise_variance
        assert diff_noise_variance(plan, 0.0) == 0.0  # zero step, slope term
        assert diff_noise_variance(plan, 1e9) == plan.sigma2_sq_cap

    def test_spider_alt_formulas(self):
        n, eps, delta, R = 256, 1.0, 1e-4, 16
        cfg = _cfg(eps, delta, rounds=R)
        plan = plan_noise("isrl_spider_alt", cfg, n=n, d=4, L=1.0, beta=1.0)
        assert plan.sigma1_sq == pytest.approx(
            32 * math.log(2 / delta) * R / (n ** 2), rel=1e-12)
        assert plan.sigma2_sq == pytest.approx(
            8 * math.log(2 / delta) * R / (n ** 2), rel=1e-12)
        # K1 = K2 = n sqrt(eps) / (2 sqrt(R)) = 256/8 = 32
        assert plan.inputs["K1"] == 32

    def test_plans_homogeneous_in_L(self):
        cfg = _cfg(1.0, 1e-4, rounds=5, q=2, epochs=2, k=50)
        for alg in ("isrl_prox_sgd", "isrl_prox_svrg", "isrl_spider",
                    "isrl_spider_alt", "mb_sgd"):
            p1 = plan_noise(alg, cfg, n=100, d=3, L=1.0, beta=2.0)
            p2 = plan_noise(alg, cfg, n=100, d=3, L=3.0, beta=2.0)
            for field in ("sigma_sq", "sigma1_sq", "sigma2_sq", "sigma2_sq_cap"):
                v1, v2 = getattr(p1, field), getattr(p2, field)
                if v1 is not None and v1 > 0:
                    assert v2 == pytest.approx(9.0 * v1, rel=1e-12), (alg, field)

    def test_gaussian_precondition_at_plan_time(self):
        cfg = _cfg(10.0, 0.2, rounds=2)
        with pytest.raises(InfeasibleConfigError) as err:
            plan_noise("isrl_prox_sgd", cfg, n=100, d=3, L=1.0, beta=1.0)
        assert "2*ln(1/delta)" in err.value.constraint

    def test_sdp_prox_sgd_m_condition(self):
        from privfed.core import Availability
        cfg = RunConfig(privacy=PrivacyBudget(4.0, 1e-3), mechanism="shuffle",
                        rounds=4, availability=Availability.fixed_m(2))
        with pytest.raises(InfeasibleConfigError) as err:
            plan_noise("sdp_prox_sgd", cfg, n=100, d=3, L=1.0, beta=1.0,
                       n_silos=10)
        assert "M >= N*min(eps/2, 1)" in err.value.constraint

    def test_nonprivate_plan_marks_infinity(self):
        cfg = RunConfig(mechanism="none", rounds=3)
        plan = plan_noise("isrl_prox_sgd", cfg, n=30, d=2, L=1.0, beta=1.0)
        assert plan.sigma_sq == 0.0
        assert plan.as_dict()["end_to_end_epsilon"] == "inf"

    def test_end_to_end_epsilon_below_budget(self):
        cfg = _cfg(2.0, 1e-5, rounds=4)
        plan = plan_noise("isrl_prox_sgd", cfg, n=100, d=3, L=1.0, beta=1.0)
        assert plan.end_to_end_epsilon() <= 2.0


class TestEmpiricalSensitivity(object):
    """Pre-noise message differences over random adjacent datasets stay
    within the declared bounds (the adjacency harness covers the full grid;
    this is the fast core check)."""

    def test_sgd_batch_bound_holds(self, quad_small):
        from privfed.optimizers import messages
        loss, ds = quad_small.loss, quad_small.dataset
        L = loss.lipschitz_L
        rng = np.random.default_rng(0)
        n = ds.records_per_silo
        K = 5
        for trial in range(100):
            i = int(rng.integers(ds.n_silos))
            j = int(rng.integers(n))
            # the swapped record occupies exactly one batch slot, matching
            # the conditioned-on-sampling sensitivity argument
            idx = rng.integers(0, n, K)
            idx[idx == j] = (j + 1) % n
            idx[0] = j
            w = rng.normal(0, 2, ds.n_features)
            feats, labels = ds.silo(i)
            feats2 = feats.copy()
            feats2[j] = rng.normal(0, 50, ds.n_features)
            m1 = messages.sgd_message(loss, w, feats, labels, idx)
            m2 = messages.sgd_message(loss, w, feats2, labels, idx)
            assert np.linalg.norm(m1 - m2) <= 2 * L / K * (1 + 1e-9)
