"""
Unit tests for the platoon stability and gap-acceptance module
"""

import math
import os
import sys
import unittest

import numpy as np

# Add the project root to the path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

from app.core.delay_pgf import reliability, transmission_profile
from app.core.errors import DomainError
from app.core.platoon import (
    bovf,
    bovf_slope,
    characteristic_function,
    characteristic_roots,
    comm_delay_budget,
    contending_stations,
    count_sign_changes,
    critical_delay,
    draw_kappa,
    equilibrium_headway,
    equilibrium_speed,
    gap_acceptance,
    integrate_linear_platoon,
    integrate_platoon,
    is_non_oscillatory,
    lambda0_from_gap,
    stability_analysis,
)
from app.core.sweeps import PLATOON_COLUMNS, platoon_sweep
from app.models.results import DelayMoments
from app.models.scenario import FvdParams, GapAcceptanceModel, NetworkScenario, PlatoonConfig

# Real dominant roots at tau = 0.05
DAMPED = FvdParams(a=0.5, l=2.5, v0=2.0, y_tilde=2.0, n_vehicles=3)
# Stable but with a complex dominant pair at tau = 0.1
RINGING = FvdParams(a=1.0, l=0.0, v0=10.0, y_tilde=2.0, n_vehicles=3)


class TestOptimalVelocity(unittest.TestCase):
    """Test cases for the optimal velocity function"""

    def setUp(self):
        """Set up test fixtures"""
        self.params = FvdParams(v0=10.0, y_m=4.0, y_tilde=2.0)

    def test_value_at_inflection(self):
        self.assertAlmostEqual(float(bovf(4.0, self.params)), 10.0 * math.tanh(2.0), places=12)
        self.assertAlmostEqual(float(bovf(4.0, self.params)), 9.64028, places=5)

    def test_zero_headway_gives_zero_speed(self):
        self.assertAlmostEqual(float(bovf(0.0, self.params)), 0.0, places=12)

    def test_slope(self):
        self.assertAlmostEqual(float(bovf_slope(6.0, self.params)), 2.09987, places=5)
        h = 1e-6
        numeric = (bovf(6.0 + h, self.params) - bovf(6.0 - h, self.params)) / (2 * h)
        self.assertAlmostEqual(float(bovf_slope(6.0, self.params)), float(numeric), places=6)

    def test_vectorized(self):
        values = bovf(np.array([2.0, 4.0, 6.0]), self.params)
        self.assertEqual(values.shape, (3,))
        self.assertTrue(np.all(np.diff(values) > 0))

    def test_equilibrium_headway_inverts_speed(self):
        speed = equilibrium_speed(7.0, self.params)
        self.assertAlmostEqual(equilibrium_headway(speed, self.params), 7.0, places=9)
        with self.assertRaises(DomainError):
            equilibrium_headway(100.0, self.params)


class TestCriticalDelay(unittest.TestCase):
    """Test cases for critical_delay"""

    def setUp(self):
        """Set up test fixtures"""
        self.params = FvdParams()

    def test_default_headway(self):
        result = critical_delay(self.params, 5.0)
        self.assertAlmostEqual(result.v_prime, 7.5, places=12)
        self.assertAlmostEqual(result.d_tilde, 0.6 * 7.5 / 1.1, places=12)
        self.assertAlmostEqual(result.sigma_root, result.d_tilde * (-2 - math.sqrt(2)), places=12)
        self.assertAlmostEqual(result.sigma_other, result.d_tilde * (-2 + math.sqrt(2)), places=12)
        self.assertAlmostEqual(result.tau_c, 0.2068, delta=1e-3)

    def test_real_root_at_sigma(self):
        for y_star in (2.0, 5.0, 8.0):
            result = critical_delay(self.params, y_star)
            sigma = result.sigma_root
            residual = abs(characteristic_function(sigma, self.params, y_star, result.tau_c))
            self.assertLessEqual(residual, 1e-6 * max(1.0, sigma ** 2))

    def test_root_finder_recovers_sigma(self):
        result = critical_delay(self.params, 5.0)
        roots = characteristic_roots(self.params, 5.0, result.tau_c, count=50)
        real = roots[np.abs(roots.imag) < 1e-9].real
        self.assertTrue(np.any(np.abs(real - result.sigma_root) < 1e-6 * abs(result.sigma_root)))

    def test_mov_uses_full_slope(self):
        params = FvdParams(l=0.0)
        result = critical_delay(params, 5.0)
        self.assertAlmostEqual(result.d_tilde, result.v_prime, places=12)

    def test_flat_optimal_velocity_rejected(self):
        with self.assertRaises(DomainError):
            critical_delay(self.params, 1000.0)

    def test_non_positive_budget_at_long_headway(self):
        self.assertLessEqual(critical_delay(self.params, 10.0).tau_c, 0.0)


class TestCharacteristicRoots(unittest.TestCase):
    """Test cases for the root finder and the oscillation classifier"""

    def test_undelayed_roots(self):
        roots = characteristic_roots(DAMPED, 5.0, 0.0)
        stiffness = 0.5 * float(bovf_slope(5.0, DAMPED))
        expected = np.sort(np.roots([1.0, 3.0, stiffness]).real)[::-1]
        self.assertTrue(np.allclose(roots.real, expected))

    def test_roots_satisfy_equation(self):
        roots = characteristic_roots(RINGING, 5.0, 0.1)
        self.assertGreater(roots.size, 0)
        for root in roots:
            value = characteristic_function(root, RINGING, 5.0, 0.1)
            self.assertLess(abs(value), 1e-6 * max(1.0, abs(root) ** 2))

    def test_sorted_by_real_part(self):
        roots = characteristic_roots(RINGING, 5.0, 0.1)
        self.assertTrue(np.all(np.diff(roots.real) <= 1e-12))

    def test_classification(self):
        self.assertTrue(is_non_oscillatory(DAMPED, 5.0, 0.05))
        self.assertFalse(is_non_oscillatory(RINGING, 5.0, 0.1))

    def test_count_sign_changes(self):
        self.assertEqual(count_sign_changes([1.0, -1.0, 1.0, -1.0]), 3)
        self.assertEqual(count_sign_changes([1.0, 1e-9, -1e-9, 1.0], threshold=1e-6), 0)
        self.assertEqual(count_sign_changes([]), 0)


class TestPlatoonIntegration(unittest.TestCase):
    """Test cases for the delayed car-following integration"""

    def test_equilibrium_is_stationary(self):
        params = FvdParams(tau=0.1, n_vehicles=4)
        trajectory = integrate_platoon(params, 5.0, 5.0, dt=5e-3)
        self.assertTrue(np.allclose(trajectory.headways, 5.0, atol=1e-9))
        self.assertTrue(np.allclose(trajectory.rel_velocities, 0.0, atol=1e-9))

    def test_damped_regime_does_not_oscillate(self):
        delta = 0.1
        params = DAMPED.model_copy(update={"tau": 0.05})
        trajectory = integrate_platoon(params, 5.0, 20.0, dt=2e-3, perturbation=delta)
        error = trajectory.headway_error(0)
        self.assertEqual(count_sign_changes(error, 1e-6 * delta), 0)
        self.assertLess(abs(error[-1]), abs(error[0]))

    def test_ringing_regime_oscillates(self):
        delta = 0.1
        params = RINGING.model_copy(update={"tau": 0.1})
        trajectory = integrate_platoon(params, 5.0, 20.0, dt=2e-3, perturbation=delta)
        error = trajectory.headway_error(0)
        self.assertGreaterEqual(count_sign_changes(error, 1e-6 * delta), 2)
        self.assertLess(np.abs(error[-500:]).max(), delta)

    def test_linearized_model_agrees_for_small_perturbation(self):
        delta = 0.01
        params = RINGING.model_copy(update={"tau": 0.1})
        nonlinear = integrate_platoon(params, 5.0, 10.0, dt=2e-3, perturbation=delta)
        linear = integrate_linear_platoon(params, 5.0, 10.0, dt=2e-3, perturbation=delta)
        gap = np.abs(nonlinear.headways - linear.headways).max()
        self.assertLess(gap, 0.05 * delta)

    def test_step_must_resolve_delay(self):
        params = FvdParams(tau=0.1)
        with self.assertRaises(DomainError):
            integrate_platoon(params, 5.0, 1.0, dt=0.01)

    def test_step_divides_delay(self):
        params = FvdParams(tau=0.1, n_vehicles=2)
        trajectory = integrate_platoon(params, 5.0, 0.5, dt=3e-3)
        step = trajectory.times[1] - trajectory.times[0]
        self.assertAlmostEqual(0.1 / step, round(0.1 / step), places=9)

    def test_horizon_must_be_positive(self):
        with self.assertRaises(DomainError):
            integrate_platoon(FvdParams(), 5.0, 0.0)


class TestGapAcceptance(unittest.TestCase):
    """Test cases for gap acceptance and the packet-rate mapping"""

    def setUp(self):
        """Set up test fixtures"""
        self.linear = GapAcceptanceModel()
        self.logarithmic = GapAcceptanceModel(mapping="log")

    def test_logistic_value(self):
        p = gap_acceptance(5.0, 10.0, self.linear)
        self.assertAlmostEqual(p, 1.0 / (1.0 + math.exp(1.607)), places=12)
        self.assertAlmostEqual(p, 0.167, delta=1e-3)

    def test_monotone_in_time_gap(self):
        values = [gap_acceptance(y, 10.0, self.linear) for y in np.linspace(1.0, 50.0, 20)]
        self.assertTrue(np.all(np.diff(values) > 0))
        self.assertAlmostEqual(gap_acceptance(1e-9, 10.0, self.linear),
                               1.0 / (1.0 + math.exp(1.933)), places=9)

    def test_printed_expression(self):
        g = GapAcceptanceModel(strict_printed=True)
        u = -1.933 + 0.652 * 0.5
        expected = math.exp(-1.933 + 0.652 * 0.5 / (1.0 + math.exp(u)))
        self.assertAlmostEqual(gap_acceptance(5.0, 10.0, g), expected, places=12)
        with self.assertRaises(DomainError):
            gap_acceptance(5.0, 10.0, GapAcceptanceModel(alpha=1.0, strict_printed=True))

    def test_speed_must_be_positive(self):
        with self.assertRaises(DomainError):
            gap_acceptance(5.0, 0.0, self.linear)

    def test_rate_mappings(self):
        self.assertAlmostEqual(lambda0_from_gap(0.2, self.linear), 20.0, places=12)
        self.assertEqual(self.logarithmic.mapping, "logarithmic")
        self.assertEqual(lambda0_from_gap(0.0, self.logarithmic), 1.0)
        with self.assertRaises(DomainError):
            lambda0_from_gap(1.0, self.logarithmic)
        with self.assertRaises(DomainError):
            lambda0_from_gap(1.5, self.linear)

    def test_rate_mappings_are_monotone(self):
        grid = np.linspace(0.0, 0.99, 100)
        for g in (self.linear, self.logarithmic):
            rates = [lambda0_from_gap(p, g) for p in grid]
            self.assertTrue(np.all(np.diff(rates) > 0))

    def test_explicit_eta(self):
        g = GapAcceptanceModel(eta=50.0)
        self.assertAlmostEqual(lambda0_from_gap(0.5, g), 25.0, places=12)


class TestCommunicationBudget(unittest.TestCase):
    """Test cases for the communication share of the delay budget"""

    def test_deterministic(self):
        self.assertAlmostEqual(comm_delay_budget(0.05), 0.005, places=15)

    def test_sampled_within_budget(self):
        rng = np.random.default_rng(11)
        for _ in range(200):
            value = comm_delay_budget(0.05, "sampled", rng=rng)
            self.assertGreater(value, 0.0)
            self.assertLessEqual(value, 0.05)

    def test_sampled_seed_reproducible(self):
        self.assertEqual(comm_delay_budget(0.2, "sampled", seed=5), comm_delay_budget(0.2, "sampled", seed=5))

    def test_rejects_non_positive_delay(self):
        with self.assertRaises(DomainError):
            comm_delay_budget(0.0)

    def test_unknown_mode(self):
        with self.assertRaises(DomainError):
            draw_kappa("uniform")

    def test_contending_stations(self):
        self.assertEqual(contending_stations(5.0, 300.0), 61)
        self.assertEqual(contending_stations(7.0, 300.0), 43)
        with self.assertRaises(DomainError):
            contending_stations(0.0, 300.0)

    def test_stability_analysis(self):
        result = stability_analysis(PlatoonConfig(), 5.0)
        self.assertAlmostEqual(result.tau_cr, 0.1 * result.tau_c, places=12)
        self.assertAlmostEqual(result.lambda0, 100.0 * result.p_accept, places=12)

    def test_stability_analysis_without_budget(self):
        result = stability_analysis(PlatoonConfig(), 10.0)
        self.assertEqual(result.tau_cr, 0.0)


class TestPlatoonSweep(unittest.TestCase):
    """Test cases for the headway sweep"""

    def setUp(self):
        """Set up test fixtures"""
        self.base = NetworkScenario()

    def test_columns_and_rows(self):
        frame = platoon_sweep(self.base, PlatoonConfig(), np.arange(2.0, 11.0))
        self.assertEqual(list(frame.columns), PLATOON_COLUMNS)
        self.assertEqual(len(frame), 9)
        self.assertFalse(frame["tau_c_ms"].isna().any())

    def test_reliability_lost_at_long_headway(self):
        headways = [float(y) for y in np.arange(2, 11)]
        for mapping in ("linear", "logarithmic"):
            with self.subTest(mapping=mapping):
                platoon = PlatoonConfig(gap=GapAcceptanceModel(mapping=mapping))
                frame = platoon_sweep(self.base, platoon, headways).set_index("headway_m")
                for column in ("reliability_ac0", "reliability_ac1"):
                    self.assertTrue((np.diff(frame[column].to_numpy()) <= 0).all())
                    self.assertEqual(frame.loc[10.0, column], 0.0)
                    self.assertGreater(frame.loc[2.0, column], 0.0)
                self.assertEqual(frame.loc[10.0, "tau_cr_ms"], 0.0)

    def test_budget_shape_over_headways(self):
        platoon = PlatoonConfig()
        frame = platoon_sweep(self.base, platoon,
                              [float(y) for y in np.arange(2, 11)]).set_index("headway_m")
        budget = frame["tau_cr_ms"]
        # BOVF slope is symmetric about the inflection headway y_m = 5
        for below, above in ((2.0, 8.0), (3.0, 7.0), (4.0, 6.0)):
            self.assertAlmostEqual(budget[below], budget[above], places=9)
        self.assertTrue((np.diff(budget.loc[8.0:10.0].to_numpy()) < 0).all())
        self.assertGreater(budget[8.0], budget[5.0])

    def test_reliability_inside_the_transition(self):
        frame = platoon_sweep(self.base, PlatoonConfig(), [2.0]).iloc[0]
        t_tr = transmission_profile(self.base).t_tr
        for ac in (0, 1):
            moments = DelayMoments(mean=frame[f"mean_delay_ac{ac}_ms"] * 1e-3,
                                   stddev=frame[f"stddev_ac{ac}_ms"] * 1e-3)
            self.assertGreater(moments.stddev, 0.0)
            value = reliability(moments, t_tr, t_tr + moments.stddev)
            self.assertGreater(value, 0.0)
            self.assertLess(value, 1.0)
            self.assertAlmostEqual(value, 1.0 - math.exp(-1.0), places=12)

    def test_certain_acceptance_is_undefined_for_logarithmic_mapping(self):
        platoon = PlatoonConfig(gap=GapAcceptanceModel(alpha=100.0, mapping="logarithmic"))
        frame = platoon_sweep(self.base, platoon, [5.0])
        self.assertEqual(len(frame), 1)
        self.assertEqual(frame["headway_m"].iloc[0], 5.0)
        self.assertTrue(frame["lambda0_pps"].isna().all())


if __name__ == '__main__':
    unittest.main()
