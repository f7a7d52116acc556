import numpy as np
import pytest

from zooroute.baselines import (
    GuessingPolicy,
    calibrate_guessing,
    route_oracle,
    route_single,
    route_threshold,
)


class TestCalibrateGuessing:
    def test_uniform_start_already_feasible(self):
        policy = calibrate_guessing([0.5, 0.9], 0.7)
        assert np.allclose(policy.probs, [0.5, 0.5])

    def test_alpha_above_best_model_rejected(self):
        with pytest.raises(ValueError, match="Alpha too high"):
            calibrate_guessing([0.6, 0.8], 0.9)

    def test_three_tier_calibration(self):
        policy = calibrate_guessing([0.5828, 0.6820, 0.7370], 0.70)
        assert policy.probs.sum() == pytest.approx(1.0, abs=1e-9)
        assert policy.expected_accuracy >= 0.699999

    def test_random_feasible_instances(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            n = int(rng.integers(2, 6))
            acc = rng.random(n)
            alpha = float(rng.uniform(acc.min(), acc.max()))
            policy = calibrate_guessing(acc, alpha)
            assert (policy.probs >= 1e-10).all()
            assert policy.probs.sum() == pytest.approx(1.0, abs=1e-9)
            assert policy.expected_accuracy >= alpha - 1e-6

    def test_rejects_out_of_range_accuracies(self):
        with pytest.raises(ValueError):
            calibrate_guessing([0.5, 1.2], 0.5)

    def test_sampling_is_seed_deterministic(self):
        policy = calibrate_guessing([0.4, 0.6, 0.8], 0.7)
        a = [policy.sample(np.random.default_rng(9)) for _ in range(5)]
        b = [policy.sample(np.random.default_rng(9)) for _ in range(5)]
        assert a == b

    def test_policy_invariants_type(self):
        policy = calibrate_guessing([0.3, 0.9], 0.6)
        assert isinstance(policy, GuessingPolicy)
        assert policy.source_accuracies.tolist() == [0.3, 0.9]


class TestRouteSingle:
    def test_fixed_model(self):
        assert route_single(0) == 0
        assert route_single(2) == 2


class TestRouteThreshold:
    def test_confident_small_prediction(self):
        assert route_threshold(0.9, 0.5, small=0, large=2) == 0

    def test_doubtful_small_prediction(self):
        assert route_threshold(0.3, 0.5, small=0, large=2) == 2

    def test_zero_threshold_always_small(self):
        for s in (0.0, 0.2, 0.99):
            assert route_threshold(s, 0.0, small=1, large=2) == 1

    def test_threshold_bounds(self):
        with pytest.raises(ValueError):
            route_threshold(0.5, 1.5, small=0, large=1)


class TestRouteOracle:
    def test_cheapest_satisfying(self):
        assert route_oracle([0, 1, 1], [1.0, 2.0, 3.0]) == 1

    def test_no_satisfying_model_falls_back_to_cheapest(self):
        assert route_oracle([0, 0, 0], [1.0, 2.0, 3.0]) == 0

    def test_all_satisfying_picks_min_cost(self):
        assert route_oracle([1, 1, 1], [5.0, 0.5, 3.0]) == 1
