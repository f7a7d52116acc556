import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from zooroute.core import RequestEvent
from zooroute.predictor import (
    FeatureExtractor,
    LearningRateSchedule,
    PredictorState,
    gradient,
    load_checkpoint,
    loss,
    predict,
    save_checkpoint,
    sgd_step,
)


class TestFeatureExtractor:
    def test_passthrough_identity(self):
        ex = FeatureExtractor(dim=2, kind="passthrough")
        out = ex.featurize(RequestEvent(t=1, features=np.array([0.1, 0.2])))
        assert np.array_equal(out, [0.1, 0.2])

    def test_passthrough_dimension_mismatch(self):
        ex = FeatureExtractor(dim=3, kind="passthrough")
        with pytest.raises(ValueError, match="dimension"):
            ex.featurize(RequestEvent(t=1, features=np.array([1.0, 2.0])))

    def test_hashed_empty_text_is_zero(self):
        ex = FeatureExtractor(dim=16)
        assert not ex.featurize(RequestEvent(t=1, text="")).any()

    def test_repeated_token_hits_one_bucket(self):
        ex = FeatureExtractor(dim=32, seed=0)
        counts = ex.token_counts("abc abc")
        assert np.count_nonzero(counts) == 1
        assert counts.max() == 2.0
        normalized = ex.featurize(RequestEvent(t=1, text="abc abc"))
        assert np.count_nonzero(normalized) == 1
        assert normalized.max() == pytest.approx(1.0)

    def test_norm_capped_after_normalization(self):
        ex = FeatureExtractor(dim=8, seed=3)
        vec = ex.featurize(RequestEvent(t=1, text="the quick brown fox " * 50))
        assert np.linalg.norm(vec) <= 1.0 + 1e-12

    @given(text=st.text(max_size=80))
    @settings(max_examples=100, deadline=None)
    def test_deterministic_given_config(self, text):
        a = FeatureExtractor(dim=16, seed=5)
        b = FeatureExtractor(dim=16, seed=5)
        ea, eb = RequestEvent(t=1, text=text), RequestEvent(t=1, text=text)
        assert np.array_equal(a.featurize(ea), b.featurize(eb))

    def test_hashed_requires_text(self):
        with pytest.raises(ValueError, match="text"):
            FeatureExtractor(dim=4).featurize(RequestEvent(t=1, features=np.zeros(4)))


class TestPredict:
    def test_zero_state_is_half_exactly(self):
        state = PredictorState.initial(3, 4)
        out = predict(state, np.array([0.3, -2.0, 5.5, 0.0]))
        assert (out == 0.5).all()

    def test_saturation(self):
        state = PredictorState(z=np.array([[50.0, 0.0]]))
        assert predict(state, np.array([1.0]))[0] == pytest.approx(1.0, abs=1e-9)

    def test_log_odds_three(self):
        state = PredictorState(z=np.array([[1.0, 0.0]]))
        out = predict(state, np.array([math.log(3.0)]))
        assert out[0] == pytest.approx(0.75, abs=1e-12)

    def test_rejects_non_finite(self):
        state = PredictorState.initial(1, 2)
        with pytest.raises(ValueError):
            predict(state, np.array([np.nan, 1.0]))

    def test_range_and_finiteness_under_extreme_inputs(self):
        rng = np.random.default_rng(2)
        for scale in (1.0, 1e3, 1e6):
            state = PredictorState(z=rng.normal(size=(3, 4)) * scale)
            x = rng.normal(size=3) * scale
            out = predict(state, x)
            assert np.isfinite(out).all()
            assert ((out >= 0.0) & (out <= 1.0)).all()
            # The loss clamp keeps saturated predictions finite too.
            assert np.isfinite(loss(state, x, np.array([1, 0, 1])))


class TestLoss:
    def test_zero_state_gives_log_two(self):
        state = PredictorState.initial(3, 2)
        value = loss(state, np.array([0.4, -0.1]), np.array([1, 0, 1]))
        assert value == pytest.approx(math.log(2.0), abs=1e-12)

    def test_saturated_correct_predictions_vanish(self):
        state = PredictorState(z=np.array([[80.0, 0.0], [-80.0, 0.0]]))
        value = loss(state, np.array([1.0]), np.array([1, 0]))
        assert value <= 1e-9

    def test_regularizer_zero_at_origin(self):
        state = PredictorState.initial(2, 2, mu=2.0)
        value = loss(state, np.array([1.0, 1.0]), np.array([0, 1]))
        assert value == pytest.approx(math.log(2.0), abs=1e-12)

    def test_regularizer_adds_quadratic_term(self):
        z = np.array([[1.0, -2.0], [0.5, 0.0]])
        bare = loss(PredictorState(z=z, mu=0.0), np.array([0.2]), np.array([1, 0]))
        reg = loss(PredictorState(z=z, mu=0.3), np.array([0.2]), np.array([1, 0]))
        assert reg == pytest.approx(bare + 0.15 * (z**2).sum(), abs=1e-12)


class TestSgdStep:
    def test_saturated_exact_predictions_leave_state_unchanged(self):
        z = np.array([[100.0, 100.0]])  # expit(200) == 1.0 in float
        state = PredictorState(z=z.copy(), schedule=LearningRateSchedule(kind="constant", eta0=1.0))
        new = sgd_step(state, np.array([1.0]), np.array([1]))
        assert np.array_equal(new.z, z)
        assert new.k == 1

    def test_single_hand_evaluated_step(self):
        state = PredictorState.initial(1, 1, schedule=LearningRateSchedule(kind="constant", eta0=1.0))
        new = sgd_step(state, np.array([1.0]), np.array([1]))
        assert np.allclose(new.z, [[0.5, 0.5]])

    def test_regularizer_shrinks_idle_columns(self):
        eta, mu = 0.1, 0.5
        z = np.array([[2.0, -1.0, 0.0]])  # two weight columns and a bias
        state = PredictorState(
            z=z.copy(), mu=mu, schedule=LearningRateSchedule(kind="constant", eta0=eta)
        )
        new = sgd_step(state, np.zeros(2), np.array([1]))
        # Data gradient vanishes on the zero-feature columns; only mu*z remains.
        assert np.allclose(new.z[0, :2], z[0, :2] * (1 - eta * mu))

    def test_labels_must_cover_zoo(self):
        state = PredictorState.initial(3, 2)
        with pytest.raises(ValueError):
            sgd_step(state, np.zeros(2), np.array([1, 0]))

    def test_non_finite_gradient_is_a_hard_error(self):
        state = PredictorState.initial(1, 1)
        state.z[0, 0] = np.inf  # corrupt past construction-time validation
        with np.errstate(invalid="ignore"), pytest.raises(FloatingPointError):
            sgd_step(state, np.array([1.0]), np.array([0]))

    def test_descent_on_replayed_batch(self):
        rng = np.random.default_rng(0)
        xs = rng.normal(size=(20, 4))
        w_true = rng.normal(size=(2, 4))
        labels = (xs @ w_true.T > 0).astype(int)  # realizable batch
        state = PredictorState.initial(2, 4, schedule=LearningRateSchedule(kind="constant", eta0=0.1))

        def batch_loss(s):
            return float(np.mean([loss(s, x, l) for x, l in zip(xs, labels)]))

        values = [batch_loss(state)]
        for step in range(100):
            x, l = xs[step % 20], labels[step % 20]
            state = sgd_step(state, x, l)
            values.append(batch_loss(state))
        increases = sum(1 for a, b in zip(values, values[1:]) if b > a + 1e-12)
        assert increases <= 1  # <= 1% transient increases over 100 steps


class TestGradient:
    def test_matches_central_finite_differences(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            m = int(rng.integers(1, 4))
            d = int(rng.integers(1, 6))
            state = PredictorState(z=rng.normal(size=(m, d + 1)), mu=float(rng.random() * 0.5))
            x = rng.normal(size=d)
            labels = (rng.random(m) < 0.5).astype(int)
            analytic = gradient(state, x, labels)
            fd = np.zeros_like(analytic)
            h = 1e-6
            for i in range(m):
                for j in range(d + 1):
                    zp, zm = state.z.copy(), state.z.copy()
                    zp[i, j] += h
                    zm[i, j] -= h
                    fd[i, j] = (
                        loss(PredictorState(z=zp, mu=state.mu), x, labels)
                        - loss(PredictorState(z=zm, mu=state.mu), x, labels)
                    ) / (2 * h)
            assert np.linalg.norm(analytic - fd) / max(np.linalg.norm(analytic), 1e-9) < 1e-5


class TestSchedule:
    def test_pl_schedule_formula(self):
        s = LearningRateSchedule(kind="pl_schedule", mu=0.5, l_smooth=4.0)
        for k in (1, 2, 10, 1000):
            assert s.rate(k) == pytest.approx(min(2.0 / (0.5 * (k + 1)), 0.25))

    def test_inverse_decay(self):
        s = LearningRateSchedule(kind="inverse_decay", eta0=0.05, k0=200.0)
        assert s.rate(200) == pytest.approx(0.025)

    def test_constant(self):
        assert LearningRateSchedule(kind="constant", eta0=0.3).rate(99) == 0.3

    def test_rates_always_positive(self):
        for s in (
            LearningRateSchedule(),
            LearningRateSchedule(kind="constant", eta0=1e-4),
            LearningRateSchedule(kind="pl_schedule", mu=0.1, l_smooth=10.0),
        ):
            assert all(s.rate(k) > 0 for k in range(1, 500))

    def test_one_based_steps(self):
        with pytest.raises(ValueError):
            LearningRateSchedule().rate(0)

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError):
            LearningRateSchedule(kind="warmup")


class TestCheckpoint:
    def test_round_trip_is_bit_exact(self, tmp_path):
        rng = np.random.default_rng(3)
        state = PredictorState(
            z=rng.normal(size=(3, 5)),
            k=17,
            mu=0.01,
            schedule=LearningRateSchedule(kind="pl_schedule", mu=0.2, l_smooth=3.0),
        )
        path = tmp_path / "predictor.json"
        save_checkpoint(state, path)
        loaded = load_checkpoint(path)
        assert loaded.z.tobytes() == state.z.tobytes()
        assert loaded.k == state.k
        assert loaded.mu == state.mu
        assert loaded.schedule == state.schedule

    def test_rejects_unknown_schema(self, tmp_path):
        path = tmp_path / "predictor.json"
        path.write_text('{"schema_version": 99}')
        with pytest.raises(ValueError, match="schema"):
            load_checkpoint(path)
