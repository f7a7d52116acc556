import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from zooroute.core import (
    ModelId,
    ModelProfile,
    RequestEvent,
    RoutingDecision,
    SlaParams,
    VirtualQueue,
    ZooConfig,
    queue_update,
    request_cost,
    zoo_cost_extremes,
)


def make_zoo(costs, per_token=None, largest=None):
    per_token = per_token or [0.0] * len(costs)
    models = tuple(
        ModelProfile(id=ModelId(index=i, display_name=f"m{i}"), base_cost=c, cost_per_token=p)
        for i, (c, p) in enumerate(zip(costs, per_token))
    )
    return ZooConfig(models=models, largest_index=largest if largest is not None else len(costs) - 1)


class TestQueueUpdate:
    def test_clamps_at_zero(self):
        q = queue_update(VirtualQueue(), 0.66, 1)
        assert q.q == 0.0
        assert q.t == 1

    def test_accumulates_shortfall(self):
        q = queue_update(VirtualQueue(), 0.66, 0)
        assert q.q == pytest.approx(0.66)

    def test_drains_on_satisfaction(self):
        q = queue_update(VirtualQueue(q=0.5, t=3), 0.8, 1)
        assert q.q == pytest.approx(0.3)
        assert q.t == 4

    @pytest.mark.parametrize("alpha", [0.0, 1.0, -0.1, 1.5])
    def test_rejects_bad_alpha(self, alpha):
        with pytest.raises(ValueError):
            queue_update(VirtualQueue(), alpha, 1)

    def test_rejects_non_bit_satisfaction(self):
        with pytest.raises(ValueError):
            queue_update(VirtualQueue(), 0.5, 2)

    @given(
        alpha=st.floats(min_value=0.01, max_value=0.99),
        bits=st.lists(st.integers(min_value=0, max_value=1), min_size=1, max_size=200),
    )
    @settings(max_examples=200, deadline=None)
    def test_invariants_over_random_streams(self, alpha, bits):
        q = VirtualQueue()
        for s in bits:
            q_next = queue_update(q, alpha, s)
            assert q_next.q >= 0.0
            assert abs(q_next.q - q.q) <= max(alpha, 1.0 - alpha) + 1e-12
            q = q_next
        # Shortfall identity: backlog dominates the raw accumulated shortfall.
        assert q.q >= sum(alpha - s for s in bits) - 1e-9

    def test_shortfall_identity_without_clamping(self):
        alpha, bits = 0.75, [0, 0, 1, 0]  # backlog never reaches zero
        q = VirtualQueue()
        for s in bits:
            q = queue_update(q, alpha, s)
        assert q.q == pytest.approx(sum(alpha - s for s in bits))


class TestRequestCost:
    def test_flat_cost_large_model(self):
        profile = ModelProfile(id=ModelId(0), base_cost=2.91e6)
        assert request_cost(profile, RequestEvent(t=1, token_count=50)) == 2.91e6

    def test_flat_cost_small_model(self):
        profile = ModelProfile(id=ModelId(0), base_cost=0.12e6)
        for tokens in (0, 1, 999):
            assert request_cost(profile, RequestEvent(t=1, token_count=tokens)) == 0.12e6

    def test_affine_in_tokens(self):
        profile = ModelProfile(id=ModelId(0), base_cost=1.0, cost_per_token=0.5)
        assert request_cost(profile, RequestEvent(t=1, token_count=4)) == pytest.approx(3.0)

    @given(tokens=st.lists(st.integers(min_value=0, max_value=10_000), min_size=2, max_size=2))
    @settings(max_examples=100, deadline=None)
    def test_monotone_in_token_count(self, tokens):
        lo, hi = sorted(tokens)
        profile = ModelProfile(id=ModelId(0), base_cost=2.0, cost_per_token=0.01)
        assert request_cost(profile, RequestEvent(t=1, token_count=lo)) <= request_cost(
            profile, RequestEvent(t=1, token_count=hi)
        )


class TestZooCostExtremes:
    def test_canonical_zoo(self):
        zoo = make_zoo([0.12e6, 0.54e6, 2.91e6])
        assert zoo_cost_extremes(zoo, RequestEvent(t=1)) == (0.12e6, 2.91e6)

    def test_single_model(self):
        zoo = make_zoo([7.0])
        assert zoo_cost_extremes(zoo, RequestEvent(t=1)) == (7.0, 7.0)

    def test_three_flat_models(self):
        zoo = make_zoo([1.0, 2.0, 3.0])
        assert zoo_cost_extremes(zoo, RequestEvent(t=1)) == (1.0, 3.0)


class TestValidation:
    def test_zoo_requires_dense_indices(self):
        models = (
            ModelProfile(id=ModelId(1, "a"), base_cost=1.0),
            ModelProfile(id=ModelId(0, "b"), base_cost=2.0),
        )
        with pytest.raises(ValueError, match="dense"):
            ZooConfig(models=models, largest_index=0)

    def test_zoo_rejects_bad_largest(self):
        with pytest.raises(ValueError, match="largest_index"):
            make_zoo([1.0, 2.0], largest=5)

    def test_zoo_rejects_empty(self):
        with pytest.raises(ValueError):
            ZooConfig(models=(), largest_index=0)

    def test_profile_rejects_nonpositive_cost(self):
        with pytest.raises(ValueError):
            ModelProfile(id=ModelId(0), base_cost=0.0)

    @pytest.mark.parametrize("kwargs", [dict(alpha=0.0), dict(alpha=1.0), dict(alpha=0.5, v=0.0), dict(alpha=0.5, c=-1.0)])
    def test_sla_params_bounds(self, kwargs):
        with pytest.raises(ValueError):
            SlaParams(**kwargs)

    def test_sla_allows_zero_exploration(self):
        assert SlaParams(alpha=0.5, c=0.0).c == 0.0

    def test_event_rejects_bad_labels(self):
        with pytest.raises(ValueError):
            RequestEvent(t=1, labels=np.array([0, 2]))

    def test_decision_requires_one_hot_when_not_exploring(self):
        with pytest.raises(ValueError):
            RoutingDecision(
                t=1,
                explored=False,
                chosen=0,
                y=(1, 1),
                s_hat=None,
                realized_satisfaction=1,
                cost_incurred=1.0,
                queue_before=0.0,
                queue_after=0.0,
            )

    def test_decision_requires_all_indicators_when_exploring(self):
        with pytest.raises(ValueError):
            RoutingDecision(
                t=1,
                explored=True,
                chosen=1,
                y=(1, 0),
                s_hat=None,
                realized_satisfaction=1,
                cost_incurred=1.0,
                queue_before=0.0,
                queue_after=0.0,
            )
