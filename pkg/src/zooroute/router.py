"""The per-request control loop.

Each request either explores (queries every model to collect satisfaction
labels and runs one predictor update) or exploits (routes to the model that
minimizes cost weighted against queue pressure). The exploration probability
decays as t^(-1/4); the first request always explores when exploration is
enabled. The realized satisfaction bit feeds the virtual queue, immediately
when labels are available or later through :meth:`Router.apply_feedback`.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Optional, Protocol

import numpy as np

from .core import (
    JOULES_PER_MEGAJOULE,
    RequestEvent,
    RoutingDecision,
    SlaParams,
    VirtualQueue,
    ZooConfig,
    queue_update,
)
from .predictor import (
    FeatureExtractor,
    LearningRateSchedule,
    PredictorState,
    predict,
    sgd_step,
)


class MissingLabelsError(RuntimeError):
    """Raised when an exploration step cannot obtain labels for every model."""


class FeedbackOrderError(ValueError):
    """Raised on duplicate or out-of-order satisfaction feedback."""


class LabelSource(Protocol):
    """Answers satisfaction queries for a request (trace, synthetic, or deferred)."""

    def full_labels(self, event: RequestEvent) -> Optional[np.ndarray]:
        """All per-model bits, or None if multi-model labeling is unavailable."""

    def label_for(self, event: RequestEvent, model: int) -> Optional[int]:
        """The chosen model's bit, or None if feedback arrives later."""


class TraceLabelSource:
    """Labels read straight off the event (traces and synthetic workloads)."""

    def full_labels(self, event: RequestEvent) -> Optional[np.ndarray]:
        return event.labels

    def label_for(self, event: RequestEvent, model: int) -> Optional[int]:
        if event.labels is None:
            return None
        return int(event.labels[model])


class DeferredLabelSource:
    """No labels at decision time; feedback arrives through apply_feedback."""

    def full_labels(self, event: RequestEvent) -> Optional[np.ndarray]:
        return None

    def label_for(self, event: RequestEvent, model: int) -> Optional[int]:
        return None


@dataclass(frozen=True)
class ExplorationOutcome:
    """What an exploration step learned: all labels, the best one, the output used."""

    labels: tuple[int, ...]
    best_by_label: int
    returned: int


def exploration_probability(c: float, t: int) -> float:
    """min(1, c * t^(-1/4)); monotone nonincreasing in t."""
    if t < 1:
        raise ValueError("request index t is 1-based")
    if c < 0:
        raise ValueError("exploration scale c must be nonnegative")
    return min(1.0, c * t ** (-0.25))


def solve_per_request(
    v: float,
    queue_q: float,
    alpha: float,
    costs: np.ndarray,
    s_hat: np.ndarray,
) -> int:
    """Pick argmin_m of v * costs[m] + queue_q * (alpha - s_hat[m]).

    Ties break toward the lower cost, then the lower index, so the decision
    is deterministic. ``costs`` and ``v`` must use consistent units.
    """
    costs = np.asarray(costs, dtype=float)
    s_hat = np.asarray(s_hat, dtype=float)
    if costs.size == 0:
        raise ValueError("empty model zoo")
    if costs.shape != s_hat.shape:
        raise ValueError("costs and s_hat must have equal length")
    if not np.isfinite(costs).all() or (costs <= 0).any():
        raise ValueError("costs must be finite and positive")
    scores = v * costs + queue_q * (alpha - s_hat)
    return min(range(costs.size), key=lambda m: (scores[m], costs[m], m))


def _best_by_label(labels: np.ndarray, largest: int) -> int:
    """Argmax over label bits, preferring the largest model on ties."""
    top = labels.max()
    if labels[largest] == top:
        return largest
    return int(np.flatnonzero(labels == top)[0])


class Router:
    """Single-writer state machine running the control loop over one zoo.

    ``step`` and ``apply_feedback`` must be externally serialized; snapshots
    are plain values and safe to hand to concurrent readers. Independent
    routers (one per SLA tenant) share nothing.
    """

    def __init__(
        self,
        zoo: ZooConfig,
        sla: SlaParams,
        extractor: FeatureExtractor,
        *,
        mu: float = 0.0,
        schedule: Optional[LearningRateSchedule] = None,
        seed: int = 0,
        exploration: bool = True,
    ):
        self.zoo = zoo
        self.sla = sla
        self.extractor = extractor
        self.queue = VirtualQueue()
        self.predictor = PredictorState.initial(
            zoo.m, extractor.dim, mu=mu, schedule=schedule
        )
        self.rng = np.random.default_rng(seed)
        self.exploration = exploration
        self.t = 1
        self.pending: deque[int] = deque()

    def step(self, event: RequestEvent, label_source: LabelSource) -> RoutingDecision:
        """Process one request and advance the loop by one step."""
        if event.t != self.t:
            raise ValueError(f"expected request t={self.t}, got t={event.t}")

        x = self.extractor.featurize(event)
        p_t = exploration_probability(self.sla.c, self.t)
        draw_explores = self.rng.random() < p_t
        explore = self.exploration and (self.t == 1 or draw_explores)

        s_hat = predict(self.predictor, x)
        costs = self.zoo.costs(event)
        q_before = self.queue.q
        outcome: Optional[ExplorationOutcome] = None

        if explore:
            labels = label_source.full_labels(event)
            if labels is None:
                raise MissingLabelsError(
                    f"exploration at t={self.t} requires labels for every model"
                )
            labels = np.asarray(labels, dtype=int)
            if labels.shape != (self.zoo.m,):
                raise MissingLabelsError("exploration labels must cover the whole zoo")
            self.predictor = sgd_step(self.predictor, x, labels)
            chosen = self.zoo.largest_index
            outcome = ExplorationOutcome(
                labels=tuple(int(b) for b in labels),
                best_by_label=_best_by_label(labels, chosen),
                returned=chosen,
            )
            # Every model was queried, so the whole zoo's cost is charged and
            # the returned (largest) model's bit drives the queue. A source
            # may still defer that bit (shadow labels train the predictor,
            # the user's own feedback settles the queue).
            cost = float(costs.sum())
            sat: Optional[int] = label_source.label_for(event, chosen)
            y = (1,) * self.zoo.m
        else:
            chosen = solve_per_request(
                self.sla.v,
                q_before,
                self.sla.alpha,
                costs / JOULES_PER_MEGAJOULE,
                s_hat,
            )
            cost = float(costs[chosen])
            sat = label_source.label_for(event, chosen)
            y = tuple(1 if m == chosen else 0 for m in range(self.zoo.m))

        if sat is None:
            queue_after: Optional[float] = None
            self.pending.append(self.t)
        else:
            self.queue = queue_update(self.queue, self.sla.alpha, sat)
            queue_after = self.queue.q

        decision = RoutingDecision(
            t=self.t,
            explored=explore,
            chosen=chosen,
            y=y,
            s_hat=s_hat,
            realized_satisfaction=sat,
            cost_incurred=cost,
            queue_before=q_before,
            queue_after=queue_after,
            best_by_label=outcome.best_by_label if outcome else None,
        )
        self.t += 1
        return decision

    def apply_feedback(self, decision_t: int, satisfaction: int) -> float:
        """Resolve the oldest pending decision with its satisfaction bit."""
        if satisfaction not in (0, 1):
            raise ValueError(f"satisfaction must be a 0/1 bit, got {satisfaction}")
        if not self.pending:
            raise FeedbackOrderError(f"no pending feedback (got t={decision_t})")
        if self.pending[0] != decision_t:
            raise FeedbackOrderError(
                f"feedback must resolve t={self.pending[0]} next, got t={decision_t}"
            )
        self.pending.popleft()
        self.queue = queue_update(self.queue, self.sla.alpha, satisfaction)
        return self.queue.q

    def snapshot(self) -> dict:
        """Read-only view of the loop state."""
        return {
            "t": self.t,
            "queue": self.queue.q,
            "queue_updates": self.queue.t,
            "predictor_steps": self.predictor.k,
            "pending": list(self.pending),
            "exploration": self.exploration,
        }
