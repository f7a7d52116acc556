"""Domain types shared across the router stack.

Value types are small and immutable where practical: the virtual queue is a
plain value updated by a pure function, and per-request cost is a
deterministic affine function of the token count. Everything here is safe to
share read-only across threads; mutation happens by replacing values under
the router's single-writer discipline.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import TYPE_CHECKING, Optional

import numpy as np

if TYPE_CHECKING:  # pragma: no cover - import cycle guard
    from .simulator import GroundTruthModel

# Costs are stored in joules. Megajoules appear in reports and in the
# per-request decision rule, whose trade-off weight is calibrated against
# megajoule-scale model costs.
JOULES_PER_MEGAJOULE = 1.0e6


@dataclass(frozen=True)
class ModelId:
    """Dense index of a zoo member plus a display name."""

    index: int
    display_name: str = ""

    def __post_init__(self) -> None:
        if self.index < 0:
            raise ValueError(f"model index must be nonnegative, got {self.index}")


@dataclass(frozen=True)
class ModelProfile:
    """Identity, cost model, and optional synthetic ground truth of one model.

    ``base_cost`` and ``cost_per_token`` are joules. ``truth`` is populated
    only for synthetic zoos; a live deployment never knows it.
    """

    id: ModelId
    base_cost: float
    cost_per_token: float = 0.0
    truth: Optional["GroundTruthModel"] = None

    def __post_init__(self) -> None:
        if not self.base_cost > 0:
            raise ValueError("base_cost must be strictly positive")
        if self.cost_per_token < 0:
            raise ValueError("cost_per_token must be nonnegative")


@dataclass(frozen=True)
class ZooConfig:
    """An ordered model zoo with one member designated as the largest."""

    models: tuple[ModelProfile, ...]
    largest_index: int

    def __post_init__(self) -> None:
        if not self.models:
            raise ValueError("zoo must contain at least one model")
        for position, profile in enumerate(self.models):
            if profile.id.index != position:
                raise ValueError(
                    f"model indices must be dense: position {position} holds "
                    f"index {profile.id.index}"
                )
        if not 0 <= self.largest_index < len(self.models):
            raise ValueError(f"largest_index {self.largest_index} out of range")

    @property
    def m(self) -> int:
        return len(self.models)

    @property
    def largest(self) -> ModelProfile:
        return self.models[self.largest_index]

    @property
    def cheapest_index(self) -> int:
        """Index of the model with the lowest base cost (ties: lowest index)."""
        return min(range(self.m), key=lambda i: (self.models[i].base_cost, i))

    def costs(self, event: "RequestEvent") -> np.ndarray:
        """Per-model cost of serving ``event``, in joules."""
        return np.array([request_cost(p, event) for p in self.models])

    def profile_hash(self) -> str:
        """Stable fingerprint of the cost structure, used to pair traces with zoos."""
        payload = json.dumps(
            {
                "largest": self.largest_index,
                "models": [
                    [p.base_cost, p.cost_per_token] for p in self.models
                ],
            },
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


@dataclass
class RequestEvent:
    """One incoming request: index, size, features, and (when known) labels.

    ``labels`` holds the per-model satisfaction bits when they are available
    up front (traces, synthetic workloads); in a live service they arrive
    later as feedback.
    """

    t: int
    token_count: int = 0
    features: Optional[np.ndarray] = None
    text: Optional[str] = None
    labels: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        if self.t < 1:
            raise ValueError("request index t is 1-based")
        if self.token_count < 0:
            raise ValueError("token_count must be nonnegative")
        if self.features is not None:
            self.features = np.asarray(self.features, dtype=float)
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=int)
            if not np.isin(self.labels, (0, 1)).all():
                raise ValueError("labels must be 0/1 bits")


@dataclass(frozen=True)
class SlaParams:
    """Service-level parameters: target rate, cost trade-off, exploration scale.

    ``alpha`` is the minimum satisfaction rate over time, ``v`` weights cost
    against queue pressure in the per-request decision, and ``c`` scales the
    decaying exploration probability. ``c == 0`` disables exploration beyond
    the forced first request.
    """

    alpha: float
    v: float = 0.001
    c: float = 0.1

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must be in (0, 1), got {self.alpha}")
        if not self.v > 0:
            raise ValueError(f"v must be positive, got {self.v}")
        if self.c < 0:
            raise ValueError(f"c must be nonnegative, got {self.c}")


@dataclass(frozen=True)
class VirtualQueue:
    """Scalar backlog of accumulated satisfaction shortfall.

    ``q`` never goes negative and changes only through :func:`queue_update`.
    """

    q: float = 0.0
    t: int = 0

    def __post_init__(self) -> None:
        if self.q < 0:
            raise ValueError("queue backlog must be nonnegative")
        if self.t < 0:
            raise ValueError("update count must be nonnegative")


def queue_update(queue: VirtualQueue, alpha: float, satisfaction: int) -> VirtualQueue:
    """Apply one backlog update: q' = max(0, q + alpha - satisfaction).

    Args:
        queue: current backlog state.
        alpha: target satisfaction rate, in (0, 1).
        satisfaction: realized satisfaction bit for the served request.

    Returns:
        The updated queue value with its update counter incremented.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    if satisfaction not in (0, 1):
        raise ValueError(f"satisfaction must be a 0/1 bit, got {satisfaction}")
    return VirtualQueue(q=max(0.0, queue.q + alpha - satisfaction), t=queue.t + 1)


def request_cost(profile: ModelProfile, event: RequestEvent) -> float:
    """Joules charged for serving ``event`` with ``profile`` (affine in tokens)."""
    return profile.base_cost + profile.cost_per_token * event.token_count


def zoo_cost_extremes(zoo: ZooConfig, event: RequestEvent) -> tuple[float, float]:
    """(min, max) per-request cost across the zoo for this event."""
    costs = zoo.costs(event)
    return float(costs.min()), float(costs.max())


@dataclass
class RoutingDecision:
    """Full record of one routing step.

    On exploration steps every selection indicator is set and the incurred
    cost is the sum over all models (each one was queried); otherwise exactly
    one indicator is set. ``queue_after`` and ``realized_satisfaction`` stay
    ``None`` while feedback is pending.
    """

    t: int
    explored: bool
    chosen: int
    y: tuple[int, ...]
    s_hat: Optional[np.ndarray]
    realized_satisfaction: Optional[int]
    cost_incurred: float
    queue_before: float
    queue_after: Optional[float]
    best_by_label: Optional[int] = None

    def __post_init__(self) -> None:
        if self.explored:
            if any(yi != 1 for yi in self.y):
                raise ValueError("exploration must set every selection indicator")
        elif sum(self.y) != 1 or self.y[self.chosen] != 1:
            raise ValueError("exactly one model must be selected per request")
