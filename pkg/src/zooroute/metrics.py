"""Online accumulators, compliance verdicts, and overhead accounting."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .core import JOULES_PER_MEGAJOULE, RoutingDecision, SlaParams

CSV_COLUMNS = ["t", "explored", "chosen", "cost_j", "sat", "queue", "run_sat", "run_cost_j"]

SUMMARY_SCHEMA = 1


@dataclass
class StepRecord:
    t: int
    explored: bool
    chosen: int
    cost_j: float
    sat: Optional[int]
    queue: Optional[float]
    run_sat: float
    run_cost_j: float


class MetricStream:
    """Append-only per-step records plus incrementally maintained aggregates.

    Decisions must arrive in t order. Steps whose satisfaction is still
    pending are counted toward cost immediately and toward satisfaction once
    resolved via :meth:`resolve`.
    """

    def __init__(self, n_models: Optional[int] = None):
        self.steps: list[StepRecord] = []
        self.n_models = n_models
        self._cost_sum = 0.0
        self._sat_sum = 0
        self._resolved = 0
        self._explored_count = 0
        self._explored_cost = 0.0
        self._call_counts: Optional[list[int]] = None
        self._queue_sum = 0.0
        self._max_queue = 0.0

    def __len__(self) -> int:
        return len(self.steps)

    def update(self, decision: RoutingDecision) -> StepRecord:
        """Fold one routing decision into the stream."""
        if decision.t != len(self.steps) + 1:
            raise ValueError(
                f"decisions must arrive in order: expected t={len(self.steps) + 1}, "
                f"got t={decision.t}"
            )
        if self.n_models is None:
            self.n_models = len(decision.y)
        if self._call_counts is None:
            self._call_counts = [0] * self.n_models

        self._cost_sum += decision.cost_incurred
        if decision.explored:
            self._explored_count += 1
            self._explored_cost += decision.cost_incurred
        else:
            self._call_counts[decision.chosen] += 1
        sat = decision.realized_satisfaction
        if sat is not None:
            self._sat_sum += sat
            self._resolved += 1
        queue = decision.queue_after
        if queue is not None:
            self._queue_sum += queue
            self._max_queue = max(self._max_queue, queue)

        record = StepRecord(
            t=decision.t,
            explored=decision.explored,
            chosen=decision.chosen,
            cost_j=decision.cost_incurred,
            sat=sat,
            queue=queue,
            run_sat=self.running_satisfaction,
            run_cost_j=self.mean_cost_j,
        )
        self.steps.append(record)
        return record

    def resolve(self, t: int, sat: int) -> None:
        """Attach late feedback to step ``t`` (deferred-feedback services)."""
        record = self.steps[t - 1]
        if record.sat is not None:
            raise ValueError(f"step t={t} already resolved")
        record.sat = sat
        self._sat_sum += sat
        self._resolved += 1

    @property
    def mean_cost_j(self) -> float:
        return self._cost_sum / len(self.steps) if self.steps else math.nan

    @property
    def running_satisfaction(self) -> float:
        return self._sat_sum / self._resolved if self._resolved else math.nan

    @property
    def exploration_count(self) -> int:
        return self._explored_count

    @property
    def exploration_energy_j(self) -> float:
        return self._explored_cost

    @property
    def max_queue(self) -> float:
        return self._max_queue

    @property
    def time_averaged_queue(self) -> float:
        return self._queue_sum / len(self.steps) if self.steps else math.nan

    def call_ratios(self) -> list[float]:
        """Share of non-exploration requests served by each model."""
        if self._call_counts is None:
            return []
        total = sum(self._call_counts)
        if total == 0:
            return [0.0] * len(self._call_counts)
        return [c / total for c in self._call_counts]

    def run_sat_series(self) -> list[float]:
        return [s.run_sat for s in self.steps]

    def queue_series(self) -> list[float]:
        return [s.queue if s.queue is not None else math.nan for s in self.steps]

    def summary(self) -> dict:
        if not self.steps:
            raise ValueError("summary of an empty stream is undefined")
        last = self.steps[-1]
        total = len(self.steps)
        return {
            "schema_version": SUMMARY_SCHEMA,
            "t": total,
            "mean_cost_j": self.mean_cost_j,
            "mean_cost_mj": self.mean_cost_j / JOULES_PER_MEGAJOULE,
            "mean_satisfaction": self.running_satisfaction,
            "call_ratios": self.call_ratios(),
            "exploration_count": self._explored_count,
            "exploration_energy_j": self._explored_cost,
            "exploration_energy_share": (
                self._explored_cost / self._cost_sum if self._cost_sum else 0.0
            ),
            "final_queue": last.queue,
            "queue_over_t": (last.queue / total) if last.queue is not None else None,
            "time_averaged_queue": self.time_averaged_queue,
            "max_queue": self._max_queue,
            "pending_feedback": total - self._resolved,
        }

    def to_csv(self, path: str | Path) -> None:
        """Write the per-step records with a fixed column order."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_COLUMNS)
            for s in self.steps:
                writer.writerow(
                    [
                        s.t,
                        int(s.explored),
                        s.chosen,
                        repr(s.cost_j),
                        "" if s.sat is None else s.sat,
                        "" if s.queue is None else repr(s.queue),
                        repr(s.run_sat),
                        repr(s.run_cost_j),
                    ]
                )


def time_to_sla(run_sat: list[float], alpha: float, hold_slack: float = 0.005) -> Optional[int]:
    """First t whose running satisfaction reaches alpha and never again drops
    below alpha - hold_slack. None if that never happens."""
    n = len(run_sat)
    suffix_min = [0.0] * n
    running = math.inf
    for i in range(n - 1, -1, -1):
        running = min(running, run_sat[i])
        suffix_min[i] = running
    for i in range(n):
        if run_sat[i] >= alpha and suffix_min[i] >= alpha - hold_slack:
            return i + 1
    return None


def compliance_report(stream: MetricStream, sla: SlaParams, grace_t0: int) -> dict:
    """SLA verdict: compliant iff running satisfaction >= alpha at every t >= grace_t0."""
    if len(stream) < grace_t0:
        raise ValueError(f"stream has {len(stream)} steps, grace period is {grace_t0}")
    run_sat = stream.run_sat_series()
    violations = [
        sla.alpha - r for r in run_sat[grace_t0 - 1 :] if r < sla.alpha
    ]
    last_queue = stream.steps[-1].queue
    return {
        "schema_version": SUMMARY_SCHEMA,
        "alpha": sla.alpha,
        "grace_t0": grace_t0,
        "compliant": not violations,
        "max_violation": max(violations) if violations else 0.0,
        "queue_over_t": (last_queue / len(stream)) if last_queue is not None else None,
        "final_running_satisfaction": run_sat[-1],
        "time_to_sla": time_to_sla(run_sat, sla.alpha),
    }


def overhead_report(stream: MetricStream, predictor_cost_per_call: float) -> dict:
    """Prediction overhead relative to model call cost, both ways of averaging.

    ``ratio_of_averages`` divides the fixed predictor cost by the stream's
    mean call cost; ``average_of_ratios`` averages per-step ratios instead.
    The two differ whenever call costs vary, so both are reported.
    """
    if predictor_cost_per_call < 0:
        raise ValueError("predictor cost must be nonnegative")
    if not stream.steps:
        raise ValueError("overhead of an empty stream is undefined")
    mean_call = stream.mean_cost_j
    per_step = [predictor_cost_per_call / s.cost_j for s in stream.steps]
    return {
        "schema_version": SUMMARY_SCHEMA,
        "predictor_cost_j": predictor_cost_per_call,
        "mean_call_cost_j": mean_call,
        "ratio_of_averages_pct": 100.0 * predictor_cost_per_call / mean_call,
        "average_of_ratios_pct": 100.0 * sum(per_step) / len(per_step),
    }
