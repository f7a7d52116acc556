"""Reference routing policies: fixed model, calibrated guessing, threshold, oracle."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class GuessingPolicy:
    """Randomized policy mixing models by a priori accuracy-calibrated odds."""

    probs: np.ndarray
    source_accuracies: np.ndarray

    @property
    def expected_accuracy(self) -> float:
        return float(np.dot(self.probs, self.source_accuracies))

    def sample(self, rng: np.random.Generator) -> int:
        return int(rng.choice(len(self.probs), p=self.probs))


def calibrate_guessing(accuracies, alpha: float) -> GuessingPolicy:
    """Compute mixing probabilities whose expected accuracy reaches ``alpha``.

    Starts uniform and runs up to 5000 multiplicative reweighting rounds
    (x1.01 for models above the current expected accuracy, x0.99 below, then
    renormalize), returning as soon as the expectation clears alpha - 1e-6.
    If the loop exhausts, remaining mass is spread by normalized accuracy
    with a 0.8 damping over a 1e-10 floor.

    Raises:
        ValueError: if alpha exceeds the best single-model accuracy.
    """
    accuracies = np.asarray(accuracies, dtype=float)
    if accuracies.ndim != 1 or accuracies.size == 0:
        raise ValueError("accuracies must be a nonempty vector")
    if ((accuracies < 0) | (accuracies > 1)).any():
        raise ValueError("accuracies must lie in [0, 1]")
    n = len(accuracies)

    if alpha > accuracies.max():
        raise ValueError("Alpha too high")

    p = np.ones(n) / n

    for _ in range(5000):
        current_acc = float(np.dot(p, accuracies))
        if current_acc >= alpha - 1e-6:
            return GuessingPolicy(probs=p, source_accuracies=accuracies)
        for i in range(n):
            if accuracies[i] > current_acc:
                p[i] *= 1.01
            else:
                p[i] *= 0.99
        p = p / p.sum()

    # Fallback allocation, weighted by normalized accuracy over a tiny floor.
    idx_sorted = np.argsort(accuracies)[::-1]
    best_acc = accuracies[idx_sorted[0]]
    worst_acc = accuracies[idx_sorted[-1]]

    min_prob = 1e-10
    p = np.full(n, min_prob)
    remaining = 1.0 - n * min_prob
    for i in range(n):
        idx = idx_sorted[i]
        if i == n - 1:
            p[idx] += remaining
        else:
            weight = (accuracies[idx] - worst_acc) / (best_acc - worst_acc)
            allocation = remaining * weight * 0.8
            p[idx] += allocation
            remaining -= allocation
    p = p / p.sum()
    return GuessingPolicy(probs=p, source_accuracies=accuracies)


def route_single(model: int) -> int:
    """The fixed single-model policy: always the given model."""
    return model


def route_threshold(s_hat_small: float, threshold: float, small: int, large: int) -> int:
    """Two-model rule: small model iff its predicted satisfaction clears the bar."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must lie in [0, 1]")
    return small if s_hat_small >= threshold else large


def route_oracle(labels, costs) -> int:
    """Cheapest model whose label is 1; cheapest overall if none satisfies."""
    labels = np.asarray(labels)
    costs = np.asarray(costs, dtype=float)
    satisfying = np.flatnonzero(labels == 1)
    candidates = satisfying if satisfying.size else np.arange(len(costs))
    return int(min(candidates, key=lambda m: (costs[m], m)))
